"""Minute-stepped multitasking environment for evaluating language agents."""

from .engine import Episode, EpisodeOutcome, EndReason, Feedback, FeedbackKind, parse_action
from .model import (
    TaskDefinition,
    TaskSet,
    combine_tasks,
    load_corpus,
    load_manifest,
    load_vocabulary,
    render_instruction,
    validate_task,
)
from .oracle import ScheduleResult, brute_force_minimal_time, greedy_minimal_time

__version__ = "0.1.0"
