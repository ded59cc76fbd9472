"""Sharing a tool between two recipes: one pot instead of pot_1 and pot_2."""

from multitask_arena.agents import GreedyPlannerAgent, RandomValidAgent, run_episode
from multitask_arena.metrics import compute_metrics, fmt
from multitask_arena.model import build_task_sets, bundled_manifest_path, load_corpus, load_manifest, load_vocabulary
from multitask_arena.oracle import brute_force_minimal_time

vocab = load_vocabulary()
corpus = load_corpus(vocabulary=vocab)
sets = build_task_sets(load_manifest(bundled_manifest_path("constraint.json")), corpus, vocab)

for ts in sets:
    print(ts.id)
    print("  objects:", ", ".join(ts.object_names))
    print("  optimum:", brute_force_minimal_time(ts).makespan_min, "min")
    runs = [run_episode(ts, RandomValidAgent(seed)).outcome for seed in range(20)]
    rep = compute_metrics(runs)
    print("  random-valid x20: AS", fmt(rep.AS), "CR", fmt(rep.CR), "CT", fmt(rep.CT))
    planner = run_episode(ts, GreedyPlannerAgent(ts)).outcome
    print("  planner finishes at", planner.completion_minute)
