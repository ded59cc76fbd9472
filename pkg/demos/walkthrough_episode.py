"""Play one cooking task by hand, then let the built-in planner do it."""

from multitask_arena.agents import GreedyPlannerAgent, run_episode
from multitask_arena.engine import Episode
from multitask_arena.metrics import compute_metrics, fmt, progress_curve
from multitask_arena.model import build_task_sets, bundled_manifest_path, load_corpus, load_manifest, load_vocabulary

vocab = load_vocabulary()
corpus = load_corpus(vocabulary=vocab)
singles = build_task_sets(load_manifest(bundled_manifest_path("single.json")), corpus, vocab)
rice = next(s for s in singles if s.id == "beef_fried_rice")

ep = Episode(rice)
print(ep.render_transcript())  # instruction plus the t=1 prompt

# washing the dish occupies us for 2 minutes, the rice cooks on its own
for text in ["wash dish", "cook rice in pot", "fry rice in pot", "wait"]:
    record = ep.step(text)
    print(f"t={record.minute:>2}  {text!r:24} -> {record.feedback_text!r}")

print("progress so far:", float(ep.state.progress_pct), "%")

# the planner replays a greedy schedule through the same engine
run = run_episode(rice, GreedyPlannerAgent(rice))
print(run.outcome.reason.value, "at minute", run.outcome.completion_minute)

report = compute_metrics([run.outcome])
print("AS", fmt(report.AS), "CS", fmt(report.CS), "CR", fmt(report.CR), "CT", fmt(report.CT))

for minute, pct in progress_curve(run.records, rice):
    print(f"{minute:>3} {'#' * int(pct // 5)}")
