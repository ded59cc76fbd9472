"""How far is the priority-list heuristic from the exhaustive optimum?"""

from multitask_arena.model import build_task_sets, bundled_manifest_path, load_corpus, load_manifest, load_vocabulary
from multitask_arena.oracle import brute_force_minimal_time, greedy_minimal_time

vocab = load_vocabulary()
corpus = load_corpus(vocabulary=vocab)

for name in ["single.json", "pairs.json", "triples.json"]:
    print(f"== {name}")
    for ts in build_task_sets(load_manifest(bundled_manifest_path(name)), corpus, vocab):
        serial = ts.total_duration  # doing everything one after another
        greedy = greedy_minimal_time(ts).makespan_min
        best = brute_force_minimal_time(ts).makespan_min
        flag = "  <- greedy loses" if greedy > best else ""
        print(f"{ts.id:45} serial {serial:3}  greedy {greedy:3}  optimum {best:3}{flag}")

# the gap case: greedy starts the long idle step first and then stalls
ts = next(s for s in build_task_sets(load_manifest(bundled_manifest_path("pairs.json")), corpus, vocab) if s.id == "make_tea+wash_clothes")
for label, sched in [("greedy", greedy_minimal_time(ts)), ("optimum", brute_force_minimal_time(ts))]:
    print(label, [(m, ts.phrase(uid)) for m, uid in sched.timeline])
