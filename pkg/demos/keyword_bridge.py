"""A toy external agent speaking the line-delimited JSON protocol.

    arena run --agent external --endpoint "python3 demos/keyword_bridge.py" --manifest single.json --out runs/kw

It knows nothing about dependencies. It fills every usage pattern from the
instruction with every object and tries the phrases in turn. Phrases that
finished or make no sense are dropped; phrases that failed on object state go
to the back of the queue. After four misses in a row it waits once so the
error streak never ends the episode.
"""

import itertools
import json
import re
import sys

queue: list[str] = []
last = None
misses = 0


def phrases_from(instruction: str) -> list[str]:
    objects = re.findall(r"\w+", instruction.split("**All Available Objects(OBJ)**")[1].split("**")[0])
    out = []
    for usage in re.findall(r"^- (.+?): ", instruction, re.M):
        slots = re.findall(r"OBJ\d?", usage)
        if not slots:
            continue
        for combo in itertools.permutations(objects, len(slots)):
            text = usage
            for slot, obj in zip(slots, combo):
                text = text.replace(slot, obj, 1)
            out.append(text)
    return list(dict.fromkeys(out))


for line in sys.stdin:
    msg = json.loads(line)
    if msg["type"] == "end":
        break
    if msg["instruction"]:
        queue = phrases_from(msg["instruction"])
    feedback = msg["history"][-1]["feedback"] if msg["history"] else ""
    if last and last in queue:
        # started, completed, invalid or mismatched phrases are never retried
        queue.remove(last)
        if feedback.startswith(("Cannot perform", "Object", "You are being")):
            queue.append(last)
    if last is None or feedback.startswith(("You are doing", "You wait")):
        misses = 0
    else:
        misses += 1
    if misses >= 4 or not queue:
        last, misses = None, 0
        reply = "wait"
    else:
        last = reply = queue[0]
    print(json.dumps({"type": "action", "text": reply}), flush=True)
