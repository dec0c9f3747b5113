"""
Planning through a recorded chat backend
========================================

Region plans normally come from a chat model: the planner sends a
templated conversation, the reply carries a fenced ``rpg-plan`` block,
and the parser turns the block into a validated plan.

Replies are addressed by a digest of the exact request messages, so a
store of recorded replies makes every planner call reproducible and
offline. This demo authors a reply by hand, records it, and replays it.
"""

import tempfile
from pathlib import Path

from rpg.backends import FixtureBackend, FixtureMissError, FixtureStore
from rpg.layout import serialize_split
from rpg.planner import build_plan_messages, plan_regions, serialize_plan_block

PROMPT = "a lighthouse on black rocks under a night sky"

# what a planning model might answer: reasoning prose plus the block
REPLY = """\
The lighthouse is the subject, so it gets a tall narrow region; the
rocks sit low and the sky fills the rest.

```rpg-plan
split: h:3:2,1;h:1:1
subprompts:
0|night sky|A deep night sky, faint stars, no moon.
1|lighthouse|A white lighthouse tower, lamp lit, seen from below.
2|black rocks|Wet black rocks streaked with foam.
base_ratio: 0.2
```
"""

store_dir = Path(tempfile.mkdtemp(prefix="rpg-fixtures-"))
store = FixtureStore(store_dir)

# record: the reply is filed under the digest of the request messages
messages = build_plan_messages(PROMPT)
digest = store.put(messages, REPLY)
print("recorded reply under digest", digest[:16], "...")
print("store directory:", store_dir)

# replay: the same prompt finds the same reply, byte for byte
backend = FixtureBackend(store)
plan = plan_regions(PROMPT, backend)
print("\nparsed plan:")
print("  base prompt:", plan.base_prompt)
print("  split:      ", serialize_split(plan.split))
for index, sub in enumerate(plan.subprompts):
    print(f"  region {index}: {sub.phrase} -> {sub.recaptioned[:40]}")
print("  base ratio: ", plan.base_ratio)

# the serialized block round-trips and can be fed to the generate
# command later (rpg generate --plan FILE ...)
block = serialize_plan_block(plan)
print("\nserialized block:\n" + block)

again = plan_regions(PROMPT, backend)
print("replay is stable:", serialize_plan_block(again) == block)

# an unknown prompt has no recorded reply and fails loudly
try:
    plan_regions("some other prompt", backend)
except FixtureMissError as exc:
    print("unrecorded prompt raises:", type(exc).__name__)
