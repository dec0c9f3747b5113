"""
Editing and the closed loop
===========================

An edit op re-denoises one rectangle under a new conditioning while
every cell outside the rectangle keeps its exact bytes. The closed
loop automates that: caption each region with the world oracle, diff
against the targets, plan ops for the mismatches, apply, repeat.
"""

from pathlib import Path

import numpy as np

from rpg.denoisers import GmmDenoiser, load_gmm_world, oracle_caption
from rpg.editing import apply_op, run_closed_loop
from rpg.layout import Canvas, RegionRect
from rpg.plan import EditOp
from rpg.sampling import SamplerConfig
from rpg.schedule import make_schedule

here = Path(__file__).parent
world = load_gmm_world(here / "worlds" / "shapes.txt")
schedule = make_schedule(60)
denoiser = GmmDenoiser(world, schedule)
canvas = Canvas(width=16, height=8)
config = SamplerConfig(seed=3, steps=60, canvas=canvas, channels=1)

left = RegionRect(x0=0, y0=0, width=8, height=8)
right = RegionRect(x0=8, y0=0, width=8, height=8)

# start with sea everywhere; the goal is sun on the left, sea on the right
start = world.sample_x0("sea", 8, 16, np.random.default_rng(0))
print("initial captions:", oracle_caption(start, [left, right], world))

# a single manual edit: repaint the left rectangle as sun
op = EditOp(kind="modify", target="left half", rect=left, cond_id="sun")
edited = apply_op(start, op, denoiser, schedule, config)
print("after one op:   ", oracle_caption(edited, [left, right], world))
print(
    "right half untouched:",
    np.array_equal(edited.data[:, 8:], start.data[:, 8:]),
)

# the loop reaches the same state without hand-written ops
result = run_closed_loop(
    start,
    targets=["sun", "sea"],
    regions=[left, right],
    world=world,
    denoiser=denoiser,
    schedule=schedule,
    config=config,
    max_rounds=3,
)
print("\nloop result: success =", result.success)
for state in result.rounds:
    ops = ", ".join(f"{op.kind} {op.target!r}" for op in state.plan.ops)
    print(f"  round {state.index + 1}: saw {list(state.observed)}; planned {ops}")
print("final captions:", list(result.observed))
print("edit rounds used:", result.edit_rounds_used)

# a latent that already matches its targets converges in zero rounds
settled = run_closed_loop(
    result.final,
    targets=["sun", "sea"],
    regions=[left, right],
    world=world,
    denoiser=denoiser,
    schedule=schedule,
    config=config,
)
print("\nrerun on the fixed output: rounds used =", settled.edit_rounds_used)
