"""
Hierarchical plans: a region that is itself a plan
==================================================

A subprompt slot can carry a nested plan instead of plain text. The
nested plan runs on that region's sub-canvas, sharing the outer run's
noise stream, and recursion continues until the nesting limit.

The resulting layout (a full-height column beside two stacked rows)
is not expressible as a single rows-of-columns split, which is the
point of nesting. Because chains are per-cell and the noise is shared,
each nested region is bit-identical to the matching window of a
full-canvas run of that region's own plan; the demo checks both.
"""

from pathlib import Path

import numpy as np

from rpg.denoisers import GmmDenoiser, load_gmm_world
from rpg.layout import Canvas
from rpg.plan import PromptPlan
from rpg.sampling import NestingTooDeepError, SamplerConfig, sample_crd
from rpg.schedule import make_schedule

here = Path(__file__).parent
world = load_gmm_world(here / "worlds" / "shapes.txt")
schedule = make_schedule(60)
denoiser = GmmDenoiser(world, schedule)
canvas = Canvas(width=16, height=8)
config = SamplerConfig(seed=21, steps=60, canvas=canvas, channels=1)

# outer layout: sun on the left, a nested scene on the right;
# the nested scene stacks sky over sea inside its own rectangle
inner = PromptPlan.simple("sea and sky", ["sky", "sea"], "1;1", base_ratio=0.0)
nested = PromptPlan.simple(
    "background",
    ["sun", "scene"],
    "1,1",
    base_ratio=0.0,
    nested={1: inner},
)

out = sample_crd(nested, denoiser, schedule, config)
print("output shape:", out.data.shape)
print(f"sun region mean {out.data[:, :8].mean():+.3f} (world says +1.200)")
print(f"sky region mean {out.data[:4, 8:].mean():+.3f} (world says +0.200)")
print(f"sea region mean {out.data[4:, 8:].mean():+.3f} (world says -0.740)")

# window equivalence: each region matches the same window of a plain
# full-canvas run of that region's plan, byte for byte
full_inner = sample_crd(inner, denoiser, schedule, config)
full_sun = sample_crd(
    PromptPlan.simple("anything", ["sun"], "1", base_ratio=0.0), denoiser, schedule, config
)
print(
    "\nright half == window of the inner plan run alone:",
    np.array_equal(out.data[:, 8:], full_inner.data[:, 8:]),
)
print(
    "left half  == window of a solo sun run:",
    np.array_equal(out.data[:, :8], full_sun.data[:, :8]),
)

again = sample_crd(nested, denoiser, schedule, config)
print("repeat run identical:", np.array_equal(out.data, again.data))

# nesting depth is bounded; exceeding it raises rather than recursing
deep = inner
for _ in range(4):
    deep = PromptPlan.simple("x", ["sun", "y"], "1,1", base_ratio=0.0, nested={1: deep})
try:
    sample_crd(deep, denoiser, schedule, config)
except NestingTooDeepError as exc:
    print("over-deep plan rejected:", exc)
