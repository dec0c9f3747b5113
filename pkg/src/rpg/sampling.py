"""Region-composed reverse diffusion.

One composed step works on a shared noisy canvas z_t:

* every subprompt gets its own full-canvas branch: a clean-grid
  prediction under that subprompt's conditioning, advanced one reverse
  step; all branches of a step share a single posterior noise draw,
* each branch contributes the window of cells at its region rectangle,
  and the windows are assembled into a regional composite,
* a base branch conditioned on the whole prompt is blended in:
  output = base_ratio * base + (1 - base_ratio) * composite.

Regions may carry nested plans; the nested composition then runs on the
region's window of the canvas (its own sub-canvas) with the matching
window of the shared noise, recursing until plain subprompts.

The blend runs in float64 before the float32 cast, and base_ratio 0 or
1 short-circuits to an exact copy, so the endpoint cases are
bit-reproducible: ratio 1 equals base-only sampling, ratio 0 equals the
composite, and a single-region layout with the base conditioning equals
plain one-branch sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol, runtime_checkable

import numpy as np

from .conditioning import CondEmbedding, embed_prompt
from .latents import EmptyMaskError, LatentGrid, Mask, ShapeMismatchError
from .layout import Canvas, RegionRect, resolve_regions
from .plan import PlanInvalidError, PromptPlan, plan_depth, validate_plan
from .schedule import NoiseSchedule, ddpm_step_array


class NestingTooDeepError(ValueError):
    def __init__(self, depth: int, limit: int):
        self.depth = depth
        self.limit = limit
        super().__init__(f"plan nests {depth} levels deep, limit is {limit}")


@runtime_checkable
class Denoiser(Protocol):
    """Anything that predicts the clean grid from a noisy one."""

    def predict_x0(self, z_t: LatentGrid, t: int, cond: CondEmbedding) -> LatentGrid: ...


@dataclass(frozen=True)
class SamplerConfig:
    """Run-level sampling knobs.

    base_ratio here is an override: None honors each plan's own ratio,
    a number replaces the top-level plan's ratio (nested plans keep
    theirs). resize_mode parameterizes explicit latent resizes made by
    pipeline tooling; region branches are windowed, not resampled.
    """

    seed: int
    steps: int
    canvas: Canvas
    channels: int = 2
    base_ratio: float | None = None
    resize_mode: str = "bilinear"
    max_depth: int = 3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.base_ratio is not None and not (0.0 <= self.base_ratio <= 1.0):
            raise ValueError(f"base_ratio {self.base_ratio} outside [0, 1]")
        if self.resize_mode not in ("bilinear", "nearest"):
            raise ValueError(f"unknown resize mode {self.resize_mode!r}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")


@dataclass(frozen=True)
class RegionConds:
    """Conditioning for one plan node: base + one cond per subprompt."""

    base: CondEmbedding
    subs: tuple[CondEmbedding, ...]
    nested: dict[int, "RegionConds"] = field(default_factory=dict)


def plan_conds(plan: PromptPlan, embed=embed_prompt) -> RegionConds:
    """Derive conditioning from a plan's texts (recaptioned subprompts)."""
    nested = {i: plan_conds(child, embed) for i, child in plan.nested.items()}
    return RegionConds(
        base=embed(plan.base_prompt),
        subs=tuple(embed(sp.recaptioned) for sp in plan.subprompts),
        nested=nested,
    )


@dataclass(frozen=True)
class RegionBranches:
    """Intermediates of one composed step.

    base is the full-canvas base branch; regions holds each region's
    windowed branch content in region order; concatenated is the
    assembled composite before blending.
    """

    base: LatentGrid
    regions: tuple[tuple[RegionRect, LatentGrid], ...]
    concatenated: LatentGrid


@dataclass(frozen=True)
class _Node:
    """A plan compiled against a concrete canvas for fast stepping."""

    beta: float
    base_cond: CondEmbedding
    region_conds: tuple[CondEmbedding | None, ...]  # None where nested
    rects: tuple[RegionRect, ...]
    nested: dict[int, "_Node"]
    canvas: Canvas


def _compile(
    plan: PromptPlan,
    conds: RegionConds,
    canvas: Canvas,
    override_beta: float | None,
) -> _Node:
    rects = resolve_regions(plan.split, canvas)
    if len(conds.subs) != len(plan.subprompts):
        raise PlanInvalidError(
            f"{len(conds.subs)} conds for {len(plan.subprompts)} subprompts"
        )
    region_conds: list[CondEmbedding | None] = [None] * len(rects)
    for sub_idx, region_idx in enumerate(plan.assignment):
        region_conds[region_idx] = conds.subs[sub_idx]
    nested = {}
    for region_idx, child in plan.nested.items():
        child_conds = conds.nested.get(region_idx)
        if child_conds is None:
            child_conds = plan_conds(child)
        rect = rects[region_idx]
        nested[region_idx] = _compile(
            child, child_conds, Canvas(width=rect.width, height=rect.height), None
        )
        region_conds[region_idx] = None
    beta = plan.base_ratio if override_beta is None else override_beta
    return _Node(
        beta=float(beta),
        base_cond=conds.base,
        region_conds=tuple(region_conds),
        rects=tuple(rects),
        nested=nested,
        canvas=canvas,
    )


def _predict(denoiser: Denoiser, z: np.ndarray, t: int, cond: CondEmbedding) -> np.ndarray:
    fast = getattr(denoiser, "predict_x0_array", None)
    if fast is not None:
        x0 = np.asarray(fast(z, t, cond))
    else:
        x0 = denoiser.predict_x0(LatentGrid(z), t, cond).data
    if x0.shape != z.shape:
        raise ShapeMismatchError(f"denoiser returned shape {x0.shape} for input {z.shape}")
    return x0


def _blend(beta: float, base: np.ndarray, composite: np.ndarray) -> np.ndarray:
    if beta == 1.0:
        return base
    if beta == 0.0:
        return composite
    mixed = beta * base.astype(np.float64) + (1.0 - beta) * composite.astype(np.float64)
    return mixed.astype(np.float32)


def _step_core(
    z: np.ndarray,
    node: _Node,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    t: int,
    noise: np.ndarray | None,
    collect: bool,
):
    """One composed step on raw arrays.

    With collect=False, branches not reflected in the output (base at
    beta=0, regions at beta=1) are skipped; skipping never changes the
    values of anything that is computed.
    """
    need_base = collect or node.beta > 0.0
    need_regions = collect or node.beta < 1.0

    base_branch = None
    if need_base:
        base_x0 = _predict(denoiser, z, t, node.base_cond)
        base_branch = ddpm_step_array(z, t, base_x0, schedule, noise)

    composite = None
    region_grids: list[np.ndarray] | None = [] if (need_regions or collect) else None
    if need_regions:
        composite = np.empty_like(z)
        for region_idx, rect in enumerate(node.rects):
            child = node.nested.get(region_idx)
            if child is not None:
                sub_z = z[rect.y0 : rect.y1, rect.x0 : rect.x1, :]
                sub_noise = (
                    noise[rect.y0 : rect.y1, rect.x0 : rect.x1, :]
                    if noise is not None
                    else None
                )
                window, _ = _step_core(sub_z, child, denoiser, schedule, t, sub_noise, False)
            else:
                cond = node.region_conds[region_idx]
                branch_x0 = _predict(denoiser, z, t, cond)
                branch = ddpm_step_array(z, t, branch_x0, schedule, noise)
                window = branch[rect.y0 : rect.y1, rect.x0 : rect.x1, :]
            composite[rect.y0 : rect.y1, rect.x0 : rect.x1, :] = window
            if region_grids is not None:
                region_grids.append(window)

    out = _blend(node.beta, base_branch, composite)
    parts = None
    if collect:
        parts = (base_branch, tuple(zip(node.rects, region_grids)), composite)
    return out, parts


def crd_step(
    z_t: LatentGrid,
    plan: PromptPlan,
    conds: RegionConds | None,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    t: int,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> tuple[LatentGrid, RegionBranches]:
    """One composed reverse step over an explicit canvas grid.

    Returns the blended next grid plus the branch intermediates. All
    branches (and any nested composition) share one posterior noise
    array: the one passed in, or a single draw from rng when t > 1.
    """
    canvas = z_t.canvas
    validate_plan(plan, canvas)
    if conds is None:
        conds = plan_conds(plan)
    node = _compile(plan, conds, canvas, config.base_ratio)
    if noise is None and t > 1:
        if rng is None:
            raise ValueError("either rng or noise is required for t > 1")
        noise = rng.standard_normal(z_t.data.shape, dtype=np.float32)
    out, parts = _step_core(z_t.data, node, denoiser, schedule, t, noise, collect=True)
    base_branch, regions, composite = parts
    branches = RegionBranches(
        base=LatentGrid(base_branch),
        regions=tuple((rect, LatentGrid(win)) for rect, win in regions),
        concatenated=LatentGrid(composite),
    )
    return LatentGrid(out), branches


def _run(
    node: _Node,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
) -> LatentGrid:
    shape = (node.canvas.height, node.canvas.width, config.channels)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(shape, dtype=np.float32)
    for t in range(schedule.steps, 0, -1):
        noise = rng.standard_normal(shape, dtype=np.float32) if t > 1 else None
        z, _ = _step_core(z, node, denoiser, schedule, t, noise, collect=False)
    return LatentGrid(z)


def sample_crd(
    plan: PromptPlan,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    conds: RegionConds | None = None,
) -> LatentGrid:
    """Run the full composed reverse chain from seeded noise.

    Deterministic in (plan, conds, schedule, config): reruns are
    bit-identical. Nested plans are honored up to config.max_depth.
    """
    depth = plan_depth(plan)
    if depth > config.max_depth:
        raise NestingTooDeepError(depth, config.max_depth)
    validate_plan(plan, config.canvas)
    if conds is None:
        conds = plan_conds(plan)
    node = _compile(plan, conds, config.canvas, config.base_ratio)
    return _run(node, denoiser, schedule, config)


def sample_hierarchical(
    plan: PromptPlan,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    conds: RegionConds | None = None,
) -> LatentGrid:
    """Composed sampling with nested plans subdividing their regions.

    A region holding a nested plan is produced by the nested composition
    over that region's sub-canvas, recursively; a plan with no nesting
    behaves exactly like sample_crd.
    """
    return sample_crd(plan, denoiser, schedule, config, conds)


def sample_inpaint(
    source_x0: LatentGrid,
    mask: Mask,
    cond: CondEmbedding,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
) -> LatentGrid:
    """Regenerate the masked cells under cond, keeping the rest.

    Each step denoises the whole grid toward cond, then overwrites the
    unmasked cells with the source forward-noised to the current level
    using the same per-step noise draw. After the last step unmasked
    cells are copied from the source verbatim, so they finish
    bit-identical to it.
    """
    if mask.height != source_x0.height or mask.width != source_x0.width:
        raise ShapeMismatchError(
            f"mask {mask.height}x{mask.width} does not match latent "
            f"{source_x0.height}x{source_x0.width}"
        )
    if mask.selected_count == 0:
        raise EmptyMaskError("mask selects no cells")
    shape = source_x0.data.shape
    inside = mask.cells.astype(bool)[:, :, None]
    source = source_x0.data.astype(np.float64)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(shape, dtype=np.float32)
    for t in range(schedule.steps, 0, -1):
        noise = rng.standard_normal(shape, dtype=np.float32) if t > 1 else None
        x0 = _predict(denoiser, z, t, cond)
        z = ddpm_step_array(z, t, x0, schedule, noise)
        level = t - 1
        if level >= 1:
            ab = schedule.alpha_bar[level]
            resown = (np.sqrt(ab) * source + np.sqrt(1.0 - ab) * noise.astype(np.float64))
            z = np.where(inside, z, resown.astype(np.float32))
        else:
            z = np.where(inside, z, source_x0.data)
    return LatentGrid(z)
