"""Applying edit plans and closing the caption-edit loop.

An edit op regenerates one rectangle of a latent under a new
conditioning via masked inpainting; a plan is a sequence of ops applied
in order, each logged with content digests. The closed loop alternates
captioning (via a GmmWorld oracle) with rule-based edit planning until
the per-region labels match the targets or the round budget runs out.

Edit plan files are line-oriented, '#' comments allowed::

    kind | target | x0,y0,w,h | cond-id

Ops apply in file order; plans built by the planner already arrive in
canonical delete, add, modify order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .conditioning import CondEmbedding, embed_prompt
from .denoisers import GmmWorld, oracle_caption
from .latents import LatentGrid, Mask, latent_bytes
from .layout import Canvas, RegionRect
from .plan import (
    Discrepancy,
    EditOp,
    EditPlan,
    PlanInvalidError,
    format_edit_op_line,
    parse_edit_op_line,
)
from .planner import plan_edit
from .sampling import Denoiser, SamplerConfig, sample_inpaint
from .schedule import NoiseSchedule


def mask_from_region(rect: RegionRect, canvas: Canvas) -> Mask:
    return Mask.from_region(rect, canvas)


def latent_digest(grid: LatentGrid) -> str:
    """sha256 over the serialized grid, hex."""
    return hashlib.sha256(latent_bytes(grid)).hexdigest()


def apply_op(
    latent: LatentGrid,
    op: EditOp,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    embed: Callable[[str], CondEmbedding] = embed_prompt,
) -> LatentGrid:
    """Inpaint the op's rectangle under its conditioning.

    Cells outside the rectangle are preserved bit for bit. All ops share
    config.seed, so ops over disjoint rectangles commute exactly.
    """
    mask = Mask.from_region(op.rect, latent.canvas)
    return sample_inpaint(latent, mask, embed(op.cond_id), denoiser, schedule, config)


@dataclass(frozen=True)
class OpLogEntry:
    op: EditOp
    before_digest: str
    after_digest: str


def execute_plan(
    latent: LatentGrid,
    plan: EditPlan,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    embed: Callable[[str], CondEmbedding] = embed_prompt,
) -> tuple[LatentGrid, tuple[OpLogEntry, ...]]:
    """Apply ops in plan order. An empty plan returns the input
    unchanged (same object)."""
    if not plan.ops:
        return latent, ()
    log = []
    current = latent
    for op in plan.ops:
        before = latent_digest(current)
        current = apply_op(current, op, denoiser, schedule, config, embed=embed)
        log.append(OpLogEntry(op=op, before_digest=before, after_digest=latent_digest(current)))
    return current, tuple(log)


def parse_edit_plan(text: str) -> EditPlan:
    ops = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            ops.append(parse_edit_op_line(line))
        except PlanInvalidError as exc:
            raise PlanInvalidError(f"line {line_no}: {exc.reason}") from None
    return EditPlan(ops=tuple(ops))


def serialize_edit_plan(plan: EditPlan) -> str:
    return "".join(format_edit_op_line(op) + "\n" for op in plan.ops)


def load_edit_plan(path) -> EditPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_edit_plan(fh.read())


def save_edit_plan(plan: EditPlan, path) -> None:
    from .ioutil import atomic_write_text

    atomic_write_text(path, serialize_edit_plan(plan))


@dataclass(frozen=True)
class RoundState:
    """One executed edit round: what was seen, decided, and done."""

    index: int
    observed: tuple[str, ...]
    discrepancies: tuple[Discrepancy, ...]
    plan: EditPlan
    op_log: tuple[OpLogEntry, ...]


@dataclass(frozen=True)
class LoopResult:
    final: LatentGrid
    success: bool
    max_rounds_exceeded: bool
    observed: tuple[str, ...]
    rounds: tuple[RoundState, ...]

    @property
    def edit_rounds_used(self) -> int:
        return len(self.rounds)


def region_discrepancies(
    observed: list[str] | tuple[str, ...],
    targets: list[str] | tuple[str, ...],
    regions: list[RegionRect] | tuple[RegionRect, ...],
) -> tuple[Discrepancy, ...]:
    """Slot-by-slot label comparison; each mismatch becomes an
    attribute_mismatch over that region's rectangle."""
    if not (len(observed) == len(targets) == len(regions)):
        raise PlanInvalidError(
            f"{len(observed)} observations vs {len(targets)} targets vs {len(regions)} regions"
        )
    out = []
    for obs, want, rect in zip(observed, targets, regions):
        if obs.casefold() != want.casefold():
            out.append(
                Discrepancy(
                    kind="attribute_mismatch",
                    subject=want,
                    detail=f"region shows {obs}",
                    rect=rect,
                )
            )
    return tuple(out)


def run_closed_loop(
    latent: LatentGrid,
    targets: list[str] | tuple[str, ...],
    regions: list[RegionRect] | tuple[RegionRect, ...],
    world: GmmWorld,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    max_rounds: int = 3,
    embed: Callable[[str], CondEmbedding] = embed_prompt,
) -> LoopResult:
    """Caption, diff, edit, repeat until the labels match the targets.

    A latent that already matches succeeds with zero edit rounds.
    Exhausting max_rounds is an outcome, not an error: the result comes
    back with max_rounds_exceeded set.
    """
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")
    rounds: list[RoundState] = []
    current = latent
    for index in range(max_rounds):
        observed = tuple(oracle_caption(current, list(regions), world))
        discs = region_discrepancies(observed, targets, regions)
        if not discs:
            return LoopResult(
                final=current,
                success=True,
                max_rounds_exceeded=False,
                observed=observed,
                rounds=tuple(rounds),
            )
        plan = plan_edit(list(discs))
        current, log = execute_plan(current, plan, denoiser, schedule, config, embed=embed)
        rounds.append(
            RoundState(index=index, observed=observed, discrepancies=discs, plan=plan, op_log=log)
        )
    observed = tuple(oracle_caption(current, list(regions), world))
    clean = not region_discrepancies(observed, targets, regions)
    return LoopResult(
        final=current,
        success=clean,
        max_rounds_exceeded=not clean,
        observed=observed,
        rounds=tuple(rounds),
    )
