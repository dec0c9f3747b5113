"""Prompt-plan data model: what to draw where, and with how much glue.

A PromptPlan pairs a split layout with one subprompt per region. The
assignment tuple maps subprompt index -> region index (identity unless
a planner says otherwise). base_ratio is the blend weight given to the
whole-canvas base branch during sampling; regions may carry nested
plans that subdivide them recursively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .layout import Canvas, LayoutError, RegionRect, SplitSpec, parse_split, resolve_regions


class PlanInvalidError(ValueError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass(frozen=True)
class Subprompt:
    """A key phrase and its enriched, self-contained restatement."""

    phrase: str
    recaptioned: str

    def __post_init__(self):
        if not self.phrase.strip():
            raise PlanInvalidError("subprompt phrase is empty")
        if not self.recaptioned.strip():
            raise PlanInvalidError(f"recaption for {self.phrase!r} is empty")


@dataclass(frozen=True)
class PromptPlan:
    base_prompt: str
    subprompts: tuple[Subprompt, ...]
    split: SplitSpec
    assignment: tuple[int, ...]
    base_ratio: float = 0.3
    nested: dict[int, "PromptPlan"] = field(default_factory=dict)

    @staticmethod
    def simple(
        base_prompt: str,
        texts: list[str],
        split: str | SplitSpec,
        base_ratio: float = 0.3,
        nested: dict[int, "PromptPlan"] | None = None,
    ) -> "PromptPlan":
        """Convenience constructor: each text is its own recaption."""
        spec = parse_split(split) if isinstance(split, str) else split
        return PromptPlan(
            base_prompt=base_prompt,
            subprompts=tuple(Subprompt(t, t) for t in texts),
            split=spec,
            assignment=tuple(range(len(texts))),
            base_ratio=base_ratio,
            nested=dict(nested or {}),
        )

    def region_for_subprompt(self, sub_idx: int) -> int:
        return self.assignment[sub_idx]

    def subprompt_for_region(self, region_idx: int) -> int:
        return self.assignment.index(region_idx)


def plan_depth(plan: PromptPlan) -> int:
    """1 for a flat plan; nested plans add one level each."""
    if not plan.nested:
        return 1
    return 1 + max(plan_depth(child) for child in plan.nested.values())


def validate_plan(plan: PromptPlan, canvas: Canvas | None = None) -> None:
    """Raise PlanInvalidError unless the plan is internally consistent.

    Structural checks (region/subprompt counts, assignment bijection,
    blend weight range) never need a canvas. Passing one additionally
    checks that the split resolves on it, recursing into nested plans
    against their region rectangles.
    """
    n = len(plan.subprompts)
    if n == 0:
        raise PlanInvalidError("plan has no subprompts")
    regions = plan.split.region_count
    if regions != n:
        raise PlanInvalidError(f"split yields {regions} regions for {n} subprompts")
    if sorted(plan.assignment) != list(range(n)):
        raise PlanInvalidError(f"assignment {plan.assignment} is not a bijection onto 0..{n - 1}")
    if not (0.0 <= plan.base_ratio <= 1.0):
        raise PlanInvalidError(f"base_ratio {plan.base_ratio} outside [0, 1]")
    for region_idx in plan.nested:
        if not (0 <= region_idx < n):
            raise PlanInvalidError(f"nested plan attached to unknown region {region_idx}")
    if canvas is not None:
        try:
            rects = resolve_regions(plan.split, canvas)
        except LayoutError as exc:
            raise PlanInvalidError(f"split does not resolve on {canvas}: {exc}") from exc
        for region_idx, child in plan.nested.items():
            rect = rects[region_idx]
            validate_plan(child, Canvas(width=rect.width, height=rect.height))
    else:
        for child in plan.nested.values():
            validate_plan(child, None)


@dataclass(frozen=True)
class EntityList:
    """Ordered entity phrases with no case-insensitive duplicates."""

    entities: tuple[str, ...]

    def __post_init__(self):
        seen = set()
        for text in self.entities:
            if not text.strip():
                raise PlanInvalidError("entity phrase is empty")
            key = text.casefold()
            if key in seen:
                raise PlanInvalidError(f"duplicate entity {text!r}")
            seen.add(key)

    @staticmethod
    def of(texts: list[str] | tuple[str, ...]) -> "EntityList":
        """Build from free text, dropping later case-insensitive repeats."""
        kept, seen = [], set()
        for text in texts:
            key = text.casefold()
            if key not in seen:
                seen.add(key)
                kept.append(text)
        return EntityList(entities=tuple(kept))

    def __iter__(self):
        return iter(self.entities)

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, text: object) -> bool:
        if not isinstance(text, str):
            return False
        key = text.casefold()
        return any(e.casefold() == key for e in self.entities)


DISCREPANCY_KINDS = ("missing", "redundant", "attribute_mismatch", "relationship_mismatch")


@dataclass(frozen=True)
class Discrepancy:
    """One way a rendered result diverges from what was asked for."""

    kind: str
    subject: str
    detail: str = ""
    rect: RegionRect | None = None

    def __post_init__(self):
        if self.kind not in DISCREPANCY_KINDS:
            raise PlanInvalidError(f"unknown discrepancy kind {self.kind!r}")
        if not self.subject.strip():
            raise PlanInvalidError("discrepancy subject is empty")


OP_KINDS = ("delete", "add", "modify")

# Deletions clear space before additions fill it; modifications last.
_OP_RANK = {kind: rank for rank, kind in enumerate(OP_KINDS)}


@dataclass(frozen=True)
class EditOp:
    """Regenerate one rectangle under a new conditioning."""

    kind: str
    target: str
    rect: RegionRect
    cond_id: str

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise PlanInvalidError(f"unknown edit op kind {self.kind!r}")
        if not self.target.strip():
            raise PlanInvalidError("edit op target is empty")
        if not self.cond_id.strip():
            raise PlanInvalidError(f"edit op for {self.target!r} has no conditioning")


@dataclass(frozen=True)
class EditPlan:
    ops: tuple[EditOp, ...] = ()

    @staticmethod
    def canonical(ops: list[EditOp] | tuple[EditOp, ...]) -> "EditPlan":
        """Stable-sort ops into delete, add, modify order."""
        ranked = sorted(ops, key=lambda op: _OP_RANK[op.kind])
        return EditPlan(ops=tuple(ranked))


def _parse_rect(token: str) -> RegionRect:
    parts = [p.strip() for p in token.split(",")]
    if len(parts) != 4:
        raise PlanInvalidError(f"rectangle {token!r} is not 'x0,y0,w,h'")
    try:
        x0, y0, w, h = (int(p) for p in parts)
    except ValueError:
        raise PlanInvalidError(f"rectangle {token!r} has a non-integer field") from None
    if x0 < 0 or y0 < 0:
        raise PlanInvalidError(f"rectangle {token!r} has a negative origin")
    if w < 1 or h < 1:
        raise PlanInvalidError(f"rectangle {token!r} has a non-positive side")
    return RegionRect(x0=x0, y0=y0, width=w, height=h)


def _format_rect(rect: RegionRect) -> str:
    return f"{rect.x0},{rect.y0},{rect.width},{rect.height}"


def format_edit_op_line(op: EditOp) -> str:
    return f"{op.kind} | {op.target} | {_format_rect(op.rect)} | {op.cond_id}"


def parse_edit_op_line(line: str) -> EditOp:
    """One op per line: ``kind | target | x0,y0,w,h | cond-id``."""
    parts = [p.strip() for p in line.split("|")]
    if len(parts) != 4:
        raise PlanInvalidError(f"edit op line {line!r} does not have 4 '|' fields")
    kind, target, rect_token, cond_id = parts
    return EditOp(kind=kind.lower(), target=target, rect=_parse_rect(rect_token), cond_id=cond_id)


def format_discrepancy_line(disc: Discrepancy) -> str:
    fields = [disc.kind, disc.subject]
    if disc.detail or disc.rect is not None:
        fields.append(disc.detail)
    if disc.rect is not None:
        fields.append(_format_rect(disc.rect))
    return "|".join(fields)


def parse_discrepancy_line(line: str) -> Discrepancy:
    """``kind|subject|detail|x0,y0,w,h`` with the last two optional."""
    parts = [p.strip() for p in line.split("|")]
    if not 2 <= len(parts) <= 4:
        raise PlanInvalidError(f"discrepancy line {line!r} needs 2 to 4 '|' fields")
    kind, subject = parts[0].lower(), parts[1]
    detail = parts[2] if len(parts) >= 3 else ""
    rect = _parse_rect(parts[3]) if len(parts) == 4 else None
    return Discrepancy(kind=kind, subject=subject, detail=detail, rect=rect)
