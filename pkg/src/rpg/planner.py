"""Chat-driven planning: recaption, region planning, diffing, edit plans.

Every operation follows the same shape: build a two-message transcript
(system = packaged template, user = the payload), send it through a
Backend, and parse one fenced block out of the reply. The LAST block
with the right tag wins, so a model may reason freely before the block.

Block tags and their line grammars:

* rpg-recaption: ``index|phrase|recaption``
* rpg-plan: ``split:`` / ``subprompts:`` + recaption lines /
  ``assignment:`` / ``base_ratio:``
* rpg-diff: ``targets:`` / ``present:`` / ``discrepancies:`` + lines
  ``kind|subject|detail|x0,y0,w,h`` (last two fields optional)
* rpg-edit: ``kind | target | x0,y0,w,h | cond-id``
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable

from .backends import Backend, ChatMessage
from .layout import LayoutError, parse_split, serialize_split
from .plan import (
    Discrepancy,
    EditOp,
    EditPlan,
    EntityList,
    PlanInvalidError,
    PromptPlan,
    Subprompt,
    format_discrepancy_line,
    parse_discrepancy_line,
    parse_edit_op_line,
)

__all__ = [
    "UnparseableResponseError",
    "NoPlanBlockError",
    "MalformedPlanBlockError",
    "PlanInvalidError",
    "DiffReport",
    "load_template",
    "extract_blocks",
    "build_recaption_messages",
    "parse_recaption_response",
    "recaption",
    "build_plan_messages",
    "parse_plan_response",
    "serialize_plan_block",
    "plan_regions",
    "build_diff_messages",
    "parse_diff_response",
    "caption_entities",
    "diff_entities",
    "build_edit_messages",
    "parse_edit_response",
    "plan_edit",
]


class UnparseableResponseError(ValueError):
    pass


class NoPlanBlockError(UnparseableResponseError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"response contains no ```{tag} block")


class MalformedPlanBlockError(UnparseableResponseError):
    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"bad {field!r} in plan block: {reason}")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("rpg").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


_FENCE_RE = "```%s[ \\t]*\\n(.*?)```"


def extract_blocks(text: str, tag: str) -> list[str]:
    """All fenced blocks with this tag, in order of appearance."""
    return re.findall(_FENCE_RE % re.escape(tag), text, flags=re.DOTALL)


def _last_block(text: str, tag: str) -> str:
    blocks = extract_blocks(text, tag)
    if not blocks:
        raise NoPlanBlockError(tag)
    return blocks[-1]


# --- recaption ---------------------------------------------------------


def build_recaption_messages(prompt: str) -> list[ChatMessage]:
    return [
        ChatMessage(role="system", content=load_template("recaption")),
        ChatMessage(role="user", content=prompt),
    ]


def _parse_recaption_lines(body: str, *, field: str) -> tuple[Subprompt, ...]:
    subs: list[Subprompt] = []
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        parts = line.split("|", 2)
        if len(parts) != 3:
            raise MalformedPlanBlockError(field, f"line {line!r} is not 'index|phrase|recaption'")
        idx_text, phrase, recap = (p.strip() for p in parts)
        try:
            idx = int(idx_text)
        except ValueError:
            raise MalformedPlanBlockError(field, f"index {idx_text!r} is not an integer") from None
        if idx != len(subs):
            raise MalformedPlanBlockError(field, f"index {idx} out of order, expected {len(subs)}")
        try:
            subs.append(Subprompt(phrase=phrase, recaptioned=recap))
        except PlanInvalidError as exc:
            raise MalformedPlanBlockError(field, exc.reason) from None
    if not subs:
        raise MalformedPlanBlockError(field, "no subprompt lines")
    return tuple(subs)


def parse_recaption_response(text: str) -> tuple[Subprompt, ...]:
    return _parse_recaption_lines(_last_block(text, "rpg-recaption"), field="recaption")


def recaption(prompt: str, backend: Backend) -> tuple[Subprompt, ...]:
    return parse_recaption_response(backend.complete(build_recaption_messages(prompt)))


# --- region planning ---------------------------------------------------


def build_plan_messages(prompt: str) -> list[ChatMessage]:
    return [
        ChatMessage(role="system", content=load_template("plan_regions")),
        ChatMessage(role="user", content=prompt),
    ]


_KEY_RE = re.compile(r"^([a-z_]+)\s*:\s*(.*)$")


def parse_plan_response(
    text: str, base_prompt: str | None, default_base_ratio: float = 0.3
) -> PromptPlan:
    """Build a plan from the last rpg-plan block in a reply.

    An explicit base_prompt argument wins over the block's optional
    ``prompt:`` line; one of the two must exist. Missing assignment
    means identity; missing base_ratio falls back to
    default_base_ratio. Structural consistency (counts, bijection) is
    validate_plan's job, not this parser's.
    """
    body = _last_block(text, "rpg-plan")
    fields: dict[str, str] = {}
    sub_lines: list[str] = []
    in_subprompts = False
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        match = _KEY_RE.match(line)
        if match:
            key, value = match.group(1), match.group(2).strip()
            if key == "subprompts":
                if value:
                    raise MalformedPlanBlockError("subprompts", "text on the header line")
                in_subprompts = True
                fields.setdefault("subprompts", "")
                continue
            if key not in ("prompt", "split", "assignment", "base_ratio"):
                raise MalformedPlanBlockError(key, "unknown key")
            if key in fields:
                raise MalformedPlanBlockError(key, "given twice")
            fields[key] = value
            in_subprompts = False
            continue
        if in_subprompts:
            sub_lines.append(line)
            continue
        raise MalformedPlanBlockError("plan", f"unexpected line {line!r}")

    if base_prompt is None:
        base_prompt = fields.get("prompt", "").strip()
        if not base_prompt:
            raise MalformedPlanBlockError("prompt", "missing (and no prompt given elsewhere)")

    if "split" not in fields:
        raise MalformedPlanBlockError("split", "missing")
    try:
        split = parse_split(fields["split"])
    except LayoutError as exc:
        raise MalformedPlanBlockError("split", str(exc)) from None

    if "subprompts" not in fields:
        raise MalformedPlanBlockError("subprompts", "missing")
    subprompts = _parse_recaption_lines("\n".join(sub_lines), field="subprompts")

    if "assignment" in fields:
        tokens = [p.strip() for p in fields["assignment"].split(",") if p.strip()]
        try:
            assignment = tuple(int(p) for p in tokens)
        except ValueError:
            raise MalformedPlanBlockError("assignment", "non-integer entry") from None
        if not assignment:
            raise MalformedPlanBlockError("assignment", "empty")
    else:
        assignment = tuple(range(len(subprompts)))

    if "base_ratio" in fields:
        try:
            base_ratio = float(fields["base_ratio"])
        except ValueError:
            raise MalformedPlanBlockError("base_ratio", "not a number") from None
    else:
        base_ratio = default_base_ratio

    try:
        return PromptPlan(
            base_prompt=base_prompt,
            subprompts=subprompts,
            split=split,
            assignment=assignment,
            base_ratio=base_ratio,
        )
    except PlanInvalidError as exc:
        raise MalformedPlanBlockError("plan", exc.reason) from None


def serialize_plan_block(plan: PromptPlan, fenced: bool = True) -> str:
    """Write a flat plan back out as an rpg-plan block.

    Inverse of parse_plan_response for plans without nesting; nested
    plans have no block representation and are refused.
    """
    if plan.nested:
        raise PlanInvalidError("nested plans cannot be serialized to a plan block")
    if any("|" in s.phrase or "|" in s.recaptioned for s in plan.subprompts):
        raise PlanInvalidError("subprompt text containing '|' cannot be serialized")

    def fold(text: str) -> str:
        return " ".join(text.split())

    lines = []
    if plan.base_prompt.strip():
        lines.append(f"prompt: {fold(plan.base_prompt)}")
    lines.append(f"split: {serialize_split(plan.split)}")
    lines.append("subprompts:")
    for idx, sub in enumerate(plan.subprompts):
        lines.append(f"{idx}|{fold(sub.phrase)}|{fold(sub.recaptioned)}")
    if plan.assignment != tuple(range(len(plan.subprompts))):
        lines.append("assignment: " + ",".join(str(i) for i in plan.assignment))
    lines.append(f"base_ratio: {plan.base_ratio!r}")
    body = "\n".join(lines)
    if fenced:
        return f"```rpg-plan\n{body}\n```\n"
    return body + "\n"


def plan_regions(
    prompt: str, backend: Backend, default_base_ratio: float = 0.3
) -> PromptPlan:
    """Ask the backend for a region plan. The returned plan is
    structurally validated but not resolved against any canvas."""
    from .plan import validate_plan

    reply = backend.complete(build_plan_messages(prompt))
    plan = parse_plan_response(reply, base_prompt=prompt, default_base_ratio=default_base_ratio)
    validate_plan(plan, canvas=None)
    return plan


# --- captioning and diffing -------------------------------------------


@dataclass(frozen=True)
class DiffReport:
    targets: EntityList
    present: EntityList
    discrepancies: tuple[Discrepancy, ...]

    @property
    def clean(self) -> bool:
        return not self.discrepancies


def build_diff_messages(goal: str, observed: list[str]) -> list[ChatMessage]:
    lines = [f"goal: {goal}", "observed:"]
    lines += [f"{idx}|{label}" for idx, label in enumerate(observed)]
    return [
        ChatMessage(role="system", content=load_template("caption_entities")),
        ChatMessage(role="user", content="\n".join(lines)),
    ]


def _split_entities(value: str) -> EntityList:
    return EntityList.of([p.strip() for p in value.split(",") if p.strip()])


def parse_diff_response(text: str) -> DiffReport:
    body = _last_block(text, "rpg-diff")
    targets: EntityList | None = None
    present: EntityList | None = None
    discrepancies: list[Discrepancy] = []
    in_disc = False
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        lowered = line.lower()
        if lowered.startswith("targets:"):
            targets = _split_entities(line.split(":", 1)[1])
            in_disc = False
        elif lowered.startswith("present:"):
            present = _split_entities(line.split(":", 1)[1])
            in_disc = False
        elif lowered == "discrepancies:":
            in_disc = True
        elif in_disc:
            try:
                discrepancies.append(parse_discrepancy_line(line))
            except PlanInvalidError as exc:
                raise UnparseableResponseError(f"bad discrepancy line: {exc.reason}") from None
        else:
            raise UnparseableResponseError(f"unexpected line {line!r} in diff block")
    if targets is None:
        raise UnparseableResponseError("diff block lacks a targets: line")
    if present is None:
        raise UnparseableResponseError("diff block lacks a present: line")
    return DiffReport(targets=targets, present=present, discrepancies=tuple(discrepancies))


def caption_entities(goal: str, observed: list[str], backend: Backend) -> DiffReport:
    return parse_diff_response(backend.complete(build_diff_messages(goal, observed)))


def diff_entities(targets: EntityList, present: EntityList) -> tuple[Discrepancy, ...]:
    """Pure set comparison: what is asked-for-but-absent and
    shown-but-unasked. Mismatch kinds need context this cannot see."""
    out = [Discrepancy(kind="missing", subject=t) for t in targets if t not in present]
    out += [Discrepancy(kind="redundant", subject=p) for p in present if p not in targets]
    return tuple(out)


# --- edit planning -----------------------------------------------------

_KIND_TO_OP = {
    "missing": "add",
    "redundant": "delete",
    "attribute_mismatch": "modify",
    "relationship_mismatch": "modify",
}


def build_edit_messages(discrepancies: list[Discrepancy]) -> list[ChatMessage]:
    lines = [format_discrepancy_line(d) for d in discrepancies]
    return [
        ChatMessage(role="system", content=load_template("plan_edit")),
        ChatMessage(role="user", content="\n".join(lines)),
    ]


def parse_edit_response(text: str) -> EditPlan:
    body = _last_block(text, "rpg-edit")
    ops: list[EditOp] = []
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        try:
            ops.append(parse_edit_op_line(line))
        except PlanInvalidError as exc:
            raise UnparseableResponseError(f"bad edit op line: {exc.reason}") from None
    return EditPlan.canonical(ops)


def _check_coverage(discrepancies: list[Discrepancy], plan: EditPlan) -> None:
    covered = {op.target.casefold() for op in plan.ops}
    for disc in discrepancies:
        if disc.subject.casefold() not in covered:
            raise PlanInvalidError(f"edit plan drops discrepancy {disc.subject!r}")


def plan_edit(
    discrepancies: list[Discrepancy],
    backend: Backend | None = None,
    cond_for: Callable[[Discrepancy], str] | None = None,
    background: str = "background",
) -> EditPlan:
    """Turn discrepancies into a canonical edit plan.

    Without a backend the mapping is rule-based: missing -> add,
    redundant -> delete, mismatches -> modify, each op reusing the
    discrepancy's rectangle (which is then mandatory). cond_for can
    override the conditioning id; the default uses the subject, or the
    background id for deletions. With a backend, the model proposes the
    ops and the same coverage rule is enforced.
    """
    if not discrepancies:
        return EditPlan()
    if backend is not None:
        plan = parse_edit_response(backend.complete(build_edit_messages(list(discrepancies))))
        _check_coverage(list(discrepancies), plan)
        return plan
    ops = []
    for disc in discrepancies:
        if disc.rect is None:
            raise PlanInvalidError(f"discrepancy {disc.subject!r} has no rectangle to edit")
        kind = _KIND_TO_OP[disc.kind]
        if cond_for is not None:
            cond_id = cond_for(disc)
        elif kind == "delete":
            cond_id = background
        else:
            cond_id = disc.subject
        ops.append(EditOp(kind=kind, target=disc.subject, rect=disc.rect, cond_id=cond_id))
    plan = EditPlan.canonical(ops)
    _check_coverage(list(discrepancies), plan)
    return plan
