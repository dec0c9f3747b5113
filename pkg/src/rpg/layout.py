"""Region-split ratio DSL: parsing, serialization, and pixel-exact resolution.

A split string describes how a canvas divides into rectangular regions.
Rows are separated by ``;`` and column ratios within a row by ``,``::

    "1,1,1"      three equal columns in a single row
    "1,2;3"      two rows; the first splits 1:2 into two columns
    "2.5,1"      decimal ratios are allowed

Rows receive equal heights unless a row carries an explicit height ratio
using the extended prefix form ``h:RATIO:cols`` (e.g. ``"h:2:1,1;h:1:3"``).
The serializer only emits the prefix for non-default heights, so every
plain split string round-trips unchanged.

Ratios are stored as exact rationals; pixel allocation uses largest-
remainder apportionment with ties broken toward the earlier index, so
resolution is deterministic and exactly partitions the canvas.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class LayoutError(ValueError):
    """Base class for split-DSL and region-resolution failures."""


class EmptyRowError(LayoutError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} is empty")


class MalformedNumberError(LayoutError):
    def __init__(self, row: int, col: int, token: str):
        self.row = row
        self.col = col
        self.token = token
        super().__init__(f"row {row}, column {col}: {token!r} is not a decimal ratio")


class NonPositiveRatioError(LayoutError):
    def __init__(self, row: int, col: int, token: str):
        self.row = row
        self.col = col
        self.token = token
        super().__init__(f"row {row}, column {col}: ratio {token!r} must be > 0")


class CanvasTooSmallError(LayoutError):
    def __init__(self, region: int, canvas: "Canvas"):
        self.region = region
        self.canvas = canvas
        super().__init__(
            f"canvas {canvas.width}x{canvas.height} starves region {region} "
            "(every region needs at least one pixel per dimension)"
        )


# Unsigned decimal: "3", "2.5", "0.25". No signs, no exponents.
_DECIMAL_RE = re.compile(r"^\d+(?:\.\d*)?$|^\.\d+$")


@dataclass(frozen=True)
class Canvas:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise LayoutError(f"canvas must be at least 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class RegionRect:
    """Pixel-space rectangle: origin (x0, y0), size (width, height)."""

    x0: int
    y0: int
    width: int
    height: int

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height


@dataclass(frozen=True)
class SplitRow:
    column_ratios: tuple[Fraction, ...]
    height_ratio: Fraction = Fraction(1)


@dataclass(frozen=True)
class SplitSpec:
    rows: tuple[SplitRow, ...]

    @property
    def region_count(self) -> int:
        return sum(len(r.column_ratios) for r in self.rows)


def _parse_ratio(token: str, row: int, col: int) -> Fraction:
    text = token.strip()
    if not _DECIMAL_RE.match(text):
        raise MalformedNumberError(row, col, token.strip() or token)
    value = Fraction(text)
    if value <= 0:
        raise NonPositiveRatioError(row, col, text)
    return value


def parse_split(text: str) -> SplitSpec:
    """Parse a split string into a SplitSpec.

    Whitespace around tokens is tolerated. Raises EmptyRowError,
    MalformedNumberError, or NonPositiveRatioError with the offending
    row/column position.
    """
    if not isinstance(text, str):
        raise LayoutError(f"split must be a string, got {type(text).__name__}")
    rows = []
    for row_idx, row_text in enumerate(text.split(";")):
        body = row_text.strip()
        if not body:
            raise EmptyRowError(row_idx)
        height = Fraction(1)
        if body.startswith("h:"):
            # Extended syntax: "h:HEIGHT:cols". Not part of the core grammar.
            parts = body.split(":", 2)
            if len(parts) != 3:
                raise MalformedNumberError(row_idx, 0, body)
            height = _parse_ratio(parts[1], row_idx, 0)
            body = parts[2].strip()
            if not body:
                raise EmptyRowError(row_idx)
        cols = []
        for col_idx, token in enumerate(body.split(",")):
            cols.append(_parse_ratio(token, row_idx, col_idx))
        rows.append(SplitRow(column_ratios=tuple(cols), height_ratio=height))
    return SplitSpec(rows=tuple(rows))


def _format_ratio(value: Fraction) -> str:
    """Render an exact rational as its shortest plain-decimal form.

    Parsed ratios always have denominators of the form 2^a * 5^b, so a
    terminating decimal exists.
    """
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        raise LayoutError(f"ratio {value} has no terminating decimal form")
    digits = max(twos, fives)
    scaled = value.numerator * 10**digits // value.denominator
    text = str(scaled).rjust(digits + 1, "0")
    whole, frac = text[:-digits], text[-digits:]
    frac = frac.rstrip("0")
    return f"{whole}.{frac}" if frac else whole


def serialize_split(spec: SplitSpec) -> str:
    """Canonical split string: no whitespace, rows joined by ';', cols by ','.

    Height prefixes are emitted only for rows whose height ratio is not 1.
    """
    rows = []
    for row in spec.rows:
        cols = ",".join(_format_ratio(r) for r in row.column_ratios)
        if row.height_ratio != 1:
            rows.append(f"h:{_format_ratio(row.height_ratio)}:{cols}")
        else:
            rows.append(cols)
    return ";".join(rows)


def _apportion(ratios: tuple[Fraction, ...], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` pixels to `ratios`.

    Exact rational arithmetic; ties in fractional remainder go to the
    earlier index.
    """
    denom = sum(ratios)
    quotas = [Fraction(total) * r / denom for r in ratios]
    base = [int(q) for q in quotas]  # floor: quotas are non-negative
    leftover = total - sum(base)
    remainders = sorted(
        range(len(ratios)), key=lambda i: (quotas[i] - base[i], -i), reverse=True
    )
    for i in remainders[:leftover]:
        base[i] += 1
    return base


def resolve_regions(spec: SplitSpec, canvas: Canvas) -> list[RegionRect]:
    """Map a split spec onto a canvas as concrete pixel rectangles.

    Regions are returned in row-major order (top row first, left to
    right) and exactly partition the canvas. Raises CanvasTooSmallError
    naming the first region (row-major) that would receive zero pixels
    in either dimension.
    """
    heights = _apportion(tuple(r.height_ratio for r in spec.rows), canvas.height)
    rects: list[RegionRect] = []
    region_idx = 0
    y = 0
    for row, row_h in zip(spec.rows, heights):
        widths = _apportion(row.column_ratios, canvas.width)
        x = 0
        for w in widths:
            if row_h < 1 or w < 1:
                raise CanvasTooSmallError(region_idx, canvas)
            rects.append(RegionRect(x0=x, y0=y, width=w, height=row_h))
            x += w
            region_idx += 1
        y += row_h
    return rects


@dataclass(frozen=True)
class PartitionReport:
    """Outcome of validate_partition; truthy when the rects tile the canvas."""

    ok: bool
    problem: str = ""
    overlap_pair: tuple[int, int] | None = None
    uncovered_cell: tuple[int, int] | None = None
    out_of_bounds: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_partition(rects: list[RegionRect], canvas: Canvas) -> PartitionReport:
    """Check that rects are pairwise disjoint and exactly cover the canvas.

    Reports the first overlapping pair or the first uncovered cell in
    row-major order rather than raising.
    """
    for i, r in enumerate(rects):
        if r.x0 < 0 or r.y0 < 0 or r.x1 > canvas.width or r.y1 > canvas.height:
            return PartitionReport(
                ok=False,
                problem=f"region {i} exceeds the canvas",
                out_of_bounds=i,
            )
    paint = np.zeros((canvas.height, canvas.width), dtype=np.int32)
    for r in rects:
        paint[r.y0 : r.y1, r.x0 : r.x1] += 1
    if (paint > 1).any():
        yy, xx = (int(v) for v in np.argwhere(paint > 1)[0])
        holders = [
            i
            for i, r in enumerate(rects)
            if r.x0 <= xx < r.x1 and r.y0 <= yy < r.y1
        ]
        pair = (holders[0], holders[1])
        return PartitionReport(
            ok=False,
            problem=f"regions {pair[0]} and {pair[1]} overlap",
            overlap_pair=pair,
        )
    if (paint == 0).any():
        yy, xx = (int(v) for v in np.argwhere(paint == 0)[0])
        return PartitionReport(
            ok=False,
            problem=f"cell (x={xx}, y={yy}) is uncovered",
            uncovered_cell=(xx, yy),
        )
    return PartitionReport(ok=True)
