"""Latent grids, their binary file format, and spatial assembly ops.

A LatentGrid is an immutable (height, width, channels) float32 array.
The on-disk container is deliberately tiny::

    bytes 0-3   magic "RPGL"
    byte  4     format version (1)
    bytes 5-16  height, width, channels as unsigned 32-bit little-endian
    rest        float32 little-endian cell data, row-major (y, x, channel)

Masks reuse the same container with a single channel holding 0/1 values.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .layout import Canvas, RegionRect, validate_partition

MAGIC = b"RPGL"
FORMAT_VERSION = 1

# PNG export maps latent values affinely from [PNG_LO, PNG_HI] onto 0..255
# (clipped). Fixed so exported images are comparable across runs.
PNG_LO = -3.0
PNG_HI = 3.0


class LatentError(ValueError):
    """Base class for latent container and assembly failures."""


class ShapeMismatchError(LatentError):
    pass


class PartitionViolationError(LatentError):
    pass


class LatentFormatError(LatentError):
    """Raised when latent file bytes do not follow the container format."""


class EmptyMaskError(LatentError):
    pass


class OutOfBoundsError(LatentError):
    pass


@dataclass(frozen=True)
class LatentGrid:
    """Immutable float32 grid of shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"latent must be 3-d (h, w, c), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeMismatchError(f"latent dimensions must be positive, got {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr = arr.copy() if arr is self.data else arr
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def canvas(self) -> Canvas:
        return Canvas(width=self.width, height=self.height)

    def crop(self, rect: RegionRect) -> "LatentGrid":
        if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > self.width or rect.y1 > self.height:
            raise ShapeMismatchError(f"crop rect {rect} exceeds latent {self.width}x{self.height}")
        return LatentGrid(self.data[rect.y0 : rect.y1, rect.x0 : rect.x1, :])


@dataclass(frozen=True)
class Mask:
    """Binary (height, width) cell selection; 1 = selected."""

    cells: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.cells)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask must be 2-d (h, w), got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise LatentError("mask values must be 0 or 1")
        arr = arr.astype(np.uint8)
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def selected_count(self) -> int:
        return int(self.cells.sum())

    @staticmethod
    def from_region(rect: RegionRect, canvas: Canvas) -> "Mask":
        """Rectangular mask; the rect must lie inside the canvas."""
        if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > canvas.width or rect.y1 > canvas.height:
            raise OutOfBoundsError(f"rect {rect} exceeds canvas {canvas.width}x{canvas.height}")
        if rect.width < 1 or rect.height < 1:
            raise OutOfBoundsError(f"rect {rect} is degenerate")
        cells = np.zeros((canvas.height, canvas.width), dtype=np.uint8)
        cells[rect.y0 : rect.y1, rect.x0 : rect.x1] = 1
        return Mask(cells)

    def to_latent(self) -> LatentGrid:
        return LatentGrid(self.cells.astype(np.float32)[:, :, None])


def save_mask(mask: Mask, path) -> None:
    """Store a mask in the latent container (one channel, 0/1 values)."""
    save_latent(mask.to_latent(), path)


def load_mask(path) -> Mask:
    grid = load_latent(path)
    if grid.channels != 1:
        raise LatentFormatError(f"mask file must have 1 channel, got {grid.channels}")
    cells = grid.data[:, :, 0]
    if not np.isin(cells, (0.0, 1.0)).all():
        raise LatentFormatError("mask file values must be exactly 0 or 1")
    return Mask(cells.astype(np.uint8))


def latent_bytes(grid: LatentGrid) -> bytes:
    header = MAGIC + struct.pack("<B3I", FORMAT_VERSION, grid.height, grid.width, grid.channels)
    body = grid.data.astype("<f4", copy=False).tobytes()
    return header + body


def latent_from_bytes(blob: bytes) -> LatentGrid:
    if len(blob) < 17:
        raise LatentFormatError("file too short for a latent header")
    if blob[:4] != MAGIC:
        raise LatentFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, h, w, c = struct.unpack("<B3I", blob[4:17])
    if version != FORMAT_VERSION:
        raise LatentFormatError(f"unsupported format version {version}")
    expected = 17 + 4 * h * w * c
    if len(blob) != expected:
        raise LatentFormatError(f"expected {expected} bytes for {h}x{w}x{c}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=17).reshape(h, w, c)
    if not np.isfinite(data).all():
        raise LatentFormatError("latent file contains non-finite values")
    return LatentGrid(data.copy())


def save_latent(grid: LatentGrid, path) -> None:
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, latent_bytes(grid))


def load_latent(path) -> LatentGrid:
    with open(path, "rb") as fh:
        return latent_from_bytes(fh.read())


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    """Corner-aligned source coordinates for each output index.

    Output 0 maps to input 0 and output n_out-1 to input n_in-1. A
    single-cell output samples the input center.
    """
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_latent(grid: LatentGrid, height: int, width: int, mode: str = "bilinear") -> LatentGrid:
    """Spatially resample a grid to (height, width), per channel.

    "bilinear" interpolates between the four surrounding cells on a
    corner-aligned grid; "nearest" picks the closest cell, which makes
    integer-factor downsizing an exact subsampling. Resizing to the
    grid's own dimensions returns the grid unchanged. Interpolation is
    carried out in float64 so constant grids stay bit-identical after
    the final float32 cast.
    """
    if height < 1 or width < 1:
        raise ShapeMismatchError(f"target dimensions must be positive, got {height}x{width}")
    if mode not in ("bilinear", "nearest"):
        raise LatentError(f"unknown resize mode {mode!r}")
    if height == grid.height and width == grid.width:
        return grid
    src = grid.data.astype(np.float64)
    ys = _axis_coords(height, grid.height)
    xs = _axis_coords(width, grid.width)
    if mode == "nearest":
        yi = np.rint(ys).astype(int)
        xi = np.rint(xs).astype(int)
        out = src[np.ix_(yi, xi)]
    else:
        y0 = np.clip(np.floor(ys).astype(int), 0, grid.height - 1)
        y1 = np.minimum(y0 + 1, grid.height - 1)
        x0 = np.clip(np.floor(xs).astype(int), 0, grid.width - 1)
        x1 = np.minimum(x0 + 1, grid.width - 1)
        fy = (ys - y0)[:, None, None]
        fx = (xs - x0)[None, :, None]
        top = src[np.ix_(y0, x0)] * (1.0 - fx) + src[np.ix_(y0, x1)] * fx
        bot = src[np.ix_(y1, x0)] * (1.0 - fx) + src[np.ix_(y1, x1)] * fx
        out = top * (1.0 - fy) + bot * fy
    return LatentGrid(out.astype(np.float32))


def concat_regions(
    placements: list[tuple[RegionRect, LatentGrid]], canvas: Canvas
) -> LatentGrid:
    """Assemble region grids into one canvas grid.

    The rects must exactly partition the canvas and each grid must match
    its rect's dimensions; channel counts must agree.
    """
    if not placements:
        raise PartitionViolationError("no regions to assemble")
    report = validate_partition([rect for rect, _ in placements], canvas)
    if not report:
        raise PartitionViolationError(report.problem)
    channels = placements[0][1].channels
    out = np.empty((canvas.height, canvas.width, channels), dtype=np.float32)
    for rect, grid in placements:
        if grid.height != rect.height or grid.width != rect.width:
            raise ShapeMismatchError(
                f"grid {grid.height}x{grid.width} does not fit rect "
                f"{rect.height}x{rect.width}"
            )
        if grid.channels != channels:
            raise ShapeMismatchError(
                f"channel mismatch: {grid.channels} vs {channels}"
            )
        out[rect.y0 : rect.y1, rect.x0 : rect.x1, :] = grid.data
    return LatentGrid(out)


def latent_to_png(grid: LatentGrid, path) -> None:
    """Export a latent as an 8-bit PNG.

    Values are mapped affinely from [PNG_LO, PNG_HI] to 0..255 and
    clipped. Grids with 3 or more channels export the first three as
    RGB; narrower grids export channel 0 as grayscale.
    """
    from PIL import Image

    scaled = (grid.data.astype(np.float64) - PNG_LO) / (PNG_HI - PNG_LO)
    pixels = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    if grid.channels >= 3:
        img = Image.fromarray(pixels[:, :, :3], mode="RGB")
    else:
        img = Image.fromarray(pixels[:, :, 0], mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue())
