"""Division-of-focal-plane mosaics: superpixel split, merge and color demosaic.

A monochrome sensor repeats a 2x2 tile of polarizer angles. A color
sensor puts a Bayer grid over those 2x2 superpixels, giving a 4x4
macro-pixel. Extraction never interpolates: each output pixel is read
straight from the cells of one tile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PatternError, ShapeError
from .polar_core import QuadIntensities

DEFAULT_ANGLES = ((90, 45), (135, 0))
DEFAULT_BAYER = ("RG", "GB")
_ANGLE_FIELDS = {0: "i0", 45: "i45", 90: "i90", 135: "i135"}


@dataclass(frozen=True)
class MosaicPattern:
    angle_layout: tuple[tuple[int, int], tuple[int, int]] = DEFAULT_ANGLES
    color_layout: tuple[str, str] | None = None

    def __post_init__(self):
        angles = tuple(tuple(int(a) for a in row) for row in self.angle_layout)
        if [len(r) for r in angles] != [2, 2] or sorted(a for r in angles for a in r) != [0, 45, 90, 135]:
            raise PatternError(f"angle layout must be a 2x2 permutation of 0/45/90/135, got {self.angle_layout}")
        object.__setattr__(self, "angle_layout", angles)
        if self.color_layout is not None:
            colors = tuple(str(r).upper() for r in self.color_layout)
            if [len(r) for r in colors] != [2, 2] or sorted("".join(colors)) != ["B", "G", "G", "R"]:
                raise PatternError(f"color layout must be a 2x2 Bayer grid, got {self.color_layout}")
            if not ((colors[0][0] == colors[1][1] == "G") or (colors[0][1] == colors[1][0] == "G")):
                raise PatternError(f"G cells of a Bayer grid must sit on a diagonal, got {colors}")
            object.__setattr__(self, "color_layout", colors)

    @property
    def is_color(self) -> bool:
        return self.color_layout is not None

    @property
    def period(self) -> int:
        return 4 if self.is_color else 2

    def angle_offset(self, angle: int) -> tuple[int, int]:
        for r, row in enumerate(self.angle_layout):
            for c, a in enumerate(row):
                if a == angle:
                    return r, c
        raise PatternError(f"angle {angle} not in layout")

    def color_offsets(self, color: str) -> list[tuple[int, int]]:
        assert self.color_layout is not None
        return [(r, c) for r in range(2) for c in range(2) if self.color_layout[r][c] == color]

    @classmethod
    def parse(cls, angles: str | None = None, bayer: str | None = None) -> "MosaicPattern":
        """Parse CLI strings such as ``"90,45;135,0"`` and ``"RG;GB"``."""
        layout = DEFAULT_ANGLES
        if angles:
            try:
                layout = tuple(tuple(int(v) for v in row.split(",")) for row in angles.split(";"))
            except ValueError as exc:
                raise PatternError(f"cannot parse angle layout {angles!r}") from exc
        color = tuple(bayer.split(";")) if bayer else None
        return cls(angle_layout=layout, color_layout=color)


@dataclass(frozen=True)
class MosaicFrame:
    data: np.ndarray
    pattern: MosaicPattern = MosaicPattern()

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"mosaic frame must be a single HxW plane, got {data.shape}")
        p = self.pattern.period
        if data.shape[0] % p or data.shape[1] % p:
            raise ShapeError(f"frame {data.shape} not divisible by pattern period {p}")
        object.__setattr__(self, "data", data)


def split_quad(frame: MosaicFrame) -> QuadIntensities:
    if frame.pattern.is_color:
        raise PatternError("split_quad takes a monochrome frame; use demosaic_color")
    d = frame.data
    planes = {}
    for angle, field in _ANGLE_FIELDS.items():
        r, c = frame.pattern.angle_offset(angle)
        planes[field] = d[r::2, c::2][..., None].copy()
    return QuadIntensities(**planes)


def merge_quad(quad: QuadIntensities, pattern: MosaicPattern = MosaicPattern()) -> MosaicFrame:
    planes = {f: getattr(quad, f) for f in _ANGLE_FIELDS.values()}
    planes = {f: p if p.ndim == 3 else p[..., None] for f, p in planes.items()}
    h, w, cc = planes["i0"].shape
    if cc == 3:
        if not pattern.is_color:
            raise PatternError("trichromatic quad needs a pattern with a color layout")
        return _merge_color(planes, pattern)
    if pattern.is_color:
        raise PatternError("monochrome quad cannot fill a color pattern")
    out = np.empty((2 * h, 2 * w), dtype=planes["i0"].dtype)
    for angle, field in _ANGLE_FIELDS.items():
        r, c = pattern.angle_offset(angle)
        out[r::2, c::2] = planes[field][..., 0]
    return MosaicFrame(out, pattern)


def _merge_color(planes, pattern: MosaicPattern) -> MosaicFrame:
    h, w, _ = planes["i0"].shape
    out = np.empty((4 * h, 4 * w), dtype=planes["i0"].dtype)
    for ci, color in enumerate("RGB"):
        for br, bc in pattern.color_offsets(color):
            for angle, field in _ANGLE_FIELDS.items():
                ar, ac = pattern.angle_offset(angle)
                out[2 * br + ar :: 4, 2 * bc + ac :: 4] = planes[field][..., ci]
    return MosaicFrame(out, pattern)


def demosaic_color(frame: MosaicFrame) -> QuadIntensities:
    """Trichromatic quad at a quarter of the frame's resolution per axis.

    G is the mean of the two G cells of each macro-pixel.
    """
    if not frame.pattern.is_color:
        raise PatternError("demosaic_color needs a pattern with a color layout")
    d = frame.data
    if not np.issubdtype(d.dtype, np.floating):
        d = d.astype(np.float32)
    pattern = frame.pattern
    planes = {}
    for angle, field in _ANGLE_FIELDS.items():
        ar, ac = pattern.angle_offset(angle)
        chans = []
        for color in "RGB":
            cells = [d[2 * br + ar :: 4, 2 * bc + ac :: 4] for br, bc in pattern.color_offsets(color)]
            chans.append(cells[0] if len(cells) == 1 else (cells[0] + cells[1]) / 2)
        planes[field] = np.stack(chans, axis=-1)
    return QuadIntensities(**planes)


def extract_quad(frame: MosaicFrame) -> QuadIntensities:
    return demosaic_color(frame) if frame.pattern.is_color else split_quad(frame)
