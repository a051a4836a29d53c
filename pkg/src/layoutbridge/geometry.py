"""Boxes, layouts and the joint (grid cell, category) index codec.

All metric and model code works in a canonical 256x256 frame. Boxes are
stored center+size; corner-form input is converted on ingest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

CANONICAL_SIZE = 256.0

Point = Tuple[float, float]


class GeometryError(ValueError):
    """Invalid box, frame or codec input."""


class OutOfFrameError(GeometryError):
    pass


class IndexBoundsError(GeometryError, IndexError):
    pass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: center (x, y) and size (w, h), in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"box size must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise GeometryError("box fields must be finite")

    @classmethod
    def from_corner(cls, left: float, top: float, w: float, h: float) -> "BBox":
        return cls(left + w / 2.0, top + h / 2.0, w, h)

    def to_corner(self) -> Tuple[float, float, float, float]:
        return (self.x - self.w / 2.0, self.y - self.h / 2.0, self.w, self.h)

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


def bbox_center(b: BBox) -> Point:
    return (b.x, b.y)


def bbox_area(b: BBox) -> float:
    return b.w * b.h


@dataclass(frozen=True)
class LayoutObject:
    category: int
    bbox: BBox


@dataclass(frozen=True)
class Layout:
    """Ordered labeled boxes inside a ``(width, height)`` frame."""

    objects: Tuple[LayoutObject, ...] = ()
    frame: Tuple[float, float] = (CANONICAL_SIZE, CANONICAL_SIZE)

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        fw, fh = self.frame
        if not (fw > 0 and fh > 0):
            raise GeometryError(f"degenerate frame {self.frame}")
        for obj in self.objects:
            b = obj.bbox
            if not (0.0 <= b.x <= fw and 0.0 <= b.y <= fh):
                raise OutOfFrameError(f"box center ({b.x}, {b.y}) outside frame {self.frame}")
            if bbox_area(b) > fw * fh:
                raise GeometryError("box area exceeds frame area")
            if obj.category < 0:
                raise GeometryError(f"negative category {obj.category}")

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def categories(self) -> list:
        return [o.category for o in self.objects]

    @classmethod
    def from_tuples(cls, items: Iterable[Sequence[float]], frame=(CANONICAL_SIZE, CANONICAL_SIZE)) -> "Layout":
        """Build from ``(category, x, y, w, h)`` tuples in center form."""
        return cls(tuple(LayoutObject(int(c), BBox(x, y, w, h)) for c, x, y, w, h in items), frame)


@dataclass(frozen=True)
class GridCell:
    gx: int
    gy: int


@dataclass(frozen=True)
class GridSpec:
    S: int = 7
    C: int = 80
    frame: Tuple[float, float] = field(default=(CANONICAL_SIZE, CANONICAL_SIZE))

    def __post_init__(self) -> None:
        if self.S < 1 or self.C < 1:
            raise GeometryError(f"S and C must be >= 1, got S={self.S}, C={self.C}")
        if not (self.frame[0] > 0 and self.frame[1] > 0):
            raise GeometryError(f"degenerate frame {self.frame}")

    @property
    def u_s(self) -> float:
        return self.frame[0] * self.frame[1]

    @property
    def n_joint(self) -> int:
        return self.S * self.S * self.C

    @property
    def cell_size(self) -> Tuple[float, float]:
        return (self.frame[0] / self.S, self.frame[1] / self.S)


def grid_cell_of(p: Point, g: GridSpec) -> GridCell:
    x, y = p
    fw, fh = g.frame
    if not (0.0 <= x <= fw and 0.0 <= y <= fh):
        raise OutOfFrameError(f"point ({x}, {y}) outside frame {g.frame}")
    gx = min(int(math.floor(x * g.S / fw)), g.S - 1)
    gy = min(int(math.floor(y * g.S / fh)), g.S - 1)
    return GridCell(gx, gy)


def joint_index_encode(cell: GridCell, category: int, g: GridSpec) -> int:
    if not (0 <= cell.gx < g.S and 0 <= cell.gy < g.S):
        raise IndexBoundsError(f"cell {cell} outside {g.S}x{g.S} grid")
    if not (0 <= category < g.C):
        raise IndexBoundsError(f"category {category} outside [0, {g.C})")
    return (cell.gy * g.S + cell.gx) * g.C + category


def joint_index_decode(v: int, g: GridSpec) -> Tuple[GridCell, int]:
    if not (0 <= v < g.n_joint):
        raise IndexBoundsError(f"joint index {v} outside [0, {g.n_joint})")
    flat, category = divmod(int(v), g.C)
    gy, gx = divmod(flat, g.S)
    return GridCell(gx, gy), category


def canonicalize_layout(raw: Layout, size: float = CANONICAL_SIZE) -> Layout:
    rw, rh = raw.frame
    if not (rw > 0 and rh > 0):
        raise GeometryError(f"degenerate frame {raw.frame}")
    sx, sy = size / rw, size / rh
    objs = tuple(
        LayoutObject(o.category, BBox(o.bbox.x * sx, o.bbox.y * sy, o.bbox.w * sx, o.bbox.h * sy))
        for o in raw.objects
    )
    return Layout(objs, (size, size))
