"""Rectangles in the closed upper half-plane and the dyadic decompositions
built from Carleson cubes.

All rectangles are closed and axis aligned. Decompositions share edges, which
is harmless because edges carry no area.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

# 2**(depth + 1) bottom cubes must stay a sane list length.
MAX_PARTITION_DEPTH = 20


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class UHPRect:
    """Closed rectangle [x0, x1] x [y0, y1] with 0 <= y0 < y1."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self) -> None:
        _check_finite(x0=self.x0, x1=self.x1, y0=self.y0, y1=self.y1)
        if not self.x0 < self.x1:
            raise ValueError(f"need x0 < x1, got [{self.x0}, {self.x1}]")
        if not 0 <= self.y0 < self.y1:
            raise ValueError(f"need 0 <= y0 < y1, got [{self.y0}, {self.y1}]")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, other: UHPRect, tol: float = 0.0) -> bool:
        return (
            self.x0 - tol <= other.x0
            and other.x1 <= self.x1 + tol
            and self.y0 - tol <= other.y0
            and other.y1 <= self.y1 + tol
        )

    def scaled(self, r: float) -> UHPRect:
        """Image under z -> r z (r > 0)."""
        if not r > 0:
            raise ValueError(f"scale must be positive, got {r}")
        return UHPRect(r * self.x0, r * self.x1, r * self.y0, r * self.y1)

    def translated(self, dx: float) -> UHPRect:
        """Horizontal translation; vertical shifts would move the boundary."""
        return UHPRect(self.x0 + dx, self.x1 + dx, self.y0, self.y1)

    def gap_to(self, other: UHPRect) -> float:
        """Euclidean distance between the two closed rectangles."""
        dx = max(other.x0 - self.x1, self.x0 - other.x1, 0.0)
        dy = max(other.y0 - self.y1, self.y0 - other.y1, 0.0)
        return math.hypot(dx, dy)

    def bounding_union(self, other: UHPRect) -> UHPRect:
        return UHPRect(
            min(self.x0, other.x0),
            max(self.x1, other.x1),
            min(self.y0, other.y0),
            max(self.y1, other.y1),
        )

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    def to_json(self) -> dict:
        return {"x0": self.x0, "x1": self.x1, "y0": self.y0, "y1": self.y1}

    @classmethod
    def from_json(cls, data: dict) -> UHPRect:
        return cls(float(data["x0"]), float(data["x1"]), float(data["y0"]), float(data["y1"]))


@dataclass(frozen=True)
class CarlesonCube:
    """The square [a, b] x [0, b - a] resting on the boundary interval [a, b]."""

    a: float
    b: float

    def __post_init__(self) -> None:
        _check_finite(a=self.a, b=self.b)
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def half_width(self) -> float:
        return 0.5 * (self.b - self.a)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.a + self.b)

    def rect(self) -> UHPRect:
        return UHPRect(self.a, self.b, 0.0, self.b - self.a)

    def to_json(self) -> dict:
        return {"kind": "carleson", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class WhitneySplit:
    left: UHPRect
    right: UHPRect
    upper: UHPRect

    def parts(self) -> tuple[UHPRect, UHPRect, UHPRect]:
        return (self.left, self.right, self.upper)


def carleson(a: float, b: float) -> CarlesonCube:
    return CarlesonCube(float(a), float(b))


def whitney_split(cube: CarlesonCube) -> WhitneySplit:
    """Two half-width boundary cubes under the upper half of the cube."""
    m = cube.midpoint
    w = cube.width
    # One shared height for all three pieces; m - a and b - m can differ by an ulp.
    h = 0.5 * w
    return WhitneySplit(
        left=UHPRect(cube.a, m, 0.0, h),
        right=UHPRect(m, cube.b, 0.0, h),
        upper=UHPRect(cube.a, cube.b, h, w),
    )


def whitney_partition(cube: CarlesonCube, depth: int) -> list[UHPRect]:
    """Iterate the Whitney split ``depth + 1`` times.

    Level n contributes 2**n upper rectangles of size 2**-n times the top one;
    the 2**(depth + 1) boundary cubes left over after the last split close the
    tiling. Levels are listed top-down, left to right.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if depth > MAX_PARTITION_DEPTH:
        raise ValueError(
            f"depth {depth} exceeds {MAX_PARTITION_DEPTH}: "
            f"{2 ** (depth + 1)} bottom cubes would not fit in memory"
        )
    finest = cube.width * 2.0 ** -(depth + 1)
    if finest == 0.0 or cube.a + finest == cube.a:
        raise ValueError(f"depth {depth} underflows the cube width {cube.width}")

    rects: list[UHPRect] = []
    for n in range(depth + 1):
        side = cube.width * 2.0 ** -n
        # Edges come from a + i * side so neighbours share them bitwise.
        for i in range(2**n):
            rects.append(UHPRect(cube.a + i * side, cube.a + (i + 1) * side, 0.5 * side, side))
    count = 2 ** (depth + 1)
    rects.extend(
        UHPRect(cube.a + i * finest, cube.a + (i + 1) * finest, 0.0, finest) for i in range(count)
    )
    return rects


def horizontal_slices(cube: CarlesonCube, n_max: int) -> list[UHPRect]:
    """Dyadic layers [a, b] x [2**(-n-1) r, 2**-n r] for n = 0..n_max, r the half width.

    They tile the lower half of the cube down to height 2**(-n_max-1) r.
    """
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    r = cube.half_width
    return [
        UHPRect(cube.a, cube.b, r * 2.0 ** -(n + 1), r * 2.0**-n) for n in range(n_max + 1)
    ]


def vertical_slices(side: UHPRect, n_strips: int, toward: float | None = None) -> list[UHPRect]:
    """Cut ``side`` into equal vertical strips, nearest the split line first.

    ``toward`` is the x coordinate of the split line and must be one of the
    side's vertical edges; it defaults to the right edge (a left half).
    """
    if n_strips < 1:
        raise ValueError(f"need at least one strip, got {n_strips}")
    if toward is None:
        toward = side.x1
    if toward not in (side.x0, side.x1):
        raise ValueError(f"split line x={toward} is not an edge of {side}")
    delta = side.width / n_strips
    strips = []
    for j in range(1, n_strips + 1):
        if toward == side.x1:
            x0, x1 = side.x1 - j * delta, side.x1 - (j - 1) * delta
            if j == n_strips:
                x0 = side.x0
        else:
            x0, x1 = side.x0 + (j - 1) * delta, side.x0 + j * delta
            if j == n_strips:
                x1 = side.x1
        strips.append(UHPRect(x0, x1, side.y0, side.y1))
    return strips


def interiors_disjoint(rects: Sequence[UHPRect]) -> bool:
    for i, p in enumerate(rects):
        for q in rects[i + 1 :]:
            if min(p.x1, q.x1) > max(p.x0, q.x0) and min(p.y1, q.y1) > max(p.y0, q.y0):
                return False
    return True


def total_area(rects: Iterable[UHPRect]) -> float:
    return math.fsum(r.area for r in rects)


def rects_to_csv(rects: Iterable[UHPRect]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x0", "x1", "y0", "y1"])
    for r in rects:
        writer.writerow([repr(v) for v in r.as_row()])
    return buf.getvalue()


def rects_from_csv(text: str) -> list[UHPRect]:
    reader = csv.DictReader(io.StringIO(text))
    return [UHPRect.from_json(row) for row in reader]


def parse_region(spec: str | dict) -> UHPRect:
    """Region descriptor from the CLI: ``"a,b"`` for a Carleson cube,
    ``"x0,x1,y0,y1"`` for a rectangle, or the equivalent JSON object."""
    if isinstance(spec, dict):
        if spec.get("kind") == "carleson":
            return carleson(spec["a"], spec["b"]).rect()
        return UHPRect.from_json(spec)
    text = spec.strip()
    if text.startswith("{"):
        return parse_region(json.loads(text))
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 2:
        return carleson(*parts).rect()
    if len(parts) == 4:
        return UHPRect(*parts)
    raise ValueError(f"region must be 'a,b' or 'x0,x1,y0,y1', got {spec!r}")
