"""3D primitives, candidate grids, and obstacle-aware line-of-sight tests.

Grid indexing convention (used by every serialized index in the package):
point k corresponds to axis indices (ix, iy, iz) with

    k = ix * (n_y * n_z) + iy * n_z + iz

i.e. row-major with x outermost and z innermost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import ConfigError

__all__ = [
    "Point3",
    "Box3",
    "Region",
    "GridSpec",
    "Grid",
    "Scenario",
    "build_grid",
    "distance",
    "segment_blocked",
    "los_indicator",
]


@dataclass(frozen=True)
class Point3:
    """A point in meters. All coordinates must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box given by its min and max corners (closed set)."""

    min: Point3
    max: Point3

    def __post_init__(self):
        if self.min.x > self.max.x or self.min.y > self.max.y or self.min.z > self.max.z:
            raise ValueError(f"box min corner exceeds max corner: {self!r}")

    def contains(self, p: Point3) -> bool:
        return (
            self.min.x <= p.x <= self.max.x
            and self.min.y <= p.y <= self.max.y
            and self.min.z <= p.z <= self.max.z
        )


@dataclass(frozen=True)
class Region:
    """Axis-aligned deployment region; each min must be strictly below its max."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for lo, hi, name in (
            (self.x_min, self.x_max, "x"),
            (self.y_min, self.y_max, "y"),
            (self.z_min, self.z_max, "z"),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"region {name} bounds must be finite")
            if lo >= hi:
                raise ConfigError(f"region requires {name}_min < {name}_max, got [{lo}, {hi}]")

    def contains(self, p: Point3) -> bool:
        return (
            self.x_min <= p.x <= self.x_max
            and self.y_min <= p.y <= self.y_max
            and self.z_min <= p.z <= self.z_max
        )

    def axis_interval(self, axis: int) -> tuple[float, float]:
        return (
            (self.x_min, self.x_max),
            (self.y_min, self.y_max),
            (self.z_min, self.z_max),
        )[axis]


@dataclass(frozen=True)
class GridSpec:
    """Number of candidate points along each axis; M = n_x * n_y * n_z."""

    n_x: int
    n_y: int
    n_z: int

    def __post_init__(self):
        if min(self.n_x, self.n_y, self.n_z) < 1:
            raise ConfigError(f"grid counts must be positive, got {self!r}")

    @property
    def m(self) -> int:
        return self.n_x * self.n_y * self.n_z


def _axis_coords(lo: float, hi: float, n: int) -> np.ndarray:
    # n >= 2 spans both bounds; a single point sits at the axis midpoint.
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class Grid:
    """The ordered list of M candidate deployment points."""

    region: Region
    spec: GridSpec
    points: tuple[Point3, ...]

    @property
    def m(self) -> int:
        return len(self.points)

    @cached_property
    def coords(self) -> np.ndarray:
        """(M, 3) float64 view of the points, row k = point k."""
        a = np.array([p.as_tuple() for p in self.points], dtype=np.float64)
        a.setflags(write=False)
        return a

    def nearest_index(self, p: Point3) -> int:
        """Index of the grid point closest to p (ties go to the lower index)."""
        d2 = np.sum((self.coords - p.as_array()) ** 2, axis=1)
        return int(np.argmin(d2))


@lru_cache(maxsize=64)
def build_grid(region: Region, spec: GridSpec) -> Grid:
    """Discretize a region into spec.m evenly spaced candidate points.

    Points along each axis include both bounds when the count is >= 2;
    an axis with count 1 uses the midpoint. Ordering follows the module's
    row-major index convention.
    """
    xs = _axis_coords(region.x_min, region.x_max, spec.n_x)
    ys = _axis_coords(region.y_min, region.y_max, spec.n_y)
    zs = _axis_coords(region.z_min, region.z_max, spec.n_z)
    points = tuple(
        Point3(float(x), float(y), float(z))
        for x in xs
        for y in ys
        for z in zs
    )
    return Grid(region=region, spec=spec, points=points)


def distance(p: Point3, q: Point3) -> float:
    """Euclidean distance in meters."""
    return math.sqrt((p.x - q.x) ** 2 + (p.y - q.y) ** 2 + (p.z - q.z) ** 2)


def segment_blocked(p: Point3, q: Point3, box: Box3) -> bool:
    """True iff the open segment p->q overlaps the closed box over positive length.

    Endpoint-only or single-point (tangent) contact does not block, so a
    transmitter or user standing flush against an obstacle face keeps its
    line of sight along that face.
    """
    if p == q:
        raise ValueError("segment endpoints must differ")
    lo = -math.inf
    hi = math.inf
    p_arr = p.as_tuple()
    d = (q.x - p.x, q.y - p.y, q.z - p.z)
    bmin = box.min.as_tuple()
    bmax = box.max.as_tuple()
    for i in range(3):
        di = d[i]
        if di == 0.0:
            if p_arr[i] < bmin[i] or p_arr[i] > bmax[i]:
                return False
            continue
        t1 = (bmin[i] - p_arr[i]) / di
        t2 = (bmax[i] - p_arr[i]) / di
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > lo:
            lo = t1
        if t2 < hi:
            hi = t2
        if lo > hi:
            return False
    return min(hi, 1.0) - max(lo, 0.0) > 0.0


def los_indicator(p: Point3, q: Point3, obstacles: tuple[Box3, ...] | list[Box3]) -> int:
    """1 when no obstacle blocks the open segment p->q, else 0."""
    for box in obstacles:
        if segment_blocked(p, q, box):
            return 0
    return 1


@dataclass(frozen=True)
class Scenario:
    """Immutable world description: where everything sits and how D is gridded."""

    region: Region
    bs: Point3
    users: tuple[Point3, ...]
    obstacles: tuple[Box3, ...]
    grid_spec: GridSpec

    @property
    def n_users(self) -> int:
        return len(self.users)

    def grid(self) -> Grid:
        return build_grid(self.region, self.grid_spec)
