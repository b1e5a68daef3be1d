"""Grid geometry, halo-padded time-buffered fields, and FD coefficients.

Fields live on a regular 3-axis grid. Axes of extent 1 are treated as
absent by the kernels (a (n, 1, 1) grid behaves as a 1-D problem), which
keeps one code path for 1-D/2-D sanity checks and full 3-D runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import RegionError

#: An axis-aligned index box in interior coordinates:
#: ((x0, x1), (y0, y1), (z0, z1)), half-open per axis.
Box = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: index (i, j, k) sits at origin + (i, j, k) * spacing."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    boundary_layers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.shape) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("grids have exactly three axes")
        if any(n < 1 for n in self.shape):
            raise ValueError(f"every shape extent must be >= 1, got {self.shape}")
        if any(h <= 0.0 for h in self.spacing):
            raise ValueError(f"every spacing must be > 0, got {self.spacing}")
        if self.boundary_layers < 0:
            raise ValueError("boundary_layers must be >= 0")

    @property
    def ndim_effective(self) -> int:
        """Number of axes with more than one point."""
        return sum(1 for n in self.shape if n > 1)

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a in range(3) if self.shape[a] > 1)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.shape))

    def extent(self) -> tuple[tuple[float, float], ...]:
        """Physical (min, max) coordinate per axis."""
        return tuple(
            (o, o + (n - 1) * h)
            for o, n, h in zip(self.origin, self.shape, self.spacing)
        )

    def index_to_coord(self, idx) -> tuple[float, float, float]:
        return tuple(o + i * h for o, i, h in zip(self.origin, idx, self.spacing))

    def coord_to_frac_index(self, coord) -> np.ndarray:
        """Continuous index of a physical coordinate (float per axis)."""
        return (np.asarray(coord, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(
            self.spacing
        )

    def full_box(self) -> Box:
        return tuple((0, n) for n in self.shape)


@dataclass(frozen=True)
class FdCoefficients:
    """Central second-derivative weights w_0..w_radius at unit spacing.

    The weight at offset -r equals the weight at +r; ``weights[r]`` holds w_r.
    """

    space_order: int
    weights: np.ndarray = field(repr=False)

    @property
    def radius(self) -> int:
        return self.space_order // 2


def _check_order(space_order: int) -> None:
    if space_order % 2 != 0 or not 2 <= space_order <= 16:
        raise ValueError(
            f"space_order must be even and within [2, 16], got {space_order}"
        )


def _solve_exact(a_rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gauss-Jordan elimination over rationals; the moment systems are tiny
    (at most 9x9) but ill-conditioned in floats at high orders."""
    n = len(rhs)
    m = [row[:] + [rhs[i]] for i, row in enumerate(a_rows)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        pivot = m[col][col]
        m[col] = [x / pivot for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                factor = m[r][col]
                m[r] = [x - factor * y for x, y in zip(m[r], m[col])]
    return [m[i][n] for i in range(n)]


def fd_weights(space_order: int) -> FdCoefficients:
    """Second-derivative central weights, exact on polynomials of degree <= so+1.

    Solves the even-moment exactness system for the symmetric half-stencil:
    sum_r w_r * r^m over offsets -R..R equals 2 for m = 2 and 0 for every
    other even m <= so (odd moments vanish by symmetry), in exact rational
    arithmetic so every order is correct to the last float bit.
    """
    _check_order(space_order)
    radius = space_order // 2
    # Unknowns w_0..w_R; equation rows are even moments m = 0, 2, ..., so.
    rows = []
    rhs = []
    for m in range(0, space_order + 1, 2):
        row = [Fraction(1 if m == 0 else 0)]
        row += [Fraction(2 * r**m) for r in range(1, radius + 1)]
        rows.append(row)
        rhs.append(Fraction(2 if m == 2 else 0))
    weights = np.array([float(w) for w in _solve_exact(rows, rhs)])
    weights.setflags(write=False)
    return FdCoefficients(space_order=space_order, weights=weights)


def staggered_fd_weights(space_order: int) -> np.ndarray:
    """First-derivative weights on half-offset samples, c_1..c_{so/2}.

    d/dx f at 0 ~= (1/h) * sum_j c_j (f(+(2j-1)/2) - f(-(2j-1)/2)), exact on
    polynomials of degree <= so by the same moment-system construction.
    """
    _check_order(space_order)
    n = space_order // 2
    # Odd moments 1, 3, ...: sum_j c_j * 2 * ((2j-1)/2)^m = (m == 1).
    rows = [
        [2 * (Fraction(2 * j - 1, 2)) ** (2 * row + 1) for j in range(1, n + 1)]
        for row in range(n)
    ]
    rhs = [Fraction(1 if row == 0 else 0) for row in range(n)]
    weights = np.array([float(c) for c in _solve_exact(rows, rhs)])
    weights.setflags(write=False)
    return weights


def cfl_dt(grid: GridSpec, v_max: float, safety: float = 0.9) -> float:
    """Stable explicit time step: safety * min(h) / (v_max * sqrt(ndim)).

    ndim counts only axes with more than one point, so degenerate grids get
    the 1-D/2-D bound.
    """
    if v_max <= 0.0:
        raise ValueError(f"v_max must be > 0, got {v_max}")
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    ndim = max(grid.ndim_effective, 1)
    h_min = min(grid.spacing[a] for a in grid.active_axes) if grid.active_axes else min(grid.spacing)
    return safety * h_min / (v_max * np.sqrt(ndim))


class TimeBufferedField:
    """An n-D scalar field with halo padding and a cyclic buffer of time levels.

    Level ``t`` lives in buffer slot ``t % time_levels``; Python's modulo
    keeps negative initial levels addressable (t = -1 maps to slot k-1).
    Halo points are zero-initialized and are never written by interior
    updates.
    """

    def __init__(self, grid: GridSpec, halo: int, time_levels: int,
                 dtype=np.float32):
        if time_levels < 2:
            raise ValueError("time_levels must be >= 2")
        if halo < 0:
            raise ValueError("halo must be >= 0")
        self.grid = grid
        self.halo = int(halo)
        self.time_levels = int(time_levels)
        self.dtype = np.dtype(dtype)
        padded = tuple(n + 2 * halo for n in grid.shape)
        try:
            self.data = np.zeros((time_levels,) + padded, dtype=self.dtype)
        except MemoryError as exc:
            raise MemoryError(
                f"cannot allocate {time_levels}x{padded} field of {self.dtype}"
            ) from exc

    @property
    def padded_shape(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    def slot(self, t: int) -> int:
        return t % self.time_levels

    def level(self, t: int) -> np.ndarray:
        """Padded array view of the buffer slot holding logical time t."""
        return self.data[self.slot(t)]

    def interior(self, t: int) -> np.ndarray:
        h = self.halo
        if h == 0:
            return self.level(t)
        return self.level(t)[h:-h, h:-h, h:-h]

    def zero(self) -> None:
        self.data[...] = 0


def allocate_field(grid: GridSpec, space_order: int, time_levels: int,
                   dtype=np.float32) -> TimeBufferedField:
    """Zero-initialized field with halo = space_order/2 on every side."""
    _check_order(space_order)
    return TimeBufferedField(grid, space_order // 2, time_levels, dtype=dtype)


def check_region(region: Box, grid: GridSpec) -> Box:
    """Validate a half-open interior box; raises RegionError on halo overlap."""
    if len(region) != 3:
        raise RegionError(f"region must have three axis ranges, got {region!r}")
    box = tuple((int(lo), int(hi)) for lo, hi in region)
    for a, (lo, hi) in enumerate(box):
        if lo < 0 or hi > grid.shape[a]:
            raise RegionError(
                f"region {region} leaves the interior of shape {grid.shape} on axis {a}"
            )
        if lo > hi:
            raise RegionError(f"region {region} is inverted on axis {a}")
    return box


def box_volume(box: Box) -> int:
    v = 1
    for lo, hi in box:
        v *= max(hi - lo, 0)
    return v


def box_is_empty(box: Box) -> bool:
    return any(hi <= lo for lo, hi in box)


def box_intersect(a: Box, b: Box) -> Box:
    return tuple((max(al, bl), min(ah, bh)) for (al, ah), (bl, bh) in zip(a, b))


def box_slices(box: Box, halo: int, shift: tuple[int, ...] = (0, 0, 0)):
    """Slices into a halo-padded array for an interior box, offset by shift."""
    return tuple(
        slice(lo + halo + s, hi + halo + s) for (lo, hi), s in zip(box, shift)
    )
