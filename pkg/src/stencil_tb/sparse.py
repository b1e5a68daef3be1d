"""Off-the-grid sources and receivers coupled to the grid by trilinear
interpolation: the direct (unfused) scatter/gather operators.

Every sparse point maps to the 2x2x2 corner set of its enclosing cell with
tensor-product weights; coordinates exactly on a grid point degenerate to a
single unit weight. Coordinates on the extreme upper face of an axis snap
into the last cell with fractional offset 1 so corner indices stay in
bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError
from .grid import GridSpec, TimeBufferedField

_EPS = 1e-9


@dataclass
class SourceSet:
    """Sparse injection points: coords (nsrc, 3) in meters, wavelets
    (nt, nsrc), and a per-source injection scale."""

    coords: np.ndarray
    wavelets: np.ndarray
    scale: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        self.wavelets = np.asarray(self.wavelets, dtype=np.float64)
        if self.wavelets.ndim == 1:
            self.wavelets = self.wavelets[:, None]
        if self.wavelets.shape[1] != self.nsrc:
            raise ValueError(
                f"wavelets shape {self.wavelets.shape} does not match {self.nsrc} sources"
            )
        if self.scale is not None:
            self.scale = np.asarray(self.scale, dtype=np.float64)
            if self.scale.shape != (self.nsrc,):
                raise ValueError("scale must have one entry per source")

    @property
    def nsrc(self) -> int:
        return self.coords.shape[0]

    @property
    def nt(self) -> int:
        return self.wavelets.shape[0]

    def stencils(self, grid: GridSpec):
        """Cached corner indices (nsrc, 8, 3) and weights (nsrc, 8)."""
        key = id(grid)
        if key not in self._cache:
            idx = np.empty((self.nsrc, 8, 3), dtype=np.int64)
            wts = np.empty((self.nsrc, 8), dtype=np.float64)
            for s in range(self.nsrc):
                st = interp_stencil(self.coords[s], grid)
                idx[s] = st.indices
                wts[s] = st.weights
            self._cache[key] = (idx, wts)
        return self._cache[key]

    def scatter_index(self, grid: GridSpec):
        """Unique affected points and the entry->point inverse map, so each
        step's injected total per point accumulates once in double precision
        before touching the field."""
        key = ("scatter", id(grid))
        if key not in self._cache:
            idx, wts = self.stencils(grid)
            flat = idx.reshape(-1, 3)
            unique_pts, inverse = np.unique(flat, axis=0, return_inverse=True)
            src_of_entry = np.repeat(np.arange(self.nsrc), 8)
            self._cache[key] = (unique_pts, inverse.ravel(), src_of_entry,
                                wts.ravel())
        return self._cache[key]


@dataclass
class ReceiverSet:
    """Sparse measurement points; ``data`` rows are filled per time step."""

    coords: np.ndarray
    data: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))

    @property
    def nrec(self) -> int:
        return self.coords.shape[0]

    def ensure_data(self, nt: int) -> np.ndarray:
        if self.data is None or self.data.shape != (nt, self.nrec):
            self.data = np.zeros((nt, self.nrec), dtype=np.float64)
        else:
            self.data[...] = 0.0
        return self.data

    def stencils(self, grid: GridSpec):
        key = id(grid)
        if key not in self._cache:
            idx = np.empty((self.nrec, 8, 3), dtype=np.int64)
            wts = np.empty((self.nrec, 8), dtype=np.float64)
            for r in range(self.nrec):
                st = interp_stencil(self.coords[r], grid)
                idx[r] = st.indices
                wts[r] = st.weights
            self._cache.clear()
            self._cache[key] = (idx, wts)
        return self._cache[key]


@dataclass(frozen=True)
class InterpStencil:
    """The 2x2x2 trilinear cell stencil of one sparse point."""

    indices: np.ndarray  # (8, 3) grid index triples
    weights: np.ndarray  # (8,), >= 0, summing to 1

    @property
    def np_points(self) -> int:
        return len(self.weights)

    @property
    def points(self):
        return [(tuple(int(i) for i in idx), float(w))
                for idx, w in zip(self.indices, self.weights)]


def interp_stencil(coord, grid: GridSpec) -> InterpStencil:
    """Trilinear corner weights of a physical coordinate.

    Raises OutOfDomainError when the coordinate leaves the grid extent.
    """
    frac = grid.coord_to_frac_index(coord)
    base = np.empty(3, dtype=np.int64)
    f = np.empty(3, dtype=np.float64)
    for a in range(3):
        n = grid.shape[a]
        if frac[a] < -_EPS or frac[a] > n - 1 + _EPS:
            raise OutOfDomainError(
                f"coordinate {tuple(np.asarray(coord, dtype=float))} outside grid "
                f"extent on axis {a} (index {frac[a]:.6g} not in [0, {n - 1}])"
            )
        fa = min(max(frac[a], 0.0), float(n - 1))
        if n == 1:
            base[a], f[a] = 0, 0.0
            continue
        i0 = int(np.floor(fa))
        if i0 >= n - 1:  # upper face snaps into the last cell
            i0 = n - 2
        base[a] = i0
        f[a] = fa - i0

    corners = np.array(
        [(bx, by, bz) for bx in (0, 1) for by in (0, 1) for bz in (0, 1)],
        dtype=np.int64,
    )
    indices = base[None, :] + corners
    for a in range(3):  # degenerate axes reuse index 0 with zero weight
        if grid.shape[a] == 1:
            indices[:, a] = 0
    per_axis = np.where(corners == 1, f[None, :], 1.0 - f[None, :])
    weights = per_axis.prod(axis=1)
    weights.setflags(write=False)
    indices.setflags(write=False)
    return InterpStencil(indices=indices, weights=weights)


def inject_direct(field: TimeBufferedField, sources: SourceSet, t: int) -> None:
    """Scatter wavelets[t] into level t: field[t, p] += w_p * scale_s * amp.

    The per-point total accumulates in double precision in source-major,
    corner-minor entry order, then lands on the field with one add per
    point, so overlapping and even cancelling sources stay exact to the
    final rounding.
    """
    if sources.nsrc == 0:
        return
    pts, inverse, src_of_entry, w_entry = sources.scatter_index(field.grid)
    scale = sources.scale if sources.scale is not None else np.ones(sources.nsrc)
    contribs = (w_entry * scale[src_of_entry]) * sources.wavelets[t][src_of_entry]
    totals = np.zeros(len(pts))
    np.add.at(totals, inverse, contribs)
    h = field.halo
    field.level(t)[pts[:, 0] + h, pts[:, 1] + h, pts[:, 2] + h] += (
        totals.astype(field.dtype)
    )


def record_receivers(field: TimeBufferedField, receivers: ReceiverSet, t: int) -> None:
    """Gather data[t, r] = sum_p w_p * field[t, p] over each receiver stencil."""
    if receivers.nrec == 0:
        return
    if receivers.data is None:
        raise ValueError("receiver data buffer not allocated; call ensure_data")
    idx, wts = receivers.stencils(field.grid)
    h = field.halo
    level = field.level(t)
    vals = level[idx[:, :, 0] + h, idx[:, :, 1] + h, idx[:, :, 2] + h]
    receivers.data[t] = (wts * vals).sum(axis=1)


def source_scales(sources: SourceSet, grid: GridSpec, m, dt: float) -> np.ndarray:
    """Per-source injection scale dt^2 / m, with m read at the nearest grid
    point of each source (not interpolated)."""
    if np.isscalar(m) or np.ndim(m) == 0:
        return np.full(sources.nsrc, dt**2 / float(m))
    m_arr = np.asarray(m, dtype=np.float64)
    out = np.empty(sources.nsrc)
    for s in range(sources.nsrc):
        nearest = np.rint(grid.coord_to_frac_index(sources.coords[s])).astype(int)
        nearest = np.clip(nearest, 0, np.asarray(grid.shape) - 1)
        out[s] = dt**2 / m_arr[tuple(nearest)]
    return out


def validate_coords_in_extent(coords, grid: GridSpec, margin_points: int = 0,
                              what: str = "coordinate") -> None:
    """Check coords lie within the grid extent, optionally shrunk by a margin
    (used to keep receivers out of the damping layers)."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    for c in coords:
        frac = grid.coord_to_frac_index(c)
        for a in range(3):
            lo = margin_points if grid.shape[a] > 1 else 0
            hi = grid.shape[a] - 1 - lo
            if frac[a] < lo - _EPS or frac[a] > hi + _EPS:
                raise OutOfDomainError(
                    f"{what} {tuple(c)} outside allowed region on axis {a}: "
                    f"index {frac[a]:.6g} not in [{lo}, {hi}]"
                )
