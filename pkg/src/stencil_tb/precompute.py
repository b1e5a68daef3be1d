"""Aligning sparse operators to the grid ahead of time stepping.

The sparse source loop of the baseline schedule is replaced by four
precomputed structures:

  * a binary mask of affected grid points and an id array assigning each
    affected point a unique ascending id (lexicographic in (x, y, z)),
  * per-point on-grid amplitude series (the decomposed wavelets),
  * a compressed iteration structure: per-(x, y) counts of affected
    z-entries plus the z-index and id lists, so the fused inner loop visits
    only affected points.

After this runs, injection becomes a per-point indexed add with no
off-the-grid indirection, which is what makes wavefront temporal blocking
legal. Receivers get the symmetric treatment with per-(point, receiver)
weights feeding a fused gather.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Box, GridSpec, TimeBufferedField
from .sparse import ReceiverSet, SourceSet

#: Number of leading injection steps probed by the numeric discovery method
#: before thresholding (covers wavelets whose very first sample is zero).
NUMERIC_PROBE_STEPS = 3


@dataclass
class SparseSupport:
    """Precomputed on-grid footprint of a sparse operator set.

    ``sm``/``sid`` cover the full interior; ``points`` lists the affected
    indices in lexicographic order, so ``sid[tuple(points[k])] == k``. The
    compressed members are populated by :func:`compress`.
    """

    grid: GridSpec
    sm: np.ndarray
    sid: np.ndarray
    points: np.ndarray  # (K, 3) int64, lexicographically sorted
    n_affected: int
    nnz_mask: np.ndarray | None = None
    _row_ptr: np.ndarray | None = None
    _flat_z: np.ndarray | None = None
    _flat_id: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.grid.shape

    @property
    def compressed(self) -> bool:
        return self.nnz_mask is not None

    def _row(self, x: int, y: int) -> slice:
        if not self.compressed:
            raise ValueError("support not compressed; call compress() first")
        k = x * self.shape[1] + y
        return slice(self._row_ptr[k], self._row_ptr[k + 1])

    def sp_z(self, x: int, y: int) -> np.ndarray:
        """Ascending z-indices of affected points in column (x, y)."""
        return self._flat_z[self._row(x, y)]

    def sp_id(self, x: int, y: int) -> np.ndarray:
        """Point ids matching sp_z(x, y)."""
        return self._flat_id[self._row(x, y)]

    def to_text(self) -> str:
        """Deterministic textual form for golden-file comparison."""
        out = io.StringIO()
        out.write(f"sparse-support shape={self.shape} K={self.n_affected}\n")
        for k, (x, y, z) in enumerate(self.points):
            out.write(f"point {k}: {x} {y} {z}\n")
        if self.compressed:
            nz = np.argwhere(self.nnz_mask)
            for x, y in nz:
                zs = " ".join(str(z) for z in self.sp_z(x, y))
                ids = " ".join(str(i) for i in self.sp_id(x, y))
                out.write(f"col {x} {y}: nnz={self.nnz_mask[x, y]} z=[{zs}] id=[{ids}]\n")
        return out.getvalue()


@dataclass
class DecomposedSource:
    """Per-time-step, per-affected-point injected values; column k belongs to
    the point with sid k."""

    src_dcmp: np.ndarray  # (nt, K) float64

    @property
    def nt(self) -> int:
        return self.src_dcmp.shape[0]


def _source_entries(sources: SourceSet, grid: GridSpec):
    """Flattened (point, source, weight) triples with zero weights dropped,
    in source-major, corner-minor order."""
    idx, wts = sources.stencils(grid)
    flat_idx = idx.reshape(-1, 3)
    flat_w = wts.ravel()
    flat_s = np.repeat(np.arange(sources.nsrc), 8)
    keep = flat_w > 0.0
    return flat_idx[keep], flat_s[keep], flat_w[keep]


def find_support(sources: SourceSet, grid: GridSpec,
                 method: str = "geometric") -> set[tuple[int, int, int]]:
    """Grid indices affected by any source.

    geometric: union of interpolation corners with nonzero weight.
    numeric: inject the first few time steps onto an empty grid and collect
    indices where anything landed; warns when a source's probed samples are
    all zero (its footprint would be missed).
    """
    if method == "geometric":
        pts, _, _ = _source_entries(sources, grid)
        return set(map(tuple, pts.tolist()))
    if method != "numeric":
        raise ValueError(f"unknown support method {method!r}")

    steps = min(sources.nt, NUMERIC_PROBE_STEPS)
    probed = sources.wavelets[:steps]
    dead = np.flatnonzero(~np.any(probed != 0.0, axis=0))
    if dead.size:
        warnings.warn(
            f"sources {dead.tolist()} have all-zero wavelet samples in the "
            f"first {steps} steps; numeric support discovery may miss their "
            "footprint (use the geometric method)",
            RuntimeWarning,
        )
    marks = np.zeros(grid.shape, dtype=np.float64)
    idx, wts = sources.stencils(grid)
    flat_idx = idx.reshape(-1, 3)
    scale = sources.scale if sources.scale is not None else np.ones(sources.nsrc)
    for t in range(steps):
        amp = sources.wavelets[t] * scale
        contribs = np.abs(wts * amp[:, None]).ravel()
        np.add.at(marks, (flat_idx[:, 0], flat_idx[:, 1], flat_idx[:, 2]), contribs)
    return set(map(tuple, np.argwhere(marks != 0.0).tolist()))


def build_masks(support: set, grid: GridSpec) -> SparseSupport:
    """Mask and id arrays over the interior; ids ascend in lexicographic
    (x, y, z) order of the affected points."""
    pts = np.array(sorted(support), dtype=np.int64).reshape(-1, 3)
    shape = grid.shape
    if pts.size and (np.any(pts < 0) or np.any(pts >= np.asarray(shape))):
        raise ValueError("support indices leave the grid interior")
    sm = np.zeros(shape, dtype=np.uint8)
    sid = np.full(shape, -1, dtype=np.int32)
    if pts.size:
        loc = (pts[:, 0], pts[:, 1], pts[:, 2])
        sm[loc] = 1
        sid[loc] = np.arange(pts.shape[0], dtype=np.int32)
    return SparseSupport(
        grid=grid, sm=sm, sid=sid, points=pts, n_affected=pts.shape[0]
    )


def compress(support: SparseSupport) -> SparseSupport:
    """Populate nnz_mask and the per-(x, y) z-index/id lists.

    The lexicographic point order makes each column's z list strictly
    increasing with contiguous storage, so rows are O(1) slices.
    """
    nx, ny, _ = support.shape
    support.nnz_mask = support.sm.sum(axis=2, dtype=np.int32)
    keys = support.points[:, 0] * ny + support.points[:, 1]
    support._row_ptr = np.searchsorted(keys, np.arange(nx * ny + 1))
    support._flat_z = support.points[:, 2].copy()
    support._flat_id = np.arange(support.n_affected, dtype=np.int32)
    return support


def decompose_wavefields(sources: SourceSet, support: SparseSupport,
                         nt: int) -> DecomposedSource:
    """Fold every source's wavelet into per-affected-point series:

        src_dcmp[t, sid(p)] = sum_s w_{s,p} * scale_s * wavelets[t, s]

    accumulated in the same source order as direct injection. Rows past the
    wavelet length stay zero.
    """
    if nt < sources.nt:
        raise ValueError(
            f"nt={nt} is shorter than the wavelet length {sources.nt}"
        )
    pts, src, wts = _source_entries(sources, support.grid)
    ids = support.sid[pts[:, 0], pts[:, 1], pts[:, 2]]
    if np.any(ids < 0):
        raise ValueError("support does not cover every source stencil point")
    scale = sources.scale if sources.scale is not None else np.ones(sources.nsrc)
    dcmp = np.zeros((nt, support.n_affected), dtype=np.float64)
    if ids.size:
        contribs = (wts * scale[src])[:, None] * sources.wavelets[:, src].T
        target = dcmp.T[:, : sources.nt]
        np.add.at(target, ids, contribs)
    return DecomposedSource(src_dcmp=dcmp)


def fused_inject_row(field: TimeBufferedField, t: int, x: int, y: int,
                     support: SparseSupport, dcmp: DecomposedSource) -> None:
    """Fused per-row injection: the reduced inner loop over affected z only.

    field[t, x, y, sp_z[j]] += src_dcmp[t, sp_id[j]] for each affected entry
    of column (x, y).
    """
    zs = support.sp_z(x, y)
    if zs.size == 0:
        return
    ids = support.sp_id(x, y)
    h = field.halo
    field.level(t)[x + h, y + h, zs + h] += dcmp.src_dcmp[t, ids].astype(field.dtype)


def scatter_box(field: TimeBufferedField, t: int, support: SparseSupport,
                dcmp: DecomposedSource, box: Box) -> None:
    """Fused injection over a box: identical per-point arithmetic to calling
    fused_inject_row for every (x, y) in the box, batched for speed.

    Each affected point receives exactly one add, so the result is bitwise
    the row-loop's.
    """
    pts = support.points
    if pts.size == 0:
        return
    (x0, x1), (y0, y1), (z0, z1) = box
    m = (
        (pts[:, 0] >= x0) & (pts[:, 0] < x1)
        & (pts[:, 1] >= y0) & (pts[:, 1] < y1)
        & (pts[:, 2] >= z0) & (pts[:, 2] < z1)
    )
    if not m.any():
        return
    sel = pts[m]
    h = field.halo
    field.level(t)[sel[:, 0] + h, sel[:, 1] + h, sel[:, 2] + h] += (
        dcmp.src_dcmp[t, m].astype(field.dtype)
    )


def scatter_all(field: TimeBufferedField, t: int, support: SparseSupport,
                dcmp: DecomposedSource) -> None:
    scatter_box(field, t, support, dcmp, tuple((0, n) for n in support.shape))


@dataclass
class ReceiverSupport:
    """Mask/compression machinery over receiver stencil corners plus the
    per-(point, receiver) weight table driving the fused gather."""

    support: SparseSupport
    entry_points: np.ndarray  # (M, 3) int64, lexicographic by point
    entry_rid: np.ndarray     # (M,) receiver index
    entry_w: np.ndarray       # (M,) weight
    nrec: int


def precompute_receivers(receivers: ReceiverSet, grid: GridSpec) -> ReceiverSupport:
    """Build the fused-gather structures for a receiver set."""
    idx, wts = receivers.stencils(grid)
    flat_idx = idx.reshape(-1, 3)
    flat_w = wts.ravel()
    flat_r = np.repeat(np.arange(receivers.nrec), 8)
    keep = flat_w > 0.0
    flat_idx, flat_w, flat_r = flat_idx[keep], flat_w[keep], flat_r[keep]
    order = np.lexsort((flat_r, flat_idx[:, 2], flat_idx[:, 1], flat_idx[:, 0]))
    flat_idx, flat_w, flat_r = flat_idx[order], flat_w[order], flat_r[order]
    support = compress(build_masks(set(map(tuple, flat_idx.tolist())), grid))
    return ReceiverSupport(
        support=support,
        entry_points=flat_idx,
        entry_rid=flat_r,
        entry_w=flat_w,
        nrec=receivers.nrec,
    )


def gather_box(field: TimeBufferedField, t: int, rsup: ReceiverSupport,
               box: Box):
    """Partial fused gather over a box.

    Returns (receiver ids, contributions) for deterministic reduction by the
    caller; None when the box touches no receiver corner.
    """
    pts = rsup.entry_points
    if pts.size == 0:
        return None
    (x0, x1), (y0, y1), (z0, z1) = box
    m = (
        (pts[:, 0] >= x0) & (pts[:, 0] < x1)
        & (pts[:, 1] >= y0) & (pts[:, 1] < y1)
        & (pts[:, 2] >= z0) & (pts[:, 2] < z1)
    )
    if not m.any():
        return None
    sel = pts[m]
    h = field.halo
    vals = field.level(t)[sel[:, 0] + h, sel[:, 1] + h, sel[:, 2] + h]
    return rsup.entry_rid[m], rsup.entry_w[m] * vals


def apply_gather(data_row: np.ndarray, partial) -> None:
    """Accumulate one gather partial into a receiver data row."""
    if partial is None:
        return
    rids, contribs = partial
    np.add.at(data_row, rids, contribs)
