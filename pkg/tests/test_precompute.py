import numpy as np
import pytest

from stencil_tb import (
    GridSpec,
    ReceiverSet,
    SourceSet,
    allocate_field,
    build_masks,
    compress,
    decompose_wavefields,
    find_support,
    fused_inject_row,
    gather_box,
    inject_direct,
    precompute_receivers,
    scatter_all,
    scatter_box,
)
from stencil_tb.precompute import apply_gather

from conftest import random_coords, small_grid


def make_sources(coords, nt, rng=None, scale=None):
    n = len(coords)
    if rng is None:
        wavelets = np.ones((nt, n))
    else:
        wavelets = rng.normal(size=(nt, n))
    return SourceSet(coords=coords, wavelets=wavelets,
                     scale=scale if scale is not None else np.ones(n))


class TestFindSupport:
    def test_on_grid_single(self):
        grid = small_grid(h=1.0)
        src = make_sources([[5.0, 5.0, 5.0]], nt=3)
        assert find_support(src, grid) == {(5, 5, 5)}

    def test_cell_center_eight(self):
        grid = small_grid(h=1.0)
        src = make_sources([[5.5, 5.5, 5.5]], nt=3)
        assert len(find_support(src, grid)) == 8

    def test_face_sharing_union(self):
        # two sources in adjacent cells share a 4-corner face: 12, not 16
        grid = small_grid(h=1.0)
        src = make_sources([[5.5, 5.5, 5.5], [6.5, 5.5, 5.5]], nt=3)
        assert len(find_support(src, grid)) == 12

    def test_numeric_agrees_with_geometric(self, rng):
        grid = small_grid(h=2.0)
        for _ in range(20):
            coords = random_coords(rng, grid, 4, on_grid_fraction=0.25)
            wavelets = rng.normal(size=(5, 4))
            wavelets[0] += np.sign(wavelets[0]) + 0.5  # nonzero first sample
            src = SourceSet(coords=coords, wavelets=wavelets, scale=np.ones(4))
            assert find_support(src, grid, "numeric") == find_support(src, grid)

    def test_numeric_warns_on_zero_first_samples(self):
        grid = small_grid(h=1.0)
        wavelets = np.zeros((6, 1))
        wavelets[5] = 1.0  # first probed steps are all zero
        src = SourceSet(coords=[[4.5, 4.5, 4.5]], wavelets=wavelets,
                        scale=np.ones(1))
        with pytest.warns(RuntimeWarning):
            sup = find_support(src, grid, "numeric")
        assert sup == set()

    def test_unknown_method(self):
        grid = small_grid()
        with pytest.raises(ValueError):
            find_support(make_sources([[5.0, 5.0, 5.0]], 1), grid, "magic")


class TestBuildMasks:
    def test_empty(self):
        grid = small_grid(n=6, h=1.0)
        sup = build_masks(set(), grid)
        assert sup.n_affected == 0
        assert not sup.sm.any()
        assert np.all(sup.sid == -1)

    def test_single_point(self):
        grid = small_grid(n=6, h=1.0)
        sup = build_masks({(1, 1, 1)}, grid)
        assert sup.sm.sum() == 1
        assert sup.sid[1, 1, 1] == 0

    def test_lexicographic_ids(self):
        grid = small_grid(n=6, h=1.0)
        sup = build_masks({(0, 0, 0), (0, 0, 2), (1, 0, 0)}, grid)
        assert sup.sid[0, 0, 0] == 0
        assert sup.sid[0, 0, 2] == 1
        assert sup.sid[1, 0, 0] == 2

    def test_bijection_invariants(self, rng):
        grid = small_grid(n=10, h=1.0)
        for _ in range(25):
            pts = {tuple(p) for p in rng.integers(0, 10, size=(30, 3))}
            sup = build_masks(pts, grid)
            ids = sup.sid[sup.sid >= 0]
            assert sorted(ids.tolist()) == list(range(sup.n_affected))
            assert sup.sm.sum() == sup.n_affected
            # ids ascend lexicographically
            assert np.all(np.diff(sup.sid[tuple(sup.points.T)]) == 1)

    def test_out_of_interior_rejected(self):
        grid = small_grid(n=6, h=1.0)
        with pytest.raises(ValueError):
            build_masks({(6, 0, 0)}, grid)


class TestCompress:
    def test_empty(self):
        grid = small_grid(n=6, h=1.0)
        sup = compress(build_masks(set(), grid))
        assert not sup.nnz_mask.any()
        assert sup.sp_z(0, 0).size == 0

    def test_two_entries_one_column(self):
        grid = small_grid(n=10, h=1.0)
        sup = compress(build_masks({(3, 4, 1), (3, 4, 7)}, grid))
        assert sup.nnz_mask[3, 4] == 2
        np.testing.assert_array_equal(sup.sp_z(3, 4), [1, 7])
        np.testing.assert_array_equal(sup.sp_id(3, 4), [0, 1])

    def test_roundtrip_reconstruction(self, rng):
        grid = small_grid(n=12, h=1.0)
        pts = {tuple(p) for p in rng.integers(0, 12, size=(50, 3))}
        sup = compress(build_masks(pts, grid))
        sm2 = np.zeros_like(sup.sm)
        for x in range(12):
            for y in range(12):
                zs = sup.sp_z(x, y)
                assert len(zs) == sup.nnz_mask[x, y]
                assert np.all(np.diff(zs) > 0)
                sm2[x, y, zs] = 1
                # sid cross-check through the jagged id rows
                np.testing.assert_array_equal(
                    sup.sid[x, y, zs], sup.sp_id(x, y))
        np.testing.assert_array_equal(sm2, sup.sm)
        assert sup.nnz_mask.sum() == sup.n_affected

    def test_to_text_deterministic(self):
        grid = small_grid(n=6, h=1.0)
        sup1 = compress(build_masks({(1, 2, 3), (0, 0, 0)}, grid))
        sup2 = compress(build_masks({(0, 0, 0), (1, 2, 3)}, grid))
        assert sup1.to_text() == sup2.to_text()
        assert "K=2" in sup1.to_text()


class TestDecompose:
    def test_single_on_grid_source(self, rng):
        grid = small_grid(h=1.0)
        w = rng.normal(size=(7, 1))
        src = SourceSet(coords=[[5.0, 5.0, 5.0]], wavelets=w,
                        scale=np.array([2.0]))
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, 7)
        np.testing.assert_allclose(dcmp.src_dcmp[:, 0], 2.0 * w[:, 0])

    def test_cell_center_splits_evenly(self, rng):
        grid = small_grid(h=1.0)
        w = rng.normal(size=(5, 1))
        src = SourceSet(coords=[[5.5, 5.5, 5.5]], wavelets=w, scale=np.ones(1))
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, 5)
        for k in range(8):
            np.testing.assert_allclose(dcmp.src_dcmp[:, k], w[:, 0] / 8.0,
                                       rtol=1e-12)

    def test_rows_beyond_wavelet_are_zero(self):
        grid = small_grid(h=1.0)
        src = make_sources([[5.2, 5.0, 5.0]], nt=4)
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, 9)
        assert not dcmp.src_dcmp[4:].any()

    def test_nt_shorter_than_wavelet(self):
        grid = small_grid(h=1.0)
        src = make_sources([[5.2, 5.0, 5.0]], nt=6)
        sup = compress(build_masks(find_support(src, grid), grid))
        with pytest.raises(ValueError):
            decompose_wavefields(src, sup, 5)

    def test_differential_against_inject_direct(self, rng):
        # scatter(src_dcmp[t]) must equal inject_direct on a zero field
        grid = small_grid(n=16, h=10.0)
        nt = 10
        coords = random_coords(rng, grid, 5, on_grid_fraction=0.2)
        src = SourceSet(coords=coords, wavelets=rng.normal(size=(nt, 5)),
                        scale=rng.uniform(0.5, 2.0, 5))
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, nt)
        for t in range(nt):
            f_direct = allocate_field(grid, 4, 3, dtype=np.float32)
            inject_direct(f_direct, src, t)
            f_fused = allocate_field(grid, 4, 3, dtype=np.float32)
            scatter_all(f_fused, t, sup, dcmp)
            a = f_direct.interior(t)
            b = f_fused.interior(t)
            scale = max(np.abs(a).max(), 1e-30)
            assert np.abs(a - b).max() / scale <= 1e-7


class TestFusedInjectRow:
    def setup_case(self, rng):
        grid = small_grid(n=12, h=1.0)
        nt = 6
        coords = random_coords(rng, grid, 3, on_grid_fraction=0.3)
        src = SourceSet(coords=coords, wavelets=rng.normal(size=(nt, 3)),
                        scale=np.ones(3))
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, nt)
        return grid, src, sup, dcmp, nt

    def test_empty_row_unchanged(self, rng):
        grid, _, sup, dcmp, _ = self.setup_case(rng)
        empty = next(
            (x, y) for x in range(12) for y in range(12)
            if sup.nnz_mask[x, y] == 0)
        f = allocate_field(grid, 2, 2, dtype=np.float64)
        fused_inject_row(f, 0, empty[0], empty[1], sup, dcmp)
        assert not f.data.any()

    def test_full_sweep_equals_scatter(self, rng):
        grid, _, sup, dcmp, nt = self.setup_case(rng)
        for t in (0, nt - 1):
            f_rows = allocate_field(grid, 2, 2, dtype=np.float64)
            for x in range(12):
                for y in range(12):
                    fused_inject_row(f_rows, t, x, y, sup, dcmp)
            f_scat = allocate_field(grid, 2, 2, dtype=np.float64)
            scatter_all(f_scat, t, sup, dcmp)
            np.testing.assert_array_equal(f_rows.data, f_scat.data)

    def test_box_scatter_equals_row_loop(self, rng):
        grid, _, sup, dcmp, _ = self.setup_case(rng)
        box = ((2, 9), (1, 12), (0, 12))
        f_rows = allocate_field(grid, 2, 2, dtype=np.float64)
        for x in range(2, 9):
            for y in range(1, 12):
                fused_inject_row(f_rows, 1, x, y, sup, dcmp)
        f_box = allocate_field(grid, 2, 2, dtype=np.float64)
        scatter_box(f_box, 1, sup, dcmp, box)
        np.testing.assert_array_equal(f_rows.data, f_box.data)

    def test_mass_conservation_single_source(self, rng):
        grid = small_grid(n=12, h=1.0)
        nt = 4
        w = rng.normal(size=(nt, 1))
        src = SourceSet(coords=[[5.3, 6.7, 4.2]], wavelets=w,
                        scale=np.array([1.5]))
        sup = compress(build_masks(find_support(src, grid), grid))
        dcmp = decompose_wavefields(src, sup, nt)
        for t in range(nt):
            f = allocate_field(grid, 2, 2, dtype=np.float64)
            scatter_all(f, t, sup, dcmp)
            total = f.interior(t).sum()
            assert total == pytest.approx(1.5 * w[t, 0], rel=1e-12)


class TestReceiverSupport:
    def test_on_grid_receiver(self):
        grid = small_grid(h=1.0)
        rsup = precompute_receivers(ReceiverSet(coords=[[5.0, 5.0, 5.0]]), grid)
        assert rsup.support.n_affected == 1
        assert rsup.entry_w[0] == pytest.approx(1.0)

    def test_cell_center_receiver(self):
        grid = small_grid(h=1.0)
        rsup = precompute_receivers(ReceiverSet(coords=[[5.5, 5.5, 5.5]]), grid)
        assert rsup.support.n_affected == 8
        np.testing.assert_allclose(rsup.entry_w, 0.125)

    def test_gather_constant_field(self, rng):
        grid = small_grid(n=10, h=1.0)
        coords = random_coords(rng, grid, 4, on_grid_fraction=0.25)
        rsup = precompute_receivers(ReceiverSet(coords=coords), grid)
        f = allocate_field(grid, 2, 2, dtype=np.float64)
        f.interior(0)[...] = -2.5
        row = np.zeros(4)
        apply_gather(row, gather_box(f, 0, rsup, grid.full_box()))
        np.testing.assert_allclose(row, -2.5, rtol=1e-12)

    def test_gather_split_boxes_match_full(self, rng):
        grid = small_grid(n=10, h=1.0)
        coords = random_coords(rng, grid, 6, on_grid_fraction=0.2)
        rsup = precompute_receivers(ReceiverSet(coords=coords), grid)
        f = allocate_field(grid, 2, 2, dtype=np.float64)
        f.interior(0)[...] = rng.normal(size=(10, 10, 10))
        full = np.zeros(6)
        apply_gather(full, gather_box(f, 0, rsup, grid.full_box()))
        split = np.zeros(6)
        apply_gather(split, gather_box(f, 0, rsup, ((0, 5), (0, 10), (0, 10))))
        apply_gather(split, gather_box(f, 0, rsup, ((5, 10), (0, 10), (0, 10))))
        np.testing.assert_allclose(split, full, rtol=1e-13)
