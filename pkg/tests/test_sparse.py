import numpy as np
import pytest

from stencil_tb import (
    GridSpec,
    ReceiverSet,
    SourceSet,
    allocate_field,
    inject_direct,
    interp_stencil,
    record_receivers,
    source_scales,
)
from stencil_tb.errors import OutOfDomainError
from stencil_tb.sparse import validate_coords_in_extent

from conftest import random_coords, small_grid


class TestInterpStencil:
    def test_on_grid_point(self):
        grid = small_grid()
        st = interp_stencil((30.0, 40.0, 50.0), grid)
        weights = dict(st.points)
        assert weights[(3, 4, 5)] == pytest.approx(1.0)
        assert sum(w for _, w in st.points) == pytest.approx(1.0)
        assert sum(1 for _, w in st.points if w > 0) == 1

    def test_cell_center(self):
        grid = small_grid()
        st = interp_stencil((35.0, 45.0, 55.0), grid)
        np.testing.assert_allclose(st.weights, 0.125)
        assert st.np_points == 8

    def test_fractional_offsets(self):
        # offsets (0.25, 0.5, 0.0): corner (0,0,0) gets 0.75*0.5*1 = 0.375
        grid = small_grid(h=1.0)
        st = interp_stencil((2.25, 3.5, 4.0), grid)
        weights = {tuple(i): w for (i, w) in st.points}
        assert weights[(2, 3, 4)] == pytest.approx(0.375)
        assert weights[(3, 3, 4)] == pytest.approx(0.125)
        assert weights[(2, 4, 4)] == pytest.approx(0.375)
        assert weights[(2, 3, 5)] == pytest.approx(0.0)

    def test_outside_raises(self):
        grid = small_grid()
        with pytest.raises(OutOfDomainError):
            interp_stencil((-5.0, 0.0, 0.0), grid)
        with pytest.raises(OutOfDomainError):
            interp_stencil((0.0, 0.0, 151.0), grid)

    def test_upper_face_snaps_into_last_cell(self):
        grid = small_grid(n=8, h=1.0)
        st = interp_stencil((7.0, 3.0, 3.0), grid)
        weights = {tuple(i): w for (i, w) in st.points}
        assert max(i[0] for i in weights) == 7  # corners stay in bounds
        assert weights[(7, 3, 3)] == pytest.approx(1.0)

    def test_partition_of_unity(self, rng):
        grid = small_grid(n=12, h=7.5)
        coords = random_coords(rng, grid, 1000, on_grid_fraction=0.1, margin=0)
        for c in coords:
            st = interp_stencil(c, grid)
            assert abs(st.weights.sum() - 1.0) <= 1e-7
            assert np.all(st.weights >= 0.0)

    def test_adjoint_pair_property(self, rng):
        # inject 1 then read back at the same coord: sum w^2 <= 1 with
        # equality exactly on grid points
        grid = small_grid(n=10, h=2.0)
        coords = random_coords(rng, grid, 200, on_grid_fraction=0.2, margin=0)
        for c in coords:
            st = interp_stencil(c, grid)
            roundtrip = float(np.sum(st.weights**2))
            frac = grid.coord_to_frac_index(c)
            on_grid = np.allclose(frac, np.rint(frac), atol=1e-12)
            assert roundtrip <= 1.0 + 1e-12
            if on_grid:
                assert roundtrip == pytest.approx(1.0)
            else:
                assert roundtrip < 1.0


class TestInjectDirect:
    def test_on_grid_single_point(self):
        grid = small_grid(h=1.0)
        f = allocate_field(grid, 2, 3, dtype=np.float64)
        src = SourceSet(coords=[[4.0, 4.0, 4.0]], wavelets=np.array([[2.5]]),
                        scale=np.array([1.0]))
        inject_direct(f, src, 0)
        interior = f.interior(0)
        assert interior[4, 4, 4] == 2.5
        assert np.count_nonzero(interior) == 1

    def test_cell_center_corners(self):
        grid = small_grid(h=1.0)
        f = allocate_field(grid, 2, 3, dtype=np.float64)
        src = SourceSet(coords=[[4.5, 4.5, 4.5]], wavelets=np.array([[8.0]]),
                        scale=np.array([1.0]))
        inject_direct(f, src, 0)
        interior = f.interior(0)
        assert np.count_nonzero(interior) == 8
        np.testing.assert_allclose(interior[4:6, 4:6, 4:6], 1.0)

    def test_coincident_sources_accumulate(self):
        grid = small_grid(h=1.0)
        a, b = 1.37, -0.61
        f1 = allocate_field(grid, 2, 3, dtype=np.float64)
        src2 = SourceSet(coords=[[3.3, 4.1, 5.9]] * 2,
                         wavelets=np.array([[a, b]]), scale=np.ones(2))
        inject_direct(f1, src2, 0)
        f2 = allocate_field(grid, 2, 3, dtype=np.float64)
        src1 = SourceSet(coords=[[3.3, 4.1, 5.9]],
                         wavelets=np.array([[a + b]]), scale=np.ones(1))
        inject_direct(f2, src1, 0)
        np.testing.assert_allclose(f1.interior(0), f2.interior(0), rtol=5e-16)


class TestRecordReceivers:
    def test_constant_field(self):
        grid = small_grid(h=1.0)
        f = allocate_field(grid, 2, 3, dtype=np.float64)
        f.interior(0)[...] = 3.25
        rec = ReceiverSet(coords=[[4.2, 5.7, 6.1], [8.0, 8.0, 8.0]])
        rec.ensure_data(1)
        record_receivers(f, rec, 0)
        np.testing.assert_allclose(rec.data[0], 3.25)

    def test_on_grid_receiver_reads_point(self):
        grid = small_grid(h=1.0)
        f = allocate_field(grid, 2, 3, dtype=np.float64)
        f.interior(0)[7, 2, 9] = -4.5
        rec = ReceiverSet(coords=[[7.0, 2.0, 9.0]])
        rec.ensure_data(1)
        record_receivers(f, rec, 0)
        assert rec.data[0, 0] == pytest.approx(-4.5)

    def test_cell_center_single_corner(self):
        grid = small_grid(h=1.0)
        f = allocate_field(grid, 2, 3, dtype=np.float64)
        f.interior(0)[4, 4, 4] = 1.0
        rec = ReceiverSet(coords=[[4.5, 4.5, 4.5]])
        rec.ensure_data(1)
        record_receivers(f, rec, 0)
        assert rec.data[0, 0] == pytest.approx(0.125)


class TestScalesAndValidation:
    def test_source_scale_scalar_m(self):
        grid = small_grid(h=1.0)
        src = SourceSet(coords=[[4.2, 4.0, 4.0]], wavelets=np.zeros((1, 1)))
        scales = source_scales(src, grid, m=4.0, dt=0.5)
        assert scales[0] == pytest.approx(0.5**2 / 4.0)

    def test_source_scale_nearest_point(self):
        grid = small_grid(n=4, h=1.0)
        m = np.full((4, 4, 4), 1.0)
        m[2, 1, 1] = 9.0
        src = SourceSet(coords=[[1.6, 1.2, 1.4]], wavelets=np.zeros((1, 1)))
        scales = source_scales(src, grid, m=m, dt=1.0)
        assert scales[0] == pytest.approx(1.0 / 9.0)  # nearest is (2,1,1)

    def test_receiver_margin_validation(self):
        grid = GridSpec((16, 16, 16), (1.0, 1.0, 1.0), boundary_layers=4)
        validate_coords_in_extent([[8.0, 8.0, 8.0]], grid, margin_points=4)
        with pytest.raises(OutOfDomainError):
            validate_coords_in_extent([[2.0, 8.0, 8.0]], grid, margin_points=4,
                                      what="receiver")
