import numpy as np
import pytest

from stencil_tb import GridSpec
from stencil_tb.engine import RunConfig, ScheduleSpec, SourceSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def small_grid(n=16, h=10.0, layers=0):
    return GridSpec((n, n, n), (h, h, h), boundary_layers=layers)


def random_coords(rng, grid, count, on_grid_fraction=0.0, margin=1):
    """Random physical coordinates in the interior; a fraction snaps exactly
    onto grid points to exercise degenerate stencils."""
    lo = np.array([grid.origin[a] + margin * grid.spacing[a] for a in range(3)])
    hi = np.array([
        grid.origin[a] + (grid.shape[a] - 1 - margin) * grid.spacing[a]
        for a in range(3)
    ])
    coords = rng.uniform(lo, hi, size=(count, 3))
    n_snap = int(count * on_grid_fraction)
    for i in range(n_snap):
        idx = np.rint((coords[i] - grid.origin) / grid.spacing)
        coords[i] = np.asarray(grid.origin) + idx * np.asarray(grid.spacing)
    return coords


def acoustic_config(grid, nt, space_order=4, schedule=None, sources=None,
                    receivers=None, precision=32, threads=1, velocity=2500.0,
                    **kw):
    return RunConfig(
        physics="acoustic",
        grid=grid,
        space_order=space_order,
        nt=nt,
        schedule=schedule or ScheduleSpec(),
        medium={"velocity": velocity},
        sources=sources,
        receiver_coords=receivers,
        precision=precision,
        threads=threads,
        **kw,
    )


def elastic_config(grid, nt, space_order=4, schedule=None, sources=None,
                   receivers=None, precision=32, threads=1, **kw):
    return RunConfig(
        physics="elastic",
        grid=grid,
        space_order=space_order,
        nt=nt,
        schedule=schedule or ScheduleSpec(),
        medium={"vp": 3000.0, "vs": 1800.0, "rho": 2200.0},
        sources=sources,
        receiver_coords=receivers,
        precision=precision,
        threads=threads,
        **kw,
    )


def centered_source(grid, f0=12.0, count=1):
    center = [grid.origin[a] + ((grid.shape[a] - 1) // 2) * grid.spacing[a]
              for a in range(3)]
    return SourceSpec(coords=[center] * count, f0=f0)
