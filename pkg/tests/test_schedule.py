import numpy as np
import pytest

from stencil_tb import GridSpec
from stencil_tb.errors import InvalidPlanError
from stencil_tb.schedule import (
    Cmd,
    acoustic_deps,
    describe_plan,
    elastic_deps,
    enumerate_updates,
    make_wavefront_plan,
    naive_plan,
    space_plan,
    validate_schedule,
)


def grid3(nx=16, ny=16, nz=8):
    return GridSpec((nx, ny, nz), (1.0, 1.0, 1.0))


def replay_counts(stream, deps, grid, nt):
    """Per-(field, t, point) stencil-update counters."""
    counts = {f: np.zeros((nt,) + grid.shape, dtype=np.int32)
              for f in deps.fields}
    for block_set in stream:
        for task in block_set:
            for cmd in task:
                if cmd.op != "stencil":
                    continue
                sl = tuple(slice(lo, hi) for lo, hi in cmd.box)
                counts[cmd.field][(cmd.t,) + sl] += 1
    return counts


class TestPlanConstruction:
    def test_acoustic_skew_is_radius(self):
        grid = grid3()
        plan = make_wavefront_plan(grid, acoustic_deps(2, grid), 2, (12, 12))
        assert plan.skew == (2, 2)
        assert plan.offsets["u"] == (0, 0)

    def test_elastic_skew_is_sum_of_radii(self):
        grid = grid3(32, 32, 8)
        plan = make_wavefront_plan(grid, elastic_deps(2, grid), 2, (24, 24))
        assert plan.skew == (4, 4)
        assert plan.offsets["v"] == (0, 0)
        assert plan.offsets["tau"] == (2, 2)

    def test_total_tile_shift(self):
        # radius 2, T=4: the footprint travels skew*T = 8 points per axis
        grid = grid3(64, 64, 8)
        plan = make_wavefront_plan(grid, acoustic_deps(2, grid), 4, (24, 24))
        assert plan.skew[0] * plan.time_height == 8

    def test_tile_too_small(self):
        grid = grid3(64, 64, 8)
        with pytest.raises(InvalidPlanError):
            make_wavefront_plan(grid, acoustic_deps(2, grid), 4, (8, 24))

    def test_time_height_one_degenerates(self):
        grid = grid3()
        plan = make_wavefront_plan(grid, acoustic_deps(2, grid), 1, (12, 12))
        counts_wf = replay_counts(
            enumerate_updates(plan, grid, 3), plan.deps, grid, 3)
        counts_naive = replay_counts(
            enumerate_updates(naive_plan(plan.deps), grid, 3), plan.deps, grid, 3)
        np.testing.assert_array_equal(counts_wf["u"], counts_naive["u"])

    def test_bad_args(self):
        grid = grid3()
        deps = acoustic_deps(2, grid)
        with pytest.raises(InvalidPlanError):
            make_wavefront_plan(grid, deps, 0, (12, 12))
        with pytest.raises(InvalidPlanError):
            make_wavefront_plan(grid, deps, 2, (0, 12))

    def test_describe_plan(self):
        grid = grid3()
        plan = make_wavefront_plan(grid, acoustic_deps(2, grid), 2, (12, 12))
        text = describe_plan(plan)
        assert "skew: (2, 2)" in text
        assert "wavefront" in text


class TestEnumerate:
    def test_naive_update_count(self):
        grid = GridSpec((2, 2, 2), (1.0, 1.0, 1.0))
        deps = acoustic_deps(1, grid)
        stream = list(enumerate_updates(naive_plan(deps), grid, 2))
        total = 0
        ts = []
        for block_set in stream:
            for task in block_set:
                for cmd in task:
                    assert cmd.op == "stencil"
                    ts.append(cmd.t)
                    total += np.prod([hi - lo for lo, hi in cmd.box])
        assert total == 16  # nt * interior volume
        assert ts == sorted(ts)  # time-major order

    @pytest.mark.parametrize("plan_kind", ["naive", "space", "wavefront"])
    @pytest.mark.parametrize("physics", ["acoustic", "elastic"])
    def test_bijection_onto_naive_multiset(self, plan_kind, physics):
        grid = grid3(20, 14, 6)
        nt = 5
        deps = (acoustic_deps(2, grid) if physics == "acoustic"
                else elastic_deps(2, grid))
        if plan_kind == "naive":
            plan = naive_plan(deps)
        elif plan_kind == "space":
            plan = space_plan(deps, (7, 5))
        else:
            plan = make_wavefront_plan(grid, deps, 2, (12, 10), (6, 5))
        counts = replay_counts(enumerate_updates(plan, grid, nt), deps, grid, nt)
        for f in deps.fields:
            assert np.all(counts[f] == 1), f"field {f} not updated exactly once"

    def test_block_sets_write_disjoint_regions(self):
        grid = grid3(24, 24, 8)
        deps = elastic_deps(2, grid)
        plan = make_wavefront_plan(grid, deps, 3, (18, 18), (6, 6))
        for block_set in enumerate_updates(plan, grid, 7):
            seen = {}
            for task in block_set:
                for cmd in task:
                    if cmd.op != "stencil":
                        continue
                    mask = seen.setdefault(cmd.field, np.zeros(grid.shape, bool))
                    sl = tuple(slice(lo, hi) for lo, hi in cmd.box)
                    assert not mask[sl].any()
                    mask[sl] = True

    def test_wavefront_tiles_sequential_in_skew_direction(self):
        grid = grid3(32, 8, 4)
        deps = acoustic_deps(1, grid)
        plan = make_wavefront_plan(grid, deps, 2, (8, 8))
        first_seen = []
        for block_set in enumerate_updates(plan, grid, 2):
            for task in block_set:
                for cmd in task:
                    if cmd.op == "stencil" and cmd.t == 0:
                        first_seen.append(cmd.box[0][0])
        assert first_seen == sorted(first_seen)


class TestValidate:
    def test_naive_clean(self):
        grid = grid3()
        deps = acoustic_deps(2, grid)
        stream = enumerate_updates(naive_plan(deps), grid, 4)
        assert validate_schedule(stream, deps, grid) == []

    def test_wavefront_clean(self):
        grid = grid3(16, 16, 8)
        deps = acoustic_deps(1, grid)
        plan = make_wavefront_plan(grid, deps, 2, (8, 8))
        stream = enumerate_updates(plan, grid, 6)
        assert validate_schedule(stream, deps, grid) == []

    def test_under_skewed_violates(self):
        grid = grid3(24, 24, 4)
        deps = acoustic_deps(2, grid)
        plan = make_wavefront_plan(grid, deps, 2, (10, 10), force_skew=(1, 1))
        stream = enumerate_updates(plan, grid, 4)
        violations = validate_schedule(stream, deps, grid)
        assert violations
        assert all(v.kind == "read-before-write" for v in violations)

    def test_injection_before_stencil_detected(self):
        grid = grid3(8, 8, 4)
        deps = acoustic_deps(1, grid)
        deps.inject_fields = ("u",)
        deps.inject_points = np.array([[2, 2, 2]])
        full = grid.full_box()
        stream = [
            [(Cmd("inject", "u", 0, full), Cmd("stencil", "u", 0, full))],
        ]
        violations = validate_schedule(stream, deps, grid)
        assert len(violations) == 1
        assert violations[0].kind == "inject-before-stencil"
        # correct order inside one task passes
        stream = [
            [(Cmd("stencil", "u", 0, full), Cmd("inject", "u", 0, full))],
        ]
        assert validate_schedule(stream, deps, grid) == []

    def test_gather_needs_updated_points(self):
        grid = grid3(8, 8, 4)
        deps = acoustic_deps(1, grid)
        deps.gather_field = "u"
        deps.gather_points = np.array([[1, 1, 1]])
        full = grid.full_box()
        stream = [[(Cmd("record", "u", 0, full),)]]
        violations = validate_schedule(stream, deps, grid)
        assert len(violations) == 1

    def test_elastic_wavefront_clean_and_mutation(self):
        grid = grid3(40, 40, 6)
        deps = elastic_deps(2, grid)
        plan = make_wavefront_plan(grid, deps, 2, (16, 16))
        assert validate_schedule(
            enumerate_updates(plan, grid, 4), deps, grid) == []
        bad = make_wavefront_plan(grid, deps, 2, (16, 16),
                                  force_skew=(plan.skew[0] - 1, plan.skew[1] - 1))
        assert validate_schedule(
            enumerate_updates(bad, grid, 4), deps, grid)


class TestRandomizedLegality:
    def test_random_plans_validate_clean(self, rng):
        for _ in range(60):
            radius = int(rng.choice([1, 2, 4]))
            tt = int(rng.integers(1, 6))
            nx = int(rng.integers(12, 36))
            ny = int(rng.integers(12, 36))
            nz = int(rng.integers(4, 10))
            grid = GridSpec((nx, ny, nz), (1.0, 1.0, 1.0))
            deps = (acoustic_deps(radius, grid) if rng.random() < 0.5
                    else elastic_deps(radius, grid))
            skew = 2 * radius if "tau" in deps.deps else radius
            tile = (
                int(rng.integers(skew * tt + 1, skew * tt + 12)),
                int(rng.integers(skew * tt + 1, skew * tt + 12)),
            )
            bs = (int(rng.integers(2, tile[0] + 1)), int(rng.integers(2, tile[1] + 1)))
            plan = make_wavefront_plan(grid, deps, tt, tile, bs)
            nt = int(rng.integers(tt, 2 * tt + 1))
            assert validate_schedule(
                enumerate_updates(plan, grid, nt), deps, grid) == [], (
                f"radius={radius} T={tt} tile={tile} grid={grid.shape}")

    def test_mutation_killed(self, rng):
        killed = 0
        trials = 0
        for _ in range(25):
            radius = int(rng.choice([1, 2, 4]))
            tt = int(rng.integers(2, 6))
            skew = radius
            tile_x = int(rng.integers(skew * tt + 1, skew * tt + 8))
            tile_y = skew * tt + 4
            nx = int(2 * tile_x + rng.integers(0, 8))  # at least two tiles
            grid = GridSpec((nx, tile_y, 6), (1.0, 1.0, 1.0))
            deps = acoustic_deps(radius, grid)
            plan = make_wavefront_plan(grid, deps, tt, (tile_x, tile_y))
            mutated = make_wavefront_plan(
                grid, deps, tt, (tile_x, tile_y),
                force_skew=(plan.skew[0] - 1, plan.skew[1]))
            trials += 1
            if validate_schedule(
                    enumerate_updates(mutated, grid, 2 * tt), deps, grid):
                killed += 1
        assert killed == trials
