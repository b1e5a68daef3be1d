"""Execution plans and their legality validation.

Three schedules produce the same per-(field, t, point) update multiset:

  naive      time-outermost full sweeps; sparse operators run directly after
             each sweep.
  space      each sweep is partitioned into (x, y) blocks; fused injection
             and receiver gathering run per block right after its stencil
             update (the z loops stay full).
  wavefront  skewed temporal blocking over x and y. Time is cut into tiles
             of height T; within a time tile, space tiles execute
             sequentially and run all T steps over a footprint that shifts
             by ``skew`` points per step, so every value a step needs was
             produced either earlier in the same tile or by an already
             finished tile. z is never tiled in time.

For multi-field systems updated in a fixed order within a step, each later
field's footprint is additionally shifted by the cumulative radius of its
same-step dependencies, and the per-step skew grows to cover the
cross-field radii (the staggered-grid shift).

The validator replays a command stream against per-point last-written-time
state and reports every read of a value that does not exist yet, plus every
fused injection applied before its point's stencil update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import InvalidPlanError
from .grid import Box, GridSpec

TILED_AXES = (0, 1)  # z stays the full-sweep inner loop


@dataclass(frozen=True)
class Dep:
    """One read dependency: ``field`` at time offset ``dt`` (<= 0) within
    ``radius`` points per axis."""

    field: str
    dt: int
    radius: tuple[int, int, int]


@dataclass
class DependenceSpec:
    """Update structure of one physics system.

    ``groups`` lists the per-step update order; fields inside one group are
    mutually independent at the same step. ``inject_points``/``gather_points``
    carry the sparse-operator footprints used by the validator's intra-step
    ordering checks.
    """

    groups: list[list[str]]
    deps: dict[str, list[Dep]]
    inject_fields: tuple[str, ...] = ()
    gather_field: str | None = None
    inject_points: np.ndarray | None = None
    gather_points: np.ndarray | None = None

    @property
    def fields(self) -> list[str]:
        return [f for group in self.groups for f in group]


def acoustic_deps(radius: int, grid: GridSpec) -> DependenceSpec:
    r = tuple(radius if grid.shape[a] > 1 else 0 for a in range(3))
    zero = (0, 0, 0)
    return DependenceSpec(
        groups=[["u"]],
        deps={"u": [Dep("u", -1, r), Dep("u", -2, zero)]},
    )


def elastic_deps(radius: int, grid: GridSpec) -> DependenceSpec:
    r = tuple(radius if grid.shape[a] > 1 else 0 for a in range(3))
    zero = (0, 0, 0)
    return DependenceSpec(
        groups=[["v"], ["tau"]],
        deps={
            "v": [Dep("tau", -1, r), Dep("v", -1, zero)],
            "tau": [Dep("v", 0, r), Dep("tau", -1, zero)],
        },
    )


@dataclass(frozen=True)
class Cmd:
    """One box-level command of the execution stream."""

    op: str  # stencil | inject | gather | inject_direct | record
    field: str
    t: int
    box: Box

    def __repr__(self):
        return f"Cmd({self.op} {self.field} t={self.t} box={self.box})"


Task = tuple  # tuple[Cmd, ...]: ordered within, parallel across tasks of a set


@dataclass
class SpacePlan:
    """Time-outermost plan; ``kind`` selects direct vs fused sparse ops."""

    deps: DependenceSpec
    kind: str = "naive"  # naive | space
    block_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("naive", "space"):
            raise InvalidPlanError(f"unknown space plan kind {self.kind!r}")
        if self.block_shape is not None:
            bx, by = self.block_shape
            if bx < 1 or by < 1:
                raise InvalidPlanError(f"block shape must be >= 1, got {self.block_shape}")


@dataclass
class WavefrontPlan:
    """Skewed temporal blocking over (x, y) with per-field footprint offsets."""

    deps: DependenceSpec
    tile_shape: tuple[int, int]
    time_height: int
    block_shape: tuple[int, int]
    skew: tuple[int, int]
    offsets: dict[str, tuple[int, int]]
    kind: str = "wavefront"


def _per_axis_offsets(deps: DependenceSpec) -> tuple[dict[str, tuple[int, int]], tuple[int, int]]:
    """Cumulative same-step offsets per field and the per-step skew.

    offset[f] >= offset[g] + radius for every same-step read f <- g;
    skew >= ceil((radius + offset[g] - offset[f]) / |dt|) for reads of
    earlier steps.
    """
    offsets: dict[str, list[int]] = {}
    for group in deps.groups:
        for f in group:
            off = [0, 0]
            for dep in deps.deps.get(f, []):
                if dep.dt == 0:
                    if dep.field not in offsets:
                        raise InvalidPlanError(
                            f"{f} reads {dep.field} at the same step but "
                            f"{dep.field} is not updated earlier in the step"
                        )
                    for ax in TILED_AXES:
                        off[ax] = max(off[ax], offsets[dep.field][ax] + dep.radius[ax])
            offsets[f] = off
    skew = [0, 0]
    for f, dlist in deps.deps.items():
        for dep in dlist:
            if dep.dt >= 0:
                continue
            for ax in TILED_AXES:
                need = dep.radius[ax] + offsets[dep.field][ax] - offsets[f][ax]
                skew[ax] = max(skew[ax], math.ceil(need / -dep.dt))
    return ({f: tuple(o) for f, o in offsets.items()}, tuple(skew))


def make_wavefront_plan(grid: GridSpec, deps: DependenceSpec, time_height: int,
                        tile_shape: tuple[int, int],
                        block_shape: tuple[int, int] | None = None,
                        force_skew: tuple[int, int] | None = None) -> WavefrontPlan:
    """Construct a wavefront plan, deriving skew and per-field offsets from
    the dependence structure.

    ``force_skew`` overrides the derived skew for mutation testing and the
    CLI's deliberately-illegal debug mode; it does not bypass shape checks.
    """
    if time_height < 1:
        raise InvalidPlanError(f"time_height must be >= 1, got {time_height}")
    tile_shape = (int(tile_shape[0]), int(tile_shape[1]))
    if any(s < 1 for s in tile_shape):
        raise InvalidPlanError(f"tile shape must be >= 1, got {tile_shape}")
    offsets, skew = _per_axis_offsets(deps)
    if force_skew is not None:
        skew = (int(force_skew[0]), int(force_skew[1]))
    for ax in TILED_AXES:
        if grid.shape[ax] > 1 and tile_shape[ax] <= skew[ax] * time_height:
            raise InvalidPlanError(
                f"tile extent {tile_shape[ax]} on axis {ax} must exceed "
                f"skew*time_height = {skew[ax] * time_height}"
            )
    if block_shape is None:
        block_shape = tile_shape
    block_shape = (int(block_shape[0]), int(block_shape[1]))
    if any(s < 1 for s in block_shape):
        raise InvalidPlanError(f"block shape must be >= 1, got {block_shape}")
    return WavefrontPlan(
        deps=deps,
        tile_shape=tile_shape,
        time_height=int(time_height),
        block_shape=block_shape,
        skew=skew,
        offsets=offsets,
    )


def naive_plan(deps: DependenceSpec) -> SpacePlan:
    return SpacePlan(deps=deps, kind="naive")


def space_plan(deps: DependenceSpec, block_shape: tuple[int, int] | None = None) -> SpacePlan:
    return SpacePlan(deps=deps, kind="space", block_shape=block_shape)


def _blocks(box: Box, block_shape: tuple[int, int] | None):
    """Partition a box into (x, y) blocks, z kept whole."""
    if block_shape is None:
        yield box
        return
    (x0, x1), (y0, y1), zr = box
    bx, by = block_shape
    for xa in range(x0, x1, bx):
        for ya in range(y0, y1, by):
            yield ((xa, min(xa + bx, x1)), (ya, min(ya + by, y1)), zr)


def _sparse_cmds(f: str, t: int, box: Box, deps: DependenceSpec):
    cmds = []
    if f in deps.inject_fields:
        cmds.append(Cmd("inject", f, t, box))
    if f == deps.gather_field:
        cmds.append(Cmd("gather", f, t, box))
    return cmds


def enumerate_updates(plan, grid: GridSpec, nt: int):
    """Yield block sets (lists of tasks) realizing the plan over nt steps.

    Tasks of one set write disjoint regions and may execute concurrently;
    consecutive sets are separated by a barrier. The multiset of
    (field, t, point) stencil updates equals the naive schedule's exactly.
    """
    if isinstance(plan, SpacePlan):
        yield from _enumerate_space(plan, grid, nt)
    elif isinstance(plan, WavefrontPlan):
        yield from _enumerate_wavefront(plan, grid, nt)
    else:
        raise InvalidPlanError(f"unknown plan type {type(plan).__name__}")


def _enumerate_space(plan: SpacePlan, grid: GridSpec, nt: int):
    deps = plan.deps
    full = grid.full_box()
    for t in range(nt):
        for group in deps.groups:
            if plan.kind == "naive":
                yield [(Cmd("stencil", f, t, full),) for f in group]
            else:
                tasks = []
                for f in group:
                    for bb in _blocks(full, plan.block_shape):
                        tasks.append(tuple([Cmd("stencil", f, t, bb)]
                                           + _sparse_cmds(f, t, bb, deps)))
                yield tasks
        if plan.kind == "naive":
            if deps.inject_fields and deps.inject_points is not None:
                yield [tuple(Cmd("inject_direct", f, t, full)
                             for f in deps.inject_fields)]
            if deps.gather_field is not None and deps.gather_points is not None:
                yield [(Cmd("record", deps.gather_field, t, full),)]


def _enumerate_wavefront(plan: WavefrontPlan, grid: GridSpec, nt: int):
    deps = plan.deps
    nx, ny, nz = grid.shape
    sx, sy = plan.skew
    tx, ty = plan.tile_shape
    off_max = [max(o[ax] for o in plan.offsets.values()) for ax in TILED_AXES]

    for t0 in range(0, nt, plan.time_height):
        tt = min(plan.time_height, nt - t0)
        ntx = max(1, math.ceil((nx + sx * (tt - 1) + off_max[0]) / tx))
        nty = max(1, math.ceil((ny + sy * (tt - 1) + off_max[1]) / ty))
        for ix in range(ntx):
            for iy in range(nty):
                x_tile = ix * tx
                y_tile = iy * ty
                for j in range(tt):
                    t = t0 + j
                    for group in deps.groups:
                        tasks = []
                        for f in group:
                            ox, oy = plan.offsets[f]
                            lo_x = x_tile - sx * j - ox
                            lo_y = y_tile - sy * j - oy
                            fbox = (
                                (max(lo_x, 0), min(lo_x + tx, nx)),
                                (max(lo_y, 0), min(lo_y + ty, ny)),
                                (0, nz),
                            )
                            if fbox[0][0] >= fbox[0][1] or fbox[1][0] >= fbox[1][1]:
                                continue
                            for bb in _blocks(fbox, plan.block_shape):
                                tasks.append(tuple([Cmd("stencil", f, t, bb)]
                                                   + _sparse_cmds(f, t, bb, deps)))
                        if tasks:
                            yield tasks


@dataclass
class Violation:
    """One detected dependence violation."""

    cmd: Cmd
    kind: str            # read-before-write | inject-before-stencil
    read_field: str
    t_required: int
    count: int
    example: tuple[int, int, int]

    def __str__(self):
        return (
            f"{self.kind}: {self.cmd} needs {self.read_field}@t={self.t_required} "
            f"at {self.count} point(s), e.g. {self.example}"
        )


def _points_in_box(pts: np.ndarray, box: Box) -> np.ndarray:
    (x0, x1), (y0, y1), (z0, z1) = box
    return (
        (pts[:, 0] >= x0) & (pts[:, 0] < x1)
        & (pts[:, 1] >= y0) & (pts[:, 1] < y1)
        & (pts[:, 2] >= z0) & (pts[:, 2] < z1)
    )


def validate_schedule(stream, deps: DependenceSpec, grid: GridSpec,
                      max_violations: int = 1000) -> list[Violation]:
    """Replay a command stream and report dependence violations.

    Block sets are validated against the state before the set (tasks are
    parallel), except that commands see the writes of earlier commands in
    their own task. Reads that land in the halo or before t=0 are always
    satisfied.
    """
    shape = grid.shape
    last = {f: np.full(shape, -1, dtype=np.int32) for f in deps.fields}
    violations: list[Violation] = []

    def local_satisfied(pts_sel, f, t_req, local_writes):
        """Mask of selected points satisfied by same-task writes."""
        ok = np.zeros(pts_sel.shape[0], dtype=bool)
        for lf, lbox, lt in local_writes:
            if lf == f and lt >= t_req:
                ok |= _points_in_box(pts_sel, lbox)
        return ok

    def check_points(cmd, pts, f, t_req, kind, local_writes):
        if pts is None or pts.size == 0:
            return
        sel = pts[_points_in_box(pts, cmd.box)]
        if sel.size == 0:
            return
        bad = last[f][sel[:, 0], sel[:, 1], sel[:, 2]] < t_req
        if bad.any() and local_writes:
            bad &= ~local_satisfied(sel, f, t_req, local_writes)
        n = int(bad.sum())
        if n and len(violations) < max_violations:
            ex = tuple(int(v) for v in sel[np.argmax(bad)])
            violations.append(Violation(cmd, kind, f, t_req, n, ex))

    for block_set in stream:
        staged: list[tuple[str, Box, int]] = []
        for task in block_set:
            local_writes: list[tuple[str, Box, int]] = []
            for cmd in task:
                if cmd.op == "stencil":
                    for dep in deps.deps.get(cmd.field, []):
                        t_req = cmd.t + dep.dt
                        if t_req < 0:
                            continue
                        region = tuple(
                            (max(lo - dep.radius[a], 0), min(hi + dep.radius[a], shape[a]))
                            for a, (lo, hi) in enumerate(cmd.box)
                        )
                        sl = tuple(slice(lo, hi) for lo, hi in region)
                        bad = last[dep.field][sl] < t_req
                        if bad.any() and local_writes:
                            pts_bad = np.argwhere(bad) + [r[0] for r in region]
                            ok = local_satisfied(pts_bad, dep.field, t_req, local_writes)
                            n = int((~ok).sum())
                            example = pts_bad[np.argmax(~ok)] if n else None
                        else:
                            n = int(bad.sum())
                            example = (
                                np.argwhere(bad)[0] + [r[0] for r in region]
                                if n else None
                            )
                        if n and len(violations) < max_violations:
                            violations.append(Violation(
                                cmd, "read-before-write", dep.field, t_req,
                                n, tuple(int(v) for v in example),
                            ))
                    local_writes.append((cmd.field, cmd.box, cmd.t))
                    staged.append((cmd.field, cmd.box, cmd.t))
                elif cmd.op in ("inject", "inject_direct"):
                    check_points(cmd, deps.inject_points, cmd.field, cmd.t,
                                 "inject-before-stencil", local_writes)
                elif cmd.op in ("gather", "record"):
                    check_points(cmd, deps.gather_points, cmd.field, cmd.t,
                                 "read-before-write", local_writes)
                else:
                    raise InvalidPlanError(f"unknown command op {cmd.op!r}")
        for f, box, t in staged:
            sl = tuple(slice(lo, hi) for lo, hi in box)
            last[f][sl] = t
    return violations


def describe_plan(plan) -> str:
    """One-line-per-property textual form of a plan, for debugging."""
    lines = [f"kind: {plan.kind}"]
    if isinstance(plan, SpacePlan):
        lines.append(f"block_shape: {plan.block_shape}")
    else:
        lines.append(f"tile_shape: {plan.tile_shape}")
        lines.append(f"time_height: {plan.time_height}")
        lines.append(f"block_shape: {plan.block_shape}")
        lines.append(f"skew: {plan.skew}")
        for f in plan.deps.fields:
            lines.append(f"offset[{f}]: {plan.offsets[f]}")
    lines.append(f"fields: {','.join(plan.deps.fields)}")
    return "\n".join(lines) + "\n"
