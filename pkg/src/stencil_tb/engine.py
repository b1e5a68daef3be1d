"""Run orchestration: wiring kernels, sparse operators, and schedules.

A run executes the command stream of its plan. Tasks within a block set may
run on worker threads (they write disjoint regions); receiver gathers return
partial sums that the coordinator reduces in fixed task order at each
barrier, so results are bit-identical across thread counts.
"""

from __future__ import annotations

import hashlib
import math
import os
import platform
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import precompute as pc
from . import sparse
from .errors import ConfigError, InvalidPlanError, StabilityError
from .grid import GridSpec, fd_weights, staggered_fd_weights
from .physics import (
    AcousticModel,
    ElasticModel,
    acoustic_update,
    build_damping,
    elastic_update_tau,
    elastic_update_v,
    ricker,
)
from .schedule import (
    DependenceSpec,
    acoustic_deps,
    elastic_deps,
    enumerate_updates,
    make_wavefront_plan,
    naive_plan,
    space_plan,
    validate_schedule,
)

NAN_GUARD_STRIDE = 32
SNAPSHOT_MAGIC = b"STBSNAP\x00"
SNAPSHOT_HEADER = struct.Struct("<8sIiiiI")  # magic, bits, shape triple, time index
SNAPSHOT_HEADER_SIZE = 32


@dataclass
class ScheduleSpec:
    """Declarative schedule selection for a run."""

    kind: str = "naive"  # naive | space | wavefront
    block_shape: tuple[int, int] | None = None
    tile_shape: tuple[int, int] | None = None
    time_height: int = 1
    force_skew: tuple[int, int] | None = None  # debug: override derived skew


@dataclass
class SourceSpec:
    """Source geometry plus wavelet parameters; the wavelet series is
    realized once dt and nt are known."""

    coords: np.ndarray
    f0: float = 10.0
    t0: float | None = None  # seconds; defaults to 1/f0
    amplitude: float = 1.0
    wavelets: np.ndarray | None = None  # (nt, nsrc) override

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))

    @property
    def nsrc(self) -> int:
        return self.coords.shape[0]


@dataclass
class RunConfig:
    """Declarative experiment description."""

    physics: str
    grid: GridSpec
    space_order: int
    schedule: ScheduleSpec = dc_field(default_factory=ScheduleSpec)
    medium: dict = dc_field(default_factory=dict)
    nt: int | None = None
    time_ms: float | None = None
    dt: float | None = None  # seconds; overrides the CFL-derived step
    cfl_safety: float = 0.9
    sources: SourceSpec | None = None
    receiver_coords: np.ndarray | None = None
    precision: int = 32
    threads: int = 1
    damping_decay: float | None = None  # 1/s; None derives from v_max
    validate: bool = False

    def __post_init__(self):
        if self.physics not in ("acoustic", "elastic"):
            raise ConfigError("physics", f"must be acoustic or elastic, got {self.physics!r}")
        if self.space_order % 2 != 0 or not 2 <= self.space_order <= 16:
            raise ConfigError("space_order", f"must be even in [2, 16], got {self.space_order}")
        if self.precision not in (32, 64):
            raise ConfigError("precision", f"must be 32 or 64, got {self.precision}")
        if self.threads < 1:
            raise ConfigError("threads", f"must be >= 1, got {self.threads}")
        if self.nt is None and self.time_ms is None:
            raise ConfigError("nt", "either nt or time_ms is required")
        if self.nt is not None and self.nt < 0:
            raise ConfigError("nt", f"must be >= 0, got {self.nt}")
        if self.receiver_coords is not None:
            self.receiver_coords = np.atleast_2d(
                np.asarray(self.receiver_coords, dtype=np.float64))

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


@dataclass
class RunReport:
    """Measured results and the parameters that produced them."""

    physics: str
    grid_shape: tuple[int, int, int]
    space_order: int
    precision: int
    threads: int
    schedule: dict
    nt: int
    dt: float
    elapsed_s: float
    precompute_s: float
    gpoints_per_s: float
    arithmetic_intensity: float
    max_abs: float
    checksum: str
    nsrc: int
    nrec: int
    source_scale_rule: str
    machine: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["grid_shape"] = list(self.grid_shape)
        return out


@dataclass
class RunResult:
    fields: dict[str, np.ndarray]
    receivers: np.ndarray | None
    report: RunReport


def medium_velocity_bounds(physics: str, medium: dict) -> float:
    """Maximum propagation velocity of the medium (CFL input)."""
    if physics == "acoustic":
        if "velocity" not in medium:
            raise ConfigError("medium.velocity", "acoustic runs need a velocity")
        return float(np.max(medium["velocity"]))
    for key in ("vp", "vs", "rho"):
        if key not in medium:
            raise ConfigError(f"medium.{key}", "elastic runs need vp, vs, rho")
    return float(np.max(medium["vp"]))


def stable_dt(physics: str, grid: GridSpec, v_max: float, space_order: int,
              safety: float = 0.9) -> float:
    """Order-aware CFL bound.

    Acoustic leapfrog: dt <= 2 / (v * sqrt(sum_axes g_max / h^2)) with g_max
    the peak of the per-axis second-derivative symbol (its value at the
    Nyquist mode). At space order 2 this reduces to safety*h/(v*sqrt(ndim)),
    the bound cfl_dt implements; higher orders have a larger spectral radius
    and need a shorter step.

    Elastic (first-order staggered): dt <= h / (v * sqrt(ndim) * sum_j |c_j|).
    """
    if v_max <= 0.0:
        raise ValueError(f"v_max must be > 0, got {v_max}")
    axes = grid.active_axes or (0,)
    if physics == "acoustic":
        w = fd_weights(space_order).weights
        signs = np.cos(np.pi * np.arange(len(w)))  # (-1)^r
        g_max = -(w[0] + 2.0 * float(np.sum(w[1:] * signs[1:])))
        lam = sum(g_max / grid.spacing[a] ** 2 for a in axes)
        return safety * 2.0 / (v_max * math.sqrt(lam))
    csum = float(np.sum(np.abs(staggered_fd_weights(space_order))))
    h_min = min(grid.spacing[a] for a in axes)
    return safety * h_min / (v_max * math.sqrt(len(axes)) * csum)


def resolve_steps(config: RunConfig) -> tuple[float, int]:
    """Time step (s) and step count implied by a config."""
    v_max = medium_velocity_bounds(config.physics, config.medium)
    dt = (config.dt if config.dt is not None
          else stable_dt(config.physics, config.grid, v_max,
                         config.space_order, config.cfl_safety))
    if config.nt is not None:
        nt = config.nt
    else:
        nt = math.ceil(config.time_ms / 1000.0 / dt)
    return dt, nt


def default_damping_decay(grid: GridSpec, v_max: float) -> float:
    """Sponge decay constant balancing absorption against interface
    reflection (stronger sponges reflect more than they absorb)."""
    layers = grid.boundary_layers
    if layers == 0:
        return 0.0
    h_min = min(grid.spacing[a] for a in grid.active_axes)
    return 1.5 * v_max / (layers * h_min)


def arithmetic_intensity(physics: str, space_order: int, precision: int) -> float:
    """Analytic flops-per-byte estimate from stencil operation counts (not a
    measured value)."""
    r = space_order // 2
    itemsize = 4 if precision == 32 else 8
    if physics == "acoustic":
        flops = 3 * (3 * r + 1) + 8
        streams = 5  # u[t-1] neighborhood (amortized), u[t-2], m, damp, write
    else:
        flops = 18 * (3 * r - 1) + 45
        streams = 22  # 9 fields read+write, materials, damp
    return flops / (streams * itemsize)


def _build_models(config: RunConfig, dt: float):
    grid = config.grid
    v_max = medium_velocity_bounds(config.physics, config.medium)
    decay = (config.damping_decay if config.damping_decay is not None
             else default_damping_decay(grid, v_max))
    damp = build_damping(grid, decay) if grid.boundary_layers > 0 else None
    if config.physics == "acoustic":
        vel = config.medium["velocity"]
        m = (1.0 / np.asarray(vel, dtype=np.float64) ** 2
             if np.ndim(vel) else 1.0 / float(vel) ** 2)
        return AcousticModel(grid, config.space_order, m, dt, damp=damp,
                             dtype=config.dtype), v_max
    vp = np.asarray(config.medium["vp"], dtype=np.float64)
    vs = np.asarray(config.medium["vs"], dtype=np.float64)
    rho = np.asarray(config.medium["rho"], dtype=np.float64)
    mu = rho * vs**2
    lam = rho * vp**2 - 2.0 * mu
    if lam.ndim == 0:
        lam, mu, rho = float(lam), float(mu), float(rho)
    return ElasticModel(grid, config.space_order, lam, mu, rho, dt, damp=damp,
                        dtype=config.dtype), v_max


def _build_sources(config: RunConfig, dt: float, nt: int, model) -> sparse.SourceSet | None:
    spec = config.sources
    if spec is None or spec.nsrc == 0:
        return None
    sparse.validate_coords_in_extent(spec.coords, config.grid, what="source")
    if spec.wavelets is not None:
        wavelets = np.asarray(spec.wavelets, dtype=np.float64)
        if wavelets.shape != (nt, spec.nsrc):
            raise ConfigError("source.wavelets", f"shape must be ({nt}, {spec.nsrc})")
    elif nt == 0:
        wavelets = np.zeros((0, spec.nsrc))
    else:
        t0 = spec.t0 if spec.t0 is not None else 1.0 / spec.f0
        base = ricker(spec.f0, t0, dt, nt, spec.amplitude).samples
        wavelets = np.repeat(base[:, None], spec.nsrc, axis=1)
    sources = sparse.SourceSet(coords=spec.coords, wavelets=wavelets)
    if config.physics == "acoustic":
        sources.scale = sparse.source_scales(sources, config.grid,
                                             getattr(model, "m"), dt)
    else:
        sources.scale = np.full(sources.nsrc, dt)
    return sources


def _build_receivers(config: RunConfig, nt: int) -> sparse.ReceiverSet | None:
    if config.receiver_coords is None or len(config.receiver_coords) == 0:
        return None
    sparse.validate_coords_in_extent(
        config.receiver_coords, config.grid,
        margin_points=config.grid.boundary_layers, what="receiver")
    receivers = sparse.ReceiverSet(coords=config.receiver_coords)
    receivers.ensure_data(nt)
    return receivers


def build_plan(config: RunConfig, deps: DependenceSpec):
    sched = config.schedule
    if sched.kind == "naive":
        return naive_plan(deps)
    if sched.kind == "space":
        return space_plan(deps, sched.block_shape)
    if sched.kind == "wavefront":
        if sched.tile_shape is None:
            raise ConfigError("schedule.tile_shape", "wavefront runs need a tile shape")
        return make_wavefront_plan(config.grid, deps, sched.time_height,
                                   sched.tile_shape, sched.block_shape,
                                   force_skew=sched.force_skew)
    raise ConfigError("schedule.kind", f"unknown schedule {sched.kind!r}")


class _Executor:
    """Executes block sets; owns the dispatch tables and reduction state."""

    def __init__(self, config: RunConfig, model, sources, receivers,
                 support, dcmp, rsup):
        self.config = config
        self.model = model
        self.coeffs = model.coeffs
        self.sources = sources
        self.receivers = receivers
        self.support = support
        self.dcmp = dcmp
        self.rsup = rsup
        self.physics = config.physics
        if self.physics == "acoustic":
            self._stencil = {"u": lambda t, box: acoustic_update(model, self.coeffs, t, box)}
            self._inject_targets = {"u": [model.u]}
            self._gather_field = model.u
        else:
            self._stencil = {
                "v": lambda t, box: elastic_update_v(model, self.coeffs, t, box),
                "tau": lambda t, box: elastic_update_tau(model, self.coeffs, t, box),
            }
            self._inject_targets = {"tau": [model.tau[n] for n in ("txx", "tyy", "tzz")]}
            self._gather_field = model.tau["txx"]
        self._next_guard = NAN_GUARD_STRIDE

    def _exec_task(self, task):
        partials = []
        for cmd in task:
            if cmd.op == "stencil":
                self._stencil[cmd.field](cmd.t, cmd.box)
            elif cmd.op == "inject":
                for f in self._inject_targets[cmd.field]:
                    pc.scatter_box(f, cmd.t, self.support, self.dcmp, cmd.box)
            elif cmd.op == "gather":
                partial = pc.gather_box(self._gather_field, cmd.t, self.rsup, cmd.box)
                if partial is not None:
                    partials.append((cmd.t, partial))
            elif cmd.op == "inject_direct":
                for f in self._inject_targets[cmd.field]:
                    sparse.inject_direct(f, self.sources, cmd.t)
            elif cmd.op == "record":
                sparse.record_receivers(self._gather_field, self.receivers, cmd.t)
        return partials

    def _nan_guard(self, t: int):
        for group in self.model.group_names:
            for f in self.model.group_fields(group):
                if not np.all(np.isfinite(f.level(t))):
                    raise StabilityError(
                        f"non-finite values in field group {group!r} at step {t}"
                    )

    def run_stream(self, stream, pool: ThreadPoolExecutor | None):
        data = self.receivers.data if self.receivers is not None else None
        for block_set in stream:
            if pool is not None and len(block_set) > 1:
                results = list(pool.map(self._exec_task, block_set))
            else:
                results = [self._exec_task(task) for task in block_set]
            if data is not None:
                for partials in results:  # fixed task order: deterministic
                    for t, partial in partials:
                        pc.apply_gather(data[t], partial)
            t_here = block_set[0][0].t
            if t_here >= self._next_guard:
                self._nan_guard(t_here)
                self._next_guard += NAN_GUARD_STRIDE


def run(config: RunConfig) -> RunResult:
    """Execute a configured run; returns final fields, receiver data, and the
    measured report."""
    dt, nt = resolve_steps(config)
    model, v_max = _build_models(config, dt)
    sources = _build_sources(config, dt, nt, model)
    receivers = _build_receivers(config, nt)
    radius = config.space_order // 2
    deps = (acoustic_deps(radius, config.grid) if config.physics == "acoustic"
            else elastic_deps(radius, config.grid))
    if config.physics == "acoustic":
        deps.inject_fields, deps.gather_field = ("u",), "u"
    else:
        deps.inject_fields, deps.gather_field = ("tau",), "tau"

    support = dcmp = rsup = None
    t_pre0 = time.perf_counter()
    if sources is not None:
        if config.schedule.kind == "naive":
            deps.inject_points = np.array(
                sorted(pc.find_support(sources, config.grid, "geometric")),
                dtype=np.int64).reshape(-1, 3)
        else:
            support = pc.compress(pc.build_masks(
                pc.find_support(sources, config.grid, "geometric"), config.grid))
            dcmp = pc.decompose_wavefields(sources, support, nt)
            deps.inject_points = support.points
    if receivers is not None:
        if config.schedule.kind == "naive":
            idx, wts = receivers.stencils(config.grid)
            pts = idx.reshape(-1, 3)[wts.ravel() > 0.0]
            deps.gather_points = pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]
        else:
            rsup = pc.precompute_receivers(receivers, config.grid)
            deps.gather_points = rsup.entry_points
    precompute_s = time.perf_counter() - t_pre0

    plan = build_plan(config, deps)
    if config.validate:
        violations = validate_schedule(
            enumerate_updates(plan, config.grid, nt), deps, config.grid)
        if violations:
            raise InvalidPlanError(
                f"schedule validation found {len(violations)} violation(s); "
                f"first: {violations[0]}"
            )

    executor = _Executor(config, model, sources, receivers, support, dcmp, rsup)
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    t0 = time.perf_counter()
    try:
        executor.run_stream(enumerate_updates(plan, config.grid, nt), pool)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    elapsed = time.perf_counter() - t0

    t_final = nt - 1
    fields = {}
    for group in model.group_names:
        names = (["u"] if config.physics == "acoustic"
                 else (list(model.v_names) if group == "v" else list(model.tau_names)))
        for name, f in zip(names, model.group_fields(group)):
            fields[name] = f.interior(t_final).copy() if nt > 0 else f.interior(0).copy()
    rec_data = receivers.data.copy() if receivers is not None else None

    fields_updated = 1 if config.physics == "acoustic" else 9
    gpoints = (config.grid.npoints * nt * fields_updated / elapsed / 1e9
               if nt > 0 and elapsed > 0 else 0.0)
    max_abs = max((float(np.max(np.abs(a))) for a in fields.values()), default=0.0)

    digest = hashlib.sha256()
    for name in sorted(fields):
        digest.update(name.encode())
        digest.update(fields[name].tobytes())
    if rec_data is not None:
        digest.update(rec_data.tobytes())

    sched = config.schedule
    report = RunReport(
        physics=config.physics,
        grid_shape=config.grid.shape,
        space_order=config.space_order,
        precision=config.precision,
        threads=config.threads,
        schedule={
            "kind": sched.kind,
            "block_shape": sched.block_shape,
            "tile_shape": sched.tile_shape,
            "time_height": sched.time_height,
        },
        nt=nt,
        dt=dt,
        elapsed_s=elapsed,
        precompute_s=precompute_s,
        gpoints_per_s=gpoints,
        arithmetic_intensity=arithmetic_intensity(
            config.physics, config.space_order, config.precision),
        max_abs=max_abs,
        checksum=digest.hexdigest(),
        nsrc=sources.nsrc if sources is not None else 0,
        nrec=receivers.nrec if receivers is not None else 0,
        source_scale_rule=("dt^2/m at nearest grid point"
                           if config.physics == "acoustic" else "dt"),
        machine={
            "platform": platform.platform(),
            "processor": platform.processor() or platform.machine(),
            "cpus": os.cpu_count(),
        },
    )
    return RunResult(fields=fields, receivers=rec_data, report=report)


@dataclass
class CompareReport:
    """Relative L-inf/L2 differences between two runs."""

    field_linf: dict[str, float]
    field_l2: dict[str, float]
    receiver_linf: float | None
    receiver_l2: float | None

    @property
    def max_rel_linf(self) -> float:
        vals = list(self.field_linf.values())
        if self.receiver_linf is not None:
            vals.append(self.receiver_linf)
        return max(vals, default=0.0)

    def within(self, tolerance: float) -> bool:
        return self.max_rel_linf <= tolerance

    def lines(self):
        for name in sorted(self.field_linf):
            yield (f"{name}: rel_linf={self.field_linf[name]:.3e} "
                   f"rel_l2={self.field_l2[name]:.3e}")
        if self.receiver_linf is not None:
            yield (f"receivers: rel_linf={self.receiver_linf:.3e} "
                   f"rel_l2={self.receiver_l2:.3e}")


def _rel_diffs(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    if a64.size == 0:
        return 0.0, 0.0
    scale = max(float(np.max(np.abs(a64))), float(np.max(np.abs(b64))))
    if scale == 0.0:
        return 0.0, 0.0
    linf = float(np.max(np.abs(a64 - b64))) / scale
    na, nb = np.linalg.norm(a64.ravel()), np.linalg.norm(b64.ravel())
    l2 = float(np.linalg.norm((a64 - b64).ravel())) / max(na, nb)
    return linf, l2


def compare_runs(a: RunResult, b: RunResult) -> CompareReport:
    """Symmetric relative differences over final fields and receiver data."""
    if set(a.fields) != set(b.fields):
        raise ValueError(
            f"field sets differ: {sorted(a.fields)} vs {sorted(b.fields)}")
    field_linf, field_l2 = {}, {}
    for name in a.fields:
        linf, l2 = _rel_diffs(a.fields[name], b.fields[name])
        field_linf[name], field_l2[name] = linf, l2
    rec_linf = rec_l2 = None
    if (a.receivers is None) != (b.receivers is None):
        raise ValueError("one run has receiver data, the other does not")
    if a.receivers is not None:
        rec_linf, rec_l2 = _rel_diffs(a.receivers, b.receivers)
    return CompareReport(field_linf, field_l2, rec_linf, rec_l2)


def save_snapshot(path, array: np.ndarray, time_index: int) -> None:
    """Raw little-endian dump with a 32-byte header for cross-run diffing."""
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float32:
        bits = 32
    elif arr.dtype == np.float64:
        bits = 64
    else:
        raise ValueError(f"snapshots hold float32/float64, got {arr.dtype}")
    header = SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, bits, *arr.shape, time_index)
    header += b"\x00" * (SNAPSHOT_HEADER_SIZE - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_snapshot(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        raw = fh.read(SNAPSHOT_HEADER_SIZE)
        magic, bits, nx, ny, nz, t = SNAPSHOT_HEADER.unpack(raw[:SNAPSHOT_HEADER.size])
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path} is not a snapshot file")
        dtype = np.dtype("<f4") if bits == 32 else np.dtype("<f8")
        data = np.frombuffer(fh.read(), dtype=dtype).reshape(nx, ny, nz)
    return data.copy(), t
