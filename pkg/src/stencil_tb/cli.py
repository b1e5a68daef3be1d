"""Command-line front end: run, verify, tune, bench, validate.

Configs are JSON with units spelled out in the field names (spacing_m,
time_ms, f0_hz). CSV outputs use a header row, '.' decimals, and LF line
endings; timing-derived columns are the only ones expected to vary between
identical invocations.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import statistics
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import engine
from .engine import RunConfig, ScheduleSpec, SourceSpec
from .errors import ConfigError, InvalidPlanError, OutOfDomainError
from .grid import GridSpec
from .schedule import (
    describe_plan,
    enumerate_updates,
    make_wavefront_plan,
    validate_schedule,
)

THREADS_ENV = "STENCIL_TB_THREADS"


@dataclass
class SweepSpec:
    """Autotuning candidates; traversal order follows the listed order."""

    tile_shapes: list
    block_shapes: list
    time_heights: list
    repetitions: int = 3
    warmup: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("sweep.repetitions", "must be >= 1")
        if not (self.tile_shapes or self.block_shapes or self.time_heights):
            raise ConfigError("sweep", "candidate sets are all empty")


def _get(doc: dict, key: str, required: bool = False, default=None, where: str = ""):
    name = f"{where}.{key}" if where else key
    if key not in doc:
        if required:
            raise ConfigError(name, "missing required field")
        return default
    return doc[key]


def _pair(value, name) -> tuple[int, int]:
    try:
        x, y = value
        return int(x), int(y)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"expected a pair of integers, got {value!r}") from exc


def generate_source_layout(grid: GridSpec, count: int, mode: str,
                           seed: int) -> np.ndarray:
    """Random source coordinates inside the non-damped interior.

    mode "plane" pins z to the mid-plane (sources spread over an x-y slice);
    mode "volume" distributes uniformly in 3-D.
    """
    if mode not in ("plane", "volume"):
        raise ConfigError("source.layout.mode", f"must be plane or volume, got {mode!r}")
    rng = np.random.default_rng(seed)
    lo = np.empty(3)
    hi = np.empty(3)
    for a in range(3):
        margin = grid.boundary_layers + 1 if grid.shape[a] > 1 else 0
        lo[a] = grid.origin[a] + margin * grid.spacing[a]
        hi[a] = grid.origin[a] + (grid.shape[a] - 1 - margin) * grid.spacing[a]
        if hi[a] < lo[a]:
            raise ConfigError("grid.shape", "too small for the damping layers")
    coords = rng.uniform(lo, hi, size=(count, 3))
    if mode == "plane":
        mid = grid.origin[2] + ((grid.shape[2] - 1) / 2.0) * grid.spacing[2]
        coords[:, 2] = mid
    return coords


def parse_grid(doc: dict) -> GridSpec:
    shape = _get(doc, "shape", required=True, where="grid")
    spacing = _get(doc, "spacing_m", required=True, where="grid")
    origin = _get(doc, "origin_m", default=[0.0, 0.0, 0.0], where="grid")
    layers = _get(doc, "boundary_layers", default=0, where="grid")
    try:
        return GridSpec(tuple(shape), tuple(spacing), tuple(origin), int(layers))
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from exc


def parse_config(doc: dict, seed: int | None = None) -> RunConfig:
    """Translate a JSON document into a RunConfig, naming offending fields."""
    physics = _get(doc, "physics", required=True)
    grid = parse_grid(_get(doc, "grid", required=True))
    space_order = _get(doc, "space_order", required=True)
    if not isinstance(space_order, int):
        raise ConfigError("space_order", f"must be an integer, got {space_order!r}")

    medium_doc = _get(doc, "medium", required=True)
    medium = {}
    if physics == "acoustic":
        medium["velocity"] = _get(medium_doc, "velocity_m_s", required=True, where="medium")
    else:
        medium["vp"] = _get(medium_doc, "vp_m_s", required=True, where="medium")
        medium["vs"] = _get(medium_doc, "vs_m_s", required=True, where="medium")
        medium["rho"] = _get(medium_doc, "rho_kg_m3", required=True, where="medium")

    sched_doc = _get(doc, "schedule", default={"kind": "naive"})
    kind = _get(sched_doc, "kind", required=True, where="schedule")
    schedule = ScheduleSpec(
        kind=kind,
        block_shape=(_pair(sched_doc["block_shape"], "schedule.block_shape")
                     if sched_doc.get("block_shape") else None),
        tile_shape=(_pair(sched_doc["tile_shape"], "schedule.tile_shape")
                    if sched_doc.get("tile_shape") else None),
        time_height=int(_get(sched_doc, "time_height", default=1, where="schedule")),
    )

    sources = None
    src_doc = _get(doc, "source")
    if src_doc:
        if "coords_m" in src_doc:
            coords = np.asarray(src_doc["coords_m"], dtype=np.float64)
        elif "layout" in src_doc:
            lay = src_doc["layout"]
            layout_seed = seed if seed is not None else _get(lay, "seed", default=0, where="source.layout")
            coords = generate_source_layout(
                grid,
                int(_get(lay, "count", required=True, where="source.layout")),
                _get(lay, "mode", default="volume", where="source.layout"),
                layout_seed,
            )
        else:
            raise ConfigError("source", "needs coords_m or layout")
        t0_ms = _get(src_doc, "t0_ms", where="source")
        sources = SourceSpec(
            coords=coords,
            f0=float(_get(src_doc, "f0_hz", required=True, where="source")),
            t0=None if t0_ms is None else float(t0_ms) / 1000.0,
            amplitude=float(_get(src_doc, "amplitude", default=1.0, where="source")),
        )

    rec_doc = _get(doc, "receivers")
    receiver_coords = (np.asarray(_get(rec_doc, "coords_m", required=True, where="receivers"),
                                  dtype=np.float64)
                       if rec_doc else None)

    dt_ms = _get(doc, "dt_ms")
    damping = _get(doc, "damping_decay_per_s")
    try:
        return RunConfig(
            physics=physics,
            grid=grid,
            space_order=space_order,
            schedule=schedule,
            medium=medium,
            nt=_get(doc, "nt"),
            time_ms=_get(doc, "time_ms"),
            dt=None if dt_ms is None else float(dt_ms) / 1000.0,
            cfl_safety=float(_get(doc, "cfl_safety", default=0.9)),
            sources=sources,
            receiver_coords=receiver_coords,
            precision=int(_get(doc, "precision", default=32)),
            threads=int(_get(doc, "threads", default=_env_threads())),
            damping_decay=None if damping is None else float(damping),
            validate=bool(_get(doc, "validate", default=False)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from exc


def _env_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def load_config(path: str, seed: int | None = None,
                overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    config = parse_config(doc, seed=seed)
    if overrides:
        config = replace(config, **overrides)
    return config


def _print_report(report: engine.RunReport, stream=None) -> None:
    stream = stream or sys.stdout
    doc = report.to_dict()
    for key in ("physics", "grid_shape", "space_order", "precision", "threads",
                "schedule", "nt", "dt", "elapsed_s", "precompute_s",
                "gpoints_per_s", "arithmetic_intensity", "max_abs", "checksum",
                "nsrc", "nrec", "source_scale_rule"):
        print(f"{key}: {doc[key]}", file=stream)


def cmd_run(args) -> int:
    overrides = {}
    if args.precision:
        overrides["precision"] = args.precision
    if args.threads:
        overrides["threads"] = args.threads
    config = load_config(args.config, seed=args.seed, overrides=overrides)
    if args.dry_run:
        dt, nt = engine.resolve_steps(config)
        print(f"dt: {dt}")
        print(f"nt: {nt}")
        radius = config.space_order // 2
        from .schedule import acoustic_deps, elastic_deps
        deps = (acoustic_deps(radius, config.grid) if config.physics == "acoustic"
                else elastic_deps(radius, config.grid))
        print(describe_plan(engine.build_plan(config, deps)), end="")
        return 0
    result = engine.run(config)
    _print_report(result.report)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result.report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.snapshot:
        name = "u" if config.physics == "acoustic" else "txx"
        engine.save_snapshot(args.snapshot, result.fields[name],
                             result.report.nt - 1 if result.report.nt else 0)
        print(f"snapshot: {args.snapshot} ({name})")
    return 0


def cmd_verify(args) -> int:
    config = load_config(args.config, seed=args.seed)
    if config.schedule.kind == "naive":
        print("error: verify needs a non-naive schedule to compare against naive",
              file=sys.stderr)
        return 2
    tolerance = args.tolerance
    if tolerance is None:
        tolerance = 1e-6 if config.precision == 32 else 1e-12

    dt, nt = engine.resolve_steps(config)
    baseline = engine.run(replace(config, schedule=ScheduleSpec(kind="naive")))
    candidate = engine.run(replace(config, validate=False))

    radius = config.space_order // 2
    from .schedule import acoustic_deps, elastic_deps
    deps = (acoustic_deps(radius, config.grid) if config.physics == "acoustic"
            else elastic_deps(radius, config.grid))
    plan = engine.build_plan(config, deps)
    violations = validate_schedule(enumerate_updates(plan, config.grid, nt),
                                   deps, config.grid)

    report = engine.compare_runs(baseline, candidate)
    for line in report.lines():
        print(line)
    print(f"max_rel_linf: {report.max_rel_linf:.3e} (tolerance {tolerance:.1e})")
    print(f"schedule_violations: {len(violations)}")
    for v in violations[:10]:
        print(f"  {v}")
    ok = report.within(tolerance) and not violations
    print("verify: PASS" if ok else "verify: FAIL")
    return 0 if ok else 1


def _median_gpoints(config: RunConfig, repetitions: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        engine.run(config)
    samples = [engine.run(config).report for _ in range(repetitions)]
    return (statistics.median(r.gpoints_per_s for r in samples),
            statistics.median(r.elapsed_s for r in samples))


def load_sweep(path: str) -> SweepSpec:
    with open(path) as fh:
        doc = json.load(fh)
    return SweepSpec(
        tile_shapes=[_pair(t, "sweep.tile_shapes") for t in doc.get("tile_shapes", [])],
        block_shapes=[_pair(b, "sweep.block_shapes") for b in doc.get("block_shapes", [])],
        time_heights=[int(t) for t in doc.get("time_heights", [])],
        repetitions=int(doc.get("repetitions", 3)),
        warmup=int(doc.get("warmup", 1)),
    )


def _tune_candidates(config: RunConfig, sweep: SweepSpec):
    """Deterministic candidate enumeration for the config's schedule kind."""
    kind = config.schedule.kind
    if kind == "wavefront":
        tiles = sweep.tile_shapes or [config.schedule.tile_shape or (32, 32)]
        blocks = sweep.block_shapes or [None]
        heights = sweep.time_heights or [config.schedule.time_height]
        for tile in tiles:
            for block in blocks:
                for t in heights:
                    yield ScheduleSpec(kind="wavefront", tile_shape=tile,
                                       block_shape=block, time_height=t)
    elif kind == "space":
        for block in (sweep.block_shapes or [None]):
            yield ScheduleSpec(kind="space", block_shape=block)
    else:
        raise ConfigError("schedule.kind", f"tuning a {kind!r} schedule is meaningless")


TUNE_COLUMNS = ["kind", "tile_x", "tile_y", "block_x", "block_y",
                "time_height", "status", "gpoints_per_s", "elapsed_s", "best"]


def _sched_cells(sched: ScheduleSpec):
    tile = sched.tile_shape or ("", "")
    block = sched.block_shape or ("", "")
    return [sched.kind, tile[0], tile[1], block[0], block[1], sched.time_height]


def tune(config: RunConfig, sweep: SweepSpec):
    """Sweep schedule candidates; returns (rows, best_index or None)."""
    rows = []
    best_idx = None
    best_gpts = -1.0
    for sched in _tune_candidates(config, sweep):
        cells = _sched_cells(sched)
        try:
            candidate = replace(config, schedule=sched)
            gpts, elapsed = _median_gpoints(candidate, sweep.repetitions, sweep.warmup)
        except (InvalidPlanError, ConfigError) as exc:
            rows.append(cells + ["skipped", "", "", ""])
            continue
        rows.append(cells + ["ok", f"{gpts:.6f}", f"{elapsed:.6f}", ""])
        if gpts > best_gpts:
            best_gpts, best_idx = gpts, len(rows) - 1
    if best_idx is not None:
        rows[best_idx][-1] = "1"
    return rows, best_idx


def _write_csv(path, header, rows) -> None:
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            out.close()


def cmd_tune(args) -> int:
    config = load_config(args.config, seed=args.seed,
                         overrides={"threads": args.threads} if args.threads else None)
    sweep = load_sweep(args.sweep)
    rows, best_idx = tune(config, sweep)
    _write_csv(args.out, TUNE_COLUMNS, rows)
    if best_idx is None:
        print("tune: no valid candidate", file=sys.stderr)
        return 1
    best = rows[best_idx]
    print(f"best: kind={best[0]} tile=({best[1]},{best[2]}) "
          f"block=({best[3]},{best[4]}) T={best[5]} gpoints_per_s={best[7]}",
          file=sys.stderr)
    return 0


BENCH_COLUMNS = ["physics", "space_order", "grid", "T", "tile", "block",
                 "baseline_gpts", "wtb_gpts", "speedup", "error"]


def bench_row(config: RunConfig, row_doc: dict) -> list:
    """Best space-blocked baseline vs best wavefront for one config."""
    reps = int(row_doc.get("repetitions", 3))
    warmup = int(row_doc.get("warmup", 1))
    blocks = [_pair(b, "suite.blocks") for b in row_doc.get("blocks", [[32, 32], [64, 64]])]
    tiles = [_pair(t, "suite.tiles") for t in row_doc.get("tiles", [[32, 32], [48, 48]])]
    heights = [int(t) for t in row_doc.get("time_heights", [2, 4, 8])]

    grid_txt = "x".join(str(n) for n in config.grid.shape)
    base = [config.physics, config.space_order, grid_txt]
    try:
        base_rows, bi = tune(replace(config, schedule=ScheduleSpec(kind="space")),
                             SweepSpec([], blocks, [], reps, warmup))
        if bi is None:
            raise InvalidPlanError("no valid space-blocked candidate")
        baseline_gpts = float(base_rows[bi][7])

        wtb_rows, wi = tune(replace(config, schedule=ScheduleSpec(
                                kind="wavefront", tile_shape=tiles[0])),
                            SweepSpec(tiles, [], heights, reps, warmup))
        if wi is None:
            raise InvalidPlanError("no valid wavefront candidate")
        wtb_gpts = float(wtb_rows[wi][7])
        best = wtb_rows[wi]
        speedup = wtb_gpts / baseline_gpts
        tile_txt = f"{best[1]}x{best[2]}"
        block_txt = f"{best[3]}x{best[4]}" if best[3] != "" else tile_txt
        return base + [best[5], tile_txt, block_txt,
                       f"{baseline_gpts:.6f}", f"{wtb_gpts:.6f}", f"{speedup:.4f}", ""]
    except (ConfigError, InvalidPlanError, OutOfDomainError) as exc:
        return base + ["", "", "", "", "", "", str(exc)]


def cmd_bench(args) -> int:
    with open(args.suite) as fh:
        suite = json.load(fh)
    rows = []
    suite_dir = os.path.dirname(os.path.abspath(args.suite))
    for row_doc in suite.get("rows", []):
        path = row_doc["config"]
        if not os.path.isabs(path):
            path = os.path.join(suite_dir, path)
        try:
            config = load_config(path, seed=args.seed)
        except ConfigError as exc:
            rows.append(["", "", "", "", "", "", "", "", "", str(exc)])
            continue
        rows.append(bench_row(config, row_doc))
    _write_csv(args.out, BENCH_COLUMNS, rows)
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config, seed=args.seed)
    dt, nt = engine.resolve_steps(config)
    radius = config.space_order // 2
    from .schedule import acoustic_deps, elastic_deps
    deps = (acoustic_deps(radius, config.grid) if config.physics == "acoustic"
            else elastic_deps(radius, config.grid))
    plan = engine.build_plan(config, deps)
    if args.force_skew_delta and config.schedule.kind == "wavefront":
        forced = tuple(max(0, s + args.force_skew_delta) for s in plan.skew)
        plan = make_wavefront_plan(config.grid, deps, plan.time_height,
                                   plan.tile_shape, plan.block_shape,
                                   force_skew=forced)
        print(f"forced skew: {forced}")
    print(describe_plan(plan), end="")
    violations = validate_schedule(enumerate_updates(plan, config.grid, nt),
                                   deps, config.grid)
    print(f"violations: {len(violations)}")
    for v in violations[:20]:
        print(f"  {v}")
    return 0 if not violations else 1


def cmd_density_suite(args) -> int:
    with open(args.config) as fh:
        base = json.load(fh)
    counts = [int(c) for c in args.counts.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for mode in ("plane", "volume"):
        for n in counts:
            doc = json.loads(json.dumps(base))
            doc["source"] = {
                "f0_hz": base.get("source", {}).get("f0_hz", 10.0),
                "layout": {"count": n, "mode": mode, "seed": args.seed or 0},
            }
            name = f"density_{mode}_{n}.json"
            with open(os.path.join(args.out, name), "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.write("\n")
            rows.append({"config": name})
    suite_path = os.path.join(args.out, "suite.json")
    with open(suite_path, "w") as fh:
        json.dump({"rows": rows}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(rows)} configs + {suite_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stencil-tb",
        description="Wave-propagation benchmark harness with wavefront "
                    "temporal blocking over precomputed sparse operators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweep=False, suite=False):
        if suite:
            p.add_argument("--suite", required=True, help="suite JSON path")
        else:
            p.add_argument("--config", required=True, help="run config JSON path")
        if sweep:
            p.add_argument("--sweep", required=True, help="sweep JSON path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("run", help="execute one configured run")
    common(p)
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--snapshot", help="dump the final field (binary)")
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--dry-run", action="store_true",
                   help="print derived dt/nt and the plan without running")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="compare a schedule against naive")
    common(p)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("tune", help="sweep tile/block/time-height candidates")
    common(p, sweep=True)
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("bench", help="speedup table: wavefront vs space-blocked")
    common(p, suite=True)
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("validate", help="replay and check a plan's dependences")
    common(p)
    p.add_argument("--force-skew-delta", type=int, default=0,
                   help="debug: add this to the derived skew (negative "
                        "values build a deliberately illegal plan)")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("density-suite",
                       help="generate the source-density corner-case suite")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--counts", default="1,10,100,1000")
    p.set_defaults(fn=cmd_density_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InvalidPlanError, OutOfDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
