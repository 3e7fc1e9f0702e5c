"""Command-line front end.

    stencilcomm decompose --config run.toml
    stencilcomm predict --set grid=[256,256,256]
    stencilcomm simulate --ranks 8 --steps 10
    stencilcomm verify --ranks 8
    stencilcomm topology --set device_grid=[8,8,8] --set ranks_per_node=8 --set ranks=512

Exit codes: 0 success, 1 verification failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_override
from .decomposition import decomposition_table, optimize_decomposition, write_table_csv
from .geometry import DecompositionError, Extent, cell_count
from .mapping import build_topology, locality_summary, partition_from_count, write_topology_csv
from .mhd import FieldState, NonFiniteError, mhd_rhs_provider
from .perfmodel import PerfParams, strong_scaling, weak_scaling, write_curve_csv
from .runtime import Cluster, write_timings_csv
from .snapshot import SnapshotError, read_snapshot, write_snapshot
from .verify import ShapeMismatchError, compare_states

log = logging.getLogger("stencilcomm")

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_CONFIG = 0, 1, 2


def _open_out(cfg: RunConfig, name: str):
    path = cfg.output_path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path, open(path, "w", newline="")


def device_grid_for(cfg: RunConfig) -> Extent:
    """Explicit grid, else the optimal decomposition that leaves an inner segment."""
    if cfg.device_grid is not None:
        return Extent(cfg.device_grid)
    sol = optimize_decomposition(cfg.grid, cfg.ranks, cfg.radius, "inter", True, min_extent=2 * cfg.radius + 1)
    return Extent(sol.p)


def make_cluster(cfg: RunConfig, ranks: int | None = None) -> Cluster:
    if ranks == 1:
        grid = Extent((1, 1, 1))
    else:
        grid = device_grid_for(cfg)
    rpn = cfg.ranks_per_node if ranks is None else None
    return Cluster(cfg.grid, grid, cfg.radius, rpn, cfg.mapping, cfg.corners)


def initial_state(cfg: RunConfig) -> FieldState:
    return FieldState.random(cfg.grid, cfg.radius, cfg.seed)


def cmd_decompose(cfg: RunConfig) -> int:
    n = Extent(cfg.grid)
    rows = decomposition_table(n, cfg.counts, cfg.radius, cfg.level, cfg.periodic, cfg.min_extent)
    path, fh = _open_out(cfg, cfg.table)
    with fh:
        write_table_csv(rows, cfg.level, fh, cfg.comment())
    bad = sum("error" in r for r in rows)
    print(f"wrote {path} ({len(rows)} rows, {bad} infeasible)")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    params = PerfParams(cfg.pi_inv, cfg.beta_inv, cfg.tau0)
    if cfg.weak:
        points, warnings = weak_scaling(cfg.grid, cfg.radius, cfg.counts, params, cfg.periodic)
    else:
        points, warnings = strong_scaling(cfg.grid, cfg.radius, cfg.counts, params, cfg.periodic)
    path, fh = _open_out(cfg, cfg.curve)
    with fh:
        write_curve_csv(points, fh, cfg.weak, cfg.comment())
    print(f"wrote {path} ({len(points)} points, {len(warnings)} skipped)")
    return EXIT_OK


def cmd_topology(cfg: RunConfig) -> int:
    grid = Extent(cfg.device_grid) if cfg.device_grid is not None else partition_from_count(cfg.ranks)
    topo = build_topology(grid, cfg.ranks_per_node or cell_count(grid), cfg.mapping)
    path, fh = _open_out(cfg, cfg.topology)
    with fh:
        write_topology_csv(topo, fh, cfg.periodic, cfg.comment())
    s = locality_summary(topo, cfg.periodic)
    print(f"wrote {path}; inter-node faces per rank: min {s['min']} max {s['max']} mean {s['mean']:.3f}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    cluster = make_cluster(cfg)
    rhs = mhd_rhs_provider(cfg.physics, cfg.order)
    cluster.scatter(initial_state(cfg))
    for k in range(cfg.warmup):
        cluster.integration_step(cfg.dt, rhs, cfg.schedule, cfg.seed + k)
    for c in cluster.contexts:
        c.timings.clear()
    sent0 = cluster.net.sent
    t0 = time.perf_counter()
    for k in range(cfg.steps):
        cluster.integration_step(cfg.dt, rhs, cfg.schedule, cfg.seed + cfg.warmup + k)
    wall = time.perf_counter() - t0
    final = cluster.gather()

    snap = cfg.output_path(cfg.snapshot)
    snap.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot(snap, final, seed=cfg.seed, steps=cfg.warmup + cfg.steps, dt=cfg.dt,
                   config_sha256=cfg.fingerprint())
    tpath, fh = _open_out(cfg, cfg.timings)
    with fh:
        write_timings_csv(cluster.timings(), fh, cfg.comment())

    print(f"device_grid: {'x'.join(map(str, cluster.device_grid))}")
    print(f"ranks: {cluster.size}")
    print(f"measured_steps: {cfg.steps}")
    print(f"messages: {cluster.net.sent - sent0}")
    print(f"wall_seconds: {wall:.6f}")
    print(f"snapshot: {snap}")
    print(f"timings: {tpath}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.model or cfg.candidate:
        if not (cfg.model and cfg.candidate):
            raise ConfigError("verify needs both model and candidate snapshots, or neither")
        model, _ = read_snapshot(cfg.model)
        candidate, _ = read_snapshot(cfg.candidate)
    else:
        state = initial_state(cfg)
        rhs = mhd_rhs_provider(cfg.physics, cfg.order)
        model = make_cluster(cfg, ranks=1).run(state, cfg.dt, cfg.steps, rhs)
        candidate = make_cluster(cfg).run(state, cfg.dt, cfg.steps, rhs, cfg.schedule, cfg.seed)
    report = compare_states(model, candidate)
    sys.stdout.write(report.format(cfg.threshold))
    return EXIT_OK if report.passed(cfg.threshold) else EXIT_VERIFY_FAILED


COMMANDS = {
    "decompose": cmd_decompose,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "topology": cmd_topology,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stencilcomm", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", type=Path, help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (TOML value syntax; physics.nu=0.01 for tables)")
        p.add_argument("--output-dir", help="directory for output files")
        p.add_argument("--ranks", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        if name == "verify":
            p.add_argument("--model", help="reference snapshot")
            p.add_argument("--candidate", help="snapshot to check")
            p.add_argument("--threshold", type=float)
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    for item in args.set:
        key, value = parse_override(item)
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    for key in ("output_dir", "ranks", "seed", "steps", "model", "candidate", "threshold"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg)
    except (ConfigError, DecompositionError, ShapeMismatchError, SnapshotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
