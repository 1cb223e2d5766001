"""Command-line entry point: ``reefmap simulate|evaluate|sweep|bench``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or format
error, 4 numeric failure. The scenario seed resolves as config value, then
``REEFMAP_SEED``, then ``--seed`` (later wins).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .evaluate import corridor_mask, cross_section, degradation_sweep, error_map, grid_metrics
from .io_formats import (ConfigError, FormatError, bundled_config_path, bundled_configs,
                         file_sha256, read_config, read_grid, read_manifest, write_csv,
                         write_grid, write_manifest, write_pgm16)

log = logging.getLogger("reefmap")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.json"
LOG_COLUMNS = ("step", "time", "x", "points", "integrated", "skipped", "mean_sigma2_z",
               "observed_cells")
METRIC_COLUMNS = ("max_error", "mean_error", "rmse", "coverage", "observed_cells",
                  "corridor_max_error", "corridor_rmse", "corridor_coverage", "corridor_cells")


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


# helpers -------------------------------------------------------------------

def _load_config(name_or_path: str, seed_flag: int | None):
    """Read a config path or bundled name and apply the seed precedence."""
    path = Path(name_or_path)
    if not path.exists() and not path.suffix and name_or_path in bundled_configs():
        path = bundled_config_path(name_or_path)
    if not path.exists():
        known = ", ".join(bundled_configs())
        raise UsageError(f"config not found: {name_or_path} (bundled: {known})")
    cfg = read_config(path)
    env = os.environ.get("REEFMAP_SEED")
    if env is not None and env.strip():
        try:
            cfg = cfg.replace_seed(int(env))
        except ValueError:
            raise ConfigError(f"REEFMAP_SEED must be an integer, got {env!r}") from None
    if seed_flag is not None:
        cfg = cfg.replace_seed(seed_flag)
    return cfg


def _parse_floats(text: str, what: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: empty list")
    return vals


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e.strerror}") from None
    return out


def _hashes(out: Path, names) -> dict:
    return {n: file_sha256(out / n) for n in sorted(names)}


def _base_manifest(cfg, command: str) -> dict:
    return {"tool": "reefmap", "version": __version__, "backend": kernels.BACKEND,
            "command": command, "config_name": cfg.name, "config_hash": cfg.digest(),
            "seed": cfg.seed.value, "outputs": {}, "timings": {}}


def _finite_or_fail(grid, what: str) -> None:
    obs = grid.observed
    for name in ("fused_height", "h_min", "h_max"):
        if not np.all(np.isfinite(grid.layers[name][obs])):
            raise NumericError(f"{what}: non-finite {name} in observed cells")


# commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simworld import run_config

    cfg = _load_config(args.config, args.seed)
    out = _outdir(args.out)
    t0 = time.perf_counter()
    res = run_config(cfg)
    t1 = time.perf_counter()
    _finite_or_fail(res.map_grid, "map")
    write_grid(res.map_grid, out / "map.egrid")
    write_grid(res.truth, out / "truth.egrid")
    write_csv(out / "logs.csv", LOG_COLUMNS, ([row[c] for c in LOG_COLUMNS] for row in res.logs))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = _base_manifest(cfg, "simulate")
    manifest["outputs"] = _hashes(out, ["map.egrid", "truth.egrid", "logs.csv", "config.json"])
    manifest["timings"] = {"total": t1 - t0, **{k: v for k, v in sorted(res.timings.items())}}
    write_manifest(out / MANIFEST, manifest)
    print(f"simulate: {len(res.logs)} frames, {res.map_grid.observed.sum()} observed cells "
          f"-> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    mpath = run / MANIFEST
    if not mpath.exists():
        raise OSError(f"{run}: no {MANIFEST}; run 'reefmap simulate' first")
    manifest = read_manifest(mpath)
    sections = _parse_floats(args.sections, "--sections")
    t0 = time.perf_counter()
    grid = read_grid(run / "map.egrid")
    truth = read_grid(run / "truth.egrid")
    metrics = grid_metrics(grid, truth)
    write_csv(run / "metrics.csv", METRIC_COLUMNS, [[metrics[c] for c in METRIC_COLUMNS]])
    written = ["metrics.csv"]
    for k, y in enumerate(sections):
        cs = cross_section(grid, truth, "y", y)
        name = "cross_section.csv" if k == 0 else f"cross_section_y{y:g}.csv"
        write_csv(run / name, ("coord", "h_est", "h_min", "h_max", "h_true"), cs.rows())
        written.append(name)
    em = error_map(grid, truth)
    vmax = em.max if em.count and em.max > 0 else 1.0
    write_pgm16(run / "error.pgm", em.error, 0.0, vmax,
                note="absolute height error in meters; row 0 of the image is the largest y\n")
    written += ["error.pgm", "error.txt"]
    corr = corridor_mask(grid)
    manifest.setdefault("outputs", {}).update(_hashes(run, written))
    manifest.setdefault("timings", {})["evaluate"] = time.perf_counter() - t0
    manifest["evaluated"] = True
    write_manifest(mpath, manifest)
    print(f"evaluate: max_error {metrics['max_error']:.3f} m, rmse {metrics['rmse']:.3f} m, "
          f"corridor ({int(corr.sum())} cells) max {metrics['corridor_max_error']:.3f} m, "
          f"coverage {metrics['corridor_coverage']:.3f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    eps = _parse_floats(args.eps, "--eps")
    bad = [e for e in eps if not 0.0 <= e <= 1.0]
    if bad:
        raise UsageError(f"--eps values must lie in [0, 1], got {bad}")
    out = _outdir(args.out)
    t0 = time.perf_counter()
    rows = degradation_sweep(cfg, eps)
    write_csv(out / "sweep.csv", ("epsilon", "mean_sigma2_z", "rmse", "coverage"),
              [(r.epsilon, r.mean_sigma2_z, r.rmse, r.coverage) for r in rows])
    manifest = _base_manifest(cfg, "sweep")
    manifest["epsilons"] = eps
    manifest["outputs"] = _hashes(out, ["sweep.csv"])
    manifest["timings"] = {"total": time.perf_counter() - t0}
    write_manifest(out / MANIFEST, manifest)
    for r in rows:
        print(f"eps {r.epsilon:g}: mean sigma2_z {r.mean_sigma2_z:.6f}, rmse {r.rmse:.4f}, "
              f"coverage {r.coverage:.3f}")
    return EXIT_OK


def bench_frames(cfg, count: int):
    """Ray-cast up to ``count`` class images along the configured trajectory."""
    from .simworld import DegradationModel, classify, raycast, scenario_parts

    parts = scenario_parts(cfg)
    poses = parts["trajectory"].poses[:max(1, count)]
    d = parts["degradation"]
    images = [classify(raycast(parts["heightfield"], p @ parts["extrinsic"], parts["intrinsics"],
                               cfg.camera.max_range, cfg.map.resolution / 2.0),
                       parts["scheme"], DegradationModel(d.epsilon, d.smear, d.seed))
              for p in poses]
    return parts, poses, images


def run_bench(cfg, iterations: int = 200, distinct_frames: int = 20) -> dict:
    """Per-stage latency samples (seconds) of the mapping loop over recorded frames."""
    from .elevmap import ElevationMap
    from .geometry import Pose, Rotation
    from .rangesensor import sense

    parts, poses, images = bench_frames(cfg, distinct_frames)
    m = cfg.map
    emap = ElevationMap((m.size_x, m.size_y), m.resolution, m.fuse_max_radius)
    st = cfg.noise.translation_sigma
    sr = np.radians(cfg.noise.rotation_sigma_deg)
    cov = np.diag([st ** 2] * 3 + [sr ** 2] * 3)
    att = np.diag([0.0] * 3 + [sr ** 2] * 3)
    stages = {k: [] for k in ("sense", "motion_update", "integrate_scan", "fuse")}
    n = len(poses)
    for it in range(iterations):
        k = it % n
        prev = poses[(k - 1) % n]
        c0 = time.perf_counter()
        pts = sense(images[k], parts["intrinsics"], parts["scheme"])
        c1 = time.perf_counter()
        emap.motion_update(Pose(poses[k].translation - prev.translation, Rotation(), cov))
        c2 = time.perf_counter()
        sp = Pose((emap.robot_offset[0], emap.robot_offset[1], 0.0), poses[k].rotation, att)
        emap.integrate_scan(pts, sp @ parts["extrinsic"])
        c3 = time.perf_counter()
        emap.fuse()
        c4 = time.perf_counter()
        for key, dt in zip(stages, (c1 - c0, c2 - c1, c3 - c2, c4 - c3)):
            stages[key].append(dt)
    stages["update"] = [a + b + c for a, b, c in
                        zip(stages["sense"], stages["motion_update"], stages["integrate_scan"])]
    return {"samples": stages, "map_cells": emap.shape,
            "image": (parts["intrinsics"].width, parts["intrinsics"].height)}


def cmd_bench(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.iterations < 1:
        raise UsageError("--iterations must be positive")
    res = run_bench(cfg, args.iterations)
    nx, ny = res["map_cells"]
    w, h = res["image"]
    print(f"bench: backend {kernels.BACKEND}, map {nx}x{ny} cells, image {w}x{h}, "
          f"{args.iterations} frames")
    print(f"{'stage':<16}{'median_ms':>12}{'p95_ms':>12}")
    rows = []
    for name in ("sense", "motion_update", "integrate_scan", "update", "fuse"):
        s = np.asarray(res["samples"][name]) * 1e3
        med, p95 = float(np.median(s)), float(np.percentile(s, 95))
        label = "update(total)" if name == "update" else name
        print(f"{label:<16}{med:>12.3f}{p95:>12.3f}")
        rows.append((label, med, p95))
    if args.out:
        out = _outdir(args.out)
        write_csv(out / "bench.csv", ("stage", "median_ms", "p95_ms"), rows)
        manifest = _base_manifest(cfg, "bench")
        manifest["outputs"] = _hashes(out, ["bench.csv"])
        manifest["iterations"] = args.iterations
        write_manifest(out / MANIFEST, manifest)
    return EXIT_OK


# entry point ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reefmap", description="Range-class elevation mapping simulator.")
    p.add_argument("--version", action="version", version=f"reefmap {__version__}")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one scenario and export grids, logs, manifest")
    s.add_argument("--config", required=True, help="config path or bundled name")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="score a simulate run against its ground truth")
    e.add_argument("--run", required=True, help="directory written by simulate")
    e.add_argument("--sections", default="0,0.5,1", help="comma-separated y values (m)")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="degradation sweep over epsilon")
    w.add_argument("--config", required=True)
    w.add_argument("--eps", default="0,0.1,0.2,0.3,0.4,0.5", help="comma-separated epsilons")
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int, default=None)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="per-stage mapping latency")
    b.add_argument("--config", default="default")
    b.add_argument("--iterations", type=int, default=200)
    b.add_argument("--out", default=None, help="optional directory for bench.csv")
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"reefmap: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"reefmap: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"reefmap: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"reefmap: format error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"reefmap: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"reefmap: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # scenario inconsistencies surface as ValueError subclasses
        print(f"reefmap: config error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
