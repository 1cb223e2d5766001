"""Time the compiled kernels against the numpy fallback on identical inputs.

    python benchmarks/bench_backends.py [--repeat 5] [--loop]

Kernel rows use a default-sized map (250x250 cells) and a 512x384 class
image. ``--loop`` additionally runs the full per-frame mapping loop once per
backend in a subprocess (the backend is chosen at import time).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from reefmap import kernels
from reefmap.geometry import Pose
from reefmap.rangesensor import CameraIntrinsics, RangeClassScheme
from reefmap.simworld import Heightfield, camera_extrinsic, classify, raycast


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


def kernel_cases(rng):
    nx = ny = 250
    obs = (rng.random((nx, ny)) < 0.5).astype(np.uint8)
    h = np.where(obs, rng.normal(size=(nx, ny)), np.nan)
    v = np.where(obs, rng.uniform(1e-3, 0.5, (nx, ny)), 0.0)
    hv = np.where(obs, rng.uniform(0, 2e-3, (nx, ny)), 0.0)
    n = 20_000
    ix = rng.integers(0, nx, n).astype(np.int64)
    iy = rng.integers(0, ny, n).astype(np.int64)
    mh, mv, mhv = rng.normal(size=n), rng.uniform(1e-3, 1, n), rng.uniform(0, 1e-3, n)

    scheme = RangeClassScheme()
    intr = CameraIntrinsics.from_fov(512, 384, 80.0)
    hf = Heightfield.plateau_gap(top=0.2, gap_floor=-2.0)
    pose = Pose((4.0, 0.0, -1.0)) @ camera_extrinsic(15.0)
    ranges = raycast(hf, pose, intr, 6.0, 0.01)
    probs = np.ascontiguousarray(classify(ranges, scheme).probs)
    d = intr.ray_directions().reshape(-1, 3) @ pose.rotation.matrix.T
    d[:, 2] *= -1
    d = np.ascontiguousarray(d[::16])  # 12k rays keeps the numpy march bearable
    origin = (4.0, 0.0, 1.0)

    def integrate(mod):
        arrs = [a.copy() for a in (h, v, hv, obs)] + [np.zeros((nx, ny), dtype=np.int64)]
        return lambda: mod.integrate_cells(*arrs, ix, iy, mh, mv, mhv, 1)

    return {
        "extract_boundaries 512x384": lambda mod: (lambda: mod.extract_boundaries(
            probs, scheme.free_class, 2, True)),
        "integrate_cells 20k pts": integrate,
        "fuse_grid 250x250": lambda mod: (lambda: mod.fuse_grid(h, v, hv, obs, 0.02, 15, 1e-9)),
        "raycast 12k rays": lambda mod: (lambda: mod.raycast(
            hf.features, hf.tiles() if mod.BACKEND == "cython" else None, origin, d, 0.01, 6.0)),
    }


def loop_row(backend: str, iterations: int) -> str:
    env = dict(os.environ, REEFMAP_BACKEND=backend)
    code = ("import numpy as np; from reefmap.cli import run_bench; "
            "from reefmap.io_formats import bundled_config_path, read_config; "
            f"r = run_bench(read_config(bundled_config_path('default')), {iterations}); "
            "s = r['samples']; "
            "print(np.median(s['update']) * 1e3, np.median(s['fuse']) * 1e3)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    return f"{'mapping loop ' + backend:<30}{float(out[0]):>12.2f}  (fuse {float(out[1]):.2f})"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--loop", action="store_true", help="also time the full mapping loop")
    ap.add_argument("--loop-iterations", type=int, default=50)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    names = list(backends)
    print(f"{'kernel (best of %d, ms)' % args.repeat:<30}"
          + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, make in cases.items():
        t = [best_of(make(backends[n]), args.repeat) for n in names]
        extra = f"{t[0] / t[1]:>11.1f}x" if len(t) > 1 else ""
        print(f"{label:<30}" + "".join(f"{x:>12.2f}" for x in t) + extra)
    if args.loop:
        print(f"\n{'median update per frame (ms)':<30}")
        for n in names:
            print(loop_row(n, args.loop_iterations))


if __name__ == "__main__":
    main()
