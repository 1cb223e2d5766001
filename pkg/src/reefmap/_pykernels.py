"""Pure numpy implementations of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and results (up to floating-point summation order).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# heightfield feature kinds, one row of 8 floats each: [kind, p0..p6]
PLANE, BOX, GAUSS, SINE = 0, 1, 2, 3
BISECT_ITERS = 24


def extract_boundaries(probs, free_class, min_run, skip_border):
    probs = np.asarray(probs)
    # argmax returns the first maximum: ties resolve to the nearer class
    cls = np.argmax(probs, axis=0).T  # (W, H), one row per image column
    W, H = cls.shape
    if W == 0 or H == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    start = np.ones((W, H), dtype=bool)
    start[:, 1:] = cls[:, 1:] != cls[:, :-1]
    flat_start = np.flatnonzero(start.ravel())
    run_len = np.diff(np.append(flat_start, W * H))
    col = flat_start // H
    row = flat_start % H
    c = cls.ravel()[flat_start]
    keep = (c != free_class) & (run_len >= min_run)
    if skip_border:
        keep &= row > 0
    return (row[keep].astype(np.int64), col[keep].astype(np.int64),
            c[keep].astype(np.int64))


def integrate_cells(height, var, hvar, observed, last, ix, iy, h, v, hv, tick):
    """Sequential scalar Kalman fusion of measurements into grid cells.

    Measurement variances must already be floored above zero. Sequential
    fusion equals information-form accumulation per cell, which is what is
    computed here. A cell's horizontal variance takes the value of the last
    measurement fused into it.
    """
    if len(h) == 0:
        return 0
    ny = height.shape[1]
    flat = ix.astype(np.int64) * ny + iy.astype(np.int64)
    cells, inv = np.unique(flat, return_inverse=True)
    w = 1.0 / v
    info = np.bincount(inv, weights=w, minlength=len(cells))
    wsum = np.bincount(inv, weights=w * h, minlength=len(cells))

    H = height.reshape(-1)
    V = var.reshape(-1)
    O = observed.reshape(-1)
    prior = O[cells].astype(bool)
    prior_info = np.where(prior, 1.0 / np.where(prior, V[cells], 1.0), 0.0)
    prior_wsum = np.where(prior, prior_info * np.where(prior, H[cells], 0.0), 0.0)
    tot = info + prior_info
    H[cells] = (wsum + prior_wsum) / tot
    V[cells] = 1.0 / tot
    O[cells] = 1

    last_idx = np.full(len(cells), -1, dtype=np.int64)
    np.maximum.at(last_idx, inv, np.arange(len(h)))
    hvar.reshape(-1)[cells] = hv[last_idx]
    last.reshape(-1)[cells] = tick
    return len(h)


def fuse_grid(height, var, hvar, observed, resolution, max_radius_cells, var_floor):
    nx, ny = height.shape
    obs = observed.astype(bool)
    fused = np.full((nx, ny), np.nan)
    hmin = np.full((nx, ny), np.nan)
    hmax = np.full((nx, ny), np.nan)
    if not obs.any():
        return fused, hmin, hmax
    sig = np.sqrt(np.maximum(var, 0.0))
    w = np.where(obs, 1.0 / np.maximum(var, var_floor), 0.0)
    lo_c = np.where(obs, height - 2 * sig, np.inf)
    hi_c = np.where(obs, height + 2 * sig, -np.inf)
    hw = np.where(obs, w * height, 0.0)
    # squared search radius per cell, in cells
    rad2 = np.where(obs, 4.0 * hvar / resolution ** 2, -1.0)
    R = int(max_radius_cells)
    rad2 = np.minimum(rad2, float(R * R))

    wsum = np.zeros((nx, ny))
    hsum = np.zeros((nx, ny))
    lo = np.full((nx, ny), np.inf)
    hi = np.full((nx, ny), -np.inf)
    rad2_max = max(rad2.max(), 0.0)
    rmax = int(np.floor(np.sqrt(rad2_max)))
    for dx in range(-rmax, rmax + 1):
        for dy in range(-rmax, rmax + 1):
            d2 = dx * dx + dy * dy
            if d2 > rad2_max:
                continue
            tx = slice(max(0, -dx), nx - max(0, dx))
            ty = slice(max(0, -dy), ny - max(0, dy))
            sx = slice(max(0, dx), nx - max(0, -dx) if dx < 0 else nx)
            sy = slice(max(0, dy), ny - max(0, -dy) if dy < 0 else ny)
            sel = rad2[tx, ty] >= d2
            sel &= obs[sx, sy]
            wsum[tx, ty] += np.where(sel, w[sx, sy], 0.0)
            hsum[tx, ty] += np.where(sel, hw[sx, sy], 0.0)
            lo[tx, ty] = np.where(sel, np.minimum(lo[tx, ty], lo_c[sx, sy]), lo[tx, ty])
            hi[tx, ty] = np.where(sel, np.maximum(hi[tx, ty], hi_c[sx, sy]), hi[tx, ty])
    fused[obs] = hsum[obs] / wsum[obs]
    hmin[obs] = lo[obs]
    hmax[obs] = hi[obs]
    return fused, hmin, hmax


def eval_heightfield(features, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h = np.zeros(np.broadcast(x, y).shape)
    for f in np.asarray(features, dtype=np.float64).reshape(-1, 8):
        kind = int(f[0])
        p = f[1:]
        if kind == PLANE:
            h += p[0] + p[1] * x + p[2] * y
        elif kind == BOX:
            inside = (x >= p[0]) & (x < p[1]) & (y >= p[2]) & (y < p[3])
            h += np.where(inside, p[4], 0.0)
        elif kind == GAUSS:
            h += p[0] * np.exp(-((x - p[1]) ** 2 + (y - p[2]) ** 2) / (2.0 * p[3] ** 2))
        elif kind == SINE:
            h += p[0] * np.sin(2 * np.pi * x / p[1] + p[2]) * np.cos(2 * np.pi * y / p[3] + p[4])
        else:
            raise ValueError(f"unknown heightfield feature kind {kind}")
    return h


def raycast(features, tiles, origin, dirs, step, max_range):
    """March every ray on the lattice ``t = n * step`` until it dips below the terrain.

    ``origin`` is ``(x, y, elevation)``; ``dirs`` are unit ``(N, 3)`` vectors
    with an up-positive third component. The first lattice point at or below
    the surface is refined by bisection. ``tiles`` is only used by the
    compiled backend to skip empty space and is ignored here.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = len(dirs)
    out = np.full(n_rays, np.inf)
    n_steps = int(np.floor(max_range / step + 1e-9))
    ox, oy, oz = (float(v) for v in origin)
    hit_n = np.full(n_rays, -1, dtype=np.int64)
    active = np.arange(n_rays)
    for n in range(n_steps + 1):
        if len(active) == 0:
            break
        t = n * step
        d = dirs[active]
        below = oz + t * d[:, 2] <= eval_heightfield(features, ox + t * d[:, 0], oy + t * d[:, 1])
        hit_n[active[below]] = n
        active = active[~below]
    at_origin = hit_n == 0
    out[at_origin] = 0.0
    idx = np.flatnonzero(hit_n > 0)
    if len(idx):
        d = dirs[idx]
        hi = hit_n[idx] * step
        lo = hi - step
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            below = oz + mid * d[:, 2] <= eval_heightfield(
                features, ox + mid * d[:, 0], oy + mid * d[:, 1])
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        out[idx] = 0.5 * (lo + hi)
    return out
