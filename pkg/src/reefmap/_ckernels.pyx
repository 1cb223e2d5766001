# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sin, cos, sqrt, floor, fabs, INFINITY, M_PI

cnp.import_array()

BACKEND = "cython"

cdef enum:
    PLANE = 0
    BOX = 1
    GAUSS = 2
    SINE = 3
    BISECT_ITERS = 24


def extract_boundaries(double[:, :, ::1] probs, int free_class, int min_run, bint skip_border):
    cdef Py_ssize_t C = probs.shape[0], H = probs.shape[1], W = probs.shape[2]
    cdef Py_ssize_t u, v, k, start, n = 0
    cdef int best, cur, prev
    cdef double pb
    cdef cnp.uint8_t[:, ::1] cls = np.empty((W, H), dtype=np.uint8)
    for v in range(H):
        for u in range(W):
            best = 0
            pb = probs[0, v, u]
            for k in range(1, C):
                if probs[k, v, u] > pb:
                    pb = probs[k, v, u]
                    best = <int>k
            cls[u, v] = best
    cdef cnp.int64_t[::1] rows = np.empty(W * H, dtype=np.int64)
    cdef cnp.int64_t[::1] cols = np.empty(W * H, dtype=np.int64)
    cdef cnp.int64_t[::1] cc = np.empty(W * H, dtype=np.int64)
    for u in range(W):
        start = 0
        for v in range(1, H + 1):
            if v == H or cls[u, v] != cls[u, start]:
                cur = cls[u, start]
                if (cur != free_class and v - start >= min_run
                        and not (skip_border and start == 0)):
                    rows[n] = start
                    cols[n] = u
                    cc[n] = cur
                    n += 1
                start = v
    return (np.asarray(rows[:n]).copy(), np.asarray(cols[:n]).copy(),
            np.asarray(cc[:n]).copy())


def integrate_cells(double[:, ::1] height, double[:, ::1] var, double[:, ::1] hvar,
                    cnp.uint8_t[:, ::1] observed, cnp.int64_t[:, ::1] last,
                    cnp.int64_t[::1] ix, cnp.int64_t[::1] iy, double[::1] h,
                    double[::1] v, double[::1] hv, long tick):
    cdef Py_ssize_t k, i, j, n = h.shape[0]
    cdef double p, m
    for k in range(n):
        i = ix[k]
        j = iy[k]
        if observed[i, j]:
            p = var[i, j]
            m = v[k]
            height[i, j] = (m * height[i, j] + p * h[k]) / (m + p)
            var[i, j] = (p * m) / (p + m)
        else:
            height[i, j] = h[k]
            var[i, j] = v[k]
            observed[i, j] = 1
        hvar[i, j] = hv[k]
        last[i, j] = tick
    return n


def fuse_grid(double[:, ::1] height, double[:, ::1] var, double[:, ::1] hvar,
              cnp.uint8_t[:, ::1] observed, double resolution, int max_radius_cells,
              double var_floor):
    cdef Py_ssize_t nx = height.shape[0], ny = height.shape[1]
    fused_a = np.full((nx, ny), np.nan)
    hmin_a = np.full((nx, ny), np.nan)
    hmax_a = np.full((nx, ny), np.nan)
    cdef double[:, ::1] fused = fused_a
    cdef double[:, ::1] hmin = hmin_a
    cdef double[:, ::1] hmax = hmax_a
    cdef Py_ssize_t i, j, a, b
    cdef long dx, dy, r
    cdef double rad2, cap2 = <double>max_radius_cells * max_radius_cells
    cdef double ws, hs, lo, hi, w, s, t
    for i in range(nx):
        for j in range(ny):
            if not observed[i, j]:
                continue
            rad2 = 4.0 * hvar[i, j] / (resolution * resolution)
            if rad2 > cap2:
                rad2 = cap2
            r = <long>floor(sqrt(rad2))
            ws = 0.0
            hs = 0.0
            lo = INFINITY
            hi = -INFINITY
            for dx in range(-r, r + 1):
                a = i + dx
                if a < 0 or a >= nx:
                    continue
                for dy in range(-r, r + 1):
                    b = j + dy
                    if b < 0 or b >= ny:
                        continue
                    if dx * dx + dy * dy > rad2 or not observed[a, b]:
                        continue
                    w = var[a, b]
                    if w < var_floor:
                        w = var_floor
                    w = 1.0 / w
                    ws += w
                    hs += w * height[a, b]
                    s = sqrt(var[a, b]) if var[a, b] > 0 else 0.0
                    t = height[a, b] - 2.0 * s
                    if t < lo:
                        lo = t
                    t = height[a, b] + 2.0 * s
                    if t > hi:
                        hi = t
            fused[i, j] = hs / ws
            hmin[i, j] = lo
            hmax[i, j] = hi
    return fused_a, hmin_a, hmax_a


cdef inline double _height(const double* f, Py_ssize_t nf, double x, double y) noexcept nogil:
    cdef Py_ssize_t k
    cdef double h = 0.0, ex, ey
    cdef int kind
    cdef const double* q
    for k in range(nf):
        q = f + 8 * k
        kind = <int>q[0]
        if kind == PLANE:
            h += q[1] + q[2] * x + q[3] * y
        elif kind == BOX:
            if x >= q[1] and x < q[2] and y >= q[3] and y < q[4]:
                h += q[5]
        elif kind == GAUSS:
            ex = x - q[2]
            ey = y - q[3]
            h += q[1] * exp(-(ex * ex + ey * ey) / (2.0 * q[4] * q[4]))
        elif kind == SINE:
            h += q[1] * sin(2.0 * M_PI * x / q[2] + q[3]) * cos(2.0 * M_PI * y / q[4] + q[5])
    return h


def eval_heightfield(features, x, y):
    cdef double[:, ::1] f = np.ascontiguousarray(np.asarray(features, dtype=np.float64).reshape(-1, 8))
    xb, yb = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    shape = xb.shape
    cdef double[::1] xs = np.ascontiguousarray(xb).reshape(-1)
    cdef double[::1] ys = np.ascontiguousarray(yb).reshape(-1)
    out = np.empty(xs.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t k
    cdef const double* fp = &f[0, 0]
    cdef Py_ssize_t nf = f.shape[0]
    for k in range(xs.shape[0]):
        o[k] = _height(fp, nf, xs[k], ys[k])
    return out.reshape(shape)


cdef inline double _tile_exit(double px, double py, double dx, double dy,
                              double x0, double y0, double size, long ti, long tj) noexcept nogil:
    """Ray parameter offset to leave tile (ti, tj) from (px, py)."""
    cdef double tx = INFINITY, ty = INFINITY
    if dx > 1e-15:
        tx = (x0 + (ti + 1) * size - px) / dx
    elif dx < -1e-15:
        tx = (x0 + ti * size - px) / dx
    if dy > 1e-15:
        ty = (y0 + (tj + 1) * size - py) / dy
    elif dy < -1e-15:
        ty = (y0 + tj * size - py) / dy
    return tx if tx < ty else ty


def raycast(features, tiles, origin, dirs, double step, double max_range):
    cdef double[:, ::1] f = np.ascontiguousarray(np.asarray(features, dtype=np.float64).reshape(-1, 8))
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t N = d.shape[0], k
    out_a = np.full(N, np.inf)
    cdef double[::1] out = out_a
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef long n_steps = <long>floor(max_range / step + 1e-9)
    cdef bint use_tiles = tiles is not None
    cdef double tx0 = 0.0, ty0 = 0.0, tsize = 1.0
    cdef double[:, ::1] bound
    cdef double[:, ::1] lip
    cdef long ntx = 0, nty = 0
    if use_tiles:
        tx0, ty0, tsize, bound_arr, lip_arr = tiles
        bound = np.ascontiguousarray(bound_arr, dtype=np.float64)
        lip = np.ascontiguousarray(lip_arr, dtype=np.float64)
        ntx = bound.shape[0]
        nty = bound.shape[1]
    cdef long n, nn, ti, tj, it
    cdef double t, px, py, pz, dx, dy, dz, texit, zend, lo, hi, mid, hz, rate, adv, dxy
    cdef bint found, in_tile
    cdef const double* fp = &f[0, 0]
    cdef Py_ssize_t nf = f.shape[0]
    with nogil:
        for k in range(N):
            dx = d[k, 0]
            dy = d[k, 1]
            dz = d[k, 2]
            dxy = sqrt(dx * dx + dy * dy)
            n = 0
            found = False
            while n <= n_steps:
                t = n * step
                px = ox + t * dx
                py = oy + t * dy
                pz = oz + t * dz
                in_tile = False
                if use_tiles:
                    ti = <long>floor((px - tx0) / tsize)
                    tj = <long>floor((py - ty0) / tsize)
                    if ti >= 0 and tj >= 0 and ti < ntx and tj < nty:
                        in_tile = True
                        texit = _tile_exit(px, py, dx, dy, tx0, ty0, tsize, ti, tj)
                        if texit > max_range - t:
                            texit = max_range - t
                        zend = pz + texit * dz
                        if pz > bound[ti, tj] and zend > bound[ti, tj]:
                            # every lattice point up to the tile exit is above the terrain;
                            # a zero exit distance on a tile edge must still advance
                            nn = <long>floor((t + texit) / step) + 1
                            n = nn if nn > n else n + 1
                            continue
                hz = _height(fp, nf, px, py)
                if pz <= hz:
                    found = True
                    break
                n += 1
                if in_tile and lip[ti, tj] < INFINITY:
                    # the gap cannot close faster than this inside a cliff-free tile
                    rate = lip[ti, tj] * dxy - dz
                    if rate > 0:
                        adv = 0.999 * (pz - hz) / rate
                        if adv > texit:
                            adv = texit
                        nn = <long>floor((t + adv) / step) + 1
                        if nn > n:
                            n = nn
            if not found:
                continue
            if n == 0:
                out[k] = 0.0
                continue
            hi = n * step
            lo = hi - step
            for it in range(BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                if oz + mid * dz <= _height(fp, nf, ox + mid * dx, oy + mid * dy):
                    hi = mid
                else:
                    lo = mid
            out[k] = 0.5 * (lo + hi)
    return out_a
