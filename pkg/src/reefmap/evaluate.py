"""Compare fused maps with ground truth.

All statistics are taken over observed cells only; unobserved cells are
never imputed. Inputs are ``Grid`` objects (the fused layers of a map
export and the ``height`` layer of a truth export) or a ``FusedMap``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elevmap import FusedMap
from .io_formats import Grid

CORRIDOR_HALF_WIDTH = 0.5


class GridMismatchError(ValueError):
    pass


def fused_grid(fused: FusedMap) -> Grid:
    """Wrap a ``FusedMap`` (``[ix, iy]`` arrays) as a row-major ``Grid``."""
    nx, ny = fused.height.shape
    layers = {"fused_height": fused.height.T, "h_min": fused.h_min.T, "h_max": fused.h_max.T,
              "height": fused.height.T,
              "observed": (~np.isnan(fused.height.T)).astype(np.float64)}
    return Grid(nx, ny, fused.resolution, float(fused.origin[0]), float(fused.origin[1]), layers)


def _as_grid(g) -> Grid:
    return fused_grid(g) if isinstance(g, FusedMap) else g


def _pair(fused, truth):
    fused, truth = _as_grid(fused), _as_grid(truth)
    if not fused.same_geometry(truth):
        raise GridMismatchError(
            f"grid geometry differs: {fused.cells_x}x{fused.cells_y} @ {fused.resolution} "
            f"origin ({fused.origin_x}, {fused.origin_y}) vs {truth.cells_x}x{truth.cells_y} "
            f"@ {truth.resolution} origin ({truth.origin_x}, {truth.origin_y})")
    est = fused.layers["fused_height"]
    observed = fused.observed & ~np.isnan(est)
    return fused, truth, est, truth.layers["height"], observed


@dataclass
class ErrorMap:
    """Absolute height error per cell, ``NaN`` where unobserved."""

    error: np.ndarray
    mask: np.ndarray

    def stats(self, region: np.ndarray | None = None) -> dict:
        m = self.mask if region is None else self.mask & region
        e = self.error[m]
        if e.size == 0:
            return {"max": float("nan"), "mean": float("nan"), "rmse": float("nan"), "count": 0}
        return {"max": float(e.max()), "mean": float(e.mean()),
                "rmse": float(np.sqrt(np.mean(e * e))), "count": int(e.size)}

    @property
    def max(self) -> float:
        return self.stats()["max"]

    @property
    def mean(self) -> float:
        return self.stats()["mean"]

    @property
    def rmse(self) -> float:
        return self.stats()["rmse"]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def argmax(self) -> tuple:
        """Row-major ``(iy, ix)`` of the largest error."""
        if not self.mask.any():
            raise ValueError("no observed cells")
        return np.unravel_index(np.argmax(np.where(self.mask, self.error, -np.inf)),
                                self.error.shape)


def error_map(fused, truth) -> ErrorMap:
    _, _, est, h_true, observed = _pair(fused, truth)
    err = np.full(est.shape, np.nan)
    err[observed] = np.abs(est[observed] - h_true[observed])
    return ErrorMap(err, observed)


def corridor_mask(grid, half_width: float = CORRIDOR_HALF_WIDTH, centre: float = 0.0,
                  axis: str = "y") -> np.ndarray:
    """Cells whose centre lies within ``half_width`` of the transect line."""
    grid = _as_grid(grid)
    x, y = grid.cell_centers()
    X, Y = np.meshgrid(x, y)
    coord = Y if axis == "y" else X
    return np.abs(coord - centre) <= half_width + 1e-9


def bounds_coverage(fused, truth, region: np.ndarray | None = None) -> float:
    """Fraction of observed cells whose truth lies inside ``[h_min, h_max]``.

    Returns 0.0 when no observed cell falls in ``region``.
    """
    fused, _, _, h_true, observed = _pair(fused, truth)
    m = observed if region is None else observed & region
    if not m.any():
        return 0.0
    lo, hi = fused.layers["h_min"][m], fused.layers["h_max"][m]
    t = h_true[m]
    return float(np.mean((t >= lo) & (t <= hi)))


@dataclass
class CrossSection:
    axis: str
    value: float
    coord: np.ndarray
    h_est: np.ndarray
    h_min: np.ndarray
    h_max: np.ndarray
    h_true: np.ndarray

    def __len__(self) -> int:
        return len(self.coord)

    @property
    def coverage(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean((self.h_true >= self.h_min) & (self.h_true <= self.h_max)))

    def rows(self):
        return [(float(c), float(e), float(lo), float(hi), float(t)) for c, e, lo, hi, t in
                zip(self.coord, self.h_est, self.h_min, self.h_max, self.h_true)]


def cross_section(fused, truth, axis: str = "y", value: float = 0.0) -> CrossSection:
    """Observed samples along the cell row (``axis="y"``) or column nearest ``value``.

    Coordinates run along the other axis in increasing order.
    """
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    fused, _, est, h_true, observed = _pair(fused, truth)
    x, y = fused.cell_centers()
    along, across = (x, y) if axis == "y" else (y, x)
    origin = fused.origin_y if axis == "y" else fused.origin_x
    n = len(across)
    k = int(np.floor((value - origin) / fused.resolution))
    if not 0 <= k < n:
        lo, hi = origin, origin + n * fused.resolution
        raise ValueError(f"{axis}={value} lies outside the grid [{lo}, {hi})")
    pick = (lambda a: a[k, :]) if axis == "y" else (lambda a: a[:, k])
    m = pick(observed)
    return CrossSection(axis, float(value), along[m].copy(), pick(est)[m].copy(),
                        pick(fused.layers["h_min"])[m].copy(),
                        pick(fused.layers["h_max"])[m].copy(), pick(h_true)[m].copy())


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    mean_sigma2_z: float
    rmse: float
    coverage: float


def scenario_metrics(result, half_width: float = CORRIDOR_HALF_WIDTH) -> dict:
    """Whole-map and transect-corridor error summary of one scenario result."""
    return grid_metrics(result.map_grid, result.truth, half_width)


def grid_metrics(grid: Grid, truth: Grid, half_width: float = CORRIDOR_HALF_WIDTH) -> dict:
    em = error_map(grid, truth)
    corr = corridor_mask(grid, half_width)
    whole, near = em.stats(), em.stats(corr)
    return {
        "max_error": whole["max"], "mean_error": whole["mean"], "rmse": whole["rmse"],
        "coverage": bounds_coverage(grid, truth), "observed_cells": whole["count"],
        "corridor_max_error": near["max"], "corridor_rmse": near["rmse"],
        "corridor_coverage": bounds_coverage(grid, truth, corr),
        "corridor_cells": near["count"],
    }


def degradation_sweep(config, epsilons, runner=None) -> list:
    """One scenario run per ``epsilon`` with the config's fixed seed, in input order."""
    eps = [float(e) for e in epsilons]
    bad = [e for e in eps if not 0.0 <= e <= 1.0]
    if bad:
        raise ValueError(f"epsilon values outside [0, 1]: {bad}")
    if runner is None:
        from .simworld import run_config

        cache: dict = {}  # every run sees the same world, so ranges are shared

        def runner(cfg, epsilon):
            return run_config(cfg, epsilon=epsilon, range_cache=cache)
    rows = []
    for e in eps:
        res = runner(config, epsilon=e)
        sig = [log["mean_sigma2_z"] for log in res.logs]
        m = scenario_metrics(res)
        rows.append(SweepRow(e, float(np.mean(sig)) if sig else float("nan"),
                             m["corridor_rmse"], m["corridor_coverage"]))
    return rows
