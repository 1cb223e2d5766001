"""Robot-centric probabilistic elevation grid.

The grid moves with the robot. Its horizontal axes stay aligned with the
NED-aligned inertial axes (the map never rotates); its vertical reference
is the robot's current height, so every stored height is relative to the
robot. Cells hold a scalar Kalman estimate of height plus an isotropic
horizontal variance that sets the radius of the final fusion step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .geometry import Pose, jacobian_range, perturbed_height_rows
from .io_formats import Grid
from .rangesensor import RangePointBatch

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-9


@dataclass(frozen=True)
class MapCell:
    height: float = float("nan")
    height_variance: float = 0.0
    horizontal_variance: float = 0.0
    observed: bool = False
    last_update: int = -1


def update_cell(cell: MapCell, h_meas: float, var_meas: float, tick: int = 0) -> MapCell:
    """One-dimensional Kalman update of a cell with a height measurement."""
    if var_meas < 0:
        raise ValueError("measurement variance must be non-negative")
    if not cell.observed:
        return replace(cell, height=h_meas, height_variance=var_meas, observed=True,
                       last_update=tick)
    p = cell.height_variance
    s = p + var_meas
    if s == 0.0:
        if h_meas != cell.height:
            log.debug("degenerate fusion of exact heights %g and %g", cell.height, h_meas)
        return replace(cell, height=h_meas, height_variance=0.0, last_update=tick)
    h = (var_meas * cell.height + p * h_meas) / s
    return replace(cell, height=h, height_variance=p * var_meas / s, last_update=tick)


def measurement_variance(point_S, sensor_pose: Pose, range_variance: float) -> float:
    """Height variance of one measurement from ray and attitude uncertainty.

    The range variance lies along the pixel ray, so the range term is
    ``range_variance * (J_S . ray)**2``; the attitude term uses the finite
    difference rotation Jacobian and the pose's rotation covariance block.
    """
    return float(_measurement_terms(np.asarray(point_S, dtype=np.float64)[None, :],
                                    sensor_pose, np.array([float(range_variance)]))[0][0])


def _measurement_terms(points, sensor_pose: Pose, range_var):
    """Heights-independent part of a scan update: (height variance, horizontal variance)."""
    norms = np.sqrt((points * points).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    along = (points @ jacobian_range(None, sensor_pose)) / safe
    along = np.where(norms > 0, along, 0.0)
    var = range_var * along ** 2
    cov_rot = sensor_pose.rotation_covariance
    if cov_rot.any():
        plus, minus = perturbed_height_rows(sensor_pose)
        J = -((points @ plus.T) - (points @ minus.T)) / (2.0 * 1e-6)
        var = var + np.einsum("ni,ij,nj->n", J, cov_rot, J)
    # lateral share of the ray variance, split over two horizontal axes
    lateral = 0.5 * range_var * np.clip(1.0 - along ** 2, 0.0, 1.0)
    hvar = 0.5 * np.trace(sensor_pose.translation_covariance[:2, :2]) + lateral
    return var, hvar


@dataclass
class ScanStats:
    points: int = 0
    integrated: int = 0
    skipped: int = 0


@dataclass
class FusedMap:
    """Fused height and confidence bounds, ``NaN`` where unobserved.

    Arrays are indexed ``[ix, iy]`` in logical (robot-centred) order.
    """

    resolution: float
    origin: tuple
    height: np.ndarray
    h_min: np.ndarray
    h_max: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.height)


class ElevationMap:
    """Circular-buffer elevation grid centred on the robot.

    ``robot_offset`` is the robot's x-y position relative to the grid
    centre; motion updates keep it within half a cell by relabelling whole
    rows and columns. Only one writer may use a map at a time.
    """

    def __init__(self, size=(5.0, 5.0), resolution: float = 0.02,
                 fuse_max_radius: float = 0.3):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        sx, sy = (size, size) if np.isscalar(size) else size
        self.resolution = float(resolution)
        self.nx = int(round(sx / resolution))
        self.ny = int(round(sy / resolution))
        if self.nx < 1 or self.ny < 1:
            raise ValueError("map must have at least one cell per axis")
        self.fuse_max_radius = float(fuse_max_radius)
        shape = (self.nx, self.ny)
        self.height = np.full(shape, np.nan)
        self.height_variance = np.zeros(shape)
        self.horizontal_variance = np.zeros(shape)
        self.observed = np.zeros(shape, dtype=np.uint8)
        self.last_update = np.full(shape, -1, dtype=np.int64)
        self.start = np.zeros(2, dtype=np.int64)  # physical index of logical (0, 0)
        self.robot_offset = np.zeros(2)
        self.tick = 0

    # geometry -----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return (self.nx, self.ny)

    @property
    def cell_count(self) -> int:
        return self.nx * self.ny

    def cell_centers(self):
        """Map-frame x and y of every logical cell centre."""
        r = self.resolution
        x = (np.arange(self.nx) - self.nx / 2.0 + 0.5) * r
        y = (np.arange(self.ny) - self.ny / 2.0 + 0.5) * r
        return x, y

    def logical_index(self, x, y):
        r = self.resolution
        ix = np.floor(np.asarray(x) / r + self.nx / 2.0).astype(np.int64)
        iy = np.floor(np.asarray(y) / r + self.ny / 2.0).astype(np.int64)
        return ix, iy

    def _physical(self, ix, iy):
        return (ix + self.start[0]) % self.nx, (iy + self.start[1]) % self.ny

    def layer(self, name: str) -> np.ndarray:
        """A layer in logical order (a copy)."""
        a = getattr(self, name)
        return np.roll(a, (-int(self.start[0]), -int(self.start[1])), axis=(0, 1))

    def cell(self, ix: int, iy: int) -> MapCell:
        i, j = self._physical(ix, iy)
        if not self.observed[i, j]:
            return MapCell()
        return MapCell(float(self.height[i, j]), float(self.height_variance[i, j]),
                       float(self.horizontal_variance[i, j]), True,
                       int(self.last_update[i, j]))

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())

    def copy(self) -> "ElevationMap":
        out = ElevationMap.__new__(ElevationMap)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})
        return out

    # updates ------------------------------------------------------------

    def integrate_scan(self, points, sensor_pose: Pose) -> ScanStats:
        """Fuse one scan of range points seen from ``sensor_pose`` (sensor in map)."""
        batch = RangePointBatch.from_points(points)
        stats = ScanStats(points=len(batch))
        self.tick += 1
        if len(batch) == 0:
            return stats
        pts = batch.points
        R = sensor_pose.rotation.matrix
        world = pts @ R.T + sensor_pose.translation
        h = -world[:, 2]
        var, hvar = _measurement_terms(pts, sensor_pose, batch.range_variance)
        var = np.maximum(var, VAR_FLOOR)
        ix, iy = self.logical_index(world[:, 0], world[:, 1])
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        stats.skipped = int((~inside).sum())
        if not inside.any():
            return stats
        pi, pj = self._physical(ix[inside], iy[inside])
        stats.integrated = int(kernels.integrate_cells(
            self.height, self.height_variance, self.horizontal_variance, self.observed,
            self.last_update, np.ascontiguousarray(pi), np.ascontiguousarray(pj),
            np.ascontiguousarray(h[inside]), np.ascontiguousarray(var[inside]),
            np.ascontiguousarray(hvar[inside]), self.tick))
        return stats

    def motion_update(self, pose_delta: Pose) -> None:
        """Move the robot by ``pose_delta`` (map axes) and propagate its uncertainty."""
        dx, dy, dz = pose_delta.translation
        cov = pose_delta.covariance
        self.robot_offset += (dx, dy)
        shift = np.round(self.robot_offset / self.resolution).astype(np.int64)
        if shift.any():
            self._shift(int(shift[0]), int(shift[1]))
            self.robot_offset -= shift * self.resolution
        obs = self.observed.astype(bool)
        if dz != 0.0:
            # robot sinking (NED +z) raises everything relative to it
            self.height[obs] += dz
        rot = cov[3:, 3:]
        inflate = cov[2, 2]
        if rot.any():
            x, y = self.cell_centers()
            px = np.roll(x - self.robot_offset[0], int(self.start[0]))[:, None]
            py = np.roll(y - self.robot_offset[1], int(self.start[1]))[None, :]
            # d(height)/d(roll, pitch, yaw) of a map point about the robot
            jr, jp = -py, px
            inflate = inflate + (rot[0, 0] * jr * jr + 2 * rot[0, 1] * jr * jp
                                 + rot[1, 1] * jp * jp)
        if np.any(inflate):
            self.height_variance += np.where(obs, inflate, 0.0)
        hinc = 0.5 * (cov[0, 0] + cov[1, 1])
        if hinc:
            self.horizontal_variance[obs] += hinc

    def _shift(self, kx: int, ky: int) -> None:
        """Relabel the grid after the robot moved ``kx, ky`` whole cells."""
        if abs(kx) >= self.nx or abs(ky) >= self.ny:
            self.clear()
            return
        for axis, k, n in ((0, kx, self.nx), (1, ky, self.ny)):
            if k == 0:
                continue
            # logical rows falling off the trailing edge reappear at the leading edge
            lo = range(n - k, n) if k > 0 else range(0, -k)
            self.start[axis] = (self.start[axis] + k) % n
            phys = [(i + self.start[axis]) % n for i in lo]
            idx = [slice(None), slice(None)]
            idx[axis] = phys
            self._clear_cells(tuple(idx))

    def _clear_cells(self, idx) -> None:
        self.height[idx] = np.nan
        self.height_variance[idx] = 0.0
        self.horizontal_variance[idx] = 0.0
        self.observed[idx] = 0
        self.last_update[idx] = -1

    def clear(self) -> None:
        self._clear_cells((slice(None), slice(None)))

    # fusion -------------------------------------------------------------

    def fuse(self, origin=(0.0, 0.0)) -> FusedMap:
        """Inverse-variance mean over each cell's 2-sigma horizontal circle."""
        names = ("height", "height_variance", "horizontal_variance", "observed")
        h, v, hv, o = (np.ascontiguousarray(self.layer(n)) for n in names)
        cap = max(0, int(np.floor(self.fuse_max_radius / self.resolution)))
        fused, lo, hi = kernels.fuse_grid(h, v, hv, o, self.resolution, cap, VAR_FLOOR)
        return FusedMap(self.resolution, tuple(origin), fused, lo, hi)

    def corner_origin(self) -> tuple:
        """Map-frame position of the outer corner of logical cell (0, 0)."""
        return (-self.nx / 2.0 * self.resolution, -self.ny / 2.0 * self.resolution)

    def snapshot(self, fused: FusedMap | None = None, origin=None,
                 height_shift: float = 0.0) -> Grid:
        """Export layers (and optional fused layers) as a row-major ``Grid``.

        ``origin`` is the world position of the grid's outer corner; by
        default the map's own frame is used. ``height_shift`` is added to the
        raw height layer (fused layers are exported as given).
        """
        if origin is None:
            origin = self.corner_origin()
        layers = {
            "height": self.layer("height").T + height_shift,
            "height_variance": self.layer("height_variance").T,
            "horizontal_variance": self.layer("horizontal_variance").T,
            "observed": self.layer("observed").T.astype(np.float64),
        }
        if fused is not None:
            layers.update(fused_height=fused.height.T, h_min=fused.h_min.T, h_max=fused.h_max.T)
        return Grid(self.nx, self.ny, self.resolution, float(origin[0]), float(origin[1]), layers)
