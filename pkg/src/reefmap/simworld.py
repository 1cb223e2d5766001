"""Synthetic underwater world standing in for a trained range classifier.

Terrain is an analytic heightfield (up-positive elevation over world x-y).
A pinhole camera ray-casts true ranges, which are binned into range classes
and optionally degraded toward uniform class distributions before being
handed to the mapper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from . import kernels
from ._pykernels import BOX, GAUSS, PLANE, SINE
from .elevmap import ElevationMap, FusedMap
from .geometry import Pose, Rotation, rot_x, rot_y, rot_z
from .io_formats import Grid, ScenarioConfig
from .rangesensor import CameraIntrinsics, RangeClassImage, RangeClassScheme, sense

TILE_SIZE = 0.25


class ScenarioError(ValueError):
    pass


@dataclass
class Heightfield:
    """Sum of analytic features; each row is ``[kind, p0..p6]``.

    Box features are the only discontinuities (cliffs). ``extent`` bounds
    the region where empty-space skipping is precomputed.
    """

    features: np.ndarray
    extent: tuple = (-10.0, 30.0, -10.0, 10.0)
    regions: dict = field(default_factory=dict)
    _tiles: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64).reshape(-1, 8))

    def height(self, x, y):
        return kernels.eval_heightfield(self.features, x, y)

    def region_mask(self, name: str, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        mask = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for x0, x1, y0, y1 in self.regions.get(name, []):
            mask |= (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
        return mask

    def tiles(self):
        """Upper bound of the terrain height on each square tile of the extent."""
        if self._tiles is None:
            x0, x1, y0, y1 = self.extent
            nx = int(math.ceil((x1 - x0) / TILE_SIZE))
            ny = int(math.ceil((y1 - y0) / TILE_SIZE))
            ax = x0 + np.arange(nx) * TILE_SIZE
            ay = y0 + np.arange(ny) * TILE_SIZE
            X0, Y0 = np.meshgrid(ax, ay, indexing="ij")
            X1, Y1 = X0 + TILE_SIZE, Y0 + TILE_SIZE
            bound = np.zeros((nx, ny))
            lip = np.zeros((nx, ny))
            for f in self.features:
                bound += _feature_upper_bound(f, X0, X1, Y0, Y1)
                lip += _feature_lipschitz(f, X0, X1, Y0, Y1)
            self._tiles = (x0, y0, TILE_SIZE, bound + 1e-9, lip * (1 + 1e-9))
        return self._tiles

    # library ------------------------------------------------------------

    @classmethod
    def flat(cls, height: float = 0.0) -> "Heightfield":
        return cls([[PLANE, height, 0, 0, 0, 0, 0, 0]])

    @classmethod
    def wall(cls, x0: float = 2.5, height: float = 3.0, base: float = 0.0) -> "Heightfield":
        return cls([[PLANE, base, 0, 0, 0, 0, 0, 0],
                    [BOX, x0, 1e6, -1e6, 1e6, height - base, 0, 0]])

    @classmethod
    def plateau_gap(cls, base=0.0, top=1.6, x_start=2.0, gap_start=6.0, gap_width=0.5,
                    x_end=10.0, y_min=0.9, y_max=3.0, mirror=True,
                    gap_floor=None) -> "Heightfield":
        """Two plateaus beside the path separated by a gap narrower than a range bin.

        The gap bottom sits at ``base`` unless ``gap_floor`` cuts it deeper.
        """
        rise = top - base
        gap_end = gap_start + gap_width
        spans = [(y_min, y_max)] + ([(-y_max, -y_min)] if mirror else [])
        feats = [[PLANE, base, 0, 0, 0, 0, 0, 0]]
        plateaus, gaps = [], []
        for ya, yb in spans:
            feats.append([BOX, x_start, gap_start, ya, yb, rise, 0, 0])
            feats.append([BOX, gap_end, x_end, ya, yb, rise, 0, 0])
            if gap_floor is not None and gap_floor != base:
                feats.append([BOX, gap_start, gap_end, ya, yb, gap_floor - base, 0, 0])
            plateaus += [(x_start, gap_start, ya, yb), (gap_end, x_end, ya, yb)]
            gaps.append((gap_start, gap_end, ya, yb))
        return cls(feats, regions={"plateau": plateaus, "gap": gaps})

    @classmethod
    def undulating(cls, base=0.0, amplitude=0.2, wavelength_x=3.0, wavelength_y=5.0,
                   phase_x=0.0, phase_y=0.0, bumps=()) -> "Heightfield":
        """Smooth sinusoidal relief plus optional Gaussian bumps ``[x, y, amp, sigma]``."""
        feats = [[PLANE, base, 0, 0, 0, 0, 0, 0],
                 [SINE, amplitude, wavelength_x, phase_x, wavelength_y, phase_y, 0, 0]]
        for bx, by, amp, sig in bumps:
            feats.append([GAUSS, amp, bx, by, sig, 0, 0, 0])
        return cls(feats)

    @classmethod
    def from_config(cls, world: dict) -> "Heightfield":
        params = {k: v for k, v in world.items() if k != "kind"}
        builder = {"flat": cls.flat, "wall": cls.wall, "plateau_gap": cls.plateau_gap,
                   "undulating": cls.undulating}.get(world["kind"])
        if builder is None:
            raise ScenarioError(f"unknown world kind {world['kind']!r}")
        return builder(**params)


def _feature_upper_bound(f, X0, X1, Y0, Y1):
    kind = int(f[0])
    p = f[1:]
    if kind == PLANE:
        corners = [p[0] + p[1] * x + p[2] * y for x in (X0, X1) for y in (Y0, Y1)]
        return np.maximum.reduce(corners)
    if kind == BOX:
        overlap = (X1 >= p[0]) & (X0 <= p[1]) & (Y1 >= p[2]) & (Y0 <= p[3])
        return np.where(overlap, max(p[4], 0.0), 0.0)
    if kind == GAUSS:
        if p[0] <= 0:
            return np.zeros_like(X0)
        dx = np.maximum(0.0, np.maximum(X0 - p[1], p[1] - X1))
        dy = np.maximum(0.0, np.maximum(Y0 - p[2], p[2] - Y1))
        return p[0] * np.exp(-(dx * dx + dy * dy) / (2.0 * p[3] ** 2))
    if kind == SINE:
        a = abs(p[0])
        cx, cy = 0.5 * (X0 + X1), 0.5 * (Y0 + Y1)
        centre = p[0] * np.sin(2 * np.pi * cx / p[1] + p[2]) * np.cos(2 * np.pi * cy / p[3] + p[4])
        lip = a * 2 * np.pi * math.hypot(1.0 / p[1], 1.0 / p[3])
        half_diag = 0.5 * np.hypot(X1 - X0, Y1 - Y0)
        return np.minimum(a, centre + lip * half_diag)
    raise ValueError(f"unknown feature kind {kind}")


def _feature_lipschitz(f, X0, X1, Y0, Y1):
    """Bound on the horizontal slope of one feature within each tile (inf at cliffs)."""
    kind = int(f[0])
    p = f[1:]
    if kind == PLANE:
        return np.full(X0.shape, math.hypot(p[1], p[2]))
    if kind == BOX:
        touches = (X1 >= p[0]) & (X0 <= p[1]) & (Y1 >= p[2]) & (Y0 <= p[3])
        inside = (X0 > p[0]) & (X1 < p[1]) & (Y0 > p[2]) & (Y1 < p[3])
        return np.where(touches & ~inside, np.inf, 0.0)
    if kind == GAUSS:
        return np.full(X0.shape, abs(p[0]) / (abs(p[3]) * math.sqrt(math.e)))
    if kind == SINE:
        return np.full(X0.shape, abs(p[0]) * 2 * np.pi * math.hypot(1.0 / p[1], 1.0 / p[3]))
    raise ValueError(f"unknown feature kind {kind}")


@dataclass(frozen=True)
class DegradationModel:
    """Flattens class distributions the way image noise/blur does to a classifier.

    ``epsilon`` blends each pixel toward the uniform distribution; ``smear``
    box-averages distributions over a ``(2k+1)^2`` window. Both are
    deterministic; ``seed`` is recorded for provenance.
    """

    epsilon: float = 0.0
    smear: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.smear < 0:
            raise ValueError("smear must be >= 0")


@dataclass
class Trajectory:
    times: list
    poses: list

    def __len__(self) -> int:
        return len(self.poses)

    @classmethod
    def transect(cls, start_x=0.0, end_x=12.0, y=0.0, elevation=1.0, step=0.1,
                 speed=0.5, translation_sigma=0.0, rotation_sigma=0.0) -> "Trajectory":
        n = int(round((end_x - start_x) / step))
        cov = np.diag([translation_sigma ** 2] * 3 + [rotation_sigma ** 2] * 3)
        xs = start_x + step * np.arange(n + 1)
        poses = [Pose((x, y, -elevation), Rotation(), cov) for x in xs]
        return cls(list((xs - start_x) / speed), poses)

    @classmethod
    def empty(cls) -> "Trajectory":
        return cls([], [])


def camera_extrinsic(tilt_deg: float = 15.0, mount_x: float = 0.0) -> Pose:
    """Forward camera on a NED body: optical axis along body x, tilted down."""
    R = rot_y(-math.radians(tilt_deg)) @ rot_z(math.pi / 2) @ rot_x(math.pi / 2)
    return Pose((mount_x, 0.0, 0.0), Rotation.from_matrix(R))


def raycast(heightfield: Heightfield, sensor_pose: Pose, intrinsics: CameraIntrinsics,
            max_range: float = 10.0, step: float = 0.01, use_tiles: bool = True) -> np.ndarray:
    """True Euclidean range per pixel (``inf`` when nothing is hit).

    ``sensor_pose`` maps camera coordinates into the NED world frame.
    """
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    d_cam = intrinsics.ray_directions().reshape(-1, 3)
    d = d_cam @ sensor_pose.rotation.matrix.T
    d[:, 2] *= -1.0  # NED down -> up-positive elevation
    tx, ty, tz = sensor_pose.translation
    origin = (tx, ty, -tz)
    tiles = heightfield.tiles() if use_tiles else None
    r = kernels.raycast(heightfield.features, tiles, origin, np.ascontiguousarray(d), step,
                        max_range)
    return r.reshape(intrinsics.height, intrinsics.width)


def bin_ranges(true_range, scheme: RangeClassScheme) -> np.ndarray:
    """Class index per range; below the minimum range clamps to near, ``inf`` is free."""
    inner = np.asarray(scheme.bin_edges[1:-1])
    return np.searchsorted(inner, np.asarray(true_range), side="right")


def classify(true_range, scheme: RangeClassScheme,
             degradation: DegradationModel = DegradationModel()) -> RangeClassImage:
    r = np.asarray(true_range, dtype=np.float64)
    labels = bin_ranges(r, scheme)
    C = scheme.class_count
    probs = (labels[None, :, :] == np.arange(C)[:, None, None]).astype(np.float64)
    if degradation.smear > 0:
        size = 2 * degradation.smear + 1
        probs = np.stack([uniform_filter(p, size=size, mode="nearest") for p in probs])
        # the running-sum filter can leave -1e-17 residue where a class is absent
        np.clip(probs, 0.0, None, out=probs)
        probs /= probs.sum(axis=0, keepdims=True)
    eps = degradation.epsilon
    if eps > 0:
        probs = (1.0 - eps) * probs + eps / C
    return RangeClassImage(probs)


@dataclass
class ScenarioResult:
    fused: FusedMap
    map_grid: Grid
    truth: Grid
    logs: list
    elevation_map: ElevationMap
    timings: dict


def run_scenario(heightfield: Heightfield, trajectory: Trajectory,
                 intrinsics: CameraIntrinsics, scheme: RangeClassScheme,
                 degradation: DegradationModel, map_config, *,
                 extrinsic: Pose | None = None, max_range: float = 10.0,
                 march_step: float | None = None, translation_sigma: float = 0.0,
                 rotation_sigma: float = 0.0, seed: int = 0,
                 range_cache: dict | None = None) -> ScenarioResult:
    """Fly the trajectory: raycast, classify, sense, move the map, integrate, then fuse.

    The mapper receives odometry deltas and attitude perturbed by the
    configured noise (seeded), together with the matching covariances. The
    exported grids are placed in world x-y around the true final pose, with
    heights relative to the first pose's elevation.

    ``range_cache`` (frame index -> range image) lets repeated runs over the
    same world, trajectory and camera skip the ray casting.
    """
    import time

    if extrinsic is None:
        extrinsic = camera_extrinsic()
    step = march_step if march_step else map_config.resolution / 2.0
    emap = ElevationMap((map_config.size_x, map_config.size_y), map_config.resolution,
                        map_config.fuse_max_radius)
    rng = np.random.default_rng(seed)
    st, sr = translation_sigma, rotation_sigma
    delta_cov = np.diag([st ** 2] * 3 + [sr ** 2] * 3)
    att_cov = np.diag([0.0] * 3 + [sr ** 2] * 3)
    timings = {"raycast": 0.0, "classify": 0.0, "sense": 0.0, "motion_update": 0.0,
               "integrate_scan": 0.0, "fuse": 0.0}
    logs = []
    est_dz = 0.0
    prev = None
    for k, (t, pose) in enumerate(zip(trajectory.times, trajectory.poses)):
        c0 = time.perf_counter()
        if range_cache is not None and k in range_cache:
            ranges = range_cache[k]
        else:
            ranges = raycast(heightfield, pose @ extrinsic, intrinsics, max_range, step)
            if range_cache is not None:
                range_cache[k] = ranges
        c1 = time.perf_counter()
        image = classify(ranges, scheme, degradation)
        c2 = time.perf_counter()
        points = sense(image, intrinsics, scheme)
        c3 = time.perf_counter()
        if prev is not None:
            delta = pose.translation - prev.translation + rng.normal(0.0, 1.0, 3) * st
            est_dz += delta[2]
            emap.motion_update(Pose(delta, Rotation(), delta_cov))
        c4 = time.perf_counter()
        noise = rng.normal(0.0, 1.0, 3) * sr
        rot = pose.rotation
        est = Rotation(yaw=rot.yaw + noise[2], pitch=rot.pitch + noise[1], roll=rot.roll + noise[0])
        base_in_map = Pose((emap.robot_offset[0], emap.robot_offset[1], 0.0), est, att_cov)
        stats = emap.integrate_scan(points, base_in_map @ extrinsic)
        c5 = time.perf_counter()
        prev = pose
        for key, dt in zip(("raycast", "classify", "sense", "motion_update", "integrate_scan"),
                           (c1 - c0, c2 - c1, c3 - c2, c4 - c3, c5 - c4)):
            timings[key] += dt
        logs.append({
            "step": k, "time": float(t), "x": float(pose.translation[0]),
            "points": stats.points, "integrated": stats.integrated, "skipped": stats.skipped,
            "mean_sigma2_z": float(image.variance_image(scheme).mean()),
            "observed_cells": emap.observed_count,
        })
    c0 = time.perf_counter()
    fused = emap.fuse()
    timings["fuse"] = time.perf_counter() - c0

    if trajectory.poses:
        final_xy = trajectory.poses[-1].translation[:2]
        elev0 = -trajectory.poses[0].translation[2]
    else:
        final_xy, elev0 = np.zeros(2), 0.0
    cx, cy = emap.corner_origin()
    ox = float(final_xy[0] - emap.robot_offset[0] + cx)
    oy = float(final_xy[1] - emap.robot_offset[1] + cy)
    fused = FusedMap(fused.resolution, (ox, oy), fused.height - est_dz,
                     fused.h_min - est_dz, fused.h_max - est_dz)
    map_grid = map_to_grid(emap, fused, (ox, oy), height_shift=-est_dz)
    truth = truth_grid(heightfield, map_grid, elev0)
    return ScenarioResult(fused, map_grid, truth, logs, emap, timings)


def map_to_grid(emap: ElevationMap, fused: FusedMap | None, origin, height_shift=0.0) -> Grid:
    """Export a map (and optional fused layers) as a row-major ``Grid``."""
    return emap.snapshot(fused, origin, height_shift)


def truth_grid(heightfield: Heightfield, like: Grid, elevation_ref: float = 0.0) -> Grid:
    """Ground truth on the cells of ``like``, relative to ``elevation_ref``."""
    x, y = like.cell_centers()
    h = heightfield.height(x[None, :], y[:, None]) - elevation_ref
    zeros = np.zeros_like(h)
    layers = {"height": h, "height_variance": zeros, "horizontal_variance": zeros,
              "fused_height": h, "h_min": h, "h_max": h, "observed": np.ones_like(h)}
    return Grid(like.cells_x, like.cells_y, like.resolution, like.origin_x, like.origin_y, layers)


def scenario_parts(cfg: ScenarioConfig):
    """Build the simulation objects described by a validated config."""
    s = cfg.scheme
    scheme = RangeClassScheme(tuple(s.representative_ranges), s.min_detection,
                              tuple(s.bin_edges) if s.bin_edges else None, s.min_run,
                              s.skip_border)
    c = cfg.camera
    intr = CameraIntrinsics.from_fov(c.width, c.height, c.hfov_deg)
    t = cfg.trajectory
    traj = Trajectory.transect(t.start_x, t.end_x, t.y, t.elevation, t.step, t.speed)
    d = cfg.degradation
    return {
        "heightfield": Heightfield.from_config(cfg.world),
        "trajectory": traj,
        "intrinsics": intr,
        "scheme": scheme,
        "degradation": DegradationModel(d.epsilon, d.smear, d.seed),
        "extrinsic": camera_extrinsic(c.tilt_deg, c.mount_x),
    }


def run_config(cfg: ScenarioConfig, epsilon: float | None = None,
               range_cache: dict | None = None) -> ScenarioResult:
    parts = scenario_parts(cfg)
    if epsilon is not None:
        d = parts["degradation"]
        parts["degradation"] = DegradationModel(epsilon, d.smear, d.seed)
    if parts["scheme"].class_count != len(cfg.scheme.representative_ranges):
        raise ScenarioError("scheme/class count mismatch")
    return run_scenario(
        parts["heightfield"], parts["trajectory"], parts["intrinsics"], parts["scheme"],
        parts["degradation"], cfg.map, extrinsic=parts["extrinsic"],
        max_range=cfg.camera.max_range, march_step=cfg.camera.march_step or None,
        translation_sigma=cfg.noise.translation_sigma,
        rotation_sigma=math.radians(cfg.noise.rotation_sigma_deg), seed=cfg.seed.value,
        range_cache=range_cache)
