"""Discrete range-class images turned into sparse 3D range measurements.

A classifier labels every pixel with a probability over range classes
(near, mid, far, free). Only the top edge of each obstacle-class run in an
image column is trusted: there the true range is closest to the class's
representative range. Those pixels are back-projected along their ray, and
the spread of the pixel's class distribution becomes the range variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import kernels

NORM_TOL = 1e-6


@dataclass(frozen=True)
class RangeClassScheme:
    """Range classes; the last class is free space."""

    representative_ranges: tuple = (2.0, 3.0, 4.0, 5.0)
    min_detection: float = 0.45
    bin_edges: tuple | None = None
    min_run: int = 2
    skip_border: bool = True

    def __post_init__(self):
        r = tuple(float(v) for v in self.representative_ranges)
        object.__setattr__(self, "representative_ranges", r)
        if len(r) < 2:
            raise ValueError("need at least one obstacle class and a free-space class")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("representative_ranges must be strictly increasing")
        if r[0] <= self.min_detection:
            raise ValueError("representative_ranges must exceed min_detection")
        if self.bin_edges is None:
            edges = (self.min_detection,) + r[:-1] + (math.inf,)
        else:
            edges = tuple(float(v) for v in self.bin_edges)
        if len(edges) != len(r) + 1:
            raise ValueError(
                f"bin_edges needs {len(r) + 1} entries for {len(r)} classes, got {len(edges)}"
            )
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin_edges must be strictly increasing")
        object.__setattr__(self, "bin_edges", edges)
        if self.min_run < 1:
            raise ValueError("min_run must be >= 1")

    @property
    def class_count(self) -> int:
        return len(self.representative_ranges)

    @property
    def free_class(self) -> int:
        return self.class_count - 1

    @property
    def ranges(self) -> np.ndarray:
        return np.asarray(self.representative_ranges)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int = 512, height: int = 384, hfov_deg: float = 80.0):
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def ray_directions(self) -> np.ndarray:
        """Unit rays for every pixel, shape ``(height, width, 3)``."""
        u = (np.arange(self.width) - self.cx) / self.fx
        v = (np.arange(self.height) - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = u[None, :]
        d[..., 1] = v[:, None]
        d[..., 2] = 1.0
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d


@dataclass
class RangeClassImage:
    """Per-pixel class probabilities, stored class-major as ``(classes, height, width)``."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3:
            raise ValueError("probs must be (classes, height, width)")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be non-negative")
        err = np.abs(self.probs.sum(axis=0) - 1.0).max(initial=0.0)
        if err > NORM_TOL:
            raise ValueError(f"pixel probabilities do not sum to 1 (max error {err:.3g})")

    @property
    def classes(self) -> int:
        return self.probs.shape[0]

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def from_labels(cls, labels, class_count: int) -> "RangeClassImage":
        labels = np.asarray(labels)
        probs = np.zeros((class_count,) + labels.shape)
        for c in range(class_count):
            probs[c][labels == c] = 1.0
        return cls(probs)

    def variance_image(self, scheme: RangeClassScheme) -> np.ndarray:
        """Per-pixel range variance (the uncertainty visualisation)."""
        _, var = moments_image(self.probs, scheme)
        return var


@dataclass(frozen=True)
class RangePoint:
    point_S: np.ndarray
    range_mean: float
    range_variance: float
    pixel: tuple


@dataclass
class RangePointBatch:
    """Struct-of-arrays form of a list of :class:`RangePoint`.

    Iterating yields ``RangePoint`` objects in sensing order.
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    range_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    range_variance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.range_mean)

    def __getitem__(self, i: int) -> RangePoint:
        return RangePoint(
            self.points[i].copy(),
            float(self.range_mean[i]),
            float(self.range_variance[i]),
            (int(self.pixels[i, 0]), int(self.pixels[i, 1])),
        )

    def __iter__(self) -> Iterator[RangePoint]:
        for i in range(len(self)):
            yield self[i]

    def to_list(self) -> list[RangePoint]:
        return list(self)

    @classmethod
    def from_points(cls, pts: Sequence[RangePoint]) -> "RangePointBatch":
        if isinstance(pts, RangePointBatch):
            return pts
        if len(pts) == 0:
            return cls()
        return cls(
            points=np.array([p.point_S for p in pts], dtype=np.float64).reshape(-1, 3),
            range_mean=np.array([p.range_mean for p in pts], dtype=np.float64),
            range_variance=np.array([p.range_variance for p in pts], dtype=np.float64),
            pixels=np.array([p.pixel for p in pts], dtype=np.int64).reshape(-1, 2),
            classes=np.full(len(pts), -1, dtype=np.int64),
        )


def pixel_range_moments(pdf, scheme: RangeClassScheme) -> tuple[float, float]:
    """Mean and variance of the range implied by one pixel's class distribution."""
    p = np.asarray(pdf, dtype=np.float64)
    if p.shape != (scheme.class_count,):
        raise ValueError(f"pdf must have {scheme.class_count} entries, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError("pdf must be non-negative and sum to 1")
    r = scheme.ranges
    mean = float(np.dot(r, p))
    var = float(np.dot((r - mean) ** 2, p))
    return mean, var


def moments_image(probs: np.ndarray, scheme: RangeClassScheme):
    """Vectorised :func:`pixel_range_moments` over a ``(C, ...)`` stack."""
    r = scheme.ranges.reshape((-1,) + (1,) * (probs.ndim - 1))
    mean = (probs * r).sum(axis=0)
    var = (probs * (r - mean) ** 2).sum(axis=0)
    return mean, var


def sensor_covariance(variance: float) -> np.ndarray:
    """Ray-frame sensor covariance: all uncertainty lies along the ray axis."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    return np.diag([0.0, 0.0, float(variance)])


def extract_boundary_pixels(image: RangeClassImage, scheme: RangeClassScheme):
    """Top pixel of every obstacle-class run, scanning columns top to bottom.

    Returns ``[((u, v), class_index), ...]`` in column-major order.
    """
    rows, cols, cls = _boundaries(image, scheme)
    return [((int(u), int(v)), int(c)) for v, u, c in zip(rows, cols, cls)]


def _boundaries(image: RangeClassImage, scheme: RangeClassScheme):
    if image.classes != scheme.class_count:
        raise ValueError(
            f"image has {image.classes} classes but scheme expects {scheme.class_count}"
        )
    return kernels.extract_boundaries(
        image.probs, scheme.free_class, scheme.min_run, scheme.skip_border
    )


def backproject(pixel, class_index: int, intrinsics: CameraIntrinsics,
                scheme: RangeClassScheme, pdf) -> RangePoint:
    u, v = pixel
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise ValueError(f"pixel {pixel} outside {intrinsics.width}x{intrinsics.height} image")
    if not 0 <= class_index < scheme.free_class:
        raise ValueError(f"class {class_index} is not an obstacle class")
    d = np.array([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0])
    d /= np.linalg.norm(d)
    mean, var = pixel_range_moments(pdf, scheme)
    return RangePoint(scheme.representative_ranges[class_index] * d, mean, var, (u, v))


def sense(image: RangeClassImage, intrinsics: CameraIntrinsics,
          scheme: RangeClassScheme) -> RangePointBatch:
    """Boundary extraction followed by back-projection of every boundary pixel."""
    if (image.width, image.height) != (intrinsics.width, intrinsics.height):
        raise ValueError("image size does not match intrinsics")
    rows, cols, cls = _boundaries(image, scheme)
    if len(rows) == 0:
        return RangePointBatch()
    d = np.empty((len(rows), 3))
    d[:, 0] = (cols - intrinsics.cx) / intrinsics.fx
    d[:, 1] = (rows - intrinsics.cy) / intrinsics.fy
    d[:, 2] = 1.0
    d /= np.sqrt((d * d).sum(axis=1))[:, None]
    pdfs = image.probs[:, rows, cols]
    mean, var = moments_image(pdfs, scheme)
    pts = d * scheme.ranges[cls][:, None]
    return RangePointBatch(
        points=pts,
        range_mean=mean,
        range_variance=var,
        pixels=np.stack([cols, rows], axis=1).astype(np.int64),
        classes=cls.astype(np.int64),
    )
