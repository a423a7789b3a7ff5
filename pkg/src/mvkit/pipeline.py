"""Geometric reference detection pipeline.

Projected view heatmaps are fused on the ground grid by a mask-aware
mean (or max), peaks are pulled out by greedy NMS capped at the top 200,
and a two-cluster score split drops the noise tail.  The module also
provides the ground/image mean-squared losses as pure functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import GridMismatch, ShapeMismatch
from .geometry import GroundGrid, Homography
from .warp import GroundMap, ImageBuffer, ValidMask, project_to_ground

TOP_K_DETECTIONS = 200


class AggregationMode(enum.Enum):
    MEAN = "mean"
    MAX = "max"


class Detection(NamedTuple):
    x: float  # grid cells (col)
    y: float  # grid cells (row)
    score: float


@dataclass(frozen=True)
class DetectionSet:
    """Scored point detections in grid-cell coordinates for one frame."""

    frame: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        dets = tuple(Detection(float(d[0]), float(d[1]), float(d[2])) for d in self.detections)
        for d in dets:
            if not (math.isfinite(d.x) and math.isfinite(d.y)):
                raise ValueError("detection position must be finite")
            if not (0.0 <= d.score <= 1.0):
                raise ValueError(f"detection score {d.score} outside [0, 1]")
        object.__setattr__(self, "detections", dets)

    def __len__(self) -> int:
        return len(self.detections)

    def scores(self) -> np.ndarray:
        return np.array([d.score for d in self.detections], dtype=np.float64)

    def positions(self) -> np.ndarray:
        return np.array([[d.x, d.y] for d in self.detections], dtype=np.float64).reshape(-1, 2)


def aggregate_ground_maps(
    maps: list[GroundMap], masks: list[ValidMask], mode: AggregationMode
) -> GroundMap:
    """Fuse per-view ground maps cell-wise over their valid contributors.

    MEAN averages the views whose sample is valid at a cell, MAX takes
    their maximum; cells valid in no view become 0.
    """
    if not maps:
        raise ValueError("need at least one map")
    if len(maps) != len(masks):
        raise ShapeMismatch("need one mask per map")
    grid = maps[0].grid
    channels = maps[0].channels
    for m in maps[1:]:
        if m.grid != grid or m.channels != channels:
            raise GridMismatch("all maps must share one grid and channel count")
    for m, mask in zip(maps, masks):
        if mask.shape != (grid.rows, grid.cols):
            raise ShapeMismatch("mask shape does not match grid")
    stack = np.stack([m.data.astype(np.float64) for m in maps])  # (v, r, c, ch)
    valid = np.stack(masks)[:, :, :, None]  # (v, r, c, 1)
    if mode is AggregationMode.MEAN:
        count = valid.sum(axis=0)
        total = np.where(valid, stack, 0.0).sum(axis=0)
        out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    elif mode is AggregationMode.MAX:
        out = np.where(valid, stack, -np.inf).max(axis=0)
        out[~np.isfinite(out)] = 0.0
    else:
        raise ValueError(f"unknown aggregation mode {mode}")
    return GroundMap(grid, out.astype(np.float32))


def default_nms_radius(grid: GroundGrid, match_threshold_m: float = 0.5) -> float:
    """Suppression radius tied to the evaluation threshold: ceil(thr/cell)."""
    return float(math.ceil(match_threshold_m / grid.cell_size))


def nms_heatmap(
    ground: GroundMap,
    radius_cells: float,
    max_peaks: int = TOP_K_DETECTIONS,
    frame: int = 0,
) -> DetectionSet:
    """Greedy non-maximum suppression on a single-channel ground map.

    Repeatedly emits the global maximum (ties broken by lowest row-major
    index) and zeroes every cell within Euclidean ``radius_cells`` of it;
    stops at ``max_peaks`` or when the maximum drops to <= 0.
    """
    if ground.channels != 1:
        raise ShapeMismatch("NMS expects a single-channel map")
    if radius_cells <= 0:
        raise ValueError("radius must be positive")
    heat = ground.plane(0).astype(np.float64).copy()
    rows, cols = heat.shape
    r_int = int(math.floor(radius_cells))
    dy, dx = np.mgrid[-r_int : r_int + 1, -r_int : r_int + 1]
    disk = (dy * dy + dx * dx) <= radius_cells * radius_cells
    peaks = []
    for _ in range(max_peaks):
        idx = int(np.argmax(heat))
        value = heat.flat[idx]
        if value <= 0.0:
            break
        py, px = divmod(idx, cols)
        peaks.append(Detection(float(px), float(py), min(float(value), 1.0)))
        y0, y1 = max(0, py - r_int), min(rows - 1, py + r_int)
        x0, x1 = max(0, px - r_int), min(cols - 1, px + r_int)
        window = disk[
            y0 - py + r_int : y1 - py + r_int + 1,
            x0 - px + r_int : x1 - px + r_int + 1,
        ]
        heat[y0 : y1 + 1, x0 : x1 + 1][window] = 0.0
    return DetectionSet(frame=frame, detections=tuple(peaks))


def kmeans2_score_filter(dets: DetectionSet) -> DetectionSet:
    """Keep the high-score cluster of a 1-D, K=2 Lloyd clustering.

    Centroids start at the min and max score and iterate to exact
    convergence; with fewer than 2 detections or all-equal scores the
    input comes back unchanged.
    """
    n = len(dets)
    if n < 2:
        return dets
    scores = dets.scores()
    c_lo, c_hi = float(scores.min()), float(scores.max())
    if c_lo == c_hi:
        return dets
    assign = None
    for _ in range(n + 2):
        # nearest centroid in 1-D == midpoint threshold; ties go to the
        # high cluster.  The min score stays strictly below the midpoint
        # and the max at or above it, so neither cluster can empty.
        new_assign = scores >= (c_lo + c_hi) / 2.0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        c_lo = float(scores[~assign].mean())
        c_hi = float(scores[assign].mean())
    kept = tuple(d for d, keep in zip(dets.detections, assign) if keep)
    return DetectionSet(frame=dets.frame, detections=kept)


def mse_ground_loss(x: GroundMap, x_hat: GroundMap) -> float:
    """Mean over cells of the squared difference of two ground maps."""
    if x.grid != x_hat.grid:
        raise GridMismatch("ground maps live on different grids")
    if x.channels != 1 or x_hat.channels != 1:
        raise ShapeMismatch("ground loss expects single-channel maps")
    diff = x.plane(0).astype(np.float64) - x_hat.plane(0).astype(np.float64)
    return float(np.mean(diff * diff))


def mse_image_loss(r: list[ImageBuffer], r_hat: list[ImageBuffer]) -> float:
    """Average over views of the per-view mean squared error."""
    if len(r) != len(r_hat) or not r:
        raise ShapeMismatch("need equal-length non-empty view lists")
    total = 0.0
    for a, b in zip(r, r_hat):
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"view shapes differ: {a.data.shape} vs {b.data.shape}")
        diff = a.data.astype(np.float64) - b.data.astype(np.float64)
        total += float(np.mean(diff * diff))
    return total / len(r)


def run_detection(
    images: list[ImageBuffer],
    t_grids: list[Homography],
    grid: GroundGrid,
    nms_radius: float | None = None,
    mode: AggregationMode = AggregationMode.MEAN,
    frame: int = 0,
    max_peaks: int = TOP_K_DETECTIONS,
) -> DetectionSet:
    """Full reference pipeline: project, aggregate, NMS, score filter."""
    if not images or len(images) != len(t_grids):
        raise ShapeMismatch("need one projection per image")
    maps, masks = [], []
    for img, t in zip(images, t_grids):
        ground, mask = project_to_ground(img, t, grid)
        maps.append(ground)
        masks.append(mask)
    fused = aggregate_ground_maps(maps, masks, mode)
    radius = default_nms_radius(grid) if nms_radius is None else nms_radius
    dets = nms_heatmap(fused, radius, max_peaks=max_peaks, frame=frame)
    return kmeans2_score_filter(dets)
