"""Deterministic synthetic multi-camera scenes for closed-loop testing.

Cameras sit on a ring around the area center, all aimed at the center of
the ground plane; pedestrians are ground points redrawn uniformly inside
the area every frame.  The renderers produce idealized detection
heatmaps: unit-peak Gaussians at each pedestrian's feet, in the image
plane and on the ground grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLookAt
from .geometry import CameraCalibration, GroundGrid, Point2
from .warp import GroundMap, ImageBuffer

_PED_STREAM = 0x504544


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene parameters.

    Defaults are the desk-scale setup used by the test suite: 4 cameras on
    a ring, 20 pedestrians over 10 frames, small images, and a grid that
    comfortably contains the walkable area.
    """

    area_w: float = 33.0
    area_h: float = 13.0
    n_cameras: int = 4
    camera_height: float = 22.0
    camera_ring_radius: float = 14.0
    n_pedestrians: int = 20
    n_frames: int = 10
    image_w: int = 320
    image_h: int = 240
    focal_px: float = 190.0
    heat_sigma_px: float = 1.5
    seed: int = 0

    def __post_init__(self):
        positive = (
            self.area_w,
            self.area_h,
            self.camera_height,
            self.camera_ring_radius,
            self.n_pedestrians,
            self.n_frames,
            self.image_w,
            self.image_h,
            self.focal_px,
            self.heat_sigma_px,
        )
        if any(v <= 0 or not math.isfinite(v) for v in positive):
            raise ValueError("all scene parameters must be positive and finite")
        if self.n_cameras < 2:
            raise ValueError("need at least 2 cameras")

    def to_dict(self) -> dict:
        return {
            "area_w": self.area_w,
            "area_h": self.area_h,
            "n_cameras": self.n_cameras,
            "camera_height": self.camera_height,
            "camera_ring_radius": self.camera_ring_radius,
            "n_pedestrians": self.n_pedestrians,
            "n_frames": self.n_frames,
            "image_w": self.image_w,
            "image_h": self.image_h,
            "focal_px": self.focal_px,
            "heat_sigma_px": self.heat_sigma_px,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneConfig":
        return SceneConfig(**d)


def default_grid() -> GroundGrid:
    """Grid matching the default SceneConfig: 288x128 cells of 0.125 m,
    centered on the world origin (dyadic values round-trip exactly)."""
    cols, rows, cs = 288, 128, 0.125
    return GroundGrid(
        rows=rows,
        cols=cols,
        cell_size=cs,
        origin=(-(cols - 1) / 2.0 * cs, -(rows - 1) / 2.0 * cs),
    )


@dataclass(frozen=True)
class SyntheticScene:
    """Cameras plus per-frame pedestrian ground positions (stable ids)."""

    config: SceneConfig
    cameras: tuple[CameraCalibration, ...]
    frames: tuple[tuple[Point2, ...], ...]  # frames[f][ped_id] -> world meters


def look_at_extrinsics(cam_pos, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Extrinsics for a camera at ``cam_pos`` aimed at ``target``.

    Camera frame follows the usual vision convention (x right, y down,
    z forward); returns (R, t) with t = -R @ cam_pos.
    """
    cam_pos = np.asarray(cam_pos, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    fwd = target - cam_pos
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise DegenerateLookAt("camera position equals target")
    z = fwd / norm
    x = np.cross(z, up)
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        raise DegenerateLookAt("up vector is parallel to the viewing direction")
    x = x / xn
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=0)
    return r, -r @ cam_pos


def _ring_camera(cfg: SceneConfig, index: int) -> CameraCalibration:
    angle = 2.0 * math.pi * index / cfg.n_cameras
    pos = np.array(
        [
            cfg.camera_ring_radius * math.cos(angle),
            cfg.camera_ring_radius * math.sin(angle),
            cfg.camera_height,
        ]
    )
    r, t = look_at_extrinsics(pos, (0.0, 0.0, 0.0))
    k = np.array(
        [
            [cfg.focal_px, 0.0, (cfg.image_w - 1) / 2.0],
            [0.0, cfg.focal_px, (cfg.image_h - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraCalibration(K=k, R=r, t=t)


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Build the camera ring and draw pedestrian positions for every frame.

    Deterministic in cfg.seed; each frame has its own derived stream so
    frames can be regenerated independently.
    """
    cameras = tuple(_ring_camera(cfg, i) for i in range(cfg.n_cameras))
    frames = []
    for f in range(cfg.n_frames):
        rng = np.random.default_rng(np.random.SeedSequence([_PED_STREAM, cfg.seed, f]))
        xs = rng.uniform(-cfg.area_w / 2.0, cfg.area_w / 2.0, size=cfg.n_pedestrians)
        ys = rng.uniform(-cfg.area_h / 2.0, cfg.area_h / 2.0, size=cfg.n_pedestrians)
        frames.append(tuple(Point2(float(x), float(y)) for x, y in zip(xs, ys)))
    return SyntheticScene(config=cfg, cameras=cameras, frames=tuple(frames))


def _splat_gaussians(
    shape_hw: tuple[int, int], centers: list[tuple[float, float]], sigma: float
) -> np.ndarray:
    """Sum of unit-peak Gaussians, clamped to 1, evaluated at pixel centers.

    Each splat only touches a +-5 sigma window around its center.
    """
    h, w = shape_hw
    out = np.zeros((h, w), dtype=np.float64)
    reach = max(1, int(math.ceil(5.0 * sigma)))
    for cx, cy in centers:
        x0 = max(0, int(math.floor(cx)) - reach)
        x1 = min(w - 1, int(math.ceil(cx)) + reach)
        y0 = max(0, int(math.floor(cy)) - reach)
        y1 = min(h - 1, int(math.ceil(cy)) + reach)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        gx, gy = np.meshgrid(xs, ys)
        out[y0 : y1 + 1, x0 : x1 + 1] += np.exp(
            -((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sigma * sigma)
        )
    return np.minimum(out, 1.0)


def render_view_heatmap(
    scene: SyntheticScene, view: int, frame: int, sigma_px: float | None = None
) -> ImageBuffer:
    """Idealized single-channel detection heatmap for one view and frame.

    Pedestrians projecting outside the image or behind the camera
    contribute nothing.
    """
    cfg = scene.config
    sigma = cfg.heat_sigma_px if sigma_px is None else sigma_px
    cam = scene.cameras[view]
    centers = []
    for pos in scene.frames[frame]:
        pix, depth = cam.project((pos.x, pos.y, 0.0))
        if depth <= 0.0:
            continue
        if not (0.0 <= pix.x <= cfg.image_w - 1 and 0.0 <= pix.y <= cfg.image_h - 1):
            continue
        centers.append((pix.x, pix.y))
    heat = _splat_gaussians((cfg.image_h, cfg.image_w), centers, sigma)
    return ImageBuffer(heat.astype(np.float32))


def render_ground_truth(
    scene: SyntheticScene, frame: int, grid: GroundGrid, sigma_cells: float
) -> GroundMap:
    """Ground-truth occupancy map: Gaussian splats at pedestrian cells."""
    centers = []
    for pos in scene.frames[frame]:
        cell = grid.ground_to_grid(pos)
        if grid.contains_cell(cell):
            centers.append((cell.x, cell.y))
    heat = _splat_gaussians((grid.rows, grid.cols), centers, sigma_cells)
    return GroundMap(grid, heat.astype(np.float32))


def visible_pedestrians(scene: SyntheticScene, frame: int) -> list[int]:
    """Ids of pedestrians visible (in front, inside the frame) in >= 1 view."""
    cfg = scene.config
    ids = []
    for pid, pos in enumerate(scene.frames[frame]):
        for cam in scene.cameras:
            pix, depth = cam.project((pos.x, pos.y, 0.0))
            if depth > 0.0 and 0.0 <= pix.x <= cfg.image_w - 1 and 0.0 <= pix.y <= cfg.image_h - 1:
                ids.append(pid)
                break
    return ids
