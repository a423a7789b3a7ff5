"""Raster resampling: homography warps and ground-plane projection.

All warps are inverse-mapped: each output sample is produced by mapping
its own coordinate through the given homography into the source raster
and interpolating bilinearly there.  Out-of-bounds and behind-camera
samples are zero-filled and reported through a boolean validity mask
(``True`` = the sample only used in-bounds source pixels in front of the
camera).  Interpolation runs in double precision; rasters store float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .geometry import GroundGrid, Homography

# Homogeneous w at or below this is treated as behind the camera.
BEHIND_CAMERA_W = 1e-9

# A validity mask is a bool ndarray with the raster's spatial shape.
ValidMask = np.ndarray


def _as_raster(data, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeMismatch(f"{what} must be (h, w) or (h, w, c), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite samples")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageBuffer:
    """Dense image raster, (height, width, channels) float32, row-major."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_raster(self.data, "image"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c]


@dataclass(frozen=True)
class GroundMap:
    """Dense raster over a ground grid, (rows, cols, channels) float32."""

    grid: GroundGrid
    data: np.ndarray

    def __post_init__(self):
        arr = _as_raster(self.data, "ground map")
        if arr.shape[0] != self.grid.rows or arr.shape[1] != self.grid.cols:
            raise ShapeMismatch(
                f"ground map shape {arr.shape[:2]} does not match grid "
                f"({self.grid.rows}, {self.grid.cols})"
            )
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c]


def bilinear_sample(img: ImageBuffer, x: float, y: float) -> tuple[np.ndarray, bool]:
    """Sample one continuous position; value is zero when invalid.

    A position is valid iff it lies inside [0, w-1] x [0, h-1]; zero-weight
    neighbors are never read, so edge positions stay valid.
    """
    values, valid = _bilinear_many(
        img.data, np.array([float(x)]), np.array([float(y)])
    )
    return values[0], bool(valid[0])


def _bilinear_many(
    data: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling of an (h, w, c) raster.

    Returns ((n, c) float64 values, (n,) bool validity).  Invalid samples
    are exactly zero.  Indices are clamped before gathering so that no
    out-of-bounds memory is ever touched, even at zero weight.
    """
    h, w = data.shape[0], data.shape[1]
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(cx).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(cy).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0)[:, None]
    fy = (cy - y0)[:, None]
    d = data.astype(np.float64, copy=False)
    top = (1.0 - fx) * d[y0, x0] + fx * d[y0, x1]
    bot = (1.0 - fx) * d[y1, x0] + fx * d[y1, x1]
    values = (1.0 - fy) * top + fy * bot
    values[~valid] = 0.0
    return values, valid


def _source_coords(h: Homography, out_w: int, out_h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map every output coordinate through h; w <= BEHIND_CAMERA_W is invalid."""
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    m = h.m
    sw = m[2, 0] * gx + m[2, 1] * gy + m[2, 2]
    front = sw > BEHIND_CAMERA_W
    safe_w = np.where(front, sw, 1.0)
    sx = (m[0, 0] * gx + m[0, 1] * gy + m[0, 2]) / safe_w
    sy = (m[1, 0] * gx + m[1, 1] * gy + m[1, 2]) / safe_w
    # park invalid rays far outside the source so they also fail bounds
    sx = np.where(front, sx, -1e12)
    sy = np.where(front, sy, -1e12)
    return sx, sy, front


def _warp_raster(
    data: np.ndarray, h: Homography, out_w: int, out_h: int
) -> tuple[np.ndarray, np.ndarray]:
    sx, sy, front = _source_coords(h, out_w, out_h)
    values, valid = _bilinear_many(data, sx.ravel(), sy.ravel())
    valid &= front.ravel()
    values[~valid] = 0.0
    out = values.reshape(out_h, out_w, data.shape[2]).astype(np.float32)
    return out, valid.reshape(out_h, out_w)


def warp_image(
    img: ImageBuffer, h: Homography, out_w: int, out_h: int
) -> tuple[ImageBuffer, ValidMask]:
    """Warp an image: output pixel q samples the source at h @ q."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    out, mask = _warp_raster(img.data, h, out_w, out_h)
    return ImageBuffer(out), mask


def project_to_ground(
    img: ImageBuffer, t_grid: Homography, grid: GroundGrid
) -> tuple[GroundMap, ValidMask]:
    """Project an image onto the ground grid.

    Cell (col, row) samples the image at ``t_grid @ (col, row, 1)``; cells
    behind the camera (non-positive homogeneous w) are invalid.
    """
    out, mask = _warp_raster(img.data, t_grid, grid.cols, grid.rows)
    return GroundMap(grid, out), mask
