"""Geometric augmentation homographies and the two-level update rule.

Every homography built here follows the *sampling* convention: it maps
OUTPUT coordinates to SOURCE coordinates, i.e. the warped raster is
produced as ``out[q] = src[H @ q]``.  Under that convention augmenting a
view image with H_v and replacing its grid-to-pixel projection T by
``inv(H_v) @ T`` leaves the projected ground content unchanged, and a
scene augmentation H_S enters as ``T @ H_S``.  Combined:

    T' = inv(H_v) @ T @ H_S
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateQuad
from .geometry import (
    GroundGrid,
    Homography,
    Point2,
    apply_point,
    compose,
    invert,
)

# Stream tags keep view/scene substreams of one seed disjoint.
_VIEW_STREAM = 0x56494557
_SCENE_STREAM = 0x5343454E


class AugmentationKind(enum.Enum):
    NONE = "none"
    HFLIP = "hflip"
    VFLIP = "vflip"
    AFFINE = "affine"
    PERSPECTIVE = "perspective"
    CROP = "crop"


@dataclass(frozen=True)
class AugmentationRanges:
    """Parameter ranges for the random augmentations.

    Defaults are the standard configuration: rotation up to 45 degrees,
    translation up to 20% per axis, scale 0.8-1.2, shear up to 10 degrees,
    crops covering 80-100% of the area with aspect factor 0.75-4/3,
    perspective distortion scale 0.5, and half of the samples augmented
    at each level.
    """

    max_rotation_deg: float = 45.0
    max_translate_frac: float = 0.2
    scale_range: tuple[float, float] = (0.8, 1.2)
    max_shear_deg: float = 10.0
    crop_area_range: tuple[float, float] = (0.8, 1.0)
    crop_aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0)
    perspective_distortion: float = 0.5
    view_proportion: float = 0.5
    scene_proportion: float = 0.5

    def __post_init__(self):
        scalars = (
            self.max_rotation_deg,
            self.max_translate_frac,
            self.max_shear_deg,
            *self.scale_range,
            *self.crop_area_range,
            *self.crop_aspect_range,
            self.perspective_distortion,
            self.view_proportion,
            self.scene_proportion,
        )
        if not all(math.isfinite(v) for v in scalars):
            raise ValueError("augmentation ranges must be finite")
        if self.max_rotation_deg < 0 or self.max_translate_frac < 0 or self.max_shear_deg < 0:
            raise ValueError("magnitude limits must be non-negative")
        for lo, hi, name in (
            (*self.scale_range, "scale_range"),
            (*self.crop_area_range, "crop_area_range"),
            (*self.crop_aspect_range, "crop_aspect_range"),
        ):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        if not (0.0 <= self.perspective_distortion <= 1.0):
            raise ValueError("perspective_distortion must be in [0, 1]")
        for p, name in ((self.view_proportion, "view"), (self.scene_proportion, "scene")):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name}_proportion must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "max_rotation_deg": self.max_rotation_deg,
            "max_translate_frac": self.max_translate_frac,
            "scale_range": list(self.scale_range),
            "max_shear_deg": self.max_shear_deg,
            "crop_area_range": list(self.crop_area_range),
            "crop_aspect_range": list(self.crop_aspect_range),
            "perspective_distortion": self.perspective_distortion,
            "view_proportion": self.view_proportion,
            "scene_proportion": self.scene_proportion,
        }

    @staticmethod
    def from_dict(d: dict) -> "AugmentationRanges":
        kw = dict(d)
        for key in ("scale_range", "crop_area_range", "crop_aspect_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return AugmentationRanges(**kw)


@dataclass(frozen=True)
class ViewAugmentation:
    """One sampled per-view augmentation: kind, sampling homography, parameters."""

    kind: AugmentationKind
    h: Homography
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SceneAugmentation:
    """One sampled scene-level augmentation acting in grid-cell coordinates."""

    kind: AugmentationKind
    h: Homography


def view_stream(seed: int, frame: int, view: int) -> np.random.Generator:
    """Independent, reproducible RNG stream for (seed, frame, view)."""
    return np.random.default_rng(np.random.SeedSequence([_VIEW_STREAM, seed, frame, view]))


def scene_stream(seed: int, frame: int) -> np.random.Generator:
    """Independent, reproducible RNG stream for (seed, frame)."""
    return np.random.default_rng(np.random.SeedSequence([_SCENE_STREAM, seed, frame]))


# ---------------------------------------------------------------------------
# Homography constructors (all in sampling direction: output -> source)
# ---------------------------------------------------------------------------

def hflip_homography(width_px: float) -> Homography:
    """Mirror about the vertical axis: (x, y) -> (width-1-x, y)."""
    if width_px <= 0:
        raise ValueError("width must be positive")
    return Homography(np.array([[-1.0, 0.0, width_px - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def vflip_homography(height_px: float) -> Homography:
    """Mirror about the horizontal axis: (x, y) -> (x, height-1-y)."""
    if height_px <= 0:
        raise ValueError("height must be positive")
    return Homography(np.array([[1.0, 0.0, 0.0], [0.0, -1.0, height_px - 1.0], [0.0, 0.0, 1.0]]))


def _translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def affine_homography(
    rot_deg: float,
    tx_px: float,
    ty_px: float,
    scale: float,
    shear_deg: float,
    center: Point2,
) -> Homography:
    """Sampling homography for a forward affine transform about ``center``.

    Forward order: rotate, scale, then shear about the center, followed by a
    translation of (tx, ty).  The returned matrix is the exact inverse chain,
    composed factor by factor so the last row stays exactly (0, 0, 1).
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    rot = math.radians(rot_deg)
    sh = math.radians(shear_deg)
    cx, cy = float(center[0]), float(center[1])
    inv_rot = np.array(
        [
            [math.cos(rot), math.sin(rot), 0.0],
            [-math.sin(rot), math.cos(rot), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    inv_scale = np.array([[1.0 / scale, 0.0, 0.0], [0.0, 1.0 / scale, 0.0], [0.0, 0.0, 1.0]])
    inv_shear = np.array([[1.0, -math.tan(sh), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    m = _translate(cx, cy) @ inv_shear @ inv_scale @ inv_rot @ _translate(-cx, -cy)
    m = _translate(-tx_px, -ty_px) @ m
    return Homography(m)


def homography_from_4pt(src, dst) -> Homography:
    """Exact homography from 4 point correspondences (h22 fixed to 1).

    Raises DegenerateQuad when any 3 source or destination points are
    collinear or the 8x8 system is singular.
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    for pts, label in ((src, "source"), (dst, "destination")):
        if _has_collinear_triple(pts):
            raise DegenerateQuad(f"three {label} points are collinear")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        sx, sy = src[i]
        dx, dy = dst[i]
        a[2 * i] = [sx, sy, 1.0, 0.0, 0.0, 0.0, -dx * sx, -dx * sy]
        a[2 * i + 1] = [0.0, 0.0, 0.0, sx, sy, 1.0, -dy * sx, -dy * sy]
        b[2 * i] = dx
        b[2 * i + 1] = dy
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateQuad("singular 4-point system") from exc
    m = np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]
    )
    return Homography(m)


def _has_collinear_triple(pts: np.ndarray, tol: float = 1e-9) -> bool:
    scale = max(1.0, float(np.max(np.abs(pts))))
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                v1 = pts[j] - pts[i]
                v2 = pts[k] - pts[i]
                if abs(v1[0] * v2[1] - v1[1] * v2[0]) < tol * scale * scale:
                    return True
    return False


def perspective_homography(
    distortion_scale: float,
    width: float,
    height: float,
    rng: np.random.Generator,
) -> Homography:
    """Random perspective: corners displaced inward, solved from 4 points.

    Each corner moves inward by independent uniform offsets in
    [0, distortion_scale*width/2] x [0, distortion_scale*height/2].  The
    result maps the displaced quad (output) back to the original corners
    (source).  Resamples up to 8 times on a degenerate quad.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    if not (0.0 <= distortion_scale <= 1.0):
        raise ValueError("distortion_scale must be in [0, 1]")
    corners = np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )
    if distortion_scale == 0.0:
        return Homography.identity()
    half_w = distortion_scale * width / 2.0
    half_h = distortion_scale * height / 2.0
    # inward direction per corner: TL, TR, BR, BL
    signs = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    last_error = None
    for _ in range(8):
        offsets = rng.uniform(0.0, 1.0, size=(4, 2)) * np.array([half_w, half_h])
        displaced = corners + signs * offsets
        try:
            return homography_from_4pt(displaced, corners)
        except DegenerateQuad as exc:
            last_error = exc
    raise DegenerateQuad("failed to sample a non-degenerate quad in 8 attempts") from last_error


def crop_homography(
    crop_x: float,
    crop_y: float,
    crop_w: float,
    crop_h: float,
    out_w: float,
    out_h: float,
) -> Homography:
    """Resized-crop sampling map: out (x, y) reads source
    (crop_x + x*crop_w/out_w, crop_y + y*crop_h/out_h)."""
    if crop_w <= 0 or crop_h <= 0:
        raise ValueError("crop dimensions must be positive")
    return Homography(
        np.array(
            [
                [crop_w / out_w, 0.0, crop_x],
                [0.0, crop_h / out_h, crop_y],
                [0.0, 0.0, 1.0],
            ]
        )
    )


# ---------------------------------------------------------------------------
# Random sampling
# ---------------------------------------------------------------------------

def _sample_kind(
    kind: AugmentationKind,
    ranges: AugmentationRanges,
    width: float,
    height: float,
    rng: np.random.Generator,
) -> tuple[Homography, dict]:
    """Draw parameters for one augmentation kind and build its homography.

    Draw order is fixed per kind so streams are reproducible.
    """
    if kind is AugmentationKind.HFLIP:
        return hflip_homography(width), {}
    if kind is AugmentationKind.VFLIP:
        return vflip_homography(height), {}
    if kind is AugmentationKind.AFFINE:
        rot = rng.uniform(-ranges.max_rotation_deg, ranges.max_rotation_deg)
        tx = rng.uniform(-ranges.max_translate_frac, ranges.max_translate_frac) * width
        ty = rng.uniform(-ranges.max_translate_frac, ranges.max_translate_frac) * height
        scale = rng.uniform(*ranges.scale_range)
        shear = rng.uniform(-ranges.max_shear_deg, ranges.max_shear_deg)
        center = Point2((width - 1.0) / 2.0, (height - 1.0) / 2.0)
        h = affine_homography(rot, tx, ty, scale, shear, center)
        return h, {"rot_deg": rot, "tx_px": tx, "ty_px": ty, "scale": scale, "shear_deg": shear}
    if kind is AugmentationKind.PERSPECTIVE:
        h = perspective_homography(ranges.perspective_distortion, width, height, rng)
        return h, {"distortion_scale": ranges.perspective_distortion}
    if kind is AugmentationKind.CROP:
        return _sample_crop(ranges, width, height, rng)
    return Homography.identity(), {}


def _sample_crop(
    ranges: AugmentationRanges,
    width: float,
    height: float,
    rng: np.random.Generator,
) -> tuple[Homography, dict]:
    """Random resized crop with area and aspect factors relative to the image.

    The aspect factor multiplies the image's own aspect ratio, so a factor
    of 1 with area 1 is the identity for any image shape.  (area, aspect)
    pairs that do not fit inside the image are rejected and redrawn.
    """
    area = aspect = None
    for _ in range(100):
        area = rng.uniform(*ranges.crop_area_range)
        aspect = rng.uniform(*ranges.crop_aspect_range)
        if area * aspect <= 1.0 and area / aspect <= 1.0:
            break
    else:
        # clamp to the nearest feasible aspect for this area
        aspect = min(max(aspect, area), 1.0 / area)
    crop_w = width * math.sqrt(area * aspect)
    crop_h = height * math.sqrt(area / aspect)
    # keep all resampled coordinates inside [0, dim-1]
    max_x = (width - 1.0) - crop_w * (width - 1.0) / width
    max_y = (height - 1.0) - crop_h * (height - 1.0) / height
    crop_x = rng.uniform(0.0, max(max_x, 0.0))
    crop_y = rng.uniform(0.0, max(max_y, 0.0))
    h = crop_homography(crop_x, crop_y, crop_w, crop_h, width, height)
    params = {
        "area": area,
        "aspect": aspect,
        "crop_x": crop_x,
        "crop_y": crop_y,
        "crop_w": crop_w,
        "crop_h": crop_h,
    }
    return h, params


def sample_view_augmentation(
    kind: AugmentationKind,
    ranges: AugmentationRanges,
    image_w: float,
    image_h: float,
    rng: np.random.Generator,
) -> ViewAugmentation:
    """Sample a per-view augmentation of the given kind.

    With probability 1 - view_proportion the identity (kind NONE) comes
    back instead; the gate draw always happens first.
    """
    if kind is AugmentationKind.NONE:
        return ViewAugmentation(AugmentationKind.NONE, Homography.identity())
    if rng.uniform() >= ranges.view_proportion:
        return ViewAugmentation(AugmentationKind.NONE, Homography.identity())
    h, params = _sample_kind(kind, ranges, image_w, image_h, rng)
    return ViewAugmentation(kind, h, params)


def sample_scene_augmentation(
    kind: AugmentationKind,
    ranges: AugmentationRanges,
    grid: GroundGrid,
    rng: np.random.Generator,
) -> SceneAugmentation:
    """Sample a scene augmentation in grid-cell coordinates.

    Translation fractions are relative to the grid dimensions and rotation
    is about the grid center; gated by scene_proportion.
    """
    if kind is AugmentationKind.NONE:
        return SceneAugmentation(AugmentationKind.NONE, Homography.identity())
    if rng.uniform() >= ranges.scene_proportion:
        return SceneAugmentation(AugmentationKind.NONE, Homography.identity())
    h, _ = _sample_kind(kind, ranges, float(grid.cols), float(grid.rows), rng)
    return SceneAugmentation(kind, h)


# ---------------------------------------------------------------------------
# Projection update and annotation transforms
# ---------------------------------------------------------------------------

def augment_projection(t_grid: Homography, hv: Homography, hs: Homography) -> Homography:
    """Compensated grid-to-pixel projection: inv(hv) @ t_grid @ hs."""
    return compose(invert(hv), compose(t_grid, hs))


class TransformedPoint(NamedTuple):
    """An annotation point after augmentation; invisible points keep their
    mapped coordinates (NaN when mapped to infinity)."""

    x: float
    y: float
    visible: bool


def _transform_points(points, h: Homography, max_x: float, max_y: float) -> list[TransformedPoint]:
    h_inv = invert(h)
    out = []
    for p in points:
        try:
            q = apply_point(h_inv, p)
        except Exception:
            out.append(TransformedPoint(math.nan, math.nan, False))
            continue
        visible = 0.0 <= q.x <= max_x and 0.0 <= q.y <= max_y
        out.append(TransformedPoint(q.x, q.y, visible))
    return out


def transform_view_annotations(
    points_px, hv: Homography, image_w: float, image_h: float
) -> list[TransformedPoint]:
    """Move per-view annotation pixels into the augmented image.

    An annotation at source pixel u lands at inv(hv) @ u; points outside
    [0, w-1] x [0, h-1] are flagged invisible but kept in order.
    """
    return _transform_points(points_px, hv, image_w - 1.0, image_h - 1.0)


def transform_scene_annotations(cells, hs: Homography, grid: GroundGrid) -> list[TransformedPoint]:
    """Move ground-truth grid cells into the augmented scene frame
    (cell g lands at inv(hs) @ g); out-of-grid cells flagged invisible."""
    return _transform_points(cells, hs, grid.cols - 1.0, grid.rows - 1.0)
