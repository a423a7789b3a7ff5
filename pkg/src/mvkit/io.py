"""File formats: calibration, annotations, rasters, detections, config.

All text formats are JSON (single-document or line-delimited); the only
binary format is the MVGRID1 raster:

    bytes 0-7    magic "MVGRID1\\0"
    bytes 8-19   u32 rows, u32 cols, u32 channels (little-endian)
    bytes 20-    rows*cols*channels float32, row-major, channel-interleaved

Writers are atomic (temp file + rename).  Loaders reject NaN/Inf in any
numeric field.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .augmentation import AugmentationRanges
from .errors import InvalidCalibration, ParseError, VersionMismatch
from .geometry import CameraCalibration, GroundGrid, Point2, rodrigues_to_rotation
from .synth import SceneConfig, default_grid
from .warp import ImageBuffer

GRID_RASTER_MAGIC = b"MVGRID1\x00"


def atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite_floats(values, what: str) -> list[float]:
    out = []
    for v in values:
        f = float(v)
        if not math.isfinite(f):
            raise ParseError(f"non-finite value in {what}")
        out.append(f)
    return out


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def load_calibration(path: str) -> CameraCalibration:
    """Load {"K": [9], "rvec": [3] or "R": [9], "t": [3]} from JSON.

    A rotation off orthonormal by more than 1e-9 but at most 1e-6 is
    re-orthonormalized; beyond that the file is rejected.
    """
    doc = _load_json(path)
    try:
        k = np.array(_finite_floats(doc["K"], "K"), dtype=np.float64).reshape(3, 3)
        t = np.array(_finite_floats(doc["t"], "t"), dtype=np.float64)
        if "rvec" in doc:
            r = rodrigues_to_rotation(_finite_floats(doc["rvec"], "rvec"))
        else:
            r = np.array(_finite_floats(doc["R"], "R"), dtype=np.float64).reshape(3, 3)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: malformed calibration ({exc})") from exc
    deviation = max(
        float(np.max(np.abs(r.T @ r - np.eye(3)))),
        abs(float(np.linalg.det(r)) - 1.0),
    )
    if deviation >= 1e-9:
        if deviation > 1e-6:
            raise InvalidCalibration(
                f"{path}: rotation off orthonormal by {deviation:.2e} (> 1e-6)"
            )
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
    return CameraCalibration(K=k, R=r, t=t)


def save_calibration(path: str, calib: CameraCalibration) -> None:
    doc = {
        "K": [float(v) for v in calib.K.ravel()],
        "R": [float(v) for v in calib.R.ravel()],
        "t": [float(v) for v in calib.t],
    }
    atomic_write(path, (json.dumps(doc) + "\n").encode())


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    """One person in one frame: ground position plus per-view feet pixels."""

    frame: int
    person_id: int
    world: Point2
    views: dict[int, Point2] = field(default_factory=dict)


def load_annotations(path: str) -> list[AnnotationRecord]:
    """Read line-delimited JSON annotations; missing view entries mean
    the person is not visible in that view."""
    records = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            wx, wy = _finite_floats(doc["world"], "world")
            views = {
                int(v): Point2(*_finite_floats(uv, "view pixel"))
                for v, uv in doc.get("views", {}).items()
            }
            records.append(
                AnnotationRecord(
                    frame=int(doc["frame"]),
                    person_id=int(doc["id"]),
                    world=Point2(wx, wy),
                    views=views,
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def scene_to_annotations(scene) -> list[AnnotationRecord]:
    """Export a synthetic scene in the annotation format: world positions
    plus projected feet pixels for every view that sees the person."""
    cfg = scene.config
    records = []
    for f, frame in enumerate(scene.frames):
        for pid, pos in enumerate(frame):
            feet = {}
            for v, cam in enumerate(scene.cameras):
                pix, depth = cam.project((pos.x, pos.y, 0.0))
                in_frame = 0 <= pix.x <= cfg.image_w - 1 and 0 <= pix.y <= cfg.image_h - 1
                if depth > 0 and in_frame:
                    feet[v] = pix
            records.append(AnnotationRecord(frame=f, person_id=pid, world=pos, views=feet))
    return records


def save_annotations(path: str, records: list[AnnotationRecord]) -> None:
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "frame": r.frame,
                    "id": r.person_id,
                    "world": [r.world.x, r.world.y],
                    "views": {str(v): [p.x, p.y] for v, p in sorted(r.views.items())},
                }
            )
        )
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode())


# ---------------------------------------------------------------------------
# Grid rasters (MVGRID1)
# ---------------------------------------------------------------------------

def save_grid_raster(path: str, data: np.ndarray) -> None:
    """Write a (rows, cols[, channels]) float array as MVGRID1 (bit-exact
    for float32 input)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"raster must be (rows>=1, cols>=1, channels>=1), got {arr.shape}")
    rows, cols, channels = arr.shape
    header = GRID_RASTER_MAGIC + struct.pack("<III", rows, cols, channels)
    payload = np.ascontiguousarray(arr).astype("<f4").tobytes()
    atomic_write(path, header + payload)


def load_grid_raster(path: str) -> np.ndarray:
    """Read an MVGRID1 raster back as (rows, cols, channels) float32."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if len(blob) < 8 or blob[:8] != GRID_RASTER_MAGIC:
        raise VersionMismatch(f"{path}: bad magic, not an MVGRID1 file")
    if len(blob) < 20:
        raise ParseError(f"{path}: truncated header")
    rows, cols, channels = struct.unpack("<III", blob[8:20])
    if rows < 1 or cols < 1 or channels < 1:
        raise ParseError(f"{path}: zero-sized raster ({rows}x{cols}x{channels})")
    expected = 20 + 4 * rows * cols * channels
    if len(blob) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob[20:], dtype="<f4").reshape(rows, cols, channels)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: raster contains non-finite samples")
    return data.astype(np.float32)


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------

def save_detections(path: str, per_frame: list[tuple[int, list[tuple[Point2, Point2, float]]]]) -> None:
    """Write detections as line-delimited JSON.

    ``per_frame`` holds (frame_id, [(cell, world, score), ...]) tuples.
    """
    lines = []
    for frame, dets in per_frame:
        for cell, world, score in dets:
            lines.append(
                json.dumps(
                    {
                        "frame": frame,
                        "cell": [float(cell[0]), float(cell[1])],
                        "world": [float(world[0]), float(world[1])],
                        "score": float(score),
                    }
                )
            )
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode())


@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    cell: Point2
    world: Point2
    score: float


def load_detections(path: str) -> list[DetectionRecord]:
    records = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            cell = Point2(*_finite_floats(doc["cell"], "cell"))
            world = Point2(*_finite_floats(doc["world"], "world"))
            score = _finite_floats([doc["score"]], "score")[0]
            records.append(
                DetectionRecord(frame=int(doc["frame"]), cell=cell, world=world, score=score)
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Grids, tool config, dataset descriptor
# ---------------------------------------------------------------------------

def grid_to_dict(grid: GroundGrid) -> dict:
    return {
        "rows": grid.rows,
        "cols": grid.cols,
        "cell_size": grid.cell_size,
        "origin": [grid.origin[0], grid.origin[1]],
    }


def grid_from_dict(doc: dict) -> GroundGrid:
    try:
        ox, oy = _finite_floats(doc.get("origin", [0.0, 0.0]), "grid origin")
        cell = _finite_floats([doc["cell_size"]], "cell_size")[0]
        return GroundGrid(
            rows=int(doc["rows"]), cols=int(doc["cols"]), cell_size=cell, origin=(ox, oy)
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed grid: {exc}") from exc


@dataclass(frozen=True)
class ToolConfig:
    """Top-level configuration: scene, grid, augmentation ranges, seed."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    grid: GroundGrid = field(default_factory=default_grid)
    ranges: AugmentationRanges = field(default_factory=AugmentationRanges)
    seed: int = 0


def load_tool_config(path: str) -> ToolConfig:
    doc = _load_json(path)
    try:
        scene = SceneConfig.from_dict(doc["scene"]) if "scene" in doc else SceneConfig()
        grid = grid_from_dict(doc["grid"]) if "grid" in doc else default_grid()
        ranges = (
            AugmentationRanges.from_dict(doc["ranges"]) if "ranges" in doc else AugmentationRanges()
        )
        seed = int(doc.get("seed", 0))
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"{path}: malformed config ({exc})") from exc
    return ToolConfig(scene=scene, grid=grid, ranges=ranges, seed=seed)


def save_tool_config(path: str, cfg: ToolConfig) -> None:
    doc = {
        "scene": cfg.scene.to_dict(),
        "grid": grid_to_dict(cfg.grid),
        "ranges": cfg.ranges.to_dict(),
        "seed": cfg.seed,
    }
    atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode())


@dataclass(frozen=True)
class ViewSource:
    calibration: str
    images: str


@dataclass(frozen=True)
class DatasetDescriptor:
    """Points at everything needed to run on a dataset directory.

    Paths are relative to the descriptor file's directory.  ``resize``
    is the (w, h) the images are brought to before augmentation, or None
    to keep the native size.
    """

    views: tuple[ViewSource, ...]
    grid: GroundGrid
    annotations: str
    resize: tuple[int, int] | None = None
    root: str = "."

    def view_path(self, view: int, what: str) -> str:
        src = self.views[view]
        rel = src.calibration if what == "calibration" else src.images
        return os.path.join(self.root, rel)

    def annotation_path(self) -> str:
        return os.path.join(self.root, self.annotations)


def load_dataset_descriptor(path: str) -> DatasetDescriptor:
    doc = _load_json(path)
    try:
        views = tuple(
            ViewSource(calibration=v["calibration"], images=v["images"]) for v in doc["views"]
        )
        if not views:
            raise ValueError("dataset needs at least one view")
        grid = grid_from_dict(doc["grid"])
        resize = doc.get("resize")
        if resize is not None:
            resize = (int(resize[0]), int(resize[1]))
            if resize[0] < 1 or resize[1] < 1:
                raise ValueError("resize target must be positive")
        return DatasetDescriptor(
            views=views,
            grid=grid,
            annotations=doc["annotations"],
            resize=resize,
            root=os.path.dirname(os.path.abspath(path)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: malformed dataset descriptor ({exc})") from exc


def save_dataset_descriptor(
    path: str,
    views: list[ViewSource],
    grid: GroundGrid,
    annotations: str,
    resize: tuple[int, int] | None = None,
) -> None:
    doc = {
        "views": [{"calibration": v.calibration, "images": v.images} for v in views],
        "grid": grid_to_dict(grid),
        "annotations": annotations,
        "resize": list(resize) if resize is not None else None,
    }
    atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode())


# ---------------------------------------------------------------------------
# PNG images
# ---------------------------------------------------------------------------

def save_image_png(path: str, img: ImageBuffer) -> None:
    """Store a [0, 1] raster as 8-bit PNG (grayscale or RGB)."""
    arr = np.clip(img.data, 0.0, 1.0)
    quant = np.round(arr * 255.0).astype(np.uint8)
    if quant.shape[2] == 1:
        pil = Image.fromarray(quant[:, :, 0], mode="L")
    elif quant.shape[2] == 3:
        pil = Image.fromarray(quant, mode="RGB")
    else:
        raise ValueError(f"PNG export supports 1 or 3 channels, got {quant.shape[2]}")
    import io as _io

    buf = _io.BytesIO()
    pil.save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def load_image_png(path: str) -> ImageBuffer:
    try:
        with Image.open(path) as pil:
            pil.load()
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("RGB" if len(pil.getbands()) >= 3 else "L")
            arr = np.asarray(pil, dtype=np.float32) / 255.0
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return ImageBuffer(arr)
