"""Batch command-line interface.

Commands: synth, augment, detect, eval, render.  Every command is a
pure function of its inputs, flags and seed; primary outputs are written
atomically and identical runs produce identical bytes.

Exit codes:
    0  success
    1  usage error (bad flags, unknown augmentation kind, missing flag)
    2  data error (missing/corrupt files, mismatched inputs, unwritable output)
    3  numeric failure (degenerate geometry)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io as mvio
from .augmentation import (
    AugmentationKind,
    augment_projection,
    crop_homography,
    sample_scene_augmentation,
    sample_view_augmentation,
    scene_stream,
    transform_scene_annotations,
    transform_view_annotations,
    view_stream,
)
from .errors import DataError, MVKitError, NumericError
from .geometry import (
    Homography,
    Point2,
    compose,
    grid_homography,
    ground_projection_matrix,
    invert,
)
from .pipeline import AggregationMode, default_nms_radius, run_detection
from .evaluation import compute_metrics, match_detections
from .synth import generate_scene, render_ground_truth, render_view_heatmap
from .warp import ImageBuffer, project_to_ground, warp_image

GT_SIGMA_CELLS = 1.5  # ground-truth splat width for rendered GT rasters

_FRAME_RE = re.compile(r"^frame_(\d{4})\.png$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on errors; route through our own exit codes instead
    def error(self, message):
        raise UsageError(message)


def _kind(text: str) -> AugmentationKind:
    try:
        return AugmentationKind(text.lower())
    except ValueError:
        raise UsageError(
            f"unknown augmentation kind '{text}' "
            f"(choose from {', '.join(k.value for k in AugmentationKind)})"
        )


def _emit(result: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(result))
    else:
        for key, value in result.items():
            print(f"{key} {value}")


def _frame_name(frame: int) -> str:
    return f"frame_{frame:04d}.png"


def _map_frames(fn, frames, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, frames))
    return [fn(f) for f in frames]


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> dict:
    cfg = mvio.load_tool_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    scene_cfg = mvio.SceneConfig(**{**cfg.scene.to_dict(), "seed": seed})
    grid = cfg.grid
    scene = generate_scene(scene_cfg)
    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-probe")
        with open(probe, "w") as f:
            f.write("")
        os.unlink(probe)
    except OSError as exc:
        raise DataError(f"output directory not writable: {exc}") from exc

    views = []
    for v, cam in enumerate(scene.cameras):
        rel = os.path.join("calibrations", f"v{v:02d}.json")
        mvio.save_calibration(os.path.join(out, rel), cam)
        views.append(mvio.ViewSource(calibration=rel, images=os.path.join("views", f"v{v:02d}")))

    def render_frame(f: int):
        for v in range(scene_cfg.n_cameras):
            heat = render_view_heatmap(scene, v, f)
            mvio.save_image_png(os.path.join(out, views[v].images, _frame_name(f)), heat)
        gt = render_ground_truth(scene, f, grid, GT_SIGMA_CELLS)
        mvio.save_grid_raster(os.path.join(out, "gt_ground", f"frame_{f:04d}.mvgrid"), gt.data)

    _map_frames(render_frame, range(scene_cfg.n_frames), args.threads)

    mvio.save_annotations(
        os.path.join(out, "annotations.jsonl"), mvio.scene_to_annotations(scene)
    )
    mvio.save_dataset_descriptor(
        os.path.join(out, "dataset.json"),
        views,
        grid,
        "annotations.jsonl",
        resize=None,
    )
    mvio.save_tool_config(
        os.path.join(out, "config.json"),
        mvio.ToolConfig(scene=scene_cfg, grid=grid, ranges=cfg.ranges, seed=seed),
    )
    return {
        "command": "synth",
        "seed": seed,
        "out": out,
        "cameras": scene_cfg.n_cameras,
        "frames": scene_cfg.n_frames,
        "pedestrians": scene_cfg.n_pedestrians,
    }


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def _dataset_frames(ds: mvio.DatasetDescriptor) -> list[int]:
    """Frame ids present in every view directory; mismatches are data errors."""
    all_sets = []
    for v in range(len(ds.views)):
        d = ds.view_path(v, "images")
        try:
            names = os.listdir(d)
        except OSError as exc:
            raise DataError(f"cannot list view directory {d}: {exc}") from exc
        frames = {int(m.group(1)) for m in (_FRAME_RE.match(n) for n in names) if m}
        all_sets.append(frames)
    if not all_sets or any(s != all_sets[0] for s in all_sets):
        raise DataError("views do not contain the same frame set")
    return sorted(all_sets[0])


def _load_t_grids(ds: mvio.DatasetDescriptor) -> list[Homography]:
    t_grid = []
    g_h = grid_homography(ds.grid)
    for v in range(len(ds.views)):
        calib = mvio.load_calibration(ds.view_path(v, "calibration"))
        t_grid.append(compose(ground_projection_matrix(calib), g_h))
    return t_grid


def _resize_homography(ds, native_w: int, native_h: int) -> Homography | None:
    """Sampling map of the resize step, or None when no resampling happens."""
    if ds.resize is None or ds.resize == (native_w, native_h):
        return None
    return crop_homography(0.0, 0.0, native_w, native_h, ds.resize[0], ds.resize[1])


def cmd_augment(args) -> dict:
    view_kind = _kind(args.view_aug)
    scene_kind = _kind(args.scene_aug)
    if not (0.0 <= args.proportion <= 1.0):
        raise UsageError("--proportion must be in [0, 1]")
    ds = mvio.load_dataset_descriptor(args.dataset)
    ranges = dataclasses.replace(
        mvio.AugmentationRanges(),
        view_proportion=args.proportion,
        scene_proportion=args.proportion,
    )
    grid = ds.grid
    t_grids = _load_t_grids(ds)
    frames = _dataset_frames(ds)
    annotations = mvio.load_annotations(ds.annotation_path())
    by_frame: dict[int, list] = {}
    for rec in annotations:
        by_frame.setdefault(rec.frame, []).append(rec)
    out = args.out
    os.makedirs(out, exist_ok=True)

    n_view_aug = 0
    n_scene_aug = 0
    out_records = []
    for f in frames:
        hs = sample_scene_augmentation(scene_kind, ranges, grid, scene_stream(args.seed, f))
        if hs.kind is not AugmentationKind.NONE:
            n_scene_aug += 1
        view_sizes = []
        for v in range(len(ds.views)):
            img = mvio.load_image_png(os.path.join(ds.view_path(v, "images"), _frame_name(f)))
            resize_h = _resize_homography(ds, img.width, img.height)
            out_w, out_h = (
                ds.resize if (ds.resize is not None) else (img.width, img.height)
            )
            hv = sample_view_augmentation(
                view_kind, ranges, out_w, out_h, view_stream(args.seed, f, v)
            )
            if hv.kind is not AugmentationKind.NONE:
                n_view_aug += 1
            # single resample: fold the resize into the view homography
            if resize_h is None:
                total_h = hv.h
            elif hv.kind is AugmentationKind.NONE:
                total_h = resize_h
            else:
                total_h = compose(resize_h, hv.h)
            identity_warp = resize_h is None and hv.kind is AugmentationKind.NONE
            if identity_warp:
                out_img = img
            else:
                out_img, _ = warp_image(img, total_h, out_w, out_h)
            mvio.save_image_png(
                os.path.join(out, "views", f"v{v:02d}", _frame_name(f)), out_img
            )
            base_t = t_grids[v]
            if identity_warp and hs.kind is AugmentationKind.NONE:
                t_aug = base_t  # bit-exact passthrough
            else:
                t_aug = augment_projection(base_t, total_h, hs.h)
            doc = {
                "frame": f,
                "view": v,
                "view_kind": hv.kind.value,
                "scene_kind": hs.kind.value,
                "t_grid": [float(x) for x in t_aug.m.ravel()],
            }
            mvio.atomic_write(
                os.path.join(out, "homographies", f"v{v:02d}", f"frame_{f:04d}.json"),
                (json.dumps(doc) + "\n").encode(),
            )
            view_sizes.append((out_w, out_h, total_h if not identity_warp else None))
        # annotations: scene transform on ground cells, view transform on pixels
        for rec in by_frame.get(f, []):
            if hs.kind is AugmentationKind.NONE:
                world = rec.world  # bit-exact passthrough
            else:
                cell = grid.ground_to_grid(rec.world)
                moved = transform_scene_annotations([cell], hs.h, grid)[0]
                if not moved.visible:
                    continue
                world = grid.grid_to_ground((moved.x, moved.y))
            feet = {}
            for v, (w, h, total_h) in enumerate(view_sizes):
                if v not in rec.views:
                    continue
                if total_h is None:
                    pix = rec.views[v]
                    if 0 <= pix.x <= w - 1 and 0 <= pix.y <= h - 1:
                        feet[v] = pix
                    continue
                tp = transform_view_annotations([rec.views[v]], total_h, w, h)[0]
                if tp.visible:
                    feet[v] = Point2(tp.x, tp.y)
            out_records.append(
                mvio.AnnotationRecord(
                    frame=f, person_id=rec.person_id, world=world, views=feet
                )
            )
    mvio.save_annotations(os.path.join(out, "annotations.jsonl"), out_records)
    return {
        "command": "augment",
        "seed": args.seed,
        "out": out,
        "frames": len(frames),
        "view_augmented": n_view_aug,
        "scene_augmented": n_scene_aug,
    }


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def cmd_detect(args) -> dict:
    ds = mvio.load_dataset_descriptor(args.dataset)
    mode = AggregationMode(args.aggregation)
    grid = ds.grid
    t_grids = _load_t_grids(ds)
    frames = _dataset_frames(ds)
    radius = args.nms_radius if args.nms_radius is not None else default_nms_radius(grid)

    def detect_frame(f: int):
        images, t_adj = [], []
        for v in range(len(ds.views)):
            img = mvio.load_image_png(os.path.join(ds.view_path(v, "images"), _frame_name(f)))
            resize_h = _resize_homography(ds, img.width, img.height)
            if resize_h is not None:
                img, _ = warp_image(img, resize_h, ds.resize[0], ds.resize[1])
                t_adj.append(compose(invert(resize_h), t_grids[v]))
            else:
                t_adj.append(t_grids[v])
            images.append(img)
        dets = run_detection(images, t_adj, grid, nms_radius=radius, mode=mode, frame=f)
        return (
            f,
            [
                (Point2(d.x, d.y), grid.grid_to_ground((d.x, d.y)), d.score)
                for d in dets.detections
            ],
        )

    results = _map_frames(detect_frame, frames, args.threads)
    mvio.save_detections(args.out, results)
    return {
        "command": "detect",
        "out": args.out,
        "frames": len(frames),
        "detections": sum(len(d) for _, d in results),
        "aggregation": mode.value,
        "nms_radius_cells": radius,
    }


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> dict:
    if not os.path.exists(args.detections):
        raise DataError(f"detections file not found: {args.detections}")
    if not os.path.exists(args.gt):
        raise DataError(f"ground-truth file not found: {args.gt}")
    dets = mvio.load_detections(args.detections)
    gts = mvio.load_annotations(args.gt)
    det_frames: dict[int, list] = {}
    for d in dets:
        det_frames.setdefault(d.frame, []).append((d.world.x, d.world.y))
    gt_frames: dict[int, list] = {}
    for g in gts:
        gt_frames.setdefault(g.frame, []).append((g.world.x, g.world.y))
    unknown = sorted(set(det_frames) - set(gt_frames))
    if unknown:
        raise DataError(f"detections reference frames absent from ground truth: {unknown}")
    matches = [
        match_detections(det_frames.get(f, []), gt_frames[f], args.threshold_m)
        for f in sorted(gt_frames)
    ]
    report = compute_metrics(matches, args.threshold_m)
    mvio.atomic_write(args.report, (json.dumps(report.to_dict()) + "\n").encode())
    return {
        "command": "eval",
        "report": args.report,
        "moda": report.moda,
        "modp": report.modp,
        "precision": report.precision,
        "recall": report.recall,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "gt": report.gt,
    }


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def _gray_to_rgb(plane: np.ndarray) -> np.ndarray:
    return np.repeat(np.clip(plane, 0.0, 1.0)[:, :, None], 3, axis=2)


def _fit_into(panel_h: int, panel_w: int, raster: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Nearest-neighbor fit of a raster into a panel; returns (rgb, sx, sy)."""
    rows, cols = raster.shape[:2]
    sy = panel_h / rows
    sx = panel_w / cols
    ys = np.minimum((np.arange(panel_h) / sy).astype(int), rows - 1)
    xs = np.minimum((np.arange(panel_w) / sx).astype(int), cols - 1)
    return raster[np.ix_(ys, xs)], sx, sy


def _draw_marker(rgb: np.ndarray, x: float, y: float, color=(1.0, 0.2, 0.2)) -> None:
    h, w = rgb.shape[:2]
    cx, cy = int(round(x)), int(round(y))
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            if abs(dx) + abs(dy) > 2:
                continue
            px, py = cx + dx, cy + dy
            if 0 <= px < w and 0 <= py < h:
                rgb[py, px] = color


def cmd_render(args) -> dict:
    ds = mvio.load_dataset_descriptor(args.dataset)
    if not (0 <= args.view < len(ds.views)):
        raise DataError(f"view {args.view} out of range (dataset has {len(ds.views)})")
    frames = _dataset_frames(ds)
    if args.frame not in frames:
        raise DataError(f"frame {args.frame} not present in dataset")
    grid = ds.grid
    img = mvio.load_image_png(
        os.path.join(ds.view_path(args.view, "images"), _frame_name(args.frame))
    )
    w, h = img.width, img.height
    ranges = mvio.AugmentationRanges(view_proportion=1.0, scene_proportion=1.0)
    hv = sample_view_augmentation(
        AugmentationKind.AFFINE, ranges, w, h, view_stream(args.seed, args.frame, args.view)
    )
    hs = sample_scene_augmentation(
        AugmentationKind.AFFINE, ranges, grid, scene_stream(args.seed, args.frame)
    )
    aug_img, _ = warp_image(img, hv.h, w, h)
    t_grid = _load_t_grids(ds)[args.view]
    t_aug = augment_projection(t_grid, hv.h, hs.h)
    ground, _ = project_to_ground(aug_img, t_aug, grid)

    panels = [
        _gray_to_rgb(img.plane(0)),
        _gray_to_rgb(aug_img.plane(0)),
    ]
    fitted, sx, sy = _fit_into(h, w, ground.plane(0))
    ground_rgb = _gray_to_rgb(fitted)
    annotations = mvio.load_annotations(ds.annotation_path())
    marks = 0
    for rec in annotations:
        if rec.frame != args.frame:
            continue
        cell = grid.ground_to_grid(rec.world)
        moved = transform_scene_annotations([cell], hs.h, grid)[0]
        if not moved.visible:
            continue
        _draw_marker(ground_rgb, moved.x * sx, moved.y * sy)
        marks += 1
    panels.append(ground_rgb)
    canvas = np.concatenate(panels, axis=1).astype(np.float32)
    mvio.save_image_png(args.out, ImageBuffer(canvas))
    return {
        "command": "render",
        "out": args.out,
        "seed": args.seed,
        "frame": args.frame,
        "view": args.view,
        "markers": marks,
        "width": canvas.shape[1],
        "height": canvas.shape[0],
    }


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="mvkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--json", action="store_true", help="emit machine-readable JSON on stdout")
    p.add_argument("--threads", type=int, default=1, help="worker cap for frame loops")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", required=True, help="tool config JSON")
    sp.add_argument("--out", required=True, help="output dataset directory")
    sp.add_argument("--seed", type=int, default=None, help="override config seed")
    sp.set_defaults(fn=cmd_synth)

    ap = sub.add_parser("augment", help="apply two-level augmentation to a dataset")
    ap.add_argument("--dataset", required=True, help="dataset descriptor JSON")
    ap.add_argument("--view-aug", default="none", help="view augmentation kind")
    ap.add_argument("--scene-aug", default="none", help="scene augmentation kind")
    ap.add_argument("--proportion", type=float, default=0.5, help="augmented fraction")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True, help="output directory")
    ap.set_defaults(fn=cmd_augment)

    dp = sub.add_parser("detect", help="run the reference detector")
    dp.add_argument("--dataset", required=True)
    dp.add_argument("--aggregation", choices=["mean", "max"], default="mean")
    dp.add_argument("--nms-radius", type=float, default=None, help="cells; default ceil(0.5m/cell)")
    dp.add_argument("--out", required=True, help="detections JSONL path")
    dp.set_defaults(fn=cmd_detect)

    ep = sub.add_parser("eval", help="score detections against ground truth")
    ep.add_argument("--detections", required=True)
    ep.add_argument("--gt", required=True)
    ep.add_argument("--threshold-m", type=float, default=0.5)
    ep.add_argument("--report", required=True, help="metrics JSON output path")
    ep.set_defaults(fn=cmd_eval)

    rp = sub.add_parser("render", help="write an original/augmented/ground overlay figure")
    rp.add_argument("--dataset", required=True)
    rp.add_argument("--frame", type=int, required=True)
    rp.add_argument("--view", type=int, required=True)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--out", required=True, help="overlay PNG path")
    rp.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MVKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(result, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
