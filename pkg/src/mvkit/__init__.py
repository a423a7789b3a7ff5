"""Calibration-preserving two-level augmentation and evaluation toolkit
for multi-camera ground-plane detection."""

from .augmentation import (
    AugmentationKind,
    AugmentationRanges,
    SceneAugmentation,
    ViewAugmentation,
    affine_homography,
    augment_projection,
    crop_homography,
    hflip_homography,
    homography_from_4pt,
    perspective_homography,
    sample_scene_augmentation,
    sample_view_augmentation,
    scene_stream,
    transform_scene_annotations,
    transform_view_annotations,
    vflip_homography,
    view_stream,
)
from .evaluation import FrameMatch, MetricsReport, compute_metrics, match_detections
from .geometry import (
    CameraCalibration,
    GroundGrid,
    Homography,
    Point2,
    apply_point,
    compose,
    grid_homography,
    ground_projection_matrix,
    invert,
    rodrigues_to_rotation,
)
from .pipeline import (
    AggregationMode,
    Detection,
    DetectionSet,
    aggregate_ground_maps,
    default_nms_radius,
    kmeans2_score_filter,
    mse_ground_loss,
    mse_image_loss,
    nms_heatmap,
    run_detection,
)
from .synth import (
    SceneConfig,
    SyntheticScene,
    default_grid,
    generate_scene,
    look_at_extrinsics,
    render_ground_truth,
    render_view_heatmap,
)
from .warp import GroundMap, ImageBuffer, ValidMask, bilinear_sample, project_to_ground, warp_image

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
