"""planartrack: multi-camera planar multi-object tracking.

Per-camera detections are fused onto one ground-plane canvas through
homographies, tracked with a constant-velocity Kalman filter and Hungarian
IoU association, and scored with the CLEAR-MOT / identity / detection
metric suite. A deterministic simulator provides verifiable ground truth.
"""

__version__ = "0.1.0"

from .assignment import Assignment, hungarian_assign, solve_square
from .geometry import (
    DistortionEstimator,
    DistortionModel,
    Homography,
    HomographyEstimator,
    Polyline,
    estimate_distortion,
    estimate_homography,
    reprojection_rms,
    straightness_residual,
)
from .ingest import (
    DetectionRecord,
    MaskRLE,
    SequenceManifest,
    box_iou,
    filter_and_nms,
    mask_to_bbox,
    read_detections,
    region_iou,
    rle_decode,
    rle_encode,
    select_frames,
    write_tracks,
)
from .metrics import (
    ClearCounts,
    EvaluationReport,
    FrameMatching,
    IdCounts,
    detection_pr,
    deta,
    evaluate_tracking,
    id_metrics,
    match_frames,
    mota,
    motp,
)
from .mosaic import (
    CameraConfig,
    MosaicLayout,
    Raster,
    compose_mosaic,
    dedupe_canvas_detections,
    map_detection_to_canvas,
    warp_raster,
)
from .simulate import (
    MotionConfig,
    NoiseConfig,
    ScenarioConfig,
    corrupt,
    generate_trajectories,
    grid_layout,
    project_and_render,
    run_scenario,
)
from .tracker import (
    KalmanState,
    MultiObjectTracker,
    Track,
    TrackerConfig,
    build_cost_matrix,
    kf_init,
    kf_predict,
    kf_update,
)
