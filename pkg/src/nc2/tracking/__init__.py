"""3D multi-object tracking with one adaptive filter per track."""

from .geometry import AssociationResult, assign, build_cv_model, gate, gate_threshold, iou3d
from .io import (
    DETECTION_COLUMNS,
    TRACK_COLUMNS,
    detections_csv,
    kitti_lines,
    parse_detections,
    read_detections,
    tracks_csv,
)
from .scenario import evaluate, lifecycle_oracle, make_scenario, run_scenario
from .tracker import (
    TRACK_CONFIG,
    Detection,
    LifecycleEvent,
    Track,
    Tracker,
    TrackRecord,
    TrackStatus,
    run_tracker,
    tracker_step,
)

__all__ = [
    "AssociationResult", "assign", "build_cv_model", "gate", "gate_threshold", "iou3d",
    "DETECTION_COLUMNS", "TRACK_COLUMNS", "detections_csv", "kitti_lines", "parse_detections",
    "read_detections", "tracks_csv", "evaluate", "lifecycle_oracle", "make_scenario",
    "run_scenario", "Detection", "LifecycleEvent", "Track", "Tracker", "TrackRecord",
    "TrackStatus", "run_tracker", "tracker_step", "TRACK_CONFIG",
]
