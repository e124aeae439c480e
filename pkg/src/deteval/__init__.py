"""deteval: object-detection evaluation with optimal detection-label association.

Computes true-positive rates, AP, stable filtered metrics, and calibration
scores using a maximum-weight assignment over a scaled adjacency matrix
instead of greedy association, so the reported TP count is the maximum over
all valid associations.
"""

__version__ = "0.1.0"

from .geometry import Box2D, expected_stereo_depth_error, iou, overlap_over_area
from .matching import (
    Matching,
    ScaledAdjacency,
    Scenario,
    ScenarioParams,
    brute_force_match,
    build_adjacency,
    generate_scenario,
    greedy_match,
    optimal_match,
)
from .metrics import (
    ConfusionCounts,
    EvalConfig,
    EvalReport,
    average_precision,
    brier_score,
    calibration_curve,
    counts_from_matching,
    pr_curve,
)
from .filters import (
    FilterSpec,
    PairSet,
    build_pair_set,
    difficulty_filter,
    filtered_counts,
    naive_filtered_counts,
    parse_filter,
)
from .kitti import (
    DetectionRecord,
    FramePair,
    LabelRecord,
    apply_class_map,
    load_dataset,
    parse_kitti_line,
    suppress_dontcare,
    write_report,
)

__all__ = [
    "Box2D",
    "ConfusionCounts",
    "DetectionRecord",
    "EvalConfig",
    "EvalReport",
    "FilterSpec",
    "FramePair",
    "LabelRecord",
    "Matching",
    "PairSet",
    "ScaledAdjacency",
    "Scenario",
    "ScenarioParams",
    "apply_class_map",
    "average_precision",
    "brier_score",
    "brute_force_match",
    "build_adjacency",
    "build_pair_set",
    "calibration_curve",
    "counts_from_matching",
    "difficulty_filter",
    "expected_stereo_depth_error",
    "filtered_counts",
    "generate_scenario",
    "greedy_match",
    "iou",
    "load_dataset",
    "naive_filtered_counts",
    "optimal_match",
    "overlap_over_area",
    "parse_filter",
    "parse_kitti_line",
    "pr_curve",
    "suppress_dontcare",
    "write_report",
]
