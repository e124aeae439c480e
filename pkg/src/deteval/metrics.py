"""Confusion counts, PR curves, average precision, Brier scores, calibration.

Everything here is driven by an explicit EvalConfig; nothing reads hidden
defaults. Matchings are recomputed from scratch at every confidence
threshold because optimal matchings are not nested under detection removal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box2D
from .matching import MATCHERS, Matching, iou_matrix, match_iou_matrix

AP_MODES = ("all-points", "eleven-point", "forty-one-point")
BRIER_SUPPORTS = ("labels", "detections", "union")

# Unique-score grids are capped by uniform subsampling past this many values.
MAX_UNIQUE_THRESHOLDS = 1001

# One frame: detections as (Box2D, confidence) pairs, labels as plain boxes.
Frame = tuple[Sequence[tuple[Box2D, float]], Sequence[Box2D]]


class EmptySupportError(ValueError):
    """A score was requested over an empty support; the value is undefined."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        # no detections means no false alarms (VOC convention)
        return 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


EMPTY_COUNTS = ConfusionCounts(0, 0, 0)


@dataclass(frozen=True)
class EvalConfig:
    """Full evaluation configuration; echoed verbatim into every report."""

    tau: float = 0.7
    matcher: str = "optimal"
    min_confidence: float = 0.0
    threshold_grid: str = "unique"
    ap_mode: str = "all-points"
    brier_support: str = "labels"
    calibration_bins: int = 10
    class_collapse: dict[str, str] = field(default_factory=dict)
    dontcare_enabled: bool = True
    dontcare_overlap: float = 0.5
    score_transform: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau!r}")
        if self.matcher not in MATCHERS:
            raise ValueError(f"matcher must be one of {MATCHERS}, got {self.matcher!r}")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError(f"min_confidence must lie in [0, 1], got {self.min_confidence!r}")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}, got {self.ap_mode!r}")
        if self.brier_support not in BRIER_SUPPORTS:
            raise ValueError(
                f"brier_support must be one of {BRIER_SUPPORTS}, got {self.brier_support!r}"
            )
        if self.calibration_bins < 2:
            raise ValueError("calibration_bins must be at least 2")
        if not 0.0 < self.dontcare_overlap <= 1.0:
            raise ValueError("dontcare_overlap must lie in (0, 1]")
        if self.score_transform not in (None, "sigmoid", "minmax"):
            raise ValueError(f"unknown score_transform {self.score_transform!r}")
        self.grid_spec()  # validates the grid string

    def grid_spec(self) -> tuple[str, int]:
        """Parse threshold_grid into ("unique", 0) or ("fixed", N)."""
        if self.threshold_grid == "unique":
            return ("unique", 0)
        if self.threshold_grid.startswith("fixed:"):
            try:
                n = int(self.threshold_grid.split(":", 1)[1])
            except ValueError:
                n = 0
            if n < 2:
                raise ValueError(
                    f"fixed grid needs at least 2 thresholds, got {self.threshold_grid!r}"
                )
            return ("fixed", n)
        raise ValueError(
            f"threshold_grid must be 'unique' or 'fixed:N', got {self.threshold_grid!r}"
        )

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "matcher": self.matcher,
            "min_confidence": self.min_confidence,
            "threshold_grid": self.threshold_grid,
            "ap_mode": self.ap_mode,
            "brier_support": self.brier_support,
            "calibration_bins": self.calibration_bins,
            "class_collapse": dict(sorted(self.class_collapse.items())),
            "dontcare_enabled": self.dontcare_enabled,
            "dontcare_overlap": self.dontcare_overlap,
            "score_transform": self.score_transform,
        }


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    fp_per_frame: float

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "fp_per_frame": self.fp_per_frame,
        }


@dataclass(frozen=True)
class CalibrationBin:
    bin_center: float
    mean_confidence: float | None
    empirical_precision: float | None
    sample_count: int

    def as_dict(self) -> dict:
        return {
            "bin_center": self.bin_center,
            "mean_confidence": self.mean_confidence,
            "empirical_precision": self.empirical_precision,
            "sample_count": self.sample_count,
        }


@dataclass
class FilterResult:
    """Everything the report carries for one (class, filter) cell."""

    counts: ConfusionCounts
    ap: float
    brier: dict[str, float | None]
    curve: list[CurvePoint]
    calibration: list[CalibrationBin]
    recall_violations: int = 0

    def as_dict(self) -> dict:
        return {
            "counts": self.counts.as_dict(),
            "ap": self.ap,
            "brier": {k: self.brier.get(k) for k in BRIER_SUPPORTS},
            "curve": [p.as_dict() for p in self.curve],
            "calibration": [b.as_dict() for b in self.calibration],
            "recall_violations": self.recall_violations,
        }


@dataclass
class EvalReport:
    """Self-describing evaluation result: config echo, manifest, per-class cells."""

    config: EvalConfig
    classes: dict[str, dict[str, FilterResult]]
    manifest: dict | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "manifest": self.manifest,
            "notes": list(self.notes),
            "classes": {
                cls: {"filters": {name: fr.as_dict() for name, fr in sorted(cells.items())}}
                for cls, cells in sorted(self.classes.items())
            },
        }


def counts_from_matching(matching: Matching) -> ConfusionCounts:
    """TP/FP/FN as the pair and residue cardinalities of a matching."""
    return ConfusionCounts(
        tp=len(matching.pairs),
        fp=len(matching.unmatched_detections),
        fn=len(matching.unmatched_labels),
    )


def curve_point(threshold: float, counts: ConfusionCounts, num_frames: int) -> CurvePoint:
    return CurvePoint(
        threshold=threshold,
        tp=counts.tp,
        fp=counts.fp,
        fn=counts.fn,
        precision=counts.precision,
        recall=counts.recall,
        fp_per_frame=counts.fp / num_frames if num_frames else 0.0,
    )


def count_recall_violations(points: Sequence[CurvePoint]) -> int:
    """Adjacent descending-threshold points whose recall decreases.

    Provably zero for the built-in matchers (lower thresholds only add
    candidates); recorded, never clamped, so a misbehaving matcher surfaces.
    """
    return sum(
        1 for a, b in zip(points, points[1:]) if b.recall < a.recall
    )


def make_threshold_grid(confidences: Sequence[float], config: EvalConfig) -> list[float]:
    """Descending threshold grid per the config; empty when no scores exist
    in unique mode."""
    mode, n = config.grid_spec()
    if mode == "fixed":
        return [i / (n - 1) for i in range(n - 1, -1, -1)]
    values = sorted(set(float(c) for c in confidences), reverse=True)
    if len(values) > MAX_UNIQUE_THRESHOLDS:
        idx = np.unique(
            np.linspace(0, len(values) - 1, MAX_UNIQUE_THRESHOLDS).round().astype(int)
        )
        values = [values[i] for i in idx]
    return values


def _validated_frames(frames: Sequence[Frame], probabilistic: bool = True) -> None:
    for dets, _ in frames:
        for _, conf in dets:
            if not math.isfinite(conf):
                raise ValueError(f"non-finite confidence {conf!r}")
            if probabilistic and not 0.0 <= conf <= 1.0:
                raise ValueError(f"confidence {conf!r} outside [0, 1]")


def _frame_matching(
    frame: Frame, config: EvalConfig, threshold: float, matcher: str | None = None
) -> tuple[Matching, list[int]]:
    """Match one frame's detections at/above a confidence threshold.

    Returns the matching (indices in the kept-subset space) and the kept
    original detection indices.
    """
    detections, labels = frame
    keep = [i for i, (_, c) in enumerate(detections) if c >= threshold]
    boxes = [detections[i][0] for i in keep]
    confs = [detections[i][1] for i in keep]
    raw = iou_matrix(boxes, list(labels))
    matching = match_iou_matrix(raw, config.tau, matcher or config.matcher, confs)
    return matching, keep


def pr_curve(frames: Sequence[Frame], config: EvalConfig) -> list[CurvePoint]:
    """Precision/recall curve with per-threshold re-matching.

    For each threshold in the grid (descending), detections at or above the
    threshold are re-matched per frame with the configured matcher and the
    counts are summed over frames. Detections below config.min_confidence
    are discarded outright.
    """
    _validated_frames(frames)
    kept_frames: list[Frame] = [
        ([dc for dc in dets if dc[1] >= config.min_confidence], labels)
        for dets, labels in frames
    ]
    confidences = [c for dets, _ in kept_frames for _, c in dets]
    grid = make_threshold_grid(confidences, config)
    if not grid:
        grid = [1.0]
    num_frames = max(len(frames), 1)
    points = []
    for t in grid:
        total = EMPTY_COUNTS
        for frame in kept_frames:
            matching, _ = _frame_matching(frame, config, t)
            total = total + counts_from_matching(matching)
        points.append(curve_point(t, total, num_frames))
    return points


def average_precision(curve: Sequence[CurvePoint], mode: str = "all-points") -> float:
    """Integrate a PR curve into a single AP value.

    "all-points" uses the right-envelope interpolation over every recall
    change; "eleven-point" and "forty-one-point" average interpolated
    precision over fixed recall grids. Points where no detection was kept
    (tp + fp == 0, precision 1 by convention) carry no evidence and are
    excluded from the interpolation basis.
    """
    if mode not in AP_MODES:
        raise ValueError(f"ap mode must be one of {AP_MODES}, got {mode!r}")
    if not curve:
        raise ValueError("cannot integrate an empty curve")
    recalls = [p.recall for p in curve]
    if any(b < a for a, b in zip(recalls, recalls[1:])):
        raise ValueError("curve recall must be non-decreasing")

    basis = [(p.recall, p.precision) for p in curve if p.tp + p.fp > 0]
    if mode == "all-points":
        if not basis:
            return 0.0
        mrec = [0.0] + [r for r, _ in basis] + [1.0]
        mpre = [0.0] + [p for _, p in basis] + [0.0]
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        return math.fsum(
            (mrec[i] - mrec[i - 1]) * mpre[i]
            for i in range(1, len(mrec))
            if mrec[i] != mrec[i - 1]
        )

    n_points = 11 if mode == "eleven-point" else 41
    grid = [i / (n_points - 1) for i in range(n_points)]
    total = 0.0
    for r in grid:
        total += max((p for rr, p in basis if rr >= r), default=0.0)
    return total / n_points


def _sample_terms(
    frames: Sequence[Frame], config: EvalConfig
) -> tuple[list[float], list[float], int]:
    """Squared-error terms for matched (TP) and false-positive detections,
    plus the count of unmatched labels (each contributing 1.0)."""
    tp_terms: list[float] = []
    fp_terms: list[float] = []
    num_fn = 0
    for frame in frames:
        matching, keep = _frame_matching(frame, config, config.min_confidence)
        detections, _ = frame
        matched = {i for i, _, _ in matching.pairs}
        for sub_i in range(len(keep)):
            conf = detections[keep[sub_i]][1]
            if sub_i in matched:
                tp_terms.append((1.0 - conf) ** 2)
            else:
                fp_terms.append(conf**2)
        num_fn += len(matching.unmatched_labels)
    return tp_terms, fp_terms, num_fn


def brier_score(frames: Sequence[Frame], config: EvalConfig, support: str) -> float:
    """Mean squared confidence error over the chosen support.

    labels: matched labels contribute (1 - confidence)^2, unmatched labels 1;
    detections: TPs contribute (1 - confidence)^2, FPs confidence^2;
    union: TPs once, FPs, and FNs together. Raises EmptySupportError when the
    support has no members (the score is undefined, never 0).
    """
    if support not in BRIER_SUPPORTS:
        raise ValueError(f"brier support must be one of {BRIER_SUPPORTS}, got {support!r}")
    _validated_frames(frames)
    tp_terms, fp_terms, num_fn = _sample_terms(frames, config)
    if support == "labels":
        terms, extra = tp_terms, num_fn
    elif support == "detections":
        terms, extra = tp_terms + fp_terms, 0
    else:
        terms, extra = tp_terms + fp_terms, num_fn
    count = len(terms) + extra
    if count == 0:
        raise EmptySupportError(f"brier support {support!r} is empty")
    return (math.fsum(terms) + extra) / count


def calibration_curve(frames: Sequence[Frame], config: EvalConfig) -> list[CalibrationBin]:
    """Reliability diagram data: per equal-width confidence bin, the mean
    confidence and the TP fraction under the optimal matching.

    Empty bins are emitted with sample_count 0 and absent statistics.
    """
    _validated_frames(frames)
    bins = config.calibration_bins
    conf_sums = [0.0] * bins
    tp_counts = [0] * bins
    totals = [0] * bins
    for frame in frames:
        matching, keep = _frame_matching(frame, config, config.min_confidence, "optimal")
        detections, _ = frame
        matched = {i for i, _, _ in matching.pairs}
        for sub_i in range(len(keep)):
            conf = detections[keep[sub_i]][1]
            b = min(int(conf * bins), bins - 1)
            conf_sums[b] += conf
            totals[b] += 1
            if sub_i in matched:
                tp_counts[b] += 1
    out = []
    for b in range(bins):
        center = (b + 0.5) / bins
        if totals[b] == 0:
            out.append(CalibrationBin(center, None, None, 0))
        else:
            out.append(
                CalibrationBin(center, conf_sums[b] / totals[b], tp_counts[b] / totals[b], totals[b])
            )
    return out
