"""Shared fixtures: the two-detection overlapping-label frame, the
filter-instability frame, and a small on-disk KITTI dataset."""

from __future__ import annotations

from pathlib import Path

import pytest

from deteval.geometry import Box2D

# Two overlapping labels and two detections where greedy association drops a
# pair. Exact rational coordinates give IoUs of 0.56 (d0-l0), 0.72 (d0-l1),
# 0.56 (d1-l1) and ~0.12 (d1-l0, below any usual tau).
FIG8_TAU = 0.5
FIG8_LABELS = [Box2D(0.0, 0.0, 1.0, 1.0), Box2D(0.5, 0.0, 1.5, 1.0)]
FIG8_DETECTIONS = [
    (Box2D(72 / 373, 0.0, 1075 / 746, 1.0), 0.9),  # cross-matcher, visited first
    (Box2D(61 / 78, 0.0, 61 / 78 + 1.0, 1.0), 0.8),
]


@pytest.fixture
def fig8():
    return {
        "detections": list(FIG8_DETECTIONS),
        "labels": list(FIG8_LABELS),
        "tau": FIG8_TAU,
    }


# One detection over two labels; the detection's best label is the one a
# width filter removes. Stable filtering drops the pair and reports the
# surviving label as FN; naive strike-then-rematch reports a TP instead.
BADGAME_TAU = 0.7
BADGAME_LABELS = [
    (Box2D(0.0, 0.0, 0.60, 1.0), {"kind": "label-1"}),  # width 0.60, fails >= 0.65
    (Box2D(0.05, 0.0, 0.75, 1.0), {"kind": "label-2"}),  # width 0.70, passes
]
BADGAME_DETECTIONS = [(Box2D(0.0, 0.0, 0.68, 1.0), 0.9)]  # width 0.68


@pytest.fixture
def badgame():
    return {
        "detections": list(BADGAME_DETECTIONS),
        "labels": list(BADGAME_LABELS),
        "tau": BADGAME_TAU,
        "width_threshold": 0.65,
    }


# On-disk KITTI fixture: frame 0 exercises DontCare suppression, the Van
# collapse and an FP; frame 1 is the overlapping-label frame scaled by 100;
# frame 2 has a label with no detection file at all.
FRAME0_LABELS = [
    "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
    "Van 0.10 1 2.00 100.00 150.00 160.00 200.00 2.00 1.80 4.50 -3.00 1.60 20.00 1.50",
    "DontCare -1 -1 -10 700.00 150.00 800.00 200.00 -1 -1 -1 -1000 -1000 -1000 -10",
]
FRAME0_DETECTIONS = [
    "Car -1 -1 -1.58 587.50 173.00 614.00 200.50 -1 -1 -1 -1000 -1000 -1000 -10 0.90",
    "Car -1 -1 0.00 710.00 155.00 790.00 195.00 -1 -1 -1 -1000 -1000 -1000 -10 0.80",
    "Car -1 -1 0.00 300.00 100.00 360.00 140.00 -1 -1 -1 -1000 -1000 -1000 -10 0.30",
]
# frame-1 geometry: the overlapping-label frame scaled by 100 and shifted by
# +200 in x so every coordinate looks like a plausible pixel value
_F8_OFF = 200.0
_F8D0 = (_F8_OFF + 100 * 72 / 373, _F8_OFF + 100 * 1075 / 746)
_F8D1 = (_F8_OFF + 100 * 61 / 78, _F8_OFF + 100 * (61 / 78 + 1.0))
FRAME1_LABELS = [
    "Car 0.00 0 0.00 200.0 100.0 300.0 200.0 1.5 1.6 3.9 -1.0 1.7 25.0 0.0",
    "Car 0.00 0 0.00 250.0 100.0 350.0 200.0 1.5 1.6 3.9 1.0 1.7 25.0 0.0",
]
FRAME1_DETECTIONS = [
    f"Car -1 -1 0.00 {_F8D0[0]:.6f} 100.0 {_F8D0[1]:.6f} 200.0 -1 -1 -1 -1000 -1000 -1000 -10 0.90",
    f"Car -1 -1 0.00 {_F8D1[0]:.6f} 100.0 {_F8D1[1]:.6f} 200.0 -1 -1 -1 -1000 -1000 -1000 -10 0.80",
]
FRAME2_LABELS = [
    "Car 0.05 1 0.30 400.00 120.00 450.00 170.00 1.5 1.6 3.9 5.0 1.7 30.0 0.3",
]


def write_kitti_dataset(root: Path) -> tuple[Path, Path]:
    labels = root / "labels"
    detections = root / "detections"
    labels.mkdir(parents=True, exist_ok=True)
    detections.mkdir(parents=True, exist_ok=True)
    (labels / "000000.txt").write_text("\n".join(FRAME0_LABELS) + "\n")
    (detections / "000000.txt").write_text("\n".join(FRAME0_DETECTIONS) + "\n")
    (labels / "000001.txt").write_text("\n".join(FRAME1_LABELS) + "\n")
    (detections / "000001.txt").write_text("\n".join(FRAME1_DETECTIONS) + "\n")
    (labels / "000002.txt").write_text("\n".join(FRAME2_LABELS) + "\n")
    return labels, detections


@pytest.fixture
def kitti_dataset(tmp_path):
    return write_kitti_dataset(tmp_path)
