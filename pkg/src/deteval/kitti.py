"""KITTI-format ingestion and report serialization.

Label files carry 15 whitespace-separated fields per object in devkit order
(type, truncated, occluded, alpha, bbox x4, dimensions x3, location x3,
rotation_y); detection files append a 16th score field. Parsing is strict:
arity mismatches, non-numeric or non-finite fields, and out-of-range
truncation/occlusion are rejected with the line and column named. The -1
sentinel on truncation/occlusion parses into an explicit unknown marker
(None) rather than erroring, since detector result files routinely carry it.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .geometry import Box2D, overlap_over_area
from .metrics import EvalReport

DONTCARE = "DontCare"

LABEL_ARITY = 15
DETECTION_ARITY = 16

# Floats are serialized to 9 significant digits in reports.
REPORT_SIG_DIGITS = 9


class KittiParseError(ValueError):
    """A malformed KITTI line, located by line number and column."""

    def __init__(self, message: str, line_number: int, column: int, path: str | None = None):
        self.line_number = line_number
        self.column = column
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line_number}:{column}: {message}")

    def with_path(self, path: str) -> "KittiParseError":
        return KittiParseError(
            str(self).split(": ", 1)[1], self.line_number, self.column, path
        )


@dataclass(frozen=True)
class LabelRecord:
    class_name: str
    truncation: float | None
    occlusion: int | None
    alpha: float
    bbox: Box2D | None
    dimensions_hwl: tuple[float, float, float]
    location_xyz: tuple[float, float, float]
    rotation_y: float

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONTCARE


@dataclass(frozen=True)
class DetectionRecord(LabelRecord):
    score: float = 0.0


@dataclass(frozen=True)
class FramePair:
    frame_id: str
    labels: tuple[LabelRecord, ...]
    detections: tuple[DetectionRecord, ...]


def _token_column(text: str, tokens: list[str], index: int) -> int:
    cursor = 0
    for i, tok in enumerate(tokens):
        pos = text.index(tok, cursor)
        if i == index:
            return pos + 1
        cursor = pos + len(tok)
    return 1


def parse_kitti_line(
    text: str, kind: str = "label", line_number: int = 1
) -> LabelRecord | DetectionRecord:
    """Parse one KITTI object line into a typed record.

    ``kind`` is "label" (15 fields) or "detection" (16 fields, trailing
    score). The class string is preserved verbatim.
    """
    if kind not in ("label", "detection"):
        raise ValueError(f"kind must be 'label' or 'detection', got {kind!r}")
    arity = LABEL_ARITY if kind == "label" else DETECTION_ARITY
    tokens = text.split()
    if len(tokens) != arity:
        raise KittiParseError(
            f"expected {arity} fields for a {kind} line, got {len(tokens)}",
            line_number,
            1,
        )

    def fail(index: int, message: str) -> KittiParseError:
        return KittiParseError(message, line_number, _token_column(text, tokens, index))

    def number(index: int, name: str) -> float:
        try:
            value = float(tokens[index])
        except ValueError:
            raise fail(index, f"field {name!r}: not a number: {tokens[index]!r}") from None
        if not math.isfinite(value):
            raise fail(index, f"field {name!r}: non-finite value {tokens[index]!r}")
        return value

    class_name = tokens[0]
    truncation_raw = number(1, "truncated")
    if truncation_raw == -1.0:
        truncation: float | None = None
    elif 0.0 <= truncation_raw <= 1.0:
        truncation = truncation_raw
    else:
        raise fail(1, f"field 'truncated': {truncation_raw} outside [0, 1] (or the -1 sentinel)")

    occlusion_raw = number(2, "occluded")
    if occlusion_raw != int(occlusion_raw):
        raise fail(2, f"field 'occluded': must be integer-valued, got {tokens[2]!r}")
    occ_int = int(occlusion_raw)
    if occ_int == -1:
        occlusion: int | None = None
    elif occ_int in (0, 1, 2, 3):
        occlusion = occ_int
    else:
        raise fail(2, f"field 'occluded': {occ_int} not in {{0, 1, 2, 3}} (or the -1 sentinel)")

    alpha = number(3, "alpha")
    corners = [number(4 + i, name) for i, name in enumerate(("left", "top", "right", "bottom"))]
    try:
        bbox: Box2D | None = Box2D(*corners)
    except ValueError as exc:
        if class_name == DONTCARE:
            bbox = None
        else:
            raise fail(4, f"bbox: {exc}") from None
    dimensions = tuple(number(8 + i, f"dimensions[{i}]") for i in range(3))
    location = tuple(number(11 + i, f"location[{i}]") for i in range(3))
    rotation_y = number(14, "rotation_y")

    if kind == "label":
        return LabelRecord(
            class_name, truncation, occlusion, alpha, bbox, dimensions, location, rotation_y
        )
    score = number(15, "score")
    return DetectionRecord(
        class_name, truncation, occlusion, alpha, bbox, dimensions, location, rotation_y, score
    )


def format_kitti_line(record: LabelRecord) -> str:
    """Serialize a record back to devkit text; parse(format(r)) == r."""

    def num(value: float | None) -> str:
        if value is None:
            return "-1"
        return repr(float(value))

    bbox = record.bbox.as_tuple() if record.bbox is not None else (-1.0, -1.0, -1.0, -1.0)
    fields = [
        record.class_name,
        num(record.truncation),
        "-1" if record.occlusion is None else str(record.occlusion),
        num(record.alpha),
        *(num(v) for v in bbox),
        *(num(v) for v in record.dimensions_hwl),
        *(num(v) for v in record.location_xyz),
        num(record.rotation_y),
    ]
    if isinstance(record, DetectionRecord):
        fields.append(num(record.score))
    return " ".join(fields)


def parse_kitti_file(path: Path, kind: str) -> list[LabelRecord | DetectionRecord]:
    records = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_kitti_line(line, kind, line_number=i))
        except KittiParseError as exc:
            raise exc.with_path(str(path)) from None
    return records


def apply_class_map(
    records: Sequence[LabelRecord], collapse: dict[str, str]
) -> list[LabelRecord]:
    """Replace each record's class by its mapping if present; single
    application, chains are not resolved."""
    if not collapse:
        return list(records)
    return [
        replace(r, class_name=collapse.get(r.class_name, r.class_name)) for r in records
    ]


def suppress_dontcare(
    detections: Sequence[DetectionRecord],
    dontcare_regions: Sequence[Box2D],
    overlap_threshold: float,
) -> list[DetectionRecord]:
    """Drop detections lying mostly inside a DontCare region, before matching."""
    if not 0.0 < overlap_threshold <= 1.0:
        raise ValueError(f"overlap threshold must lie in (0, 1], got {overlap_threshold!r}")
    if not dontcare_regions:
        return list(detections)
    kept = []
    for det in detections:
        if det.bbox is not None and any(
            overlap_over_area(det.bbox, region) >= overlap_threshold
            for region in dontcare_regions
        ):
            continue
        kept.append(det)
    return kept


def load_dataset(labels_dir: str | Path, detections_dir: str | Path) -> Iterator[FramePair]:
    """Iterate frames in lexicographic frame-id order.

    Frames are driven by the label directory; a labeled frame without a
    detection file yields an empty detection list (all its labels become FN
    candidates), never an error.
    """
    labels_dir = Path(labels_dir)
    detections_dir = Path(detections_dir)
    for d in (labels_dir, detections_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    for label_path in sorted(labels_dir.glob("*.txt"), key=lambda p: p.stem):
        frame_id = label_path.stem
        labels = parse_kitti_file(label_path, "label")
        det_path = detections_dir / label_path.name
        detections = parse_kitti_file(det_path, "detection") if det_path.exists() else []
        yield FramePair(frame_id, tuple(labels), tuple(detections))


def _round_floats(value, sig: int = REPORT_SIG_DIGITS):
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        return float(f"{value:.{sig}g}")
    if isinstance(value, dict):
        return {k: _round_floats(v, sig) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v, sig) for v in value]
    return value


def report_json(report: EvalReport) -> str:
    return json.dumps(_round_floats(report.as_dict()), indent=2)


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "-" for c in name)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in (_round_floats(x) for x in row)])


def write_report(report: EvalReport, path: str | Path, format: str = "json") -> None:
    """Serialize a report: one self-describing JSON document, or a directory
    of CSV files (summary plus one file per curve and calibration table)."""
    path = Path(path)
    if format == "json":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_json(report) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    path.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for cls in sorted(report.classes):
        for name in sorted(report.classes[cls]):
            cell = report.classes[cls][name]
            summary_rows.append(
                [
                    cls,
                    name,
                    cell.counts.tp,
                    cell.counts.fp,
                    cell.counts.fn,
                    cell.ap,
                    cell.brier.get("labels"),
                    cell.brier.get("detections"),
                    cell.brier.get("union"),
                ]
            )
            _write_csv(
                path / f"curve_{_safe_name(cls)}_{_safe_name(name)}.csv",
                ["threshold", "tp", "fp", "fn", "precision", "recall", "fp_per_frame"],
                (
                    [p.threshold, p.tp, p.fp, p.fn, p.precision, p.recall, p.fp_per_frame]
                    for p in cell.curve
                ),
            )
            _write_csv(
                path / f"calibration_{_safe_name(cls)}_{_safe_name(name)}.csv",
                ["bin_center", "mean_confidence", "empirical_precision", "sample_count"],
                (
                    [b.bin_center, b.mean_confidence, b.empirical_precision, b.sample_count]
                    for b in cell.calibration
                ),
            )
    _write_csv(
        path / "summary.csv",
        ["class", "filter", "tp", "fp", "fn", "ap", "brier_labels", "brier_detections", "brier_union"],
        summary_rows,
    )
    (path / "config.json").write_text(
        json.dumps(_round_floats({"config": report.config.as_dict(), "manifest": report.manifest}), indent=2)
        + "\n"
    )
