"""Stable filtered metrics.

Filtering never re-runs the matching: counts under a filter are computed
from the subset of the unfiltered detection-label pairs (at fixed tau) for
which both members pass. A matched pair with exactly one member failing is
dropped entirely and contributes to no count, which is what makes every
error count monotone non-increasing under filtering. The naive
strike-then-rematch baseline is kept for comparison because it lacks that
stability.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .geometry import Box2D
from .matching import Matching, match_boxes
from .metrics import ConfusionCounts

SIDES = ("detection", "label", "both")

COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}

# Substitutes for explicit "unknown" (-1 sentinel) values so the KITTI
# difficulty semantics hold: unknown occlusion fails easy/medium but passes
# hard, and unknown truncation behaves symmetrically.
UNKNOWN_OCCLUSION_RANK = 2
UNKNOWN_TRUNCATION_RANK = 0.5

# KITTI devkit difficulty thresholds: (min bbox height px, max occlusion,
# max truncation). Externally sourced defaults; override via the table
# argument of difficulty_filter if a deployment needs different cuts.
DIFFICULTY_THRESHOLDS: dict[str, tuple[float, int, float]] = {
    "easy": (40.0, 0, 0.15),
    "medium": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}


class FilterError(ValueError):
    """Malformed filter expression or an atom referencing a missing attribute."""


def record_bbox(record: Any) -> Box2D:
    """The box of a record: KITTI-style objects expose .bbox, scenario-style
    records are (Box2D, payload) tuples."""
    bbox = getattr(record, "bbox", None)
    if isinstance(bbox, Box2D):
        return bbox
    if isinstance(record, Box2D):
        return record
    if isinstance(record, (tuple, list)) and record and isinstance(record[0], Box2D):
        return record[0]
    raise FilterError(f"record {record!r} carries no bounding box")


_MISSING = object()


def _record_field(record: Any, name: str) -> Any:
    if hasattr(record, name):
        return getattr(record, name)
    if name == "distance" and hasattr(record, "location_xyz"):
        return record.location_xyz[2]
    if isinstance(record, (tuple, list)) and len(record) == 2:
        payload = record[1]
        if isinstance(payload, Mapping):
            return payload.get(name, _MISSING)
        if name in ("confidence", "score") and isinstance(payload, (int, float)):
            return payload
    return _MISSING


def attribute_value(record: Any, name: str) -> float:
    """Resolve a filter attribute on a record.

    area/width/height_px/bbox_height derive from the record's box; truncation,
    occlusion, distance, score and custom keys come from the record itself.
    Unknown (-1 sentinel) truncation/occlusion resolve to fixed ranks.
    """
    if name == "area":
        return record_bbox(record).area
    if name == "width":
        return record_bbox(record).width
    if name in ("height_px", "bbox_height"):
        return record_bbox(record).height
    value = _record_field(record, name)
    if value is _MISSING:
        raise FilterError(f"filter attribute {name!r} missing on record {record!r}")
    if value is None:
        if name == "occlusion":
            return float(UNKNOWN_OCCLUSION_RANK)
        if name == "truncation":
            return float(UNKNOWN_TRUNCATION_RANK)
        raise FilterError(f"filter attribute {name!r} is unknown on record {record!r}")
    return float(value)


@dataclass(frozen=True)
class FilterAtom:
    side: str
    attribute: str
    op: str
    value: float

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise FilterError(f"atom side must be one of {SIDES}, got {self.side!r}")
        if self.op not in COMPARATORS:
            raise FilterError(f"unknown comparator {self.op!r}")

    def applies_to(self, side: str) -> bool:
        return self.side == "both" or self.side == side

    def evaluate(self, record: Any) -> bool:
        return COMPARATORS[self.op](attribute_value(record, self.attribute), self.value)

    def to_text(self) -> str:
        return f"{self.side}.{self.attribute} {self.op} {self.value:g}"


@dataclass(frozen=True)
class FilterSpec:
    """Conjunction of atomic predicates; the empty conjunction is always true."""

    atoms: tuple[FilterAtom, ...] = ()

    def passes(self, record: Any, side: str) -> bool:
        return all(a.evaluate(record) for a in self.atoms if a.applies_to(side))

    def passes_detection(self, record: Any) -> bool:
        return self.passes(record, "detection")

    def passes_label(self, record: Any) -> bool:
        return self.passes(record, "label")

    def with_atom(self, atom: FilterAtom) -> "FilterSpec":
        return FilterSpec(self.atoms + (atom,))

    def to_text(self) -> str:
        return " & ".join(a.to_text() for a in self.atoms)


ALWAYS_TRUE = FilterSpec(())

_ATOM_RE = re.compile(
    r"^\s*(?P<side>[A-Za-z_]+)\.(?P<attr>[A-Za-z_][A-Za-z0-9_]*)\s*"
    r"(?P<op><=|>=|==|<|>)\s*(?P<value>[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)\s*$"
)


def parse_filter(text: str) -> FilterSpec:
    """Parse the CLI filter grammar: `side.attribute OP value` atoms joined
    by `&`. An empty string parses to the always-true filter."""
    if not text.strip():
        return ALWAYS_TRUE
    atoms = []
    for i, part in enumerate(text.split("&")):
        m = _ATOM_RE.match(part)
        if m is None:
            raise FilterError(
                f"cannot parse filter atom {i + 1} ({part.strip()!r}); expected "
                "'side.attribute OP value' with side in "
                "detection|label|both and OP in <, <=, >, >=, =="
            )
        side = m.group("side")
        if side not in SIDES:
            raise FilterError(f"atom {i + 1}: side must be one of {SIDES}, got {side!r}")
        atoms.append(FilterAtom(side, m.group("attr"), m.group("op"), float(m.group("value"))))
    return FilterSpec(tuple(atoms))


def difficulty_filter(
    level: str, table: Mapping[str, tuple[float, int, float]] | None = None
) -> FilterSpec:
    """KITTI-style difficulty filter.

    Label-side atoms on bbox height, occlusion and truncation; the detection
    side gets only the height bound (detections carry no occlusion or
    truncation worth trusting).
    """
    thresholds = (table or DIFFICULTY_THRESHOLDS).get(level)
    if thresholds is None:
        raise FilterError(
            f"unknown difficulty {level!r}; expected one of {sorted(DIFFICULTY_THRESHOLDS)}"
        )
    height, occlusion, truncation = thresholds
    return FilterSpec(
        (
            FilterAtom("label", "bbox_height", ">=", float(height)),
            FilterAtom("label", "occlusion", "<=", float(occlusion)),
            FilterAtom("label", "truncation", "<=", float(truncation)),
            FilterAtom("detection", "bbox_height", ">=", float(height)),
        )
    )


@dataclass(frozen=True)
class PairSet:
    """A matching recast as records: full pairs plus unmatched singles.

    Built from exactly one Matching; immutable. This is the only input the
    stable filtered counts ever see, so filtering cannot re-run matching.
    """

    tau: float
    full_pairs: tuple[tuple[Any, Any, float], ...]
    detection_singles: tuple[Any, ...]
    label_singles: tuple[Any, ...]


def build_pair_set(
    matching: Matching,
    detections: Sequence[Any],
    labels: Sequence[Any],
    tau: float,
) -> PairSet:
    """Materialize a matching against its detection and label records."""
    for d, l, _ in matching.pairs:
        if not (0 <= d < len(detections)) or not (0 <= l < len(labels)):
            raise IndexError(
                f"matching pair ({d}, {l}) out of range for {len(detections)} detections "
                f"and {len(labels)} labels"
            )
    for d in matching.unmatched_detections:
        if not 0 <= d < len(detections):
            raise IndexError(f"unmatched detection index {d} out of range")
    for l in matching.unmatched_labels:
        if not 0 <= l < len(labels):
            raise IndexError(f"unmatched label index {l} out of range")
    return PairSet(
        tau=tau,
        full_pairs=tuple((detections[d], labels[l], v) for d, l, v in matching.pairs),
        detection_singles=tuple(detections[d] for d in matching.unmatched_detections),
        label_singles=tuple(labels[l] for l in matching.unmatched_labels),
    )


def filtered_counts(pair_set: PairSet, spec: FilterSpec) -> ConfusionCounts:
    """Counts over the subset of the unfiltered pairs passing the filter.

    A full pair counts as TP iff both members pass their side's atoms; a pair
    with either member failing is dropped entirely. Singles are judged by
    their own side only. Single pass, no re-matching.
    """
    tp = sum(
        1
        for det, lbl, _ in pair_set.full_pairs
        if spec.passes_detection(det) and spec.passes_label(lbl)
    )
    fp = sum(1 for det in pair_set.detection_singles if spec.passes_detection(det))
    fn = sum(1 for lbl in pair_set.label_singles if spec.passes_label(lbl))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def _record_confidence(record: Any) -> float:
    value = _record_field(record, "score")
    if value is _MISSING:
        value = _record_field(record, "confidence")
    if value is _MISSING or value is None:
        return 0.0
    return float(value)


def naive_filtered_counts(
    detections: Sequence[Any],
    labels: Sequence[Any],
    spec: FilterSpec,
    tau: float,
    matcher: str = "optimal",
) -> ConfusionCounts:
    """The unstable baseline: strike failing records first, then re-match.

    Kept for comparison sweeps; on a subset this can report more errors than
    the full set does.
    """
    kept_d = [r for r in detections if spec.passes_detection(r)]
    kept_l = [r for r in labels if spec.passes_label(r)]
    matching = match_boxes(
        [record_bbox(r) for r in kept_d],
        [record_bbox(r) for r in kept_l],
        tau,
        matcher,
        [_record_confidence(r) for r in kept_d],
    )
    from .metrics import counts_from_matching

    return counts_from_matching(matching)


def pass_mask(spec: FilterSpec, records: Sequence[Any], side: str) -> np.ndarray:
    """Boolean pass/fail vector for a record list on one side; lets callers
    evaluate each filter once per record instead of once per threshold."""
    return np.fromiter(
        (spec.passes(r, side) for r in records), dtype=bool, count=len(records)
    )


def masked_counts(
    matching: Matching,
    kept: Sequence[int],
    det_mask: np.ndarray,
    lbl_mask: np.ndarray,
) -> ConfusionCounts:
    """filtered_counts computed from index masks instead of records.

    ``matching`` lives in the kept-subset index space; ``kept`` maps subset
    indices back to original detection indices that ``det_mask`` is built on.
    Semantics are pinned to filtered_counts by test.
    """
    tp = 0
    fp = 0
    for d, l, _ in matching.pairs:
        if det_mask[kept[d]] and lbl_mask[l]:
            tp += 1
    for d in matching.unmatched_detections:
        if det_mask[kept[d]]:
            fp += 1
    fn = int(np.count_nonzero(lbl_mask[list(matching.unmatched_labels)])) if matching.unmatched_labels else 0
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)
