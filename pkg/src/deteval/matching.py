"""Detection-label association.

Builds the scaled, thresholded adjacency matrix whose maximum-weight
assignment is guaranteed to have maximum cardinality first and maximum total
overlap second, and provides three matchers over it: the optimal assignment
solver, the greedy baseline used by standard toolkits, and an exhaustive
oracle for small instances.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Box2D

# Past this dimension the 1/(2n^2) cardinality separation between scaled
# entries approaches float64 round-off, so adjacency construction refuses.
MAX_ADJACENCY_DIM = 10_000

# Hard guard for the exhaustive matcher; it exists as a test oracle only.
BRUTE_FORCE_LIMIT = 8

MATCHERS = ("optimal", "greedy-confidence", "brute-force")


def _validate_tau(tau: float) -> None:
    if not isinstance(tau, (int, float)) or not math.isfinite(tau) or not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau!r}")


def iou_matrix(detections: Sequence[Box2D], labels: Sequence[Box2D]) -> np.ndarray:
    """Pairwise IoU with detections on rows and labels on columns."""
    m, k = len(detections), len(labels)
    if m == 0 or k == 0:
        return np.zeros((m, k), dtype=np.float64)
    d = np.array([b.as_tuple() for b in detections], dtype=np.float64)
    g = np.array([b.as_tuple() for b in labels], dtype=np.float64)
    iw = np.minimum(d[:, None, 2], g[None, :, 2]) - np.maximum(d[:, None, 0], g[None, :, 0])
    ih = np.minimum(d[:, None, 3], g[None, :, 3]) - np.maximum(d[:, None, 1], g[None, :, 1])
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    d_area = (d[:, 2] - d[:, 0]) * (d[:, 3] - d[:, 1])
    g_area = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    return inter / (d_area[:, None] + g_area[None, :] - inter)


@dataclass(frozen=True)
class ScaledAdjacency:
    """Square, zero-completed association matrix with entries (IoU + n) / (2 n^2).

    ``n`` is the post-completion dimension max(num_detections, num_labels).
    Entries below the IoU threshold ``tau`` and entries in completion rows or
    columns are exactly zero; every nonzero entry therefore lies in
    [1/(2n), 1/(2n) + 1/(2n^2)], which is what makes any k-pair assignment
    outweigh any (k-1)-pair assignment.
    """

    n: int
    tau: float
    entries: np.ndarray
    raw_iou: np.ndarray
    num_detections: int
    num_labels: int


def scaled_adjacency_from_iou(raw: np.ndarray, tau: float) -> ScaledAdjacency:
    """Build a ScaledAdjacency from a precomputed (detections x labels) IoU matrix."""
    _validate_tau(tau)
    m, k = raw.shape
    n = max(m, k)
    if n == 0:
        raise ValueError("adjacency undefined with no detections and no labels (n = 0)")
    if n > MAX_ADJACENCY_DIM:
        raise ValueError(
            f"adjacency dimension {n} exceeds {MAX_ADJACENCY_DIM}; scaled entries "
            "would no longer be separable in float64"
        )
    full = np.zeros((n, n), dtype=np.float64)
    full[:m, :k] = raw
    entries = np.where(full >= tau, (full + n) / (2.0 * n * n), 0.0)
    return ScaledAdjacency(
        n=n, tau=tau, entries=entries, raw_iou=full, num_detections=m, num_labels=k
    )


def build_adjacency(
    detections: Sequence[Box2D], labels: Sequence[Box2D], tau: float
) -> ScaledAdjacency:
    """Scaled, tau-thresholded, zero-completed adjacency for one frame."""
    return scaled_adjacency_from_iou(iou_matrix(detections, labels), tau)


@dataclass(frozen=True)
class Matching:
    """Injective pairing of detection indices to label indices.

    ``pairs`` holds (detection_index, label_index, iou) sorted by detection
    index; indices absent from any pair appear in the unmatched residue.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_labels: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def total_iou(self) -> float:
        return math.fsum(p[2] for p in self.pairs)

    def validate(self, num_detections: int, num_labels: int, tau: float | None = None) -> None:
        """Check injectivity and the exactly-once partition of both index sets."""
        det_idx = [p[0] for p in self.pairs]
        lbl_idx = [p[1] for p in self.pairs]
        if len(set(det_idx)) != len(det_idx):
            raise ValueError("detection index doubly associated")
        if len(set(lbl_idx)) != len(lbl_idx):
            raise ValueError("label index doubly associated")
        if sorted(det_idx + list(self.unmatched_detections)) != list(range(num_detections)):
            raise ValueError("pairs and unmatched_detections do not partition detections")
        if sorted(lbl_idx + list(self.unmatched_labels)) != list(range(num_labels)):
            raise ValueError("pairs and unmatched_labels do not partition labels")
        if tau is not None and any(p[2] < tau for p in self.pairs):
            raise ValueError("pair with IoU below tau")


def _with_residue(
    pairs: list[tuple[int, int, float]], num_detections: int, num_labels: int
) -> Matching:
    pairs = sorted(pairs)
    matched_d = {p[0] for p in pairs}
    matched_l = {p[1] for p in pairs}
    return Matching(
        pairs=tuple(pairs),
        unmatched_detections=tuple(i for i in range(num_detections) if i not in matched_d),
        unmatched_labels=tuple(j for j in range(num_labels) if j not in matched_l),
    )


def optimal_match(adj: ScaledAdjacency) -> Matching:
    """Maximum-weight assignment over the scaled adjacency.

    By the scaling of the entries this matching has maximum cardinality among
    tau-feasible matchings and, among those, maximum total IoU. Assignments
    landing on zero entries (square-completion artifacts or sub-threshold
    cells) are filtered into the unmatched residue.
    """
    rows, cols = linear_sum_assignment(adj.entries, maximize=True)
    pairs = [
        (int(i), int(j), float(adj.raw_iou[i, j]))
        for i, j in zip(rows, cols)
        if i < adj.num_detections and j < adj.num_labels and adj.entries[i, j] > 0.0
    ]
    return _with_residue(pairs, adj.num_detections, adj.num_labels)


def _greedy_from_matrix(
    raw: np.ndarray, confidences: Sequence[float] | None, tau: float, order: str
) -> Matching:
    m, k = raw.shape
    if order == "confidence-descending":
        if confidences is None:
            raise ValueError("confidence-descending order requires confidences")
        visit = sorted(range(m), key=lambda i: (-confidences[i], i))
    elif order == "input-order":
        visit = list(range(m))
    else:
        raise ValueError(f"unknown greedy order {order!r}")
    claimed = [False] * k
    pairs: list[tuple[int, int, float]] = []
    for i in visit:
        best_j = -1
        best_v = 0.0
        for j in range(k):
            if claimed[j]:
                continue
            v = raw[i, j]
            # strict > keeps the lowest label index on IoU ties
            if v >= tau and v > best_v:
                best_j, best_v = j, float(v)
        if best_j >= 0:
            claimed[best_j] = True
            pairs.append((i, best_j, best_v))
    return _with_residue(pairs, m, k)


def greedy_match(
    detections: Sequence[tuple[Box2D, float]],
    labels: Sequence[Box2D],
    tau: float,
    order: str = "confidence-descending",
) -> Matching:
    """Sequential association as done by the standard toolkits.

    Each detection, visited in the given order ("confidence-descending" or
    "input-order"), claims the not-yet-claimed label of highest IoU >= tau or
    joins the unmatched residue. Confidence ties break toward the lower input
    index, IoU ties toward the lower label index.
    """
    _validate_tau(tau)
    boxes = [b for b, _ in detections]
    confs = [c for _, c in detections]
    return _greedy_from_matrix(iou_matrix(boxes, labels), confs, tau, order)


def _brute_from_matrix(raw: np.ndarray, tau: float) -> Matching:
    m, k = raw.shape
    feasible = [
        [(j, float(raw[i, j])) for j in range(k) if raw[i, j] >= tau] for i in range(m)
    ]
    memo: dict[tuple[int, int], tuple[int, float, tuple]] = {}

    def better(a: tuple, b: tuple) -> bool:
        if a[0] != b[0]:
            return a[0] > b[0]
        if a[1] != b[1]:
            return a[1] > b[1]
        return tuple(p[:2] for p in a[2]) < tuple(p[:2] for p in b[2])

    def best(i: int, mask: int) -> tuple[int, float, tuple]:
        if i == m:
            return (0, 0.0, ())
        key = (i, mask)
        cached = memo.get(key)
        if cached is not None:
            return cached
        # leaving detection i unmatched is always an option
        top = best(i + 1, mask)
        for j, v in feasible[i]:
            bit = 1 << j
            if mask & bit:
                continue
            c, s, p = best(i + 1, mask | bit)
            cand = (c + 1, s + v, ((i, j, v),) + p)
            if better(cand, top):
                top = cand
        memo[key] = top
        return top

    _, _, pairs = best(0, 0)
    return _with_residue(list(pairs), m, k)


def brute_force_match(
    detections: Sequence[Box2D], labels: Sequence[Box2D], tau: float
) -> Matching:
    """Exhaustive oracle over all injective partial assignments.

    Returns the lexicographic optimum: maximum pair count, then maximum total
    IoU, then the lowest (detection, label) index sequence. Guarded to at
    most BRUTE_FORCE_LIMIT boxes per side.
    """
    _validate_tau(tau)
    m, k = len(detections), len(labels)
    if max(m, k) > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"brute-force matcher accepts at most {BRUTE_FORCE_LIMIT} boxes per side, "
            f"got {m} detections x {k} labels"
        )
    return _brute_from_matrix(iou_matrix(detections, labels), tau)


def match_iou_matrix(
    raw: np.ndarray,
    tau: float,
    matcher: str = "optimal",
    confidences: Sequence[float] | None = None,
) -> Matching:
    """Dispatch one of the three matchers over a precomputed IoU matrix."""
    m, k = raw.shape
    if m == 0 and k == 0:
        return Matching((), (), ())
    if matcher == "optimal":
        return optimal_match(scaled_adjacency_from_iou(raw, tau))
    if matcher == "greedy-confidence":
        return _greedy_from_matrix(raw, confidences, tau, "confidence-descending")
    if matcher == "brute-force":
        _validate_tau(tau)
        if max(m, k) > BRUTE_FORCE_LIMIT:
            raise ValueError(
                f"brute-force matcher accepts at most {BRUTE_FORCE_LIMIT} boxes per side"
            )
        return _brute_from_matrix(raw, tau)
    raise ValueError(f"unknown matcher {matcher!r}; expected one of {MATCHERS}")


def match_boxes(
    detections: Sequence[Box2D],
    labels: Sequence[Box2D],
    tau: float,
    matcher: str = "optimal",
    confidences: Sequence[float] | None = None,
) -> Matching:
    """Match plain box lists with the named matcher."""
    return match_iou_matrix(iou_matrix(detections, labels), tau, matcher, confidences)


@dataclass(frozen=True)
class Scenario:
    """A synthetic frame: detections with confidences, labels with attributes."""

    detections: tuple[tuple[Box2D, float], ...]
    labels: tuple[tuple[Box2D, Mapping[str, float]], ...]

    @property
    def detection_boxes(self) -> list[Box2D]:
        return [b for b, _ in self.detections]

    @property
    def confidences(self) -> list[float]:
        return [c for _, c in self.detections]

    @property
    def label_boxes(self) -> list[Box2D]:
        return [b for b, _ in self.labels]


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for the scenario generator.

    ``overlap_bias`` in [0, 1] controls how often detections are planted on
    labels (and how tightly): 0 scatters detections uniformly, values near 1
    produce clustered, contended configurations where greedy association can
    go wrong.
    """

    num_detections: tuple[int, int] = (0, 7)
    num_labels: tuple[int, int] = (0, 7)
    frame_size: tuple[float, float] = (1242.0, 375.0)
    box_size: tuple[float, float] = (40.0, 160.0)
    overlap_bias: float = 0.5

    def __post_init__(self) -> None:
        for lo, hi in (self.num_detections, self.num_labels):
            if lo < 0 or hi < lo:
                raise ValueError("count ranges must satisfy 0 <= lo <= hi")
        if not 0.0 <= self.overlap_bias <= 1.0:
            raise ValueError("overlap_bias must lie in [0, 1]")
        if self.box_size[0] <= 0 or self.box_size[1] < self.box_size[0]:
            raise ValueError("box_size must satisfy 0 < lo <= hi")


def _box_around(rng: random.Random, cx: float, cy: float, w: float, h: float) -> Box2D:
    return Box2D(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def _jittered(rng: random.Random, base: Box2D, frac: float) -> Box2D:
    cx = (base.left + base.right) / 2.0 + rng.uniform(-frac, frac) * base.width
    cy = (base.top + base.bottom) / 2.0 + rng.uniform(-frac, frac) * base.height
    w = base.width * (1.0 + rng.uniform(-frac, frac))
    h = base.height * (1.0 + rng.uniform(-frac, frac))
    return _box_around(rng, cx, cy, w, h)


def generate_scenario(seed: int, params: ScenarioParams = ScenarioParams()) -> Scenario:
    """Deterministically generate one synthetic frame from a seed.

    Labels are placed around a few cluster centers so that overlapping labels
    occur; each detection is, with probability ``overlap_bias``, either a
    jittered copy of one label or a blend of two labels from the same frame
    (the configuration that trips greedy association), and otherwise a
    uniformly random box.
    """
    rng = random.Random(seed)
    fw, fh = params.frame_size
    smin, smax = params.box_size
    n_lab = rng.randint(*params.num_labels)
    n_det = rng.randint(*params.num_detections)
    bias = params.overlap_bias

    n_clusters = max(1, (n_lab + 1) // 2)
    centers = [(rng.uniform(0.0, fw), rng.uniform(0.0, fh)) for _ in range(n_clusters)]
    spread = (smin + smax) / 2.0 * (1.1 - bias)

    labels = []
    for _ in range(n_lab):
        cx0, cy0 = rng.choice(centers)
        w = rng.uniform(smin, smax)
        h = rng.uniform(smin, smax)
        box = _box_around(
            rng, cx0 + rng.uniform(-spread, spread), cy0 + rng.uniform(-spread, spread), w, h
        )
        attrs = {
            "occlusion": rng.choice((0, 0, 1, 1, 2)),
            "truncation": round(rng.uniform(0.0, 0.6), 3),
        }
        labels.append((box, attrs))

    detections = []
    for _ in range(n_det):
        if labels and rng.random() < bias:
            jitter = 0.16 * (1.0 - 0.5 * bias)
            if len(labels) >= 2 and rng.random() < 0.5:
                a = rng.choice(labels)[0]
                b = rng.choice(labels)[0]
                t = rng.uniform(0.3, 0.7)
                blend = Box2D(
                    t * a.left + (1 - t) * b.left,
                    t * a.top + (1 - t) * b.top,
                    t * a.right + (1 - t) * b.right,
                    t * a.bottom + (1 - t) * b.bottom,
                )
                box = _jittered(rng, blend, jitter * 0.5)
            else:
                box = _jittered(rng, rng.choice(labels)[0], jitter)
        else:
            w = rng.uniform(smin, smax)
            h = rng.uniform(smin, smax)
            box = _box_around(rng, rng.uniform(0.0, fw), rng.uniform(0.0, fh), w, h)
        detections.append((box, rng.random()))

    return Scenario(detections=tuple(detections), labels=tuple(labels))
