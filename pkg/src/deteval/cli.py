"""Command-line surface wiring ingest -> matching -> filters -> metrics.

Subcommands: evaluate, compare, curves, sweep-filter, fuzz, match. All
randomness flows from explicit seeds, frame iteration order is fixed, and
reports embed a manifest sufficient to re-run the command, so identical
flags on identical dataset bytes produce byte-identical JSON apart from the
wall-time field.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .filters import (
    ALWAYS_TRUE,
    FilterAtom,
    FilterError,
    FilterSpec,
    build_pair_set,
    difficulty_filter,
    filtered_counts,
    masked_counts,
    naive_filtered_counts,
    parse_filter,
    pass_mask,
    record_bbox,
    _record_confidence,
)
from .kitti import (
    DetectionRecord,
    FramePair,
    KittiParseError,
    apply_class_map,
    load_dataset,
    report_json,
    suppress_dontcare,
    write_report,
)
from .matching import (
    Scenario,
    ScenarioParams,
    generate_scenario,
    iou_matrix,
    match_iou_matrix,
)
from .metrics import (
    BRIER_SUPPORTS,
    CalibrationBin,
    ConfusionCounts,
    EMPTY_COUNTS,
    EvalConfig,
    EvalReport,
    FilterResult,
    average_precision,
    count_recall_violations,
    counts_from_matching,
    curve_point,
    make_threshold_grid,
)

SWEEP_ATTRIBUTES = ("area", "height_px", "width")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# report engine


@dataclass
class _ClassFrame:
    """One frame restricted to a single class, detections already cut at
    min_confidence."""

    frame_id: str
    det_records: list
    lbl_records: list
    confs: np.ndarray
    raw: np.ndarray


@dataclass
class _FrameOut:
    counts: np.ndarray  # (thresholds, filters, 3)
    brier_terms: list[tuple[list[float], list[float], int]]  # per filter
    cal_samples: list[list[tuple[float, bool]]]  # per filter
    endpoint_counts: list[ConfusionCounts]


def _prepare_class_frame(
    frame_id: str, det_records: Sequence, lbl_records: Sequence, min_confidence: float
) -> _ClassFrame:
    survivors = [r for r in det_records if _record_confidence(r) >= min_confidence]
    confs = np.array([_record_confidence(r) for r in survivors], dtype=np.float64)
    raw = iou_matrix([record_bbox(r) for r in survivors], [record_bbox(r) for r in lbl_records])
    return _ClassFrame(frame_id, survivors, list(lbl_records), confs, raw)


def _process_frame(
    frame: _ClassFrame,
    grid: Sequence[float],
    config: EvalConfig,
    specs: Sequence[FilterSpec],
    compute_calibration: bool,
) -> _FrameOut:
    det_masks = [pass_mask(s, frame.det_records, "detection") for s in specs]
    lbl_masks = [pass_mask(s, frame.lbl_records, "label") for s in specs]
    n_det = len(frame.det_records)
    counts = np.zeros((len(grid), len(specs), 3), dtype=np.int64)
    for ti, t in enumerate(grid):
        keep = np.nonzero(frame.confs >= t)[0]
        matching = match_iou_matrix(
            frame.raw[keep], config.tau, config.matcher, frame.confs[keep].tolist()
        )
        for fi in range(len(specs)):
            c = masked_counts(matching, keep, det_masks[fi], lbl_masks[fi])
            counts[ti, fi] = (c.tp, c.fp, c.fn)

    # endpoint: every surviving detection participates
    identity = list(range(n_det))
    full = match_iou_matrix(frame.raw, config.tau, config.matcher, frame.confs.tolist())
    cal = (
        full
        if config.matcher == "optimal"
        else match_iou_matrix(frame.raw, config.tau, "optimal", frame.confs.tolist())
    )
    brier_terms = []
    cal_samples: list[list[tuple[float, bool]]] = []
    endpoint_counts = []
    for fi in range(len(specs)):
        dmask, lmask = det_masks[fi], lbl_masks[fi]
        tp_confs = [
            float(frame.confs[d]) for d, l, _ in full.pairs if dmask[d] and lmask[l]
        ]
        fp_confs = [float(frame.confs[d]) for d in full.unmatched_detections if dmask[d]]
        n_fn = sum(1 for l in full.unmatched_labels if lmask[l])
        brier_terms.append((tp_confs, fp_confs, n_fn))
        endpoint_counts.append(masked_counts(full, identity, dmask, lmask))
        samples: list[tuple[float, bool]] = []
        if compute_calibration:
            for d, l, _ in cal.pairs:
                if dmask[d] and lmask[l]:
                    samples.append((float(frame.confs[d]), True))
            for d in cal.unmatched_detections:
                if dmask[d]:
                    samples.append((float(frame.confs[d]), False))
        cal_samples.append(samples)
    return _FrameOut(counts, brier_terms, cal_samples, endpoint_counts)


def _brier_from_terms(
    terms: Sequence[tuple[list[float], list[float], int]]
) -> dict[str, float | None]:
    tp = [c for t in terms for c in t[0]]
    fp = [c for t in terms for c in t[1]]
    n_fn = sum(t[2] for t in terms)
    out: dict[str, float | None] = {}
    for support, errs, extra in (
        ("labels", [(1.0 - c) ** 2 for c in tp], n_fn),
        ("detections", [(1.0 - c) ** 2 for c in tp] + [c**2 for c in fp], 0),
        ("union", [(1.0 - c) ** 2 for c in tp] + [c**2 for c in fp], n_fn),
    ):
        count = len(errs) + extra
        out[support] = None if count == 0 else (math.fsum(errs) + extra) / count
    return out


def _calibration_from_samples(
    samples: Sequence[tuple[float, bool]], bins: int
) -> list[CalibrationBin]:
    conf_sums = [0.0] * bins
    tp_counts = [0] * bins
    totals = [0] * bins
    for conf, is_tp in samples:
        b = min(int(conf * bins), bins - 1)
        conf_sums[b] += conf
        totals[b] += 1
        if is_tp:
            tp_counts[b] += 1
    out = []
    for b in range(bins):
        center = (b + 0.5) / bins
        if totals[b] == 0:
            out.append(CalibrationBin(center, None, None, 0))
        else:
            out.append(
                CalibrationBin(
                    center, conf_sums[b] / totals[b], tp_counts[b] / totals[b], totals[b]
                )
            )
    return out


def evaluate_class_frames(
    frames: Sequence[tuple[str, Sequence, Sequence]],
    config: EvalConfig,
    named_filters: dict[str, FilterSpec],
    threads: int = 1,
    compute_calibration: bool = True,
) -> dict[str, FilterResult]:
    """Run the full per-threshold sweep for one class over generic records.

    ``frames`` are (frame_id, detection_records, label_records) triples;
    records only need a bounding box and, for detections, a confidence.
    """
    names = sorted(named_filters)
    specs = [named_filters[n] for n in names]
    prepared = [
        _prepare_class_frame(fid, dets, lbls, config.min_confidence)
        for fid, dets, lbls in frames
    ]
    all_confs = [c for f in prepared for c in f.confs.tolist()]
    grid = make_threshold_grid(all_confs, config) or [1.0]

    def work(chunk: list[_ClassFrame]) -> list[_FrameOut]:
        return [
            _process_frame(frame, grid, config, specs, compute_calibration)
            for frame in chunk
        ]

    if threads > 1 and len(prepared) > 1:
        # contiguous chunks, one per worker, so per-frame task overhead does
        # not dominate; chunk order is preserved, so aggregation order (and
        # therefore the report) is identical to the single-threaded run
        n = min(threads, len(prepared))
        bounds = [round(i * len(prepared) / n) for i in range(n + 1)]
        chunks = [prepared[bounds[i] : bounds[i + 1]] for i in range(n)]
        with ThreadPoolExecutor(max_workers=n) as pool:
            outs = [o for part in pool.map(work, chunks) for o in part]
    else:
        outs = work(prepared)

    num_frames = max(len(frames), 1)
    results: dict[str, FilterResult] = {}
    for fi, name in enumerate(names):
        points = []
        for ti, t in enumerate(grid):
            tp, fp, fn = (
                int(sum(o.counts[ti, fi, 0] for o in outs)),
                int(sum(o.counts[ti, fi, 1] for o in outs)),
                int(sum(o.counts[ti, fi, 2] for o in outs)),
            )
            points.append(curve_point(t, ConfusionCounts(tp, fp, fn), num_frames))
        violations = count_recall_violations(points)
        headline = EMPTY_COUNTS
        for o in outs:
            headline = headline + o.endpoint_counts[fi]
        brier = _brier_from_terms([o.brier_terms[fi] for o in outs])
        if not compute_calibration:
            brier = {k: None for k in BRIER_SUPPORTS}
        calibration = (
            _calibration_from_samples(
                [s for o in outs for s in o.cal_samples[fi]], config.calibration_bins
            )
            if compute_calibration
            else []
        )
        results[name] = FilterResult(
            counts=headline,
            ap=average_precision(points, config.ap_mode),
            brier=brier,
            curve=points,
            calibration=calibration,
            recall_violations=violations,
        )
    return results


def prepare_frames(
    frame_pairs: Sequence[FramePair], config: EvalConfig
) -> tuple[list[FramePair], list[str], bool]:
    """Apply class collapse, DontCare suppression and score transforms.

    Returns the prepared frames, accumulated report notes, and whether the
    scores are usable as probabilities (Brier/calibration require that).
    """
    notes: list[str] = []
    prepared = []
    all_scores = [d.score for fp in frame_pairs for d in fp.detections]
    transform = None
    if config.score_transform == "sigmoid":
        transform = lambda s: 1.0 / (1.0 + math.exp(-s))
    elif config.score_transform == "minmax":
        lo = min(all_scores) if all_scores else 0.0
        hi = max(all_scores) if all_scores else 1.0
        span = hi - lo
        transform = (lambda s: (s - lo) / span) if span > 0 else (lambda s: 0.5)
    if transform is not None:
        notes.append(f"scores transformed with {config.score_transform}")

    for fp in frame_pairs:
        labels = apply_class_map(fp.labels, config.class_collapse)
        detections = apply_class_map(fp.detections, config.class_collapse)
        if config.dontcare_enabled:
            regions = [l.bbox for l in labels if l.is_dontcare and l.bbox is not None]
            detections = suppress_dontcare(detections, regions, config.dontcare_overlap)
        labels = [l for l in labels if not l.is_dontcare]
        if transform is not None:
            detections = [
                DetectionRecord(
                    d.class_name,
                    d.truncation,
                    d.occlusion,
                    d.alpha,
                    d.bbox,
                    d.dimensions_hwl,
                    d.location_xyz,
                    d.rotation_y,
                    transform(d.score),
                )
                for d in detections
            ]
        prepared.append(FramePair(fp.frame_id, tuple(labels), tuple(detections)))

    probabilistic = all(
        0.0 <= d.score <= 1.0 for fp in prepared for d in fp.detections
    )
    if not probabilistic:
        notes.append(
            "scores outside [0, 1] and no score transform given: Brier and "
            "calibration are omitted; PR/AP use raw-score thresholds and "
            "min_confidence applies in raw score units"
        )
    return prepared, notes, probabilistic


def build_report(
    frame_pairs: Sequence[FramePair],
    config: EvalConfig,
    named_filters: dict[str, FilterSpec] | None = None,
    classes: Sequence[str] | None = None,
    threads: int = 1,
) -> EvalReport:
    """Evaluate a KITTI dataset into an EvalReport, per class and per filter."""
    named_filters = dict(named_filters or {})
    named_filters.setdefault("all", ALWAYS_TRUE)
    prepared, notes, probabilistic = prepare_frames(frame_pairs, config)
    seen = sorted(
        {l.class_name for fp in prepared for l in fp.labels}
        | {d.class_name for fp in prepared for d in fp.detections}
    )
    if classes:
        seen = [c for c in seen if c in set(classes)]
    out: dict[str, dict[str, FilterResult]] = {}
    for cls in seen:
        frames = [
            (
                fp.frame_id,
                [d for d in fp.detections if d.class_name == cls],
                [l for l in fp.labels if l.class_name == cls],
            )
            for fp in prepared
        ]
        out[cls] = evaluate_class_frames(
            frames, config, named_filters, threads=threads, compute_calibration=probabilistic
        )
    return EvalReport(config=config, classes=out, notes=notes)


# ---------------------------------------------------------------------------
# manifest


def dataset_fingerprint(labels_dir: Path, detections_dir: Path) -> dict:
    digest = hashlib.sha256()
    file_count = 0
    total_bytes = 0
    for root in (labels_dir, detections_dir):
        for path in sorted(root.glob("*.txt")):
            data = path.read_bytes()
            digest.update(path.name.encode())
            digest.update(data)
            file_count += 1
            total_bytes += len(data)
    return {
        "file_count": file_count,
        "total_bytes": total_bytes,
        "content_hash": "sha256:" + digest.hexdigest(),
    }


def run_manifest(argv: Sequence[str], config: EvalConfig, dataset: dict, wall_time_s: float) -> dict:
    return {
        "command": "deteval " + " ".join(argv),
        "config": config.as_dict(),
        "dataset": dataset,
        "tool_version": __version__,
        "wall_time_s": wall_time_s,
    }


# ---------------------------------------------------------------------------
# flag plumbing


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the CLI contract reserves 2 for
    # data errors, so remap to 1.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


CONFIG_KEYS = {
    "iou": float,
    "matcher": str,
    "min_confidence": float,
    "grid": str,
    "ap_mode": str,
    "brier_support": str,
    "calibration_bins": int,
    "collapse": str,
    "difficulty": str,
    "filter": str,
    "class": str,
    "dontcare": str,
    "dontcare_overlap": float,
    "score_transform": str,
    "threads": int,
}


def read_config_file(path: str) -> dict:
    values: dict[str, Any] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{i}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{i}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{i}: bad value for {key!r}: {value.strip()!r}") from None
    return values


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--labels", help="directory of KITTI label files")
    p.add_argument("--detections", help="directory of KITTI detection files")
    p.add_argument("--iou", type=float, default=None, help="IoU threshold tau (default 0.7)")
    p.add_argument(
        "--matcher",
        choices=["optimal", "greedy", "brute-force"],
        default=None,
        help="association algorithm (default optimal)",
    )
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--class", dest="classes", action="append", default=None)
    p.add_argument(
        "--collapse",
        action="append",
        default=None,
        metavar="A=B",
        help="rename class A to B before evaluation (repeatable)",
    )
    p.add_argument(
        "--difficulty",
        action="append",
        default=None,
        choices=["easy", "medium", "hard"],
        help="add a KITTI difficulty filter (repeatable)",
    )
    p.add_argument(
        "--filter",
        dest="filters",
        action="append",
        default=None,
        metavar="EXPR",
        help="add a named filter, e.g. 'label.area >= 1600 & label.occlusion <= 1'",
    )
    p.add_argument("--ap-mode", choices=["all-points", "eleven-point", "forty-one-point"], default=None)
    p.add_argument("--brier-support", choices=list(BRIER_SUPPORTS), default=None)
    p.add_argument("--grid", default=None, help="'unique' or 'fixed:N' threshold grid")
    p.add_argument("--calibration-bins", type=int, default=None)
    p.add_argument("--dontcare", choices=["on", "off"], default=None)
    p.add_argument("--dontcare-overlap", type=float, default=None)
    p.add_argument("--score-transform", choices=["sigmoid", "minmax"], default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value config file (flags win)")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["json", "csv"], default=None)


def _merged_option(args, file_cfg: dict, key: str, flag_value, default):
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _parse_collapse(spec: str | None) -> dict[str, str]:
    out: dict[str, str] = {}
    if not spec:
        return out
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"--collapse expects A=B, got {part!r}")
        src, _, dst = part.partition("=")
        out[src.strip()] = dst.strip()
    return out


def build_config(args) -> tuple[EvalConfig, dict[str, FilterSpec], list[str] | None, int]:
    file_cfg = read_config_file(args.config) if args.config else {}
    collapse = {}
    collapse.update(_parse_collapse(file_cfg.get("collapse")))
    for item in args.collapse or []:
        collapse.update(_parse_collapse(item))

    matcher_flag = _merged_option(args, file_cfg, "matcher", args.matcher, "optimal")
    matcher = {"greedy": "greedy-confidence"}.get(matcher_flag, matcher_flag)
    dontcare = _merged_option(args, file_cfg, "dontcare", args.dontcare, "on")
    try:
        config = EvalConfig(
            tau=_merged_option(args, file_cfg, "iou", args.iou, 0.7),
            matcher=matcher,
            min_confidence=_merged_option(
                args, file_cfg, "min_confidence", args.min_confidence, 0.0
            ),
            threshold_grid=_merged_option(args, file_cfg, "grid", args.grid, "unique"),
            ap_mode=_merged_option(args, file_cfg, "ap_mode", args.ap_mode, "all-points"),
            brier_support=_merged_option(
                args, file_cfg, "brier_support", args.brier_support, "labels"
            ),
            calibration_bins=_merged_option(
                args, file_cfg, "calibration_bins", args.calibration_bins, 10
            ),
            class_collapse=collapse,
            dontcare_enabled=(dontcare == "on"),
            dontcare_overlap=_merged_option(
                args, file_cfg, "dontcare_overlap", args.dontcare_overlap, 0.5
            ),
            score_transform=_merged_option(
                args, file_cfg, "score_transform", args.score_transform, None
            ),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    named: dict[str, FilterSpec] = {"all": ALWAYS_TRUE}
    difficulties = list(args.difficulty or [])
    if "difficulty" in file_cfg and not difficulties:
        difficulties = [file_cfg["difficulty"]]
    for level in difficulties:
        try:
            named[level] = difficulty_filter(level)
        except FilterError as exc:
            raise UsageError(str(exc)) from None
    exprs = list(args.filters or [])
    if "filter" in file_cfg and not exprs:
        exprs = [file_cfg["filter"]]
    for i, expr in enumerate(exprs):
        try:
            named[f"filter_{i + 1}" if len(exprs) > 1 else "filter"] = parse_filter(expr)
        except FilterError as exc:
            raise UsageError(str(exc)) from None

    classes = args.classes
    if classes is None and "class" in file_cfg:
        classes = [file_cfg["class"]]
    threads = _merged_option(args, file_cfg, "threads", args.threads, 1)
    if threads < 1:
        raise UsageError("--threads must be at least 1")
    return config, named, classes, threads


def _require_dataset(args) -> tuple[Path, Path]:
    if not args.labels or not args.detections:
        raise UsageError("--labels and --detections are required")
    return Path(args.labels), Path(args.detections)


def _load_frames(labels_dir: Path, detections_dir: Path) -> list[FramePair]:
    try:
        return list(load_dataset(labels_dir, detections_dir))
    except (KittiParseError, FileNotFoundError, OSError) as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_evaluate(args, argv: Sequence[str]) -> int:
    labels_dir, detections_dir = _require_dataset(args)
    config, named, classes, threads = build_config(args)
    started = time.perf_counter()
    frames = _load_frames(labels_dir, detections_dir)
    report = build_report(frames, config, named, classes, threads)
    report.manifest = run_manifest(
        argv,
        config,
        dataset_fingerprint(labels_dir, detections_dir),
        wall_time_s=time.perf_counter() - started,
    )
    fmt = args.format or "json"
    if args.out:
        write_report(report, args.out, fmt)
    else:
        if fmt == "csv":
            raise UsageError("--format csv requires --out DIR")
        print(report_json(report))
    return 0


def cmd_compare(args, argv: Sequence[str]) -> int:
    labels_dir, detections_dir = _require_dataset(args)
    config, _, classes, _ = build_config(args)
    frames = _load_frames(labels_dir, detections_dir)
    prepared, _, _ = prepare_frames(frames, config)
    seen = sorted(
        {l.class_name for fp in prepared for l in fp.labels}
        | {d.class_name for fp in prepared for d in fp.detections}
    )
    if classes:
        seen = [c for c in seen if c in set(classes)]
    disagreements = []
    frames_checked = 0
    for fp in prepared:
        for cls in seen:
            dets = [
                d
                for d in fp.detections
                if d.class_name == cls and d.score >= config.min_confidence
            ]
            lbls = [l for l in fp.labels if l.class_name == cls]
            if not dets and not lbls:
                continue
            frames_checked += 1
            raw = iou_matrix([d.bbox for d in dets], [l.bbox for l in lbls])
            optimal = match_iou_matrix(raw, config.tau, "optimal")
            greedy = match_iou_matrix(
                raw, config.tau, "greedy-confidence", [d.score for d in dets]
            )
            if optimal.tp != greedy.tp:
                disagreements.append(
                    {
                        "frame": fp.frame_id,
                        "class": cls,
                        "optimal": {
                            "pairs": [[d, l, v] for d, l, v in optimal.pairs],
                            "counts": counts_from_matching(optimal).as_dict(),
                        },
                        "greedy": {
                            "pairs": [[d, l, v] for d, l, v in greedy.pairs],
                            "counts": counts_from_matching(greedy).as_dict(),
                        },
                    }
                )
    frequency = len(disagreements) / frames_checked if frames_checked else 0.0
    result = {
        "frames_checked": frames_checked,
        "disagreements": disagreements,
        "disagreement_frequency": frequency,
    }
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(
        f"greedy and optimal disagree on {len(disagreements)}/{frames_checked} "
        f"class-frames ({frequency:.2%})",
        file=sys.stderr,
    )
    return 0


def cmd_curves(args, argv: Sequence[str]) -> int:
    labels_dir, detections_dir = _require_dataset(args)
    config, named, classes, threads = build_config(args)
    frames = _load_frames(labels_dir, detections_dir)
    report = build_report(frames, config, named, classes, threads)
    payload = {
        "config": config.as_dict(),
        "classes": {
            cls: {
                "filters": {
                    name: {
                        "curve": [p.as_dict() for p in cell.curve],
                        "calibration": [b.as_dict() for b in cell.calibration],
                    }
                    for name, cell in sorted(cells.items())
                }
            }
            for cls, cells in sorted(report.classes.items())
        },
    }
    fmt = args.format or "csv"
    if fmt == "json":
        text = json.dumps(payload, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return 0
    if not args.out:
        raise UsageError("curves with --format csv requires --out DIR")
    write_report(report, args.out, "csv")
    return 0


def cmd_sweep_filter(args, argv: Sequence[str]) -> int:
    labels_dir, detections_dir = _require_dataset(args)
    config, _, classes, _ = build_config(args)
    if args.attribute not in SWEEP_ATTRIBUTES:
        raise UsageError(f"--attribute must be one of {SWEEP_ATTRIBUTES}")
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    values = np.linspace(args.sweep_from, args.sweep_to, args.steps).tolist()
    frames = _load_frames(labels_dir, detections_dir)
    prepared, _, _ = prepare_frames(frames, config)
    seen = sorted(
        {l.class_name for fp in prepared for l in fp.labels}
        | {d.class_name for fp in prepared for d in fp.detections}
    )
    if classes:
        seen = [c for c in seen if c in set(classes)]

    rows = []
    summary = {}
    for cls in seen:
        class_frames = []
        for fp in prepared:
            dets = [
                d
                for d in fp.detections
                if d.class_name == cls and d.score >= config.min_confidence
            ]
            lbls = [l for l in fp.labels if l.class_name == cls]
            raw = iou_matrix([d.bbox for d in dets], [l.bbox for l in lbls])
            matching = match_iou_matrix(raw, config.tau, config.matcher, [d.score for d in dets])
            class_frames.append((dets, lbls, build_pair_set(matching, dets, lbls, config.tau)))
        stable_wins = 0
        for v in values:
            spec = FilterSpec((FilterAtom("both", args.attribute, ">=", float(v)),))
            stable = EMPTY_COUNTS
            naive = EMPTY_COUNTS
            for dets, lbls, pair_set in class_frames:
                stable = stable + filtered_counts(pair_set, spec)
                naive = naive + naive_filtered_counts(dets, lbls, spec, config.tau, config.matcher)
            if stable.precision >= naive.precision:
                stable_wins += 1
            rows.append(
                {
                    "class": cls,
                    "value": float(v),
                    "stable": {**stable.as_dict(), "precision": stable.precision, "recall": stable.recall},
                    "naive": {**naive.as_dict(), "precision": naive.precision, "recall": naive.recall},
                }
            )
        summary[cls] = {
            "stable_precision_ge_naive_fraction": stable_wins / len(values),
            "sweep_points": len(values),
        }
    result = {
        "attribute": args.attribute,
        "from": args.sweep_from,
        "to": args.sweep_to,
        "steps": args.steps,
        "rows": rows,
        "summary": summary,
    }
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _scenario_stability_witness(
    scenario: Scenario, tau: float
) -> tuple[str, ConfusionCounts, ConfusionCounts, ConfusionCounts] | None:
    """Search area thresholds for a naive-filtering instability on one scenario."""
    dets = list(scenario.detections)
    lbls = list(scenario.labels)
    raw = iou_matrix(scenario.detection_boxes, scenario.label_boxes)
    matching = match_iou_matrix(raw, tau, "optimal")
    unfiltered = counts_from_matching(matching)
    pair_set = build_pair_set(matching, dets, lbls, tau)
    areas = sorted(
        {b.area for b in scenario.detection_boxes} | {b.area for b in scenario.label_boxes}
    )
    for v in areas:
        spec = FilterSpec((FilterAtom("both", "area", ">=", float(v)),))
        naive = naive_filtered_counts(dets, lbls, spec, tau, "optimal")
        if naive.fp > unfiltered.fp or naive.fn > unfiltered.fn:
            stable = filtered_counts(pair_set, spec)
            return (spec.to_text(), unfiltered, naive, stable)
    return None


def cmd_fuzz(args, argv: Sequence[str]) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    try:
        params = ScenarioParams(overlap_bias=args.bias)
        _ = EvalConfig(tau=args.tau)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    disagreements = 0
    witnesses = []
    for seed in range(args.seeds):
        scenario = generate_scenario(seed, params)
        raw = iou_matrix(scenario.detection_boxes, scenario.label_boxes)
        optimal = match_iou_matrix(raw, args.tau, "optimal")
        greedy = match_iou_matrix(raw, args.tau, "greedy-confidence", scenario.confidences)
        if greedy.tp < optimal.tp:
            disagreements += 1
        witness = _scenario_stability_witness(scenario, args.tau)
        if witness is not None:
            expr, unfiltered, naive, stable = witness
            witnesses.append(
                {
                    "seed": seed,
                    "size": len(scenario.detections) + len(scenario.labels),
                    "filter": expr,
                    "unfiltered": unfiltered.as_dict(),
                    "naive": naive.as_dict(),
                    "stable": stable.as_dict(),
                    "detections": [
                        [b.left, b.top, b.right, b.bottom, c] for b, c in scenario.detections
                    ],
                    "labels": [
                        [b.left, b.top, b.right, b.bottom] for b, _ in scenario.labels
                    ],
                }
            )
    witnesses.sort(key=lambda w: (w["size"], w["seed"]))
    report = {
        "seeds": args.seeds,
        "tau": args.tau,
        "bias": args.bias,
        "greedy_vs_optimal_disagreements": disagreements,
        "disagreement_rate": disagreements / args.seeds,
        "naive_instability_witnesses": len(witnesses),
        "smallest_witness_seeds": [w["seed"] for w in witnesses[:5]],
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "fuzz_report.json").write_text(json.dumps(report, indent=2) + "\n")
        for w in witnesses[:5]:
            (out_dir / f"witness_{w['seed']:06d}.json").write_text(
                json.dumps(w, indent=2) + "\n"
            )
    print(json.dumps(report, indent=2))
    return 0


def cmd_match(args, argv: Sequence[str]) -> int:
    """Match raw box lists from JSON on stdin (or --input); used by bindings."""
    try:
        text = Path(args.input).read_text() if args.input else sys.stdin.read()
        payload = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read match input: {exc}") from exc
    matcher = {"greedy": "greedy-confidence"}.get(args.matcher, args.matcher)

    def run_one(entry) -> dict:
        from .geometry import Box2D

        try:
            dets = [Box2D(*map(float, b[:4])) for b in entry["detections"]]
            lbls = [Box2D(*map(float, b[:4])) for b in entry["labels"]]
            confs = [float(b[4]) if len(b) > 4 else 1.0 for b in entry["detections"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad match payload: {exc}") from exc
        raw = iou_matrix(dets, lbls)
        try:
            m = match_iou_matrix(raw, args.tau, matcher, confs)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        return {
            "pairs": [[d, l, v] for d, l, v in m.pairs],
            "unmatched_detections": list(m.unmatched_detections),
            "unmatched_labels": list(m.unmatched_labels),
        }

    if "scenarios" in payload:
        result: Any = {"results": [run_one(s) for s in payload["scenarios"]]}
    else:
        result = run_one(payload)
    print(json.dumps(result))
    return 0


# ---------------------------------------------------------------------------
# entry point


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deteval", description=__doc__)
    parser.add_argument("--version", action="version", version=f"deteval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="run a full evaluation and write a report")
    _add_dataset_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="list frames where greedy and optimal disagree")
    _add_dataset_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_curves = sub.add_parser("curves", help="export PR/FP-per-frame/calibration curves")
    _add_dataset_flags(p_curves)
    p_curves.set_defaults(func=cmd_curves)

    p_sweep = sub.add_parser(
        "sweep-filter", help="stable vs naive counts across a filter threshold range"
    )
    _add_dataset_flags(p_sweep)
    p_sweep.add_argument("--attribute", required=True, choices=list(SWEEP_ATTRIBUTES))
    p_sweep.add_argument("--from", dest="sweep_from", type=float, required=True)
    p_sweep.add_argument("--to", dest="sweep_to", type=float, required=True)
    p_sweep.add_argument("--steps", type=int, required=True)
    p_sweep.set_defaults(func=cmd_sweep_filter)

    p_fuzz = sub.add_parser("fuzz", help="seeded scenario fuzzing for matcher discrepancies")
    p_fuzz.add_argument("--seeds", type=int, required=True)
    p_fuzz.add_argument("--tau", type=float, default=0.5)
    p_fuzz.add_argument("--bias", type=float, default=0.8)
    p_fuzz.add_argument("--out", default=None)
    p_fuzz.set_defaults(func=cmd_fuzz)

    p_match = sub.add_parser("match", help="match raw boxes from JSON (bindings surface)")
    p_match.add_argument("--tau", type=float, required=True)
    p_match.add_argument(
        "--matcher", choices=["optimal", "greedy", "brute-force"], default="optimal"
    )
    p_match.add_argument("--input", default=None, help="JSON file (default: stdin)")
    p_match.set_defaults(func=cmd_match)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"deteval: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"deteval: data error: {exc}", file=sys.stderr)
        return 2
    except (KittiParseError, FileNotFoundError) as exc:
        print(f"deteval: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
