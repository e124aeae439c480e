import json
import re

import pytest

from deteval.cli import evaluate_class_frames, main
from deteval.filters import ALWAYS_TRUE, build_pair_set, difficulty_filter, filtered_counts
from deteval.kitti import apply_class_map, load_dataset, suppress_dontcare
from deteval.matching import (
    ScenarioParams,
    brute_force_match,
    generate_scenario,
)
from deteval.metrics import EvalConfig, EMPTY_COUNTS, pr_curve



BADGAME_LABELS = [
    "Car 0.00 0 0.00 0.0 100.0 60.0 200.0 1.5 1.6 3.9 0.0 1.7 20.0 0.0",
    "Car 0.00 0 0.00 5.0 100.0 75.0 200.0 1.5 1.6 3.9 0.5 1.7 20.0 0.0",
]
BADGAME_DETECTIONS = [
    "Car -1 -1 0.00 0.0 100.0 68.0 200.0 -1 -1 -1 -1000 -1000 -1000 -10 0.90",
]


def write_badgame_dataset(root):
    labels = root / "labels"
    dets = root / "detections"
    labels.mkdir()
    dets.mkdir()
    (labels / "000000.txt").write_text("\n".join(BADGAME_LABELS) + "\n")
    (dets / "000000.txt").write_text("\n".join(BADGAME_DETECTIONS) + "\n")
    return labels, dets


def oracle_counts(labels_dir, detections_dir, config, filter_spec=None):
    """Recompute expected counts with the exhaustive matcher and the public
    ingest/filter operations, independent of the report engine."""
    total = EMPTY_COUNTS
    for frame in load_dataset(labels_dir, detections_dir):
        labels = apply_class_map(frame.labels, config.class_collapse)
        detections = apply_class_map(frame.detections, config.class_collapse)
        regions = [l.bbox for l in labels if l.is_dontcare and l.bbox is not None]
        detections = suppress_dontcare(detections, regions, config.dontcare_overlap)
        labels = [l for l in labels if not l.is_dontcare]
        for cls in {r.class_name for r in labels} | {r.class_name for r in detections}:
            dets = [d for d in detections if d.class_name == cls and d.score >= config.min_confidence]
            lbls = [l for l in labels if l.class_name == cls]
            matching = brute_force_match([d.bbox for d in dets], [l.bbox for l in lbls], config.tau)
            pair_set = build_pair_set(matching, dets, lbls, config.tau)
            total = total + filtered_counts(pair_set, filter_spec or ALWAYS_TRUE)
    return total


class TestEvaluate:
    def test_counts_match_brute_force_oracle(self, kitti_dataset, tmp_path, capsys):
        labels_dir, detections_dir = kitti_dataset
        code = main(
            [
                "evaluate",
                "--labels", str(labels_dir),
                "--detections", str(detections_dir),
                "--iou", "0.5",
                "--collapse", "Van=Car",
                "--matcher", "optimal",
                "--difficulty", "medium",
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        config = EvalConfig(tau=0.5, class_collapse={"Van": "Car"})
        expected_all = oracle_counts(labels_dir, detections_dir, config)
        expected_medium = oracle_counts(
            labels_dir, detections_dir, config, difficulty_filter("medium")
        )
        car = report["classes"]["Car"]["filters"]
        assert car["all"]["counts"] == expected_all.as_dict()
        assert car["medium"]["counts"] == expected_medium.as_dict()
        # the fixture's hard numbers, pinned: 3 TPs (one per frame 0/1/1),
        # one plain FP, the Van label and the undetected frame-2 label as FNs
        assert car["all"]["counts"] == {"tp": 3, "fp": 1, "fn": 2}

    def test_report_embeds_manifest(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        out = tmp_path / "report.json"
        code = main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--out", str(out)]
        )
        assert code == 0
        report = json.loads(out.read_text())
        manifest = report["manifest"]
        assert manifest["tool_version"]
        assert manifest["dataset"]["file_count"] == 5
        assert manifest["dataset"]["content_hash"].startswith("sha256:")
        assert "wall_time_s" in manifest
        assert "--labels" in manifest["command"]

    def test_missing_labels_flag_is_usage_error(self, capsys):
        assert main(["evaluate", "--detections", "/tmp/nowhere"]) == 1

    def test_unknown_flag_is_usage_error(self):
        assert main(["evaluate", "--nonsense"]) == 1

    def test_corrupt_line_is_data_error(self, tmp_path, capsys):
        labels = tmp_path / "labels"
        dets = tmp_path / "dets"
        labels.mkdir()
        dets.mkdir()
        (labels / "000000.txt").write_text("Car 0.00 0\n")
        code = main(["evaluate", "--labels", str(labels), "--detections", str(dets)])
        assert code == 2
        err = capsys.readouterr().err
        assert "000000.txt" in err
        assert ":1:" in err

    def test_missing_directory_is_data_error(self, tmp_path):
        assert main(
            ["evaluate", "--labels", str(tmp_path / "no"), "--detections", str(tmp_path / "no")]
        ) == 2

    def test_empty_dataset_gives_empty_classes(self, tmp_path, capsys):
        (tmp_path / "l").mkdir()
        (tmp_path / "d").mkdir()
        code = main(["evaluate", "--labels", str(tmp_path / "l"), "--detections", str(tmp_path / "d")])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["classes"] == {}

    def test_csv_output(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        out = tmp_path / "csvdir"
        code = main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--format", "csv", "--out", str(out)]
        )
        assert code == 0
        assert (out / "summary.csv").exists()
        assert (out / "curve_Car_all.csv").exists()

    def test_determinism_modulo_wall_time(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        out = tmp_path / "report.json"
        texts = []
        for _ in range(2):
            assert main(
                ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
                 "--iou", "0.5", "--out", str(out)]
            ) == 0
            texts.append(re.sub(r'"wall_time_s": [0-9eE+.-]+', '"wall_time_s": X', out.read_text()))
        assert texts[0] == texts[1]

    def test_threads_identical_report(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        outs = []
        for name, threads in (("t1.json", "1"), ("t4.json", "4")):
            out = tmp_path / name
            assert main(
                ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
                 "--threads", threads, "--out", str(out)]
            ) == 0
            data = json.loads(out.read_text())
            del data["manifest"]["wall_time_s"]
            data["manifest"]["command"] = ""
            outs.append(data)
        assert outs[0] == outs[1]

    def test_config_file_and_flag_precedence(self, kitti_dataset, tmp_path, capsys):
        labels_dir, detections_dir = kitti_dataset
        cfg = tmp_path / "eval.cfg"
        cfg.write_text("# fixture config\niou = 0.5\nmatcher = greedy\n")
        assert main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--config", str(cfg)]
        ) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["config"]["tau"] == 0.5
        assert report["config"]["matcher"] == "greedy-confidence"
        assert main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--config", str(cfg), "--iou", "0.7"]
        ) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["config"]["tau"] == 0.7

    def test_unknown_config_key_rejected(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("banana = 3\n")
        assert main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--config", str(cfg)]
        ) == 1

    def test_out_of_range_scores_refuse_brier(self, tmp_path, capsys):
        labels = tmp_path / "labels"
        dets = tmp_path / "dets"
        labels.mkdir()
        dets.mkdir()
        (labels / "0.txt").write_text(
            "Car 0.00 0 0.0 100.0 100.0 200.0 200.0 1.5 1.6 3.9 0.0 1.7 20.0 0.0\n"
        )
        (dets / "0.txt").write_text(
            "Car -1 -1 0.0 100.0 100.0 200.0 200.0 -1 -1 -1 -1000 -1000 -1000 -10 3.70\n"
            "Car -1 -1 0.0 500.0 100.0 600.0 200.0 -1 -1 -1 -1000 -1000 -1000 -10 -2.10\n"
        )
        assert main(["evaluate", "--labels", str(labels), "--detections", str(dets)]) == 0
        report = json.loads(capsys.readouterr().out)
        cell = report["classes"]["Car"]["filters"]["all"]
        assert cell["brier"] == {"labels": None, "detections": None, "union": None}
        assert cell["calibration"] == []
        assert any("outside [0, 1]" in n for n in report["notes"])
        assert cell["counts"]["tp"] == 1  # PR still works on raw scores

        assert main(
            ["evaluate", "--labels", str(labels), "--detections", str(dets),
             "--score-transform", "minmax"]
        ) == 0
        report = json.loads(capsys.readouterr().out)
        cell = report["classes"]["Car"]["filters"]["all"]
        assert cell["brier"]["labels"] is not None


class TestCompare:
    def test_fig8_frame_disagrees(self, kitti_dataset, capsys):
        labels_dir, detections_dir = kitti_dataset
        code = main(
            ["compare", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--iou", "0.5"]
        )
        assert code == 0
        captured = capsys.readouterr()
        result = json.loads(captured.out)
        frames = [d["frame"] for d in result["disagreements"]]
        assert frames == ["000001"]
        d = result["disagreements"][0]
        assert d["optimal"]["counts"] == {"tp": 2, "fp": 0, "fn": 0}
        assert d["greedy"]["counts"] == {"tp": 1, "fp": 1, "fn": 1}
        assert result["disagreement_frequency"] > 0

    def test_disjoint_dataset_no_disagreements(self, tmp_path, capsys):
        labels = tmp_path / "labels"
        dets = tmp_path / "dets"
        labels.mkdir()
        dets.mkdir()
        (labels / "0.txt").write_text(
            "Car 0.00 0 0.0 100.0 100.0 200.0 200.0 1.5 1.6 3.9 0.0 1.7 20.0 0.0\n"
        )
        (dets / "0.txt").write_text(
            "Car -1 -1 0.0 500.0 100.0 600.0 200.0 -1 -1 -1 -1000 -1000 -1000 -10 0.9\n"
        )
        assert main(["compare", "--labels", str(labels), "--detections", str(dets)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["disagreements"] == []


class TestCurves:
    def test_fixed_grid_row_count(self, kitti_dataset, tmp_path):
        labels_dir, detections_dir = kitti_dataset
        out = tmp_path / "curves"
        code = main(
            ["curves", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--grid", "fixed:41", "--out", str(out)]
        )
        assert code == 0
        rows = (out / "curve_Car_all.csv").read_text().strip().splitlines()
        assert len(rows) == 41 + 1

    def test_unique_grid_row_count(self, kitti_dataset, tmp_path, capsys):
        labels_dir, detections_dir = kitti_dataset
        code = main(
            ["curves", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--iou", "0.5", "--format", "json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        curve = payload["classes"]["Car"]["filters"]["all"]["curve"]
        # fixture scores: 0.9, 0.8, 0.3 for Car after DontCare suppression
        assert [p["threshold"] for p in curve] == [0.9, 0.8, 0.3]

    def test_perfect_fixture_precision_one(self, tmp_path, capsys):
        labels = tmp_path / "labels"
        dets = tmp_path / "dets"
        labels.mkdir()
        dets.mkdir()
        (labels / "0.txt").write_text(
            "Car 0.00 0 0.0 100.0 100.0 200.0 200.0 1.5 1.6 3.9 0.0 1.7 20.0 0.0\n"
        )
        (dets / "0.txt").write_text(
            "Car -1 -1 0.0 100.0 100.0 200.0 200.0 -1 -1 -1 -1000 -1000 -1000 -10 0.9\n"
        )
        assert main(
            ["curves", "--labels", str(labels), "--detections", str(dets), "--format", "json"]
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        curve = payload["classes"]["Car"]["filters"]["all"]["curve"]
        assert all(p["precision"] == 1.0 for p in curve)


class TestSweepFilter:
    def test_badgame_sweep(self, tmp_path, capsys):
        labels_dir, dets_dir = write_badgame_dataset(tmp_path)
        code = main(
            ["sweep-filter", "--labels", str(labels_dir), "--detections", str(dets_dir),
             "--iou", "0.7", "--attribute", "width",
             "--from", "50", "--to", "80", "--steps", "7"]
        )
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        by_value = {round(r["value"]): r for r in result["rows"]}
        # permissive endpoint: stable == naive == unfiltered
        assert by_value[50]["stable"] == by_value[50]["naive"]
        assert {k: by_value[50]["stable"][k] for k in ("tp", "fp", "fn")} == {
            "tp": 1, "fp": 0, "fn": 1,
        }
        # the width threshold that drops the matched label: stable keeps the
        # association fixed and reports the FN, naive re-matches into a TP
        row = by_value[65]
        assert (row["stable"]["tp"], row["stable"]["fn"]) == (0, 1)
        assert (row["naive"]["tp"], row["naive"]["fn"]) == (1, 0)
        assert "Car" in result["summary"]
        assert 0.0 <= result["summary"]["Car"]["stable_precision_ge_naive_fraction"] <= 1.0

    def test_bad_attribute_rejected(self, tmp_path):
        labels_dir, dets_dir = write_badgame_dataset(tmp_path)
        assert main(
            ["sweep-filter", "--labels", str(labels_dir), "--detections", str(dets_dir),
             "--attribute", "alpha", "--from", "0", "--to", "1", "--steps", "3"]
        ) == 1


class TestFuzzCommand:
    def test_zero_bias_zero_disagreement(self, capsys):
        code = main(["fuzz", "--seeds", "300", "--tau", "0.5", "--bias", "0.0"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["greedy_vs_optimal_disagreements"] == 0

    def test_deterministic_and_finds_witnesses(self, tmp_path, capsys):
        args = ["fuzz", "--seeds", "600", "--tau", "0.5", "--bias", "0.85",
                "--out", str(tmp_path / "fuzz")]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        second = capsys.readouterr().out
        assert first == second
        report = json.loads(first)
        assert report["greedy_vs_optimal_disagreements"] >= 1
        written = sorted((tmp_path / "fuzz").glob("witness_*.json"))
        assert len(written) == min(5, report["naive_instability_witnesses"])
        if written:
            witness = json.loads(written[0].read_text())
            assert witness["naive"]["fp"] > witness["unfiltered"]["fp"] or (
                witness["naive"]["fn"] > witness["unfiltered"]["fn"]
            )


class TestMatchCommand:
    def test_single_payload(self, capsys, monkeypatch, tmp_path):
        payload = {
            "detections": [[0, 0, 10, 10], [20, 0, 30, 10]],
            "labels": [[0, 0, 10, 10], [20, 0, 30, 10], [50, 0, 60, 10]],
        }
        path = tmp_path / "in.json"
        path.write_text(json.dumps(payload))
        assert main(["match", "--tau", "0.5", "--input", str(path)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert [p[:2] for p in result["pairs"]] == [[0, 0], [1, 1]]
        assert result["unmatched_labels"] == [2]

    def test_batch_optimal_equals_brute_force(self, capsys, tmp_path):
        import random

        rng = random.Random(5)
        scenarios = []
        for _ in range(30):
            scenarios.append(
                {
                    "detections": [
                        [x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)]
                        for x, y in ((rng.uniform(0, 60), rng.uniform(0, 60)) for _ in range(6))
                    ],
                    "labels": [
                        [x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)]
                        for x, y in ((rng.uniform(0, 60), rng.uniform(0, 60)) for _ in range(6))
                    ],
                }
            )
        path = tmp_path / "batch.json"
        path.write_text(json.dumps({"scenarios": scenarios}))
        results = {}
        for matcher in ("optimal", "brute-force"):
            assert main(["match", "--tau", "0.5", "--matcher", matcher, "--input", str(path)]) == 0
            results[matcher] = json.loads(capsys.readouterr().out)["results"]
        for a, b in zip(results["optimal"], results["brute-force"]):
            assert len(a["pairs"]) == len(b["pairs"])
            assert sum(p[2] for p in a["pairs"]) == pytest.approx(
                sum(p[2] for p in b["pairs"]), abs=1e-9
            )

    def test_bad_payload_is_data_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["match", "--tau", "0.5", "--input", str(path)]) == 2


class TestEngineConsistency:
    def test_class_restriction(self, kitti_dataset, capsys):
        labels_dir, detections_dir = kitti_dataset
        assert main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--class", "Van"]
        ) == 0
        report = json.loads(capsys.readouterr().out)
        assert list(report["classes"]) == ["Van"]

    def test_headline_counts_equal_curve_endpoint(self, kitti_dataset, capsys):
        labels_dir, detections_dir = kitti_dataset
        assert main(
            ["evaluate", "--labels", str(labels_dir), "--detections", str(detections_dir),
             "--iou", "0.5", "--difficulty", "medium", "--min-confidence", "0.25"]
        ) == 0
        report = json.loads(capsys.readouterr().out)
        for cells in report["classes"].values():
            for cell in cells["filters"].values():
                last = cell["curve"][-1]
                assert cell["counts"] == {"tp": last["tp"], "fp": last["fp"], "fn": last["fn"]}

    def test_all_filter_curve_equals_pr_curve(self):
        params = ScenarioParams(overlap_bias=0.85)
        scenarios = [generate_scenario(seed, params) for seed in range(25)]
        frames_records = [
            (f"{i:06d}", list(s.detections), list(s.labels)) for i, s in enumerate(scenarios)
        ]
        frames_plain = [(list(s.detections), s.label_boxes) for s in scenarios]
        config = EvalConfig(tau=0.5)
        engine = evaluate_class_frames(frames_records, config, {"all": ALWAYS_TRUE})
        reference = pr_curve(frames_plain, config)
        assert [p.as_dict() for p in engine["all"].curve] == [p.as_dict() for p in reference]
        assert engine["all"].recall_violations == 0
