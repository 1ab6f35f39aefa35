"""
Tests for CLI Module
"""
import pytest
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import io
import json

import numpy as np
import pandas as pd

from src.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from src.dataset import load_manifest, write_manifest
from src.mask_core import BinaryMask, load_mask, save_mask
from src.models import DatasetManifest
from src.synthetic import write_moving_square


@pytest.fixture
def workspace(tmp_path):
    assert main(["make-synthetic", "--out", str(tmp_path), "--predictions", "perfect"]) == EXIT_OK
    return tmp_path


def _manifest(workspace):
    return str(workspace / "dataset" / "manifest.json")


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert main(["eval", "--bogus"]) == EXIT_USAGE

    def test_no_subcommand(self, capsys):
        assert main([]) == EXIT_USAGE

    def test_bad_binarize(self, workspace, capsys):
        code = main(["eval", "--manifest", _manifest(workspace), "--pred-root", str(workspace / "pred_perfect"),
                     "--binarize", "otsu"])
        assert code == EXIT_USAGE
        assert "binarize" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path, capsys):
        code = main(["stats", "--manifest", str(tmp_path / "absent.json")])
        assert code == EXIT_USAGE

    def test_missing_prediction_root(self, workspace, capsys):
        code = main(["eval", "--manifest", _manifest(workspace), "--pred-root", str(workspace / "nowhere")])
        assert code == EXIT_USAGE

    def test_dataset_source_required(self, capsys):
        assert main(["stats"]) == EXIT_USAGE

    def test_bad_log_level(self, workspace, capsys):
        assert main(["stats", "--manifest", _manifest(workspace), "--log-level", "chatty"]) == EXIT_USAGE

    def test_malformed_manifest_is_a_failed_run(self, tmp_path, capsys):
        path = tmp_path / "manifest.json"
        path.write_text("{not json", encoding="utf-8")
        assert main(["stats", "--manifest", str(path)]) == EXIT_FAILED


class TestEvalCommands:
    def test_eval_json(self, workspace, capsys):
        code = main(["eval", "--manifest", _manifest(workspace), "--pred-root", str(workspace / "pred_perfect"),
                     "--format", "json", "--threads", "2"])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        overall = doc["groups"][0]
        assert (overall["grouping"], overall["clips"], overall["frames"]) == ("all", 3, 24)
        assert overall["mIoU"] == pytest.approx(1.0)
        assert overall["MAE"] == pytest.approx(0.0)

    def test_eval_to_file(self, workspace, capsys):
        out = workspace / "scores.csv"
        code = main(["eval", "--dataset-root", str(workspace / "dataset"),
                     "--pred-root", str(workspace / "pred_perfect"), "--split", "all", "--out", str(out)])
        assert code == EXIT_OK
        assert capsys.readouterr().out == ""
        table = pd.read_csv(out)
        assert list(table.columns) == ["group", "clips", "S_alpha", "Fw_beta", "MAE", "mDice", "mIoU",
                                       "grouping", "frames", "aggregation"]
        assert table.loc[table["grouping"] == "all", "clips"].item() == 6

    def test_missing_prediction_strict_and_lenient(self, workspace, capsys):
        (workspace / "pred_perfect" / "jungle_jeep" / "00002.png").unlink()
        args = ["eval", "--manifest", _manifest(workspace), "--pred-root", str(workspace / "pred_perfect")]
        assert main(args) == EXIT_FAILED
        assert main(args + ["--lenient"]) == EXIT_OK

    def test_compare(self, workspace, capsys):
        assert main(["make-synthetic", "--out", str(workspace / "other"), "--predictions", "empty"]) == EXIT_OK
        capsys.readouterr()
        code = main(["compare", "--manifest", _manifest(workspace),
                     "--pred-root", f"ours={workspace / 'pred_perfect'}",
                     "--pred-root", f"blank={workspace / 'other' / 'pred_empty'}"])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "| ours | 3 | 1.000 | 1.000 | 0.000 | 1.000 | 1.000 |" in text
        assert "| blank | 3 |" in text

    def test_compare_needs_names(self, workspace, capsys):
        code = main(["compare", "--manifest", _manifest(workspace), "--pred-root", str(workspace / "pred_perfect")])
        assert code == EXIT_USAGE


class TestDatasetCommands:
    def test_validate(self, workspace, capsys):
        assert main(["validate", "--manifest", _manifest(workspace)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("### synthetic-vcod: OK")

    def test_validate_strict_and_lenient(self, workspace, capsys):
        (workspace / "dataset" / "Test" / "snow_hare" / "GT" / "00004.png").unlink()
        assert main(["validate", "--manifest", _manifest(workspace), "--format", "csv"]) == EXIT_FAILED
        assert "violation,missing-file,snow_hare,4," in capsys.readouterr().out
        assert main(["validate", "--manifest", _manifest(workspace), "--lenient"]) == EXIT_OK
        assert main(["validate", "--manifest", _manifest(workspace), "--no-files"]) == EXIT_OK

    def test_stats(self, workspace, capsys):
        assert main(["stats", "--manifest", _manifest(workspace), "--format", "json"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["summary"]["frames"] == 44
        assert doc["clip_count"] == 6
        assert doc["split_counts"]["Train"]["clips"] == 3

    def test_reference_statistics(self, tmp_path, capsys):
        assert main(["make-synthetic", "--out", str(tmp_path), "--reference"]) == EXIT_OK
        code = main(["stats", "--manifest", str(tmp_path / "manifest.json"), "--no-scale", "--format", "json"])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert (doc["clip_count"], doc["frame_count"]) == (162, 9486)
        totals = {k: v["total"] for k, v in doc["motion_counts"].items()}
        assert totals == {"ObjectMotion": 73, "CameraMotion": 29, "SimultaneousMotion": 60}

    def test_make_manifest(self, workspace, capsys):
        out = workspace / "scanned.json"
        code = main(["make-manifest", "--dataset-root", str(workspace / "dataset"), "--name", "scan",
                     "--out", str(out)])
        assert code == EXIT_OK
        manifest = load_manifest(out)
        assert manifest.name == "scan"
        assert len(manifest.clips) == 6

    def test_report_scatter(self, workspace, capsys):
        assert main(["report-scatter", "--manifest", _manifest(workspace)]) == EXIT_OK
        table = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert (table["level"] == "clip").sum() == 6

    def test_export_bboxes(self, workspace, capsys):
        assert main(["export-bboxes", "--manifest", _manifest(workspace), "--format", "csv"]) == EXIT_OK
        table = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert len(table) == 50
        assert set(table.loc[table["clip_id"] == "field_deer", "instance"]) == {1, 2}

    def test_export_bboxes_rejects_markdown(self, workspace, capsys):
        assert main(["export-bboxes", "--manifest", _manifest(workspace), "--format", "md"]) == EXIT_USAGE

    def test_export_bboxes_by_component(self, tmp_path, capsys):
        assert main(["make-synthetic", "--out", str(tmp_path), "--layout", "moca-mask", "--gt-every", "5"]) == 0
        args = ["export-bboxes", "--manifest", str(tmp_path / "dataset" / "manifest.json"), "--format", "csv"]
        capsys.readouterr()
        assert main(args) == EXIT_OK
        assert len(pd.read_csv(io.StringIO(capsys.readouterr().out))) == 12
        assert main(args + ["--components"]) == EXIT_OK
        table = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert len(table) == 14
        assert set(table.loc[table["clip_id"] == "field_deer", "instance"]) == {1, 2}

    def test_moca_layout(self, tmp_path, capsys):
        code = main(["make-synthetic", "--out", str(tmp_path), "--layout", "moca-mask", "--gt-every", "5"])
        assert code == EXIT_OK
        assert main(["stats", "--manifest", str(tmp_path / "dataset" / "manifest.json"), "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["frame_count"] == 44
        assert doc["annotated_frame_count"] == 12

    def test_validate_cadence_from_fps(self, tmp_path, capsys):
        assert main(["make-synthetic", "--out", str(tmp_path), "--layout", "moca-mask", "--gt-every", "5"]) == 0
        args = ["validate", "--manifest", str(tmp_path / "dataset" / "manifest.json"), "--no-files"]
        assert main(args) == EXIT_OK
        assert main(args + ["--stride-from-fps"]) == EXIT_FAILED


class TestFuseCommand:
    @pytest.fixture
    def square(self, tmp_path):
        ms = write_moving_square(tmp_path / "square")
        write_manifest(DatasetManifest(name="square", clips=[ms.clip]), tmp_path / "square" / "manifest.json")
        return ms

    def _args(self, tmp_path, square):
        return ["fuse", "--manifest", str(tmp_path / "square" / "manifest.json"), "--clip", "moving_square",
                "--propagator", f"transform:{square.fixture}", "--out", str(tmp_path / "out")]

    def test_fuse_with_anchor_annotations(self, tmp_path, square, capsys):
        assert main(self._args(tmp_path, square)) == EXIT_OK
        report = json.loads((tmp_path / "out" / "round_1.json").read_text(encoding="utf-8"))
        assert report["flagged"] == []
        assert load_mask(tmp_path / "out" / "masks" / "00009.png") == square.masks[9]
        assert len(list((tmp_path / "out" / "polygons").iterdir())) == 13

    def test_fuse_initial_pseudo_labels(self, tmp_path, square, capsys):
        anchors = tmp_path / "anchors"
        save_mask(anchors / "00002.png", BinaryMask(np.zeros((32, 48), dtype=bool)))
        save_mask(anchors / "00005.png", square.masks[5])
        assert main(self._args(tmp_path, square) + ["--anchors", str(anchors), "--initial"]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "initial.json").read_text(encoding="utf-8"))
        assert report["reference"] == 5
        assert load_mask(tmp_path / "out" / "masks" / "00000.png").area == 0
        assert load_mask(tmp_path / "out" / "masks" / "00009.png") == square.masks[9]
        assert not (tmp_path / "out" / "round_1.json").exists()

    def test_fuse_initial_rejects_corrections(self, tmp_path, square, capsys):
        corrections = tmp_path / "round2.json"
        corrections.write_text(json.dumps({"round": 2, "frames": []}), encoding="utf-8")
        args = self._args(tmp_path, square) + ["--initial", "--corrections", str(corrections)]
        assert main(args) == EXIT_USAGE

    def test_fuse_with_corrections(self, tmp_path, square, capsys):
        corrections = tmp_path / "round2.json"
        corrections.write_text(json.dumps({"round": 2, "frames": [{"frame": 3, "choice": "or"}]}), encoding="utf-8")
        code = main(self._args(tmp_path, square) + ["--corrections", str(corrections)])
        assert code == EXIT_OK
        report = json.loads((tmp_path / "out" / "round_2.json").read_text(encoding="utf-8"))
        assert report["round"] == 2
        assert {"frame": 3, "choice": "or"}.items() <= next(c for c in report["choices"] if c["frame"] == 3).items()

    def test_correction_round_mismatch(self, tmp_path, square, capsys):
        corrections = tmp_path / "round5.json"
        corrections.write_text(json.dumps({"round": 5, "frames": []}), encoding="utf-8")
        assert main(self._args(tmp_path, square) + ["--corrections", str(corrections)]) == EXIT_FAILED

    def test_unknown_clip(self, tmp_path, square, capsys):
        args = self._args(tmp_path, square)
        args[args.index("moving_square")] = "no_such_clip"
        assert main(args) == EXIT_USAGE

    def test_unknown_propagator(self, tmp_path, square, capsys):
        args = self._args(tmp_path, square)
        args[args.index("--propagator") + 1] = "magic"
        assert main(args) == EXIT_USAGE


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
