"""
Tests for Report Engine Module
"""
import pytest
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import io
import json

import numpy as np
import pandas as pd

from src.dataset import compute_stats, dataset_summary_row, export_bboxes, validate_dataset
from src.errors import MissingPredictionError
from src.mask_core import GrayFrame, save_gray
from src.models import EvalOptions, ValidationOptions, ValidationReport, Violation
from src.report import ReportEngine, emit_bboxes, emit_validation
from src.synthetic import write_predictions, write_synthetic_dataset

PERFECT = (1.0, 1.0, 0.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    data = write_synthetic_dataset(root / "dataset")
    perfect = write_predictions(data.manifest, root / "pred_perfect", "perfect")
    noisy = write_predictions(data.manifest, root / "pred_noisy", "noisy", seed=3)
    empty = write_predictions(data.manifest, root / "pred_empty", "empty")
    return data, {"perfect": perfect, "noisy": noisy, "empty": empty}


def _group(result, grouping, group):
    return next(g for g in result.groups if g.grouping == grouping and g.group == group)


class TestEvaluation:
    def test_perfect_predictions(self, synthetic):
        data, preds = synthetic
        result = ReportEngine.eval_dataset(data.manifest, preds["perfect"])
        overall = _group(result, "all", "all")
        assert overall.clips == 3
        assert overall.frames == 24
        assert np.allclose(overall.scores.as_tuple(), PERFECT, atol=1e-9)
        assert [c.clip_id for c in result.clips] == ["jungle_jeep", "medical_polyp", "snow_hare"]

    def test_split_selection(self, synthetic):
        data, preds = synthetic
        everything = ReportEngine.eval_dataset(data.manifest, preds["perfect"], options=EvalOptions(split=None))
        assert _group(everything, "all", "all").clips == 6
        assert _group(everything, "all", "all").frames == 44

    def test_groups_follow_label_order(self, synthetic):
        data, preds = synthetic
        result = ReportEngine.eval_dataset(data.manifest, preds["perfect"])
        scenarios = [g.group for g in result.groups if g.grouping == "scenario"]
        assert scenarios == ["Jungle", "Medical", "Snowfield"]
        assert any("Aquatic: no clips" in n for n in result.notes)

    def test_unknown_grouping(self, synthetic):
        data, preds = synthetic
        with pytest.raises(ValueError):
            ReportEngine.eval_dataset(data.manifest, preds["perfect"], groupings=["weather"])

    def test_missing_prediction_strict_and_lenient(self, synthetic, tmp_path):
        data, preds = synthetic
        partial = write_predictions(data.manifest, tmp_path / "pred", "perfect")
        (partial / "snow_hare" / "00003.png").unlink()
        with pytest.raises(MissingPredictionError) as info:
            ReportEngine.eval_dataset(data.manifest, partial)
        assert info.value.clip_id == "snow_hare" and info.value.frames == [3]

        result = ReportEngine.eval_dataset(data.manifest, partial, options=EvalOptions(strict=False))
        hare = next(c for c in result.clips if c.clip_id == "snow_hare")
        assert hare.n_frames == 7
        assert hare.skipped_frames == [3]
        assert any("snow_hare: skipped frames [3]" in n for n in result.notes)

    def test_clip_without_predictions_is_noted(self, synthetic, tmp_path):
        data, _ = synthetic
        partial = write_predictions(data.manifest, tmp_path / "pred", "perfect")
        for path in (partial / "jungle_jeep").iterdir():
            path.unlink()
        result = ReportEngine.eval_dataset(data.manifest, partial, options=EvalOptions(strict=False))
        assert [c.clip_id for c in result.clips] == ["medical_polyp", "snow_hare"]
        assert "clip jungle_jeep: no frames evaluated" in result.notes

    def test_clip_mean_against_frame_weighted(self, synthetic, tmp_path):
        data, _ = synthetic
        mixed = write_predictions(data.manifest, tmp_path / "pred", "perfect")
        for path in (mixed / "medical_polyp").iterdir():
            save_gray(path, GrayFrame(np.zeros((24, 32))))
        clip_mean = ReportEngine.eval_dataset(data.manifest, mixed)
        weighted = ReportEngine.eval_dataset(data.manifest, mixed, options=EvalOptions(frame_weighted=True))
        assert _group(clip_mean, "all", "all").scores.iou == pytest.approx(2 / 3)
        assert _group(weighted, "all", "all").scores.iou == pytest.approx(14 / 24)
        assert clip_mean.aggregation == "clip-mean"
        assert weighted.aggregation == "frame-weighted"

    def test_exclude_empty_gt_keeps_clip_count(self, synthetic):
        data, preds = synthetic
        result = ReportEngine.eval_dataset(data.manifest, preds["noisy"], options=EvalOptions(exclude_empty_gt=True))
        assert _group(result, "all", "all").clips == 3

    def test_thread_count_does_not_change_output(self, synthetic):
        data, preds = synthetic
        docs = []
        for threads in (1, 2, 8):
            result = ReportEngine.eval_dataset(data.manifest, preds["noisy"], options=EvalOptions(threads=threads))
            docs.append((ReportEngine.emit(result, "csv"), ReportEngine.emit(result, "json")))
        assert docs[0] == docs[1] == docs[2]


class TestEmission:
    @pytest.fixture
    def result(self, synthetic):
        data, preds = synthetic
        return ReportEngine.eval_dataset(data.manifest, preds["noisy"])

    def test_csv_reads_back(self, result):
        table = ReportEngine.read_table(ReportEngine.emit(result, "csv"), "csv")
        pd.testing.assert_frame_equal(table, ReportEngine.result_frame(result))

    def test_json_reads_back(self, result):
        text = ReportEngine.emit(result, "json")
        assert list(json.loads(text)) == ["dataset", "aggregation", "groups", "clips", "notes"]
        pd.testing.assert_frame_equal(ReportEngine.read_table(text, "json"), ReportEngine.result_frame(result))

    def test_markdown(self, synthetic):
        data, preds = synthetic
        text = ReportEngine.emit(ReportEngine.eval_dataset(data.manifest, preds["perfect"]), "md")
        assert "### synthetic-vcod: all" in text
        assert "| group | clips | S_alpha | Fw_beta | MAE | mDice | mIoU |" in text
        assert "| all | 3 | 1.000 | 1.000 | 0.000 | 1.000 | 1.000 |" in text
        assert "_Aggregation: clip-mean_" in text

    def test_unknown_format(self, result):
        with pytest.raises(ValueError):
            ReportEngine.emit(result, "xlsx")

    def test_csv_header_order(self, result):
        header = ReportEngine.emit(result, "csv").splitlines()[0]
        assert header == "group,clips,S_alpha,Fw_beta,MAE,mDice,mIoU,grouping,frames,aggregation"

    def test_json_group_keys_follow_table_order(self, result):
        group = json.loads(ReportEngine.emit(result, "json"))["groups"][0]
        assert list(group) == ["group", "clips", "S_alpha", "Fw_beta", "MAE", "mDice", "mIoU", "grouping", "frames"]


    def test_comparison(self, synthetic):
        data, preds = synthetic
        results = {name: ReportEngine.eval_dataset(data.manifest, root) for name, root in preds.items()}
        text = ReportEngine.emit_comparison(results, "md")
        assert "| method | clips | S_alpha | Fw_beta | MAE | mDice | mIoU |" in text
        assert "| perfect | 3 | 1.000 | 1.000 | 0.000 | 1.000 | 1.000 |" in text
        rows = pd.read_csv(io.StringIO(ReportEngine.emit_comparison(results, "csv")))
        assert list(rows["method"]) == ["perfect", "noisy", "empty"]
        assert rows.loc[rows["method"] == "empty", "mIoU"].item() == 0.0

    def test_comparison_by_scenario(self, synthetic):
        data, preds = synthetic
        results = {"perfect": ReportEngine.eval_dataset(data.manifest, preds["perfect"])}
        doc = json.loads(ReportEngine.emit_comparison(results, "json", grouping="scenario"))
        assert doc["grouping"] == "scenario"
        assert [r["group"] for r in doc["rows"]] == ["Jungle", "Medical", "Snowfield"]


class TestGroupMeans:
    """Group rows against the per-clip rows they summarise"""

    METRICS = ["S_alpha", "Fw_beta", "MAE", "mDice", "mIoU"]

    @pytest.fixture
    def table(self, synthetic):
        data, preds = synthetic
        result = ReportEngine.eval_dataset(data.manifest, preds["noisy"], options=EvalOptions(split=None))
        return data.manifest, ReportEngine.read_table(ReportEngine.emit(result, "csv"), "csv")

    @staticmethod
    def _members(manifest, clips, grouping, group):
        if grouping == "all":
            return clips
        labels = {c.clip_id: getattr(c, grouping).value for c in manifest.clips}
        return clips[clips["group"].map(labels) == group]

    def test_group_rows_are_means_of_clip_rows(self, table):
        manifest, df = table
        clips = df[df["grouping"] == "clip"]
        groups = df[df["grouping"] != "clip"]
        assert len(groups) > 1
        for _, row in groups.iterrows():
            members = self._members(manifest, clips, row["grouping"], row["group"])
            assert len(members) == row["clips"]
            for metric in self.METRICS:
                assert abs(members[metric].mean() - row[metric]) <= 1e-12

    def test_group_mean_lies_between_clip_extremes(self, table):
        manifest, df = table
        clips = df[df["grouping"] == "clip"]
        for _, row in df[df["grouping"] != "clip"].iterrows():
            members = self._members(manifest, clips, row["grouping"], row["group"])
            for metric in self.METRICS:
                assert members[metric].min() <= row[metric] <= members[metric].max()


class TestDatasetDocuments:
    @pytest.fixture
    def stats(self, synthetic):
        return compute_stats(synthetic[0].manifest)

    def test_stats_tables(self, synthetic, stats):
        tables = ReportEngine.stats_tables(stats)
        assert tables["totals"]["frames"].item() == 44
        motion = tables["motion"].set_index("group")
        assert motion.loc["SimultaneousMotion", "total"] == 2
        assert int(tables["scenario_category"].set_index("scenario").loc["Medical", "Medical"]) == 1
        assert tables["scale_histogram"]["frames"].sum() == 44

    def test_emit_stats_with_summary(self, synthetic, stats):
        summary = dataset_summary_row(synthetic[0].manifest, stats)
        doc = json.loads(ReportEngine.emit_stats(stats, "json", summary))
        assert list(doc)[0] == "summary"
        assert doc["summary"]["clips"] == 6
        assert "scale_series" not in doc
        text = ReportEngine.emit_stats(stats, "md", summary)
        assert text.index("### summary") < text.index("### totals")
        long = pd.read_csv(io.StringIO(ReportEngine.emit_stats(stats, "csv")))
        assert list(long.columns) == ["table", "group", "column", "value"]
        assert set(long["table"]) >= {"totals", "split", "motion"}

    def test_scale_scatter(self, synthetic, stats):
        df = ReportEngine.scale_frame(stats)
        clips = df[df["level"] == "clip"].set_index("clip_id")
        expected = synthetic[0].expected["ratio"]
        assert len(clips) == 6
        for clip_id, ratio in expected.items():
            assert clips.loc[clip_id, "mean"] == pytest.approx(ratio)
            assert clips.loc[clip_id, "min"] == pytest.approx(clips.loc[clip_id, "max"])
        assert (df["level"] == "frame").sum() == 44
        assert ReportEngine.emit_scale_scatter(stats).startswith("level,clip_id,n_frames,frame,ratio,min,mean,max\n")

    def test_validation_documents(self, synthetic):
        report = validate_dataset(synthetic[0].manifest, ValidationOptions())
        text = emit_validation(report, "md")
        assert text.startswith("### synthetic-vcod: OK")
        assert json.loads(emit_validation(report, "json"))["dataset"] == "synthetic-vcod"

        bad = ValidationReport(dataset="d", violations=[Violation(code="missing-file", message="gone", clip_id="c",
                                                                  frame=4)])
        assert "### d: 1 violations" in emit_validation(bad, "md")
        assert emit_validation(bad, "csv") == "severity,code,clip_id,frame,message\nviolation,missing-file,c,4,gone\n"

    def test_box_documents(self, synthetic):
        boxes = export_bboxes(synthetic[0].manifest)
        assert len(json.loads(emit_bboxes(boxes, "json"))) == 44
        rows = pd.read_csv(io.StringIO(emit_bboxes(boxes, "csv")))
        assert len(rows) == 50
        first = rows.iloc[0]
        assert (first["clip_id"], first["frame"], first["x_min"], first["y_min"], first["x_max"], first["y_max"]) == \
            ("aquatic_fish", 0, 1, 2, 4, 5)
        with pytest.raises(ValueError):
            emit_bboxes(boxes, "md")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
