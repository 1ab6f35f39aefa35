"""
Report Engine for vcod-bench
Clip and group aggregation of frame scores plus CSV / JSON / markdown emitters
for benchmark tables, dataset statistics and scale scatter data.
"""
import io
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.dataset import UNSET, frame_mask
from src.errors import MissingPredictionError
from src.mask_core import load_gray
from src.metrics import eval_frame, resize_gray
from src.models import (
    METRIC_COLUMNS,
    METRIC_FIELDS,
    Category,
    ClipEval,
    ClipRecord,
    DatasetManifest,
    DatasetStats,
    EvalOptions,
    EvalResult,
    FrameBoxes,
    FrameScores,
    GroupReport,
    MetricConfig,
    Motion,
    Scenario,
    Split,
    ValidationReport,
)
from src.utils import ordered_map, setup_logger

logger = setup_logger()

PathLike = Union[str, Path]

TABLE_COLUMNS = ["group", "clips"] + list(METRIC_COLUMNS.values()) + ["grouping", "frames", "aggregation"]
GROUP_ORDER = {
    "scenario": [e.value for e in Scenario],
    "category": [e.value for e in Category],
    "motion": [e.value for e in Motion],
    "split": [e.value for e in Split],
}
DEFAULT_GROUPINGS = ("all", "scenario", "category", "motion")


def _fmt3(value: float) -> str:
    return f"{value:.3f}"


class ReportEngine:
    """Evaluation aggregation and table emission"""

    # ============== Evaluation ==============

    @staticmethod
    def prediction_path(pred_root: PathLike, clip_id: str, gt_rel: Optional[str], image_rel: str) -> Optional[Path]:
        """<pred_root>/<clip_id>/<gt stem>.png, falling back to the image stem."""
        clip_dir = Path(pred_root) / clip_id
        stems = [Path(gt_rel).stem] if gt_rel else []
        stems.append(Path(image_rel).stem)
        for stem in stems:
            candidate = clip_dir / f"{stem}.png"
            if candidate.is_file():
                return candidate
        return None

    @staticmethod
    def eval_clip(manifest: DatasetManifest, clip: ClipRecord, pred_root: PathLike,
                  cfg: Optional[MetricConfig] = None, options: Optional[EvalOptions] = None) -> Optional[ClipEval]:
        """
        Mean FrameScores over the clip's annotated frames, in frame order.
        Returns None when no frame could be scored (lenient mode only).
        """
        cfg = cfg or MetricConfig()
        options = options or EvalOptions()
        frames = clip.annotated_frames

        paths = {f.index: ReportEngine.prediction_path(pred_root, clip.clip_id, f.gt or f.instances, f.image)
                 for f in frames}
        missing = [i for i, p in paths.items() if p is None]
        if missing and options.strict:
            raise MissingPredictionError(clip.clip_id, missing)
        if missing:
            logger.warning(f"[Report] {clip.clip_id}: no predictions for frames {missing}, skipped")

        scores: List[FrameScores] = []
        skipped = list(missing)
        empty_gt = 0
        for entry in frames:
            if paths[entry.index] is None:
                continue
            gt = frame_mask(manifest, entry)
            if gt.area == 0 and options.exclude_empty_gt:
                skipped.append(entry.index)
                continue
            pred = load_gray(paths[entry.index])
            if options.resize_predictions and pred.shape != gt.shape:
                pred = resize_gray(pred, gt.width, gt.height)
            frame_scores = eval_frame(pred, gt, cfg)
            empty_gt += int(frame_scores.empty_gt)
            scores.append(frame_scores)

        if not scores:
            logger.warning(f"[Report] {clip.clip_id}: no frames evaluated")
            return None
        table = np.array([s.as_tuple() for s in scores], dtype=np.float64)
        means = {name: float(np.clip(v, 0.0, 1.0)) for name, v in zip(METRIC_FIELDS, table.mean(axis=0))}
        return ClipEval(
            clip_id=clip.clip_id,
            n_frames=len(scores),
            scores=FrameScores(**means),
            empty_gt_frames=empty_gt,
            skipped_frames=sorted(skipped),
        )

    @staticmethod
    def _clip_table(manifest: DatasetManifest, evals: Sequence[ClipEval]) -> pd.DataFrame:
        rows = []
        for ev in evals:
            clip = manifest.clip(ev.clip_id)
            row = {
                "clip_id": ev.clip_id,
                "scenario": clip.scenario.value if clip.scenario else UNSET,
                "category": clip.category.value if clip.category else UNSET,
                "motion": clip.motion.value if clip.motion else UNSET,
                "split": clip.split.value if clip.split else UNSET,
                "n_frames": ev.n_frames,
            }
            row.update({name: getattr(ev.scores, name) for name in METRIC_FIELDS})
            rows.append(row)
        return pd.DataFrame(rows, columns=["clip_id", "scenario", "category", "motion", "split", "n_frames",
                                           *METRIC_FIELDS])

    @staticmethod
    def _aggregate(df: pd.DataFrame, frame_weighted: bool) -> FrameScores:
        values = df[list(METRIC_FIELDS)].to_numpy(dtype=np.float64)
        if frame_weighted:
            means = np.average(values, axis=0, weights=df["n_frames"].to_numpy(dtype=np.float64))
        else:
            means = values.mean(axis=0)
        return FrameScores(**{name: float(np.clip(v, 0.0, 1.0)) for name, v in zip(METRIC_FIELDS, means)})

    @staticmethod
    def eval_dataset(manifest: DatasetManifest, pred_root: PathLike, cfg: Optional[MetricConfig] = None,
                     groupings: Sequence[str] = DEFAULT_GROUPINGS,
                     options: Optional[EvalOptions] = None) -> EvalResult:
        """
        Evaluate clips of the selected split concurrently and reduce in manifest order.
        Groups use the unweighted mean of clip means unless frame_weighted is set.
        """
        cfg = cfg or MetricConfig()
        options = options or EvalOptions()
        notes: List[str] = []
        clips = [c for c in manifest.clips if options.split is None or c.split == options.split]
        if options.split is not None:
            unset = sum(1 for c in manifest.clips if c.split is None)
            if unset:
                notes.append(f"{unset} clips without a split excluded")
        logger.info(f"[Report] evaluating {len(clips)} clips with {options.threads} threads")

        evals = ordered_map(lambda c: ReportEngine.eval_clip(manifest, c, pred_root, cfg, options),
                            clips, options.threads)
        clip_evals = []
        for clip, ev in zip(clips, evals):
            if ev is None:
                notes.append(f"clip {clip.clip_id}: no frames evaluated")
            else:
                clip_evals.append(ev)
                if ev.skipped_frames:
                    notes.append(f"clip {clip.clip_id}: skipped frames {ev.skipped_frames}")
                if ev.empty_gt_frames:
                    notes.append(f"clip {clip.clip_id}: {ev.empty_gt_frames} frames with empty ground truth")

        df = ReportEngine._clip_table(manifest, clip_evals)
        groups: List[GroupReport] = []
        for grouping in groupings:
            if grouping == "all":
                if not df.empty:
                    groups.append(GroupReport(grouping="all", group="all", clips=len(df),
                                              frames=int(df["n_frames"].sum()),
                                              scores=ReportEngine._aggregate(df, options.frame_weighted)))
                else:
                    notes.append("all: no clips evaluated")
                continue
            if grouping not in GROUP_ORDER:
                raise ValueError(f"unknown grouping '{grouping}'")
            order = GROUP_ORDER[grouping] + [UNSET]
            for key in order:
                part = df[df[grouping] == key]
                if part.empty:
                    if key != UNSET:
                        notes.append(f"{grouping} {key}: no clips, omitted")
                    continue
                groups.append(GroupReport(grouping=grouping, group=key, clips=len(part),
                                          frames=int(part["n_frames"].sum()),
                                          scores=ReportEngine._aggregate(part, options.frame_weighted)))

        aggregation = "frame-weighted" if options.frame_weighted else "clip-mean"
        return EvalResult(dataset=manifest.name, aggregation=aggregation, clips=clip_evals,
                          groups=groups, notes=notes)

    # ============== Emission ==============

    @staticmethod
    def result_frame(result: EvalResult) -> pd.DataFrame:
        """Group rows followed by per-clip rows (grouping 'clip')."""
        rows = []
        for g in result.groups:
            rows.append([g.group, g.clips, *g.scores.as_tuple(), g.grouping, g.frames, result.aggregation])
        for c in result.clips:
            rows.append([c.clip_id, 1, *c.scores.as_tuple(), "clip", c.n_frames, result.aggregation])
        return pd.DataFrame(rows, columns=TABLE_COLUMNS)

    @staticmethod
    def _markdown(df: pd.DataFrame, label: str, caption: Optional[str] = None) -> str:
        metric_cols = list(METRIC_COLUMNS.values())
        header = [label, "clips"] + metric_cols
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
        for _, row in df.iterrows():
            cells = [str(row[label]), str(int(row["clips"]))] + [_fmt3(row[c]) for c in metric_cols]
            lines.append("| " + " | ".join(cells) + " |")
        if caption:
            lines.extend(["", caption])
        return "\n".join(lines) + "\n"

    @staticmethod
    def emit(result: EvalResult, fmt: str = "csv") -> str:
        """
        csv:  group rows then clip rows, full precision
        json: {dataset, aggregation, groups, clips, notes}, stable key order
        md:   one table per grouping, 3 decimals, aggregation named in the caption
        """
        if fmt == "csv":
            return ReportEngine.result_frame(result).to_csv(index=False, lineterminator="\n")
        if fmt == "json":
            doc = {
                "dataset": result.dataset,
                "aggregation": result.aggregation,
                "groups": [
                    {"group": g.group, "clips": g.clips,
                     **{col: getattr(g.scores, name) for name, col in METRIC_COLUMNS.items()},
                     "grouping": g.grouping, "frames": g.frames}
                    for g in result.groups
                ],
                "clips": [
                    {"clip_id": c.clip_id, "frames": c.n_frames, "empty_gt_frames": c.empty_gt_frames,
                     "skipped_frames": c.skipped_frames,
                     **{col: getattr(c.scores, name) for name, col in METRIC_COLUMNS.items()}}
                    for c in result.clips
                ],
                "notes": result.notes,
            }
            return json.dumps(doc, indent=2) + "\n"
        if fmt == "md":
            df = ReportEngine.result_frame(result)
            df = df[df["grouping"] != "clip"]
            parts = []
            for grouping in dict.fromkeys(df["grouping"]):
                part = df[df["grouping"] == grouping]
                title = f"### {result.dataset}: {grouping}\n\n"
                parts.append(title + ReportEngine._markdown(part, "group", f"_Aggregation: {result.aggregation}_"))
            return "\n".join(parts)
        raise ValueError(f"unknown format '{fmt}'")

    @staticmethod
    def read_table(text: str, fmt: str = "csv") -> pd.DataFrame:
        """Parse an emitted csv/json evaluation document back into the csv table layout."""
        if fmt == "csv":
            return pd.read_csv(io.StringIO(text), float_precision="round_trip",
                               keep_default_na=False, dtype={"group": str})
        if fmt == "json":
            doc = json.loads(text)
            rows = []
            for g in doc["groups"]:
                rows.append([g["group"], g["clips"], *[g[c] for c in METRIC_COLUMNS.values()],
                             g["grouping"], g["frames"], doc["aggregation"]])
            for c in doc["clips"]:
                rows.append([c["clip_id"], 1, *[c[col] for col in METRIC_COLUMNS.values()],
                             "clip", c["frames"], doc["aggregation"]])
            return pd.DataFrame(rows, columns=TABLE_COLUMNS)
        raise ValueError(f"unknown format '{fmt}'")

    @staticmethod
    def emit_comparison(results: Dict[str, EvalResult], fmt: str = "md", grouping: str = "all") -> str:
        """Rows are methods, columns the five metrics; one row per method and group."""
        rows = []
        for method, result in results.items():
            for g in result.groups:
                if g.grouping == grouping:
                    rows.append([method, g.group, g.clips, *g.scores.as_tuple(), g.frames, result.aggregation])
        df = pd.DataFrame(rows, columns=["method", "group", "clips"] + list(METRIC_COLUMNS.values())
                          + ["frames", "aggregation"])
        if fmt == "csv":
            return df.to_csv(index=False, lineterminator="\n")
        if fmt == "json":
            return json.dumps({"grouping": grouping, "rows": df.to_dict(orient="records")}, indent=2) + "\n"
        if fmt == "md":
            parts = []
            aggregation = ", ".join(sorted({r.aggregation for r in results.values()})) or "clip-mean"
            for group in dict.fromkeys(df["group"]):
                part = df[df["group"] == group]
                parts.append(f"### {grouping}: {group}\n\n"
                             + ReportEngine._markdown(part, "method", f"_Aggregation: {aggregation}_"))
            return "\n".join(parts)
        raise ValueError(f"unknown format '{fmt}'")

    # ============== Dataset Documents ==============

    @staticmethod
    def scale_frame(stats: DatasetStats) -> pd.DataFrame:
        rows = []
        for clip_id, points in stats.scale_series.items():
            if not points:
                continue
            ratios = np.array([p.ratio for p in points], dtype=np.float64)
            rows.append(["clip", clip_id, len(points), None, None,
                         float(ratios.min()), float(ratios.mean()), float(ratios.max())])
            for p in points:
                rows.append(["frame", clip_id, len(points), p.frame, p.ratio, None, None, None])
        df = pd.DataFrame(rows, columns=["level", "clip_id", "n_frames", "frame", "ratio", "min", "mean", "max"])
        return df.astype({"frame": "Int64"})

    @staticmethod
    def emit_scale_scatter(stats: DatasetStats) -> str:
        """Per-clip min/mean/max object-to-image area ratio plus long-format frame rows (CSV)."""
        return ReportEngine.scale_frame(stats).to_csv(index=False, lineterminator="\n")

    @staticmethod
    def stats_tables(stats: DatasetStats) -> Dict[str, pd.DataFrame]:
        def counts(groups):
            return pd.DataFrame([{"group": k, **v.model_dump()} for k, v in groups.items()],
                                columns=["group", "clips", "frames", "annotated_frames"])

        totals = pd.DataFrame([{
            "group": "all",
            "clips": stats.clip_count,
            "frames": stats.frame_count,
            "annotated_frames": stats.annotated_frame_count,
            "mean_frames_per_clip": stats.mean_frames_per_clip,
        }])
        motion = pd.DataFrame([{"group": k, **v.model_dump()} for k, v in stats.motion_counts.items()],
                              columns=["group", "train", "test", "total"])
        cross = pd.DataFrame(stats.scenario_category).T.reset_index().rename(columns={"index": "scenario"})
        tables = {
            "totals": totals,
            "split": counts(stats.split_counts),
            "scenario": counts(stats.scenario_counts),
            "category": counts(stats.category_counts),
            "motion": motion,
            "scenario_category": cross,
        }
        if stats.scale_histogram:
            tables["scale_histogram"] = pd.DataFrame(
                [{"bin": k, "frames": v} for k, v in stats.scale_histogram.items()], columns=["bin", "frames"])
        return tables

    @staticmethod
    def emit_stats(stats: DatasetStats, fmt: str = "md", summary: Optional[Dict[str, object]] = None) -> str:
        """summary, when given, is a dataset_summary_row shown ahead of the count tables."""
        tables = ReportEngine.stats_tables(stats)
        if summary is not None:
            tables = {"summary": pd.DataFrame([summary]), **tables}
        if fmt == "json":
            doc = stats.model_dump(mode="json", exclude={"scale_series"})
            if summary is not None:
                doc = {"summary": summary, **doc}
            return json.dumps(doc, indent=2) + "\n"
        if fmt == "csv":
            long_rows = []
            for name, df in tables.items():
                key_col = df.columns[0]
                for _, row in df.iterrows():
                    for col in df.columns[1:]:
                        long_rows.append([name, row[key_col], col, row[col]])
            return pd.DataFrame(long_rows, columns=["table", "group", "column", "value"]).to_csv(
                index=False, lineterminator="\n")
        if fmt == "md":
            parts = []
            for name, df in tables.items():
                header = "| " + " | ".join(str(c) for c in df.columns) + " |"
                sep = "|" + "|".join(["---"] * len(df.columns)) + "|"
                body = ["| " + " | ".join(_fmt_cell(v) for v in row) + " |" for row in df.itertuples(index=False)]
                parts.append(f"### {name}\n\n" + "\n".join([header, sep, *body]) + "\n")
            return "\n".join(parts)
        raise ValueError(f"unknown format '{fmt}'")


def _fmt_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.2f}"
    return str(value)


# ============== Validation and Box Documents ==============

def _issue_frame(report: ValidationReport) -> pd.DataFrame:
    rows = [["violation", v.code, v.clip_id, v.frame, v.message] for v in report.violations]
    rows += [["warning", w.code, w.clip_id, w.frame, w.message] for w in report.warnings]
    rows += [["empty-annotation", "empty-annotation", r.clip_id, r.frame, r.reason]
             for r in report.empty_annotation_frames]
    df = pd.DataFrame(rows, columns=["severity", "code", "clip_id", "frame", "message"])
    return df.astype({"frame": "Int64"})


def emit_validation(report: ValidationReport, fmt: str = "md") -> str:
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    if fmt == "csv":
        return _issue_frame(report).to_csv(index=False, lineterminator="\n")
    if fmt == "md":
        status = "OK" if report.ok else f"{len(report.violations)} violations"
        lines = [f"### {report.dataset}: {status}", ""]
        lines.append("| split | clips |")
        lines.append("|---|---|")
        lines.extend(f"| {k} | {v} |" for k, v in report.split_sizes.items())
        if report.scale is not None:
            s = report.scale
            lines.extend(["", f"Object scale over {s.frames} frames: min {s.min:.4f}, "
                              f"median {s.median:.4f}, max {s.max:.4f}"])
        issues = _issue_frame(report)
        if not issues.empty:
            lines.extend(["", "| severity | code | clip | frame | message |", "|---|---|---|---|---|"])
            for row in issues.itertuples(index=False):
                frame = "" if pd.isna(row.frame) else str(row.frame)
                lines.append(f"| {row.severity} | {row.code} | {row.clip_id or ''} | {frame} | {row.message} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format '{fmt}'")


def emit_bboxes(boxes: Sequence[FrameBoxes], fmt: str = "json") -> str:
    """json: one record per annotated frame; csv: one row per box."""
    if fmt == "json":
        return json.dumps([b.model_dump(mode="json") for b in boxes], indent=2) + "\n"
    if fmt == "csv":
        rows = [[b.clip_id, b.frame, r.instance, r.x_min, r.y_min, r.x_max, r.y_max] for b in boxes for r in b.boxes]
        return pd.DataFrame(rows, columns=["clip_id", "frame", "instance", "x_min", "y_min", "x_max", "y_max"]).to_csv(
            index=False, lineterminator="\n")
    raise ValueError(f"unknown format '{fmt}' for boxes (csv or json)")
