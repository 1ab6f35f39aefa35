"""
Command line entry point for vcod-bench.

    vcod-bench validate        --manifest m.json | --dataset-root DIR [--layout ...]
    vcod-bench stats           --manifest m.json [--no-scale]
    vcod-bench eval            --manifest m.json --pred-root preds/ [--out scores.csv]
    vcod-bench compare         --manifest m.json --pred-root A=preds_a/ --pred-root B=preds_b/
    vcod-bench fuse            --manifest m.json --clip ID --propagator ... --out DIR
    vcod-bench report-scatter  --manifest m.json
    vcod-bench make-manifest   --dataset-root DIR --out m.json
    vcod-bench export-bboxes   --manifest m.json
    vcod-bench make-synthetic  --out DIR

Exit status: 0 success, 1 strict-mode violations or a failed run, 2 usage errors.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from src.config import DEFAULT_BINARIZE, FLAG_THRESHOLD, LOG_LEVEL
from src.dataset import (
    compute_stats,
    dataset_summary_row,
    export_bboxes,
    frame_mask,
    indexed_files,
    load_manifest,
    manifest_json,
    scan_directory,
    validate_dataset,
)
from src.errors import VcodBenchError
from src.fusion import (
    apply_corrections,
    clip_sources,
    load_corrections,
    pseudo_labels_from_masks,
    run_pipeline,
    write_initial_outputs,
    write_pipeline_outputs,
)
from src.mask_core import load_mask
from src.models import (
    BinarizePolicy,
    EvalOptions,
    MetricConfig,
    PipelineOptions,
    RunConfig,
    Split,
    ValidationOptions,
)
from src.propagators import parse_propagator
from src.report import ReportEngine, emit_bboxes, emit_validation
from src.synthetic import write_predictions, write_reference_manifest, write_synthetic_dataset
from src.utils import atomic_write_text, profile_time, resolve_thread_count, setup_logger

logger = setup_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

SPLITS = {"train": Split.TRAIN, "test": Split.TEST, "all": None}


class UsageError(Exception):
    """Bad flag combination detected after argparse."""


# ============== Parser ==============

def _common(parser: argparse.ArgumentParser, fmt_default: str, formats=("csv", "json", "md")):
    parser.add_argument("--out", type=Path, help="output file (default: stdout)")
    parser.add_argument("--format", choices=formats, default=fmt_default)
    parser.add_argument("--threads", type=int, help="worker threads (default: VCOD_BENCH_THREADS or CPU count)")
    parser.add_argument("--log-level", default=None, help=f"logging level (default: {LOG_LEVEL})")


def _dataset_source(parser: argparse.ArgumentParser):
    parser.add_argument("--manifest", type=Path, help="dataset manifest JSON")
    parser.add_argument("--dataset-root", type=Path, help="scan this folder instead of reading a manifest")
    parser.add_argument("--layout", choices=["msvcod", "moca-mask"], default="msvcod")


def _strictness(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--strict", dest="strict", action="store_true", default=True)
    group.add_argument("--lenient", dest="strict", action="store_false")


def _metric_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--binarize", default=DEFAULT_BINARIZE, help="fixed:<t> or adaptive")
    parser.add_argument("--frame-weighted", action="store_true",
                        help="weight clip means by frame count when aggregating groups")
    parser.add_argument("--split", choices=sorted(SPLITS), default="test")
    parser.add_argument("--exclude-empty-gt", action="store_true")
    parser.add_argument("--resize-predictions", action="store_true",
                        help="bilinearly resize predictions whose size differs from the GT")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcod-bench", description="Video camouflaged object detection benchmark toolkit")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True

    p = sub.add_parser("validate", help="check a dataset against the collection guidelines")
    _dataset_source(p)
    _common(p, "md")
    _strictness(p)
    p.add_argument("--annotation-stride", type=int, help="expected gap between annotated frames")
    p.add_argument("--stride-from-fps", action="store_true",
                   help="expect one annotated frame every fps frames when --annotation-stride is unset")
    p.add_argument("--no-files", action="store_true", help="check manifest metadata only")

    p = sub.add_parser("stats", help="clip, frame, scenario, category and motion tables")
    _dataset_source(p)
    _common(p, "md")
    p.add_argument("--no-scale", action="store_true", help="skip reading masks for object scale")

    p = sub.add_parser("eval", help="score one prediction folder")
    _dataset_source(p)
    _common(p, "csv")
    _strictness(p)
    _metric_flags(p)
    p.add_argument("--pred-root", type=Path, required=True)

    p = sub.add_parser("compare", help="benchmark table over several prediction folders")
    _dataset_source(p)
    _common(p, "md")
    _strictness(p)
    _metric_flags(p)
    p.add_argument("--pred-root", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--grouping", choices=["all", "scenario", "category", "motion"], default="all")

    p = sub.add_parser("fuse", help="bidirectional propagation and fusion for one clip")
    _dataset_source(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--log-level", default=None)
    p.add_argument("--clip", required=True)
    p.add_argument("--propagator", default="static",
                   help="static | transform:<fixture> | exec:<command> | exec1:<command> (one process at a time)")
    p.add_argument("--anchors", type=Path, help="folder of corrected anchor masks named by frame index "
                                                "(default: the clip's own annotations)")
    p.add_argument("--anchor-stride", type=int, help="frames between anchors (default: clip fps)")
    p.add_argument("--corrections", type=Path, action="append", default=[],
                   help="correction file, applied in order; repeat for later rounds")
    p.add_argument("--flag-threshold", type=float, default=FLAG_THRESHOLD)
    p.add_argument("--tolerance", type=float, default=0.0, help="polygon simplification tolerance in pixels")
    p.add_argument("--rank-with-anchors", action="store_true")
    p.add_argument("--initial", action="store_true",
                   help="only propagate forward from the first annotated frame that holds the object")

    p = sub.add_parser("report-scatter", help="object-to-image area ratio per clip and frame (CSV)")
    _dataset_source(p)
    _common(p, "csv", formats=("csv",))

    p = sub.add_parser("make-manifest", help="bootstrap a manifest from a folder layout")
    p.add_argument("--dataset-root", type=Path, required=True)
    p.add_argument("--layout", choices=["msvcod", "moca-mask"], default="msvcod")
    p.add_argument("--name")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.add_argument("--log-level", default=None)

    p = sub.add_parser("export-bboxes", help="per-instance bounding boxes for every annotated frame")
    _dataset_source(p)
    _common(p, "json", formats=("csv", "json"))
    p.add_argument("--components", action="store_true",
                   help="one box per 8-connected component on frames without an instance map")

    p = sub.add_parser("make-synthetic", help="write the synthetic mini-dataset")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--layout", choices=["msvcod", "moca-mask"], default="msvcod")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt-every", type=int, default=1, help="annotate every n-th frame")
    p.add_argument("--predictions", choices=["none", "perfect", "noisy", "empty"], default="none",
                   help="also write a prediction folder next to the dataset")
    p.add_argument("--reference", action="store_true",
                   help="write only the metadata manifest shaped like the published benchmark")
    p.add_argument("--log-level", default=None)
    return parser


# ============== Helpers ==============

def _emit(text: str, out: Optional[Path]):
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)
        logger.info(f"[CLI] wrote {out}")


def _run_config(args: argparse.Namespace, pred_root: Optional[Path] = None) -> RunConfig:
    metric = MetricConfig()
    if getattr(args, "binarize", None):
        metric = MetricConfig(binarize=BinarizePolicy.parse(args.binarize))
    fmt = getattr(args, "format", None)
    return RunConfig(
        subcommand=args.subcommand,
        dataset_root=getattr(args, "dataset_root", None),
        manifest=getattr(args, "manifest", None),
        pred_root=pred_root,
        out=getattr(args, "out", None),
        format=fmt if fmt in ("csv", "json", "md") else "csv",
        metric=metric,
        threads=resolve_thread_count(getattr(args, "threads", None)),
        strict=getattr(args, "strict", True),
        layout=getattr(args, "layout", "msvcod"),
    )


def _manifest(cfg: RunConfig):
    if cfg.manifest is not None:
        return load_manifest(cfg.manifest)
    if cfg.dataset_root is not None:
        return scan_directory(cfg.dataset_root, layout=cfg.layout)
    raise UsageError("one of --manifest or --dataset-root is required")


def _eval_options(args: argparse.Namespace, cfg: RunConfig) -> EvalOptions:
    return EvalOptions(strict=cfg.strict, frame_weighted=args.frame_weighted,
                       exclude_empty_gt=args.exclude_empty_gt, resize_predictions=args.resize_predictions,
                       split=SPLITS[args.split], threads=cfg.threads)


def _named_roots(values: Sequence[str]) -> Dict[str, Path]:
    roots: Dict[str, Path] = {}
    for value in values:
        name, sep, path = value.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--pred-root for compare must be NAME=PATH, got '{value}'")
        if name in roots:
            raise UsageError(f"duplicate method name '{name}'")
        roots[name] = Path(path)
    return roots


# ============== Subcommands ==============

@profile_time
def cmd_validate(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    options = ValidationOptions(annotation_stride=args.annotation_stride, stride_from_fps=args.stride_from_fps,
                                check_files=not args.no_files, threads=cfg.threads)
    report = validate_dataset(manifest, options)
    _emit(emit_validation(report, cfg.format), cfg.out)
    if not report.ok and cfg.strict:
        logger.error(f"[CLI] {len(report.violations)} guideline violations")
        return EXIT_FAILED
    return EXIT_OK


@profile_time
def cmd_stats(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    stats = compute_stats(manifest, read_masks=not args.no_scale, threads=cfg.threads)
    _emit(ReportEngine.emit_stats(stats, cfg.format, summary=dataset_summary_row(manifest, stats)), cfg.out)
    return EXIT_OK


@profile_time
def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    result = ReportEngine.eval_dataset(manifest, cfg.pred_root, cfg.metric, options=_eval_options(args, cfg))
    _emit(ReportEngine.emit(result, cfg.format), cfg.out)
    return EXIT_OK


@profile_time
def cmd_compare(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    options = _eval_options(args, cfg)
    results = {}
    for name, root in _named_roots(args.pred_root).items():
        if not root.is_dir():
            raise UsageError(f"prediction root for '{name}' is not a directory: {root}")
        logger.info(f"[CLI] evaluating method '{name}'")
        results[name] = ReportEngine.eval_dataset(manifest, root, cfg.metric, options=options)
    _emit(ReportEngine.emit_comparison(results, cfg.format, args.grouping), cfg.out)
    return EXIT_OK


@profile_time
def cmd_fuse(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    try:
        clip = manifest.clip(args.clip)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from e
    try:
        propagator = parse_propagator(args.propagator)
    except ValueError as e:
        raise UsageError(str(e)) from e

    if args.anchors is not None:
        if not args.anchors.is_dir():
            raise UsageError(f"anchor folder is not a directory: {args.anchors}")
        anchors = {index: load_mask(path) for index, path in indexed_files(args.anchors).items()}
    else:
        anchors = {f.index: frame_mask(manifest, f) for f in clip.annotated_frames}

    frames = clip_sources(manifest, clip)
    if args.initial:
        if args.corrections:
            raise UsageError("--corrections does not apply to --initial")
        reference, labels = pseudo_labels_from_masks(propagator, frames, anchors)
        write_initial_outputs(clip.clip_id, labels, reference, cfg.out, args.tolerance)
        logger.info(f"[CLI] {clip.clip_id}: initial pseudo-labels from frame {reference}")
        return EXIT_OK

    options = PipelineOptions(flag_threshold=args.flag_threshold, anchor_stride=args.anchor_stride,
                              polygon_tolerance=args.tolerance, rank_with_anchors=args.rank_with_anchors,
                              threads=cfg.threads)
    result = run_pipeline(clip, propagator, anchors, frames, options)
    write_pipeline_outputs(result, cfg.out)
    for path in args.corrections:
        result = apply_corrections(result, load_corrections(path), base_dir=path.parent)
        write_pipeline_outputs(result, cfg.out)
    logger.info(f"[CLI] {clip.clip_id}: round {result.round.round}, {len(result.flagged)} frames flagged")
    return EXIT_OK


@profile_time
def cmd_report_scatter(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    stats = compute_stats(manifest, read_masks=True, threads=cfg.threads)
    _emit(ReportEngine.emit_scale_scatter(stats), cfg.out)
    return EXIT_OK


def cmd_make_manifest(args, cfg: RunConfig) -> int:
    manifest = scan_directory(cfg.dataset_root, layout=cfg.layout, name=args.name)
    _emit(manifest_json(manifest), cfg.out)
    return EXIT_OK


@profile_time
def cmd_export_bboxes(args, cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    boxes = export_bboxes(manifest, cfg.threads, split_components=args.components)
    _emit(emit_bboxes(boxes, cfg.format), cfg.out)
    return EXIT_OK


def cmd_make_synthetic(args, cfg: RunConfig) -> int:
    if args.reference:
        path = write_reference_manifest(cfg.out / "manifest.json")
        logger.info(f"[CLI] wrote reference manifest {path}")
        return EXIT_OK
    if args.gt_every < 1:
        raise UsageError("--gt-every must be >= 1")
    data = write_synthetic_dataset(cfg.out / "dataset", seed=args.seed, layout=cfg.layout, gt_every=args.gt_every)
    if args.predictions != "none":
        write_predictions(data.manifest, cfg.out / f"pred_{args.predictions}", mode=args.predictions, seed=args.seed)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "fuse": cmd_fuse,
    "report-scatter": cmd_report_scatter,
    "make-manifest": cmd_make_manifest,
    "export-bboxes": cmd_export_bboxes,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.log_level:
        try:
            logger.setLevel(args.log_level.upper())
        except ValueError:
            parser.print_usage(sys.stderr)
            sys.stderr.write(f"vcod-bench: error: unknown log level '{args.log_level}'\n")
            return EXIT_USAGE

    try:
        cfg = _run_config(args, getattr(args, "pred_root", None) if args.subcommand == "eval" else None)
        return COMMANDS[args.subcommand](args, cfg)
    except (UsageError, ValidationError, ValueError) as e:
        if isinstance(e, VcodBenchError):
            logger.error(f"[CLI] {e}")
            return EXIT_FAILED
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"vcod-bench: error: {e}\n")
        return EXIT_USAGE
    except VcodBenchError as e:
        logger.error(f"[CLI] {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
