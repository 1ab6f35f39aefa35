"""
Dataset module for manifest I/O, directory scanning, guideline validation,
statistics and bounding-box export.
"""
import json
import re
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.config import MANIFEST_NAME
from src.errors import ManifestError, RasterError
from src.mask_core import (
    BinaryMask,
    area_ratio,
    bbox_of,
    connected_components,
    image_size,
    instance_mask,
    instance_union,
    load_instances,
    load_mask,
)
from src.models import (
    BoxRecord,
    Category,
    ClipRecord,
    DatasetManifest,
    DatasetStats,
    FrameBoxes,
    FrameEntry,
    FrameRef,
    GroupCount,
    Motion,
    MotionCount,
    ScalePoint,
    ScaleSummary,
    Scenario,
    Split,
    ValidationOptions,
    ValidationReport,
    Violation,
)
from src.utils import atomic_write_text, ordered_map, setup_logger

logger = setup_logger()

PathLike = Union[str, Path]

UNSET = "Unset"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
FRAME_DIRS = ("Frame", "Frames", "Imgs")
GT_DIR = "GT"
INSTANCE_DIR = "Instances"
SCALE_BINS = (0.0, 0.04, 0.1, 0.25, 0.5, 1.0)


# ============== Manifest I/O ==============

def load_manifest(path: PathLike) -> DatasetManifest:
    """Parse and validate a manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"manifest not found or unreadable: {path}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {path} ({e})") from e
    if not isinstance(data, dict):
        raise ManifestError(f"manifest must be a JSON object: {path}")
    try:
        manifest = DatasetManifest.model_validate({**data, "root": path.parent.resolve()})
    except ValidationError as e:
        raise ManifestError(f"invalid manifest {path}: {e}") from e
    logger.info(f"[Dataset] loaded '{manifest.name}': {len(manifest.clips)} clips")
    return manifest


def manifest_json(manifest: DatasetManifest) -> str:
    data = manifest.model_dump(mode="json", exclude_none=True)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_manifest(manifest: DatasetManifest, path: Optional[PathLike] = None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    return atomic_write_text(path, manifest_json(manifest))


# ============== Directory Scan ==============

def _frame_index(path: Path) -> int:
    match = re.search(r"(\d+)$", path.stem)
    if not match:
        raise ManifestError(f"cannot derive a frame index from '{path.name}'")
    return int(match.group(1))


def indexed_files(folder: Optional[Path]) -> Dict[int, Path]:
    if folder is None or not folder.is_dir():
        return {}
    files = {}
    for path in sorted(folder.iterdir()):
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
            index = _frame_index(path)
            if index in files:
                raise ManifestError(f"two files map to frame {index} in {folder}")
            files[index] = path
    return files


def _scan_clip(clip_dir: Path, root: Path, split: Optional[Split]) -> ClipRecord:
    frame_dir = next((clip_dir / name for name in FRAME_DIRS if (clip_dir / name).is_dir()), None)
    if frame_dir is None:
        raise ManifestError(f"clip '{clip_dir.name}' has no frame folder ({', '.join(FRAME_DIRS)})")
    images = indexed_files(frame_dir)
    gts = indexed_files(clip_dir / GT_DIR)
    instances = indexed_files(clip_dir / INSTANCE_DIR)

    for kind, found in (("GT", gts), ("instance", instances)):
        orphans = sorted(set(found) - set(images))
        if orphans:
            raise ManifestError(f"clip '{clip_dir.name}': {kind} frames without images: {orphans}")

    def rel(p: Path) -> str:
        return p.relative_to(root).as_posix()

    frames = [
        FrameEntry(
            index=index,
            image=rel(images[index]),
            gt=rel(gts[index]) if index in gts else None,
            instances=rel(instances[index]) if index in instances else None,
        )
        for index in sorted(images)
    ]
    width = height = None
    if frames:
        width, height = image_size(images[frames[0].index])
    return ClipRecord(clip_id=clip_dir.name, split=split, width=width, height=height, frames=frames)


def _split_of(name: str) -> Optional[Split]:
    lowered = name.lower()
    if lowered.startswith("train"):
        return Split.TRAIN
    if lowered.startswith("test"):
        return Split.TEST
    return None


def scan_directory(root: PathLike, layout: str = "msvcod", name: Optional[str] = None) -> DatasetManifest:
    """
    Bootstrap a manifest from a folder layout.

    msvcod:     root/<split>/<clip>/Frame|GT|Instances
    moca-mask:  root/<clip>/Frame (or Imgs) and root/<clip>/GT, GT may be sparse

    Scenario, category, motion and fps are not encoded by either layout and stay unset.
    """
    root = Path(root).resolve()
    if not root.is_dir():
        raise ManifestError(f"dataset root is not a directory: {root}")

    clip_dirs: List[Tuple[Path, Optional[Split]]] = []
    try:
        if layout == "msvcod":
            for split_dir in sorted(p for p in root.iterdir() if p.is_dir()):
                split = _split_of(split_dir.name)
                if split is None:
                    logger.debug(f"[Dataset] ignoring non-split folder {split_dir.name}")
                    continue
                clip_dirs.extend((c, split) for c in sorted(split_dir.iterdir()) if c.is_dir())
        elif layout == "moca-mask":
            clip_dirs.extend((c, None) for c in sorted(root.iterdir()) if c.is_dir())
        else:
            raise ManifestError(f"unknown layout profile '{layout}'")
    except OSError as e:
        raise ManifestError(f"unreadable directory under {root}: {e}") from e

    clips = sorted((_scan_clip(d, root, split) for d, split in clip_dirs), key=lambda c: c.clip_id)
    if not clips:
        logger.warning(f"[Dataset] no clips found under {root} (layout {layout})")
    try:
        manifest = DatasetManifest(name=name or root.name, root=root, clips=clips)
    except ValidationError as e:
        raise ManifestError(f"scanned layout is inconsistent: {e}") from e
    logger.info(f"[Dataset] scanned {len(clips)} clips from {root}")
    return manifest


# ============== Frame Access ==============

def frame_mask(manifest: DatasetManifest, entry: FrameEntry) -> BinaryMask:
    """Binary annotation of a frame: the GT mask, else the union of its instances."""
    if entry.gt is not None:
        return load_mask(manifest.resolve(entry.gt))
    if entry.instances is not None:
        return instance_union(load_instances(manifest.resolve(entry.instances)))
    raise ManifestError(f"frame {entry.index} has no annotation")


def observed_pair(scenario: Scenario, category: Category) -> bool:
    """Medical objects appear only in medical scenes, and medical scenes hold nothing else."""
    return (scenario == Scenario.MEDICAL) == (category == Category.MEDICAL)


def _label(value) -> str:
    return value.value if value is not None else UNSET


# ============== Validation ==============

def _modal_gap(indices: List[int]) -> Optional[int]:
    gaps = [b - a for a, b in zip(indices, indices[1:])]
    if not gaps:
        return None
    counts = Counter(gaps)
    best = max(counts.values())
    return min(g for g, n in counts.items() if n == best)


def _validate_clip(manifest: DatasetManifest, clip: ClipRecord, options: ValidationOptions) -> dict:
    violations: List[Violation] = []
    warnings: List[Violation] = []
    empty_frames: List[FrameRef] = []
    ratios: List[float] = []
    cid = clip.clip_id

    missing = [f for f in ("scenario", "category", "motion", "split", "fps", "width", "height")
               if getattr(clip, f) is None]
    if missing:
        violations.append(Violation(code="missing-metadata", clip_id=cid,
                                    message=f"unset fields: {', '.join(missing)}"))

    if clip.scenario is not None and clip.category is not None and not observed_pair(clip.scenario, clip.category):
        warnings.append(Violation(code="unobserved-pair", clip_id=cid,
                                  message=f"{clip.scenario.value}/{clip.category.value} is not an observed combination"))

    if clip.fps is not None and clip.frames:
        duration = len(clip.frames) / clip.fps
        if not options.min_duration_s <= duration <= options.max_duration_s:
            warnings.append(Violation(code="duration", clip_id=cid,
                                      message=f"{duration:.1f}s outside {options.min_duration_s:g}-{options.max_duration_s:g}s"))

    annotated = [f.index for f in clip.annotated_frames]
    if not annotated:
        warnings.append(Violation(code="no-annotations", clip_id=cid, message="clip has no annotated frames"))
    modal = _modal_gap(annotated)
    stride = options.annotation_stride
    if stride is None and options.stride_from_fps and clip.fps:
        stride = clip.fps
    if stride is None:
        stride = modal
        # sparse annotation on source-rate indices should step by fps
        if modal is not None and modal > 1 and clip.fps and modal != clip.fps:
            warnings.append(Violation(code="cadence", clip_id=cid,
                                      message=f"annotated every {modal} frames but fps is {clip.fps}"))
    for prev, cur in zip(annotated, annotated[1:]):
        if cur - prev != stride:
            violations.append(Violation(code="cadence", clip_id=cid, frame=cur,
                                        message=f"annotation gap {cur - prev} after frame {prev}, expected {stride}"))

    if not options.check_files:
        return dict(violations=violations, warnings=warnings, empty=empty_frames, ratios=ratios)

    expected = (clip.width, clip.height) if clip.width and clip.height else None
    for entry in clip.frames:
        broken = False
        for kind in ("image", "gt", "instances"):
            rel = getattr(entry, kind)
            if rel is None:
                continue
            path = manifest.resolve(rel)
            if not path.is_file():
                violations.append(Violation(code="missing-file", clip_id=cid, frame=entry.index,
                                            message=f"{kind} file not found: {rel}"))
                broken = True
                continue
            try:
                size = image_size(path)
            except RasterError as e:
                violations.append(Violation(code="unreadable", clip_id=cid, frame=entry.index, message=str(e)))
                broken = True
                continue
            if expected is None:
                expected = size
            elif size != expected:
                violations.append(Violation(code="dimension-mismatch", clip_id=cid, frame=entry.index,
                                            message=f"{kind} is {size[0]}x{size[1]}, expected {expected[0]}x{expected[1]}"))
                broken = True
        if entry.annotated and not broken:
            try:
                mask = frame_mask(manifest, entry)
            except (RasterError, ManifestError) as e:
                violations.append(Violation(code="unreadable", clip_id=cid, frame=entry.index, message=str(e)))
                continue
            if mask.area == 0:
                empty_frames.append(FrameRef(clip_id=cid, frame=entry.index, reason="empty annotation"))
            ratios.append(area_ratio(mask))
    return dict(violations=violations, warnings=warnings, empty=empty_frames, ratios=ratios)


def _split_overlap(manifest: DatasetManifest) -> List[Violation]:
    owners: Dict[str, ClipRecord] = {}
    found = []
    for clip in manifest.clips:
        for entry in clip.frames:
            other = owners.setdefault(entry.image, clip)
            if other is not clip and other.split is not None and clip.split is not None and other.split != clip.split:
                found.append(Violation(code="split-overlap", clip_id=clip.clip_id, frame=entry.index,
                                       message=f"'{entry.image}' also used by clip '{other.clip_id}'"))
    return found


def validate_dataset(manifest: DatasetManifest, options: Optional[ValidationOptions] = None) -> ValidationReport:
    """
    Machine-checkable collection guidelines: metadata completeness, split disjointness,
    annotation cadence, file presence and dimensions, empty annotations, coverage of
    scenes/categories/motion and scale variation. Never raises on dataset content.
    """
    options = options or ValidationOptions()
    per_clip = ordered_map(lambda c: _validate_clip(manifest, c, options), manifest.clips, options.threads)

    report = ValidationReport(dataset=manifest.name)
    report.violations.extend(_split_overlap(manifest))
    ratios: List[float] = []
    for result in per_clip:
        report.violations.extend(result["violations"])
        report.warnings.extend(result["warnings"])
        report.empty_annotation_frames.extend(result["empty"])
        ratios.extend(result["ratios"])

    split_sizes = Counter(_label(c.split) for c in manifest.clips)
    report.split_sizes = {s.value: split_sizes.get(s.value, 0) for s in Split}
    if split_sizes.get(UNSET):
        report.split_sizes[UNSET] = split_sizes[UNSET]

    for field, enum in (("scenario", Scenario), ("category", Category), ("motion", Motion)):
        counts = Counter(_label(getattr(c, field)) for c in manifest.clips)
        report.coverage[field] = {e.value: counts.get(e.value, 0) for e in enum}
        absent = [e.value for e in enum if not counts.get(e.value)]
        if manifest.clips and absent:
            report.warnings.append(Violation(code="coverage", message=f"no clips for {field} {', '.join(absent)}"))

    if ratios:
        values = np.asarray(ratios, dtype=np.float64)
        report.scale = ScaleSummary(frames=int(values.size), min=float(values.min()),
                                    median=float(np.median(values)), max=float(values.max()))

    for warning in report.warnings:
        logger.warning(f"[Dataset] {warning.clip_id or manifest.name}: {warning.message}")
    logger.info(f"[Dataset] validation of '{manifest.name}': {len(report.violations)} violations, "
                f"{len(report.warnings)} warnings")
    return report


# ============== Statistics ==============

def _clip_frame(manifest: DatasetManifest) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "clip_id": c.clip_id,
                "scenario": _label(c.scenario),
                "category": _label(c.category),
                "motion": _label(c.motion),
                "split": _label(c.split),
                "frames": len(c.frames),
                "annotated_frames": len(c.annotated_frames),
            }
            for c in manifest.clips
        ],
        columns=["clip_id", "scenario", "category", "motion", "split", "frames", "annotated_frames"],
    )


def _group_counts(df: pd.DataFrame, column: str, order: List[str]) -> Dict[str, GroupCount]:
    if UNSET in set(df[column]):
        order = order + [UNSET]
    grouped = df.groupby(column).agg(
        clips=("clip_id", "size"),
        frames=("frames", "sum"),
        annotated_frames=("annotated_frames", "sum"),
    ).reindex(order, fill_value=0)
    return {key: GroupCount(**{k: int(v) for k, v in row.items()}) for key, row in grouped.iterrows()}


def _clip_scale(manifest: DatasetManifest, clip: ClipRecord) -> Tuple[List[ScalePoint], List[FrameRef]]:
    points, excluded = [], []
    for entry in clip.annotated_frames:
        try:
            ratio = area_ratio(frame_mask(manifest, entry))
        except (RasterError, ManifestError) as e:
            logger.warning(f"[Dataset] {clip.clip_id} frame {entry.index} excluded from scale series: {e}")
            excluded.append(FrameRef(clip_id=clip.clip_id, frame=entry.index, reason=str(e)))
            continue
        points.append(ScalePoint(frame=entry.index, ratio=ratio))
    return points, excluded


def scale_histogram(ratios: List[float]) -> Dict[str, int]:
    counts, _ = np.histogram(np.asarray(ratios, dtype=np.float64), bins=SCALE_BINS)
    return {f"{lo:g}-{hi:g}": int(n) for lo, hi, n in zip(SCALE_BINS, SCALE_BINS[1:], counts)}


def compute_stats(manifest: DatasetManifest, read_masks: bool = True, threads: int = 1) -> DatasetStats:
    """
    Clip/frame counts per split, scenario, category and motion pattern, the
    scenario x category table and, when read_masks is set, per-frame object scale.
    frame_count counts every stored frame; annotated_frame_count only those with masks.
    """
    df = _clip_frame(manifest)
    frame_count = int(df["frames"].sum())

    motion = {}
    for m in [e.value for e in Motion] + ([UNSET] if UNSET in set(df["motion"]) else []):
        rows = df[df["motion"] == m]
        motion[m] = MotionCount(
            train=int((rows["split"] == Split.TRAIN.value).sum()),
            test=int((rows["split"] == Split.TEST.value).sum()),
            total=int(len(rows)),
        )

    scenarios = [e.value for e in Scenario] + ([UNSET] if UNSET in set(df["scenario"]) else [])
    categories = [e.value for e in Category] + ([UNSET] if UNSET in set(df["category"]) else [])
    if df.empty:
        table = pd.DataFrame(0, index=scenarios, columns=categories)
    else:
        table = pd.crosstab(df["scenario"], df["category"]).reindex(index=scenarios, columns=categories, fill_value=0)

    scale_series: Dict[str, List[ScalePoint]] = {}
    excluded: List[FrameRef] = []
    if read_masks:
        for clip, (points, dropped) in zip(manifest.clips,
                                           ordered_map(lambda c: _clip_scale(manifest, c), manifest.clips, threads)):
            scale_series[clip.clip_id] = points
            excluded.extend(dropped)

    stats = DatasetStats(
        clip_count=len(manifest.clips),
        frame_count=frame_count,
        annotated_frame_count=int(df["annotated_frames"].sum()),
        split_counts=_group_counts(df, "split", [e.value for e in Split]),
        scenario_counts=_group_counts(df, "scenario", [e.value for e in Scenario]),
        category_counts=_group_counts(df, "category", [e.value for e in Category]),
        motion_counts=motion,
        scenario_category={s: {c: int(table.loc[s, c]) for c in categories} for s in scenarios},
        mean_frames_per_clip=frame_count / len(manifest.clips) if manifest.clips else 0.0,
        scale_series=scale_series,
        scale_histogram=scale_histogram([p.ratio for pts in scale_series.values() for p in pts]) if read_masks else {},
        excluded_frames=excluded,
    )
    logger.info(f"[Dataset] stats for '{manifest.name}': {stats.clip_count} clips, {stats.frame_count} frames")
    return stats


def dataset_summary_row(manifest: DatasetManifest, stats: DatasetStats) -> Dict[str, object]:
    """One row of a dataset comparison table: size plus which annotation levels exist."""
    frames = [f for c in manifest.clips for f in c.frames]
    splits = {c.split for c in manifest.clips if c.split is not None}
    return {
        "dataset": manifest.name,
        "clips": stats.clip_count,
        "frames": stats.frame_count,
        "annotated_frames": stats.annotated_frame_count,
        "object_types": len({c.category for c in manifest.clips if c.category is not None}),
        "bbox": any(f.annotated for f in frames),
        "pixel": any(f.gt is not None for f in frames),
        "instance": any(f.instances is not None for f in frames),
        "category": bool(manifest.clips) and all(c.category is not None for c in manifest.clips),
        "split": splits == set(Split),
    }


# ============== Bounding Boxes ==============

def _frame_boxes(manifest: DatasetManifest, clip: ClipRecord, entry: FrameEntry,
                 split_components: bool = False) -> FrameBoxes:
    result = FrameBoxes(clip_id=clip.clip_id, frame=entry.index)
    if entry.instances is not None:
        labels = load_instances(manifest.resolve(entry.instances))
        masks = [(k, instance_mask(labels, k)) for k in range(1, labels.instance_count + 1)]
    elif split_components:
        mask = load_mask(manifest.resolve(entry.gt))
        labels = connected_components(mask)
        masks = [(k, instance_mask(labels, k)) for k in range(1, labels.instance_count + 1)] or [(1, mask)]
    else:
        masks = [(1, load_mask(manifest.resolve(entry.gt)))]
    for k, mask in masks:
        if mask.area == 0:
            result.skipped_instances.append(k)
            continue
        box = bbox_of(mask)
        result.boxes.append(BoxRecord(instance=k, x_min=box.x_min, y_min=box.y_min, x_max=box.x_max, y_max=box.y_max))
    if result.skipped_instances:
        logger.warning(f"[Dataset] {clip.clip_id} frame {entry.index}: empty instances {result.skipped_instances} skipped")
    return result


def export_bboxes(manifest: DatasetManifest, threads: int = 1, split_components: bool = False) -> List[FrameBoxes]:
    """
    One inclusive box per instance per annotated frame, ordered by clip, frame, instance.
    Frames without an instance map count as one instance, or one per 8-connected
    component with split_components.
    """
    jobs = [(clip, entry) for clip in manifest.clips for entry in clip.annotated_frames]
    return ordered_map(lambda job: _frame_boxes(manifest, *job, split_components), jobs, threads)
