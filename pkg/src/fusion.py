"""
Fusion module for the batch side of semi-automatic video annotation.

Flow for one clip:
    1. pick a reference frame and propagate it forward (initial pseudo-labels)
    2. annotators correct anchor frames at a fixed cadence
    3. every span between two anchors is filled from both ends; the forward and
       backward masks are fused into four candidates (fwd, bwd, and, or)
    4. the top-ranked candidate is chosen, low-consistency frames are flagged and
       everything is exported as polygons for the next correction round
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import CorrectionError, DimensionMismatchError, ManifestError, PropagatorError, RasterError
from src.mask_core import BinaryMask, check_same_shape, load_mask, save_mask
from src.metrics import iou
from src.models import (
    CandidateTag,
    ClipRecord,
    CorrectionFile,
    CorrectionRound,
    DatasetManifest,
    Direction,
    FrameChoice,
    PipelineOptions,
)
from src.polygons import mask_to_polygons
from src.propagators import FrameSource, Propagator
from src.utils import atomic_write_text, ordered_map, setup_logger

logger = setup_logger()

PathLike = Union[str, Path]

TAG_ORDER = (CandidateTag.AND, CandidateTag.FWD, CandidateTag.BWD, CandidateTag.OR)
LOW_CONSISTENCY_ORDER = (CandidateTag.OR, CandidateTag.FWD, CandidateTag.BWD, CandidateTag.AND)


# ============== Candidates ==============

@dataclass(frozen=True, eq=False)
class CandidateSet:
    frame: int
    fwd: BinaryMask
    bwd: BinaryMask
    and_mask: BinaryMask
    or_mask: BinaryMask
    consistency: float

    def get(self, tag: Union[CandidateTag, str]) -> BinaryMask:
        tag = CandidateTag(tag)
        return {
            CandidateTag.AND: self.and_mask,
            CandidateTag.FWD: self.fwd,
            CandidateTag.BWD: self.bwd,
            CandidateTag.OR: self.or_mask,
        }[tag]


def fuse_bidirectional(fwd: BinaryMask, bwd: BinaryMask, frame: int = -1) -> CandidateSet:
    check_same_shape(fwd, bwd, "forward/backward mask")
    return CandidateSet(
        frame=frame,
        fwd=fwd,
        bwd=bwd,
        and_mask=BinaryMask(fwd.bits & bwd.bits),
        or_mask=BinaryMask(fwd.bits | bwd.bits),
        consistency=iou(fwd, bwd),
    )


def rank_candidates(cs: CandidateSet, neighbors: Optional[Sequence[BinaryMask]] = None) -> List[CandidateTag]:
    """
    With neighbours: mean IoU against them, descending, ties in (and, fwd, bwd, or) order.
    Without: (and, fwd, bwd, or) if consistency >= 0.5 else (or, fwd, bwd, and).
    """
    if neighbors:
        scores = {tag: float(np.mean([iou(cs.get(tag), n) for n in neighbors])) for tag in TAG_ORDER}
        return sorted(TAG_ORDER, key=lambda tag: (-scores[tag], TAG_ORDER.index(tag)))
    return list(TAG_ORDER if cs.consistency >= 0.5 else LOW_CONSISTENCY_ORDER)


# ============== Propagation ==============

@dataclass
class Propagation:
    masks: Dict[int, BinaryMask]
    failed: List[int] = field(default_factory=list)


def select_reference_frame(presence: Sequence[bool]) -> int:
    """First position where the object is present; 0 when it is in the first frame."""
    for position, present in enumerate(presence):
        if present:
            return position
    raise ValueError("the object is absent from every frame; no reference frame")


def propagate(prop: Propagator, frames: Sequence[FrameSource], ref_index: int, ref_mask: BinaryMask,
              direction: Direction, until: Optional[int] = None) -> Propagation:
    """
    Masks for frames strictly after (forward) or before (backward) the reference,
    stopping before `until` when given. The reference keeps its own mask. A failing
    propagator yields empty masks for its targets, which are reported as failed.
    """
    direction = Direction(direction)
    by_index = {f.index: f for f in frames}
    if ref_index not in by_index:
        raise ValueError(f"reference frame {ref_index} is not in the clip")
    if direction == Direction.FORWARD:
        targets = [f for f in frames if f.index > ref_index and (until is None or f.index < until)]
    else:
        targets = [f for f in reversed(frames) if f.index < ref_index and (until is None or f.index > until)]

    result = Propagation(masks={ref_index: ref_mask})
    empty = BinaryMask(np.zeros(ref_mask.shape, dtype=bool))
    if not targets:
        return result
    try:
        produced = prop.propagate(by_index[ref_index], ref_mask, targets, direction)
        if len(produced) != len(targets):
            raise PropagatorError(f"propagator returned {len(produced)} masks for {len(targets)} frames")
    except (PropagatorError, RasterError) as e:
        logger.warning(f"[Fusion] {prop.name} failed {direction.value} from frame {ref_index}: {e}")
        for t in targets:
            result.masks[t.index] = empty
            result.failed.append(t.index)
        return result

    for target, mask in zip(targets, produced):
        if mask.shape != ref_mask.shape:
            logger.warning(f"[Fusion] frame {target.index}: propagated mask {mask.shape} != {ref_mask.shape}")
            result.masks[target.index] = empty
            result.failed.append(target.index)
        else:
            result.masks[target.index] = mask
    result.failed.sort()
    return result


def initial_pseudo_labels(prop: Propagator, frames: Sequence[FrameSource], presence: Sequence[bool],
                          ref_mask: BinaryMask) -> Propagation:
    """Reference selection plus forward propagation; frames before the reference are empty."""
    if len(presence) != len(frames):
        raise ValueError(f"presence has {len(presence)} entries for {len(frames)} frames")
    position = select_reference_frame(presence)
    ref_index = frames[position].index
    result = propagate(prop, frames, ref_index, ref_mask, Direction.FORWARD)
    empty = BinaryMask(np.zeros(ref_mask.shape, dtype=bool))
    for f in frames[:position]:
        result.masks[f.index] = empty
    result.masks = dict(sorted(result.masks.items()))
    logger.info(f"[Fusion] reference frame {ref_index}, {len(result.masks)} pseudo-labels, {len(result.failed)} failed")
    return result


def anchor_indices(frame_indices: Sequence[int], stride: int) -> List[int]:
    """Every stride-th frame starting at the first, plus the final frame."""
    if stride < 1:
        raise ValueError(f"anchor stride must be >= 1, got {stride}")
    indices = list(frame_indices)
    if not indices:
        return []
    anchors = indices[::stride]
    if anchors[-1] != indices[-1]:
        anchors.append(indices[-1])
    return anchors


# ============== Polygon Export ==============

def polygon_document(clip_id: str, frame: int, mask: BinaryMask, tolerance: float = 0.0) -> dict:
    polygons = mask_to_polygons(mask, tolerance)
    instances = []
    if polygons:
        instances.append({
            "id": 1,
            "polygons": [p.as_list() for p in polygons if not p.is_hole],
            "holes": [p.as_list() for p in polygons if p.is_hole],
        })
    return {"clip_id": clip_id, "frame": frame, "instances": instances}


# ============== Pipeline ==============

@dataclass
class PipelineResult:
    clip_id: str
    chosen: Dict[int, BinaryMask]
    candidates: Dict[int, CandidateSet]
    round: CorrectionRound
    polygons: Dict[int, dict]
    tolerance: float = 0.0

    @property
    def flagged(self) -> List[int]:
        return list(self.round.flagged)


def clip_sources(manifest: DatasetManifest, clip: ClipRecord) -> List[FrameSource]:
    return [FrameSource(index=f.index, image=manifest.resolve(f.image)) for f in clip.frames]


class AnnotationPipeline:
    """
    Fills every span between consecutive anchors by bidirectional propagation.
    Spans run concurrently when the propagator is thread safe; results are
    assembled in frame order either way.
    """

    def __init__(self, propagator: Propagator, options: Optional[PipelineOptions] = None):
        self.propagator = propagator
        self.options = options or PipelineOptions()

    def _stride(self, clip: ClipRecord) -> int:
        stride = self.options.anchor_stride or clip.fps
        if stride is None:
            raise ManifestError(f"clip '{clip.clip_id}' has no fps; pass an explicit anchor stride")
        return stride

    def _fill_span(self, frames: Sequence[FrameSource], left: int, right: int,
                   anchors: Dict[int, BinaryMask]) -> Tuple[Dict[int, CandidateSet], List[int]]:
        fwd = propagate(self.propagator, frames, left, anchors[left], Direction.FORWARD, until=right)
        bwd = propagate(self.propagator, frames, right, anchors[right], Direction.BACKWARD, until=left)
        failed = sorted(set(fwd.failed) | set(bwd.failed))
        candidates = {}
        for f in frames:
            if left < f.index < right:
                candidates[f.index] = fuse_bidirectional(fwd.masks[f.index], bwd.masks[f.index], f.index)
        return candidates, failed

    def run(self, clip: ClipRecord, frames: Sequence[FrameSource], anchors: Dict[int, BinaryMask]) -> PipelineResult:
        opts = self.options
        indices = [f.index for f in frames]
        anchor_frames = anchor_indices(indices, self._stride(clip))
        shape = next(iter(anchors.values())).shape if anchors else (clip.height or 1, clip.width or 1)
        for index, mask in anchors.items():
            if mask.shape != shape:
                raise DimensionMismatchError(shape, mask.shape, f"anchor mask {index}")
        empty = BinaryMask(np.zeros(shape, dtype=bool))

        spans = [(a, b) for a, b in zip(anchor_frames, anchor_frames[1:])]
        runnable = [(a, b) for a, b in spans if a in anchors and b in anchors]
        threads = opts.threads if self.propagator.thread_safe else 1
        filled = ordered_map(lambda span: self._fill_span(frames, span[0], span[1], anchors), runnable, threads)
        span_results = dict(zip(runnable, filled))

        chosen: Dict[int, BinaryMask] = {}
        candidates: Dict[int, CandidateSet] = {}
        choices: Dict[int, FrameChoice] = {}
        flagged = set()
        notes = []

        for index in anchor_frames:
            if index in anchors:
                chosen[index] = anchors[index]
                choices[index] = FrameChoice(frame=index, choice="anchor")
            else:
                chosen[index] = empty
                choices[index] = FrameChoice(frame=index, choice="none")
                flagged.add(index)
                notes.append(f"missing anchor mask for frame {index}")

        for a, b in spans:
            inner = [i for i in indices if a < i < b]
            if (a, b) not in span_results:
                logger.warning(f"[Fusion] {clip.clip_id}: span {a}-{b} skipped, missing anchor")
                notes.append(f"span {a}-{b} skipped: missing anchor")
                for i in inner:
                    chosen[i] = empty
                    choices[i] = FrameChoice(frame=i, choice="none")
                    flagged.add(i)
                continue
            span_candidates, failed = span_results[(a, b)]
            neighbors = [anchors[a], anchors[b]] if opts.rank_with_anchors else None
            for i in inner:
                cs = span_candidates[i]
                top = rank_candidates(cs, neighbors)[0]
                candidates[i] = cs
                chosen[i] = cs.get(top)
                choices[i] = FrameChoice(frame=i, choice=top.value, consistency=cs.consistency)
                if cs.consistency < opts.flag_threshold or i in failed:
                    flagged.add(i)
            if failed:
                notes.append(f"span {a}-{b}: propagation failed on frames {failed}")

        chosen = dict(sorted(chosen.items()))
        correction = CorrectionRound(
            clip_id=clip.clip_id,
            round=1,
            choices=[choices[i] for i in sorted(choices)],
            flagged=sorted(flagged),
            notes=notes,
        )
        polygons = {i: polygon_document(clip.clip_id, i, m, opts.polygon_tolerance) for i, m in chosen.items()}
        logger.info(f"[Fusion] {clip.clip_id}: {len(spans)} spans, {len(anchor_frames)} anchors, "
                    f"{len(correction.flagged)} frames flagged")
        return PipelineResult(clip.clip_id, chosen, candidates, correction, polygons, opts.polygon_tolerance)


def run_pipeline(clip: ClipRecord, prop: Propagator, anchors: Dict[int, BinaryMask],
                 frames: Sequence[FrameSource], options: Optional[PipelineOptions] = None) -> PipelineResult:
    return AnnotationPipeline(prop, options).run(clip, frames, anchors)


# ============== Correction Rounds ==============

def load_corrections(path: PathLike) -> CorrectionFile:
    path = Path(path)
    try:
        return CorrectionFile.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CorrectionError(f"correction file unreadable: {path}") from e
    except ValueError as e:
        raise CorrectionError(f"invalid correction file {path}: {e}") from e


def apply_corrections(result: PipelineResult, corrections: CorrectionFile,
                      base_dir: Optional[PathLike] = None) -> PipelineResult:
    """
    Replace chosen masks with another candidate or an external mask. Corrected frames
    leave the flagged set; nothing is added to it.
    """
    previous = result.round
    expected_round = previous.round + 1
    if corrections.round is not None and corrections.round != expected_round:
        raise CorrectionError(f"correction file is for round {corrections.round}, expected {expected_round}")
    if corrections.clip_id is not None and corrections.clip_id != result.clip_id:
        raise CorrectionError(f"correction file is for clip '{corrections.clip_id}', not '{result.clip_id}'")

    base = Path(base_dir) if base_dir is not None else Path(".")
    chosen = dict(result.chosen)
    choices = {c.frame: c for c in previous.choices}
    flagged = set(previous.flagged)
    notes = []
    for entry in corrections.frames:
        if entry.frame not in chosen:
            raise CorrectionError(f"frame {entry.frame} is not part of clip '{result.clip_id}'")
        if entry.choice == "external":
            path = Path(entry.external_path)
            path = path if path.is_absolute() else base / path
            try:
                mask = load_mask(path)
                check_same_shape(chosen[entry.frame], mask, f"external mask for frame {entry.frame}")
            except RasterError as e:
                raise CorrectionError(str(e)) from e
            choices[entry.frame] = FrameChoice(frame=entry.frame, choice="external", external_path=entry.external_path)
        else:
            if entry.frame not in result.candidates:
                raise CorrectionError(f"frame {entry.frame} has no fused candidates to choose from")
            cs = result.candidates[entry.frame]
            mask = cs.get(entry.choice)
            choices[entry.frame] = FrameChoice(frame=entry.frame, choice=entry.choice, consistency=cs.consistency)
        chosen[entry.frame] = mask
        flagged.discard(entry.frame)
        notes.append(f"frame {entry.frame}: {entry.choice}")

    polygons = dict(result.polygons)
    for entry in corrections.frames:
        polygons[entry.frame] = polygon_document(result.clip_id, entry.frame, chosen[entry.frame], result.tolerance)

    correction = CorrectionRound(
        clip_id=result.clip_id,
        round=expected_round,
        choices=[choices[i] for i in sorted(choices)],
        flagged=sorted(flagged),
        notes=notes,
    )
    logger.info(f"[Fusion] {result.clip_id} round {expected_round}: {len(corrections.frames)} corrections, "
                f"{len(correction.flagged)} still flagged")
    return replace(result, chosen=chosen, round=correction, polygons=polygons)


def write_pipeline_outputs(result: PipelineResult, out_dir: PathLike) -> Path:
    """
    out_dir/masks/<frame>.png, out_dir/polygons/<frame>.json and
    out_dir/round_<n>.json with the correction-round report.
    """
    out_dir = Path(out_dir)
    for index, mask in result.chosen.items():
        save_mask(out_dir / "masks" / f"{index:05d}.png", mask)
        atomic_write_text(out_dir / "polygons" / f"{index:05d}.json",
                          json.dumps(result.polygons[index], indent=2, sort_keys=True) + "\n")
    report = result.round.model_dump(mode="json")
    return atomic_write_text(out_dir / f"round_{result.round.round}.json",
                             json.dumps(report, indent=2, sort_keys=True) + "\n")


def pseudo_labels_from_masks(prop: Propagator, frames: Sequence[FrameSource],
                             masks: Dict[int, BinaryMask]) -> Tuple[int, Propagation]:
    """Initial pseudo-labels seeded from known masks; the object counts as present where a mask is non-empty."""
    presence = [f.index in masks and masks[f.index].area > 0 for f in frames]
    reference = frames[select_reference_frame(presence)].index
    return reference, initial_pseudo_labels(prop, frames, presence, masks[reference])


def write_initial_outputs(clip_id: str, labels: Propagation, reference: int, out_dir: PathLike,
                          tolerance: float = 0.0) -> Path:
    out_dir = Path(out_dir)
    for index, mask in labels.masks.items():
        save_mask(out_dir / "masks" / f"{index:05d}.png", mask)
        doc = polygon_document(clip_id, index, mask, tolerance)
        atomic_write_text(out_dir / "polygons" / f"{index:05d}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    report = {"clip_id": clip_id, "reference": reference, "frames": len(labels.masks), "failed": labels.failed}
    return atomic_write_text(out_dir / "initial.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
