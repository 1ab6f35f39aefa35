"""
Synthetic datasets for vcod-bench
Deterministic stand-ins used by tests, demos and the make-synthetic command:
a small fully annotated dataset with known counts, a moving-square clip with
its affine pose fixture, and a manifest shaped like the published 162-clip benchmark.
"""
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from PIL import Image

from src.dataset import frame_mask, scan_directory, write_manifest
from src.mask_core import BinaryMask, GrayFrame, InstanceMask, save_gray, save_labels, save_mask
from src.models import (
    Category,
    ClipRecord,
    DatasetManifest,
    FrameEntry,
    Motion,
    Scenario,
    Split,
)
from src.propagators import FrameSource
from src.utils import atomic_write_bytes, atomic_write_text, ensure_dir_exists, setup_logger

logger = setup_logger()

PathLike = Union[str, Path]

WIDTH, HEIGHT = 32, 24
FPS = 2


@dataclass(frozen=True)
class SyntheticClip:
    clip_id: str
    scenario: Scenario
    category: Category
    motion: Motion
    split: Split
    n_frames: int
    side: int
    instances: int = 1


SYNTHETIC_CLIPS: Tuple[SyntheticClip, ...] = (
    SyntheticClip("aquatic_fish", Scenario.AQUATIC, Category.ANIMAL, Motion.OBJECT, Split.TRAIN, 6, 4),
    SyntheticClip("desert_walker", Scenario.DESERT, Category.HUMAN, Motion.CAMERA, Split.TRAIN, 8, 6),
    SyntheticClip("field_deer", Scenario.FIELD, Category.ANIMAL, Motion.SIMULTANEOUS, Split.TRAIN, 6, 8, 2),
    SyntheticClip("jungle_jeep", Scenario.JUNGLE, Category.VEHICLE, Motion.SIMULTANEOUS, Split.TEST, 6, 6),
    SyntheticClip("medical_polyp", Scenario.MEDICAL, Category.MEDICAL, Motion.OBJECT, Split.TEST, 10, 4),
    SyntheticClip("snow_hare", Scenario.SNOWFIELD, Category.ANIMAL, Motion.CAMERA, Split.TEST, 8, 8),
)


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    expected: Dict[str, object] = field(default_factory=dict)


def _square(top: int, left: int, side: int, height: int = HEIGHT, width: int = WIDTH) -> np.ndarray:
    bits = np.zeros((height, width), dtype=bool)
    bits[top:top + side, left:left + side] = True
    return bits


def _frame_image(rng: np.random.Generator, mask: np.ndarray) -> bytes:
    """Textured RGB frame where the object is a slightly shifted copy of the background."""
    base = rng.integers(60, 180, size=(mask.shape[0], mask.shape[1], 3), dtype=np.uint8)
    base[mask] = np.clip(base[mask].astype(np.int16) + 12, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(base).save(buf, format="JPEG", quality=95)
    return buf.getvalue()


def _object_positions(spec: SyntheticClip, k: int) -> List[Tuple[int, int]]:
    positions = [(2, 1 + k)]
    if spec.instances > 1:
        positions.append((HEIGHT - spec.side - 2, WIDTH - spec.side - 1 - k))
    return positions


def write_synthetic_dataset(root: PathLike, seed: int = 0, layout: str = "msvcod",
                            gt_every: int = 1) -> SyntheticDataset:
    """
    Write the synthetic mini-dataset and its manifest under root.

    msvcod layout: root/<Train|Test>/<clip>/Frame|GT[|Instances]
    moca-mask layout: root/<clip>/Frame|GT, GT on every gt_every-th frame, no split folders
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for spec in SYNTHETIC_CLIPS:
        clip_dir = root / spec.split.value / spec.clip_id if layout == "msvcod" else root / spec.clip_id
        for k in range(spec.n_frames):
            bits = np.zeros((HEIGHT, WIDTH), dtype=bool)
            labels = np.zeros((HEIGHT, WIDTH), dtype=np.int32)
            for label, (top, left) in enumerate(_object_positions(spec, k), start=1):
                square = _square(top, left, spec.side)
                bits |= square
                labels[square] = label
            name = f"{k:05d}"
            atomic_write_bytes(clip_dir / "Frame" / f"{name}.jpg", _frame_image(rng, bits))
            if k % gt_every == 0:
                save_mask(clip_dir / "GT" / f"{name}.png", BinaryMask(bits))
                if spec.instances > 1 and layout == "msvcod":
                    save_labels(clip_dir / "Instances" / f"{name}.png", InstanceMask(labels, spec.instances))

    manifest = scan_directory(root, layout=layout, name="synthetic-vcod")
    by_id = {s.clip_id: s for s in SYNTHETIC_CLIPS}
    clips = []
    for clip in manifest.clips:
        spec = by_id[clip.clip_id]
        clips.append(clip.model_copy(update={
            "scenario": spec.scenario,
            "category": spec.category,
            "motion": spec.motion,
            "split": spec.split,
            "fps": FPS,
        }))
    manifest = DatasetManifest(name=manifest.name, root=manifest.root, clips=clips)
    write_manifest(manifest)
    logger.info(f"[Synthetic] wrote {len(clips)} clips to {root}")
    return SyntheticDataset(manifest=manifest, expected=synthetic_expectations(gt_every))


def synthetic_expectations(gt_every: int = 1) -> Dict[str, object]:
    """Counts the generator guarantees, derived from the clip table alone."""
    area = float(WIDTH * HEIGHT)
    frames = {s.clip_id: s.n_frames for s in SYNTHETIC_CLIPS}
    motion = {m.value: {"train": 0, "test": 0, "total": 0} for m in Motion}
    for s in SYNTHETIC_CLIPS:
        motion[s.motion.value][s.split.value.lower()] += 1
        motion[s.motion.value]["total"] += 1
    return {
        "clip_count": len(SYNTHETIC_CLIPS),
        "frame_count": sum(frames.values()),
        "annotated_frame_count": sum(-(-n // gt_every) for n in frames.values()),
        "split_clips": {sp.value: sum(1 for s in SYNTHETIC_CLIPS if s.split == sp) for sp in Split},
        "motion": motion,
        "ratio": {s.clip_id: s.instances * s.side * s.side / area for s in SYNTHETIC_CLIPS},
    }


def write_predictions(manifest: DatasetManifest, pred_root: PathLike, mode: str = "perfect",
                      seed: int = 0) -> Path:
    """
    Prediction maps at <pred_root>/<clip>/<gt stem>.png.
    perfect: the ground truth itself; noisy: ground truth blended with seeded noise;
    empty: all-black maps.
    """
    pred_root = Path(pred_root)
    rng = np.random.default_rng(seed)
    for clip in manifest.clips:
        for entry in clip.annotated_frames:
            gt = frame_mask(manifest, entry).bits.astype(np.float64)
            if mode == "perfect":
                values = gt
            elif mode == "noisy":
                values = np.clip(0.7 * gt + 0.3 * rng.random(gt.shape), 0.0, 1.0)
            elif mode == "empty":
                values = np.zeros_like(gt)
            else:
                raise ValueError(f"unknown prediction mode '{mode}'")
            stem = Path(entry.gt or entry.instances).stem
            save_gray(pred_root / clip.clip_id / f"{stem}.png", GrayFrame(values))
    return pred_root


# ============== Moving Square ==============

@dataclass
class MovingSquare:
    clip: ClipRecord
    frames: List[FrameSource]
    masks: Dict[int, BinaryMask]
    fixture: Path


def write_moving_square(root: PathLike, n_frames: int = 13, width: int = 48, height: int = 32,
                        side: int = 6, step: int = 1, start: Tuple[int, int] = (4, 4),
                        fps: int = 6, seed: int = 0) -> MovingSquare:
    """
    One clip whose object is a side x side square translating `step` pixels right per
    frame, plus a transform fixture with the matching absolute poses.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    top, left = start
    if left + (n_frames - 1) * step + side > width or top + side > height:
        raise ValueError("square leaves the frame")
    ensure_dir_exists(root)
    frames, masks, entries = [], {}, []
    poses = {}
    for k in range(n_frames):
        bits = _square(top, left + k * step, side, height, width)
        image = root / "Frame" / f"{k:05d}.jpg"
        atomic_write_bytes(image, _frame_image(rng, bits))
        save_mask(root / "GT" / f"{k:05d}.png", BinaryMask(bits))
        frames.append(FrameSource(index=k, image=image))
        masks[k] = BinaryMask(bits)
        entries.append(FrameEntry(index=k, image=f"Frame/{k:05d}.jpg", gt=f"GT/{k:05d}.png"))
        poses[str(k)] = [[1.0, 0.0, float(k * step)], [0.0, 1.0, 0.0]]
    fixture = atomic_write_text(root / "poses.json", json.dumps({"poses": poses}, indent=2) + "\n")
    clip = ClipRecord(clip_id="moving_square", scenario=Scenario.DESERT, category=Category.ANIMAL,
                      motion=Motion.OBJECT, split=Split.TEST, fps=fps, width=width, height=height,
                      frames=entries)
    return MovingSquare(clip=clip, frames=frames, masks=masks, fixture=fixture)


# ============== Reference Manifest ==============

REFERENCE_SPLITS = {Split.TRAIN: 121, Split.TEST: 41}
REFERENCE_MOTION = {
    Split.TRAIN: {Motion.OBJECT: 53, Motion.CAMERA: 22, Motion.SIMULTANEOUS: 46},
    Split.TEST: {Motion.OBJECT: 20, Motion.CAMERA: 7, Motion.SIMULTANEOUS: 14},
}
REFERENCE_BASE_FRAMES = 58
REFERENCE_LONG_CLIPS = 90


def reference_manifest(name: str = "MSVCOD", fps: int = 6, width: int = 1280,
                       height: int = 720) -> DatasetManifest:
    """
    Metadata-only manifest with the published shape: 162 clips, 9486 densely annotated
    frames, 121/41 split and the per-split motion-pattern counts. Files are not on disk.
    """
    scenarios = [s for s in Scenario if s != Scenario.MEDICAL]
    categories = [c for c in Category if c != Category.MEDICAL]
    clips: List[ClipRecord] = []
    n = 0
    for split, motions in REFERENCE_MOTION.items():
        for motion, count in motions.items():
            for _ in range(count):
                clip_id = f"{split.value.lower()}_{n:03d}"
                if n % 9 == 8:
                    scenario, category = Scenario.MEDICAL, Category.MEDICAL
                else:
                    scenario, category = scenarios[n % len(scenarios)], categories[n % len(categories)]
                n_frames = REFERENCE_BASE_FRAMES + (1 if n < REFERENCE_LONG_CLIPS else 0)
                frames = [
                    FrameEntry(index=k,
                               image=f"{split.value}/{clip_id}/Frame/{k:05d}.jpg",
                               gt=f"{split.value}/{clip_id}/GT/{k:05d}.png")
                    for k in range(n_frames)
                ]
                clips.append(ClipRecord(clip_id=clip_id, scenario=scenario, category=category, motion=motion,
                                        split=split, fps=fps, width=width, height=height, frames=frames))
                n += 1
    return DatasetManifest(name=name, clips=clips)


def write_reference_manifest(path: PathLike, name: str = "MSVCOD") -> Path:
    return write_manifest(reference_manifest(name), path)
