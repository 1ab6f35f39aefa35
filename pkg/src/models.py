"""
Shared Models - Pydantic records for configuration, dataset manifests and reports
"""
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import DEFAULT_BINARIZE, FLAG_THRESHOLD, WF_DECAY, WF_SIGMA

MACHINE_EPS = float(np.finfo(np.float64).eps)

METRIC_FIELDS = ("s_alpha", "f_beta_w", "mae", "dice", "iou")
METRIC_COLUMNS = {
    "s_alpha": "S_alpha",
    "f_beta_w": "Fw_beta",
    "mae": "MAE",
    "dice": "mDice",
    "iou": "mIoU",
}

Grouping = Literal["all", "scenario", "category", "motion", "split"]
LayoutProfile = Literal["msvcod", "moca-mask"]


# ============== Metric Models ==============
class BinarizePolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["fixed", "adaptive"] = "fixed"
    threshold: float = Field(0.5, ge=0.0, le=1.0)

    @classmethod
    def parse(cls, text: str) -> "BinarizePolicy":
        """Parse 'fixed:<t>' or 'adaptive'."""
        value = text.strip().lower()
        if value == "adaptive":
            return cls(kind="adaptive")
        if value.startswith("fixed:"):
            try:
                threshold = float(value.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad binarize threshold in '{text}'")
            return cls(kind="fixed", threshold=threshold)
        raise ValueError(f"unknown binarize policy '{text}' (expected fixed:<t> or adaptive)")

    def __str__(self):
        return "adaptive" if self.kind == "adaptive" else f"fixed:{self.threshold:g}"


class MetricConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.5, ge=0.0, le=1.0)
    beta_sq: float = Field(1.0, gt=0.0)
    wf_sigma: float = Field(WF_SIGMA, gt=0.0)
    wf_decay: float = Field(WF_DECAY, gt=0.0)
    epsilon: float = Field(MACHINE_EPS, gt=0.0)
    binarize: BinarizePolicy = Field(default_factory=lambda: BinarizePolicy.parse(DEFAULT_BINARIZE))


class FrameScores(BaseModel):
    s_alpha: float = Field(ge=0.0, le=1.0)
    f_beta_w: float = Field(ge=0.0, le=1.0)
    mae: float = Field(ge=0.0, le=1.0)
    dice: float = Field(ge=0.0, le=1.0)
    iou: float = Field(ge=0.0, le=1.0)
    empty_gt: bool = False

    def as_tuple(self):
        return tuple(getattr(self, name) for name in METRIC_FIELDS)


# ============== Dataset Models ==============
class Scenario(str, Enum):
    AQUATIC = "Aquatic"
    ARTIFICIAL = "Artificial"
    DESERT = "Desert"
    FIELD = "Field"
    JUNGLE = "Jungle"
    MEDICAL = "Medical"
    SNOWFIELD = "Snowfield"


class Category(str, Enum):
    ANIMAL = "Animal"
    HUMAN = "Human"
    MEDICAL = "Medical"
    VEHICLE = "Vehicle"


class Motion(str, Enum):
    OBJECT = "ObjectMotion"
    CAMERA = "CameraMotion"
    SIMULTANEOUS = "SimultaneousMotion"


class Split(str, Enum):
    TRAIN = "Train"
    TEST = "Test"


class FrameEntry(BaseModel):
    index: int = Field(ge=0)
    image: str
    gt: Optional[str] = None
    instances: Optional[str] = None

    @property
    def annotated(self) -> bool:
        return self.gt is not None or self.instances is not None


class ClipRecord(BaseModel):
    clip_id: str = Field(min_length=1)
    scenario: Optional[Scenario] = None
    category: Optional[Category] = None
    motion: Optional[Motion] = None
    split: Optional[Split] = None
    fps: Optional[int] = Field(None, ge=1)
    width: Optional[int] = Field(None, ge=1)
    height: Optional[int] = Field(None, ge=1)
    frames: List[FrameEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _frames_increasing(self):
        indices = [f.index for f in self.frames]
        for prev, cur in zip(indices, indices[1:]):
            if cur <= prev:
                raise ValueError(
                    f"clip '{self.clip_id}': frame indices must be strictly increasing ({prev} then {cur})"
                )
        return self

    @property
    def annotated_frames(self) -> List[FrameEntry]:
        return [f for f in self.frames if f.annotated]

    def frame(self, index: int) -> FrameEntry:
        for entry in self.frames:
            if entry.index == index:
                return entry
        raise KeyError(f"clip '{self.clip_id}' has no frame {index}")


class DatasetManifest(BaseModel):
    name: str
    version: int = 1
    root: Path = Field(default=Path("."), exclude=True)
    clips: List[ClipRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_and_disjoint(self):
        seen = set()
        for clip in self.clips:
            if clip.clip_id in seen:
                raise ValueError(f"duplicate clip_id '{clip.clip_id}'")
            seen.add(clip.clip_id)

        owners: Dict[str, ClipRecord] = {}
        for clip in self.clips:
            if clip.split is None:
                continue
            for entry in clip.frames:
                other = owners.setdefault(entry.image, clip)
                if other.split is not None and other.split != clip.split:
                    raise ValueError(
                        f"split overlap: '{entry.image}' is used by {other.split.value} clip "
                        f"'{other.clip_id}' and {clip.split.value} clip '{clip.clip_id}'"
                    )
        return self

    def clip(self, clip_id: str) -> ClipRecord:
        for clip in self.clips:
            if clip.clip_id == clip_id:
                return clip
        raise KeyError(f"unknown clip '{clip_id}'")

    def resolve(self, relative: str) -> Path:
        return self.root / relative


class GroupCount(BaseModel):
    clips: int = 0
    frames: int = 0
    annotated_frames: int = 0


class MotionCount(BaseModel):
    train: int = 0
    test: int = 0
    total: int = 0


class ScalePoint(BaseModel):
    frame: int
    ratio: float = Field(ge=0.0, le=1.0)


class FrameRef(BaseModel):
    clip_id: str
    frame: int
    reason: Optional[str] = None


class DatasetStats(BaseModel):
    clip_count: int
    frame_count: int
    annotated_frame_count: int
    split_counts: Dict[str, GroupCount]
    scenario_counts: Dict[str, GroupCount]
    category_counts: Dict[str, GroupCount]
    motion_counts: Dict[str, MotionCount]
    scenario_category: Dict[str, Dict[str, int]]
    mean_frames_per_clip: float
    scale_series: Dict[str, List[ScalePoint]] = Field(default_factory=dict)
    scale_histogram: Dict[str, int] = Field(default_factory=dict)
    excluded_frames: List[FrameRef] = Field(default_factory=list)


class Violation(BaseModel):
    code: str
    message: str
    clip_id: Optional[str] = None
    frame: Optional[int] = None


class ScaleSummary(BaseModel):
    frames: int
    min: float
    median: float
    max: float


class ValidationOptions(BaseModel):
    annotation_stride: Optional[int] = Field(None, ge=1)
    stride_from_fps: bool = False
    check_files: bool = True
    min_duration_s: float = 3.0
    max_duration_s: float = 40.0
    threads: int = Field(1, ge=1)


class ValidationReport(BaseModel):
    dataset: str
    violations: List[Violation] = Field(default_factory=list)
    warnings: List[Violation] = Field(default_factory=list)
    empty_annotation_frames: List[FrameRef] = Field(default_factory=list)
    split_sizes: Dict[str, int] = Field(default_factory=dict)
    coverage: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    scale: Optional[ScaleSummary] = None

    @property
    def ok(self) -> bool:
        return not self.violations


class BoxRecord(BaseModel):
    instance: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int


class FrameBoxes(BaseModel):
    clip_id: str
    frame: int
    boxes: List[BoxRecord] = Field(default_factory=list)
    skipped_instances: List[int] = Field(default_factory=list)


# ============== Report Models ==============
class EvalOptions(BaseModel):
    strict: bool = True
    frame_weighted: bool = False
    exclude_empty_gt: bool = False
    resize_predictions: bool = False
    split: Optional[Split] = Split.TEST
    threads: int = Field(1, ge=1)


class ClipEval(BaseModel):
    clip_id: str
    n_frames: int = Field(ge=1)
    scores: FrameScores
    empty_gt_frames: int = 0
    skipped_frames: List[int] = Field(default_factory=list)


class GroupReport(BaseModel):
    grouping: str
    group: str
    clips: int
    frames: int
    scores: FrameScores


class EvalResult(BaseModel):
    dataset: str
    aggregation: Literal["clip-mean", "frame-weighted"]
    clips: List[ClipEval]
    groups: List[GroupReport]
    notes: List[str] = Field(default_factory=list)


# ============== Annotation Pipeline Models ==============
class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class CandidateTag(str, Enum):
    AND = "and"
    FWD = "fwd"
    BWD = "bwd"
    OR = "or"


class FrameChoice(BaseModel):
    frame: int
    choice: Literal["anchor", "and", "fwd", "bwd", "or", "external", "none"]
    consistency: Optional[float] = None
    external_path: Optional[str] = None


class CorrectionRound(BaseModel):
    clip_id: str
    round: int = Field(ge=1)
    choices: List[FrameChoice] = Field(default_factory=list)
    flagged: List[int] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class CorrectionEntry(BaseModel):
    frame: int
    choice: Literal["and", "fwd", "bwd", "or", "external"]
    external_path: Optional[str] = None

    @model_validator(mode="after")
    def _external_needs_path(self):
        if self.choice == "external" and not self.external_path:
            raise ValueError(f"frame {self.frame}: choice 'external' needs external_path")
        return self


class CorrectionFile(BaseModel):
    clip_id: Optional[str] = None
    round: Optional[int] = None
    frames: List[CorrectionEntry] = Field(default_factory=list)


class PipelineOptions(BaseModel):
    flag_threshold: float = Field(FLAG_THRESHOLD, ge=0.0, le=1.0)
    anchor_stride: Optional[int] = Field(None, ge=1)
    polygon_tolerance: float = Field(0.0, ge=0.0)
    rank_with_anchors: bool = False
    threads: int = Field(1, ge=1)


# ============== CLI Models ==============
class RunConfig(BaseModel):
    subcommand: str
    dataset_root: Optional[Path] = None
    manifest: Optional[Path] = None
    pred_root: Optional[Path] = None
    out: Optional[Path] = None
    format: Literal["csv", "json", "md"] = "csv"
    metric: MetricConfig = Field(default_factory=MetricConfig)
    threads: int = Field(1, ge=1)
    strict: bool = True
    layout: LayoutProfile = "msvcod"

    @field_validator("dataset_root", "manifest", "pred_root", "out")
    @classmethod
    def _resolve(cls, value):
        return value.expanduser().resolve() if value is not None else None

    @model_validator(mode="after")
    def _inputs_readable(self):
        if self.manifest is not None and not self.manifest.is_file():
            raise ValueError(f"manifest not found: {self.manifest}")
        if self.dataset_root is not None and not self.dataset_root.is_dir():
            raise ValueError(f"dataset root is not a directory: {self.dataset_root}")
        if self.pred_root is not None and not self.pred_root.is_dir():
            raise ValueError(f"prediction root is not a directory: {self.pred_root}")
        return self
