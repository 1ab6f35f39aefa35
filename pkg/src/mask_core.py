"""
Raster primitives for vcod-bench
Grayscale prediction frames, binary / instance masks, image I/O and the small
geometric kernels (components, centroid, bounding boxes) shared by every module.
"""
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from src.config import GT_THRESHOLD
from src.errors import DimensionMismatchError, EmptyMaskError, RasterError
from src.models import BinarizePolicy
from src.utils import atomic_write_bytes, setup_logger

logger = setup_logger()

EPS = float(np.finfo(np.float64).eps)

PathLike = Union[str, Path]


# ============== Raster Types ==============

def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True, order="C")
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class GrayFrame:
    """Normalized grayscale map, values in [0, 1], shape (height, width)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise RasterError(f"GrayFrame needs a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise RasterError("GrayFrame values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise RasterError(f"BinaryMask needs a 2-D array, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool)))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    def invert(self) -> "BinaryMask":
        return BinaryMask(~self.bits)

    def as_gray(self) -> GrayFrame:
        return GrayFrame(self.bits.astype(np.float64))


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Label raster: 0 = background, k = instance k (labels contiguous from 1)."""
    labels: np.ndarray
    instance_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise RasterError(f"InstanceMask needs a 2-D array, got shape {labels.shape}")
        if labels.size and labels.min() < 0:
            raise RasterError("instance labels must be non-negative")
        labels = labels.astype(np.int32)
        present = np.unique(labels[labels > 0])
        if present.size and (present.max() > self.instance_count
                             or not np.array_equal(present, np.arange(1, present.size + 1))):
            raise RasterError(
                f"instance labels must be contiguous within 1..{self.instance_count}, got {present.tolist()}"
            )
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box."""
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise RasterError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def check_same_shape(a, b, what: str = "raster"):
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape, b.shape, what)


# ============== Image I/O ==============

def _open_luma(path: PathLike, keep_palette: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise RasterError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I;16L", "I") or (keep_palette and img.mode == "P"):
                array = np.asarray(img)
            else:
                array = np.asarray(img.convert("L"))
    except (UnidentifiedImageError, OSError) as e:
        raise RasterError(f"unsupported or corrupt image {path}: {e}") from e
    if array.ndim != 2 or array.shape[0] == 0 or array.shape[1] == 0:
        raise RasterError(f"zero-sized image: {path}")
    return array


def image_size(path: PathLike) -> Tuple[int, int]:
    """(width, height) from the image header without decoding pixels."""
    try:
        with Image.open(path) as img:
            return img.size
    except (UnidentifiedImageError, OSError) as e:
        raise RasterError(f"unreadable image {path}: {e}") from e


def load_gray(path: PathLike) -> GrayFrame:
    """Load an 8-bit (or convertible) PNG/JPEG as a GrayFrame, value = intensity / 255."""
    array = _open_luma(path)
    if array.dtype != np.uint8:
        raise RasterError(f"prediction maps must be 8-bit, got {array.dtype}: {path}")
    return GrayFrame(array.astype(np.float64) / 255.0)


def load_mask(path: PathLike, threshold: int = GT_THRESHOLD) -> BinaryMask:
    """Ground truth is foreground iff intensity >= threshold (tolerates anti-aliased exports)."""
    return BinaryMask(_open_luma(path) >= threshold)


def load_instances(path: PathLike) -> InstanceMask:
    labels = _open_luma(path, keep_palette=True).astype(np.int64)
    present = np.unique(labels[labels > 0])
    if present.size and not np.array_equal(present, np.arange(1, present.size + 1)):
        logger.warning(f"[Raster] compacting non-contiguous instance labels {present.tolist()} in {path}")
        lut = np.zeros(int(labels.max()) + 1, dtype=np.int64)
        lut[present] = np.arange(1, present.size + 1)
        labels = lut[labels]
    return InstanceMask(labels, int(present.size))


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def save_mask(path: PathLike, mask: BinaryMask) -> Path:
    return atomic_write_bytes(path, _png_bytes(mask.bits.astype(np.uint8) * 255))


def save_gray(path: PathLike, frame: GrayFrame) -> Path:
    return atomic_write_bytes(path, _png_bytes(np.round(frame.values * 255.0).astype(np.uint8)))


def save_labels(path: PathLike, instances: InstanceMask) -> Path:
    dtype = np.uint8 if instances.instance_count <= 255 else np.uint16
    return atomic_write_bytes(path, _png_bytes(instances.labels.astype(dtype)))


# ============== Operations ==============

def binarize(frame: GrayFrame, policy: BinarizePolicy) -> BinaryMask:
    """fixed: value >= t. adaptive: t = min(2 * mean, 1 - eps)."""
    if policy.kind == "adaptive":
        threshold = min(2.0 * float(frame.values.mean()), 1.0 - EPS)
    else:
        threshold = policy.threshold
    return BinaryMask(frame.values >= threshold)


def connected_components(mask: BinaryMask, connectivity: int = 8) -> InstanceMask:
    """Label components, numbered by the row-major position of their first pixel."""
    if connectivity not in (4, 8):
        raise RasterError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, count = ndimage.label(mask.bits, structure=structure)
    if count == 0:
        return InstanceMask(np.zeros(mask.shape, dtype=np.int32), 0)
    flat = labels.ravel()
    found, first = np.unique(flat, return_index=True)
    keep = found > 0
    found, first = found[keep], first[keep]
    lut = np.zeros(count + 1, dtype=np.int32)
    lut[found[np.argsort(first, kind="stable")]] = np.arange(1, found.size + 1, dtype=np.int32)
    return InstanceMask(lut[labels], int(count))


def centroid(mask: BinaryMask) -> Tuple[int, int]:
    """Round-half-up mean (row, col) of foreground pixels."""
    rows, cols = np.nonzero(mask.bits)
    n = rows.size
    if n == 0:
        raise EmptyMaskError("centroid of an empty mask")
    # exact integer round-half-up of sum / n
    row = (2 * int(rows.sum()) + n) // (2 * n)
    col = (2 * int(cols.sum()) + n) // (2 * n)
    return row, col


def bbox_of(mask: BinaryMask) -> BBox:
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def instance_mask(instances: InstanceMask, label: int) -> BinaryMask:
    return BinaryMask(instances.labels == label)


def instance_union(instances: InstanceMask) -> BinaryMask:
    return BinaryMask(instances.labels > 0)


def area_ratio(mask: BinaryMask) -> float:
    return mask.area / float(mask.width * mask.height)
