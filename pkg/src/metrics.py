"""
Metrics module for frame-level evaluation of prediction maps against ground truth.
Five scores per frame: S-measure, weighted F-measure, MAE, Dice and IoU.
"""
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from src.distance import euclidean_distance_transform, gaussian_filter_7x7
from src.mask_core import (
    BinaryMask,
    GrayFrame,
    binarize,
    centroid,
    check_same_shape,
    load_gray,
    load_mask,
)
from src.models import FrameScores, MetricConfig
from src.utils import setup_logger

logger = setup_logger()

_DEFAULT_CONFIG = MetricConfig()


def _clamp(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


# ============== Pixel Metrics ==============

def mae(pred: GrayFrame, gt: BinaryMask) -> float:
    check_same_shape(pred, gt, "prediction/ground truth")
    return _clamp(np.mean(np.abs(pred.values - gt.bits)))


def _overlap_counts(pred: BinaryMask, gt: BinaryMask) -> Tuple[int, int, int]:
    check_same_shape(pred, gt, "prediction/ground truth")
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    return inter, pred.area, gt.area


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """2|P and G| / (|P| + |G|), 1 when both are empty."""
    inter, p, g = _overlap_counts(pred, gt)
    if p + g == 0:
        return 1.0
    return 2.0 * inter / (p + g)


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    """|P and G| / |P or G|, 1 when both are empty."""
    inter, p, g = _overlap_counts(pred, gt)
    union = p + g - inter
    if union == 0:
        return 1.0
    return inter / union


# ============== Structure Measure ==============

def _object_similarity(values: np.ndarray, eps: float) -> float:
    x = float(np.mean(values))
    sigma = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + eps)


def _object_score(pred: np.ndarray, gt: np.ndarray, eps: float) -> float:
    mu = float(np.mean(gt))
    fg = _object_similarity(pred[gt], eps)
    bg = _object_similarity(1.0 - pred[~gt], eps)
    return mu * fg + (1.0 - mu) * bg


def _quadrant_ssim(pred: np.ndarray, gt: np.ndarray, eps: float) -> float:
    x = float(np.mean(pred))
    y = float(np.mean(gt))
    dx = pred - x
    dy = gt - y
    sigma_x = float(np.mean(dx * dx))
    sigma_y = float(np.mean(dy * dy))
    sigma_xy = float(np.mean(dx * dy))
    a = 4.0 * x * y * sigma_xy
    b = (x * x + y * y) * (sigma_x + sigma_y)
    if a != 0:
        return a / (b + eps)
    return 1.0 if b == 0 else 0.0


def _region_score(pred: np.ndarray, gt_mask: BinaryMask, eps: float) -> float:
    gt = gt_mask.bits.astype(np.float64)
    h, w = gt.shape
    row, col = centroid(gt_mask)
    # quadrant boundary sits one past the centroid pixel
    top, left = row + 1, col + 1
    total = float(h * w)
    score = 0.0
    for rows in (slice(0, top), slice(top, h)):
        for cols in (slice(0, left), slice(left, w)):
            p_part = pred[rows, cols]
            if p_part.size == 0:
                continue
            score += p_part.size / total * _quadrant_ssim(p_part, gt[rows, cols], eps)
    return score


def s_measure(pred: GrayFrame, gt: BinaryMask, cfg: Optional[MetricConfig] = None) -> float:
    cfg = cfg or _DEFAULT_CONFIG
    check_same_shape(pred, gt, "prediction/ground truth")
    values = pred.values
    ratio = float(np.mean(gt.bits))
    if ratio == 0.0:
        return _clamp(1.0 - np.mean(values))
    if ratio == 1.0:
        return _clamp(np.mean(values))
    score = (cfg.alpha * _object_score(values, gt.bits, cfg.epsilon)
             + (1.0 - cfg.alpha) * _region_score(values, gt, cfg.epsilon))
    return _clamp(score)


# ============== Weighted F-measure ==============

def weighted_f(pred: GrayFrame, gt: BinaryMask, cfg: Optional[MetricConfig] = None) -> float:
    cfg = cfg or _DEFAULT_CONFIG
    check_same_shape(pred, gt, "prediction/ground truth")
    if gt.area == 0:
        logger.warning("[Metrics] empty ground truth, weighted F-measure scored as 0")
        return 0.0

    fg = gt.bits
    bg = ~fg
    error = np.abs(pred.values - fg)
    field = euclidean_distance_transform(gt)

    # background errors take the error at their nearest foreground pixel
    dependent = error.copy()
    dependent[bg] = error.ravel()[field.nearest[bg]]
    smoothed = gaussian_filter_7x7(dependent, cfg.wf_sigma)

    minimum = np.where(fg & (smoothed < error), smoothed, error)
    importance = np.where(fg, 1.0, 2.0 - np.exp2(-field.distance / cfg.wf_decay))
    weighted = minimum * importance

    fg_error = weighted[fg]
    tp = float(gt.area) - float(np.sum(fg_error))
    fp = float(np.sum(weighted[bg]))
    recall = 1.0 - float(np.mean(fg_error))
    precision = tp / (tp + fp + cfg.epsilon)
    score = (1.0 + cfg.beta_sq) * precision * recall / (recall + cfg.beta_sq * precision + cfg.epsilon)
    return _clamp(score)


# ============== Frame Evaluation ==============

def eval_frame(pred: GrayFrame, gt: BinaryMask, cfg: Optional[MetricConfig] = None) -> FrameScores:
    cfg = cfg or _DEFAULT_CONFIG
    check_same_shape(pred, gt, "prediction/ground truth")
    binary = binarize(pred, cfg.binarize)
    return FrameScores(
        s_alpha=s_measure(pred, gt, cfg),
        f_beta_w=weighted_f(pred, gt, cfg),
        mae=mae(pred, gt),
        dice=dice(binary, gt),
        iou=iou(binary, gt),
        empty_gt=gt.area == 0,
    )


def resize_gray(frame: GrayFrame, width: int, height: int) -> GrayFrame:
    """Bilinear resample to (width, height)."""
    if frame.shape == (height, width):
        return frame
    img = Image.fromarray(frame.values.astype(np.float32))
    resized = np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64)
    return GrayFrame(np.clip(resized, 0.0, 1.0))


def eval_frame_paths(pred_path: Union[str, Path], gt_path: Union[str, Path],
                     cfg: Optional[MetricConfig] = None, resize: bool = False) -> FrameScores:
    pred = load_gray(pred_path)
    gt = load_mask(gt_path)
    if resize and pred.shape != gt.shape:
        logger.debug(f"[Metrics] resizing {pred_path} from {pred.shape} to {gt.shape}")
        pred = resize_gray(pred, gt.width, gt.height)
    return eval_frame(pred, gt, cfg)
