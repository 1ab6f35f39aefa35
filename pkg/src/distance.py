"""
Distance module for exact Euclidean distance transforms and the fixed 7x7 Gaussian filter.

The transform runs two separable passes: a per-column scan giving vertical
distances, then a per-row lower envelope of parabolas. Both kernels are compiled
with numba and release the GIL, so thread-pooled callers run them in parallel.
Squared distances are carried in int64, so results are exact.
"""
from dataclasses import dataclass
from typing import Tuple

import numba as nb
import numpy as np
from scipy import ndimage

from src.errors import EmptyMaskError, RasterError
from src.mask_core import BinaryMask, _frozen

_NEG_INF = -(1 << 62)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """
    distance[r, c]         Euclidean distance to the nearest foreground pixel
    squared_distance[r, c] the same, squared, as an exact integer
    nearest[r, c]          row-major index of that foreground pixel
    """
    distance: np.ndarray
    squared_distance: np.ndarray
    nearest: np.ndarray

    def __post_init__(self):
        for name in ("distance", "squared_distance", "nearest"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def height(self) -> int:
        return self.distance.shape[0]

    @property
    def width(self) -> int:
        return self.distance.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.distance.shape

    def nearest_rc(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.divmod(self.nearest, self.width)


# ============== Numba Kernels ==============

@nb.njit(cache=True, nogil=True)
def _column_pass(bits):
    h, w = bits.shape
    g = np.full((h, w), -1, dtype=np.int64)
    nr = np.full((h, w), -1, dtype=np.int64)
    for c in range(w):
        last = -1
        for r in range(h):
            if bits[r, c]:
                last = r
            if last >= 0:
                g[r, c] = r - last
                nr[r, c] = last
        below = -1
        for r in range(h - 1, -1, -1):
            if bits[r, c]:
                below = r
            # strict: an equidistant pixel above keeps priority
            if below >= 0 and (g[r, c] < 0 or below - r < g[r, c]):
                g[r, c] = below - r
                nr[r, c] = below
    return g, nr


@nb.njit(cache=True, nogil=True)
def _row_pass(g, nr):
    h, w = g.shape
    dist2 = np.empty((h, w), dtype=np.int64)
    nearest = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w, dtype=np.int64)
    for r in range(h):
        k = -1
        for q in range(w):
            gq = g[r, q]
            if gq < 0:
                continue
            key_q = nr[r, q] * w + q
            s = _NEG_INF
            while k >= 0:
                p = v[k]
                gp = g[r, p]
                t = q * q + gq * gq - p * p - gp * gp
                den = 2 * (q - p)
                s = t // den + 1
                if t % den == 0 and key_q < nr[r, p] * w + p:
                    s = t // den
                if s <= z[k]:
                    k -= 1
                else:
                    break
            if k < 0:
                k = 0
                v[0] = q
                z[0] = _NEG_INF
            else:
                k += 1
                v[k] = q
                z[k] = s
        j = 0
        for x in range(w):
            while j < k and z[j + 1] <= x:
                j += 1
            p = v[j]
            dx = x - p
            dist2[r, x] = dx * dx + g[r, p] * g[r, p]
            nearest[r, x] = nr[r, p] * w + p
    return dist2, nearest


# ============== Public API ==============

def euclidean_distance_transform(mask: BinaryMask) -> DistanceField:
    """
    Exact EDT to the nearest foreground pixel; equidistant candidates resolve to the
    smallest row-major index.
    """
    if mask.area == 0:
        raise EmptyMaskError("distance transform needs at least one foreground pixel")
    bits = np.ascontiguousarray(mask.bits, dtype=np.uint8)
    g, nr = _column_pass(bits)
    dist2, nearest = _row_pass(g, nr)
    return DistanceField(np.sqrt(dist2.astype(np.float64)), dist2, nearest)


def gaussian_kernel_7x7(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise RasterError(f"sigma must be > 0, got {sigma}")
    offsets = np.arange(-3, 4, dtype=np.float64)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    kernel = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_filter_7x7(field: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve with the normalized 7x7 kernel, zero padding outside the grid."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise RasterError(f"expected a 2-D field, got shape {field.shape}")
    return ndimage.convolve(field, gaussian_kernel_7x7(sigma), mode="constant", cval=0.0)
