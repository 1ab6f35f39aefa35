"""
Independent reference implementations used as test oracles.
Written for clarity, not speed: brute-force nearest foreground search, explicit
shifted-sum convolution and per-quadrant scalar formulas.
"""
import numpy as np

EPS = float(np.finfo(np.float64).eps)


def brute_nearest(bits):
    """Squared distance and row-major index of the nearest foreground pixel (smallest index on ties)."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    fg = np.flatnonzero(bits.ravel())
    fr, fc = np.divmod(fg, w)
    rr, cc = np.divmod(np.arange(h * w), w)
    d2 = (rr[:, None] - fr[None, :]) ** 2 + (cc[:, None] - fc[None, :]) ** 2
    best = np.argmin(d2, axis=1)
    return d2[np.arange(h * w), best].reshape(h, w), fg[best].reshape(h, w)


def gaussian_7x7(sigma):
    kernel = np.zeros((7, 7))
    for i in range(7):
        for j in range(7):
            kernel[i, j] = np.exp(-((i - 3) ** 2 + (j - 3) ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def convolve_zero_pad(field, kernel):
    h, w = field.shape
    padded = np.zeros((h + 6, w + 6))
    padded[3:-3, 3:-3] = field
    out = np.zeros((h, w))
    for i in range(7):
        for j in range(7):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out


def flood_components(bits, connectivity=8):
    """Label map numbered in row-major order of each component's first pixel."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    count = 0
    for r in range(h):
        for c in range(w):
            if bits[r, c] and labels[r, c] == 0:
                count += 1
                labels[r, c] = count
                stack = [(r, c)]
                while stack:
                    y, x = stack.pop()
                    for dr, dc in steps:
                        ny, nx = y + dr, x + dc
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = count
                            stack.append((ny, nx))
    return labels, count


def scan_bbox(bits):
    xs, ys = [], []
    for r in range(bits.shape[0]):
        for c in range(bits.shape[1]):
            if bits[r, c]:
                xs.append(c)
                ys.append(r)
    return min(xs), min(ys), max(xs), max(ys)


# ============== Structure Measure ==============

def _similarity(values):
    n = len(values)
    mean = sum(values) / n
    std = (sum((v - mean) ** 2 for v in values) / (n - 1)) ** 0.5 if n > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + std + EPS)


def _ssim(p, g):
    n = p.size
    x = p.sum() / n
    y = g.sum() / n
    sx = ((p - x) ** 2).sum() / n
    sy = ((g - y) ** 2).sum() / n
    sxy = ((p - x) * (g - y)).sum() / n
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def s_measure(pred, gt, alpha=0.5):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    h, w = gt.shape
    ratio = gt.sum() / gt.size
    if ratio == 0:
        return float(np.clip(1.0 - pred.mean(), 0, 1))
    if ratio == 1:
        return float(np.clip(pred.mean(), 0, 1))

    fg = [pred[r, c] for r in range(h) for c in range(w) if gt[r, c]]
    bg = [1.0 - pred[r, c] for r in range(h) for c in range(w) if not gt[r, c]]
    object_score = ratio * _similarity(fg) + (1 - ratio) * _similarity(bg)

    rows, cols = np.nonzero(gt)
    cy = int(np.floor(rows.mean() + 0.5))
    cx = int(np.floor(cols.mean() + 0.5))
    g = gt.astype(np.float64)
    region = 0.0
    for r0, r1 in ((0, cy + 1), (cy + 1, h)):
        for c0, c1 in ((0, cx + 1), (cx + 1, w)):
            if r1 <= r0 or c1 <= c0:
                continue
            weight = (r1 - r0) * (c1 - c0) / (h * w)
            region += weight * _ssim(pred[r0:r1, c0:c1], g[r0:r1, c0:c1])
    return float(np.clip(alpha * object_score + (1 - alpha) * region, 0, 1))


# ============== Weighted F-measure ==============

def weighted_f(pred, gt, sigma=5.0, decay=5.0, beta_sq=1.0):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if not gt.any():
        return 0.0
    error = np.abs(pred - gt)
    d2, nearest = brute_nearest(gt)
    dependent = error.copy()
    h, w = gt.shape
    for r in range(h):
        for c in range(w):
            if not gt[r, c]:
                dependent[r, c] = error.ravel()[nearest[r, c]]
    smoothed = convolve_zero_pad(dependent, gaussian_7x7(sigma))
    weighted = np.zeros_like(error)
    for r in range(h):
        for c in range(w):
            if gt[r, c]:
                weighted[r, c] = min(error[r, c], smoothed[r, c])
            else:
                weighted[r, c] = error[r, c] * (2.0 - 0.5 ** (np.sqrt(d2[r, c]) / decay))
    tp = gt.sum() - weighted[gt].sum()
    fp = weighted[~gt].sum()
    recall = 1.0 - weighted[gt].mean()
    precision = tp / (tp + fp + EPS)
    q = (1 + beta_sq) * precision * recall / (recall + beta_sq * precision + EPS)
    return float(np.clip(q, 0, 1))
