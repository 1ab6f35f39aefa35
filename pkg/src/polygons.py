"""
Polygon module for mask <-> polygon conversion.

Boundaries follow pixel edges (crack following) so vertices sit on the pixel-corner
lattice: pixel (row r, col c) spans x in [c, c+1], y in [r, r+1]. Outer boundaries
have positive shoelace area, holes negative. Rasterization uses the even-odd rule
on pixel centers, so tolerance 0 round trips are exact.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from src.errors import RasterError
from src.mask_core import BinaryMask

Point = Tuple[int, int]

# east, south, west, north in image coordinates (y grows downward)
_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True)
class Polygon:
    vertices: Tuple[Point, ...]
    is_hole: bool = False

    def __post_init__(self):
        vertices = tuple((v[0], v[1]) for v in self.vertices)
        if len(vertices) < 3:
            raise RasterError(f"polygon needs >= 3 vertices, got {len(vertices)}")
        for a, b in zip(vertices, vertices[1:] + vertices[:1]):
            if a == b:
                raise RasterError(f"polygon has repeated consecutive vertex {a}")
        object.__setattr__(self, "vertices", vertices)

    def as_list(self) -> List[List[float]]:
        return [[x, y] for x, y in self.vertices]


def polygon_area(polygon: Union[Polygon, Sequence[Sequence[float]]]) -> float:
    """Signed shoelace area; positive for outer boundaries."""
    vertices = polygon.vertices if isinstance(polygon, Polygon) else polygon
    pts = np.asarray(vertices, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ============== Tracing ==============

def _crack_edges(bits: np.ndarray) -> List[Tuple[int, int, int]]:
    """Directed boundary edges (x, y, direction) with foreground on the right."""
    padded = np.pad(bits, 1)
    core = padded[1:-1, 1:-1]
    edges = []
    rows, cols = np.nonzero(core & ~padded[:-2, 1:-1])
    edges.extend(zip(cols.tolist(), rows.tolist(), [0] * rows.size))
    rows, cols = np.nonzero(core & ~padded[1:-1, 2:])
    edges.extend(zip((cols + 1).tolist(), rows.tolist(), [1] * rows.size))
    rows, cols = np.nonzero(core & ~padded[2:, 1:-1])
    edges.extend(zip((cols + 1).tolist(), (rows + 1).tolist(), [2] * rows.size))
    rows, cols = np.nonzero(core & ~padded[1:-1, :-2])
    edges.extend(zip(cols.tolist(), (rows + 1).tolist(), [3] * rows.size))
    edges.sort(key=lambda e: (e[1], e[0], e[2]))
    return edges


def _trace_loops(bits: np.ndarray) -> List[List[Point]]:
    edges = _crack_edges(bits)
    outgoing: Dict[Point, List[int]] = {}
    for x, y, d in edges:
        outgoing.setdefault((x, y), []).append(d)

    used = set()
    loops = []
    for start in edges:
        if start in used:
            continue
        points, dirs = [], []
        edge = start
        while True:
            used.add(edge)
            x, y, d = edge
            points.append((x, y))
            dirs.append(d)
            dx, dy = _STEPS[d]
            nxt = (x + dx, y + dy)
            outs = outgoing[nxt]
            # saddle vertex: turn left, joining diagonal foreground pixels
            nd = outs[0] if len(outs) == 1 else (d + 3) % 4
            edge = (nxt[0], nxt[1], nd)
            if edge == start:
                break
        loops.append([p for i, p in enumerate(points) if dirs[i] != dirs[i - 1]])
    return loops


# ============== Simplification ==============

def _perpendicular_dist(point: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    line = end - start
    norm = float(np.hypot(line[0], line[1]))
    if norm == 0.0:
        return float(np.hypot(*(point - start)))
    cross = line[0] * (point[1] - start[1]) - line[1] * (point[0] - start[0])
    return abs(float(cross)) / norm


def _douglas_peucker(pts: np.ndarray, tolerance: float) -> np.ndarray:
    """Keep-flags for an open chain; both endpoints are kept."""
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        s, e = stack.pop()
        if e <= s + 1:
            continue
        max_dist, index_max = 0.0, -1
        for i in range(s + 1, e):
            d = _perpendicular_dist(pts[i], pts[s], pts[e])
            if d > max_dist:
                max_dist, index_max = d, i
        if max_dist > tolerance:
            keep[index_max] = True
            stack.append((s, index_max))
            stack.append((index_max, e))
    return keep


def simplify_closed(vertices: Sequence[Point], tolerance: float) -> List[Point]:
    """
    Douglas-Peucker on a closed ring, anchored at the first vertex and the vertex
    farthest from it. Falls back to the input when fewer than 3 vertices survive.
    """
    if tolerance <= 0 or len(vertices) <= 3:
        return list(vertices)
    pts = np.asarray(vertices, dtype=np.float64)
    far = int(np.argmax(np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])))
    if far == 0:
        return list(vertices)
    first = _douglas_peucker(pts[: far + 1], tolerance)
    second = _douglas_peucker(np.vstack([pts[far:], pts[:1]]), tolerance)
    keep = np.zeros(len(pts), dtype=bool)
    keep[: far + 1] |= first
    keep[far:] |= second[:-1]
    result = [vertices[i] for i in np.flatnonzero(keep)]
    return result if len(result) >= 3 else list(vertices)


# ============== Public API ==============

def mask_to_polygons(mask: BinaryMask, tolerance: float = 0.0) -> List[Polygon]:
    """
    Trace every boundary of the mask in row-major order of its top-left vertex.
    Diagonal foreground neighbours belong to the same boundary (8-connected
    foreground, 4-connected background).
    """
    if tolerance < 0:
        raise RasterError(f"tolerance must be >= 0, got {tolerance}")
    polygons = []
    for loop in _trace_loops(mask.bits):
        is_hole = polygon_area(loop) < 0
        polygons.append(Polygon(tuple(simplify_closed(loop, tolerance)), is_hole=is_hole))
    return polygons


def polygons_to_mask(polygons: Sequence[Union[Polygon, Sequence[Sequence[float]]]],
                     width: int, height: int) -> BinaryMask:
    """Even-odd fill evaluated at pixel centers (c + 0.5, r + 0.5)."""
    if width < 1 or height < 1:
        raise RasterError(f"invalid raster size {width}x{height}")
    toggles = np.zeros((height, width + 1), dtype=np.int64)
    for polygon in polygons:
        vertices = polygon.vertices if isinstance(polygon, Polygon) else polygon
        pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        if pts.size == 0:
            continue
        if (pts[:, 0].min() < 0 or pts[:, 0].max() > width
                or pts[:, 1].min() < 0 or pts[:, 1].max() > height):
            raise RasterError(f"polygon vertex outside [0,{width}]x[0,{height}]")
        for (x0, y0), (x1, y1) in zip(pts, np.roll(pts, -1, axis=0)):
            if y0 == y1:
                continue
            lo, hi = min(y0, y1), max(y0, y1)
            rows = np.arange(int(np.ceil(lo - 0.5)), int(np.ceil(hi - 0.5)))
            rows = rows[(rows >= 0) & (rows < height)]
            if rows.size == 0:
                continue
            xi = x0 + (rows + 0.5 - y0) * (x1 - x0) / (y1 - y0)
            cols = np.clip(np.floor(xi - 0.5).astype(np.int64) + 1, 0, width)
            np.add.at(toggles, (rows, cols), 1)
    parity = np.cumsum(toggles, axis=1)[:, :width] % 2
    return BinaryMask(parity.astype(bool))
