"""Flowpipe size metrics: interval-union length, rectangle-union area
(sweep over x slabs), reachable set size and distance to walls."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def union_length(intervals) -> float:
    """Total length of a union of closed intervals given as (n, 2)."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if len(iv) == 0:
        return 0.0
    iv = iv[np.argsort(iv[:, 0], kind="stable")]
    total = 0.0
    cur_lo, cur_hi = iv[0]
    for lo, hi in iv[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return float(total + cur_hi - cur_lo)


def union_area(rects) -> float:
    """Exact area of a union of axis-aligned rectangles (n, 4) = (x0, y0, x1, y1).

    The plane is swept left to right; between consecutive x events the
    covered length of the active y intervals is constant.
    """
    r = np.asarray(rects, dtype=float).reshape(-1, 4)
    r = r[(r[:, 2] > r[:, 0]) & (r[:, 3] > r[:, 1])]
    if len(r) == 0:
        return 0.0
    xs = np.unique(np.concatenate([r[:, 0], r[:, 2]]))
    area = 0.0
    for xa, xb in zip(xs[:-1], xs[1:]):
        active = (r[:, 0] <= xa) & (r[:, 2] >= xb)
        if np.any(active):
            area += (xb - xa) * union_length(r[active][:, [1, 3]])
    return float(area)


def raster_area(rects, resolution: int = 1000) -> float:
    """Grid-sampled union area; a slow cross-check for union_area."""
    r = np.asarray(rects, dtype=float).reshape(-1, 4)
    if len(r) == 0:
        return 0.0
    x0, y0 = r[:, 0].min(), r[:, 1].min()
    x1, y1 = r[:, 2].max(), r[:, 3].max()
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    covered = np.zeros((resolution, resolution), dtype=bool)
    for a, b, c, d in r:
        ix = (xs >= a) & (xs <= c)
        iy = (ys >= b) & (ys <= d)
        covered |= ix[:, None] & iy[None, :]
    return float(covered.mean() * (x1 - x0) * (y1 - y0))


def step_sizes(step_boxes: Sequence[Sequence], dims: Sequence[int]) -> np.ndarray:
    """Union length (one dim) or area (two dims) of each step's boxes."""
    dims = list(dims)
    out = []
    for boxes in step_boxes:
        if len(dims) == 1:
            d = dims[0]
            out.append(union_length([(b.lo[d], b.hi[d]) for b in boxes]))
        elif len(dims) == 2:
            a, c = dims
            out.append(union_area([(b.lo[a], b.lo[c], b.hi[a], b.hi[c]) for b in boxes]))
        else:
            raise ValueError("size metrics need one or two dimensions")
    return np.array(out)


def _point_segment(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    t = 0.0 if ll == 0 else min(1.0, max(0.0, ((px - ax) * dx + (py - ay) * dy) / ll))
    return math.hypot(px - ax - t * dx, py - ay - t * dy)


def _segment_hits_rect(ax, ay, bx, by, x0, y0, x1, y1) -> bool:
    # Liang-Barsky clipping of the segment against the closed rectangle
    t0, t1 = 0.0, 1.0
    dx, dy = bx - ax, by - ay
    for p, q in ((-dx, ax - x0), (dx, x1 - ax), (-dy, ay - y0), (dy, y1 - ay)):
        if p == 0:
            if q < 0:
                return False
        else:
            t = q / p
            if p < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
            if t0 > t1:
                return False
    return True


def rect_segment_distance(rect, seg) -> float:
    """Euclidean distance between a closed rectangle (x0, y0, x1, y1) and a segment; 0 if they meet."""
    x0, y0, x1, y1 = rect
    (ax, ay), (bx, by) = seg
    if _segment_hits_rect(ax, ay, bx, by, x0, y0, x1, y1):
        return 0.0
    cands = []
    for px, py in ((ax, ay), (bx, by)):
        cx, cy = min(max(px, x0), x1), min(max(py, y0), y1)
        cands.append(math.hypot(px - cx, py - cy))
    for px, py in ((x0, y0), (x0, y1), (x1, y0), (x1, y1)):
        cands.append(_point_segment(px, py, ax, ay, bx, by))
    return min(cands)
