"""Boxes, axis-aligned cut sets, partitions and point location.

Cells of a cut grid are half-open on their upper faces, except on the upper
boundary of the domain where they are closed, so every point of the domain
falls into exactly one cell.  A region of a :class:`Partition` is a list of
grid cells sharing one id; after :func:`complete_tiling` the regions tile the
whole domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .interval import Interval

CUT_TOL = 1e-9

CutSet = tuple  # tuple of 1-D float arrays, one per state dimension


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lo/hi dimension mismatch")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError(f"invalid box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_intervals(cls, dims: Sequence[Interval | Sequence[float]]) -> "Box":
        pairs = [(d.lo, d.hi) if isinstance(d, Interval) else tuple(d) for d in dims]
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    @property
    def ndim(self) -> int:
        return self.lo.size

    @property
    def dims(self) -> list[Interval]:
        return [Interval(float(a), float(b)) for a, b in zip(self.lo, self.hi)]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(self.lo - tol <= other.lo) and np.all(other.hi <= self.hi + tol))

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def __eq__(self, other) -> bool:
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self) -> str:
        return "Box(" + " x ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo, self.hi)) + ")"


@dataclass(frozen=True, eq=False)
class Region:
    id: int
    cells: tuple[int, ...]  # flat grid indices, ascending
    boxes: tuple[Box, ...]


@dataclass(frozen=True, eq=False)
class Partition:
    domain: Box
    cuts: CutSet
    cell_region: np.ndarray  # flat array over grid cells, -1 for unassigned cells
    regions: tuple[Region, ...] = field(default=())

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(len(c) + 1 for c in self.cuts)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def is_tiling(self) -> bool:
        return bool(np.all(self.cell_region >= 0))

    def to_dict(self, etas=None, alphas=None) -> dict:
        regions = []
        for r in self.regions:
            entry = {"id": r.id, "boxes": [b.to_list() for b in r.boxes]}
            if etas is not None:
                entry["eta"] = _json_float(etas[r.id])
            if alphas is not None:
                entry["alpha"] = float(alphas[r.id])
            regions.append(entry)
        return {
            "domain": self.domain.to_list(),
            "cuts": [[float(c) for c in cu] for cu in self.cuts],
            "cell_region": [int(i) for i in self.cell_region],
            "regions": regions,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Partition":
        domain = Box.from_intervals(data["domain"])
        cuts = validate_cuts([np.asarray(c, dtype=float) for c in data["cuts"]], domain)
        if "cell_region" in data:
            cell_region = np.asarray(data["cell_region"], dtype=int)
        else:
            cell_region = np.full(int(np.prod([len(c) + 1 for c in cuts])), -1, dtype=int)
            cells = cells_from_cuts(cuts, domain)
            for reg in data["regions"]:
                for b in reg["boxes"]:
                    box = Box.from_intervals(b)
                    for idx, cell in enumerate(cells):
                        if box.contains_box(cell, tol=1e-12):
                            cell_region[idx] = reg["id"]
        return _build_partition(domain, cuts, cell_region)


def _json_float(x: float):
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def validate_cuts(cuts: Sequence, domain: Box) -> CutSet:
    if len(cuts) != domain.ndim:
        raise ValueError(f"expected cut lists for {domain.ndim} dimensions, got {len(cuts)}")
    out = []
    for u, cu in enumerate(cuts):
        cu = np.asarray(cu, dtype=float).reshape(-1)
        if cu.size and (np.any(cu <= domain.lo[u]) or np.any(cu >= domain.hi[u])):
            raise ValueError(f"cut outside the interior of dimension {u}: {cu}")
        if cu.size > 1 and np.any(np.diff(cu) <= 0):
            raise ValueError(f"cuts in dimension {u} must be strictly increasing: {cu}")
        out.append(cu)
    return tuple(out)


def _edges(cuts: CutSet, domain: Box) -> list[np.ndarray]:
    return [np.concatenate(([domain.lo[u]], cu, [domain.hi[u]])) for u, cu in enumerate(cuts)]


def cells_from_cuts(cuts: Sequence, domain: Box) -> list[Box]:
    """All grid cells induced by ``cuts``, in C order of the grid index."""
    cuts = validate_cuts(cuts, domain)
    edges = _edges(cuts, domain)
    cells = []
    for idx in itertools.product(*(range(len(cu) + 1) for cu in cuts)):
        lo = np.array([edges[u][i] for u, i in enumerate(idx)])
        hi = np.array([edges[u][i + 1] for u, i in enumerate(idx)])
        cells.append(Box(lo, hi))
    return cells


def cell_index(cuts: CutSet, domain: Box, points) -> np.ndarray:
    """Flat grid index of each point; raises LookupError for points outside the domain."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != domain.ndim:
        raise ValueError("point dimension does not match the domain")
    outside = np.any((pts < domain.lo) | (pts > domain.hi) | np.isnan(pts), axis=-1)
    if np.any(outside):
        bad = pts[outside][0]
        raise LookupError(f"state {bad} lies outside the domain {domain}")
    shape = tuple(len(c) + 1 for c in cuts)
    multi = [np.searchsorted(cu, pts[..., u], side="right") for u, cu in enumerate(cuts)]
    return np.ravel_multi_index(multi, shape)


def _build_partition(domain: Box, cuts: CutSet, cell_region: np.ndarray) -> Partition:
    shape = tuple(len(c) + 1 for c in cuts)
    edges = _edges(cuts, domain)
    ids = sorted(set(int(i) for i in cell_region if i >= 0))
    if ids != list(range(len(ids))):
        raise ValueError("region ids must be dense 0..M-1")
    regions = []
    for rid in ids:
        cells = tuple(int(c) for c in np.flatnonzero(cell_region == rid))
        boxes = []
        for c in cells:
            idx = np.unravel_index(c, shape)
            lo = np.array([edges[u][i] for u, i in enumerate(idx)])
            hi = np.array([edges[u][i + 1] for u, i in enumerate(idx)])
            boxes.append(Box(lo, hi))
        regions.append(Region(rid, cells, tuple(boxes)))
    return Partition(domain, cuts, np.asarray(cell_region, dtype=int), tuple(regions))


def get_nonempty_boxes(cuts: Sequence, data, domain: Box | None = None) -> Partition:
    """Partition made of the grid cells that contain at least one data state.

    ``data`` is either an array of states (..., d) or an object with ``states``
    and ``domain`` attributes (a trajectory dataset).  Region ids follow the
    ascending flat cell index, i.e. lexicographic order of the cell corners.
    """
    if hasattr(data, "states"):
        states = data.states
        domain = domain if domain is not None else data.domain
    else:
        states = np.asarray(data, dtype=float)
    if domain is None:
        raise ValueError("a domain is required")
    cuts = validate_cuts(cuts, domain)
    n_cells = int(np.prod([len(c) + 1 for c in cuts]))
    occupied = np.zeros(n_cells, dtype=bool)
    occupied[np.unique(cell_index(cuts, domain, states.reshape(-1, domain.ndim)))] = True
    cell_region = np.full(n_cells, -1, dtype=int)
    cell_region[occupied] = np.arange(int(occupied.sum()))
    return _build_partition(domain, cuts, cell_region)


def uniform_partition(domain: Box, n_cuts: Sequence[int]) -> Partition:
    """Equally spaced cuts with every cell its own region."""
    cuts = tuple(
        np.linspace(domain.lo[u], domain.hi[u], n + 2)[1:-1] if n else np.empty(0)
        for u, n in enumerate(n_cuts)
    )
    n_cells = int(np.prod([n + 1 for n in n_cuts]))
    return _build_partition(domain, cuts, np.arange(n_cells))


def complete_tiling(partition: Partition, etas: Sequence[float]) -> Partition:
    """Absorb every empty cell into a face-adjacent region with the lowest bound.

    Empty cells are visited in ascending flat index, sweeping repeatedly until
    none is left; ties on the bound go to the lowest region id.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.size != partition.n_regions:
        raise ValueError("need one bound per region")
    shape = partition.grid_shape
    cell_region = partition.cell_region.copy()
    if partition.n_regions == 0:
        raise ValueError("cannot complete a partition without regions")
    while np.any(cell_region < 0):
        progressed = False
        for c in np.flatnonzero(cell_region < 0):
            idx = np.unravel_index(c, shape)
            best = None
            for u in range(len(shape)):
                for step in (-1, 1):
                    j = idx[u] + step
                    if not 0 <= j < shape[u]:
                        continue
                    nb = list(idx)
                    nb[u] = j
                    rid = cell_region[np.ravel_multi_index(nb, shape)]
                    if rid < 0:
                        continue
                    key = (etas[rid], rid)
                    if best is None or key < best:
                        best = key
            if best is not None:
                cell_region[c] = best[1]
                progressed = True
        assert progressed, "empty cell without any adjacent region"
    return _build_partition(partition.domain, partition.cuts, cell_region)


def locate(partition: Partition, states) -> np.ndarray | int:
    """Region id of each state.  Scalar input gives a scalar id."""
    pts = np.asarray(states, dtype=float)
    single = pts.ndim == 1
    flat = cell_index(partition.cuts, partition.domain, pts.reshape(-1, partition.domain.ndim))
    ids = partition.cell_region[flat]
    if np.any(ids < 0):
        raise LookupError("state falls in a cell that belongs to no region")
    if single:
        return int(ids[0])
    return ids.reshape(pts.shape[:-1])


def locate_scan(partition: Partition, state) -> int:
    """Brute-force containment scan; the reference oracle for :func:`locate`."""
    x = np.asarray(state, dtype=float)
    dom = partition.domain
    hits = []
    for region in partition.regions:
        for box in region.boxes:
            upper_closed = box.hi == dom.hi
            inside = np.all(x >= box.lo) and np.all(np.where(upper_closed, x <= box.hi, x < box.hi))
            if inside:
                hits.append(region.id)
    if len(hits) != 1:
        raise LookupError(f"state {x} found in {len(hits)} regions")
    return hits[0]


def repair_cuts(cuts: Sequence, domain: Box, rng: np.random.Generator, budgets: Sequence[int] | None = None) -> CutSet:
    """Sort, deduplicate and keep cuts strictly interior, refilling to the budget.

    Cuts closer than ``CUT_TOL`` collapse to one; cuts on or outside the domain
    boundary are dropped.  Dropped cuts are replaced by uniform interior draws so
    that dimension ``u`` ends with ``budgets[u]`` cuts (default: the number it
    came in with).
    """
    out = []
    for u, cu in enumerate(cuts):
        lo, hi = float(domain.lo[u]), float(domain.hi[u])
        cu = np.asarray(cu, dtype=float).reshape(-1)
        n = len(cu) if budgets is None else int(budgets[u])
        kept: list[float] = []
        for c in np.sort(cu[np.isfinite(cu)]):
            if lo < c < hi and (not kept or c - kept[-1] > CUT_TOL):
                kept.append(float(c))
        kept = kept[:n]
        while len(kept) < n:
            c = float(rng.uniform(lo, hi))
            if lo < c < hi and all(abs(c - k) > CUT_TOL for k in kept):
                kept.append(c)
        out.append(np.sort(np.asarray(kept, dtype=float)))
    return tuple(out)
