"""Flowpipe computation for the closed loop with region-dependent perception noise.

Each branch carries a Taylor-model vector over its own symbolic domain.  A
step splits the branch on the partition regions its box meets, injects the
region's noise bound as a fresh symbol, applies the controller (splitting
again for sign-switching controllers) and the dynamics.  After every step the
branches are consolidated to a budget with k-means on box midpoints followed
by per-dimension union enclosure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .conformal import GlobalBound, TimewiseBound
from .geometry import Box, Partition
from .interval import Interval
from .metrics import rect_segment_distance, step_sizes
from .taylor import DEFAULT_ORDER, TaylorModel, TMVector, needs_shrink_wrap, tm_scale, union_enclosure

log = logging.getLogger(__name__)

SUBSET_SLACK = 1e-12
DOMAIN_SLACK = 1e-9


class ReachError(RuntimeError):
    pass


class DomainViolation(ReachError):
    pass


class UnboundedNoise(ReachError):
    pass


class BranchExplosion(ReachError):
    pass


@dataclass
class ReachConfig:
    horizon: int
    max_branches: int = 25
    order: int = DEFAULT_ORDER
    eps: float = 1e-6
    frac: float = 0.1
    x0: Box | None = None
    init_splits: int | Sequence[int] = 20
    seed: int = 0
    rebase_every: int = 10
    max_vars: int = 12
    branch_cap: int = 10000
    sweep_tol: float = 1e-13
    split_dim: int | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.max_branches < 1:
            raise ValueError("max_branches must be >= 1")
        if np.any(np.asarray(self.init_splits) < 1):
            raise ValueError("init_splits must be >= 1")


@dataclass
class Branch:
    tm: TMVector
    step: int = 0
    trace: list = field(default_factory=list)
    weight: int = 1

    def box(self) -> Box:
        return self.tm.box()


# ---------------------------------------------------------------- noise sources


class StateNoise:
    """Noise bound eta_i in force while the state lies in region i."""

    def __init__(self, partition: Partition, etas, split: bool = True):
        if not partition.is_tiling:
            raise ValueError("state-based noise needs a partition that tiles the domain")
        self.partition = partition
        self.etas = np.asarray(etas, dtype=float)
        self.split_branches = split

    @classmethod
    def from_bound(cls, bound: GlobalBound, split: bool = True) -> "StateNoise":
        return cls(bound.partition, bound.etas, split)

    def split(self, branch: Branch) -> list[tuple]:
        if self.split_branches:
            return split_on_regions(branch, self.partition)
        # keep the branch whole and charge it the worst bound among the regions it meets
        parts = region_parts(branch.box(), self.partition, branch.step)
        return [(tuple(sorted(parts)), branch)]

    def eta(self, region, step: int) -> float:
        if isinstance(region, tuple):
            return float(max(self.etas[r] for r in region))
        return float(self.etas[region])


class TimeNoise:
    """Noise bound b_k in force at step k, wherever the state is."""

    def __init__(self, steps):
        self.steps = np.asarray(steps, dtype=float)

    @classmethod
    def from_bound(cls, bound: TimewiseBound) -> "TimeNoise":
        return cls(bound.steps)

    def split(self, branch: Branch) -> list[tuple[int, Branch]]:
        return [(-1, branch)]

    def eta(self, region: int, step: int) -> float:
        return float(self.steps[step])


def noise_source(bound) -> StateNoise | TimeNoise:
    if isinstance(bound, GlobalBound):
        return StateNoise.from_bound(bound)
    if isinstance(bound, TimewiseBound):
        return TimeNoise.from_bound(bound)
    raise TypeError(f"unsupported bound type {type(bound).__name__}")


# ---------------------------------------------------------------- stepping


def _check_domain(box: Box, domain: Box, step: int):
    if not domain.contains_box(box, DOMAIN_SLACK):
        raise DomainViolation(f"reachable box {box} leaves the domain {domain} at step {step}")


def region_parts(box: Box, partition: Partition, step: int = 0) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Bounding box of the part of ``box`` in each region it meets (closed intersection)."""
    dom = partition.domain
    _check_domain(box, dom, step)
    lo = np.clip(box.lo, dom.lo, dom.hi)
    hi = np.clip(box.hi, dom.lo, dom.hi)
    shape = partition.grid_shape
    ranges = []
    for u, cu in enumerate(partition.cuts):
        a = int(np.searchsorted(cu, lo[u], side="right"))
        b = int(np.searchsorted(cu, hi[u], side="right"))
        ranges.append(range(a, b + 1))
    edges = [np.concatenate(([dom.lo[u]], cu, [dom.hi[u]])) for u, cu in enumerate(partition.cuts)]
    parts: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for idx in np.ndindex(*[len(r) for r in ranges]):
        cell = tuple(r[i] for r, i in zip(ranges, idx))
        rid = int(partition.cell_region[np.ravel_multi_index(cell, shape)])
        if rid < 0:
            raise ReachError("partition has uncovered cells")
        clo = np.maximum(lo, [edges[u][c] for u, c in enumerate(cell)])
        chi = np.minimum(hi, [edges[u][c + 1] for u, c in enumerate(cell)])
        if rid in parts:
            plo, phi = parts[rid]
            parts[rid] = (np.minimum(plo, clo), np.maximum(phi, chi))
        else:
            parts[rid] = (clo, chi)
    return parts


def split_on_regions(branch: Branch, partition: Partition) -> list[tuple[int, Branch]]:
    """One child per partition region the branch box meets.

    A branch inside a single region is returned unchanged; otherwise each child
    is shrink-wrapped onto the bounding box of its part of the parent box.
    """
    parts = region_parts(branch.box(), partition, branch.step)
    if len(parts) == 1:
        (rid,) = parts
        return [(rid, branch)]
    out = []
    for rid in sorted(parts):
        clo, chi = parts[rid]
        # dimensions that were not cut keep the full parent range
        child = TMVector.from_box(Box(clo, chi), branch.tm.order)
        out.append((rid, Branch(child, branch.step, list(branch.trace), branch.weight)))
    return out


def _clamp(tm: TMVector, clamp: Box | None) -> TMVector:
    if clamp is None:
        return tm
    box = tm.box()
    comps = list(tm.comps)
    fresh = []
    for i in range(len(comps)):
        if box.lo[i] < clamp.lo[i] or box.hi[i] > clamp.hi[i]:
            lo = min(max(box.lo[i], clamp.lo[i]), clamp.hi[i])
            hi = max(min(box.hi[i], clamp.hi[i]), clamp.lo[i])
            fresh.append((i, lo, hi))
    if not fresh:
        return tm
    n = tm.nvars + len(fresh)
    comps = [c.with_vars(n) for c in comps]
    for j, (i, lo, hi) in enumerate(fresh):
        comps[i] = TaylorModel.affine(lo, hi, tm.nvars + j, n, tm.order)
    return TMVector(comps)


def _finish(tm: TMVector, system, cfg: ReachConfig, step: int) -> TMVector:
    if cfg.sweep_tol > 0:
        tm = tm.sweep(cfg.sweep_tol)
    tm = tm.shrink_wrap(tm.needs_wrap(cfg.eps, cfg.frac))
    tm = tm.compact()
    if (cfg.rebase_every and step % cfg.rebase_every == 0) or tm.nvars > cfg.max_vars:
        tm = tm.rebase()
    # the clamp comes last: re-parametrizing may enlarge the box
    return _clamp(tm, getattr(system, "clamp_box", None)).compact()


def step_branch(branch: Branch, system, noise, cfg: ReachConfig) -> list[Branch]:
    out = []
    k = branch.step
    for rid, child in noise.split(branch):
        eta = noise.eta(rid, k)
        if not math.isfinite(eta):
            raise UnboundedNoise(f"unbounded noise region reached (region {rid}, step {k})")
        x = child.tm
        trace = child.trace + [rid]
        if system.controller_kind == "smooth":
            m = system.out_dim
            if eta > 0:
                x = x.add_vars(m)
            n = x.nvars
            ys = []
            for j, g in enumerate(system.tm_task(x)):
                ys.append(g + tm_scale(TaylorModel.var(n - m + j, n, x.order), eta) if eta > 0 else g)
            u = system.tm_control(x, ys)
            nexts = [system.tm_step(x, u)]
        elif system.controller_kind == "sign":
            s = system.switch_range(x, eta)
            pos, neg = system.actions
            acts = [pos] if s.lo >= 0 else [neg] if s.hi < 0 else [pos, neg]
            nexts = [system.tm_step(x, a) for a in acts]
        else:
            raise ValueError(f"unknown controller kind {system.controller_kind!r}")
        for nx in nexts:
            out.append(Branch(_finish(nx, system, cfg, k + 1), k + 1, trace, child.weight))
    return out


# ---------------------------------------------------------------- consolidation


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm from k-means++ seeding.  Returns a label per point."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    rng = np.random.default_rng(seed)
    centers = [int(rng.integers(n))]
    d2 = np.sum((x - x[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            c = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), centers)
            c = int(rest[rng.integers(len(rest))])
        centers.append(c)
        d2 = np.minimum(d2, np.sum((x - x[c]) ** 2, axis=1))
    cent = x[centers].copy()
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - cent[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        new = _repair_empty(x, new, cent, k)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            cent[j] = x[labels == j].mean(axis=0)
    return labels


def _repair_empty(x: np.ndarray, labels: np.ndarray, cent: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = counts[labels] > 1
        d = np.sum((x - cent[labels]) ** 2, axis=1)
        d[~movable] = -1.0
        labels[int(np.argmax(d))] = j
    return labels


def wcss(points, labels) -> float:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return float(sum(np.sum((x[labels == j] - x[labels == j].mean(axis=0)) ** 2) for j in np.unique(labels)))


def remove_subsets(branches: Sequence[Branch]) -> list[Branch]:
    """Drop branches whose box lies inside the box of a fully shrink-wrapped branch."""
    boxes = [b.box() for b in branches]
    wrapped = [b.tm.is_box() for b in branches]
    dropped = [False] * len(branches)
    for i, bi in enumerate(boxes):
        for j, bj in enumerate(boxes):
            if i == j or dropped[j] or not wrapped[j]:
                continue
            if bj.contains_box(bi, SUBSET_SLACK):
                # equal boxes: keep the earlier one
                if not bi.contains_box(bj, SUBSET_SLACK) or j < i:
                    dropped[i] = True
                    break
    return [b for b, d in zip(branches, dropped) if not d]


def enclose(members: Sequence[Branch], eps: float = 1e-6, frac: float = 0.1, clamp: Box | None = None) -> Branch:
    """Per-dimension union enclosure of several branches, averaged reference."""
    dim = len(members[0].tm)
    comps = [union_enclosure([m.tm[i] for m in members]) for i in range(dim)]
    tm = TMVector(comps)
    tm = tm.shrink_wrap([i for i, c in enumerate(tm.comps) if needs_shrink_wrap(c, eps, frac)])
    # members live on unrelated symbol sets, so the averaged model can exceed their hull
    boxes = [m.box() for m in members]
    hull = Box(np.min([b.lo for b in boxes], axis=0), np.max([b.hi for b in boxes], axis=0))
    tm = _clamp(_clamp(tm, hull), clamp)
    heavy = max(members, key=lambda m: m.weight)
    return Branch(tm.compact(), members[0].step, list(heavy.trace), sum(m.weight for m in members))


def cluster_and_enclose(branches: Sequence[Branch], max_branches: int, seed: int = 0, eps: float = 1e-6,
                        frac: float = 0.1, clamp: Box | None = None, scale=None) -> list[Branch]:
    """Merge branches down to ``max_branches`` by k-means on box midpoints.

    ``scale`` optionally divides each midpoint coordinate before clustering.
    """
    branches = list(branches)
    if len(branches) <= max_branches:
        return remove_subsets(branches)
    mids = np.array([b.box().mid for b in branches])
    if scale is not None:
        mids = mids / np.asarray(scale, dtype=float)
    labels = kmeans(mids, max_branches, seed)
    out = []
    for j in range(max_branches):
        members = [b for b, lab in zip(branches, labels) if lab == j]
        if len(members) == 1:
            out.append(members[0])
        elif members:
            out.append(enclose(members, eps, frac, clamp))
    return remove_subsets(out)


# ---------------------------------------------------------------- driver


@dataclass
class Flowpipe:
    boxes: list[list[Box]]
    counts_before: list[int]
    counts_after: list[int]
    wall_clock: float = 0.0
    state_names: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.boxes) - 1

    def hull(self, step: int) -> Box:
        bs = self.boxes[step]
        return Box(np.min([b.lo for b in bs], axis=0), np.max([b.hi for b in bs], axis=0))

    def contains(self, step: int, states, tol: float = 1e-9) -> np.ndarray:
        """Whether each state (S, d) lies in some box of the given step."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        hit = np.zeros(len(x), dtype=bool)
        for b in self.boxes[step]:
            hit |= np.all((x >= b.lo - tol) & (x <= b.hi + tol), axis=1)
        return hit

    def containment(self, trajectories, tol: float = 1e-9) -> np.ndarray:
        """Per trajectory (N, T+1, d): is every step inside the flowpipe?"""
        tr = np.asarray(trajectories, dtype=float)
        ok = np.ones(len(tr), dtype=bool)
        for k in range(min(tr.shape[1], len(self.boxes))):
            ok &= self.contains(k, tr[:, k], tol)
        return ok

    def step_sizes(self, dims: Sequence[int]) -> np.ndarray:
        return step_sizes(self.boxes[1:], dims)

    def rss(self, dims: Sequence[int]) -> float:
        return float(np.sum(self.step_sizes(dims)))

    def max_rss(self, dims: Sequence[int]) -> float:
        s = self.step_sizes(dims)
        return float(s.max()) if s.size else 0.0

    def safe_distance(self, walls, dims: Sequence[int] = (0, 1)) -> float:
        a, c = dims
        best = math.inf
        for boxes in self.boxes:
            for b in boxes:
                rect = (b.lo[a], b.lo[c], b.hi[a], b.hi[c])
                for w in walls:
                    best = min(best, rect_segment_distance(rect, w))
                    if best == 0.0:
                        return 0.0
        return best

    def metrics(self, dims: Sequence[int], walls=None) -> dict:
        out = {
            "rss": self.rss(dims),
            "max_rss": self.max_rss(dims),
            "safe_distance": self.safe_distance(walls) if walls else None,
            "per_step_branch_counts": list(self.counts_after),
            "per_step_branch_counts_before_merge": list(self.counts_before),
        }
        return out

    def to_csv(self, path) -> None:
        names = list(self.state_names) or [f"x{i}" for i in range(self.boxes[0][0].ndim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "branch"] + [f"{n}_{s}" for n in names for s in ("lo", "hi")])
            for k, boxes in enumerate(self.boxes):
                for i, b in enumerate(boxes):
                    w.writerow([k, i] + [repr(float(v)) for d in range(b.ndim) for v in (b.lo[d], b.hi[d])])

    @classmethod
    def from_csv(cls, path) -> "Flowpipe":
        steps: dict[int, list[Box]] = {}
        with open(path) as fh:
            r = csv.reader(fh)
            header = next(r)
            names = tuple(h[:-3] for h in header[2::2])
            for row in r:
                vals = [float(v) for v in row[2:]]
                steps.setdefault(int(row[0]), []).append(Box(vals[0::2], vals[1::2]))
        boxes = [steps[k] for k in sorted(steps)]
        counts = [len(b) for b in boxes[1:]]
        return cls(boxes, counts, counts, state_names=names)


def initial_branches(x0: Box, splits, order: int, dim: int | None = None) -> list[Branch]:
    """Split the initial set into equal slices.

    An integer ``splits`` slices along ``dim`` (default: the widest dimension);
    a sequence gives the number of slices per dimension of a grid.
    """
    if np.ndim(splits) == 0:
        counts = np.ones(x0.ndim, dtype=int)
        widths = x0.width
        u = int(np.argmax(widths)) if dim is None else dim
        if widths[u] > 0:
            counts[u] = int(splits)
    else:
        counts = np.asarray(splits, dtype=int)
        if counts.size != x0.ndim or np.any(counts < 1):
            raise ValueError("need one positive slice count per dimension")
        counts = np.where(x0.width > 0, counts, 1)
    edges = []
    for u in range(x0.ndim):
        e = np.linspace(x0.lo[u], x0.hi[u], counts[u] + 1)
        e[0], e[-1] = x0.lo[u], x0.hi[u]
        edges.append(e)
    out = []
    for idx in np.ndindex(*counts):
        lo = np.array([edges[u][i] for u, i in enumerate(idx)])
        hi = np.array([edges[u][i + 1] for u, i in enumerate(idx)])
        out.append(Branch(TMVector.from_box(Box(lo, hi), order)))
    return out


def reach(system, noise, cfg: ReachConfig) -> Flowpipe:
    """Per-step reachable boxes for horizon steps; deterministic for a fixed seed."""
    t0 = time.perf_counter()
    x0 = cfg.x0 if cfg.x0 is not None else system.x0
    _check_domain(x0, system.domain, 0)
    branches = initial_branches(x0, cfg.init_splits, cfg.order, cfg.split_dim)
    boxes = [[b.box() for b in branches]]
    before, after = [], []
    for k in range(cfg.horizon):
        stepped = []
        for b in branches:
            stepped.extend(step_branch(b, system, noise, cfg))
            if len(stepped) > cfg.branch_cap:
                raise BranchExplosion(f"more than {cfg.branch_cap} branches at step {k + 1}")
        before.append(len(stepped))
        branches = cluster_and_enclose(stepped, cfg.max_branches, seed=cfg.seed * 100003 + k, eps=cfg.eps,
                                       frac=cfg.frac, clamp=getattr(system, "clamp_box", None))
        after.append(len(branches))
        step_boxes = [b.box() for b in branches]
        for bx in step_boxes:
            _check_domain(bx, system.domain, k + 1)
        boxes.append(step_boxes)
        log.debug("step %d: %d -> %d branches", k + 1, before[-1], after[-1])
    return Flowpipe(boxes, before, after, time.perf_counter() - t0, tuple(system.state_names))


def save_metrics(metrics: dict, path) -> None:
    def enc(v):
        if isinstance(v, float) and not math.isfinite(v):
            return "inf" if v > 0 else "-inf"
        return v

    Path(path).write_text(json.dumps({k: enc(v) for k, v in metrics.items()}, indent=2))
