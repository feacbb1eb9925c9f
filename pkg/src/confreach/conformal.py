"""Conformal bounds on perception error: scalar quantiles, region-based
trajectory-wide bounds, the per-step union-bound baseline, and coverage.

Every calibration multiset is augmented with one ``+inf`` score before the
order statistic ``ceil((n + 1)(1 - alpha))`` is taken over the ``n`` augmented
scores.  Perception errors are reduced to scalars with the max-norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import Box, Partition, locate

TaskFn = Callable[[np.ndarray], np.ndarray]


@dataclass(eq=False)
class TrajectoryDataset:
    """Fixed-horizon rollouts: ``states`` (N, T+1, d), ``outputs`` (N, T+1, m)."""

    ids: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    domain: Box | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=int).reshape(-1)
        self.states = np.asarray(self.states, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.outputs.ndim == 2:
            self.outputs = self.outputs[..., None]
        if self.states.ndim != 3 or self.outputs.ndim != 3:
            raise ValueError("states/outputs must have shape (N, T+1, dim)")
        if self.states.shape[:2] != self.outputs.shape[:2] or self.states.shape[0] != self.ids.size:
            raise ValueError("inconsistent trajectory counts or horizons")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states must be finite")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "TrajectoryDataset":
        idx = np.asarray(idx)
        return TrajectoryDataset(self.ids[idx], self.states[idx], self.outputs[idx], self.domain, dict(self.meta))

    def split(self, sizes: Sequence[int]) -> list["TrajectoryDataset"]:
        """Consecutive disjoint chunks of the given sizes."""
        if sum(sizes) > self.n:
            raise ValueError(f"requested {sum(sizes)} trajectories, have {self.n}")
        out, start = [], 0
        for s in sizes:
            out.append(self.subset(np.arange(start, start + s)))
            start += s
        return out

    def errors(self, task: TaskFn) -> np.ndarray:
        """Max-norm perception error per (trajectory, step)."""
        return np.max(np.abs(task(self.states) - self.outputs), axis=-1)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i, tid in enumerate(self.ids):
                rec = {"id": int(tid), "states": self.states[i].tolist(), "outputs": self.outputs[i].tolist()}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path, domain: Box | None = None) -> "TrajectoryDataset":
        ids, states, outputs = [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                ids.append(rec["id"])
                states.append(rec["states"])
                outputs.append(rec["outputs"])
        if not ids:
            raise ValueError(f"{path}: no trajectories")
        return cls(np.array(ids), np.array(states), np.array(outputs), domain)


def _order_index(n: int, alpha: float) -> int:
    # rounding guards against products like 20 * 0.95 = 18.999999999999996
    return math.ceil(round((n + 1) * (1.0 - alpha), 9))


def cp_quantile(scores, alpha: float) -> float:
    """The ceil((N+1)(1-alpha))-th smallest score, or +inf if that exceeds N."""
    z = np.asarray(scores, dtype=float).reshape(-1)
    if z.size == 0:
        raise ValueError("cp_quantile needs at least one score")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k = _order_index(z.size, alpha)
    if k > z.size:
        return math.inf
    return float(np.partition(z, k - 1)[k - 1])


def augmented_quantile(scores, alpha: float) -> float:
    """cp_quantile of ``scores`` with one +inf appended."""
    z = np.append(np.asarray(scores, dtype=float).reshape(-1), math.inf)
    return cp_quantile(z, alpha)


def min_feasible_alpha(n: int, margin: float = 1.1) -> float:
    """Smallest per-region alpha keeping the augmented quantile of ``n`` scores finite.

    With ``n`` finite scores plus ``+inf`` the index is ceil((n+2)(1-alpha)),
    finite iff it is at most ``n``, i.e. alpha >= 2/(n+2).
    """
    if n < 1:
        raise ValueError("need at least one score")
    return margin * 2.0 / (n + 2)


def _in_boxes(points: np.ndarray, boxes: Sequence[Box], domain: Box) -> np.ndarray:
    mask = np.zeros(points.shape[:-1], dtype=bool)
    for b in boxes:
        closed = b.hi >= domain.hi
        upper = np.where(closed, points <= b.hi, points < b.hi)
        mask |= np.all((points >= b.lo) & upper, axis=-1)
    return mask


def region_scores(dataset: TrajectoryDataset, region: Sequence[Box], task: TaskFn, domain: Box | None = None) -> np.ndarray:
    """Max in-region perception error of every trajectory that visits ``region``."""
    domain = domain if domain is not None else dataset.domain
    if domain is None:
        raise ValueError("a domain is required to resolve boundary membership")
    inside = _in_boxes(dataset.states, region, domain)
    err = np.where(inside, dataset.errors(task), -np.inf)
    visited = inside.any(axis=1)
    return err.max(axis=1)[visited]


def partition_scores(dataset: TrajectoryDataset, partition: Partition, task: TaskFn) -> list[np.ndarray]:
    """region_scores for every region of ``partition`` in one pass."""
    labels = locate(partition, dataset.states)
    return labelled_scores(labels, dataset.errors(task), partition.n_regions)


def labelled_scores(labels: np.ndarray, errors: np.ndarray, n_regions: int) -> list[np.ndarray]:
    out = []
    for rid in range(n_regions):
        inside = labels == rid
        visited = inside.any(axis=1)
        out.append(np.where(inside, errors, -np.inf).max(axis=1)[visited])
    return out


@dataclass(frozen=True, eq=False)
class GlobalBound:
    """Piecewise-constant noise bound: eta[i] applies inside region i."""

    partition: Partition
    etas: np.ndarray
    alphas: np.ndarray
    counts: np.ndarray
    alpha: float

    def eta_at(self, states) -> np.ndarray:
        return self.etas[locate(self.partition, states)]

    @property
    def infinite_regions(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.isinf(self.etas))]

    def to_dict(self) -> dict:
        return {
            "method": "state",
            "alpha": float(self.alpha),
            "regions": [
                {"id": i, "eta": _enc(self.etas[i]), "alpha_i": float(self.alphas[i]), "n_scores": int(self.counts[i])}
                for i in range(len(self.etas))
            ],
            "partition": self.partition.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GlobalBound":
        part = Partition.from_dict(data["partition"])
        regs = sorted(data["regions"], key=lambda r: r["id"])
        return cls(
            part,
            np.array([_dec(r["eta"]) for r in regs]),
            np.array([r["alpha_i"] for r in regs], dtype=float),
            np.array([r.get("n_scores", 0) for r in regs], dtype=int),
            float(data["alpha"]),
        )


@dataclass(frozen=True, eq=False)
class TimewiseBound:
    """Per-step bounds b_0..b_T from a union bound over the T+1 steps."""

    steps: np.ndarray
    alpha: float

    @property
    def alpha_step(self) -> float:
        return self.alpha / len(self.steps)

    @property
    def infinite_steps(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.isinf(self.steps))]

    def to_dict(self) -> dict:
        return {"method": "time", "alpha": float(self.alpha), "steps": [_enc(b) for b in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "TimewiseBound":
        return cls(np.array([_dec(b) for b in data["steps"]]), float(data["alpha"]))


def _enc(x: float):
    return "inf" if np.isinf(x) else float(x)


def _dec(x) -> float:
    return math.inf if x == "inf" else float(x)


def regional_bounds(
    dataset: TrajectoryDataset,
    partition: Partition,
    alphas: Sequence[float],
    task: TaskFn,
    alpha: float | None = None,
) -> GlobalBound:
    """eta_i = quantile of region i's scores plus +inf at level 1 - alphas[i]."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size != partition.n_regions:
        raise ValueError(f"{partition.n_regions} regions but {alphas.size} confidences")
    total = float(alphas.sum()) if alpha is None else float(alpha)
    if alphas.sum() > total * (1 + 1e-9):
        raise ValueError(f"confidences sum to {alphas.sum()} > alpha={total}")
    scores = partition_scores(dataset, partition, task)
    etas = np.array([augmented_quantile(s, a) for s, a in zip(scores, alphas)])
    counts = np.array([s.size for s in scores])
    return GlobalBound(partition, etas, alphas, counts, total)


def timewise_baseline(dataset: TrajectoryDataset, alpha: float, task: TaskFn) -> TimewiseBound:
    err = dataset.errors(task)
    a_step = alpha / err.shape[1]
    return TimewiseBound(np.array([augmented_quantile(err[:, k], a_step) for k in range(err.shape[1])]), alpha)


def bound_matrix(dataset: TrajectoryDataset, bound: GlobalBound | TimewiseBound) -> np.ndarray:
    """The bound in force at every (trajectory, step) of ``dataset``."""
    if isinstance(bound, GlobalBound):
        return bound.eta_at(dataset.states)
    if len(bound.steps) != dataset.horizon + 1:
        raise ValueError("timewise bound horizon does not match the dataset")
    return np.broadcast_to(bound.steps, (dataset.n, dataset.horizon + 1))


def empirical_coverage(testset: TrajectoryDataset, bound: GlobalBound | TimewiseBound, task: TaskFn) -> float:
    """Fraction of trajectories whose error stays within the bound at every step."""
    ok = testset.errors(task) <= bound_matrix(testset, bound)
    return float(np.mean(np.all(ok, axis=1)))


def save_bound(bound: GlobalBound | TimewiseBound, path) -> None:
    Path(path).write_text(json.dumps(bound.to_dict(), indent=2))


def load_bound(path) -> GlobalBound | TimewiseBound:
    data = json.loads(Path(path).read_text())
    return GlobalBound.from_dict(data) if data["method"] == "state" else TimewiseBound.from_dict(data)
