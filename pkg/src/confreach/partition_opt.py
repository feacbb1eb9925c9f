"""Genetic search over cut locations and per-region confidence allocations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .conformal import TaskFn, TrajectoryDataset, augmented_quantile, labelled_scores, min_feasible_alpha
from .geometry import Box, CutSet, Partition, get_nonempty_boxes, locate, repair_cuts

log = logging.getLogger(__name__)


class InfeasibleBudget(ValueError):
    """M regions cannot each receive at least min_alpha out of alpha."""


class GAFailure(RuntimeError):
    pass


@dataclass
class GAConfig:
    budgets: Sequence[int]
    population: int = 1000
    generations: int = 100
    p_cross_cuts: float = 0.5
    p_cross_alpha: float = 0.5
    p_mut_cuts: float = 0.3
    p_mut_alpha: float = 0.3
    gamma: float = 0.9
    alpha: float = 0.05
    min_alpha: float | None = None
    dynamic: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be an even number >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if any(b < 0 for b in self.budgets):
            raise ValueError("cut budgets must be non-negative")
        for name in ("p_cross_cuts", "p_cross_alpha", "p_mut_cuts", "p_mut_alpha"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(eq=False)
class Individual:
    cuts: CutSet
    partition: Partition
    alphas: np.ndarray
    fitness: float = math.inf
    etas: np.ndarray | None = None

    @property
    def n_regions(self) -> int:
        return self.partition.n_regions


class LossContext:
    """Dataset-derived quantities reused by every fitness evaluation."""

    def __init__(self, dataset: TrajectoryDataset, task: TaskFn, gamma: float, domain: Box | None = None):
        self.dataset = dataset
        self.domain = domain if domain is not None else dataset.domain
        if self.domain is None:
            raise ValueError("dataset has no domain")
        self.errors = dataset.errors(task)
        self.discount = np.broadcast_to(gamma ** np.arange(dataset.horizon + 1), self.errors.shape)
        self.gamma = gamma

    def etas(self, partition: Partition, alphas) -> np.ndarray:
        labels = locate(partition, self.dataset.states)
        scores = labelled_scores(labels, self.errors, partition.n_regions)
        return np.array([augmented_quantile(s, a) for s, a in zip(scores, alphas)])

    def loss(self, partition: Partition, etas) -> float:
        labels = locate(partition, self.dataset.states).ravel()
        return weighted_loss(labels, self.discount.ravel(), etas)


def weighted_loss(labels: np.ndarray, discount: np.ndarray, etas) -> float:
    etas = np.asarray(etas, dtype=float)
    m = etas.size
    counts = np.bincount(labels, minlength=m).astype(float)
    decay = np.bincount(labels, weights=discount, minlength=m)
    visited = counts > 0
    if np.any(np.isinf(etas[visited])):
        return math.inf
    return float(np.sum(decay[visited] * counts[visited] * etas[visited]))


def loss(dataset: TrajectoryDataset, partition: Partition, etas, gamma: float) -> float:
    """Sum over regions and in-region points of gamma**t * |D_i| * eta_i."""
    labels = locate(partition, dataset.states).ravel()
    discount = np.broadcast_to(gamma ** np.arange(dataset.horizon + 1), dataset.states.shape[:2]).ravel()
    return weighted_loss(labels, discount, etas)


def repair_confidences(alphas, alpha: float, min_alpha: float) -> np.ndarray:
    """Project candidate confidences onto {a_i >= min_alpha, sum a_i = alpha}.

    Each candidate is clamped to [min_alpha, alpha - (M-1) min_alpha]; the
    slack above min_alpha is then rescaled proportionally so that the total is
    exactly alpha.
    """
    c = np.asarray(alphas, dtype=float).copy()
    m = c.size
    if m == 0:
        return c
    slack = alpha - m * min_alpha
    if slack < -1e-15:
        raise InfeasibleBudget(f"{m} regions x min_alpha={min_alpha} exceeds alpha={alpha}")
    slack = max(slack, 0.0)
    c = np.clip(c, min_alpha, alpha - (m - 1) * min_alpha)
    excess = c - min_alpha
    total = excess.sum()
    if total <= 0.0:
        return np.full(m, min_alpha + slack / m)
    return min_alpha + slack * excess / total


def _uniform(m: int, alpha: float) -> np.ndarray:
    return np.full(m, alpha / m)


def _allocate(candidate, m: int, cfg: GAConfig, min_alpha: float) -> np.ndarray:
    if not cfg.dynamic or candidate is None:
        return _uniform(m, cfg.alpha)
    try:
        return repair_confidences(candidate, cfg.alpha, min_alpha)
    except InfeasibleBudget:
        return _uniform(m, cfg.alpha)


def make_individual(cuts: CutSet, alphas, ctx: LossContext) -> Individual:
    part = get_nonempty_boxes(cuts, ctx.dataset.states, ctx.domain)
    return Individual(cuts, part, np.asarray(alphas, dtype=float))


def evaluate(ind: Individual, ctx: LossContext) -> Individual:
    etas = ctx.etas(ind.partition, ind.alphas)
    ind.etas = etas
    ind.fitness = ctx.loss(ind.partition, etas)
    return ind


def crossover(a: Individual, b: Individual, cfg: GAConfig, ctx: LossContext, rng: np.random.Generator, min_alpha: float) -> Individual:
    child_cuts = []
    for ca, cb in zip(a.cuts, b.cuts):
        cu = ca.copy()
        # positional crossover up to the shorter list; the rest stays from parent a
        for i in range(len(cu)):
            if rng.random() < cfg.p_cross_cuts and i < len(cb):
                cu[i] = cb[i]
        child_cuts.append(cu)
    cuts = repair_cuts(child_cuts, ctx.domain, rng, cfg.budgets)
    part = get_nonempty_boxes(cuts, ctx.dataset.states, ctx.domain)
    m = part.n_regions
    candidate = None
    if m == a.n_regions == b.n_regions:
        candidate = a.alphas.copy()
        for i in range(m):
            if rng.random() < cfg.p_cross_alpha:
                candidate[i] = b.alphas[i]
    return Individual(cuts, part, _allocate(candidate, m, cfg, min_alpha))


def mutate(ind: Individual, cfg: GAConfig, ctx: LossContext, rng: np.random.Generator, min_alpha: float) -> Individual:
    new_cuts = []
    for u, cu in enumerate(ind.cuts):
        cu = cu.copy()
        lo, hi = ctx.domain.lo[u], ctx.domain.hi[u]
        for i in range(len(cu)):
            if rng.random() < cfg.p_mut_cuts:
                cu[i] = rng.uniform(lo, hi)
        new_cuts.append(cu)
    cuts = repair_cuts(new_cuts, ctx.domain, rng, cfg.budgets)
    part = get_nonempty_boxes(cuts, ctx.dataset.states, ctx.domain)
    m = part.n_regions
    candidate = None
    if m == ind.n_regions:
        candidate = ind.alphas.copy()
        for i in range(m):
            if rng.random() < cfg.p_mut_alpha:
                candidate[i] = rng.uniform(min_alpha, cfg.alpha)
    return Individual(cuts, part, _allocate(candidate, m, cfg, min_alpha))


@dataclass
class GAResult:
    best: Individual
    trace: list[dict] = field(default_factory=list)
    min_alpha: float = 0.0


def _summary(pop: list[Individual], generation: int) -> dict:
    fits = np.array([p.fitness for p in pop])
    best = int(np.argmin(fits))
    finite = fits[np.isfinite(fits)]
    return {
        "generation": generation,
        "best_loss": float(fits[best]),
        "mean_loss": float(finite.mean()) if finite.size else math.inf,
        "M_best": pop[best].n_regions,
    }


def run_ga(dataset: TrajectoryDataset, cfg: GAConfig, task: TaskFn, domain: Box | None = None) -> GAResult:
    """Elitist GA: keep the better half, refill with mutated crossovers of it."""
    ctx = LossContext(dataset, task, cfg.gamma, domain)
    if len(cfg.budgets) != ctx.domain.ndim:
        raise ValueError("need one cut budget per state dimension")
    min_alpha = cfg.min_alpha if cfg.min_alpha is not None else min_feasible_alpha(dataset.n)

    pop = []
    for p in range(cfg.population):
        rng = np.random.default_rng([cfg.seed, 0, p])
        cuts = repair_cuts([np.empty(0)] * ctx.domain.ndim, ctx.domain, rng, cfg.budgets)
        ind = make_individual(cuts, None, ctx)
        ind.alphas = _uniform(ind.n_regions, cfg.alpha)
        pop.append(evaluate(ind, ctx))
    trace = [_summary(pop, 0)]

    half = cfg.population // 2
    for g in range(1, cfg.generations + 1):
        order = np.argsort([p.fitness for p in pop], kind="stable")
        elite = [pop[i] for i in order[:half]]
        new_pop = list(elite)
        sel = np.random.default_rng([cfg.seed, g])
        while len(new_pop) < cfg.population:
            ia, ib = sel.integers(0, half, size=2)
            rng = np.random.default_rng([cfg.seed, g, len(new_pop)])
            child = crossover(elite[ia], elite[ib], cfg, ctx, rng, min_alpha)
            child = mutate(child, cfg, ctx, rng, min_alpha)
            new_pop.append(evaluate(child, ctx))
        pop = new_pop
        trace.append(_summary(pop, g))
        log.debug("generation %d best %.6g", g, trace[-1]["best_loss"])

    best = min(pop, key=lambda p: p.fitness)
    if not math.isfinite(best.fitness):
        ms = sorted({p.n_regions for p in pop})
        raise GAFailure(
            f"all {len(pop)} individuals have infinite loss after {cfg.generations} generations "
            f"(region counts seen: {ms}, min_alpha={min_alpha:.3g}, N={dataset.n})"
        )
    return GAResult(replace(best), trace, min_alpha)
