"""Reference oracles shared by the unit and acceptance tests."""

import numpy as np

from confreach.conformal import TrajectoryDataset
from confreach.geometry import Box
from confreach.interval import Interval
from confreach.taylor import TaylorModel, tm_add, tm_compose_elementary, tm_mul, tm_scale, tm_sub

LINE = Box([0.0], [1.0])

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

FUNCS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp, "tan": np.tan}


def first_coord(states):
    return states[..., :1]


def make_dataset(states, errors, domain) -> TrajectoryDataset:
    """Dataset whose perception output is the first coordinate plus ``errors``."""
    states = np.asarray(states, dtype=float)
    errors = np.asarray(errors, dtype=float)
    outputs = states[..., :1] + errors[..., None]
    return TrajectoryDataset(np.arange(states.shape[0]), states, outputs, domain)


def random_tm(rng, nvars: int, order: int = 3, n_terms: int = 5, scale: float = 1.0) -> TaylorModel:
    exps = rng.integers(0, 2, size=(n_terms, nvars))
    exps = np.vstack([np.zeros((1, nvars), dtype=int), exps])
    while np.any(exps.sum(axis=1) > order):
        bad = exps.sum(axis=1) > order
        exps[bad] = rng.integers(0, 2, size=(int(bad.sum()), nvars))
    coefs = rng.uniform(-scale, scale, size=len(exps))
    r = abs(rng.normal(0, 0.01 * scale))
    lo = -r * rng.uniform(0, 1)
    return TaylorModel(exps, coefs, Interval(lo, lo + r), order)


def witness(tm: TaylorModel, pts, rng) -> np.ndarray:
    """Values of one concrete function enclosed by ``tm`` at ``pts``."""
    return tm.evaluate(pts) + rng.uniform(tm.rem.lo, tm.rem.hi, size=len(pts))


def encloses(tm: TaylorModel, pts, values, tol: float = 0.0) -> np.ndarray:
    p = tm.evaluate(pts)
    # the float polynomial evaluation itself carries rounding error
    slack = tol + 1e-12 * (1 + np.abs(p))
    return (values >= p + tm.rem.lo - slack) & (values <= p + tm.rem.hi + slack)


def fuzz_chain(rng, n_ops: int = 4, n_pts: int = 1000, nvars: int = 2, order: int = 3) -> int:
    """Apply a random operation chain to enclosed witnesses; return violations."""
    pts = rng.uniform(-1, 1, size=(n_pts, nvars))
    a = random_tm(rng, nvars, order, scale=0.5)
    va = witness(a, pts, rng)
    for _ in range(n_ops):
        op = rng.choice(["add", "sub", "scale", "mul", "compose"])
        if op == "compose":
            name = rng.choice(["sin", "cos", "tanh", "exp", "tan"])
            if name == "tan" and a.range().mag > 1.2:
                name = "sin"
            if name == "exp" and a.range().hi > 5:
                name = "tanh"
            a = tm_compose_elementary(a, str(name))
            va = FUNCS[str(name)](va)
        elif op == "scale":
            c = float(rng.normal())
            a, va = tm_scale(a, c), c * va
        else:
            b = random_tm(rng, nvars, order, scale=0.5)
            vb = witness(b, pts, rng)
            fn = {"add": tm_add, "sub": tm_sub, "mul": tm_mul}[str(op)]
            a = fn(a, b)
            va = {"add": va + vb, "sub": va - vb, "mul": va * vb}[str(op)]
        if a.range().mag > 1e6:
            break
    return int(np.sum(~encloses(a, pts, va)))


def walk_dataset(rng, n=300, horizon=20, split=0.5, sig=(0.1, 0.01)):
    """1-D drifting walks; noise sigma sig[0] below ``split`` and sig[1] above."""
    x0 = rng.uniform(0.05, 0.95, size=(n, 1))
    steps = rng.normal(0, 0.03, size=(n, horizon))
    states = np.clip(x0 + np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1), 0, 1)[..., None]
    sigma = np.where(states[..., 0] < split, sig[0], sig[1])
    return make_dataset(states, rng.standard_normal((n, horizon + 1)) * sigma, LINE)
