"""Case-study systems, surrogate perception noise and dataset generation.

Each system exposes a vectorized simulator (``task``, ``control``, ``step``)
used to generate data, plus Taylor-model hooks used by the reach engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import truncnorm

from .conformal import TrajectoryDataset
from .geometry import Box
from .interval import Interval, icos, isin
from .taylor import TaylorModel, TMVector, tm_compose_elementary, tm_mul, tm_scale

# ---------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseBand:
    region: Box
    sigma: float
    dist: str = "truncated-gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.dist not in ("uniform", "truncated-gaussian"):
            raise ValueError(f"unknown noise distribution {self.dist!r}")

    @property
    def limit(self) -> float:
        """Largest possible absolute error."""
        return 3.0 * self.sigma if self.dist == "truncated-gaussian" else math.sqrt(3.0) * self.sigma


@dataclass
class NoiseProfile:
    """Additive output noise whose spread depends on the region of the true state.

    Bands are checked in order; the first band containing a state applies.
    ``sigma`` is the standard deviation of the untruncated gaussian, or of the
    uniform law.
    """

    bands: list[NoiseBand]
    out_dim: int = 1

    def band_index(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        idx = np.full(states.shape[:-1], -1, dtype=int)
        for k in range(len(self.bands) - 1, -1, -1):
            b = self.bands[k].region
            inside = np.all((states >= b.lo) & (states <= b.hi), axis=-1)
            idx[inside] = k
        if np.any(idx < 0):
            bad = states[idx < 0][0]
            raise ValueError(f"state {bad} is not covered by the noise profile")
        return idx

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        idx = self.band_index(states)
        out = np.zeros(states.shape[:-1] + (self.out_dim,))
        for k, band in enumerate(self.bands):
            mask = idx == k
            cnt = int(mask.sum())
            if cnt == 0 or band.sigma == 0:
                continue
            if band.dist == "uniform":
                e = rng.uniform(-band.limit, band.limit, size=(cnt, self.out_dim))
            else:
                e = band.sigma * truncnorm.rvs(-3.0, 3.0, size=(cnt, self.out_dim), random_state=rng)
            out[mask] = e
        return out

    def limit_at(self, states) -> np.ndarray:
        lim = np.array([b.limit for b in self.bands])
        return lim[self.band_index(states)]

    def to_dict(self) -> dict:
        return {
            "out_dim": self.out_dim,
            "bands": [
                {"region": b.region.to_list(), "sigma": b.sigma, "dist": b.dist} for b in self.bands
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseProfile":
        bands = [
            NoiseBand(Box.from_intervals(b["region"]), float(b["sigma"]), b.get("dist", "truncated-gaussian"))
            for b in data["bands"]
        ]
        return cls(bands, int(data.get("out_dim", 1)))


def two_regime_profile(domain: Box, dim: int, band: tuple[float, float], sigma_low: float, ratio: float = 10.0,
                       dist: str = "truncated-gaussian") -> NoiseProfile:
    """High noise (sigma_low * ratio) for states with coordinate ``dim`` in ``band``."""
    lo, hi = domain.lo.copy(), domain.hi.copy()
    lo[dim], hi[dim] = band
    return NoiseProfile([NoiseBand(Box(lo, hi), sigma_low * ratio, dist), NoiseBand(domain, sigma_low, dist)])


# ---------------------------------------------------------------- mountain car

MC_DOMAIN = Box([-1.2, -0.07], [0.6, 0.07])
MC_X0 = Box([-0.55, 0.0], [-0.45, 0.0])
MC_GOAL = 0.6


def mc_step(state, u):
    """One step of the mountain-car map, clamped to the state domain."""
    state = np.asarray(state, dtype=float)
    p, v = state[..., 0], state[..., 1]
    u = np.clip(np.asarray(u, dtype=float).reshape(p.shape), -1.0, 1.0)
    p2 = np.clip(p + v, MC_DOMAIN.lo[0], MC_DOMAIN.hi[0])
    v2 = np.clip(v + 0.0015 * u - 0.0025 * np.cos(3.0 * p), MC_DOMAIN.lo[1], MC_DOMAIN.hi[1])
    return np.stack([p2, v2], axis=-1)


def mc_controller(y, v, kv: float = 70.0, kp: float = -1.5, offset: float = 1.1):
    """u = tanh(kv * v + kp * (y + offset)), y the perceived position."""
    return np.tanh(kv * np.asarray(v) + kp * (np.asarray(y) + offset))


@dataclass
class MountainCar:
    kv: float = 70.0
    kp: float = -1.5
    offset: float = 1.1
    domain: Box = field(default_factory=lambda: MC_DOMAIN)
    x0: Box = field(default_factory=lambda: MC_X0)
    horizon: int = 90

    name = "mountain-car"
    state_names = ("p", "v")
    controller_kind = "smooth"
    out_dim = 1
    rss_dims = (0,)

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def clamp_box(self) -> Box:
        return self.domain

    def task(self, states):
        return np.asarray(states)[..., :1]

    def control(self, states, y):
        return mc_controller(np.asarray(y)[..., 0], np.asarray(states)[..., 1], self.kv, self.kp, self.offset)

    def step(self, states, u):
        return mc_step(states, u)

    # Taylor-model hooks
    def tm_task(self, x: TMVector) -> list[TaylorModel]:
        return [x[0]]

    def tm_control(self, x: TMVector, y: Sequence[TaylorModel]) -> TaylorModel:
        arg = tm_scale(x[1], self.kv) + tm_scale(y[0] + self.offset, self.kp)
        return tm_compose_elementary(arg, "tanh")

    def tm_step(self, x: TMVector, u: TaylorModel) -> TMVector:
        p, v = x[0], x[1]
        cos3p = tm_compose_elementary(tm_scale(p, 3.0), "cos")
        return TMVector([p + v, v + tm_scale(u, 0.0015) - tm_scale(cos3p, 0.0025)])


# ---------------------------------------------------------------- kinematic car

CAR_CA = 1.633
CAR_CM = 0.2
CAR_CH = 4.0
CAR_LF = 0.225
CAR_LR = 0.225
CAR_THROTTLE = 16.0
CAR_DELTA_MAX = math.radians(15.0)
CAR_DT = 0.1


def car_deriv(state, delta, throttle: float = CAR_THROTTLE):
    state = np.asarray(state, dtype=float)
    v, th = state[..., 2], state[..., 3]
    delta = np.asarray(delta, dtype=float)
    dx = v * np.cos(th)
    dy = v * np.sin(th)
    dv = -CAR_CA * v + CAR_CA * CAR_CM * (throttle - CAR_CH)
    dth = v / (CAR_LF + CAR_LR) * np.tan(delta)
    return np.stack([dx, dy, np.broadcast_to(dv, dx.shape), dth], axis=-1)


def car_step(state, delta, dt: float = CAR_DT, h: float = 1e-3):
    """Advance the bicycle model by ``dt`` with steering held at ``delta`` (RK4, step h)."""
    x = np.asarray(state, dtype=float)
    delta = np.clip(np.asarray(delta, dtype=float), -CAR_DELTA_MAX, CAR_DELTA_MAX)
    n = max(1, int(round(dt / h)))
    h = dt / n
    for _ in range(n):
        k1 = car_deriv(x, delta)
        k2 = car_deriv(x + 0.5 * h * k1, delta)
        k3 = car_deriv(x + 0.5 * h * k2, delta)
        k4 = car_deriv(x + h * k3, delta)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def bang_bang_controller(e_theta, e_d, kp: float = 1.0, delta_max: float = CAR_DELTA_MAX):
    s = kp * (np.asarray(e_theta) + np.asarray(e_d))
    return np.where(s >= 0, delta_max, -delta_max)


@dataclass(frozen=True)
class LTrack:
    """Centreline: straight up from ``start`` to ``corner``, then right to ``end``.

    The first leg has heading pi/2, the second heading 0.  Walls run at
    ``half_width`` on both sides of the centreline.  The reference switches to
    the second leg ``lookahead`` metres before the corner bisector so that the
    car, with its minimum turning radius, can make the turn.
    """

    start: tuple[float, float] = (0.0, 0.0)
    corner: tuple[float, float] = (0.0, 6.0)
    end: tuple[float, float] = (20.0, 6.0)
    half_width: float = 1.0
    lookahead: float = 1.5

    @property
    def segments(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        s, c, e = (np.array(p, dtype=float) for p in (self.start, self.corner, self.end))
        return [(s, c, 0.5 * math.pi), (c, e, 0.0)]

    @property
    def walls(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        (sx, sy), (cx, cy), (ex, ey) = self.start, self.corner, self.end
        w = self.half_width
        return [
            ((cx - w, sy), (cx - w, cy + w)),  # outer, first leg
            ((cx - w, cy + w), (ex, cy + w)),  # outer, second leg
            ((cx + w, sy), (cx + w, cy - w)),  # inner, first leg
            ((cx + w, cy - w), (ex, cy - w)),  # inner, second leg
        ]

    def guard(self, x, y):
        """Negative while the first leg is the reference."""
        return (np.asarray(x) - self.corner[0]) + (np.asarray(y) - self.corner[1]) + self.lookahead

    def in_extent(self, x, y) -> np.ndarray:
        w = self.half_width
        x, y = np.asarray(x), np.asarray(y)
        leg1 = (y >= self.start[1] - w) & (y <= self.corner[1] + w) & (np.abs(x - self.corner[0]) <= 3 * w)
        leg2 = (x >= self.corner[0] - w) & (x <= self.end[0] + w) & (np.abs(y - self.corner[1]) <= 3 * w)
        return leg1 | leg2

    def reference_error(self, state) -> tuple[np.ndarray, np.ndarray]:
        """(e_theta, e_d): heading deviation and signed distance, left negative."""
        state = np.asarray(state, dtype=float)
        x, y, th = state[..., 0], state[..., 1], state[..., 3]
        if not np.all(self.in_extent(x, y)):
            raise ValueError("state beyond the track extent")
        first = self.guard(x, y) < 0
        e_theta = np.empty(x.shape)
        e_d = np.empty(x.shape)
        for sel, (a, _, phi) in ((first, self.segments[0]), (~first, self.segments[1])):
            e_d[sel] = (x[sel] - a[0]) * math.sin(phi) - (y[sel] - a[1]) * math.cos(phi)
            e_theta[sel] = _wrap(phi - th[sel])
        return e_theta, e_d


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


CAR_DOMAIN = Box([-5.0, -3.0, 0.0, -2.0 * math.pi], [25.0, 12.0, 5.0, 2.0 * math.pi])
CAR_X0 = Box([-0.1, 0.5, 2.4, 0.5 * math.pi], [0.1, 1.5, 2.4, 0.5 * math.pi])


@dataclass
class KinematicCar:
    track: LTrack = field(default_factory=LTrack)
    kp: float = 1.0
    delta_max: float = CAR_DELTA_MAX
    domain: Box = field(default_factory=lambda: CAR_DOMAIN)
    x0: Box = field(default_factory=lambda: CAR_X0)
    horizon: int = 50
    substeps: int = 5

    name = "car"
    state_names = ("x", "y", "v", "theta")
    controller_kind = "sign"
    out_dim = 1
    rss_dims = (0, 1)
    clamp_box = None

    @property
    def state_dim(self) -> int:
        return 4

    @property
    def actions(self) -> tuple[float, float]:
        """Steering for a non-negative / negative switching value."""
        return self.delta_max, -self.delta_max

    def task(self, states):
        e_theta, e_d = self.track.reference_error(states)
        return (e_theta + e_d)[..., None]

    def control(self, states, y):
        return bang_bang_controller(np.asarray(y)[..., 0], 0.0, self.kp, self.delta_max)

    def step(self, states, u):
        return car_step(states, u)

    # Taylor-model hooks
    def tm_task(self, x: TMVector) -> list[TaylorModel] | Interval:
        """Total reference error as a model, or only its range when the box
        straddles the corner bisector or the heading may wrap."""
        box = x.box()
        g = self.track.guard
        lo = g(box.lo[0], box.lo[1])
        hi = g(box.hi[0], box.hi[1])
        th = Interval(box.lo[3], box.hi[3])
        pieces = []
        exact = True
        for k, (a, _, phi) in enumerate(self.track.segments):
            if (k == 0 and lo >= 0) or (k == 1 and hi < 0):
                continue
            e_d = tm_scale(x[0] - float(a[0]), math.sin(phi)) - tm_scale(x[1] - float(a[1]), math.cos(phi))
            if phi - math.pi < th.lo and th.hi < phi + math.pi:
                pieces.append(e_d + (phi - x[3]))
            else:
                # the wrapped heading error can be anything in [-pi, pi]
                pieces.append(e_d.range() + Interval(-math.pi, math.pi))
                exact = False
        if len(pieces) == 1 and exact:
            return pieces
        out = None
        for p in pieces:
            r = p if isinstance(p, Interval) else p.range()
            out = r if out is None else out.hull(r)
        return out

    def switch_range(self, x: TMVector, eta: float) -> Interval:
        t = self.tm_task(x)
        r = t[0].range() if isinstance(t, list) else t
        return (r + Interval(-eta, eta)) * self.kp

    def tm_step(self, x: TMVector, delta: float) -> TMVector:
        h = CAR_DT / self.substeps
        for _ in range(self.substeps):
            x = self._euler(x, delta, h)
        return x

    def _field_iv(self, b: list[Interval], delta: float) -> list[Interval]:
        v, th = b[2], b[3]
        w = math.tan(delta) / (CAR_LF + CAR_LR)
        acc = v * (-CAR_CA) + CAR_CA * CAR_CM * (CAR_THROTTLE - CAR_CH)
        return [v * icos(th), v * isin(th), acc, v * w]

    def _second_iv(self, b: list[Interval], delta: float) -> list[Interval]:
        v, th = b[2], b[3]
        w = math.tan(delta) / (CAR_LF + CAR_LR)
        acc = v * (-CAR_CA) + CAR_CA * CAR_CM * (CAR_THROTTLE - CAR_CH)
        v2w = (v ** 2) * w
        return [acc * icos(th) - v2w * isin(th), acc * isin(th) + v2w * icos(th), acc * (-CAR_CA), acc * w]

    def flow_enclosure(self, box: Box, delta: float, h: float) -> list[Interval]:
        """A box containing every trajectory from ``box`` over [0, h]."""
        b = box.dims
        step = Interval(0.0, h)
        f = self._field_iv(b, delta)
        e = [bi + step * fi for bi, fi in zip(b, f)]
        for k in range(30):
            e = [ei.widen(0.1 * ei.width + 1e-9 * 2**k) for ei in e]
            f = self._field_iv(e, delta)
            cand = [bi + step * fi for bi, fi in zip(b, f)]
            if all(ei.contains_interval(ci) for ei, ci in zip(e, cand)):
                return cand
            e = [ei.hull(ci) for ei, ci in zip(e, cand)]
        raise RuntimeError("no a-priori flow enclosure found")

    def _euler(self, x: TMVector, delta: float, h: float) -> TMVector:
        enc = self.flow_enclosure(x.box(), delta, h)
        trunc = [iv * (0.5 * h * h) for iv in self._second_iv(enc, delta)]
        px, py, v, th = x.comps
        w = math.tan(delta) / (CAR_LF + CAR_LR)
        c = tm_compose_elementary(th, "cos")
        s = tm_compose_elementary(th, "sin")
        nx = px + tm_scale(tm_mul(v, c), h)
        ny = py + tm_scale(tm_mul(v, s), h)
        nv = v + tm_scale(v, -CAR_CA * h) + CAR_CA * CAR_CM * (CAR_THROTTLE - CAR_CH) * h
        nth = th + tm_scale(v, w * h)
        out = [nx, ny, nv, nth]
        return TMVector([TaylorModel(t.exps, t.coefs, t.rem + r, t.order) for t, r in zip(out, trunc)])


# ---------------------------------------------------------------- datasets


def rollout(model, x0: np.ndarray, horizon: int, noise: NoiseProfile | None, rng: np.random.Generator,
            clip=None):
    """Simulate the closed loop from initial states x0 (N, d).

    ``clip`` optionally maps states to a per-state noise bound; sampled noise
    is clipped to it.  Returns (states (N, T+1, d), outputs (N, T+1, m)).
    """
    x = np.asarray(x0, dtype=float)
    n = x.shape[0]
    states = np.empty((n, horizon + 1, model.state_dim))
    outputs = np.empty((n, horizon + 1, model.out_dim))
    for t in range(horizon + 1):
        states[:, t] = x
        e = noise.sample(x, rng) if noise is not None else np.zeros((n, model.out_dim))
        if clip is not None:
            lim = np.asarray(clip(x), dtype=float).reshape(n, 1)
            e = np.clip(e, -lim, lim)
        y = model.task(x) + e
        outputs[:, t] = y
        if t < horizon:
            x = model.step(x, model.control(x, y))
    return states, outputs


def sample_initial(box: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(box.lo, box.hi, size=(n, box.ndim))


def generate_dataset(model, noise: NoiseProfile | None, n: int, horizon: int | None = None, x0: Box | None = None,
                     seed: int = 0, id_offset: int = 0) -> TrajectoryDataset:
    """n closed-loop rollouts with IID uniform initial states on x0."""
    horizon = model.horizon if horizon is None else horizon
    x0 = model.x0 if x0 is None else x0
    if not model.domain.contains_box(x0):
        raise ValueError("initial set must lie inside the model domain")
    rng = np.random.default_rng(seed)
    init = sample_initial(x0, n, rng)
    states, outputs = rollout(model, init, horizon, noise, rng)
    meta = {"model": model.name, "seed": seed, "horizon": horizon}
    return TrajectoryDataset(np.arange(id_offset, id_offset + n), states, outputs, model.domain, meta)
