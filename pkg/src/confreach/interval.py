"""Closed real intervals with outward-rounded arithmetic.

Sums and products are rounded outward only when they are inexact: the exact
rounding error is recovered with the TwoSum / Dekker TwoProduct error-free
transforms and the result is nudged by one ulp in the required direction.
Library transcendental functions are widened by a few ulps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_INF = math.inf


def _down(x: float, ulps: int = 1) -> float:
    for _ in range(ulps):
        x = math.nextafter(x, -_INF)
    return x


def _up(x: float, ulps: int = 1) -> float:
    for _ in range(ulps):
        x = math.nextafter(x, _INF)
    return x


_SPLIT = 134217729.0  # 2**27 + 1
_SAFE = 1e290


def two_sum(a, b):
    """s, e with s = fl(a + b) and a + b = s + e exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    """p, e with p = fl(a * b) and a * b = p + e exactly (barring under/overflow)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def add_down(a: float, b: float) -> float:
    s, e = two_sum(a, b)
    if not math.isfinite(s) or not math.isfinite(e):
        return _down(s) if math.isfinite(s) else s
    return _down(s) if e < 0 else s


def add_up(a: float, b: float) -> float:
    s, e = two_sum(a, b)
    if not math.isfinite(s) or not math.isfinite(e):
        return _up(s) if math.isfinite(s) else s
    return _up(s) if e > 0 else s


def _mul(a: float, b: float) -> tuple[float, float]:
    # 0 * inf is treated as 0: an exactly-zero factor annihilates
    if a == 0.0 or b == 0.0:
        return 0.0, 0.0
    p = a * b
    if not math.isfinite(p) or abs(a) > _SAFE or abs(b) > _SAFE or p == 0.0 or abs(p) < 1e-290:
        return p, math.nan
    return two_prod(a, b)


def mul_down(a: float, b: float) -> float:
    p, e = _mul(a, b)
    if math.isnan(e):
        return _down(p) if math.isfinite(p) else p
    return _down(p) if e < 0 else p


def mul_up(a: float, b: float) -> float:
    p, e = _mul(a, b)
    if math.isnan(e):
        return _up(p) if math.isfinite(p) else p
    return _up(p) if e > 0 else p


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")
        if self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @classmethod
    def hull_of(cls, *xs: "Interval | float") -> "Interval":
        ivs = [as_interval(x) for x in xs]
        return cls(min(iv.lo for iv in ivs), max(iv.hi for iv in ivs))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        """Half-width, rounded up so that [mid - rad, mid + rad] covers self."""
        m = self.mid
        return _up(max(m - self.lo, self.hi - m))

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def contains_interval(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol

    def hull(self, other: "Interval | float") -> "Interval":
        return Interval.hull_of(self, other)

    def intersect(self, other: "Interval") -> "Interval | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else None

    def widen(self, pad: float) -> "Interval":
        return Interval(self.lo - pad, self.hi + pad)

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other) -> "Interval":
        o = as_interval(other)
        return Interval(add_down(self.lo, o.lo), add_up(self.hi, o.hi))

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        o = as_interval(other)
        return Interval(add_down(self.lo, -o.hi), add_up(self.hi, -o.lo))

    def __rsub__(self, other) -> "Interval":
        return as_interval(other) - self

    def __mul__(self, other) -> "Interval":
        o = as_interval(other)
        pairs = [(self.lo, o.lo), (self.lo, o.hi), (self.hi, o.lo), (self.hi, o.hi)]
        return Interval(min(mul_down(x, y) for x, y in pairs), max(mul_up(x, y) for x, y in pairs))

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Interval":
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers are supported")
        if k == 0:
            return Interval(1.0, 1.0)
        lo, hi = _ipow_point(self.lo, k), _ipow_point(self.hi, k)
        if k % 2 == 1 or self.lo >= 0:
            return Interval(lo.lo, hi.hi)
        if self.hi <= 0:
            return Interval(hi.lo, lo.hi)
        return Interval(0.0, max(lo.hi, hi.hi))

    def __repr__(self) -> str:
        return f"[{self.lo!r}, {self.hi!r}]"


def _ipow_point(x: float, k: int) -> Interval:
    acc = Interval.point(x)
    for _ in range(k - 1):
        acc = acc * x
    return acc


def as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(float(x))


def _contains_angle(iv: Interval, phase: float) -> bool:
    """True if some phase + 2*pi*k lies in iv."""
    k = math.ceil((iv.lo - phase) / (2.0 * math.pi))
    return phase + 2.0 * math.pi * k <= iv.hi


def icos(iv: Interval) -> Interval:
    if iv.width >= 2.0 * math.pi:
        return Interval(-1.0, 1.0)
    a, b = math.cos(iv.lo), math.cos(iv.hi)
    lo, hi = min(a, b), max(a, b)
    if _contains_angle(iv, 0.0):
        hi = 1.0
    if _contains_angle(iv, math.pi):
        lo = -1.0
    return Interval(max(-1.0, _down(lo, 2)), min(1.0, _up(hi, 2)))


def isin(iv: Interval) -> Interval:
    if iv.width >= 2.0 * math.pi:
        return Interval(-1.0, 1.0)
    a, b = math.sin(iv.lo), math.sin(iv.hi)
    lo, hi = min(a, b), max(a, b)
    if _contains_angle(iv, 0.5 * math.pi):
        hi = 1.0
    if _contains_angle(iv, -0.5 * math.pi):
        lo = -1.0
    return Interval(max(-1.0, _down(lo, 2)), min(1.0, _up(hi, 2)))


def iexp(iv: Interval) -> Interval:
    return Interval(max(0.0, _down(math.exp(iv.lo), 2)), _up(math.exp(iv.hi), 2))


def itanh(iv: Interval) -> Interval:
    return Interval(max(-1.0, _down(math.tanh(iv.lo), 2)), min(1.0, _up(math.tanh(iv.hi), 2)))


def itan(iv: Interval) -> Interval:
    """Range of tan over iv; iv must lie strictly inside one branch (-pi/2, pi/2) + k*pi."""
    k = math.floor((iv.lo + 0.5 * math.pi) / math.pi)
    shift = k * math.pi
    if not (-0.5 * math.pi < iv.lo - shift and iv.hi - shift < 0.5 * math.pi):
        raise ValueError(f"tan is unbounded on {iv!r}")
    return Interval(_down(math.tan(iv.lo), 2), _up(math.tan(iv.hi), 2))


def ipoly(coefs, iv: Interval) -> Interval:
    """Horner evaluation of sum(coefs[i] * t**i) over t in iv."""
    acc = Interval.point(0.0)
    for c in reversed(list(coefs)):
        acc = acc * iv + float(c)
    return acc
