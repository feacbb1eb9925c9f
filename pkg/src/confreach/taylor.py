"""Taylor models over the normalized box [-1, 1]^n.

A model is a multivariate polynomial (exponent matrix plus coefficient
vector) together with an interval remainder.  Physical domains are handled by
the caller through affine variables, see :meth:`TaylorModel.affine`.

Floating-point coefficient arithmetic is made sound by recovering the exact
rounding error of every coefficient sum and product (TwoSum / TwoProduct) and
folding a bound on it into the remainder.  Operations that happen to be exact
therefore leave the remainder untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Box
from .interval import Interval, _down, _up, add_up, icos, mul_up, iexp, ipoly, isin, itan, itanh, two_prod, two_sum

DEFAULT_ORDER = 3
_U = 2.0**-53


class TMDomainError(ValueError):
    """An elementary function was composed outside its safe range."""


_FSUM_MAX = 64


def _sum_bounds(vals) -> tuple[float, float]:
    """Lower and upper bounds on the exact sum of ``vals``."""
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if vals.size == 0:
        return 0.0, 0.0
    if vals.size == 1:
        return float(vals[0]), float(vals[0])
    if vals.size <= _FSUM_MAX:
        s = math.fsum(vals)
        # every double is a multiple of 2**-1074, so a correctly rounded zero residual is exact
        if math.fsum(np.append(vals, -s)) == 0.0:
            return s, s
        return _down(s), _up(s)
    s = float(vals.sum())
    err = _up(1.01 * vals.size * _U * float(np.abs(vals).sum()))
    return _down(s - err), _up(s + err)


def _sum_down(vals) -> float:
    return _sum_bounds(vals)[0]


def _sum_up(vals) -> float:
    return _sum_bounds(vals)[1]


def _abs_bound(errs) -> float:
    """Upper bound on sum(|errs|)."""
    e = np.abs(np.asarray(errs, dtype=float).reshape(-1))
    e = e[e > 0]
    if e.size == 0:
        return 0.0
    return _sum_up(e)


def _sym(r: float) -> Interval:
    return Interval(-r, r) if r > 0 else Interval(0.0, 0.0)


def _monomial_ranges(exps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Range [lo, hi] of each monomial over [-1, 1]^n."""
    deg = exps.sum(axis=1)
    even = ~np.any(exps & 1, axis=1)
    lo = np.where(deg == 0, 1.0, np.where(even, 0.0, -1.0))
    return lo, np.ones(len(exps))


def _poly_range(exps: np.ndarray, coefs: np.ndarray) -> Interval:
    if coefs.size == 0:
        return Interval(0.0, 0.0)
    mlo, mhi = _monomial_ranges(exps)
    # c * [mlo, mhi] with mlo in {-1, 0, 1} and mhi = 1 is exact
    a, b = coefs * mlo, coefs * mhi
    return Interval(_sum_down(np.minimum(a, b)), _sum_up(np.maximum(a, b)))


def _canonical(exps: np.ndarray, coefs: np.ndarray):
    keep = coefs != 0.0
    exps, coefs = exps[keep], coefs[keep]
    if len(coefs) > 1:
        order = np.lexsort(exps.T[::-1])
        exps, coefs = exps[order], coefs[order]
    return exps, coefs


def _unique_rows(exps: np.ndarray):
    """np.unique(exps, axis=0, return_inverse=True), via integer keys when they fit."""
    n = exps.shape[1]
    base = int(exps.max()) + 1 if exps.size else 1
    if n == 0 or n * math.log2(max(base, 2)) >= 62:
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1)
    weights = base ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keys = exps @ weights
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    return exps[first], inv.reshape(-1)


def _group_sum(exps: np.ndarray, vals: np.ndarray):
    """Combine duplicate monomials.  Returns (exps, sums, error bound)."""
    if len(vals) == 0:
        return exps, vals, 0.0
    uniq, inv = _unique_rows(exps)
    sums = np.bincount(inv, weights=vals, minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    multi = counts > 1
    if not np.any(multi):
        return uniq, sums, 0.0
    absum = np.bincount(inv, weights=np.abs(vals), minlength=len(uniq))
    # recursive summation of k terms errs by at most (k-1) u sum|t| (first order)
    err = np.sum((counts[multi] - 1) * absum[multi]) * _U * 1.01
    return uniq, sums, _up(float(err), 2)


@dataclass(frozen=True, eq=False)
class TaylorModel:
    exps: np.ndarray
    coefs: np.ndarray
    rem: Interval
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        exps = np.asarray(self.exps, dtype=np.int64)
        coefs = np.asarray(self.coefs, dtype=float).reshape(-1)
        if exps.ndim != 2 or exps.shape[0] != coefs.size:
            raise ValueError("exponent matrix and coefficients disagree")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if np.any(exps < 0) or (coefs.size and exps.sum(axis=1).max() > self.order):
            raise ValueError("monomial degree exceeds the model order")
        if not np.all(np.isfinite(coefs)):
            raise ValueError("non-finite coefficient")
        if len(coefs) > 1:
            uniq, _ = _unique_rows(exps)
            if len(uniq) < len(coefs):
                # repeated monomials are merged; the float summation error joins the remainder
                exps, coefs, err = _group_sum(exps, coefs)
                object.__setattr__(self, "rem", self.rem + _sym(err))
        exps, coefs = _canonical(exps, coefs)
        object.__setattr__(self, "exps", exps)
        object.__setattr__(self, "coefs", coefs)

    # construction
    @classmethod
    def const(cls, c: float, nvars: int, order: int = DEFAULT_ORDER, rem: Interval | None = None) -> "TaylorModel":
        return cls(np.zeros((1, nvars), dtype=np.int64), [float(c)], rem or Interval(0.0, 0.0), order)

    @classmethod
    def var(cls, i: int, nvars: int, order: int = DEFAULT_ORDER) -> "TaylorModel":
        e = np.zeros((1, nvars), dtype=np.int64)
        e[0, i] = 1
        return cls(e, [1.0], Interval(0.0, 0.0), order)

    @classmethod
    def affine(cls, lo: float, hi: float, i: int, nvars: int, order: int = DEFAULT_ORDER) -> "TaylorModel":
        """mid + rad * x_i, whose range over x_i in [-1, 1] covers [lo, hi]."""
        iv = Interval(lo, hi)
        if iv.width == 0.0:
            return cls.const(lo, nvars, order)
        e = np.zeros((2, nvars), dtype=np.int64)
        e[1, i] = 1
        return cls(e, [iv.mid, iv.rad], Interval(0.0, 0.0), order)

    @property
    def nvars(self) -> int:
        return self.exps.shape[1]

    @property
    def domain(self) -> Box:
        return Box(-np.ones(self.nvars), np.ones(self.nvars))

    @property
    def degree(self) -> int:
        return int(self.exps.sum(axis=1).max()) if self.coefs.size else 0

    def _check(self, other: "TaylorModel"):
        if self.nvars != other.nvars or self.order != other.order:
            raise ValueError(
                f"Taylor model domain mismatch: ({self.nvars} vars, order {self.order}) "
                f"vs ({other.nvars} vars, order {other.order})"
            )

    def constant_term(self) -> float:
        z = np.flatnonzero(self.exps.sum(axis=1) == 0)
        return float(self.coefs[z[0]]) if z.size else 0.0

    def is_affine(self) -> bool:
        return self.degree <= 1

    def poly_range(self) -> Interval:
        return _poly_range(self.exps, self.coefs)

    def range(self) -> Interval:
        return self.poly_range() + self.rem

    def evaluate(self, pts) -> np.ndarray:
        """Polynomial value at points of [-1, 1]^n, shape (S, n) -> (S,)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.coefs.size == 0:
            return np.zeros(len(pts))
        mons = np.prod(pts[:, None, :] ** self.exps[None, :, :], axis=2)
        return mons @ self.coefs

    def with_vars(self, nvars: int) -> "TaylorModel":
        """Embed into a larger variable set by appending unused variables."""
        if nvars < self.nvars:
            raise ValueError("cannot drop variables")
        if nvars == self.nvars:
            return self
        pad = np.zeros((len(self.coefs), nvars - self.nvars), dtype=np.int64)
        return TaylorModel(np.hstack([self.exps, pad]), self.coefs, self.rem, self.order)

    def select_vars(self, keep) -> "TaylorModel":
        keep = np.asarray(keep, dtype=int)
        dropped = np.setdiff1d(np.arange(self.nvars), keep)
        if dropped.size and np.any(self.exps[:, dropped] != 0):
            raise ValueError("cannot drop a variable in use")
        return TaylorModel(self.exps[:, keep], self.coefs, self.rem, self.order)

    def used_vars(self) -> np.ndarray:
        return np.any(self.exps != 0, axis=0)

    def sweep(self, tol: float) -> "TaylorModel":
        """Move non-constant terms with |coef| < tol into the remainder."""
        small = (np.abs(self.coefs) < tol) & (self.exps.sum(axis=1) > 0)
        if not np.any(small):
            return self
        bound = _poly_range(self.exps[small], self.coefs[small])
        return TaylorModel(self.exps[~small], self.coefs[~small], self.rem + bound, self.order)

    # operators
    def __add__(self, other):
        if isinstance(other, TaylorModel):
            return tm_add(self, other)
        return tm_add_const(self, float(other))

    __radd__ = __add__

    def __neg__(self):
        return TaylorModel(self.exps, -self.coefs, -self.rem, self.order)

    def __sub__(self, other):
        if isinstance(other, TaylorModel):
            return tm_sub(self, other)
        return tm_add_const(self, -float(other))

    def __rsub__(self, other):
        return tm_add_const(-self, float(other))

    def __mul__(self, other):
        if isinstance(other, TaylorModel):
            return tm_mul(self, other)
        return tm_scale(self, float(other))

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "nvars": self.nvars,
            "terms": [{"exp": [int(v) for v in e], "coef": float(c)} for e, c in zip(self.exps, self.coefs)],
            "remainder": [self.rem.lo, self.rem.hi],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaylorModel":
        n = int(data["nvars"])
        exps = np.array([t["exp"] for t in data["terms"]], dtype=np.int64).reshape(-1, n)
        coefs = np.array([t["coef"] for t in data["terms"]], dtype=float)
        return cls(exps, coefs, Interval(*data["remainder"]), int(data["order"]))

    def __repr__(self) -> str:
        terms = " + ".join(
            f"{c:.6g}" + "".join(f"*x{i}^{p}" if p > 1 else f"*x{i}" for i, p in enumerate(e) if p)
            for e, c in zip(self.exps, self.coefs)
        )
        return f"TM({terms or '0'}, {self.rem!r})"


def tm_add(a: TaylorModel, b: TaylorModel) -> TaylorModel:
    a._check(b)
    exps = np.vstack([a.exps, b.exps])
    if len(exps) == 0:
        return TaylorModel(exps, [], a.rem + b.rem, a.order)
    uniq, inv = _unique_rows(exps)
    ca = np.zeros(len(uniq))
    cb = np.zeros(len(uniq))
    ca[inv[: len(a.coefs)]] = a.coefs
    cb[inv[len(a.coefs):]] = b.coefs
    s, e = two_sum(ca, cb)
    return TaylorModel(uniq, s, a.rem + b.rem + _sym(_abs_bound(e)), a.order)


def tm_sub(a: TaylorModel, b: TaylorModel) -> TaylorModel:
    return tm_add(a, -b)


def tm_add_const(a: TaylorModel, c: float) -> TaylorModel:
    return tm_add(a, TaylorModel.const(c, a.nvars, a.order))


def tm_scale(a: TaylorModel, c: float) -> TaylorModel:
    c = float(c)
    if not math.isfinite(c):
        raise ValueError("scale factor must be finite")
    p, e = two_prod(a.coefs, c)
    return TaylorModel(a.exps, p, a.rem * c + _sym(_abs_bound(e)), a.order)


_EXACT_TRUNC_PAIRS = 4096


def _abs_sum_up(vals: np.ndarray) -> float:
    """Upper bound on sum(|vals|) without exact summation."""
    v = np.abs(vals)
    if v.size <= 1:
        return float(v.sum())
    s = float(v.sum())
    return _up(s * (1.0 + 1.01 * v.size * _U)) if s > 0 else 0.0


def tm_mul(a: TaylorModel, b: TaylorModel) -> TaylorModel:
    a._check(b)
    d = a.order
    n = a.nvars
    pa, pb = a.poly_range(), b.poly_range()
    base = pa * b.rem + pb * a.rem + a.rem * b.rem
    if a.coefs.size == 0 or b.coefs.size == 0:
        return TaylorModel(np.zeros((0, n), dtype=np.int64), [], base, d)
    da, db = a.exps.sum(axis=1), b.exps.sum(axis=1)
    ia, ib = np.nonzero(da[:, None] + db[None, :] <= d)
    exps = a.exps[ia] + b.exps[ib]
    prod, perr = two_prod(a.coefs[ia], b.coefs[ib])
    uniq, sums, serr = _group_sum(exps, prod)
    rounding = _sym(add_up(_abs_bound(perr), serr))

    # truncated terms: exact monomial ranges when few, degree-bucket bound otherwise
    n_trunc = a.coefs.size * b.coefs.size - len(ia)
    if n_trunc == 0:
        trunc = Interval(0.0, 0.0)
    elif n_trunc <= _EXACT_TRUNC_PAIRS:
        ta, tb = np.nonzero(da[:, None] + db[None, :] > d)
        texps = a.exps[ta] + b.exps[tb]
        tprod, terr = two_prod(a.coefs[ta], b.coefs[tb])
        trunc = _poly_range(texps, tprod) + _sym(_abs_bound(terr))
    else:
        bound = 0.0
        for k in np.unique(da):
            ak = _abs_sum_up(a.coefs[da == k])
            bk = _abs_sum_up(b.coefs[db > d - k])
            if ak and bk:
                bound = add_up(bound, _up(ak * bk))
        trunc = _sym(bound)
    return TaylorModel(uniq, sums, base + trunc + rounding, d)


def interval_eval(a: TaylorModel) -> Interval:
    return a.range()


def average_tm(tms: Sequence[TaylorModel]) -> TaylorModel:
    if not tms:
        raise ValueError("average of an empty list")
    acc = tms[0]
    for t in tms[1:]:
        acc = tm_add(acc, t)
    k = len(tms)
    if k == 1:
        return acc
    return tm_scale(acc, 1.0 / k) if _exact_recip(k) else _div(acc, k)


def _exact_recip(k: int) -> bool:
    return k & (k - 1) == 0


def _div(a: TaylorModel, k: int) -> TaylorModel:
    # 1/k is inexact for k not a power of two; enclose the error of the rounded reciprocal
    r = 1.0 / k
    out = tm_scale(a, r)
    slack = abs(r * k - 1.0) + _U
    pr = a.range()
    return TaylorModel(out.exps, out.coefs, out.rem + _sym(_up(pr.mag * slack / k * 2.0)), out.order)


def union_enclosure(tms: Sequence[TaylorModel], reference: TaylorModel | None = None) -> TaylorModel:
    """One model whose value set contains each member's value set pointwise."""
    if not tms:
        raise ValueError("union of an empty list")
    n = max(t.nvars for t in tms)
    tms = [t.with_vars(n) for t in tms]
    ref = average_tm(tms) if reference is None else reference.with_vars(n)
    lo, hi = 0.0, 0.0
    for t in tms:
        diff = interval_eval(tm_sub(t, ref))
        lo, hi = min(lo, diff.lo), max(hi, diff.hi)
    return TaylorModel(ref.exps, ref.coefs, ref.rem + Interval(lo, hi), ref.order)


def shrink_wrap(a: TaylorModel) -> TaylorModel:
    """Affine model over one fresh variable (appended last) covering a's range."""
    b = interval_eval(a)
    return TaylorModel.affine(b.lo, b.hi, a.nvars, a.nvars + 1, a.order)


def needs_shrink_wrap(a: TaylorModel, eps: float = 1e-6, frac: float = 0.1) -> bool:
    w = a.rem.width
    return w > eps and w > frac * interval_eval(a).width


# elementary functions: (derivative enclosure at order k over an interval)
def _sin_deriv(k: int, iv: Interval) -> Interval:
    return [isin(iv), icos(iv), -isin(iv), -icos(iv)][k % 4]


def _cos_deriv(k: int, iv: Interval) -> Interval:
    return [icos(iv), -isin(iv), -icos(iv), isin(iv)][k % 4]


def _exp_deriv(k: int, iv: Interval) -> Interval:
    return iexp(iv)


def _poly_deriv_table(sign: int, kmax: int) -> list[np.ndarray]:
    """Coefficients of P_k(t) with P_0 = t, P_{k+1} = P_k' * (1 + sign * t^2)."""
    out = [np.array([0.0, 1.0])]
    for _ in range(kmax):
        p = out[-1]
        dp = np.array([i * p[i] for i in range(1, len(p))]) if len(p) > 1 else np.zeros(1)
        q = np.zeros(len(dp) + 2)
        q[: len(dp)] += dp
        q[2: len(dp) + 2] += sign * dp
        out.append(q)
    return out


def _tanh_deriv(k: int, iv: Interval) -> Interval:
    return ipoly(_poly_deriv_table(-1, k)[k], itanh(iv))


def _tan_deriv(k: int, iv: Interval) -> Interval:
    return ipoly(_poly_deriv_table(1, k)[k], itan(iv))


_DERIVS: dict[str, Callable[[int, Interval], Interval]] = {
    "sin": _sin_deriv,
    "cos": _cos_deriv,
    "exp": _exp_deriv,
    "tanh": _tanh_deriv,
    "tan": _tan_deriv,
}


def _inv_factorial(k: int) -> Interval:
    f = math.factorial(k)
    r = 1.0 / f
    if f & (f - 1) == 0:
        return Interval(r, r)
    return Interval(_down(r), _up(r))


def tm_compose_elementary(a: TaylorModel, f: str) -> TaylorModel:
    """f(a) via a Taylor expansion of f around the midpoint of a's range."""
    if f not in _DERIVS:
        raise ValueError(f"unsupported function {f!r}")
    deriv = _DERIVS[f]
    d = a.order
    rng = interval_eval(a)
    if not (math.isfinite(rng.lo) and math.isfinite(rng.hi)):
        raise TMDomainError(f"{f} of an unbounded model")
    c = rng.mid
    r = rng.rad
    try:
        coef_iv = [deriv(k, Interval.point(c)) * _inv_factorial(k) for k in range(d + 2)]
        lag = deriv(d + 2, rng) * _inv_factorial(d + 2)
    except ValueError as exc:
        raise TMDomainError(str(exc)) from exc
    # the degree d+1 term is taken at the centre and bounded over |h| <= r,
    # leaving the Lagrange term one order higher
    top = coef_iv.pop()

    coefs = [iv.mid for iv in coef_iv]
    # coefficient enclosure error times |h|^k <= r^k
    cerr = 0.0
    rk = 1.0
    for iv in coef_iv:
        cerr = add_up(cerr, mul_up(iv.rad, rk))
        rk = mul_up(rk, r)
    tail = top * Interval(-r, r) ** (d + 1) + lag * Interval(-r, r) ** (d + 2)

    h = tm_add_const(a, -c)
    out = TaylorModel.const(coefs[d], a.nvars, d)
    for k in range(d - 1, -1, -1):
        out = tm_add_const(tm_mul(out, h), coefs[k])
    return TaylorModel(out.exps, out.coefs, out.rem + tail + _sym(cerr), d)


def tm_sin(a):
    return tm_compose_elementary(a, "sin")


def tm_cos(a):
    return tm_compose_elementary(a, "cos")


def tm_tanh(a):
    return tm_compose_elementary(a, "tanh")


class TMVector:
    """Taylor models for each state component, over one shared variable set."""

    def __init__(self, comps: Sequence[TaylorModel]):
        comps = list(comps)
        if not comps:
            raise ValueError("empty TM vector")
        n = max(c.nvars for c in comps)
        order = comps[0].order
        if any(c.order != order for c in comps):
            raise ValueError("components must share the model order")
        self.comps = [c.with_vars(n) for c in comps]

    @classmethod
    def from_box(cls, box: Box, order: int = DEFAULT_ORDER) -> "TMVector":
        """One variable per non-degenerate dimension of ``box``."""
        wide = [i for i in range(box.ndim) if box.hi[i] > box.lo[i]]
        n = len(wide)
        comps = []
        for i in range(box.ndim):
            if i in wide:
                comps.append(TaylorModel.affine(box.lo[i], box.hi[i], wide.index(i), n, order))
            else:
                comps.append(TaylorModel.const(box.lo[i], n, order))
        return cls(comps)

    def __len__(self) -> int:
        return len(self.comps)

    def __getitem__(self, i) -> TaylorModel:
        return self.comps[i]

    @property
    def nvars(self) -> int:
        return self.comps[0].nvars

    @property
    def order(self) -> int:
        return self.comps[0].order

    def box(self) -> Box:
        ivs = [interval_eval(c) for c in self.comps]
        return Box([iv.lo for iv in ivs], [iv.hi for iv in ivs])

    def replace(self, i: int, tm: TaylorModel) -> "TMVector":
        comps = list(self.comps)
        comps[i] = tm
        return TMVector(comps)

    def add_vars(self, k: int) -> "TMVector":
        return TMVector([c.with_vars(self.nvars + k) for c in self.comps])

    def shrink_wrap(self, idx: Sequence[int]) -> "TMVector":
        """Shrink-wrap the selected components, each onto its own fresh variable."""
        idx = list(idx)
        if not idx:
            return self
        n = self.nvars
        out = [c.with_vars(n + len(idx)) for c in self.comps]
        for j, i in enumerate(idx):
            b = interval_eval(self.comps[i])
            out[i] = TaylorModel.affine(b.lo, b.hi, n + j, n + len(idx), self.order)
        return TMVector(out)

    def wrap_onto(self, box: Box) -> "TMVector":
        """Fully shrink-wrapped vector whose range is exactly ``box``."""
        return TMVector.from_box(box, self.order)

    def needs_wrap(self, eps: float = 1e-6, frac: float = 0.1) -> list[int]:
        return [i for i, c in enumerate(self.comps) if needs_shrink_wrap(c, eps, frac)]

    def compact(self) -> "TMVector":
        used = np.zeros(self.nvars, dtype=bool)
        for c in self.comps:
            used |= c.used_vars()
        if used.all():
            return self
        keep = np.flatnonzero(used)
        return TMVector([c.select_vars(keep) for c in self.comps])

    def linear_part(self) -> np.ndarray:
        """Matrix of first-order coefficients, (components, nvars)."""
        out = np.zeros((len(self.comps), self.nvars))
        for i, c in enumerate(self.comps):
            lin = c.exps.sum(axis=1) == 1
            if np.any(lin):
                out[i, np.argmax(c.exps[lin], axis=1)] = c.coefs[lin]
        return out

    def rebase(self) -> "TMVector":
        """Re-parametrize over one fresh variable per component.

        The set is enclosed in a parallelotope c + U z, with U the left singular
        vectors of the linear part, so that correlations between components
        survive.  The coordinates z are bounded by Taylor-model evaluation of
        U^T (x - c); the residual x - c - U z caused by U not being exactly
        orthogonal in floating point is bounded and kept in the remainders.
        """
        d = len(self.comps)
        box = self.box()
        if not np.all(np.isfinite(box.lo)) or not np.all(np.isfinite(box.hi)):
            raise ValueError("cannot rebase an unbounded model")
        lin = self.linear_part()
        if not np.any(lin):
            return self.wrap_onto(box)
        u, _, _ = np.linalg.svd(lin, full_matrices=True)
        c = box.mid
        dev = [tm_add_const(x, -float(ci)) for x, ci in zip(self.comps, c)]
        z = []
        for i in range(d):
            acc = TaylorModel.const(0.0, self.nvars, self.order)
            for j in range(d):
                if u[j, i] != 0.0:
                    acc = tm_add(acc, tm_scale(dev[j], u[j, i]))
            z.append(acc)
        out = []
        zr = [interval_eval(zi) for zi in z]
        fresh = [TaylorModel.affine(r.lo, r.hi, i, d, self.order) for i, r in enumerate(zr)]
        for j in range(d):
            recon = TaylorModel.const(0.0, self.nvars, self.order)
            new = TaylorModel.const(float(c[j]), d, self.order)
            for i in range(d):
                if u[j, i] != 0.0:
                    recon = tm_add(recon, tm_scale(z[i], u[j, i]))
                    new = tm_add(new, tm_scale(fresh[i], u[j, i]))
            resid = interval_eval(tm_sub(dev[j], recon))
            out.append(TaylorModel(new.exps, new.coefs, new.rem + resid, self.order))
        return TMVector(out)

    def rebase_box(self) -> "TMVector":
        return self.wrap_onto(self.box())

    def sweep(self, tol: float) -> "TMVector":
        return TMVector([c.sweep(tol) for c in self.comps])

    def is_box(self) -> bool:
        """True if every component is affine in its own variable with zero remainder."""
        seen = set()
        for c in self.comps:
            if c.rem.lo != 0.0 or c.rem.hi != 0.0 or c.degree > 1:
                return False
            lin = np.flatnonzero(c.exps.sum(axis=1) == 1)
            if lin.size > 1:
                return False
            if lin.size == 1:
                v = int(np.flatnonzero(c.exps[lin[0]])[0])
                if v in seen:
                    return False
                seen.add(v)
        return True

    def evaluate(self, pts) -> np.ndarray:
        return np.stack([c.evaluate(pts) for c in self.comps], axis=-1)

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.comps]}
