"""Unstable holonomies and the past reduction for window observables.

States of the two-sided skew product f(omega, theta) = (sigma omega, theta + omega_0)
are stored as a finite symbol array over indices lo..hi plus a canonical fill
symbol beyond it (one fill on each side). Every operation is vectorised over
leading batch axes: symbols have shape (..., hi - lo + 1, d), theta (..., d).

For an observable depending on omega_j (|j| <= w) and theta, the holonomy sum
sum_n [phi(f^-n b) - phi(f^-n a)] between points sharing their past has no
nonzero term once n >= w, so everything below is an exact finite sum:

    eta(a)   = h(a, P a)
    phi_-(a) = phi(f^-1 a) - eta(f^-1 a) + eta(a)

where P replaces the future (j >= 1) by a fixed symbol. Then phi_- ignores
the future and phi - phi_- o f = eta - eta o f.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .torus_measure import TorusMeasure, wrap

__all__ = [
    "BiSequence",
    "SkewPoint",
    "WindowObservable",
    "HolonomyPair",
    "WindowExhausted",
    "NotOnSameFiber",
    "shift_metric",
    "skew_distance",
    "skew_forward",
    "skew_inverse",
    "future_project",
    "unstable_holonomy",
    "reduce_to_past",
    "verify_cohomology",
    "fiber_partner",
    "holonomy_properties",
    "mean_preservation",
    "holder_seminorm_estimate",
    "random_points",
    "resample_symbols",
    "tabular_observable",
    "theta_observable",
]

SYMBOL_EQ = 1e-15


class WindowExhausted(ValueError):
    pass


class NotOnSameFiber(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BiSequence:
    symbols: np.ndarray  # (..., n, d), index j stored at position j - lo
    lo: int
    fill_left: np.ndarray
    fill_right: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=float)
        if s.ndim < 2:
            raise ValueError("symbols need shape (..., n, d)")
        object.__setattr__(self, "symbols", s)
        d = s.shape[-1]
        for name in ("fill_left", "fill_right"):
            f = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (d,))
            object.__setattr__(self, name, f)

    @classmethod
    def centred(cls, symbols, fill=0.0, depth: int | None = None) -> "BiSequence":
        """Symbols for indices -depth..depth (depth inferred from the length)."""
        s = np.asarray(symbols, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        n = s.shape[-2]
        if depth is None:
            if n % 2 == 0:
                raise ValueError("a centred window needs odd length")
            depth = n // 2
        return cls(s, -depth, fill, fill)

    @property
    def hi(self) -> int:
        return self.lo + self.symbols.shape[-2] - 1

    @property
    def dim(self) -> int:
        return self.symbols.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.symbols.shape[:-2]

    def get(self, j: int) -> np.ndarray:
        if j < self.lo:
            return np.broadcast_to(self.fill_left, self.batch_shape + (self.dim,))
        if j > self.hi:
            return np.broadcast_to(self.fill_right, self.batch_shape + (self.dim,))
        return self.symbols[..., j - self.lo, :]

    def window(self, a: int, b: int) -> np.ndarray:
        """Symbols at indices a..b inclusive, shape (..., b - a + 1, d)."""
        if a >= self.lo and b <= self.hi:
            return self.symbols[..., a - self.lo : b - self.lo + 1, :]
        return np.stack([self.get(j) for j in range(a, b + 1)], axis=-2)

    def shifted(self, offset: int) -> "BiSequence":
        """Relabel index j as j + offset (offset=-1 is the left shift sigma)."""
        return BiSequence(self.symbols, self.lo + offset, self.fill_left, self.fill_right)


@dataclass(frozen=True, eq=False)
class SkewPoint:
    seq: BiSequence
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        if t.ndim == 0:
            t = t[None]
        object.__setattr__(self, "theta", wrap(t))


def _differs(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.any(np.abs(x - y) > SYMBOL_EQ, axis=-1)


def shift_metric(x: BiSequence, y: BiSequence):
    """2^-m with m the smallest |j| at which the sequences differ; 0 if none."""
    lo = min(x.lo, y.lo)
    hi = max(x.hi, y.hi)
    shape = np.broadcast_shapes(x.batch_shape, y.batch_shape)
    best = np.full(shape, np.inf)
    for j in range(lo, hi + 1):
        diff = _differs(x.get(j), y.get(j))
        best = np.where(diff, np.minimum(best, abs(j)), best)
    # beyond both stored ranges only the fills are compared
    tail_l = _differs(x.fill_left, y.fill_left)
    tail_r = _differs(x.fill_right, y.fill_right)
    if tail_l:
        best = np.minimum(best, abs(lo - 1))
    if tail_r:
        best = np.minimum(best, abs(hi + 1))
    out = np.where(np.isinf(best), 0.0, 2.0 ** (-np.where(np.isinf(best), 0, best)))
    return float(out) if out.ndim == 0 else out


def _torus_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(wrap(a - b))
    return np.max(np.minimum(d, 1.0 - d), axis=-1)


def skew_distance(a: SkewPoint, b: SkewPoint):
    """Shift distance of the sequences plus torus distance of the fibres."""
    return shift_metric(a.seq, b.seq) + _torus_dist(a.theta, b.theta)


def skew_forward(pt: SkewPoint) -> SkewPoint:
    """(sigma omega, theta + omega_0)."""
    if pt.seq.lo > 0 or pt.seq.hi < 0:
        raise WindowExhausted("window exhausted")
    return SkewPoint(pt.seq.shifted(-1), wrap(pt.theta + pt.seq.get(0)))


def skew_inverse(pt: SkewPoint) -> SkewPoint:
    """(sigma^-1 omega, theta - omega_-1), the inverse of :func:`skew_forward`."""
    if pt.seq.lo > -1:
        raise WindowExhausted("window exhausted")
    return SkewPoint(pt.seq.shifted(1), wrap(pt.theta - pt.seq.get(-1)))


def future_project(pt: SkewPoint, future=None) -> SkewPoint:
    """Replace every omega_j with j >= 1 by the fixed future symbol (default: right fill)."""
    seq = pt.seq
    p = seq.fill_right if future is None else np.broadcast_to(np.asarray(future, dtype=float), (seq.dim,))
    s = seq.symbols.copy()
    start = max(1 - seq.lo, 0)
    if start < s.shape[-2]:
        s[..., start:, :] = p
    return SkewPoint(BiSequence(s, seq.lo, seq.fill_left, p), pt.theta)


@dataclass(frozen=True, eq=False)
class WindowObservable:
    """phi(omega, theta) read through omega_{-w..w}.

    ``evaluator(symbols, theta)`` receives symbols of shape (..., 2w+1, d)
    (index -w first) and theta of shape (..., d).
    """

    w: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    alpha: float = 1.0
    name: str = ""

    def at(self, pt: SkewPoint) -> np.ndarray:
        return np.asarray(self.evaluator(pt.seq.window(-self.w, self.w), pt.theta), dtype=float)

    def __call__(self, pt: SkewPoint) -> np.ndarray:
        return self.at(pt)

    def check_window(self, rng: np.random.Generator, sampler: TorusMeasure | None = None,
                     n: int = 100, tol: float = 1e-12) -> float:
        """Perturb symbols outside |j| <= w and return the largest change seen."""
        pts = random_points(sampler, n, self.w + 3, rng, dim=None)
        a = self.at(pts)
        far = [j for j in range(pts.seq.lo, pts.seq.hi + 1) if abs(j) > self.w]
        b = self.at(resample_symbols(pts, far, sampler, rng))
        change = float(np.max(np.abs(a - b)))
        if change > tol:
            raise ValueError(f"observable reads symbols outside its window (change {change:g})")
        return change


def _same_fiber(a: SkewPoint, b: SkewPoint) -> None:
    lo = min(a.seq.lo, b.seq.lo)
    for j in range(lo, 1):
        if np.any(_differs(a.seq.get(j), b.seq.get(j))):
            raise NotOnSameFiber("not on same fiber")
    if np.any(_differs(a.seq.fill_left, b.seq.fill_left)) or np.any(_torus_dist(a.theta, b.theta) > SYMBOL_EQ):
        raise NotOnSameFiber("not on same fiber")


def unstable_holonomy(phi: WindowObservable, a: SkewPoint, b: SkewPoint, terms: int | None = None,
                      validate: bool = True):
    """sum_{n=1..w} [phi(f^-n b) - phi(f^-n a)] for a, b with the same past and theta."""
    if validate:
        _same_fiber(a, b)
    n_terms = phi.w if terms is None else terms
    total = 0.0
    for _ in range(n_terms):
        a, b = skew_inverse(a), skew_inverse(b)
        total = total + (phi.at(b) - phi.at(a))
    return total


def _eta_at(phi: WindowObservable, pt: SkewPoint, future) -> np.ndarray:
    return unstable_holonomy(phi, pt, future_project(pt, future), validate=False) + np.zeros(pt.theta.shape[:-1])


@dataclass(frozen=True, eq=False)
class HolonomyPair:
    phi_minus: WindowObservable
    eta: WindowObservable
    check: dict = field(default_factory=dict)


def reduce_to_past(phi: WindowObservable, symbol_measure: TorusMeasure | None = None,
                   future=0.0, fill=0.0, rng: np.random.Generator | None = None,
                   n_check: int = 1000, tol: float = 1e-12, dim: int = 1) -> HolonomyPair:
    """Solve phi - phi_- o f = eta - eta o f with phi_- future independent.

    eta reads omega_{-2w..w}, phi_- reads omega_{-(2w+1)..0}. Both are
    self-checked on ``n_check`` random states drawn from ``symbol_measure``
    (uniform symbols when None).
    """
    w = phi.w
    fill_arr = np.asarray(fill, dtype=float)
    w_eta = 2 * w
    w_minus = 2 * w + 1

    def rebuild(symbols, theta, depth):
        return SkewPoint(BiSequence(symbols, -depth, fill_arr, fill_arr), theta)

    def eta_eval(symbols, theta):
        return _eta_at(phi, rebuild(symbols, theta, w_eta), future)

    def minus_eval(symbols, theta):
        pt = rebuild(symbols, theta, w_minus)
        back = skew_inverse(pt)
        return phi.at(back) - _eta_at(phi, back, future) + _eta_at(phi, pt, future)

    eta = WindowObservable(w_eta, eta_eval, phi.alpha / 3.0, f"eta[{phi.name}]")
    minus = WindowObservable(w_minus, minus_eval, phi.alpha / 3.0, f"minus[{phi.name}]")
    pair = HolonomyPair(minus, eta)
    if n_check:
        rng = np.random.default_rng(0) if rng is None else rng
        pts = random_points(symbol_measure, n_check, w_minus + 2, rng, dim=dim, fill=fill)
        resid = verify_cohomology(phi, pair, pts)
        future_change = future_dependence(minus, pts, symbol_measure, rng)
        if resid > tol or future_change > tol:
            raise RuntimeError(f"holonomy reduction self-check failed: residual {resid:g}, "
                               f"future dependence {future_change:g}")
        pair.check.update(residual=resid, future_dependence=future_change)
    return pair


def future_dependence(psi: WindowObservable, pts: SkewPoint, symbol_measure, rng) -> float:
    """Largest change of psi when every stored future symbol is resampled."""
    fut = [j for j in range(max(pts.seq.lo, 1), pts.seq.hi + 1)]
    moved = resample_symbols(pts, fut, symbol_measure, rng)
    return float(np.max(np.abs(psi.at(pts) - psi.at(moved))))


def verify_cohomology(phi: WindowObservable, pair: HolonomyPair, pts: SkewPoint) -> float:
    """max |phi(a) - phi_-(f a) - eta(a) + eta(f a)| over the batch ``pts``."""
    fa = skew_forward(pts)
    r = phi.at(pts) - pair.phi_minus.at(fa) - pair.eta.at(pts) + pair.eta.at(fa)
    return float(np.max(np.abs(r)))


def fiber_partner(pts: SkewPoint, symbol_measure: TorusMeasure | None, rng: np.random.Generator,
                  keep: int = 0) -> SkewPoint:
    """Same symbols at j <= keep and same theta; every stored j > keep resampled."""
    return resample_symbols(pts, range(keep + 1, pts.seq.hi + 1), symbol_measure, rng)


def holonomy_properties(phi: WindowObservable, n_pairs: int, rng: np.random.Generator,
                        symbol_measure: TorusMeasure | None = None, dim: int = 1,
                        extra_terms: int = 10) -> dict[str, float]:
    """Largest violation of each holonomy identity over random fiber pairs.

    a: h(a, a) = 0
    b: h(a, b) = -h(b, a)
    c: h(a, b) + h(b, c) = h(a, c)
    d: h(a, b) + phi(b) = phi(a) + h(f a, f b)   (a, b agreeing on j <= 1)
    termination: change from summing ``extra_terms`` further terms
    """
    depth = phi.w + extra_terms + 2
    a = random_points(symbol_measure, n_pairs, depth, rng, dim=dim)
    b = fiber_partner(a, symbol_measure, rng)
    c = fiber_partner(a, symbol_measure, rng)
    h = lambda x, y: unstable_holonomy(phi, x, y)  # noqa: E731
    hab = h(a, b)
    out = {
        "a": float(np.max(np.abs(h(a, a)))),
        "b": float(np.max(np.abs(hab + h(b, a)))),
        "c": float(np.max(np.abs(hab + h(b, c) - h(a, c)))),
    }
    b1 = fiber_partner(a, symbol_measure, rng, keep=1)
    lhs = h(a, b1) + phi.at(b1)
    rhs = phi.at(a) + h(skew_forward(a), skew_forward(b1))
    out["d"] = float(np.max(np.abs(lhs - rhs)))
    longer = unstable_holonomy(phi, a, b, terms=phi.w + extra_terms)
    out["termination"] = float(np.max(np.abs(longer - hab)))
    return out


def mean_preservation(phi: WindowObservable, pair: HolonomyPair, n_states: int, rng: np.random.Generator,
                      symbol_measure: TorusMeasure | None = None, dim: int = 1) -> tuple[float, float, float]:
    """(mean phi, mean phi_-, standard error of the paired difference) under the product law."""
    pts = random_points(symbol_measure, n_states, pair.phi_minus.w + 2, rng, dim=dim)
    x = phi.at(pts)
    y = pair.phi_minus.at(pts)
    se = float(np.std(x - y, ddof=1) / np.sqrt(n_states))
    return float(np.mean(x)), float(np.mean(y)), se


def random_points(symbol_measure: TorusMeasure | None, size: int, depth: int, rng: np.random.Generator,
                  dim: int | None = 1, fill=0.0) -> SkewPoint:
    """``size`` states with i.i.d. symbols at indices -depth..depth and uniform theta."""
    d = symbol_measure.dim if symbol_measure is not None else (dim or 1)
    n = 2 * depth + 1
    if symbol_measure is None:
        syms = rng.random((size, n, d))
    else:
        syms = symbol_measure.draw(rng, size * n).reshape(size, n, d)
    theta = rng.random((size, d))
    return SkewPoint(BiSequence(syms, -depth, fill, fill), theta)


def resample_symbols(pts: SkewPoint, indices, symbol_measure: TorusMeasure | None,
                     rng: np.random.Generator) -> SkewPoint:
    s = pts.seq.symbols.copy()
    batch = s.shape[:-2]
    d = s.shape[-1]
    for j in indices:
        if pts.seq.lo <= j <= pts.seq.hi:
            size = int(np.prod(batch)) if batch else 1
            if symbol_measure is None:
                new = rng.random((size, d))
            else:
                new = symbol_measure.draw(rng, size)
            s[..., j - pts.seq.lo, :] = new.reshape(batch + (d,))
    seq = pts.seq
    return SkewPoint(BiSequence(s, seq.lo, seq.fill_left, seq.fill_right), pts.theta)


def holder_seminorm_estimate(psi: WindowObservable, beta: float, n_pairs: int, rng: np.random.Generator,
                             symbol_measure: TorusMeasure | None = None) -> float:
    """Random-pair lower estimate of the beta-Holder seminorm.

    Symbol pairs share theta and agree on |j| < m for a random m; theta
    pairs share the symbols. Returns the largest |d psi| / dist^beta seen.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    depth = psi.w + 2
    pts = random_points(symbol_measure, n_pairs, depth, rng)
    levels = rng.integers(0, depth + 2, size=n_pairs)
    s = pts.seq.symbols.copy()
    d = s.shape[-1]
    for pos, j in enumerate(range(pts.seq.lo, pts.seq.hi + 1)):
        redraw = np.abs(j) >= levels
        if symbol_measure is None:
            new = rng.random((n_pairs, d))
        else:
            new = symbol_measure.draw(rng, n_pairs)
        s[:, pos, :] = np.where(redraw[:, None], new, s[:, pos, :])
    seq = pts.seq
    other = SkewPoint(BiSequence(s, seq.lo, seq.fill_left, seq.fill_right), pts.theta)
    dist = np.asarray(shift_metric(pts.seq, other.seq))
    delta = np.abs(psi.at(pts) - psi.at(other))
    best = 0.0
    ok = dist > 0
    if np.any(ok):
        best = float(np.max(delta[ok] / dist[ok] ** beta))
    shift = (rng.random((n_pairs, d)) - 0.5) * np.where(rng.random(n_pairs) < 0.5, 1.0, 1e-3)[:, None]
    moved = SkewPoint(pts.seq, wrap(pts.theta + shift))
    tdist = _torus_dist(pts.theta, moved.theta)
    delta = np.abs(psi.at(pts) - psi.at(moved))
    ok = tdist > 0
    if np.any(ok):
        best = max(best, float(np.max(delta[ok] / tdist[ok] ** beta)))
    return best


def theta_observable(u: Callable[[np.ndarray], np.ndarray], alpha: float = 1.0, name: str = "") -> WindowObservable:
    """phi(omega, theta) = u(theta) with u acting on theta of shape (..., d)."""
    return WindowObservable(0, lambda symbols, theta: u(theta), alpha, name)


@dataclass(frozen=True, eq=False)
class _Tabular:
    alphabet: np.ndarray  # (m, d)
    w: int
    harmonics: int
    table: np.ndarray  # (m ** (2w+1), 2K+1)

    def symbol_index(self, symbols: np.ndarray) -> np.ndarray:
        diff = np.abs(symbols[..., None, :] - self.alphabet)
        dist = np.max(np.minimum(diff, 1.0 - diff), axis=-1)
        return np.argmin(dist, axis=-1)

    def __call__(self, symbols: np.ndarray, theta: np.ndarray) -> np.ndarray:
        idx = self.symbol_index(symbols)
        m = self.alphabet.shape[0]
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for pos in range(idx.shape[-1]):
            flat = flat * m + idx[..., pos]
        rows = self.table[flat]
        t = 2.0 * np.pi * theta[..., 0]
        ks = np.arange(1, self.harmonics + 1)
        basis = np.concatenate(
            [np.ones(t.shape + (1,)), np.cos(t[..., None] * ks), np.sin(t[..., None] * ks)], axis=-1)
        return np.sum(rows * basis, axis=-1)


def tabular_observable(alphabet, w: int, harmonics: int, table, alpha: float = 1.0,
                       name: str = "tabular") -> WindowObservable:
    """Window observable sum_b table[pattern, b] * basis_b(theta_1).

    ``pattern`` is the base-m number formed by the alphabet indices of
    omega_{-w}, ..., omega_w (most significant first); symbols are matched to
    the nearest atom. The theta basis is 1, cos(2 pi k t) (k=1..K), sin(2 pi k t) (k=1..K).
    """
    A = np.asarray(alphabet, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    tab = np.asarray(table, dtype=float)
    expected = (A.shape[0] ** (2 * w + 1), 2 * harmonics + 1)
    if tab.shape != expected:
        raise ValueError(f"table shape {tab.shape} != {expected}")
    obs = WindowObservable(w, _Tabular(wrap(A), w, harmonics, tab), alpha, name)
    return obs
