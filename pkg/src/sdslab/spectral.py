"""Truncated Fourier observables and the random-translation Markov operator.

For a measure mu on T^d the Markov operator (Q phi)(x) = E phi(x + omega),
omega ~ mu, is diagonal on characters: Q e_k = mu_hat(k) e_k. Observables are
therefore stored as Fourier coefficients on the box |k|_inf <= N and every
power Q^n is applied coefficientwise.

Jackson taper
-------------
:func:`jackson_weights` returns the Fourier coefficients of the classical
Jackson kernel of degree N, normalised to weight 1 at k = 0. With
m = N // 2 + 1 and the Fejer triangle t_j = 1 - |j| / m (|j| < m),

    b_k = (t * t)(k) / (t * t)(0),   |k| <= 2m - 2 <= N,

i.e. the kernel is proportional to (sin(pi m x) / sin(pi x))^4. In d > 1 the
weights multiply across axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .torus_measure import TorusMeasure, lattice_vectors

__all__ = [
    "FourierObservable",
    "MixingProfile",
    "DecayTrace",
    "InsufficientPointsError",
    "apply_markov",
    "markov_multipliers",
    "deviation_after_n",
    "decay_trace",
    "fit_power_rate",
    "jackson_degree",
    "jackson_weights",
    "holder_to_fourier",
    "estimate_holder_norm",
    "torus_grid",
    "cos_observable",
    "sum_cos_k2",
    "triangle_observable",
    "harmonic",
]

HERMITIAN_TOL = 1e-12


class InsufficientPointsError(ValueError):
    pass


def torus_grid(dim: int, resolution: int) -> np.ndarray:
    """Points j / resolution per axis, shape (resolution**dim, dim)."""
    axes = [np.arange(resolution) / resolution] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class FourierObservable:
    """Real observable sum_{|k|_inf <= N} c_k e_k with Hermitian-symmetric c.

    ``coeffs`` has shape (2N+1,)*d and c_k lives at index k + N.
    """

    coeffs: np.ndarray
    holder_alpha: float | None = None
    holder_norm_bound: float | None = None
    meta: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim < 1 or any(s != c.shape[0] for s in c.shape) or c.shape[0] % 2 == 0:
            raise ValueError("coefficient array must be a cube of odd side 2N+1")
        flipped = np.conj(c[(slice(None, None, -1),) * c.ndim])
        if np.max(np.abs(c - flipped)) > HERMITIAN_TOL:
            raise ValueError("coefficients are not Hermitian symmetric")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_dict(cls, terms: Mapping, dim: int = 1, radius: int | None = None, **kw) -> "FourierObservable":
        """Build from {k: c_k}; missing conjugate partners are filled in."""
        keys = [tuple(np.atleast_1d(np.asarray(k, dtype=int)).tolist()) for k in terms]
        if any(len(k) != dim for k in keys):
            raise ValueError(f"lattice vectors must have {dim} components")
        n = max([max(abs(v) for v in k) for k in keys] + [0]) if radius is None else radius
        c = np.zeros((2 * n + 1,) * dim, dtype=complex)
        given = {}
        for k, v in zip(keys, terms.values()):
            given[k] = complex(v)
        for k, v in given.items():
            neg = tuple(-x for x in k)
            c[tuple(x + n for x in k)] = v
            if neg not in given:
                c[tuple(x + n for x in neg)] = np.conj(v)
        return cls(c, **kw)

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @property
    def radius(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def mean(self) -> float:
        return float(self.coeffs[(self.radius,) * self.dim].real)

    def coeff(self, k) -> complex:
        k = np.atleast_1d(np.asarray(k, dtype=int))
        if np.any(np.abs(k) > self.radius):
            return 0j
        return complex(self.coeffs[tuple(k + self.radius)])

    def lattice(self) -> np.ndarray:
        """Lattice vectors in the storage order of ``coeffs.ravel()``."""
        return lattice_vectors(self.dim, self.radius, include_zero=True)

    def with_coeffs(self, coeffs: np.ndarray) -> "FourierObservable":
        return FourierObservable(coeffs, self.holder_alpha, self.holder_norm_bound, self.meta)

    def evaluate(self, points) -> np.ndarray:
        """Real values at points of shape (..., d) (or (...) when d = 1)."""
        pts = np.asarray(points, dtype=float)
        if self.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, self.dim)
        ks = self.lattice()
        c = self.coeffs.ravel()
        keep = c != 0
        ks, c = ks[keep], c[keep]
        out = np.empty(flat.shape[0])
        step = max(1, 2**22 // max(1, ks.shape[0]))
        for s in range(0, flat.shape[0], step):
            phase = 2.0 * np.pi * (flat[s : s + step] @ ks.T)
            out[s : s + step] = (np.exp(1j * phase) @ c).real
        return out.reshape(shape)

    __call__ = evaluate

    def l1_nonzero(self) -> float:
        c = np.abs(self.coeffs.ravel()).copy()
        c[c.size // 2] = 0.0
        return float(c.sum())


def harmonic(k: int, dim: int = 1) -> FourierObservable:
    """cos(2 pi k theta_1) written as (e_k + e_-k) / 2."""
    vec = (k,) + (0,) * (dim - 1)
    return FourierObservable.from_dict({vec: 0.5}, dim=dim, holder_alpha=1.0)


def cos_observable(scale: float = 1.0, dim: int = 1) -> FourierObservable:
    vec = (1,) + (0,) * (dim - 1)
    return FourierObservable.from_dict({vec: 0.5 * scale}, dim=dim, holder_alpha=1.0)


def sum_cos_k2(K: int = 64) -> FourierObservable:
    """sum_{k=1..K} cos(2 pi k theta) / k^2."""
    return FourierObservable.from_dict({(k,): 0.5 / k**2 for k in range(1, K + 1)}, holder_alpha=1.0)


def triangle_observable(K: int = 63) -> FourierObservable:
    """Zero-mean tent 1 - 4 dist(theta, Z), truncated at |k| <= K."""
    terms = {(k,): 4.0 / (math.pi**2 * k**2) for k in range(1, K + 1, 2)}
    return FourierObservable.from_dict(terms, radius=K, holder_alpha=1.0)


def markov_multipliers(phi: FourierObservable, mu: TorusMeasure) -> np.ndarray:
    """mu_hat(k) on the observable's lattice, shaped like ``phi.coeffs``."""
    if mu.dim != phi.dim:
        raise ValueError("measure and observable live on different tori")
    mult = mu.fourier(phi.lattice()).reshape(phi.coeffs.shape)
    # mu_hat(0) = 1 exactly, whatever the rounding in the weights
    mult[(phi.radius,) * phi.dim] = 1.0
    return mult


def apply_markov(phi: FourierObservable, mu: TorusMeasure) -> FourierObservable:
    return phi.with_coeffs(markov_multipliers(phi, mu) * phi.coeffs)


def _power(mult: np.ndarray, n: int) -> np.ndarray:
    # exact unit-modulus values stay unit modulus; 0**0 == 1
    return mult**n


def deviation_after_n(
    phi: FourierObservable, mu: TorusMeasure, n: int, grid: int = 1024, multipliers: np.ndarray | None = None
) -> tuple[float, float]:
    """(coefficient bound, grid sup) for |Q^n phi - mean| without iterating Q.

    The bound sum_{k != 0} |mu_hat(k)|^n |c_k| dominates the sup of the
    truncated series; the grid sup is a pointwise proxy on j / grid.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    mult = markov_multipliers(phi, mu) if multipliers is None else multipliers
    centre = (phi.radius,) * phi.dim
    # |mu_hat| <= 1; clipping keeps rounding from breaking monotonicity in n
    mod = np.minimum(np.abs(mult), 1.0) ** n * np.abs(phi.coeffs)
    mod[centre] = 0.0
    bound = float(mod.sum())
    qn = _power(mult, n) * phi.coeffs
    qn[centre] = 0.0
    vals = phi.with_coeffs(qn).evaluate(torus_grid(phi.dim, grid))
    return bound, float(np.max(np.abs(vals)))


@dataclass(frozen=True)
class DecayTrace:
    rows: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        prev = math.inf
        for n, bound, gsup in self.rows:
            if bound < gsup - 1e-9:
                raise ValueError(f"bound {bound} below grid sup {gsup} at n={n}")
            if bound > prev * (1 + 1e-12) + 1e-300:
                raise ValueError(f"bound increased at n={n}")
            prev = bound

    @property
    def n(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def bound(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def grid_sup(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self) -> str:
        lines = ["n,bound,grid_sup"]
        lines += [f"{n},{b!r},{g!r}" for n, b, g in self.rows]
        return "\n".join(lines) + "\n"


def decay_trace(phi: FourierObservable, mu: TorusMeasure, n_list: Iterable[int], grid: int = 1024) -> DecayTrace:
    ns = [int(n) for n in n_list]
    if any(n <= 0 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_list must be strictly increasing positive integers")
    mult = markov_multipliers(phi, mu)
    rows = tuple((n, *deviation_after_n(phi, mu, n, grid, multipliers=mult)) for n in ns)
    return DecayTrace(rows)


@dataclass(frozen=True)
class MixingProfile:
    rate_kind: str  # "power" | "exponential"
    C: float
    p: float | None = None
    sigma: float | None = None
    provenance: str = "fitted"

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("mixing constant C must be positive")
        if self.rate_kind == "power":
            if self.p is None or self.p <= 0:
                raise ValueError("power rate needs p > 0")
        elif self.rate_kind == "exponential":
            if self.sigma is None or not 0 < self.sigma < 1:
                raise ValueError("exponential rate needs 0 < sigma < 1")
        else:
            raise ValueError(f"unknown rate kind {self.rate_kind!r}")


def fit_power_rate(trace: DecayTrace, n_lo: int = 1, n_hi: int | None = None) -> MixingProfile:
    """Least-squares fit of log bound = log C - p log n on [n_lo, n_hi]."""
    n, b = trace.n, trace.bound
    keep = (n >= n_lo) & (b > 1e-300)
    if n_hi is not None:
        keep &= n <= n_hi
    if keep.sum() < 3:
        raise InsufficientPointsError("insufficient points")
    slope, intercept = np.polyfit(np.log(n[keep]), np.log(b[keep]), 1)
    return MixingProfile("power", C=float(math.exp(intercept)), p=float(-slope), provenance="fitted")


def jackson_degree(n: int, gamma: float, tau: float) -> int:
    """floor((n gamma)^(9 / (10 tau))), at least 1."""
    if n < 1 or gamma <= 0 or tau <= 0:
        raise ValueError("need n >= 1, gamma > 0, tau > 0")
    x = (n * gamma) ** (9.0 / (10.0 * tau))
    r = round(x)
    # 1024**0.3 evaluates to 7.999999999999999
    N = r if abs(x - r) <= 1e-9 * max(1.0, x) else math.floor(x)
    return max(1, int(N))


def jackson_weights(N: int) -> np.ndarray:
    """Taper b_{-N..N}; see the module docstring for the formula."""
    if N < 0:
        raise ValueError("degree must be >= 0")
    m = N // 2 + 1
    tri = 1.0 - np.abs(np.arange(-(m - 1), m)) / m
    conv = np.convolve(tri, tri)
    conv /= conv[conv.size // 2]
    out = np.zeros(2 * N + 1)
    half = conv.size // 2
    out[N - half : N + half + 1] = conv
    return out


def estimate_holder_norm(
    f: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    dim: int = 1,
    n_pairs: int = 10_000,
    rng: np.random.Generator | None = None,
    sup_grid: int = 1024,
) -> tuple[float, float]:
    """(sampled sup |f|, random-pair Holder seminorm); both under-estimates."""
    rng = np.random.default_rng(0) if rng is None else rng
    grid = torus_grid(dim, sup_grid if dim == 1 else min(sup_grid, 128))
    sup = float(np.max(np.abs(f(grid))))
    x = rng.random((n_pairs, dim))
    # half the pairs are close, so the local slope is seen
    scale = np.where(rng.random(n_pairs) < 0.5, 1.0, 1e-3)[:, None]
    y = np.mod(x + scale * (rng.random((n_pairs, dim)) - 0.5), 1.0)
    diff = np.abs(x - y)
    dist = np.max(np.minimum(diff, 1.0 - diff), axis=1)
    ok = dist > 0
    ratio = np.abs(f(x[ok]) - f(y[ok])) / dist[ok] ** alpha
    return sup, float(ratio.max()) if ratio.size else 0.0


def holder_to_fourier(
    f: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    N: int,
    sample_resolution: int,
    dim: int = 1,
    rng: np.random.Generator | None = None,
) -> FourierObservable:
    """Jackson-tapered trigonometric approximation of a function handle.

    ``f`` maps points of shape (M, d) to values of shape (M,). Raw
    coefficients come from an FFT of the samples at j / sample_resolution.
    """
    if sample_resolution <= 2 * N:
        raise ValueError("resolution too low")
    M = sample_resolution
    pts = torus_grid(dim, M)
    vals = np.asarray(f(pts), dtype=float).reshape((M,) * dim)
    raw = np.fft.fftn(vals) / vals.size
    idx = np.arange(-N, N + 1) % M
    sub = raw[np.ix_(*([idx] * dim))]
    w1 = jackson_weights(N)
    taper = w1
    for _ in range(dim - 1):
        taper = np.multiply.outer(taper, w1)
    coeffs = sub * taper
    # enforce exact symmetry lost to FFT rounding
    flipped = np.conj(coeffs[(slice(None, None, -1),) * dim])
    coeffs = 0.5 * (coeffs + flipped)
    sup, semi = estimate_holder_norm(f, alpha, dim, rng=rng)
    L = sup + semi
    meta = {"holder_norm_estimated": 1.0, "sup_sampled": sup, "seminorm_sampled": semi,
            "truncation_bound": L * N ** (-alpha)}
    return FourierObservable(coeffs, holder_alpha=alpha, holder_norm_bound=L, meta=meta)
