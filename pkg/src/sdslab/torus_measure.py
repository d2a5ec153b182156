"""Probability measures on the torus T^d and their Fourier coefficients.

Measures come in three immutable flavours: finitely supported
(:class:`AtomicMeasure`), gridded densities integrated with the midpoint rule
(:class:`DensityMeasure`) and convex combinations (:class:`MixtureMeasure`).
The Fourier coefficient convention is

    mu_hat(k) = integral of exp(2 pi i <k, x>) d mu(x).

Lattice vectors are measured with the sup-norm throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

__all__ = [
    "GOLDEN",
    "AtomicMeasure",
    "DensityMeasure",
    "MixtureMeasure",
    "TorusMeasure",
    "MixingDCParams",
    "DCReport",
    "DegenerateMeasureError",
    "wrap",
    "torus_point",
    "dirac",
    "lebesgue",
    "two_atom",
    "lattice_vectors",
    "fourier_coefficient",
    "fourier_coefficients",
    "check_mixing_dc",
    "fit_mixing_dc",
    "is_ergodic_condition",
    "sample",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

EQ_TOL = 1e-12
DEGENERATE_GAMMA = 1e-9


class DegenerateMeasureError(ValueError):
    pass


def wrap(x) -> np.ndarray:
    """Reduce coordinates mod 1 into [0, 1)."""
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    # tiny negatives round up to exactly 1.0
    return np.where(y >= 1.0, 0.0, y)


def torus_point(coords) -> np.ndarray:
    p = wrap(np.atleast_1d(np.asarray(coords, dtype=float)))
    if p.ndim != 1 or p.size < 1:
        raise ValueError("a torus point needs d >= 1 coordinates")
    return p


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    points: np.ndarray  # (m, d)
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size or w.size == 0:
            raise ValueError("need one positive weight per atom")
        if np.any(w <= 0):
            raise ValueError("atom weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {w.sum()!r}, not 1")
        pts = wrap(pts)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def fourier(self, ks: np.ndarray) -> np.ndarray:
        phase = 2.0 * np.pi * (ks @ self.points.T)
        return np.exp(1j * phase) @ self.weights

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = self.draw_index(rng, size)
        return self.points[idx]

    def draw_index(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.weights)
        u = rng.random(size)
        return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.n_atoms - 1)


@dataclass(frozen=True, eq=False)
class DensityMeasure:
    """Density sampled at cell midpoints of a uniform grid; values shape = grid shape."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim < 1 or v.size == 0:
            raise ValueError("density grid must be non-empty")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        if abs(v.mean() - 1.0) > 1e-10:
            raise ValueError(f"density integrates to {v.mean()!r}, not 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    def _nodes(self) -> np.ndarray:
        axes = [(np.arange(n) + 0.5) / n for n in self.values.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def fourier(self, ks: np.ndarray) -> np.ndarray:
        nodes = self._nodes()
        w = self.values.ravel() / self.values.size
        out = np.empty(ks.shape[0], dtype=complex)
        step = max(1, 2**22 // max(1, nodes.shape[0]))
        for s in range(0, ks.shape[0], step):
            phase = 2.0 * np.pi * (ks[s : s + step] @ nodes.T)
            out[s : s + step] = np.exp(1j * phase) @ w
        return out

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        shape = self.values.shape
        mass = self.values.ravel()
        cdf = np.cumsum(mass)
        u = rng.random(size)
        cell = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), mass.size - 1)
        idx = np.stack(np.unravel_index(cell, shape), axis=1)
        jitter = rng.random((size, len(shape)))
        return wrap((idx + jitter) / np.asarray(shape, dtype=float))


@dataclass(frozen=True, eq=False)
class MixtureMeasure:
    """t * first + (1 - t) * second."""

    t: float
    first: "TorusMeasure"
    second: "TorusMeasure"

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError("mixture weight t must lie in (0, 1]")
        if self.first.dim != self.second.dim:
            raise ValueError("mixture components live on different tori")

    @property
    def dim(self) -> int:
        return self.first.dim

    def fourier(self, ks: np.ndarray) -> np.ndarray:
        if self.t == 1.0:
            return self.first.fourier(ks)
        return self.t * self.first.fourier(ks) + (1.0 - self.t) * self.second.fourier(ks)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        pick_first = rng.random(size) < self.t
        a = self.first.draw(rng, size)
        b = self.second.draw(rng, size)
        return np.where(pick_first[:, None], a, b)


TorusMeasure = Union[AtomicMeasure, DensityMeasure, MixtureMeasure]


def dirac(point) -> AtomicMeasure:
    return AtomicMeasure(np.atleast_2d(torus_point(point)), np.array([1.0]))


def two_atom(a, b, t: float = 0.5) -> AtomicMeasure:
    pa, pb = torus_point(a), torus_point(b)
    return AtomicMeasure(np.stack([pa, pb]), np.array([t, 1.0 - t]))


def lebesgue(dim: int = 1, resolution: int | None = None) -> DensityMeasure:
    if resolution is None:
        resolution = 1024 if dim == 1 else 128
    return DensityMeasure(np.ones((resolution,) * dim))


def lattice_vectors(dim: int, radius: int, include_zero: bool = False) -> np.ndarray:
    """All k in Z^dim with |k|_inf <= radius, in lexicographic order."""
    rng1 = range(-radius, radius + 1)
    ks = np.array(list(itertools.product(rng1, repeat=dim)), dtype=float).reshape(-1, dim)
    if not include_zero:
        ks = ks[np.any(ks != 0, axis=1)]
    return ks


def _as_k(mu: TorusMeasure, k) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.ndim == 1:
        if k.size != mu.dim:
            if mu.dim == 1:
                return k[:, None]
            raise ValueError(f"lattice vector of length {k.size} on T^{mu.dim}")
        return k[None, :]
    return k


def fourier_coefficient(mu: TorusMeasure, k) -> complex:
    """mu_hat(k) for a single lattice vector (an int is accepted when d = 1)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != mu.dim:
        raise ValueError(f"lattice vector of length {k.size} on T^{mu.dim}")
    return complex(mu.fourier(k[None, :])[0])


def fourier_coefficients(mu: TorusMeasure, ks) -> np.ndarray:
    """Vectorized mu_hat over an array of lattice vectors of shape (K, d)."""
    return mu.fourier(_as_k(mu, ks))


@dataclass(frozen=True)
class MixingDCParams:
    gamma: float
    tau: float
    k_max: int

    def __post_init__(self):
        if self.gamma <= 0 or self.tau <= 0 or self.k_max < 1:
            raise ValueError("mixing DC needs gamma > 0, tau > 0, k_max >= 1")


@dataclass(frozen=True)
class DCReport:
    holds_up_to_kmax: bool
    worst_k: tuple[int, ...]
    worst_margin: float


def _scan(mu: TorusMeasure, k_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ks = lattice_vectors(mu.dim, k_max)
    mod = np.abs(mu.fourier(ks))
    norms = np.abs(ks).max(axis=1)
    return ks, mod, norms


def check_mixing_dc(mu: TorusMeasure, params: MixingDCParams) -> DCReport:
    """Scan 0 < |k| <= k_max for |mu_hat(k)| <= 1 - gamma / |k|^tau."""
    ks, mod, norms = _scan(mu, params.k_max)
    margin = (1.0 - mod) * norms**params.tau - params.gamma
    i = int(np.argmin(margin))
    worst = float(margin[i])
    return DCReport(worst >= 0.0, tuple(int(v) for v in ks[i]), worst)


def fit_mixing_dc(mu: TorusMeasure, k_max: int, tau_grid: Sequence[float]) -> tuple[float, float]:
    """Largest admissible gamma for each tau; pick the smallest tau with gamma > 1e-9.

    Raises
    ------
    DegenerateMeasureError
        If no tau in the grid admits a positive gamma (e.g. a Dirac mass).
    """
    taus = [float(t) for t in tau_grid]
    if not taus or any(t <= 0 for t in taus):
        raise ValueError("tau_grid must be nonempty with positive entries")
    _, mod, norms = _scan(mu, k_max)
    best = None
    for tau in sorted(taus):
        gamma = float(np.min((1.0 - mod) * norms**tau))
        if gamma > DEGENERATE_GAMMA:
            best = (gamma, tau)
            break
    if best is None:
        raise DegenerateMeasureError("degenerate measure")
    return best


def is_ergodic_condition(mu: TorusMeasure, k_max: int) -> bool:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ks = lattice_vectors(mu.dim, k_max)
    return bool(np.all(np.abs(mu.fourier(ks) - 1.0) > EQ_TOL))


def sample(mu: TorusMeasure, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One point of shape (d,), or ``size`` points of shape (size, d)."""
    if size is None:
        return mu.draw(rng, 1)[0]
    return mu.draw(rng, int(size))


def iter_atoms(mu: AtomicMeasure) -> Iterator[tuple[np.ndarray, float]]:
    yield from zip(mu.points, mu.weights)
