"""Transfer operators of orientation-preserving expanding circle maps.

A map is given by its lift F: R -> R with F(x + 1) = F(x) + D and F' > 1.
Densities live on the midpoints (i + 1/2) / G of a uniform grid and are read
between nodes by periodic linear interpolation.

    (L h)(x) = sum_{f(y) = x} h(y) / f'(y)
    (Q h)(x) = L(h g)(x) / g(x)       with L g = g, integral g = 1

Q is the Markov operator of the backward chain that jumps from x to a
preimage y with probability g(y) / (g(x) f'(y)).
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .spectral import DecayTrace
from .torus_measure import wrap

__all__ = [
    "CircleMapModel",
    "BranchSolveError",
    "NoConvergenceError",
    "NoDecayError",
    "ExpMixingResult",
    "BackwardChain",
    "BackwardChainConfig",
    "doubling",
    "tripling",
    "perturbed2",
    "map_from_expression",
    "preimages",
    "grid_points",
    "interpolate",
    "integrate",
    "transfer_apply",
    "invariant_density",
    "markov_kernel_weights",
    "markov_apply",
    "duality_residual",
    "mixing_rate_exp",
    "asymptotic_variance",
    "backward_chain",
    "sample_from_density",
]


class BranchSolveError(RuntimeError):
    pass


class NoConvergenceError(RuntimeError):
    pass


class NoDecayError(RuntimeError):
    pass


def grid_points(G: int) -> np.ndarray:
    return (np.arange(G) + 0.5) / G


def interpolate(values: np.ndarray, x) -> np.ndarray:
    """Periodic linear interpolation of midpoint samples."""
    G = values.size
    return np.interp(wrap(x), grid_points(G), values, period=1.0)


def integrate(values: np.ndarray) -> float:
    return float(np.mean(values))


@dataclass(frozen=True, eq=False)
class CircleMapModel:
    lift: Callable[[np.ndarray], np.ndarray]
    lift_prime: Callable[[np.ndarray], np.ndarray]
    degree: int
    lambda_star: float | None = None
    grid: int = 2048
    name: str = ""

    def __post_init__(self):
        if self.degree < 2:
            raise ValueError("an expanding circle map needs degree >= 2")
        x = np.arange(4096) / 4096
        fp = np.asarray(self.lift_prime(x), dtype=float)
        if np.any(fp <= 0):
            raise ValueError("orientation-reversing maps are not supported")
        lam = float(fp.min()) if self.lambda_star is None else self.lambda_star
        if lam <= 1 or fp.min() < lam - 1e-9:
            raise ValueError(f"expansion bound fails: min f' = {fp.min():g}")
        object.__setattr__(self, "lambda_star", lam)
        jump = np.asarray(self.lift(x + 1.0)) - np.asarray(self.lift(x))
        if np.max(np.abs(jump - self.degree)) > 1e-9:
            raise ValueError("lift(x + 1) - lift(x) differs from the degree")

    def __call__(self, x) -> np.ndarray:
        return wrap(self.lift(np.asarray(x, dtype=float)))

    def derivative(self, x) -> np.ndarray:
        return np.asarray(self.lift_prime(wrap(x)), dtype=float)

    @cached_property
    def _grid_preimages(self) -> tuple[np.ndarray, np.ndarray]:
        ys = preimages(self, grid_points(self.grid))
        return ys, self.derivative(ys)


def doubling(grid: int = 2048) -> CircleMapModel:
    return CircleMapModel(lambda x: 2.0 * x, lambda x: np.full_like(np.asarray(x, dtype=float), 2.0), 2,
                          grid=grid, name="doubling")


def tripling(grid: int = 2048) -> CircleMapModel:
    return CircleMapModel(lambda x: 3.0 * x, lambda x: np.full_like(np.asarray(x, dtype=float), 3.0), 3,
                          grid=grid, name="tripling")


def perturbed2(eps: float = 0.5, grid: int = 2048) -> CircleMapModel:
    """x -> 2x + eps sin(2 pi x) / (2 pi); expanding for |eps| < 1."""
    return CircleMapModel(
        lambda x: 2.0 * x + eps * np.sin(2.0 * np.pi * x) / (2.0 * np.pi),
        lambda x: 2.0 + eps * np.cos(2.0 * np.pi * x),
        2, grid=grid, name=f"perturbed2 {eps!r}",
    )


_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub, ast.Mult, ast.Div,
                  ast.USub, ast.UAdd, ast.Pow, ast.Call, ast.Name, ast.Load, ast.Constant)
_FUNCS = {"sin", "cos"}
_CONSTS = {"pi", "x"}


def map_from_expression(expr: str, degree: int, grid: int = 2048) -> CircleMapModel:
    """Custom lift from a small grammar: + - * / ** sin cos pi x and numbers."""
    import sympy

    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"unsupported syntax in lift expression: {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS | _CONSTS:
            raise ValueError(f"unknown name {node.id!r} in lift expression")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValueError("only sin and cos may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError("only numeric constants are allowed")
    x = sympy.Symbol("x")
    sym = sympy.sympify(expr, locals={"x": x, "pi": sympy.pi, "sin": sympy.sin, "cos": sympy.cos})
    f = sympy.lambdify(x, sym, "numpy")
    fp = sympy.lambdify(x, sympy.diff(sym, x), "numpy")
    return CircleMapModel(lambda t: np.asarray(f(t), dtype=float) + np.zeros_like(t),
                          lambda t: np.asarray(fp(t), dtype=float) + np.zeros_like(t),
                          degree, grid=grid, name=expr)


def preimages(model: CircleMapModel, x) -> np.ndarray:
    """All D preimages of each x, sorted ascending in [0, 1); shape x.shape + (D,)."""
    x = wrap(np.asarray(x, dtype=float))
    D = model.degree
    base = float(model.lift(np.array(0.0)))
    first = x + np.ceil(base - x)  # smallest target >= lift(0)
    targets = first[..., None] + np.arange(D)
    # lift(0) = base <= target < base + D = lift(1) brackets every branch
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    # Newton kept inside a shrinking bracket; out-of-bracket steps bisect instead
    y = np.clip((targets - base) / D, 0.0, 1.0)
    for _ in range(100):
        F = model.lift(y) - targets
        lo = np.where(F < 0, y, lo)
        hi = np.where(F > 0, y, hi)
        newton = y - F / model.lift_prime(y)
        inside = (newton > lo) & (newton < hi)
        y_next = np.where(inside, newton, 0.5 * (lo + hi))
        done = np.max(np.abs(y_next - y)) < 1e-15
        y = y_next
        if done:
            break
    y = wrap(y)
    y = np.sort(y, axis=-1)
    r = np.abs(wrap(model.lift(y) - x[..., None] + 0.5) - 0.5)
    if np.max(r, initial=0.0) >= 1e-12:
        raise BranchSolveError(f"branch solve failed (residual {np.max(r):g})")
    return y


def transfer_apply(h: np.ndarray, model: CircleMapModel) -> np.ndarray:
    """(L h) at the grid midpoints; not renormalised."""
    h = np.asarray(h, dtype=float)
    if h.size != model.grid:
        raise ValueError(f"density has {h.size} values, model grid is {model.grid}")
    ys, fp = model._grid_preimages
    return np.sum(interpolate(h, ys) / fp, axis=-1)


def invariant_density(model: CircleMapModel, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Power iteration h <- L h / integral(L h) from h = 1."""
    h = np.ones(model.grid)
    for _ in range(max_iter):
        Lh = transfer_apply(h, model)
        if np.max(np.abs(Lh - h)) < tol:
            if h.min() <= 0:
                raise NoConvergenceError("invariant density is not positive")
            return h
        h = Lh / integrate(Lh)
    raise NoConvergenceError("no convergence")


def markov_kernel_weights(model: CircleMapModel, g: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
    """Preimages y_i of x and weights g(y_i) / (g(x) f'(y_i))."""
    x = np.asarray(x, dtype=float)
    ys = preimages(model, x)
    w = interpolate(g, ys) / (interpolate(g, x)[..., None] * model.derivative(ys))
    return ys, w


def markov_apply(h: np.ndarray, model: CircleMapModel, g: np.ndarray) -> np.ndarray:
    return transfer_apply(np.asarray(h) * g, model) / g


def duality_residual(model: CircleMapModel, h: Callable, phi: Callable) -> float:
    """|integral (L h) phi - integral h (phi o f)| for function handles h, phi."""
    x = grid_points(model.grid)
    lhs = integrate(transfer_apply(h(x), model) * phi(x))
    rhs = integrate(h(x) * phi(model(x)))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class ExpMixingResult:
    trace: DecayTrace
    sigma: float | None
    cutoff_n: int | None = None


def _centred_iterates(model: CircleMapModel, g: np.ndarray, phi: np.ndarray):
    """Yield Q^n phi - integral(phi g) for n = 1, 2, ...

    Q preserves integral(. g), so re-centring every iterate changes nothing
    for the exact operator; on the grid it removes the plateau (about 1e-9 at
    G = 2048) left by the discretised operator's slightly different
    stationary mean.
    """
    h = np.asarray(phi, dtype=float) - integrate(np.asarray(phi) * g)
    while True:
        h = markov_apply(h, model, g)
        h = h - integrate(h * g)
        yield h


def mixing_rate_exp(model: CircleMapModel, g: np.ndarray, phi: np.ndarray, n_max: int,
                    floor: float = 1e-12) -> ExpMixingResult:
    """delta_n = max |Q^n phi - integral(phi g)| and its geometric-mean ratio over n >= 5.

    When delta collapses below ``floor`` before three ratios are available the
    trace is returned with ``sigma=None`` and the collapse step in ``cutoff_n``.
    """
    if n_max < 5:
        raise ValueError("n_max must be >= 5")
    deltas = []
    cutoff = None
    for n, h in zip(range(1, n_max + 1), _centred_iterates(model, g, phi)):
        delta = float(np.max(np.abs(h)))
        deltas.append(delta)
        if delta <= floor and cutoff is None:
            cutoff = n
    envelope = _running_max_from_right(deltas)
    trace = DecayTrace(tuple((n + 1, e, d) for n, (e, d) in enumerate(zip(envelope, deltas))))
    ratios = [deltas[i + 1] / deltas[i] for i in range(4, n_max - 1)
              if deltas[i] > floor and deltas[i + 1] > floor]
    if len(ratios) < 3:
        if cutoff is not None:
            return ExpMixingResult(trace, None, cutoff)
        raise NoDecayError("no decay measured")
    sigma = float(np.exp(np.mean(np.log(ratios))))
    if not sigma < 1.0:
        raise NoDecayError(f"fitted ratio {sigma:g} is not below 1")
    return ExpMixingResult(trace, sigma, cutoff)


def _running_max_from_right(values: list[float]) -> list[float]:
    # DecayTrace requires a nonincreasing bound column
    out = list(values)
    for i in range(len(out) - 2, -1, -1):
        out[i] = max(out[i], out[i + 1])
    return out


def asymptotic_variance(model: CircleMapModel, g: np.ndarray, phi: np.ndarray, tol: float = 1e-15,
                        max_terms: int = 10_000) -> float:
    """||psi||^2 - ||Q psi||^2 in L^2(g dm) with psi = sum_n Q^n phi (phi centred first)."""
    psi = np.asarray(phi, dtype=float) - integrate(np.asarray(phi) * g)
    for _, term in zip(range(max_terms), _centred_iterates(model, g, phi)):
        psi = psi + term
        if np.max(np.abs(term)) < tol:
            break
    else:
        raise NoConvergenceError("series for psi did not converge")
    qpsi = markov_apply(psi, model, g)
    return integrate(psi**2 * g) - integrate(qpsi**2 * g)


def sample_from_density(g: np.ndarray, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Inverse of the piecewise-linear CDF of the cell masses g_i / G."""
    g = np.asarray(g, dtype=float)
    G = g.size
    cdf = np.concatenate([[0.0], np.cumsum(g) / G])
    cdf /= cdf[-1]
    edges = np.arange(G + 1) / G
    u = rng.random(1 if size is None else size)
    x = wrap(np.interp(u, cdf, edges))
    return x[0] if size is None else x


@dataclass(frozen=True, eq=False)
class BackwardChain:
    """x_{j+1} is a preimage of x_j chosen with the Markov kernel weights."""

    model: CircleMapModel
    g: np.ndarray
    x0: float | None = None  # None: start from g dm

    def initial_state(self, rng, size):
        if self.x0 is None:
            return sample_from_density(self.g, rng, size)
        return np.full(size, wrap(self.x0))

    def advance(self, x, rng):
        ys, w = markov_kernel_weights(self.model, self.g, x)
        cdf = np.cumsum(w, axis=-1)
        u = rng.random(x.shape) * cdf[..., -1]
        pick = np.minimum((u[..., None] >= cdf).sum(axis=-1), ys.shape[-1] - 1)
        return np.take_along_axis(ys, pick[..., None], axis=-1)[..., 0]

    def observe(self, phi, x):
        return np.asarray(phi(x), dtype=float)


@dataclass(frozen=True, eq=False)
class BackwardChainConfig:
    """Chain configuration understood by the chain estimators (n_steps, n_trials, seed)."""

    model: CircleMapModel
    g: np.ndarray
    n_steps: int
    n_trials: int
    seed: int
    x0: float | None = None

    def build_process(self) -> BackwardChain:
        return BackwardChain(self.model, self.g, self.x0)

    def stationary(self) -> "BackwardChainConfig":
        return replace(self, x0=None)


def backward_chain(model: CircleMapModel, g: np.ndarray, x0: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """One trajectory x_0, ..., x_n."""
    chain = BackwardChain(model, g, x0)
    x = chain.initial_state(rng, 1)
    out = [x[0]]
    for _ in range(n):
        x = chain.advance(x, rng)
        out.append(x[0])
    return np.array(out)
