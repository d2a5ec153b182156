"""Random-translation Markov chains, Birkhoff sums and large deviations.

The chain on T^d moves theta -> theta + omega with omega ~ mu i.i.d. With
``window_w > 0`` the last ``window_w`` drawn frequencies are kept in the state
as well, which is the windowed past chain of the skew product.

All Monte Carlo estimators run trials in fixed-size blocks with generators
derived from (seed, stream, block); see :mod:`sdslab.rng`. Any object with
``initial_state(rng, size)``, ``advance(state, rng)`` and ``observe(phi, state)``
can be simulated, which is how the expanding-map backward chain plugs in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol, Sequence, Union

import numpy as np

from . import rng as rngmod
from .spectral import FourierObservable
from .torus_measure import AtomicMeasure, TorusMeasure, lattice_vectors, torus_point, wrap

__all__ = [
    "Stationary",
    "Fixed",
    "ChainConfig",
    "SkewState",
    "TorusChain",
    "DeviationEstimate",
    "LdtConstants",
    "LdtRow",
    "LdtReport",
    "StateSpaceTooLarge",
    "step",
    "birkhoff_sum",
    "birkhoff_sums",
    "deviation_probability",
    "exact_deviation",
    "ldt_constants",
    "ldt_bound",
    "verify_ldt",
    "ci_halfwidth",
    "BELOW_THRESHOLD",
]

BELOW_THRESHOLD = "below threshold"
EXACT_CAP = 10**7


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Stationary:
    """Start from the stationary law (uniform theta, i.i.d. symbol window)."""


@dataclass(frozen=True, eq=False)
class Fixed:
    point: Any

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))


@dataclass(frozen=True, eq=False)
class SkewState:
    """Symbol window (oldest first, at most ``capacity`` entries) and torus point."""

    symbols: tuple[np.ndarray, ...]
    theta: np.ndarray
    capacity: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", torus_point(self.theta))
        syms = tuple(torus_point(s) for s in self.symbols)
        if len(syms) > self.capacity:
            raise ValueError("symbol buffer longer than its capacity")
        object.__setattr__(self, "symbols", syms)


def step(state: SkewState, omega) -> SkewState:
    """theta + omega (mod 1); omega enters the buffer, evicting the oldest if full."""
    omega = torus_point(omega)
    syms = state.symbols + (omega,) if state.capacity > 0 else ()
    if len(syms) > state.capacity:
        syms = syms[len(syms) - state.capacity :]
    return SkewState(syms, wrap(state.theta + omega), state.capacity)


# Observables on chain states take (theta (B, d), symbols (B, w, d)) -> (B,).
StateObservable = Callable[[np.ndarray, np.ndarray], np.ndarray]


def as_state_function(phi) -> StateObservable:
    if isinstance(phi, FourierObservable):
        return lambda theta, symbols: phi.evaluate(theta)
    return phi


class Process(Protocol):
    def initial_state(self, rng: np.random.Generator, size: int): ...

    def advance(self, state, rng: np.random.Generator): ...

    def observe(self, phi, state) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class TorusChain:
    mu: TorusMeasure
    initial: Union[Stationary, Fixed] = Stationary()
    window_w: int = 0

    def initial_state(self, rng, size):
        d = self.mu.dim
        if isinstance(self.initial, Fixed):
            theta = np.broadcast_to(torus_point(self.initial.point), (size, d)).copy()
        else:
            theta = rng.random((size, d))
        symbols = np.empty((size, self.window_w, d))
        for j in range(self.window_w):
            symbols[:, j] = self.mu.draw(rng, size)
        return theta, symbols

    def advance(self, state, rng):
        theta, symbols = state
        omega = self.mu.draw(rng, theta.shape[0])
        if self.window_w:
            symbols = np.concatenate([symbols[:, 1:], omega[:, None, :]], axis=1)
        return wrap(theta + omega), symbols

    def observe(self, phi, state):
        theta, symbols = state
        return np.asarray(as_state_function(phi)(theta, symbols), dtype=float)


@dataclass(frozen=True, eq=False)
class ChainConfig:
    mu: TorusMeasure
    n_steps: int
    n_trials: int
    seed: int
    initial: Union[Stationary, Fixed] = Stationary()
    window_w: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.n_trials < 1:
            raise ValueError("n_steps and n_trials must be >= 1")
        if self.window_w < 0:
            raise ValueError("window_w must be >= 0")

    @property
    def dim(self) -> int:
        return self.mu.dim

    def build_process(self) -> TorusChain:
        return TorusChain(self.mu, self.initial, self.window_w)

    def stationary(self) -> "ChainConfig":
        return replace(self, initial=Stationary())


def _simulate_block(process, phi, n: int, rng: np.random.Generator, size: int) -> np.ndarray:
    state = process.initial_state(rng, size)
    total = np.zeros(size)
    for j in range(n):
        total += process.observe(phi, state)
        if j < n - 1:
            state = process.advance(state, rng)
    return total


def birkhoff_sum(cfg, phi, rng: np.random.Generator) -> float:
    """S_n along one trajectory drawn with the caller's generator."""
    return float(_simulate_block(cfg.build_process(), phi, cfg.n_steps, rng, 1)[0])


def birkhoff_sums(cfg, phi, stream: str = "birkhoff", workers: int = 1) -> np.ndarray:
    """S_n for each of ``cfg.n_trials`` trajectories, in trial order."""
    process = cfg.build_process()
    parts = rngmod.map_blocks(
        lambda g, size: _simulate_block(process, phi, cfg.n_steps, g, size),
        cfg.n_trials, cfg.seed, rngmod.stream_tag(stream), workers,
    )
    return rngmod.concat(parts)


def ci_halfwidth(p_hat: float, trials: int) -> float:
    """Normal-approximation 95% half-width, floored at 1 / trials."""
    return max(1.96 * math.sqrt(p_hat * (1.0 - p_hat) / trials), 1.0 / trials)


@dataclass(frozen=True)
class DeviationEstimate:
    epsilon: float
    n: int
    p_hat: float
    ci_halfwidth: float
    method: str  # "monte_carlo" | "exact"
    trials: int = 0


def deviation_probability(cfg, phi, mean_value: float, epsilon: float, workers: int = 1) -> DeviationEstimate:
    """Monte Carlo frequency of |S_n / n - mean_value| > epsilon."""
    n = cfg.n_steps
    process = cfg.build_process()

    def block(g, size):
        s = _simulate_block(process, phi, n, g, size)
        return int(np.count_nonzero(np.abs(s / n - mean_value) > epsilon))

    hits = sum(rngmod.map_blocks(block, cfg.n_trials, cfg.seed, rngmod.stream_tag("deviation"), workers))
    p = hits / cfg.n_trials
    return DeviationEstimate(epsilon, n, p, ci_halfwidth(p, cfg.n_trials), "monte_carlo", cfg.n_trials)


def exact_deviation(
    mu: AtomicMeasure, phi, theta0, mean_value: float, epsilon: float, n: int, n_cap: int = EXACT_CAP
) -> DeviationEstimate:
    """Exact law of the deviation event by enumerating every symbol path.

    Only omega_0 .. omega_{n-2} influence S_n, so m^(n-1) paths are expanded;
    the admissibility cap is still checked on m^n.
    """
    if not isinstance(mu, AtomicMeasure):
        raise TypeError("exact enumeration needs an atomic measure")
    m = mu.n_atoms
    if n < 1:
        raise ValueError("n must be >= 1")
    if m**n > n_cap:
        raise StateSpaceTooLarge("state space too large")
    f = as_state_function(phi)
    d = mu.dim
    theta = torus_point(theta0)[None, :]
    weight = np.ones(1)
    total = np.zeros(1)
    empty = np.empty((1, 0, d))
    for j in range(n):
        total = total + f(theta, np.broadcast_to(empty, (theta.shape[0], 0, d)))
        if j == n - 1:
            break
        theta = wrap(theta[:, None, :] + mu.points[None, :, :]).reshape(-1, d)
        weight = (weight[:, None] * mu.weights[None, :]).ravel()
        total = np.repeat(total, m)
    p = float(weight[np.abs(total / n - mean_value) > epsilon].sum())
    return DeviationEstimate(epsilon, n, min(max(p, 0.0), 1.0), 0.0, "exact", m**n)


@dataclass(frozen=True)
class LdtConstants:
    C: float
    L: float
    p: float
    c_bar: float
    n_bar: float
    clamped: bool = False


def ldt_constants(C: float, L: float, p: float, clamp: bool = True) -> LdtConstants:
    """c_bar = C (3CL)^-(2 + 1/p) and n_bar = (3CL)^(1/p).

    With ``clamp`` the mixing constant is raised to 4/3 when smaller, which
    the bound's derivation assumes; ``clamped`` records whether that happened.
    """
    if C <= 0 or L <= 0 or p <= 0:
        raise ValueError("C, L and p must be positive")
    clamped = clamp and C < 4.0 / 3.0
    if clamped:
        C = 4.0 / 3.0
    base = 3.0 * C * L
    c_bar = C * base ** (-(2.0 + 1.0 / p))
    n_bar = base ** (1.0 / p)
    if not (math.isfinite(c_bar) and math.isfinite(n_bar) and c_bar > 0 and n_bar > 0):
        raise ValueError("LDT constants are not finite and positive")
    return LdtConstants(C, L, p, c_bar, n_bar, clamped)


def ldt_threshold(consts: LdtConstants, epsilon: float) -> float:
    return consts.n_bar * epsilon ** (-1.0 / consts.p)


def ldt_bound(consts: LdtConstants, epsilon: float, n: int) -> float | None:
    """8 exp(-c_bar eps^(2+1/p) n) for n >= n_bar eps^(-1/p); None below that."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n < ldt_threshold(consts, epsilon):
        return None
    return 8.0 * math.exp(-consts.c_bar * epsilon ** (2.0 + 1.0 / consts.p) * n)


@dataclass(frozen=True)
class LdtRow:
    epsilon: float
    n: int
    p_hat: float
    ci: float
    bound: float | None
    verdict: str  # "pass" | "vacuous" | "fail"

    @property
    def bound_text(self) -> str:
        return BELOW_THRESHOLD if self.bound is None else repr(self.bound)


@dataclass(frozen=True)
class LdtReport:
    rows: tuple[LdtRow, ...]
    slope: float | None
    slope_rows: int
    verdict: str  # "pass" | "fail" | "no decay expected"
    constants: LdtConstants
    flags: tuple[str, ...] = ()


def _degenerate(mu: TorusMeasure, radius: int = 8) -> bool:
    mods = np.abs(mu.fourier(lattice_vectors(mu.dim, radius)))
    return bool(np.all(mods >= 1.0 - 1e-12))


def verify_ldt(cfg, phi, mean_value: float, epsilon: float, n_grid: Sequence[int], consts: LdtConstants,
               workers: int = 1) -> LdtReport:
    """Compare Monte Carlo deviation frequencies with the explicit bound over ``n_grid``."""
    rows = []
    for n in n_grid:
        est = deviation_probability(replace(cfg, n_steps=int(n)), phi, mean_value, epsilon, workers)
        bound = ldt_bound(consts, epsilon, int(n))
        if bound is None or bound >= 1.0:
            verdict = "vacuous"
        elif bound >= est.p_hat - 3.0 * est.ci_halfwidth:
            verdict = "pass"
        else:
            verdict = "fail"
        rows.append(LdtRow(epsilon, int(n), est.p_hat, est.ci_halfwidth, bound, verdict))
    pos = [r for r in rows if r.p_hat > 0]
    slope = None
    if len(pos) >= 2:
        slope = float(np.polyfit([r.n for r in pos], np.log([r.p_hat for r in pos]), 1)[0])
    flags = []
    mu = getattr(cfg, "mu", None)
    degenerate = mu is not None and _degenerate(mu)
    if degenerate:
        flags.append("no decay expected")
    ok = all(r.verdict != "fail" for r in rows)
    if not degenerate and len(pos) >= 3 and not slope < 0:
        ok = False
    verdict = "no decay expected" if degenerate and ok else ("pass" if ok else "fail")
    return LdtReport(tuple(rows), slope, len(pos), verdict, consts, tuple(flags))
