"""Asymptotic variance of Birkhoff sums and empirical CLT checks.

For a zero-mean Fourier observable phi, psi = sum_n Q^n phi has coefficients
c_k / (1 - mu_hat(k)), and Parseval turns sigma^2 = ||psi||^2 - ||Q psi||^2 into

    sigma^2 = sum_{k != 0} |c_k|^2 (1 - |mu_hat(k)|^2) / |1 - mu_hat(k)|^2.

The truncated-series route iterates Q explicitly and never uses that formula,
so the two methods check each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng as rngmod
from .chain import _simulate_block
from .spectral import FourierObservable, markov_multipliers
from .torus_measure import TorusMeasure

__all__ = [
    "VarianceResult",
    "CltReport",
    "SummabilityError",
    "gordin_livsic_sigma2",
    "positivity_check",
    "ks_statistic",
    "clt_experiment",
    "clt_from_sums",
]

SUMMABILITY_GAP = 1e-9


class SummabilityError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceResult:
    sigma2: float
    method: str  # "closed_form" | "truncated_series"
    series_terms: int = 0
    residual_bound: float = 0.0


def _support(phi: FourierObservable, mu: TorusMeasure) -> tuple[np.ndarray, np.ndarray]:
    if abs(phi.coeffs.ravel()[phi.coeffs.size // 2]) > 1e-12:
        raise ValueError("nonzero mean")
    c = phi.coeffs.ravel()
    lam = markov_multipliers(phi, mu).ravel()
    keep = c != 0
    c, lam = c[keep], lam[keep]
    if np.any(np.abs(lam) >= 1.0 - SUMMABILITY_GAP):
        raise SummabilityError("summability violated")
    return c, lam


def gordin_livsic_sigma2(phi: FourierObservable, mu: TorusMeasure, method: str = "closed_form",
                         terms: int = 200) -> VarianceResult:
    c, lam = _support(phi, mu)
    if method == "closed_form":
        s2 = np.sum(np.abs(c) ** 2 * (1.0 - np.abs(lam) ** 2) / np.abs(1.0 - lam) ** 2)
        return VarianceResult(max(float(s2), 0.0), "closed_form")
    if method != "truncated_series":
        raise ValueError(f"unknown method {method!r}")
    term = c.copy()
    psi = c.copy()
    for _ in range(terms):
        term = lam * term
        psi = psi + term
    s2 = float(np.sum(np.abs(psi) ** 2) - np.sum(np.abs(lam * psi) ** 2))
    # ||sum_{n>T} Q^n phi||_2 <= ||phi||_2 r^(T+1) / (1 - r)
    r = float(np.max(np.abs(lam))) if lam.size else 0.0
    tail = math.sqrt(float(np.sum(np.abs(c) ** 2))) * r ** (terms + 1) / (1.0 - r)
    psi_norm = math.sqrt(float(np.sum(np.abs(psi) ** 2)))
    residual = 2.0 * (2.0 * psi_norm * tail + tail**2)
    return VarianceResult(s2, "truncated_series", terms, residual)


def positivity_check(phi: FourierObservable, mu: TorusMeasure) -> bool:
    c = phi.coeffs.ravel().copy()
    c[c.size // 2] = 0
    if not np.any(c != 0):
        raise ValueError("observable must be non-constant")
    res = gordin_livsic_sigma2(phi, mu)
    if res.sigma2 <= 1e-12:
        raise RuntimeError("internal inconsistency: sigma^2 vanished for a non-constant observable")
    return True


def ks_statistic(sample: np.ndarray) -> float:
    """sup |F_n - Phi| against the standard normal, via the sorted-sample formula."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    cdf = ndtr(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


@dataclass(frozen=True)
class CltReport:
    n: int
    trials: int
    ks_statistic: float
    sample_mean: float
    sample_variance: float


def clt_from_sums(sums: np.ndarray, sigma2: float, n: int) -> CltReport:
    z = sums / (math.sqrt(sigma2) * math.sqrt(n))
    var = float(np.var(z, ddof=1)) if z.size > 1 else 0.0
    return CltReport(n, int(z.size), ks_statistic(z), float(np.mean(z)), var)


def clt_experiment(cfg, phi, sigma2: float, n: int, trials: int, workers: int = 1) -> CltReport:
    """Distribution of S_n / (sigma sqrt n) from the stationary start, vs N(0, 1)."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    process = cfg.stationary().build_process()
    parts = rngmod.map_blocks(lambda g, size: _simulate_block(process, phi, n, g, size),
                              trials, cfg.seed, rngmod.stream_tag("clt"), workers)
    return clt_from_sums(rngmod.concat(parts), sigma2, n)
