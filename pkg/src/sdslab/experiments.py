"""Experiment runners behind ``sdslab run``.

Each runner reads its keys from an :class:`ExperimentConfig` and returns an
:class:`Outcome`: CSV tables, a JSON-ready summary and an overall verdict.
Randomness comes only from the master seed through named streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import chain, clt, expanding, holonomy, rng as rngmod, spectral
from .config import ConfigError, ExperimentConfig, TabularSpec
from .torus_measure import (AtomicMeasure, DegenerateMeasureError, MixingDCParams, check_mixing_dc,
                            fit_mixing_dc)

__all__ = ["Outcome", "Table", "run_experiment", "ALLOWED_KEYS"]

TAU_GRID = "1 1.5 2 3"

ALLOWED_KEYS = {
    "mixing": {"measure", "observable", "n_list", "grid", "fit_lo", "fit_hi", "k_max", "tau_grid",
               "coherence_n_max"},
    "dc-check": {"measure", "k_max", "tau_grid", "gamma", "tau"},
    "ldt": {"measure", "observable", "epsilons", "n_grid", "trials", "window_w", "start", "mean", "C", "p", "L",
            "fit_n", "clamp", "exact_n"},
    "clt": {"measure", "observable", "n", "trials", "series_terms", "ks_threshold", "variance_band",
            "sigma_scale", "expect", "reject_threshold"},
    "holonomy": {"tabular", "n_states", "n_pairs", "n_mean", "tol", "se_factor", "fill", "future"},
    "expanding": {"map", "observable", "n_max", "density_tol", "residual_tol", "weight_tol", "n_weight_x",
                  "q1_tol", "duality_tol", "n_duality", "clt_n", "clt_trials", "ks_threshold"},
}


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)


@dataclass
class Outcome:
    verdict: str  # "pass" | "fail" | an informative non-failing label
    failed: bool
    tables: dict[str, Table]
    summary: dict


def _stream(cfg: ExperimentConfig, name: str) -> np.random.Generator:
    return rngmod.block_generator(cfg.seed, rngmod.stream_tag(name), 0)


def _check_rows(rows: list[tuple[str, float, float, bool | None]]) -> tuple[Table, bool]:
    """(check, value, tolerance, ok) rows; ok=None marks a reported-only value."""
    t = Table(["check", "value", "tolerance", "verdict"])
    failed = False
    for name, value, tol, ok in rows:
        verdict = "reported" if ok is None else ("pass" if ok else "fail")
        failed |= ok is False
        t.rows.append([name, value, tol, verdict])
    return t, failed


# mixing ---------------------------------------------------------------------


def run_mixing(cfg: ExperimentConfig, workers: int) -> Outcome:
    mu = cfg.ref("measure")
    phi = cfg.ref("observable")
    ns = cfg.ints("n_list", "1:1000")
    trace = spectral.decay_trace(phi, mu, ns, grid=cfg.int("grid", 1024, minimum=8))
    table = Table(["n", "bound", "grid_sup"], [list(r) for r in trace.rows])
    summary: dict = {"slopes": {}, "fitted_constants": {}, "tolerances": {"trace_dominance": 1e-9}}
    fit_lo = cfg.int("fit_lo", 1, minimum=1)
    fit_hi = cfg.int("fit_hi", max(ns), minimum=1)
    try:
        prof = spectral.fit_power_rate(trace, fit_lo, fit_hi)
        summary["slopes"]["log_bound_vs_log_n"] = -prof.p
        summary["fitted_constants"].update(C=prof.C, p=prof.p)
    except spectral.InsufficientPointsError:
        summary["fitted_constants"]["power_fit"] = "insufficient points"
    k_max = cfg.int("k_max", 64, minimum=1)
    try:
        gamma, tau = fit_mixing_dc(mu, k_max, cfg.floats("tau_grid", TAU_GRID))
    except DegenerateMeasureError:
        summary["fitted_constants"]["mixing_dc"] = "degenerate measure"
        return Outcome("no decay expected", False, {"trace.csv": table}, summary)
    p = 0.9 / tau
    n_arr, b_arr = trace.n, trace.bound
    weighted = n_arr.astype(float) ** p * b_arr
    argmax = int(n_arr[int(np.argmax(weighted))])
    limit = cfg.int("coherence_n_max", 200, minimum=1)
    summary["fitted_constants"].update(gamma=gamma, tau=tau, p_from_dc=p)
    summary["coherence"] = {"argmax_n": argmax, "max_value": float(weighted.max()), "n_max_allowed": limit}
    summary["tolerances"]["coherence_n_max"] = limit
    ok = argmax <= limit
    return Outcome("pass" if ok else "fail", not ok, {"trace.csv": table}, summary)


# dc-check -------------------------------------------------------------------


def run_dc_check(cfg: ExperimentConfig, workers: int) -> Outcome:
    mu = cfg.ref("measure")
    k_max = cfg.int("k_max", 64, minimum=1)
    cols = ["gamma", "tau", "k_max", "holds", "worst_k", "worst_margin", "verdict"]
    summary: dict = {"slopes": {}, "fitted_constants": {}, "tolerances": {"degenerate_gamma": 1e-9}}
    if cfg.has("gamma") or cfg.has("tau"):
        params = MixingDCParams(cfg.float("gamma"), cfg.float("tau"), k_max)
        provenance = "declared"
    else:
        try:
            gamma, tau = fit_mixing_dc(mu, k_max, cfg.floats("tau_grid", TAU_GRID))
        except DegenerateMeasureError:
            row = ["", "", k_max, False, "", "", "degenerate measure"]
            summary["fitted_constants"]["mixing_dc"] = "degenerate measure"
            return Outcome("degenerate measure", True, {"dc.csv": Table(cols, [row])}, summary)
        params = MixingDCParams(gamma, tau, k_max)
        provenance = "fitted"
    rep = check_mixing_dc(mu, params)
    verdict = "pass" if rep.holds_up_to_kmax else "fail"
    row = [params.gamma, params.tau, k_max, rep.holds_up_to_kmax, " ".join(map(str, rep.worst_k)),
           rep.worst_margin, verdict]
    summary["fitted_constants"].update(gamma=params.gamma, tau=params.tau, provenance=provenance)
    return Outcome(verdict, verdict == "fail", {"dc.csv": Table(cols, [row])}, summary)


# ldt ------------------------------------------------------------------------


def _start(cfg: ExperimentConfig):
    text = cfg.text("start", "stationary")
    head, *rest = text.split()
    if head == "stationary" and not rest:
        return chain.Stationary()
    if head == "fixed" and rest:
        try:
            return chain.Fixed([float(v) for v in rest])
        except ValueError:
            pass
    raise ConfigError("[experiment] start", f"expected 'stationary' or 'fixed x_1 .. x_d', got {text!r}")


def _declared_or(cfg: ExperimentConfig, key: str, marker: str):
    raw = cfg.text(key, marker)
    if raw == marker:
        return None
    return cfg.float(key)


def run_ldt(cfg: ExperimentConfig, workers: int) -> Outcome:
    mu = cfg.ref("measure")
    phi = cfg.ref("observable")
    start = _start(cfg)
    base = chain.ChainConfig(mu, 1, cfg.int("trials", minimum=1), cfg.seed, start, cfg.int("window_w", 0, minimum=0))
    mean = cfg.float("mean", phi.mean)
    C, p, L = _declared_or(cfg, "C", "fitted"), _declared_or(cfg, "p", "fitted"), _declared_or(cfg, "L", "estimated")
    fitted = {}
    if C is None or p is None:
        fit_ns = cfg.ints("fit_n", "1:400")
        try:
            prof = spectral.fit_power_rate(spectral.decay_trace(phi, mu, fit_ns), min(fit_ns), max(fit_ns))
        except spectral.InsufficientPointsError:
            raise ConfigError("[experiment] C", "cannot fit a power rate (insufficient points); declare C and p") from None
        C = prof.C if C is None else C
        p = prof.p if p is None else p
        fitted.update(C_fit=prof.C, p_fit=prof.p)
    if L is None:
        sup, semi = spectral.estimate_holder_norm(phi.evaluate, phi.holder_alpha or 1.0, phi.dim,
                                                  rng=_stream(cfg, "holder"))
        L = sup + semi
        fitted.update(L_estimated=L, sup_estimated=sup, seminorm_estimated=semi)
    clamp = cfg.text("clamp", "true").lower() in ("1", "true", "yes")
    consts = chain.ldt_constants(C, L, p, clamp=clamp)

    table = Table(["epsilon", "n", "p_hat", "ci", "bound", "verdict"])
    slopes, verdicts, flags = {}, [], set()
    for eps in cfg.floats("epsilons"):
        rep = chain.verify_ldt(base, phi, mean, eps, cfg.ints("n_grid"), consts, workers)
        for r in rep.rows:
            table.rows.append([r.epsilon, r.n, r.p_hat, r.ci, r.bound_text, r.verdict])
        slopes[repr(eps)] = rep.slope
        verdicts.append(rep.verdict)
        flags.update(rep.flags)
    tables = {"ldt.csv": table}
    failed = "fail" in verdicts

    if cfg.has("exact_n"):
        if not isinstance(start, chain.Fixed):
            raise ConfigError("[experiment] exact_n", "the exact oracle needs 'start = fixed ...'")
        if not isinstance(mu, AtomicMeasure):
            raise ConfigError("[experiment] exact_n", "the exact oracle needs an atomic measure")
        oracle = Table(["epsilon", "n", "exact", "p_hat", "ci", "verdict"])
        for eps in cfg.floats("epsilons"):
            for n in cfg.ints("exact_n"):
                ex = chain.exact_deviation(mu, phi, start.point, mean, eps, n)
                mc = chain.deviation_probability(replace(base, n_steps=n), phi, mean, eps, workers)
                ok = abs(mc.p_hat - ex.p_hat) <= 3.5 * mc.ci_halfwidth
                failed |= not ok
                oracle.rows.append([eps, n, ex.p_hat, mc.p_hat, mc.ci_halfwidth, "pass" if ok else "fail"])
        tables["oracle.csv"] = oracle

    if failed:
        verdict = "fail"
    elif flags:
        verdict = "no decay expected"
    else:
        verdict = "pass"
    summary = {
        "slopes": slopes,
        "fitted_constants": {**fitted, "C": consts.C, "L": consts.L, "p": consts.p, "c_bar": consts.c_bar,
                             "n_bar": consts.n_bar, "clamped": consts.clamped, "mean": mean},
        "tolerances": {"row_ci_multiplier": 3.0, "oracle_ci_multiplier": 3.5},
        "flags": sorted(flags),
    }
    return Outcome(verdict, failed, tables, summary)


# clt ------------------------------------------------------------------------


def _centred(phi: spectral.FourierObservable) -> spectral.FourierObservable:
    c = np.array(phi.coeffs)
    c.ravel()[c.size // 2] = 0.0
    return phi.with_coeffs(c)


def run_clt(cfg: ExperimentConfig, workers: int) -> Outcome:
    mu = cfg.ref("measure")
    raw = cfg.ref("observable")
    phi = _centred(raw)
    n = cfg.int("n", minimum=1)
    trials = cfg.int("trials", minimum=2)
    terms = cfg.int("series_terms", 200, minimum=1)
    closed = clt.gordin_livsic_sigma2(phi, mu)
    series = clt.gordin_livsic_sigma2(phi, mu, "truncated_series", terms)
    if closed.sigma2 <= 0:
        raise ConfigError("[experiment] observable", "asymptotic variance vanishes; nothing to normalise by")
    scale = cfg.float("sigma_scale", 1.0)
    base = chain.ChainConfig(mu, n, trials, cfg.seed)
    rep = clt.clt_experiment(base, phi, closed.sigma2 * scale**2, n, trials, workers)
    expect = cfg.text("expect", "pass")
    ks_thr = cfg.float("ks_threshold", 0.02)
    band = cfg.floats("variance_band", "0.95 1.05")
    if len(band) != 2:
        raise ConfigError("[experiment] variance_band", "expected two numbers")
    if expect == "pass":
        ok = rep.ks_statistic < ks_thr and band[0] <= rep.sample_variance <= band[1]
    elif expect == "reject":
        ok = rep.ks_statistic > cfg.float("reject_threshold", 0.1)
    else:
        raise ConfigError("[experiment] expect", f"expected 'pass' or 'reject', got {expect!r}")
    table = Table(["n", "trials", "ks", "mean", "variance", "sigma2_closed", "sigma2_series", "residual_bound"],
                  [[n, trials, rep.ks_statistic, rep.sample_mean, rep.sample_variance, closed.sigma2,
                    series.sigma2, series.residual_bound]])
    summary = {
        "slopes": {},
        "fitted_constants": {"sigma2_closed": closed.sigma2, "sigma2_series": series.sigma2,
                             "series_residual_bound": series.residual_bound, "removed_mean": raw.mean,
                             "sigma_scale": scale},
        "tolerances": {"ks_threshold": ks_thr, "variance_band": band, "expect": expect,
                       "reject_threshold": cfg.float("reject_threshold", 0.1)},
    }
    return Outcome("pass" if ok else "fail", not ok, {"clt.csv": table}, summary)


# holonomy -------------------------------------------------------------------


def run_holonomy(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.ref("tabular")
    if not isinstance(spec, TabularSpec):
        raise ConfigError("[experiment] tabular", "expected a [tabular ...] definition")
    phi, sym = spec.observable, spec.symbol_measure
    tol = cfg.float("tol", 1e-12)
    fill, future = cfg.float("fill", 0.0), cfg.float("future", 0.0)
    pair = holonomy.reduce_to_past(phi, sym, future=future, fill=fill, n_check=0)
    g = _stream(cfg, "holonomy")
    pts = holonomy.random_points(sym, cfg.int("n_states", 10_000, minimum=1), pair.phi_minus.w + 2, g, fill=fill)
    resid = holonomy.verify_cohomology(phi, pair, pts)
    fut = holonomy.future_dependence(pair.phi_minus, pts, sym, g)
    props = holonomy.holonomy_properties(phi, cfg.int("n_pairs", 1000, minimum=1), g, sym)
    m_phi, m_minus, se = holonomy.mean_preservation(phi, pair, cfg.int("n_mean", 100_000, minimum=2), g, sym)
    k = cfg.float("se_factor", 4.0)
    beta = phi.alpha / 3.0
    rows = [
        ("cohomology_residual", resid, tol, resid < tol),
        ("future_dependence", fut, tol, fut < tol),
        *[(f"property_{name}", v, tol, v < tol) for name, v in props.items()],
        ("mean_phi", m_phi, float("nan"), None),
        ("mean_phi_minus", m_minus, float("nan"), None),
        ("mean_difference", abs(m_phi - m_minus), k * se, abs(m_phi - m_minus) <= k * se),
        (f"seminorm_phi_minus_beta_{beta!r}",
         holonomy.holder_seminorm_estimate(pair.phi_minus, beta, 2000, g, sym), float("nan"), None),
        (f"seminorm_phi_minus_beta_{phi.alpha!r}",
         holonomy.holder_seminorm_estimate(pair.phi_minus, phi.alpha, 2000, g, sym), float("nan"), None),
    ]
    table, failed = _check_rows(rows)
    summary = {"slopes": {}, "fitted_constants": {"window": phi.w, "window_eta": pair.eta.w,
                                                  "window_phi_minus": pair.phi_minus.w},
               "tolerances": {"exactness": tol, "mean_se_factor": k}}
    return Outcome("fail" if failed else "pass", failed, {"holonomy.csv": table}, summary)


# expanding ------------------------------------------------------------------


def _random_trig(g: np.random.Generator, degree: int = 3):
    a = g.standard_normal((degree, 2)) / np.arange(1, degree + 1)[:, None]

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for k in range(degree):
            out = out + 0.3 * (a[k, 0] * np.cos(2 * np.pi * (k + 1) * x) + a[k, 1] * np.sin(2 * np.pi * (k + 1) * x))
        return out

    return f


def run_expanding(cfg: ExperimentConfig, workers: int) -> Outcome:
    model = cfg.ref("map")
    phi_obs = cfg.ref("observable", default="cos")
    if phi_obs.dim != 1:
        raise ConfigError("[experiment] observable", "circle maps need a one-dimensional observable")
    g_stream = _stream(cfg, "expanding")
    try:
        g = expanding.invariant_density(model, tol=cfg.float("density_tol", 1e-10))
    except expanding.NoConvergenceError as exc:
        raise ConfigError("[experiment] density_tol", str(exc)) from None
    x = expanding.grid_points(model.grid)
    residual = float(np.max(np.abs(expanding.transfer_apply(g, model) - g)))
    q1 = float(np.max(np.abs(expanding.markov_apply(np.ones(model.grid), model, g) - 1.0)))
    xs = g_stream.random(cfg.int("n_weight_x", 100, minimum=1))
    _, w = expanding.markov_kernel_weights(model, g, xs)
    wsum = float(np.max(np.abs(w.sum(axis=-1) - 1.0)))
    dual = max(expanding.duality_residual(model, _random_trig(g_stream), _random_trig(g_stream))
               for _ in range(cfg.int("n_duality", 10, minimum=1)))
    phi = lambda t: phi_obs.evaluate(np.asarray(t)[..., None])  # noqa: E731
    phi_grid = phi(x)
    mean = expanding.integrate(phi_grid * g)
    mix = expanding.mixing_rate_exp(model, g, phi_grid, cfg.int("n_max", 40, minimum=5))
    tols = {k: cfg.float(k, d) for k, d in
            [("residual_tol", 1e-6), ("weight_tol", 1e-6), ("q1_tol", 1e-10), ("duality_tol", 1e-5)]}
    rows = [
        ("density_residual", residual, tols["residual_tol"], residual < tols["residual_tol"]),
        ("density_min", float(g.min()), 0.0, bool(g.min() > 0)),
        ("kernel_weight_sum", wsum, tols["weight_tol"], wsum < tols["weight_tol"]),
        ("q1_error", q1, tols["q1_tol"], q1 < tols["q1_tol"]),
        ("duality", dual, tols["duality_tol"], dual < tols["duality_tol"]),
    ]
    if mix.sigma is not None:
        rows.append(("mixing_ratio_sigma", mix.sigma, 1.0, 0.0 < mix.sigma < 1.0))
    else:
        rows.append(("mixing_collapse_step", float(mix.cutoff_n), float("nan"), None))
    fitted = {"sigma": mix.sigma, "collapse_step": mix.cutoff_n, "mean_phi_g": mean}
    trials = cfg.int("clt_trials", 10_000, minimum=0)
    ks_thr = cfg.float("ks_threshold", 0.03)
    if trials:
        centred = lambda t: phi(t) - mean  # noqa: E731
        s2 = expanding.asymptotic_variance(model, g, phi_grid)
        fitted["sigma2"] = s2
        n = cfg.int("clt_n", 2048, minimum=1)
        bcfg = expanding.BackwardChainConfig(model, g, n, trials, cfg.seed)
        rep = clt.clt_experiment(bcfg, centred, s2, n, trials, workers)
        rows += [("clt_ks", rep.ks_statistic, ks_thr, rep.ks_statistic < ks_thr),
                 ("clt_variance", rep.sample_variance, float("nan"), None)]
    table, failed = _check_rows(rows)
    trace = Table(["n", "bound", "grid_sup"], [list(r) for r in mix.trace.rows])
    summary = {"slopes": {"log_ratio": None if mix.sigma is None else math.log(mix.sigma)},
               "fitted_constants": fitted, "tolerances": {**tols, "ks_threshold": ks_thr}}
    return Outcome("fail" if failed else "pass", failed, {"expanding.csv": table, "trace.csv": trace}, summary)


RUNNERS = {"mixing": run_mixing, "dc-check": run_dc_check, "ldt": run_ldt, "clt": run_clt,
           "holonomy": run_holonomy, "expanding": run_expanding}


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> Outcome:
    unknown = sorted(set(cfg.params) - ALLOWED_KEYS[cfg.command] - {"command", "seed"})
    if unknown:
        raise ConfigError(f"[experiment] {unknown[0]}", f"unknown key for command {cfg.command!r}")
    return RUNNERS[cfg.command](cfg, workers)
