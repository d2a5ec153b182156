"""Acceptance criteria run at their stated tolerances, one result line each."""

import math
from pathlib import Path

import numpy as np
import pytest

from sdslab import expanding
from sdslab.chain import ChainConfig, Fixed, deviation_probability, exact_deviation
from sdslab.cli import main
from sdslab.clt import clt_experiment, gordin_livsic_sigma2
from sdslab.config import parse_config
from sdslab.experiments import run_experiment
from sdslab.holonomy import (future_dependence, holonomy_properties, mean_preservation, random_points,
                             reduce_to_past, tabular_observable, verify_cohomology)
from sdslab.spectral import (FourierObservable, apply_markov, cos_observable, deviation_after_n, harmonic,
                             markov_multipliers, sum_cos_k2, torus_grid)
from sdslab.torus_measure import GOLDEN, AtomicMeasure, fit_mixing_dc, lebesgue, two_atom

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
golden_pair = two_atom([0.0], [GOLDEN])


def test_criterion_1_eigenrelation(report):
    grid = torus_grid(1, 1024)
    worst = 0.0
    for k in range(1, 9):
        mu_k = golden_pair.fourier(np.array([[k]]))[0]
        e_k = np.exp(2j * np.pi * k * grid[:, 0])
        # Q acts on real observables; Q e_k = Q cos + i Q sin
        cos_k = harmonic(k)
        sin_k = FourierObservable.from_dict({(k,): -0.5j})
        q = apply_markov(cos_k, golden_pair).evaluate(grid) + 1j * apply_markov(sin_k, golden_pair).evaluate(grid)
        worst = max(worst, float(np.max(np.abs(q - mu_k * e_k))))
    ok = worst < 1e-12
    report("1 eigenrelation", ok, f"max grid sup {worst:.3e} < 1e-12 over k=1..8")
    assert ok


def test_criterion_2_mixing_dc_coherence(report):
    gamma, tau = fit_mixing_dc(golden_pair, 64, [1.0, 1.5, 2.0, 3.0])
    phi = sum_cos_k2(64)
    mult = markov_multipliers(phi, golden_pair)
    ns = np.arange(1, 10_001)
    bounds = np.array([deviation_after_n(phi, golden_pair, int(n), grid=64, multipliers=mult)[0] for n in ns])
    p = 0.9 / tau
    argmax = int(ns[np.argmax(ns**p * bounds)])
    ok = gamma > 0 and argmax <= 200
    report("2 mixing DC + rate coherence", ok, f"gamma*={gamma:.6f} tau*={tau:g}; argmax n^p bound at n={argmax} <= 200")
    assert ok


def test_criterion_3a_ldt_oracle(report):
    cos = cos_observable()
    worst = 0.0
    for n in (4, 8, 12):
        ex = exact_deviation(golden_pair, cos, [0.0], 0.0, 0.25, n)
        mc = deviation_probability(ChainConfig(golden_pair, n, 100_000, 300 + n, Fixed([0.0])), cos, 0.0, 0.25)
        worst = max(worst, abs(ex.p_hat - mc.p_hat) / mc.ci_halfwidth)
    ok = worst <= 3.5
    report("3a exact deviation vs Monte Carlo", ok, f"worst |exact - p_hat| = {worst:.2f} CI (<= 3.5)")
    assert ok


@pytest.fixture(scope="module")
def ldt_rows():
    text = (CONFIGS / "ldt_demo.ini").read_text().replace("trials = 20000", "trials = 100000")
    outcome = run_experiment(parse_config(text, str(CONFIGS / "ldt_demo.ini")), workers=4)
    table = outcome.tables["ldt.csv"]
    return [dict(zip(table.columns, r)) for r in table.rows], outcome.summary


def test_criterion_3b_ldt_decay(ldt_rows, report):
    rows, summary = ldt_rows
    p = {r["n"]: r["p_hat"] for r in rows}
    pos = [(r["n"], r["p_hat"]) for r in rows if r["p_hat"] > 0]
    slope = np.polyfit([n for n, _ in pos], np.log([v for _, v in pos]), 1)[0] if len(pos) >= 2 else float("nan")
    ok = slope < 0 and p[400] < p[50] / 5
    report("3b LDT decay", ok, f"slope {slope:.4f} from {len(pos)} positive rows; p_hat(400)={p[400]:g} "
                               f"< p_hat(50)/5={p[50] / 5:g}")
    assert ok


def test_criterion_3c_ldt_bound(ldt_rows, report):
    rows, _ = ldt_rows
    active = [r for r in rows if isinstance(r["bound"], float) and r["bound"] < 1]
    bad = [r for r in active if r["p_hat"] > r["bound"]]
    ok = not bad
    vacuous = len(rows) - len(active)
    report("3c LDT bound", ok, f"{len(active)} active rows, {len(bad)} violations, {vacuous} vacuous")
    assert ok


def random_instance(g):
    while True:
        m = int(g.integers(2, 5))
        w = g.dirichlet(np.ones(m))
        mu = AtomicMeasure(g.random((m, 1)), w / w.sum())
        terms = {(k,): complex(g.standard_normal(), g.standard_normal()) for k in range(1, 7) if g.random() < 0.7}
        if not terms:
            continue
        phi = FourierObservable.from_dict(terms)
        if np.max(np.abs(mu.fourier(np.array([[k] for k in terms], dtype=float)))) <= 0.95:
            return phi, mu


def test_criterion_4a_closed_form_vs_series(report):
    g = np.random.default_rng(2024)
    errs = []
    for _ in range(20):
        phi, mu = random_instance(g)
        closed = gordin_livsic_sigma2(phi, mu).sigma2
        series = gordin_livsic_sigma2(phi, mu, "truncated_series", 200).sigma2
        errs.append(abs(closed - series) / closed)
    worst = max(errs)
    ok = worst < 1e-8
    report("4a sigma^2 closed form vs T=200 series", ok,
           f"max relative error {worst:.3e} (< 1e-8 on {sum(e < 1e-8 for e in errs)}/20 instances)")
    assert ok


def test_criterion_4b_clt_lebesgue(report):
    phi = cos_observable(math.sqrt(2.0))
    s2 = gordin_livsic_sigma2(phi, lebesgue()).sigma2
    rep = clt_experiment(ChainConfig(lebesgue(), 1, 1, 41), phi, s2, 4096, 20_000, workers=4)
    ok = rep.ks_statistic < 0.02 and 0.95 <= rep.sample_variance <= 1.05
    report("4b CLT Lebesgue sqrt2 cos", ok, f"KS {rep.ks_statistic:.4f} < 0.02, variance {rep.sample_variance:.4f}")
    assert ok


def test_criterion_4c_negative_control(report):
    phi = cos_observable(math.sqrt(2.0))
    s2 = gordin_livsic_sigma2(phi, lebesgue()).sigma2
    rep = clt_experiment(ChainConfig(lebesgue(), 1, 1, 42), phi, 4 * s2, 4096, 20_000, workers=4)
    ok = rep.ks_statistic > 0.1
    report("4c CLT negative control", ok, f"KS {rep.ks_statistic:.4f} > 0.1 with sigma doubled")
    assert ok


def test_criterion_5_holonomy(report):
    rng = np.random.default_rng(55)
    table = rng.standard_normal((2**7, 9))
    phi = tabular_observable([0.0, GOLDEN], 3, 4, table)
    pair = reduce_to_past(phi, golden_pair, rng=rng, n_check=0)
    pts = random_points(golden_pair, 10_000, pair.phi_minus.w + 2, rng)
    resid = verify_cohomology(phi, pair, pts)
    fut = future_dependence(pair.phi_minus, pts, golden_pair, rng)
    props = holonomy_properties(phi, 1000, rng, golden_pair)
    m_phi, m_minus, se = mean_preservation(phi, pair, 100_000, rng, golden_pair)
    z = abs(m_phi - m_minus) / se if se > 0 else 0.0
    ok = resid < 1e-12 and fut < 1e-12 and max(props.values()) < 1e-12 and z <= 4
    report("5 holonomy exactness", ok, f"residual {resid:.1e}, future {fut:.1e}, properties "
                                       f"{max(props.values()):.1e}, mean gap {z:.2f} SE")
    assert ok


def test_criterion_6_expanding(report):
    G = 2048
    x = expanding.grid_points(G)
    checks = {}
    checks["doubling g=1"] = float(np.max(np.abs(expanding.invariant_density(expanding.doubling(G)) - 1))), 1e-8
    _, w = expanding.markov_kernel_weights(expanding.doubling(), np.ones(G), np.random.default_rng(1).random(50))
    checks["doubling weights"] = float(np.max(np.abs(w - 0.5))), 1e-12
    model = expanding.perturbed2(0.5, grid=G)
    g = expanding.invariant_density(model)
    checks["density residual"] = float(np.max(np.abs(expanding.transfer_apply(g, model) - g))), 1e-6
    _, w = expanding.markov_kernel_weights(model, g, np.random.default_rng(2).random(100))
    checks["weight sums"] = float(np.max(np.abs(w.sum(axis=-1) - 1))), 1e-6
    checks["Q1 = 1"] = float(np.max(np.abs(expanding.markov_apply(np.ones(G), model, g) - 1))), 1e-10
    gen = np.random.default_rng(3)
    duality = 0.0
    for _ in range(10):
        a, b = gen.standard_normal((2, 3, 2))
        h = lambda t, a=a: sum(a[k, 0] * np.cos(2 * np.pi * (k + 1) * t) + a[k, 1] * np.sin(2 * np.pi * (k + 1) * t)
                               for k in range(3))
        f = lambda t, b=b: sum(b[k, 0] * np.cos(2 * np.pi * (k + 1) * t) + b[k, 1] * np.sin(2 * np.pi * (k + 1) * t)
                               for k in range(3))
        duality = max(duality, expanding.duality_residual(model, h, f))
    checks["duality"] = duality, 1e-5
    phi_grid = np.cos(2 * np.pi * x)
    mix = expanding.mixing_rate_exp(model, g, phi_grid, 40)
    mean = expanding.integrate(phi_grid * g)
    s2 = expanding.asymptotic_variance(model, g, phi_grid)
    bcfg = expanding.BackwardChainConfig(model, g, 2048, 10_000, 66)
    rep = clt_experiment(bcfg, lambda t: np.cos(2 * np.pi * t) - mean, s2, 2048, 10_000, workers=4)
    checks["backward CLT KS"] = rep.ks_statistic, 0.03
    ok = all(v < tol for v, tol in checks.values()) and mix.sigma is not None and 0 < mix.sigma < 1
    detail = ", ".join(f"{k} {v:.2e}" for k, (v, _) in checks.items())
    report("6 expanding maps", ok, f"{detail}, sigma {mix.sigma}")
    assert ok


DEMOS = sorted(p.name for p in CONFIGS.glob("*.ini"))


@pytest.mark.parametrize("name", DEMOS)
def test_criterion_7_reproducibility(name, tmp_path, report):
    outs = []
    for workers in (1, 4):
        out = tmp_path / f"w{workers}"
        main(["run", str(CONFIGS / name), "--out", str(out), "--workers", str(workers)])
        outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    ok = bool(outs[0]) and outs[0] == outs[1]
    report(f"7 reproducibility {name}", ok, f"{len(outs[0])} CSV files byte-identical with 1 and 4 workers")
    assert ok
