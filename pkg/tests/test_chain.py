import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from sdslab.chain import (BELOW_THRESHOLD, ChainConfig, DeviationEstimate, Fixed, LdtRow, SkewState,
                          StateSpaceTooLarge, Stationary, TorusChain, birkhoff_sum, birkhoff_sums, ci_halfwidth,
                          deviation_probability, exact_deviation, ldt_bound, ldt_constants, step, verify_ldt)
from sdslab.spectral import FourierObservable, cos_observable
from sdslab.torus_measure import GOLDEN, AtomicMeasure, dirac, lebesgue, two_atom

golden_pair = two_atom([0.0], [GOLDEN])
half_pair = two_atom([0.0], [0.5])
cos = cos_observable()
one = FourierObservable(np.array([1.0 + 0j]))


def test_step_plain():
    s = step(SkewState((), 0.2), 0.5)
    assert s.theta[0] == pytest.approx(0.7) and s.symbols == ()


def test_step_wraps():
    assert step(SkewState((), 0.9), 0.3).theta[0] == pytest.approx(0.2)


def test_step_buffer():
    s = step(SkewState((0.1,), 0.0, capacity=2), 0.4)
    assert [float(x[0]) for x in s.symbols] == pytest.approx([0.1, 0.4])
    assert s.theta[0] == pytest.approx(0.4)
    s = step(s, 0.7)
    assert [float(x[0]) for x in s.symbols] == pytest.approx([0.4, 0.7])


def test_state_buffer_capacity():
    with pytest.raises(ValueError):
        SkewState((0.1, 0.2), 0.0, capacity=1)


def test_birkhoff_constant(rng):
    assert birkhoff_sum(ChainConfig(golden_pair, 100, 1, 0), one, rng) == pytest.approx(100)


def test_birkhoff_frozen(rng):
    cfg = ChainConfig(dirac([0.0]), 4, 1, 0, Fixed([0.0]))
    assert birkhoff_sum(cfg, cos, rng) == pytest.approx(4)


def test_birkhoff_period_two(rng):
    cfg = ChainConfig(dirac([0.5]), 4, 1, 0, Fixed([0.0]))
    assert abs(birkhoff_sum(cfg, cos, rng)) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(golden_pair, 0, 1, 0)
    with pytest.raises(ValueError):
        ChainConfig(golden_pair, 1, 0, 0)


def test_window_observable_sees_symbols():
    cfg = ChainConfig(golden_pair, 5, 100, 1, window_w=2)
    last = lambda theta, symbols: symbols[:, -1, 0]  # noqa: E731
    sums = birkhoff_sums(cfg, last)
    # every entry of the window is an atom, so each sum is a multiple of g
    assert np.allclose(np.round(sums / GOLDEN), sums / GOLDEN)


def test_deviation_period_two_zero():
    cfg = ChainConfig(dirac([0.5]), 10, 1000, 3, Fixed([0.0]))
    est = deviation_probability(cfg, cos, 0.0, 0.1)
    assert est.p_hat == 0 and est.method == "monte_carlo"


@pytest.mark.parametrize("initial", [Stationary(), Fixed([0.3])])
def test_deviation_bounded_observable(initial):
    est = deviation_probability(ChainConfig(lebesgue(), 20, 1000, 3, initial), cos, 0.0, 2.1)
    assert est.p_hat == 0


def test_lebesgue_start_independent():
    # with Lebesgue steps theta_1, theta_2, ... are i.i.d. uniform whatever theta_0
    ests = [deviation_probability(ChainConfig(lebesgue(), 30, 20000, 8, ini), cos, 0.0, 0.15).p_hat
            for ini in (Fixed([0.0]), Fixed([0.37]))]
    ci = ci_halfwidth(ests[0], 20000)
    assert abs(ests[0] - ests[1]) < 4 * ci


def test_ci_floor():
    assert ci_halfwidth(0.0, 1000) == 1e-3
    assert ci_halfwidth(0.5, 100) == pytest.approx(1.96 * 0.05)


def test_exact_two_step_hand_enumeration():
    est = exact_deviation(half_pair, cos, [0.0], 0.0, 0.5, 2)
    assert est.p_hat == pytest.approx(0.5) and est.method == "exact"


def test_exact_dirac_certain():
    assert exact_deviation(dirac([0.0]), cos, [0.0], 0.0, 0.5, 6).p_hat == 1.0


def test_exact_cap():
    with pytest.raises(StateSpaceTooLarge, match="state space too large"):
        exact_deviation(golden_pair, cos, [0.0], 0.0, 0.25, 24)


def test_exact_vs_monte_carlo_n12():
    ex = exact_deviation(golden_pair, cos, [0.0], 0.0, 0.25, 12)
    mc = deviation_probability(ChainConfig(golden_pair, 12, 50_000, 11, Fixed([0.0])), cos, 0.0, 0.25)
    assert abs(ex.p_hat - mc.p_hat) <= 3 * mc.ci_halfwidth


def test_oracle_agreement_random_scenarios():
    g = np.random.default_rng(2718)
    for i in range(10):
        m = int(g.integers(2, 4))
        w = g.dirichlet(np.ones(m))
        mu = AtomicMeasure(g.random((m, 1)), w / w.sum())
        n = int(g.integers(2, int(math.log(1e5) / math.log(m)) + 1))
        phi = FourierObservable.from_dict({(1,): 0.5 * g.standard_normal(), (2,): 0.3 * g.standard_normal()})
        theta0 = [float(g.random())]
        eps = float(g.uniform(0.05, 0.6))
        ex = exact_deviation(mu, phi, theta0, 0.0, eps, n)
        mc = deviation_probability(ChainConfig(mu, n, 20_000, 100 + i, Fixed(theta0)), phi, 0.0, eps)
        assert abs(ex.p_hat - mc.p_hat) <= 3.5 * mc.ci_halfwidth, (i, ex.p_hat, mc.p_hat)


def test_determinism_across_workers():
    cfg = ChainConfig(golden_pair, 40, 30_000, 77)
    a = deviation_probability(cfg, cos, 0.0, 0.2, workers=1)
    b = deviation_probability(cfg, cos, 0.0, 0.2, workers=4)
    assert a == b
    assert np.array_equal(birkhoff_sums(cfg, cos, workers=1), birkhoff_sums(cfg, cos, workers=3))


@pytest.mark.parametrize("n", [1, 10])
def test_stationarity_chi_square(n):
    chain = TorusChain(lebesgue())
    g = np.random.default_rng(n)
    state = chain.initial_state(g, 100_000)
    for _ in range(n):
        state = chain.advance(state, g)
    counts = np.bincount((state[0][:, 0] * 64).astype(int), minlength=64)
    assert chisquare(counts).pvalue > 1e-4


def test_windowed_stationary_prefill():
    chain = TorusChain(golden_pair, Stationary(), window_w=3)
    _, symbols = chain.initial_state(np.random.default_rng(0), 50_000)
    assert symbols.shape == (50_000, 3, 1)
    assert abs(np.mean(symbols == 0.0) - 0.5) < 0.01


def test_ldt_constants_examples():
    c = ldt_constants(2, 1, 1)
    assert c.c_bar == pytest.approx(1 / 108, rel=1e-14) and c.n_bar == pytest.approx(6, rel=1e-14)
    c = ldt_constants(1, 1 / 3, 1, clamp=False)
    assert c.c_bar == pytest.approx(1.0) and c.n_bar == pytest.approx(1.0)
    c = ldt_constants(1, 1 / 3, 1)
    assert c.clamped and c.C == pytest.approx(4 / 3)


def test_ldt_constants_large_p_exponent():
    c = ldt_constants(4 / 3, 0.5, 1e6)
    assert c.c_bar == pytest.approx(c.C * (3 * c.C * c.L) ** -2, rel=1e-5)


def test_ldt_bound_examples():
    c = ldt_constants(2, 1, 1)
    assert ldt_bound(c, 0.5, 12) == pytest.approx(8 * math.exp(-1 / 72), rel=1e-14)
    assert ldt_bound(c, 0.5, 11) is None
    assert LdtRow(0.5, 11, 0.0, 0.0, None, "vacuous").bound_text == BELOW_THRESHOLD


def test_ldt_bound_vacuous_limit():
    c = ldt_constants(2, 1, 1)
    assert ldt_bound(c, 1e-9, 10**10) == pytest.approx(8.0, rel=1e-6)


@given(st.floats(0.1, 50), st.floats(0.01, 20), st.floats(0.1, 10), st.floats(0.01, 1))
def test_bound_self_consistency(C, L, p, eps):
    c = ldt_constants(C, L, p, clamp=False)
    exponent = c.c_bar * eps ** (2 + 1 / p) * c.n_bar * eps ** (-1 / p)
    assert exponent == pytest.approx(C * (eps / (3 * C * L)) ** 2, rel=1e-10)
    assert c.c_bar > 0 and c.n_bar > 0


def test_verify_ldt_dirac_flagged():
    cfg = ChainConfig(dirac([0.0]), 1, 500, 1)
    rep = verify_ldt(cfg, cos, 0.0, 0.25, [10, 20, 40], ldt_constants(2, 1, 1))
    assert "no decay expected" in rep.flags and rep.verdict == "no decay expected"


def test_verify_ldt_golden_pair_slope():
    cfg = ChainConfig(golden_pair, 1, 20_000, 5)
    rep = verify_ldt(cfg, cos, 0.0, 0.25, [10, 20, 30, 40], ldt_constants(2, 1.5, 1))
    assert rep.slope_rows >= 3 and rep.slope < 0
    assert rep.verdict == "pass"
    for r in rep.rows:
        assert r.verdict in ("pass", "vacuous")


def test_verify_ldt_fail_row():
    # a made-up tiny bound contradicts the measured frequency
    cfg = ChainConfig(golden_pair, 1, 20_000, 5)
    consts = ldt_constants(1000.0, 1e-4, 1.0, clamp=False)
    rep = verify_ldt(cfg, cos, 0.0, 0.25, [10, 20], consts)
    assert rep.verdict == "fail"


@given(st.floats(0, 1), st.integers(1, 10**6))
def test_deviation_estimate_range(p, trials):
    ci = ci_halfwidth(p, trials)
    est = DeviationEstimate(0.1, 5, p, ci, "monte_carlo", trials)
    assert -est.ci_halfwidth <= est.p_hat - est.ci_halfwidth and est.p_hat + est.ci_halfwidth <= 1 + ci
