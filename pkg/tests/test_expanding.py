import numpy as np
import pytest
from scipy.stats import chisquare, ks_2samp

from sdslab.expanding import (BackwardChain, CircleMapModel, backward_chain,
                              doubling, duality_residual, grid_points, integrate, interpolate, invariant_density,
                              map_from_expression, markov_apply, markov_kernel_weights, mixing_rate_exp, perturbed2,
                              preimages, sample_from_density, transfer_apply, tripling)


@pytest.fixture(scope="module")
def pert():
    model = perturbed2(0.5)
    return model, invariant_density(model)


def trig(g, degree=3, positive=False):
    a = g.standard_normal((degree, 2))

    def f(x):
        out = np.zeros_like(np.asarray(x, dtype=float))
        for k in range(degree):
            out = out + a[k, 0] * np.cos(2 * np.pi * (k + 1) * x) + a[k, 1] * np.sin(2 * np.pi * (k + 1) * x)
        return out + (np.abs(a).sum() + 0.1 if positive else 0.0)

    return f


def test_preimages_doubling():
    assert preimages(doubling(), 0.5) == pytest.approx([0.25, 0.75])
    assert preimages(doubling(), 0.0) == pytest.approx([0.0, 0.5])


def test_preimages_perturbed():
    model = perturbed2()
    ys = preimages(model, 0.3)
    assert ys.shape == (2,) and np.all(np.diff(ys) > 1e-9)
    r = np.abs((model(ys) - 0.3 + 0.5) % 1.0 - 0.5)
    assert np.all(r < 1e-12)


def test_preimages_batch(rng):
    model = map_from_expression("3*x + 0.25*sin(2*pi*x)/(2*pi)", 3)
    x = rng.random(1000)
    ys = preimages(model, x)
    assert ys.shape == (1000, 3)
    assert np.all(np.diff(ys, axis=-1) > 1e-9)
    assert np.max(np.abs((model(ys) - x[:, None] + 0.5) % 1.0 - 0.5)) < 1e-12


def test_model_validation():
    with pytest.raises(ValueError):
        CircleMapModel(lambda x: -2 * x, lambda x: np.full_like(x, -2.0), 2)
    with pytest.raises(ValueError):
        CircleMapModel(lambda x: x + 0.9 * np.sin(2 * np.pi * x) / (2 * np.pi),
                       lambda x: 1 + 0.9 * np.cos(2 * np.pi * x), 1)
    with pytest.raises(ValueError):
        CircleMapModel(lambda x: 2 * x, lambda x: np.full_like(x, 2.0), 3)
    with pytest.raises(ValueError):
        perturbed2(1.5)


def test_expression_grammar():
    model = map_from_expression("2*x + 0.1*sin(2*pi*x)", 2)
    assert model.derivative(0.0) == pytest.approx(2 + 0.2 * np.pi)
    for bad in ["__import__('os')", "x.real", "exp(x)", "2*y", "'a'"]:
        with pytest.raises(ValueError):
            map_from_expression(bad, 2)


def test_transfer_doubling_constant():
    out = transfer_apply(np.ones(2048), doubling())
    assert np.array_equal(out, np.ones(2048))


def test_transfer_perturbed_mass():
    out = transfer_apply(np.ones(2048), perturbed2())
    assert abs(integrate(out) - 1.0) < 1e-4


def test_transfer_doubling_cos_cancels():
    x = grid_points(2048)
    assert np.max(np.abs(transfer_apply(np.cos(2 * np.pi * x), doubling()))) < 1e-10


def test_transfer_size_checked():
    with pytest.raises(ValueError):
        transfer_apply(np.ones(100), doubling())


@pytest.mark.parametrize("factory", [doubling, tripling])
def test_density_linear_maps(factory):
    g = invariant_density(factory())
    assert np.max(np.abs(g - 1.0)) < 1e-8


def test_density_perturbed(pert):
    model, g = pert
    assert np.max(np.abs(transfer_apply(g, model) - g)) < 1e-6
    assert abs(integrate(g) - 1.0) < 1e-10 and g.min() > 0


def test_kernel_weights_doubling(rng):
    model = doubling()
    _, w = markov_kernel_weights(model, np.ones(2048), rng.random(20))
    assert np.max(np.abs(w - 0.5)) < 1e-12


def test_kernel_weights_perturbed(pert, rng):
    model, g = pert
    ys, w = markov_kernel_weights(model, g, rng.random(100))
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-6 and np.all(w > 0)
    assert np.all(np.diff(ys, axis=-1) > 0)


def test_markov_unital_and_doubling(pert):
    model, g = pert
    assert np.max(np.abs(markov_apply(np.ones(2048), model, g) - 1.0)) < 1e-10
    x = grid_points(2048)
    assert np.max(np.abs(markov_apply(np.cos(2 * np.pi * x), doubling(), np.ones(2048)))) < 1e-10


def test_markov_stationarity(pert):
    model, g = pert
    x = grid_points(2048)
    gen = np.random.default_rng(8)
    for _ in range(10):
        h = trig(gen)(x)
        assert abs(integrate(markov_apply(h, model, g) * g) - integrate(h * g)) < 1e-6


def test_markov_positive(pert):
    model, g = pert
    gen = np.random.default_rng(9)
    for _ in range(10):
        h = trig(gen, positive=True)(grid_points(2048))
        assert markov_apply(h, model, g).min() >= -1e-12


def test_duality(pert):
    model, _ = pert
    gen = np.random.default_rng(10)
    for _ in range(10):
        assert duality_residual(model, trig(gen), trig(gen)) < 1e-5


def test_mixing_doubling_collapse():
    x = grid_points(2048)
    res = mixing_rate_exp(doubling(), np.ones(2048), np.cos(2 * np.pi * x), 10)
    assert res.trace.grid_sup[0] < 1e-10 and res.sigma is None and res.cutoff_n == 1


def test_mixing_doubling_two_harmonics():
    x = grid_points(2048)
    phi = np.cos(2 * np.pi * x) + np.cos(4 * np.pi * x)
    res = mixing_rate_exp(doubling(), np.ones(2048), phi, 10)
    assert res.trace.grid_sup[0] > 0.5 and res.trace.grid_sup[1] < 1e-10 and res.cutoff_n == 2


def test_mixing_perturbed_ratio(pert):
    model, g = pert
    res = mixing_rate_exp(model, g, np.cos(2 * np.pi * grid_points(2048)), 30)
    assert 0 < res.sigma < 1
    assert np.all(np.diff(res.trace.bound) <= 0)


def test_mixing_needs_decay():
    with pytest.raises(ValueError):
        mixing_rate_exp(doubling(), np.ones(2048), np.ones(2048), 4)
    res = mixing_rate_exp(doubling(), np.ones(2048), np.zeros(2048), 10)
    assert res.sigma is None and res.cutoff_n == 1


def test_backward_chain_binary_digits(rng):
    traj = backward_chain(doubling(), np.ones(2048), 0.3, 12, rng)
    steps = traj[1:] - traj[:-1] / 2
    assert np.all(np.isclose(steps, 0.0, atol=1e-13) | np.isclose(steps, 0.5, atol=1e-13))


def test_backward_chain_uniform_at_20():
    chain = BackwardChain(doubling(), np.ones(2048), x0=0.123)
    gen = np.random.default_rng(20)
    x = chain.initial_state(gen, 100_000)
    for _ in range(20):
        x = chain.advance(x, gen)
    assert chisquare(np.bincount((x * 64).astype(int), minlength=64)).pvalue > 1e-4


def test_backward_chain_one_step_from_zero():
    chain = BackwardChain(doubling(), np.ones(2048), x0=0.0)
    gen = np.random.default_rng(21)
    x = chain.advance(chain.initial_state(gen, 20_000), gen)
    assert set(np.round(x, 12)) <= {0.0, 0.5}
    assert abs(np.mean(x == 0.5) - 0.5) < 3 * np.sqrt(0.25 / 20_000)


def test_backward_chain_stationary(pert):
    model, g = pert
    chain = BackwardChain(model, g)
    gen = np.random.default_rng(22)
    x0 = chain.initial_state(gen, 100_000)
    x1 = chain.advance(x0, gen)
    other = chain.initial_state(gen, 100_000)
    assert ks_2samp(x1, other).statistic < 0.015


def test_pushforward_invariance(pert):
    model, g = pert
    gen = np.random.default_rng(23)
    x = sample_from_density(g, gen, 100_000)
    assert ks_2samp(model(x), sample_from_density(g, gen, 100_000)).statistic < 0.015


def test_sample_uniform(rng):
    x = sample_from_density(np.ones(256), rng, 100_000)
    assert ks_2samp(x, rng.random(100_000)).statistic < 0.015
    assert 0 <= sample_from_density(np.ones(256), rng) < 1


def test_sample_half_support(rng):
    G = 1024
    g = np.where(grid_points(G) < 0.5, 2.0, 0.0)
    x = sample_from_density(g, rng, 50_000)
    assert x.max() <= 0.5 + 1.0 / G


def test_sample_cdf_self_test(pert, rng):
    _, g = pert
    x = np.sort(sample_from_density(g, rng, 100_000))
    edges = np.arange(g.size + 1) / g.size
    cdf = np.concatenate([[0.0], np.cumsum(g) / g.size])
    emp = np.searchsorted(x, edges, side="right") / x.size
    assert np.max(np.abs(emp - cdf / cdf[-1])) < 0.01


def test_interpolate_periodic():
    v = np.cos(2 * np.pi * grid_points(512))
    assert abs(interpolate(v, 1.0) - interpolate(v, 0.0)) < 1e-15
    assert abs(interpolate(v, 0.25)) < 1e-3
