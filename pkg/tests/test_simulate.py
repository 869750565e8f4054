import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gvarfsv.errors import ConfigError
from gvarfsv.identification import check_restrictions, policy_table
from gvarfsv.model_core import CoefficientState, ModelSpec
from gvarfsv.simulate import Truth, make_truth, random_weights, simulate, stacked_radius, structural_loadings


def test_white_noise_covariance():
    spec = ModelSpec(2, 2, 1, 2, n_factors=2)
    rng = np.random.default_rng(0)
    truth = make_truth(spec, rng)
    F, K = spec.F, spec.K
    truth = Truth(spec, truth.weights, CoefficientState.zeros(spec), truth.loadings, np.zeros(F + K),
                  np.zeros(F + K), np.full(F + K, 1e-8), np.ones(K, dtype=bool))
    sim = simulate(truth, 40_000, rng)
    target = truth.loadings @ truth.loadings.T + np.eye(K)
    assert_allclose(np.cov(sim.y.T), target, atol=0.06)


def test_surprises_are_unpredictable():
    spec = ModelSpec(3, 2, 2, 2, lag_domestic=2, n_factors=1)
    rng = np.random.default_rng(1)
    sim = simulate(make_truth(spec, rng), 3000, rng)
    X = np.hstack([np.ones((2998, 1)), sim.y[1:-1], sim.y[:-2]])
    beta = np.linalg.lstsq(X, sim.y[2:, :4], rcond=None)[0]
    assert np.abs(beta[1:]).max() < 0.1


def test_truth_is_stable_and_masked():
    spec = ModelSpec(3, 2, 1, 2, lag_domestic=2, n_factors=2)
    rng = np.random.default_rng(2)
    truth = make_truth(spec, rng, coef_scale=0.5)
    assert stacked_radius(spec, truth.coeffs, truth.weights) < 0.9
    assert not truth.coeffs.aggregate[:2].any()
    assert truth.constant[:2].all() and not truth.constant[2:].any()


def test_explosive_truth_rejected():
    spec = ModelSpec(1, 1, 1, 1, n_factors=1)
    rng = np.random.default_rng(3)
    t = make_truth(spec, rng)
    agg = t.coeffs.aggregate.copy()
    agg[2, 3] = 1.5  # aggregate own lag
    bad = Truth(spec, t.weights, CoefficientState(agg, t.coeffs.country, spec), t.loadings, t.theta, t.phi,
                t.sigma, t.constant)
    with pytest.raises(ConfigError, match="explosive"):
        simulate(bad, 10, rng)


def test_seeded_and_roundtrip(tmp_path):
    spec = ModelSpec(2, 2, 1, 1, n_factors=1)
    a = make_truth(spec, np.random.default_rng(4), random_weights(2, np.random.default_rng(5)))
    b = make_truth(spec, np.random.default_rng(4), random_weights(2, np.random.default_rng(5)))
    assert_array_equal(a.coeffs.country, b.coeffs.country)
    a.save(tmp_path / "t.json")
    back = Truth.load(tmp_path / "t.json")
    assert_array_equal(back.loadings, a.loadings)
    assert_array_equal(simulate(back, 30, np.random.default_rng(6)).y, simulate(a, 30, np.random.default_rng(6)).y)


@pytest.mark.parametrize("m", [1, 2])
def test_structural_loadings_satisfy_policy_table(m):
    spec = ModelSpec(2, 2, m, 4, n_factors=2 * m + 1)
    roles = {"us_rate": "agg.a1", "us_stock": "agg.a2", "ea_rate": "agg.a3", "ea_stock": "agg.a4"}
    L = structural_loadings(spec, np.random.default_rng(m), roles)
    impact = np.hstack([L, np.zeros((spec.K, spec.K - spec.F))])
    assert check_restrictions(impact, policy_table(spec, roles).compile(spec), zero_tol=0.0).accepted
    assert not L[:2 * m, 2 * m:].any()


def test_structural_loadings_need_enough_factors():
    with pytest.raises(ConfigError, match="F >= 2m"):
        structural_loadings(ModelSpec(2, 2, 2, 2, n_factors=3), np.random.default_rng(0))
