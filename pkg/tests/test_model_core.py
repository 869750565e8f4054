import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gvarfsv.errors import ConfigError, DataError
from gvarfsv.model_core import (CoefficientState, ModelSpec, WeightMatrix, aggregate_zero_mask,
                                assemble_stacked_system, build_cross_section_averages, regressor_matrices,
                                require_valid, residuals, validate_spec)


def random_coeffs(spec, rng, scale=0.1):
    c = CoefficientState.zeros(spec)
    agg = rng.normal(0, scale, c.aggregate.shape)
    agg[aggregate_zero_mask(spec)] = 0.0
    return CoefficientState(agg, rng.normal(0, scale, c.country.shape), spec)


def test_full_size_dimensions():
    spec = ModelSpec(17, 5, 2, 12, lag_domestic=4, lag_foreign=4, lag_aggregate_in_country=4, n_factors=10)
    assert validate_spec(spec) == []
    assert spec.l == 16
    assert spec.K == 101
    assert len(spec.column_ids()) == 101
    assert spec.column_ids()[:5] == ["mUS.rate", "mUS.stock", "mEA.rate", "mEA.stock", "agg.US_short_rate"]
    assert spec.country_codes[0] == "AT"


def test_vectorized_lengths():
    spec = ModelSpec(3, 2, 1, 3, lag_domestic=2, lag_foreign=1, lag_aggregate_in_country=3)
    kt, k, l = 3, 2, 5
    c = CoefficientState.zeros(spec)
    assert spec.n_agg_regressors == 1 + l * 2 + k * 1
    assert c.a0().size == kt * spec.n_agg_regressors
    assert c.a(1).size == k * (k * (2 + 1) + l * 3 + 1)


def test_too_many_factors_diagnostic():
    spec = ModelSpec(1, 1, 1, 1, n_factors=5)  # K = 4
    msgs = validate_spec(spec)
    assert any("factor count exceeds system size" in m for m in msgs)
    with pytest.raises(ConfigError):
        require_valid(spec)


def test_wrong_l_reports_formula_and_all_problems():
    spec = ModelSpec(2, 2, 1, 3, l_aggregate=4, k_system=9, n_factors=0)
    msgs = validate_spec(spec)
    assert any("l = 2m + k~" in m for m in msgs)
    assert len(msgs) >= 2


def test_spec_json_roundtrip():
    spec = ModelSpec(3, 2, 1, 3, lag_domestic=2, n_factors=2)
    back = ModelSpec.from_json(spec.to_json())
    assert back == spec
    with pytest.raises(ConfigError):
        ModelSpec.from_dict(dict(json.loads(spec.to_json()), bogus=1))


class TestWeightMatrix:
    def test_rejects_bad_rows(self):
        with pytest.raises(DataError, match="sums to"):
            WeightMatrix([[0.5, 0.4], [0, 1], [1, 0]])
        with pytest.raises(DataError, match="self-weight"):
            WeightMatrix([[0.5, 0.5], [0.5, 0.5], [1, 0]])
        with pytest.raises(DataError, match="nonnegative"):
            WeightMatrix([[1.5, -0.5], [0, 1], [1, 0]])

    def test_single_country_row_may_be_zero(self):
        w = WeightMatrix([[1.0], [0.0]])
        assert w.n_countries == 1

    def test_read_only(self):
        w = WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]])
        with pytest.raises(ValueError):
            w.values[0, 0] = 1.0

    def test_normalize_roundtrip_keeps_rows_stochastic(self, rng):
        w = WeightMatrix.normalized(rng.uniform(0, 1, (4, 3)))
        assert_allclose(w.values.sum(axis=1), 1.0, atol=1e-12)
        again = WeightMatrix.normalized(w.values)
        assert_allclose(again.values, w.values, atol=1e-15)


def test_cross_section_single_donor():
    spec = ModelSpec(2, 2, 1, 1)
    w = WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]])
    y = np.zeros((1, spec.K))
    y[0, spec.country_offset(2):spec.country_offset(2) + 2] = [3, 4]
    x = build_cross_section_averages(y, w, spec)
    assert_array_equal(x[0, 1], [3, 4])


def test_cross_section_symmetric_average():
    spec = ModelSpec(2, 2, 1, 1)
    w = WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]])
    y = np.zeros((1, spec.K))
    y[0, 3:5] = [2, 0]
    y[0, 5:7] = [0, 2]
    assert_array_equal(build_cross_section_averages(y, w, spec)[0, 0], [1, 1])


def test_cross_section_matches_dense_product(rng):
    spec = ModelSpec(3, 2, 1, 2)
    w = WeightMatrix.normalized(rng.uniform(0, 1, (4, 3)))
    y = rng.normal(size=(7, spec.K))
    x = build_cross_section_averages(y, w, spec)
    for t in range(7):
        Y = np.column_stack([y[t, spec.country_offset(j):spec.country_offset(j) + 2] for j in (1, 2, 3)])
        assert_allclose(x[t], (Y @ w.values.T).T, atol=1e-12)


def test_cross_section_dimension_errors(rng):
    spec = ModelSpec(3, 2, 1, 2)
    with pytest.raises(DataError, match="3 country blocks"):
        build_cross_section_averages(np.zeros((4, spec.K)), WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]]), spec)


def test_zero_mask_covers_surprise_rows():
    spec = ModelSpec(2, 2, 2, 3)
    mask = aggregate_zero_mask(spec)
    assert mask[:4].all()
    assert not mask[4:].any()


def test_a0_is_column_major_vec_of_free_rows(rng):
    spec = ModelSpec(2, 2, 1, 2)
    c = random_coeffs(spec, rng)
    free = c.aggregate[2:]
    manual = [free[i, j] for j in range(free.shape[1]) for i in range(free.shape[0])]
    assert_array_equal(c.a0(), manual)


def test_zero_coefficients_give_zero_lags():
    spec = ModelSpec(2, 2, 1, 2, lag_domestic=2)
    w = WeightMatrix([[0.3, 0.7], [0, 1], [1, 0]])
    c, G = assemble_stacked_system(spec, CoefficientState.zeros(spec), w)
    assert G.shape == (2, spec.K, spec.K)
    assert not G.any() and not c.any()


def test_single_country_no_links_is_block_a01(rng):
    spec = ModelSpec(1, 2, 1, 2)
    c = random_coeffs(spec, rng)
    agg = c.aggregate.copy()
    agg[:, 1 + spec.l * spec.P:] = 0.0  # B_01 = 0
    c = CoefficientState(agg, c.country, spec)
    _, G = assemble_stacked_system(spec, c, WeightMatrix([[1.0], [0.0]]))
    assert_array_equal(G[0, :spec.l, :spec.l], c.A0(1))
    assert not G[0, :spec.l, spec.l:].any()


def simulate_equationwise(spec, c, w, eps, H):
    """Iterate the block equations directly with explicit foreign averages."""
    T = eps.shape[0]
    y = np.zeros((T + H, spec.K))
    for t in range(H, T + H):
        x = build_cross_section_averages(y, w, spec)
        y0 = c.alpha0().copy()
        for p in range(1, spec.P + 1):
            y0 += c.A0(p) @ y[t - p, :spec.l]
        for q in range(1, spec.Q + 1):
            y0 += c.B0(q) @ x[t - q, 0]
        y[t, :spec.l] = y0 + eps[t - H, :spec.l]
        for j in range(1, spec.N + 1):
            o = spec.country_offset(j)
            yj = c.alpha(j).copy()
            for p in range(1, spec.P + 1):
                yj += c.A(j, p) @ y[t - p, o:o + spec.k]
            for q in range(1, spec.Q + 1):
                yj += c.B(j, q) @ x[t - q, j]
            for r in range(1, spec.R + 1):
                yj += c.C(j, r) @ y[t - r, :spec.l]
            y[t, o:o + spec.k] = yj + eps[t - H, o:o + spec.k]
    return y


@pytest.mark.parametrize("lags", [(1, 1, 1), (2, 1, 3)])
def test_stacked_matches_equationwise_simulation(rng, lags):
    spec = ModelSpec(2, 2, 1, 1, lag_domestic=lags[0], lag_foreign=lags[1], lag_aggregate_in_country=lags[2])
    w = WeightMatrix.normalized(rng.uniform(0.1, 1, (3, 2)))
    coeffs = random_coeffs(spec, rng)
    eps = rng.normal(size=(50, spec.K))
    H = spec.max_lag
    direct = simulate_equationwise(spec, coeffs, w, eps, H)
    c, G = assemble_stacked_system(spec, coeffs, w)
    stacked = np.zeros((50 + H, spec.K))
    for t in range(H, 50 + H):
        stacked[t] = c + sum(G[h - 1] @ stacked[t - h] for h in range(1, H + 1)) + eps[t - H]
    assert_allclose(stacked, direct, atol=1e-10)
    # residuals recover the shocks
    assert_allclose(residuals(stacked, c, G), eps, atol=1e-10)


def test_assembly_is_linear(rng):
    spec = ModelSpec(2, 2, 1, 2, lag_domestic=2)
    w = WeightMatrix.normalized(rng.uniform(0.1, 1, (3, 2)))
    a, b = random_coeffs(spec, rng), random_coeffs(spec, rng)
    ca, Ga = assemble_stacked_system(spec, a, w)
    cb, Gb = assemble_stacked_system(spec, b, w)
    cs, Gs = assemble_stacked_system(spec, a + b, w)
    assert_allclose(Gs, Ga + Gb, atol=1e-14)
    assert_allclose(cs, ca + cb, atol=1e-14)


def test_surprise_rows_of_stacked_system_are_zero(rng):
    spec = ModelSpec(3, 2, 2, 2)
    w = WeightMatrix.normalized(rng.uniform(0.1, 1, (4, 3)))
    c, G = assemble_stacked_system(spec, random_coeffs(spec, rng), w)
    assert not G[:, :4].any()
    assert not c[:4].any()


def test_mask_violation_rejected(rng):
    spec = ModelSpec(2, 2, 1, 2)
    c = random_coeffs(spec, rng)
    agg = c.aggregate.copy()
    agg[0, 1] = 0.3
    with pytest.raises(ConfigError):
        assemble_stacked_system(spec, CoefficientState(agg, c.country, spec), WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]]))


def test_regressors_reproduce_fitted_values(rng):
    spec = ModelSpec(2, 2, 1, 2, lag_domestic=2, lag_aggregate_in_country=3)
    w = WeightMatrix.normalized(rng.uniform(0.1, 1, (3, 2)))
    coeffs = random_coeffs(spec, rng)
    y = rng.normal(size=(40, spec.K))
    Z0, Zc = regressor_matrices(y, w, spec)
    c, G = assemble_stacked_system(spec, coeffs, w)
    resid = residuals(y, c, G)
    H = spec.max_lag
    assert_allclose(y[H:, :spec.l] - Z0 @ coeffs.aggregate.T, resid[:, :spec.l], atol=1e-12)
    for j in (1, 2):
        o = spec.country_offset(j)
        assert_allclose(y[H:, o:o + 2] - Zc[j - 1] @ coeffs.country[j - 1].T, resid[:, o:o + 2], atol=1e-12)
