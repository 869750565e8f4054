import numpy as np
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from gvarfsv.data_ingest import PanelDataset, month_range, standardize, unstandardize
from gvarfsv.identification import cholesky_lower, embed_rotation, random_block_rotation
from gvarfsv.irf import IrfTensor, companion_form, propagate_irf, summarize
from gvarfsv.model_core import CoefficientState, ModelSpec, WeightMatrix, aggregate_zero_mask, assemble_stacked_system

dims = st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(1, 3),
                 st.integers(1, 3), st.integers(1, 2), st.integers(1, 2))


def random_state(spec, rng):
    c = CoefficientState.zeros(spec)
    agg = rng.normal(size=c.aggregate.shape)
    agg[aggregate_zero_mask(spec)] = 0.0
    return CoefficientState(agg, rng.normal(size=c.country.shape), spec)


@settings(max_examples=40, deadline=None)
@given(dims, st.integers(0, 2**32 - 1))
def test_assembly_linear_and_masked(d, seed):
    N, k, m, kt, P, Q, R = d
    spec = ModelSpec(N, k, m, kt, lag_domestic=P, lag_foreign=Q, lag_aggregate_in_country=R)
    rng = np.random.default_rng(seed)
    w = WeightMatrix.normalized(rng.uniform(0.1, 1, (N + 1, N))) if N > 1 else WeightMatrix([[1.0], [0.0]])
    a, b = random_state(spec, rng), random_state(spec, rng)
    ca, Ga = assemble_stacked_system(spec, a, w)
    cb, Gb = assemble_stacked_system(spec, b, w)
    cs, Gs = assemble_stacked_system(spec, a + b, w)
    assert_allclose(Gs, Ga + Gb, atol=1e-12)
    assert_allclose(cs, ca + cb, atol=1e-12)
    assert Gs.shape == (max(P, Q, R), spec.K, spec.K)
    assert not Gs[:, :2 * m].any()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: arrays(float, (n + 1, n), elements=st.floats(0, 100))))
def test_normalized_weights_are_row_stochastic(raw):
    n = raw.shape[1]
    raw = raw.copy()
    raw[1:][np.arange(n), np.arange(n)] = 0.0
    assume(raw[0].sum() > 0 and (n == 1 or np.all(raw[1:].sum(axis=1) > 0)))
    w = WeightMatrix.normalized(raw)
    sums = w.values.sum(axis=1)
    assert_allclose(sums[0], 1.0, atol=1e-12)
    if n > 1:
        assert_allclose(sums[1:], 1.0, atol=1e-12)
    assert_allclose(WeightMatrix(w.values).values, w.values)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(3, 30), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)))
def test_standardize_roundtrip(x):
    assume(np.all(x.std(axis=0) > 1e-3 * (1 + np.abs(x).max())))
    T, K = x.shape
    panel = PanelDataset(tuple(month_range("2000-01", "2010-12")[:T]), tuple(f"c{i}" for i in range(K)), x,
                         ("pct",) * K)
    z, _ = standardize(panel)
    assert_allclose(z.values.var(axis=0, ddof=1), 1.0, atol=1e-10)
    assert_allclose(unstandardize(z).values, x, atol=1e-10 * (1 + np.abs(x).max()))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_rotation_preserves_covariance(m, seed):
    rng = np.random.default_rng(seed)
    K = 2 * m + 3
    A = rng.normal(size=(K, K))
    xi = A @ A.T + np.eye(K)
    Q = cholesky_lower(xi)
    R = embed_rotation(random_block_rotation(m, rng), random_block_rotation(m, rng), K, m)
    impact = Q @ R
    assert np.abs(impact @ impact.T - xi).max() < 1e-8 * np.abs(xi).max()
    assert np.array_equal(impact[:, 2 * m:], Q[:, 2 * m:])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_bands_monotone(D, seed):
    v = np.random.default_rng(seed).normal(size=(D, 2, 3, 4))
    s = summarize(IrfTensor(v, ("a", "b"), ("x", "y", "z"), ("pp",) * 3))
    assert np.all(s.bands[0] <= s.bands[1]) and np.all(s.bands[1] <= s.bands[2])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_irf_linear_in_impact(H, K, c, seed):
    rng = np.random.default_rng(seed)
    C = companion_form(0.3 * rng.normal(size=(H, K, K)) / K)
    imp = rng.normal(size=(K, 2))
    assert_allclose(propagate_irf(C, c * imp, 8), c * propagate_irf(C, imp, 8), rtol=1e-12, atol=1e-12)
    assert np.array_equal(propagate_irf(C, imp, 8)[:, :, 0], imp.T)
