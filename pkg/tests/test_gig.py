import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gvarfsv.gig import GIGParameterError, draw_gig, gig_log_density
from oracles import gig_moments_bessel, gig_moments_quadrature

N = 1_000_000


def test_chi_zero_is_gamma():
    rng = np.random.default_rng(1)
    x = draw_gig(2.0, 0.0, 3.0, rng, size=N)
    assert x.mean() == pytest.approx(2 * 2.0 / 3.0, rel=0.01)


def test_psi_zero_is_inverse_gamma():
    rng = np.random.default_rng(2)
    x = draw_gig(-3.0, 2.0, 0.0, rng, size=N)
    # shape 3, scale chi/2 = 1 -> mean 1/(3-1)
    assert x.mean() == pytest.approx(0.5, rel=0.01)


def test_quadrature_oracle_agrees_with_bessel():
    for p in [(0.5, 1, 2), (-1.5, 2, 0.3), (4, 0.1, 1)]:
        np.testing.assert_allclose(gig_moments_quadrature(*p), gig_moments_bessel(*p), rtol=1e-8)


@pytest.mark.parametrize("params", [(0.5, 1.0, 2.0), (-0.5, 1.0, 1.0), (2.5, 0.5, 4.0),
                                    (0.5, 0.1, 0.1), (-2.5, 3.0, 0.5), (0.0, 0.05, 0.05)])
def test_moments_match_quadrature(params):
    rng = np.random.default_rng(abs(hash(params)) % 2**32)
    x = draw_gig(*params, rng, size=N)
    mean, var = gig_moments_quadrature(*params)
    assert x.mean() == pytest.approx(mean, rel=0.01)
    assert x.var() == pytest.approx(var, rel=0.02)


def test_vector_parameters_broadcast():
    rng = np.random.default_rng(3)
    chi = np.array([0.0, 1.0, 4.0])
    x = draw_gig(0.5, chi, 2.0, rng)
    assert x.shape == (3,) and np.all(x > 0)
    assert isinstance(draw_gig(0.5, 1.0, 1.0, rng), float)


def test_scalar_and_vector_paths_agree_in_distribution():
    rng = np.random.default_rng(4)
    lam = np.repeat([0.5, -1.2], 200_000)
    chi = np.repeat([1.0, 0.7], 200_000)
    psi = np.repeat([2.0, 1.3], 200_000)
    x = draw_gig(lam, chi, psi, rng)
    for sl, p in ((slice(0, 200_000), (0.5, 1.0, 2.0)), (slice(200_000, None), (-1.2, 0.7, 1.3))):
        assert x[sl].mean() == pytest.approx(gig_moments_bessel(*p)[0], rel=0.015)


@pytest.mark.parametrize("bad", [(0.5, 0.0, 0.0), (-1.0, 0.0, 1.0), (1.0, 1.0, 0.0), (0.5, -1.0, 1.0),
                                 (np.nan, 1.0, 1.0)])
def test_invalid_region(bad):
    with pytest.raises(GIGParameterError):
        draw_gig(*bad, np.random.default_rng(0))


def test_log_density_shape():
    x = np.array([0.5, 1.0, 2.0])
    ref = (0.5 - 1) * np.log(x) - 0.5 * (1.0 / x + 2.0 * x)
    np.testing.assert_allclose(gig_log_density(x, 0.5, 1.0, 2.0), ref)


@settings(max_examples=30, deadline=None)
@given(st.floats(-4, 4), st.floats(1e-3, 20), st.floats(1e-3, 20), st.integers(0, 2**31))
def test_draws_positive_finite(lam, chi, psi, seed):
    x = draw_gig(lam, chi, psi, np.random.default_rng(seed), size=200)
    assert np.all(np.isfinite(x)) and np.all(x > 0)
