"""
Factor stochastic volatility for the stacked VAR errors.

``eps_t = L f_t + eta_t`` with ``f_t ~ N(0, diag(exp(sigma_t)))`` and
``eta_t ~ N(0, diag(exp(omega_t)))``. Each log-variance follows a
mean-reverting AR(1), ``h_t = theta + phi (h_{t-1} - theta) + s * e_t``.

Log-variance paths are drawn with the 10-component Gaussian mixture
approximation to log chi2(1); given the mixture components the path is a
linear Gaussian state space, sampled jointly from its banded precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import NumericalError
from .priors import draw_var_equation

# Omori, Chib, Shephard & Nakajima (2007) mixture for log(chi2_1)
MIX_PROB = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                     0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
MIX_MEAN = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                     -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
MIX_VAR = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                    0.98583, 1.57469, 2.54498, 4.16591, 7.33342])
_LOG_MIX_W = np.log(MIX_PROB) - 0.5 * np.log(MIX_VAR)

LOADINGS_PRIOR_VAR = 0.1
LOG_SQUARE_OFFSET = 1e-8


@dataclass(frozen=True)
class SVPrior:
    theta_mean: float = 0.0
    theta_var: float = 100.0
    phi_a: float = 25.0  # (phi + 1)/2 ~ Beta(phi_a, phi_b)
    phi_b: float = 1.5
    sigma2_shape: float = 0.5  # s^2 ~ Gamma(shape, rate)
    sigma2_rate: float = 0.5
    const_shape: float = 0.01  # inverse-Gamma prior for constant-variance series
    const_scale: float = 0.01


@dataclass(frozen=True)
class VolatilityState:
    """
    Loadings, factors and log-variance paths.

    SV parameter arrays have ``F + K`` entries: factors first, then the
    idiosyncratic series. ``constant`` flags idiosyncratic series whose
    variance is held fixed over time.
    """

    loadings: np.ndarray  # (K, F)
    factors: np.ndarray  # (T, F)
    factor_logvar: np.ndarray  # (T, F)
    idio_logvar: np.ndarray  # (T, K)
    theta: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    constant: np.ndarray  # (K,) bool

    def __post_init__(self):
        if np.any(np.abs(self.phi) >= 1.0):
            raise NumericalError("SV persistence must satisfy |phi| < 1")
        if np.any(self.sigma <= 0.0):
            raise NumericalError("SV innovation scales must be positive")

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


def draw_loadings(resid: np.ndarray, factors: np.ndarray, idio_logvar: np.ndarray,
                  rng: np.random.Generator, prior_var: float = LOADINGS_PRIOR_VAR) -> np.ndarray:
    """Row-by-row heteroscedastic regressions of eps_i on the factors."""
    K = resid.shape[1]
    F = factors.shape[1]
    L = np.empty((K, F))
    prior_mean = np.zeros(F)
    prior_v = np.full(F, prior_var)
    vols = np.exp(idio_logvar)
    for i in range(K):
        L[i] = draw_var_equation(resid[:, i], factors, prior_mean, prior_v, vols[:, i], rng)
    return L


def factor_moments(resid, L, factor_logvar, idio_logvar):
    """Per-period conditional mean (T, F) and covariance (T, F, F) of f_t."""
    inv_omega = np.exp(-idio_logvar)
    precision = np.einsum("kf,tk,kg->tfg", L, inv_omega, L)
    F = L.shape[1]
    precision[:, np.arange(F), np.arange(F)] += np.exp(-factor_logvar)
    rhs = np.einsum("kf,tk->tf", L, inv_omega * resid)
    try:
        cov = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"factor posterior precision is singular ({exc})") from exc
    return np.einsum("tfg,tg->tf", cov, rhs), cov


def draw_factors(resid: np.ndarray, L: np.ndarray, factor_logvar: np.ndarray,
                 idio_logvar: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent per-period Gaussian draws of f_t given loadings and variances."""
    inv_omega = np.exp(-idio_logvar)
    precision = np.einsum("kf,tk,kg->tfg", L, inv_omega, L)
    F = L.shape[1]
    precision[:, np.arange(F), np.arange(F)] += np.exp(-factor_logvar)
    rhs = np.einsum("kf,tk->tf", L, inv_omega * resid)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        bad = [t for t in range(precision.shape[0])
               if not np.all(np.linalg.eigvalsh(precision[t]) > 0)]
        raise NumericalError(f"factor posterior precision singular at period(s) {bad[:5]}") from exc
    # precision = C C'; mean = C'^-1 C^-1 rhs; noise = C'^-1 z
    half = np.linalg.solve(chol, rhs[..., None])
    z = rng.standard_normal(rhs.shape)[..., None]
    upper = np.swapaxes(chol, 1, 2)
    return np.linalg.solve(upper, half + z)[..., 0]


def log_squares(x: np.ndarray, offset: float = LOG_SQUARE_OFFSET) -> np.ndarray:
    """``log(x^2 + c)`` with ``c = offset * var(x)`` per column."""
    x = np.asarray(x, dtype=float)
    var = x.var(axis=0)
    if np.any(var == 0.0):
        cols = np.flatnonzero(np.atleast_1d(var == 0.0))
        raise NumericalError(f"shock series {cols.tolist()} are identically zero; cannot take log squares")
    return np.log(x ** 2 + offset * var)


def draw_mixture_indicators(ystar: np.ndarray, h: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Component index per (t, series) from the mixture responsibilities."""
    resid = (ystar - h)[..., None] - MIX_MEAN
    logw = _LOG_MIX_W - 0.5 * resid ** 2 / MIX_VAR
    norm = logsumexp(logw, axis=-1, keepdims=True)
    bad = ~np.isfinite(norm[..., 0])
    if np.any(bad):
        t = int(np.argwhere(bad)[0][0])
        raise NumericalError(f"mixture responsibilities underflow at period {t}")
    cdf = np.cumsum(np.exp(logw - norm), axis=-1)
    u = rng.random(ystar.shape)[..., None]
    return np.minimum((u > cdf).sum(axis=-1), MIX_PROB.size - 1)


def sample_log_variance(ystar, comp, theta, phi, sigma2, rng):
    """
    Joint draw of h given mixture components, one banded solve per series.

    The AR(1) prior and the Gaussian mixture observations give a
    tridiagonal posterior precision; with ``Q = U'U`` the draw is
    ``Q^-1 b + U^-1 z``. Same target as :func:`ffbs_log_variance`.
    """
    T, n = ystar.shape
    obs = ystar - MIX_MEAN[comp]
    inv_var = 1.0 / MIX_VAR[comp]
    z = rng.standard_normal((T, n))
    h = np.empty((T, n))
    for i in range(n):
        ph, s2 = phi[i], sigma2[i]
        ab = np.zeros((2, T))  # upper banded form
        ab[1] = (1.0 + ph ** 2) / s2
        ab[1, 0] = ab[1, -1] = 1.0 / s2
        ab[0, 1:] = -ph / s2
        ab[1] += inv_var[:, i]
        b = inv_var[:, i] * (obs[:, i] - theta[i])
        try:
            U = linalg.cholesky_banded(ab, lower=False)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"log-variance posterior precision not positive definite for series {i}") from exc
        mean = linalg.cho_solve_banded((U, False), b)
        h[:, i] = theta[i] + mean + linalg.solve_banded((0, 1), U, z[:, i])
    return h


def ffbs_log_variance(ystar, comp, theta, phi, sigma2, rng):
    """Forward-filter backward-sample h given mixture components (arrays are (T, n))."""
    T, n = ystar.shape
    obs = ystar - MIX_MEAN[comp]
    obs_var = MIX_VAR[comp]
    af = np.empty((T, n))
    Pf = np.empty((T, n))
    a = theta.copy()
    P = sigma2 / (1.0 - phi ** 2)
    for t in range(T):
        gain = P / (P + obs_var[t])
        af[t] = a + gain * (obs[t] - a)
        Pf[t] = P * (1.0 - gain)
        a = theta + phi * (af[t] - theta)
        P = phi ** 2 * Pf[t] + sigma2
    z = rng.standard_normal((T, n))
    h = np.empty((T, n))
    h[-1] = af[-1] + np.sqrt(Pf[-1]) * z[-1]
    for t in range(T - 2, -1, -1):
        pred_var = phi ** 2 * Pf[t] + sigma2
        g = Pf[t] * phi / pred_var
        mean = af[t] + g * (h[t + 1] - theta - phi * (af[t] - theta))
        var = Pf[t] - g * phi * Pf[t]
        h[t] = mean + np.sqrt(np.maximum(var, 0.0)) * z[t]
    return h


def draw_sv_parameters(h, theta, phi, sigma2, rng, prior: SVPrior = SVPrior()):
    """
    One pass over (theta, phi, s^2) given the paths ``h`` (T, n).

    theta is conjugate normal; phi uses an independence MH step with the
    AR-regression proposal, correcting for the Beta prior and stationary
    initial state; s^2 uses the inverse-Gamma likelihood proposal corrected
    for the Gamma prior.
    """
    T = h.shape[0]
    # theta | phi, s2
    prec = 1.0 / prior.theta_var + ((1.0 - phi ** 2) + (T - 1) * (1.0 - phi) ** 2) / sigma2
    num = (prior.theta_mean / prior.theta_var
           + ((1.0 - phi ** 2) * h[0] + (1.0 - phi) * (h[1:] - phi * h[:-1]).sum(axis=0)) / sigma2)
    theta = num / prec + rng.standard_normal(theta.shape) / np.sqrt(prec)

    # phi | theta, s2
    d = h - theta
    sxx = (d[:-1] ** 2).sum(axis=0)
    sxy = (d[1:] * d[:-1]).sum(axis=0)
    prop = sxy / sxx + np.sqrt(sigma2 / sxx) * rng.standard_normal(phi.shape)
    u = rng.random(phi.shape)
    valid = np.abs(prop) < 1.0
    safe = np.where(valid, prop, 0.0)

    def log_extra(p):
        return ((prior.phi_a - 1.0) * np.log1p(p) + (prior.phi_b - 1.0) * np.log1p(-p)
                + 0.5 * np.log1p(-p ** 2) - (1.0 - p ** 2) * d[0] ** 2 / (2.0 * sigma2))

    log_alpha = log_extra(safe) - log_extra(phi)
    phi = np.where(valid & (np.log(u) < log_alpha), safe, phi)

    # s2 | theta, phi
    ssr = (1.0 - phi ** 2) * d[0] ** 2 + ((d[1:] - phi * d[:-1]) ** 2).sum(axis=0)
    prop = 0.5 * ssr / rng.gamma(T / 2.0, 1.0, size=sigma2.shape)
    u = rng.random(sigma2.shape)
    log_alpha = prior.sigma2_shape * np.log(prop / sigma2) - prior.sigma2_rate * (prop - sigma2)
    sigma2 = np.where(np.log(u) < log_alpha, prop, sigma2)
    return theta, phi, sigma2


def draw_sv_path(shocks, h, theta, phi, sigma, rng: np.random.Generator,
                 prior: SVPrior = SVPrior(), offset: float = LOG_SQUARE_OFFSET):
    """
    Update log-variance paths and SV parameters for one or more series.

    Parameters
    ----------
    shocks : (T,) or (T, n) zero-mean shocks whose variance is exp(h_t)
    h : current log-variance paths, same shape
    theta, phi, sigma : current parameters, scalar or (n,)

    Returns
    -------
    (h, theta, phi, sigma) with the input shapes.
    """
    shocks = np.asarray(shocks, dtype=float)
    single = shocks.ndim == 1
    x = shocks[:, None] if single else shocks
    h_in = np.asarray(h, dtype=float).reshape(x.shape)
    n = x.shape[1]
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (n,)).copy()
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n,)).copy()
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,)).copy()

    ystar = log_squares(x, offset)
    comp = draw_mixture_indicators(ystar, h_in, rng)
    h_new = sample_log_variance(ystar, comp, theta, phi, sigma ** 2, rng)
    theta, phi, s2 = draw_sv_parameters(h_new, theta, phi, sigma ** 2, rng, prior)
    sigma = np.sqrt(s2)
    if single:
        return h_new[:, 0], float(theta[0]), float(phi[0]), float(sigma[0])
    return h_new, theta, phi, sigma


def draw_constant_logvar(shocks, rng: np.random.Generator, prior: SVPrior = SVPrior()) -> np.ndarray:
    """Constant log-variance per column from its inverse-Gamma conditional."""
    x = np.asarray(shocks, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    shape = prior.const_shape + x.shape[0] / 2.0
    scale = prior.const_scale + 0.5 * (x ** 2).sum(axis=0)
    return np.log(scale / rng.gamma(shape, 1.0, size=scale.shape))


def update_volatility(resid: np.ndarray, vol: VolatilityState, rng: np.random.Generator,
                      prior: SVPrior = SVPrior(), loadings_prior_var: float = LOADINGS_PRIOR_VAR) -> VolatilityState:
    """Loadings, then factors, then log-variance paths and SV parameters."""
    L = draw_loadings(resid, vol.factors, vol.idio_logvar, rng, loadings_prior_var)
    f = draw_factors(resid, L, vol.factor_logvar, vol.idio_logvar, rng)
    return update_logvar(resid, L, f, vol, rng, prior)


def update_logvar(resid, L, f, vol, rng, prior: SVPrior = SVPrior()) -> VolatilityState:
    """Log-variance paths and SV parameters given loadings ``L`` and factors ``f``."""
    F = L.shape[1]
    eta = resid - f @ L.T
    sv_cols = np.flatnonzero(~vol.constant)
    const_cols = np.flatnonzero(vol.constant)

    series = np.hstack([f, eta[:, sv_cols]])
    h_cur = np.hstack([vol.factor_logvar, vol.idio_logvar[:, sv_cols]])
    idx = np.concatenate([np.arange(F), F + sv_cols])
    h_new, th, ph, sg = draw_sv_path(series, h_cur, vol.theta[idx], vol.phi[idx], vol.sigma[idx], rng, prior)

    theta, phi, sigma = vol.theta.copy(), vol.phi.copy(), vol.sigma.copy()
    theta[idx], phi[idx], sigma[idx] = th, ph, sg
    idio = vol.idio_logvar.copy()
    idio[:, sv_cols] = h_new[:, F:]
    if const_cols.size:
        level = draw_constant_logvar(eta[:, const_cols], rng, prior)
        idio[:, const_cols] = level
        theta[F + const_cols] = level
    return replace(vol, loadings=L, factors=f, factor_logvar=h_new[:, :F], idio_logvar=idio,
                   theta=theta, phi=phi, sigma=sigma)


def assemble_covariance(L: np.ndarray, factor_logvar: np.ndarray, idio_logvar: np.ndarray):
    """
    ``Xi_t = L Sigma_t L' + Omega_t`` for every period, and their time average.

    Returns ``(Xi_t, Xi_bar)`` with shapes (T, K, K) and (K, K).
    """
    if not (np.all(np.isfinite(factor_logvar)) and np.all(np.isfinite(idio_logvar)) and np.all(np.isfinite(L))):
        raise NumericalError("non-finite variance entries in covariance assembly")
    xi = np.einsum("kf,tf,jf->tkj", L, np.exp(factor_logvar), L)
    K = L.shape[0]
    xi[:, np.arange(K), np.arange(K)] += np.exp(idio_logvar)
    xi = 0.5 * (xi + np.swapaxes(xi, 1, 2))
    return xi, xi.mean(axis=0)


def average_covariance(L: np.ndarray, factor_logvar: np.ndarray, idio_logvar: np.ndarray) -> np.ndarray:
    """Time-averaged covariance without forming every period's matrix."""
    if not (np.all(np.isfinite(factor_logvar)) and np.all(np.isfinite(idio_logvar)) and np.all(np.isfinite(L))):
        raise NumericalError("non-finite variance entries in covariance assembly")
    xi = (L * np.exp(factor_logvar).mean(axis=0)) @ L.T
    xi[np.diag_indices_from(xi)] += np.exp(idio_logvar).mean(axis=0)
    return 0.5 * (xi + xi.T)
