"""
Conditional posterior kernels for the VAR coefficients and their priors.

* :func:`draw_var_equation` - one heteroscedastic Gaussian regression
* :func:`update_normal_gamma` / :func:`mh_step_btau` - global-local
  Normal-Gamma shrinkage on the aggregate block
* :func:`update_pooling` - hierarchical mean/variance for country blocks
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import NumericalError
from .gig import draw_gig


@dataclass(frozen=True)
class NormalGammaState:
    tau: np.ndarray  # local scales, one per free aggregate coefficient
    lambda_tau: float
    b_tau: float
    d_tau0: float = 0.01
    d_tau1: float = 0.01

    def __post_init__(self):
        values = np.concatenate([np.ravel(self.tau), [self.lambda_tau, self.b_tau, self.d_tau0, self.d_tau1]])
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise NumericalError("Normal-Gamma state entries must be finite and strictly positive")


@dataclass(frozen=True)
class PoolingState:
    mu: np.ndarray
    v: np.ndarray
    mu0: np.ndarray
    V0: np.ndarray  # prior variances of mu (diagonal)
    d_v0: float = 0.1
    d_v1: float = 0.1

    def __post_init__(self):
        if np.any(self.v <= 0) or np.any(self.V0 <= 0):
            raise NumericalError("pooling variances must be strictly positive")
        if not (self.mu.shape == self.v.shape == self.mu0.shape == self.V0.shape):
            raise NumericalError("pooling state dimensions disagree")

    @classmethod
    def initial(cls, L: int, d_v0: float = 0.1, d_v1: float = 0.1) -> "PoolingState":
        return cls(np.zeros(L), np.ones(L), np.zeros(L), np.ones(L), d_v0, d_v1)


def posterior_moments(y, X, prior_mean, prior_var, error_vols):
    """
    Mean and Cholesky factor of the posterior precision for one equation.

    Returns ``(mean, U)`` with ``U`` upper triangular and ``U'U`` equal to
    the posterior precision ``X' diag(1/error_vols) X + diag(1/prior_var)``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    inv_var = 1.0 / np.asarray(error_vols, dtype=float)
    prior_prec = 1.0 / np.asarray(prior_var, dtype=float)
    Xw = X * inv_var[:, None]
    precision = X.T @ Xw
    precision[np.diag_indices_from(precision)] += prior_prec
    rhs = Xw.T @ y + prior_prec * np.asarray(prior_mean, dtype=float)
    try:
        U = linalg.cholesky(precision, lower=False, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"posterior precision is not positive definite ({exc})") from exc
    mean = linalg.cho_solve((U, False), rhs)
    return mean, U


def draw_var_equation(y, X, prior_mean, prior_var, error_vols, rng: np.random.Generator) -> np.ndarray:
    """
    Draw coefficients from N(m_bar, V_bar),

    ``V_bar = (X' L^-1 X + V_prior^-1)^-1``, ``m_bar = V_bar (X' L^-1 y + V_prior^-1 m_prior)``,
    ``L = diag(error_vols)``. Infinite prior variances are allowed (flat prior).
    """
    mean, U = posterior_moments(y, X, prior_mean, prior_var, error_vols)
    z = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(U, z, lower=False)


def update_normal_gamma(a0: np.ndarray, state: NormalGammaState, rng: np.random.Generator,
                        chi_floor: float = 0.0, tau_floor: float = 0.0,
                        tau_cap: float = np.inf) -> NormalGammaState:
    """
    Draw the local scales from their GIG conditionals, then the global scale.

    ``chi_floor`` keeps the GIG well defined when a coefficient is exactly
    zero; ``tau_floor``/``tau_cap`` keep the local scales away from
    0 and infinity so the coefficient prior precision stays finite.
    """
    a0 = np.asarray(a0, dtype=float)
    b, lam = state.b_tau, state.lambda_tau
    chi = np.maximum(a0 ** 2, chi_floor)
    tau = draw_gig(b - 0.5, chi, b * lam, rng)
    tau = np.clip(np.atleast_1d(tau), tau_floor, tau_cap)
    shape = state.d_tau0 + a0.size * b
    rate = state.d_tau1 + 0.5 * b * tau.sum()
    lambda_tau = rng.gamma(shape, 1.0 / rate)
    return replace(state, tau=tau, lambda_tau=float(lambda_tau))


def log_btau_conditional(b: float, tau: np.ndarray, lambda_tau: float) -> float:
    """log p(b | tau, lambda) up to a constant: Exp(1) prior times Gamma(b, b*lambda) densities."""
    tau = np.asarray(tau, dtype=float)
    n = tau.size
    return (-b + n * (b * np.log(b * lambda_tau) - gammaln(b))
            + (b - 1.0) * np.log(tau).sum() - b * lambda_tau * tau.sum())


def btau_log_acceptance(b_old: float, b_new: float, tau, lambda_tau: float) -> float:
    """Log MH ratio for a log-normal random-walk proposal (includes the b'/b Jacobian)."""
    return (log_btau_conditional(b_new, tau, lambda_tau) - log_btau_conditional(b_old, tau, lambda_tau)
            + np.log(b_new) - np.log(b_old))


def mh_step_btau(state: NormalGammaState, rng: np.random.Generator, scale: float = 0.25):
    """Returns ``(new_state, accepted)``."""
    z = rng.standard_normal()
    u = rng.random()
    b_new = state.b_tau * np.exp(scale * z)
    log_alpha = btau_log_acceptance(state.b_tau, b_new, state.tau, state.lambda_tau)
    if np.log(u) < log_alpha:
        return replace(state, b_tau=float(b_new)), True
    return state, False


def pooling_mean_moments(a: np.ndarray, state: PoolingState):
    """Posterior mean and (diagonal) variance of the common mean given a_1..a_N."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    N = a.shape[0]
    V_tilde = 1.0 / (N / state.v + 1.0 / state.V0)
    mu_tilde = V_tilde * (a.sum(axis=0) / state.v + state.mu0 / state.V0)
    return mu_tilde, V_tilde


def update_pooling(a: np.ndarray, state: PoolingState, rng: np.random.Generator) -> PoolingState:
    """Draw mu | a, v and then each v_l | a, mu (inverse Gamma)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    N = a.shape[0]
    mu_tilde, V_tilde = pooling_mean_moments(a, state)
    mu = mu_tilde + np.sqrt(V_tilde) * rng.standard_normal(mu_tilde.shape)
    shape = state.d_v0 + N / 2.0
    scale = state.d_v1 + 0.5 * ((a - mu) ** 2).sum(axis=0)
    v = scale / rng.gamma(shape, 1.0, size=scale.shape)
    return replace(state, mu=mu, v=v)
