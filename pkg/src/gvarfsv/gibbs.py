"""
Gibbs sampler over the full system.

One sweep runs six blocks in a fixed order:

1. VAR coefficients, equation by equation, given factors and volatilities
2. pooling mean/variances of the country coefficients
3. Normal-Gamma local/global scales of the aggregate block, then MH for b_tau
4. factor loadings
5. factors
6. log-variance paths and SV parameters

:func:`run_chain` adds burn-in, thinning, checkpointing and draw storage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import CheckpointError, ConfigError, DataError, GvarError, NumericalError
from .factor_sv import (LOADINGS_PRIOR_VAR, SVPrior, VolatilityState, average_covariance,
                        draw_factors, draw_loadings, update_logvar)
from .model_core import CoefficientState, ModelSpec, WeightMatrix, regressor_matrices, require_valid
from .priors import NormalGammaState, PoolingState, draw_var_equation, mh_step_btau, update_normal_gamma, update_pooling
from .store import DrawStore, read_checkpoint, write_checkpoint

STEP_NAMES = ("coefficients", "pooling", "normal-gamma", "loadings", "factors", "log-variances")


@dataclass(frozen=True)
class ChainConfig:
    total: int = 9000
    burn_in: int = 3000
    thin: int = 2
    seed: int = 0
    checkpoint_interval: int = 0  # 0 disables periodic checkpoints
    btau_scale: float = 0.25
    adapt_interval: int = 50

    def __post_init__(self):
        if self.total < 1:
            raise ConfigError(f"total sweeps must be positive, got {self.total}")
        if not 0 <= self.burn_in < self.total:
            raise ConfigError(f"burn-in must satisfy 0 <= burn_in < total, got {self.burn_in} vs {self.total}")
        if self.thin < 1:
            raise ConfigError(f"thinning stride must be >= 1, got {self.thin}")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint interval must be >= 0")
        if self.btau_scale < 0:
            raise ConfigError("b_tau proposal scale must be >= 0")

    @property
    def retained(self) -> int:
        return (self.total - self.burn_in) // self.thin

    def is_retained(self, sweep: int) -> bool:
        """``sweep`` is 1-based."""
        return sweep > self.burn_in and (sweep - self.burn_in) % self.thin == 0

    @classmethod
    def from_dict(cls, payload: dict) -> "ChainConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown chain settings: {sorted(unknown)}")
        return cls(**payload)


@dataclass(frozen=True)
class PriorConfig:
    d_tau0: float = 0.01
    d_tau1: float = 0.01
    d_v0: float = 0.1
    d_v1: float = 0.1
    pool_mu0: float = 0.0
    pool_V0: float = 1.0
    loadings_var: float = LOADINGS_PRIOR_VAR
    sv: SVPrior = SVPrior()
    constant_surprise_variance: bool = True
    tau_floor: float = 1e-10
    tau_cap: float = 1e10
    chi_floor: float = 1e-20

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "PriorConfig":
        payload = dict(payload)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown prior settings: {sorted(unknown)}")
        if "sv" in payload:
            sv = payload["sv"]
            bad = set(sv) - set(SVPrior.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown SV prior settings: {sorted(bad)}")
            payload["sv"] = SVPrior(**sv)
        return cls(**payload)


@dataclass(frozen=True)
class ChainData:
    """Panel in stacked order plus the precomputed regressors."""

    y: np.ndarray  # (T, K)
    weights: WeightMatrix
    Z0: np.ndarray  # (T_eff, J0)
    Zc: np.ndarray  # (N, T_eff, Jc)
    Y: np.ndarray  # (T_eff, K) left-hand side

    @property
    def n_periods(self) -> int:
        return self.Y.shape[0]


def prepare_data(spec: ModelSpec, y, weights: WeightMatrix) -> ChainData:
    require_valid(spec)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.K:
        raise DataError(f"panel has shape {y.shape}, expected (T, {spec.K})")
    if not np.all(np.isfinite(y)):
        r, c = np.argwhere(~np.isfinite(y))[0]
        raise DataError(f"non-finite panel value at row {r}, column {c}")
    Z0, Zc = regressor_matrices(y, weights, spec)
    return ChainData(y, weights, Z0, Zc, y[spec.max_lag:])


@dataclass
class ChainState:
    coeffs: CoefficientState
    ng: NormalGammaState
    pool: PoolingState
    vol: VolatilityState
    btau_scale: float = 0.25
    accepted: int = 0
    proposed: int = 0
    window_accepted: int = 0
    window_proposed: int = 0


def equation_residuals(coeffs: CoefficientState, data: ChainData, spec: ModelSpec) -> np.ndarray:
    """Residuals of every equation over the effective sample, (T_eff, K)."""
    fitted = np.empty_like(data.Y)
    fitted[:, :spec.l] = data.Z0 @ coeffs.aggregate.T
    for j in range(1, spec.N + 1):
        o = spec.country_offset(j)
        fitted[:, o:o + spec.k] = data.Zc[j - 1] @ coeffs.country[j - 1].T
    return data.Y - fitted


def gaussian_loglik(resid: np.ndarray, xi_bar: np.ndarray) -> float:
    """Sum over periods of log N(resid_t; 0, xi_bar)."""
    T, K = resid.shape
    try:
        c, low = linalg.cho_factor(xi_bar, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"average covariance is not positive definite ({exc})") from exc
    logdet = 2.0 * np.log(np.diag(c)).sum()
    z = linalg.solve_triangular(c, resid.T, lower=True)
    return float(-0.5 * (T * K * np.log(2.0 * np.pi) + T * logdet + (z * z).sum()))


def _ls_variances(data: ChainData, spec: ModelSpec) -> np.ndarray:
    """Residual variance of each equation from unrestricted least squares."""
    Y = data.Y
    T = Y.shape[0]
    out = np.empty(spec.K)

    def resid_var(y, X):
        dof = T - X.shape[1]
        if dof < 1:
            return y.var()
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        return (r ** 2).sum(axis=0) / dof

    two_m = 2 * spec.m
    out[:two_m] = Y[:, :two_m].var(axis=0)
    out[two_m:spec.l] = resid_var(Y[:, two_m:spec.l], data.Z0)
    for j in range(1, spec.N + 1):
        o = spec.country_offset(j)
        out[o:o + spec.k] = resid_var(Y[:, o:o + spec.k], data.Zc[j - 1])
    return np.maximum(out, 1e-8)


def initialize_state(spec: ModelSpec, data: ChainData, rng: np.random.Generator,
                     priors: PriorConfig = PriorConfig(), btau_scale: float = 0.25) -> ChainState:
    T, K, F = data.n_periods, spec.K, spec.F
    n_free = spec.k_aggregate_low_freq * spec.n_agg_regressors
    L_country = spec.n_country_coefficients
    ng = NormalGammaState(np.ones(n_free), 1.0, 0.5, priors.d_tau0, priors.d_tau1)
    pool = PoolingState(np.zeros(L_country), np.ones(L_country),
                        np.full(L_country, priors.pool_mu0), np.full(L_country, priors.pool_V0),
                        priors.d_v0, priors.d_v1)

    logvar = np.log(_ls_variances(data, spec))
    constant = np.zeros(K, dtype=bool)
    if priors.constant_surprise_variance:
        constant[:2 * spec.m] = True
    vol = VolatilityState(
        loadings=0.01 * rng.standard_normal((K, F)),
        factors=np.zeros((T, F)),
        factor_logvar=np.zeros((T, F)),
        idio_logvar=np.tile(logvar, (T, 1)),
        theta=np.concatenate([np.zeros(F), logvar]),
        phi=np.full(F + K, 0.9),
        sigma=np.full(F + K, 0.1),
        constant=constant,
    )
    return ChainState(CoefficientState.zeros(spec), ng, pool, vol, btau_scale=btau_scale)


def _draw_coefficients(state: ChainState, data: ChainData, spec: ModelSpec, rng, priors: PriorConfig):
    vol = state.vol
    target = data.Y - vol.factors @ vol.loadings.T
    err_var = np.exp(vol.idio_logvar)
    J0, Jc = spec.n_agg_regressors, spec.n_country_regressors
    two_m = 2 * spec.m

    agg = np.zeros_like(state.coeffs.aggregate)
    tau = np.clip(state.ng.tau, priors.tau_floor, priors.tau_cap).reshape((spec.k_aggregate_low_freq, J0), order="F")
    zeros0 = np.zeros(J0)
    for i in range(spec.k_aggregate_low_freq):
        r = two_m + i
        agg[r] = draw_var_equation(target[:, r], data.Z0, zeros0, tau[i], err_var[:, r], rng)

    mu = state.pool.mu.reshape((spec.k, Jc), order="F")
    v = state.pool.v.reshape((spec.k, Jc), order="F")
    country = np.empty_like(state.coeffs.country)
    for j in range(1, spec.N + 1):
        o = spec.country_offset(j)
        X = data.Zc[j - 1]
        for r in range(spec.k):
            col = o + r
            country[j - 1, r] = draw_var_equation(target[:, col], X, mu[r], v[r], err_var[:, col], rng)
    return CoefficientState(agg, country, spec)


def _run_step(n: int, fn, *args):
    try:
        return fn(*args)
    except GvarError as exc:
        err = type(exc)(f"Gibbs step {n} ({STEP_NAMES[n - 1]}): {exc}")
        err.step = n
        raise err from exc


def gibbs_sweep(state: ChainState, data: ChainData, spec: ModelSpec, rng: np.random.Generator,
                priors: PriorConfig = PriorConfig()) -> ChainState:
    """One pass through all six blocks. Returns a new state; the input is not modified."""
    coeffs = _run_step(1, _draw_coefficients, state, data, spec, rng, priors)
    pool = _run_step(2, update_pooling, coeffs.country_vectors(), state.pool, rng)

    def ng_step():
        ng = update_normal_gamma(coeffs.a0(), state.ng, rng, chi_floor=priors.chi_floor,
                                 tau_floor=priors.tau_floor, tau_cap=priors.tau_cap)
        return mh_step_btau(ng, rng, state.btau_scale)

    ng, accepted = _run_step(3, ng_step)

    resid = equation_residuals(coeffs, data, spec)
    vol = state.vol
    L = _run_step(4, draw_loadings, resid, vol.factors, vol.idio_logvar, rng, priors.loadings_var)
    f = _run_step(5, draw_factors, resid, L, vol.factor_logvar, vol.idio_logvar, rng)
    vol = _run_step(6, update_logvar, resid, L, f, vol, rng, priors.sv)
    return replace(state, coeffs=coeffs, pool=pool, ng=ng, vol=vol,
                   accepted=state.accepted + accepted, proposed=state.proposed + 1,
                   window_accepted=state.window_accepted + accepted,
                   window_proposed=state.window_proposed + 1)


def _adapt(state: ChainState) -> ChainState:
    # keep b_tau acceptance in the 20-40% range during burn-in
    rate = state.window_accepted / max(state.window_proposed, 1)
    scale = state.btau_scale
    if rate < 0.2:
        scale *= 0.8
    elif rate > 0.4:
        scale *= 1.25
    return replace(state, btau_scale=scale, window_accepted=0, window_proposed=0)


def run_hash(spec: ModelSpec, data: ChainData, config: ChainConfig, priors: PriorConfig) -> str:
    h = hashlib.sha256()
    h.update(spec.to_json().encode())
    h.update(np.ascontiguousarray(data.y, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(data.weights.values, dtype="<f8").tobytes())
    cfg = {k: v for k, v in asdict(config).items() if k != "checkpoint_interval"}
    h.update(json.dumps(cfg, sort_keys=True).encode())
    h.update(json.dumps(priors.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def _empty_draws(spec: ModelSpec, n: int) -> dict[str, np.ndarray]:
    FK = spec.F + spec.K
    return {
        "aggregate": np.zeros((n, spec.l, spec.n_agg_regressors)),
        "country": np.zeros((n, spec.N, spec.k, spec.n_country_regressors)),
        "loadings": np.zeros((n, spec.K, spec.F)),
        "sv_theta": np.zeros((n, FK)),
        "sv_phi": np.zeros((n, FK)),
        "sv_sigma": np.zeros((n, FK)),
        "xi_bar": np.zeros((n, spec.K, spec.K)),
        "loglik": np.zeros(n),
        "b_tau": np.zeros(n),
        "lambda_tau": np.zeros(n),
    }


def _record(draws, i, state: ChainState, data: ChainData, spec: ModelSpec):
    vol = state.vol
    xi_bar = average_covariance(vol.loadings, vol.factor_logvar, vol.idio_logvar)
    draws["aggregate"][i] = state.coeffs.aggregate
    draws["country"][i] = state.coeffs.country
    draws["loadings"][i] = vol.loadings
    draws["sv_theta"][i] = vol.theta
    draws["sv_phi"][i] = vol.phi
    draws["sv_sigma"][i] = vol.sigma
    draws["xi_bar"][i] = xi_bar
    draws["loglik"][i] = gaussian_loglik(equation_residuals(state.coeffs, data, spec), xi_bar)
    draws["b_tau"][i] = state.ng.b_tau
    draws["lambda_tau"][i] = state.ng.lambda_tau


def _state_arrays(state: ChainState) -> dict[str, np.ndarray]:
    v = state.vol
    return {
        "st_aggregate": state.coeffs.aggregate, "st_country": state.coeffs.country,
        "st_tau": state.ng.tau, "st_mu": state.pool.mu, "st_v": state.pool.v,
        "st_mu0": state.pool.mu0, "st_V0": state.pool.V0,
        "st_loadings": v.loadings, "st_factors": v.factors, "st_factor_logvar": v.factor_logvar,
        "st_idio_logvar": v.idio_logvar, "st_theta": v.theta, "st_phi": v.phi, "st_sigma": v.sigma,
        "st_constant": v.constant,
    }


def _state_scalars(state: ChainState) -> dict:
    return {
        "lambda_tau": state.ng.lambda_tau, "b_tau": state.ng.b_tau,
        "d_tau0": state.ng.d_tau0, "d_tau1": state.ng.d_tau1,
        "d_v0": state.pool.d_v0, "d_v1": state.pool.d_v1,
        "btau_scale": state.btau_scale, "accepted": state.accepted, "proposed": state.proposed,
        "window_accepted": state.window_accepted, "window_proposed": state.window_proposed,
    }


def _restore_state(header: dict, arrays: dict, spec: ModelSpec) -> ChainState:
    s = header["state"]
    try:
        coeffs = CoefficientState(arrays["st_aggregate"], arrays["st_country"], spec)
        ng = NormalGammaState(arrays["st_tau"], s["lambda_tau"], s["b_tau"], s["d_tau0"], s["d_tau1"])
        pool = PoolingState(arrays["st_mu"], arrays["st_v"], arrays["st_mu0"], arrays["st_V0"], s["d_v0"], s["d_v1"])
        vol = VolatilityState(arrays["st_loadings"], arrays["st_factors"], arrays["st_factor_logvar"],
                              arrays["st_idio_logvar"], arrays["st_theta"], arrays["st_phi"],
                              arrays["st_sigma"], arrays["st_constant"].astype(bool))
    except (KeyError, GvarError) as exc:
        raise CheckpointError(f"checkpoint state is incomplete or invalid: {exc}") from exc
    return ChainState(coeffs, ng, pool, vol, s["btau_scale"], s["accepted"], s["proposed"],
                      s["window_accepted"], s["window_proposed"])


def save_chain_checkpoint(path, sweep: int, state: ChainState, rng: np.random.Generator,
                          draws: dict, n_recorded: int, rhash: str) -> None:
    header = {"run_hash": rhash, "sweep": sweep, "n_recorded": n_recorded,
              "rng_state": rng.bit_generator.state, "state": _state_scalars(state)}
    arrays = dict(_state_arrays(state))
    arrays.update({f"draw_{k}": v[:n_recorded] for k, v in draws.items()})
    write_checkpoint(path, header, arrays)


def run_chain(config: ChainConfig, spec: ModelSpec, data: ChainData, priors: PriorConfig = PriorConfig(),
              checkpoint_path=None, resume: bool = False, stop_after: int | None = None,
              progress=None) -> DrawStore:
    """
    Run the sampler and return the retained draws.

    With ``checkpoint_path`` set, the chain state, RNG state and draws so far
    are written every ``config.checkpoint_interval`` sweeps and whenever the
    run stops early via ``stop_after``. ``resume=True`` continues from an
    existing checkpoint; the continuation is bit-identical to an
    uninterrupted run.
    """
    rhash = run_hash(spec, data, config, priors)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    draws = _empty_draws(spec, config.retained)
    n_rec = 0
    start = 1

    if resume:
        if checkpoint_path is None:
            raise ConfigError("resume requested without a checkpoint path")
        header, arrays = read_checkpoint(checkpoint_path, expected_hash=rhash)
        state = _restore_state(header, arrays, spec)
        try:
            rng.bit_generator.state = header["rng_state"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"checkpoint RNG state is invalid: {exc}") from exc
        n_rec = int(header["n_recorded"])
        for k in draws:
            draws[k][:n_rec] = arrays[f"draw_{k}"]
        start = int(header["sweep"]) + 1
    else:
        state = initialize_state(spec, data, rng, priors, config.btau_scale)

    last = config.total if stop_after is None else min(stop_after, config.total)
    for sweep in range(start, last + 1):
        state = gibbs_sweep(state, data, spec, rng, priors)
        if sweep <= config.burn_in and config.adapt_interval and sweep % config.adapt_interval == 0:
            state = _adapt(state)
        if config.is_retained(sweep):
            _record(draws, n_rec, state, data, spec)
            n_rec += 1
        if checkpoint_path is not None and (
                (config.checkpoint_interval and sweep % config.checkpoint_interval == 0) or sweep == last):
            save_chain_checkpoint(checkpoint_path, sweep, state, rng, draws, n_rec, rhash)
        if progress is not None:
            progress(sweep, config.total)

    completed = last if start <= last else start - 1
    meta = {
        "seed": config.seed,
        "chain": asdict(config),
        "priors": priors.to_dict(),
        "run_hash": rhash,
        "completed_sweeps": completed,
        "btau_acceptance": state.accepted / max(state.proposed, 1),
        "btau_scale": state.btau_scale,
        "n_periods_effective": data.n_periods,
    }
    return DrawStore(spec, data.weights, {k: v[:n_rec].copy() for k, v in draws.items()}, meta)


@dataclass(frozen=True)
class DICResult:
    dic: float
    mean_deviance: float
    deviance_at_mean: float
    p_d: float
    n_draws: int = field(default=0)


def compute_dic(store: DrawStore, data: ChainData) -> DICResult:
    """
    Conditional DIC given each draw's coefficients and average covariance.

    ``DIC = 2 mean(D) - D(posterior mean)`` with ``D = -2 loglik``.
    """
    n = len(store)
    if n == 0:
        raise DataError("draw store is empty; cannot compute DIC")
    ll = np.asarray(store.arrays["loglik"], dtype=float)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise NumericalError(f"non-finite log-likelihood at retained draw {int(bad[0])}")
    spec = store.spec
    mean_coeffs = CoefficientState(store.arrays["aggregate"].mean(axis=0), store.arrays["country"].mean(axis=0), spec)
    mean_xi = store.arrays["xi_bar"].mean(axis=0)
    d_mean = -2.0 * gaussian_loglik(equation_residuals(mean_coeffs, data, spec), mean_xi)
    if not np.isfinite(d_mean):
        raise NumericalError("non-finite deviance at the posterior mean")
    dbar = float(np.mean(-2.0 * ll))
    return DICResult(2.0 * dbar - d_mean, dbar, d_mean, dbar - d_mean, n)
