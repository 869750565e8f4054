"""
Synthetic systems with known parameters.

:func:`make_truth` draws stable coefficients, weights, loadings and SV
parameters; :func:`simulate` runs the stacked VAR forward from zero initial
conditions and discards a burn-in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_ingest import PanelDataset, month_range
from .errors import ConfigError
from .irf import companion_form, spectral_radius
from .model_core import CoefficientState, ModelSpec, WeightMatrix, assemble_stacked_system, require_valid

SIM_BURN_IN = 50
_START_MONTH = "2000-01"


@dataclass(frozen=True)
class Truth:
    spec: ModelSpec
    weights: WeightMatrix
    coeffs: CoefficientState
    loadings: np.ndarray  # (K, F)
    theta: np.ndarray  # (F + K,)
    phi: np.ndarray
    sigma: np.ndarray
    constant: np.ndarray  # (K,) bool

    def stacked(self):
        return assemble_stacked_system(self.spec, self.coeffs, self.weights)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "weights": self.weights.values.tolist(),
            "aggregate": self.coeffs.aggregate.tolist(),
            "country": self.coeffs.country.tolist(),
            "loadings": self.loadings.tolist(),
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "sigma": self.sigma.tolist(),
            "constant": self.constant.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Truth":
        try:
            spec = ModelSpec.from_dict(payload["spec"])
            coeffs = CoefficientState(np.array(payload["aggregate"], dtype=float),
                                      np.array(payload["country"], dtype=float), spec)
            return cls(spec, WeightMatrix(payload["weights"]), coeffs,
                       np.array(payload["loadings"], dtype=float).reshape(spec.K, spec.F),
                       np.array(payload["theta"], dtype=float), np.array(payload["phi"], dtype=float),
                       np.array(payload["sigma"], dtype=float), np.array(payload["constant"], dtype=bool))
        except KeyError as exc:
            raise ConfigError(f"truth record lacks field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Truth":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read truth file {path}: {exc}") from exc


@dataclass(frozen=True)
class SimulatedPanel:
    y: np.ndarray  # (T, K)
    factors: np.ndarray  # (T, F)
    factor_logvar: np.ndarray
    idio_logvar: np.ndarray

    def to_panel(self, spec: ModelSpec, start: str = _START_MONTH) -> PanelDataset:
        T = self.y.shape[0]
        y0, m0 = (int(s) for s in start.split("-"))
        last = m0 - 1 + T - 1
        stop = f"{y0 + last // 12:04d}-{last % 12 + 1:02d}"
        periods = month_range(start, stop)
        return PanelDataset(tuple(periods), tuple(spec.column_ids()), self.y.copy(), ("pct",) * spec.K)


def random_weights(n_countries: int, rng: np.random.Generator) -> WeightMatrix:
    raw = rng.uniform(0.1, 1.0, size=(n_countries + 1, n_countries))
    return WeightMatrix.normalized(raw)


def stacked_radius(spec: ModelSpec, coeffs: CoefficientState, w: WeightMatrix) -> float:
    _, G = assemble_stacked_system(spec, coeffs, w)
    return spectral_radius(companion_form(G))


def _random_coefficients(spec: ModelSpec, rng: np.random.Generator, scale: float) -> CoefficientState:
    s = spec
    two_m = 2 * s.m
    agg = np.zeros((s.l, s.n_agg_regressors))
    kt = s.k_aggregate_low_freq
    agg[two_m:, 0] = rng.normal(0.0, 0.1, kt)
    for p in range(1, s.P + 1):
        decay = 0.5 ** (p - 1)
        block = rng.normal(0.0, scale, (kt, s.l))
        block[:, two_m:] += np.diag(rng.uniform(0.3, 0.6, kt)) * decay
        agg[two_m:, 1 + (p - 1) * s.l: 1 + p * s.l] = block * decay
    start = 1 + s.l * s.P
    agg[two_m:, start:] = rng.normal(0.0, scale, (kt, s.k * s.Q))

    Jc = s.n_country_regressors
    common = rng.normal(0.0, scale, (s.k, Jc))
    country = common + rng.normal(0.0, 0.5 * scale, (s.N, s.k, Jc))
    for j in range(s.N):
        for p in range(1, s.P + 1):
            cols = slice(1 + (p - 1) * s.k, 1 + p * s.k)
            country[j, :, cols] += np.diag(rng.uniform(0.3, 0.6, s.k)) * 0.5 ** (p - 1)
    return CoefficientState(agg, country, spec)


def _scale_lags(coeffs: CoefficientState, factor: float) -> CoefficientState:
    agg = coeffs.aggregate.copy()
    country = coeffs.country.copy()
    agg[:, 1:] *= factor
    country[:, :, 1:] *= factor
    return CoefficientState(agg, country, coeffs.spec)


def structural_loadings(spec: ModelSpec, rng: np.random.Generator, roles: dict | None = None,
                        loading_scale: float = 0.5) -> np.ndarray:
    """
    Loadings whose first 2m factors act as the US and EA surprise shocks.

    Factor ``r*m + i`` (region r, shock i) loads only on its own region's
    surprise rows, with MP/CBI signs: MP raises the rate surprise and lowers
    the stock surprise, CBI raises both. The low-frequency ``roles``
    (``us_rate``, ``us_stock``, ``ea_rate``, ``ea_stock``) get matching
    signs. Remaining factors never load on surprise rows.
    """
    if spec.F < 2 * spec.m:
        raise ConfigError(f"structural loadings need F >= 2m ({2 * spec.m}), got F = {spec.F}")
    if spec.m > 2:
        raise ConfigError("structural loadings are defined for m <= 2")
    ids = spec.column_ids()
    K, m = spec.K, spec.m
    L = rng.normal(0.0, loading_scale, (K, spec.F))
    L[:2 * m, :] = 0.0
    roles = roles or {}
    # sign of (rate, stock) response for shock types MP, CBI
    signs = {0: (1.0, -1.0), 1: (1.0, 1.0)}
    for r, region in enumerate(("US", "EA")):
        for i in range(m):
            f = r * m + i
            rate_sign, stock_sign = signs[i]
            mags = rng.uniform(0.5, 1.0, 4)
            L[r * m, f] = rate_sign * mags[0]
            if m == 2:
                L[r * m + 1, f] = stock_sign * mags[1]
            key = region.lower()
            if roles.get(f"{key}_rate"):
                L[ids.index(roles[f"{key}_rate"]), f] = rate_sign * mags[2]
            if roles.get(f"{key}_stock"):
                L[ids.index(roles[f"{key}_stock"]), f] = stock_sign * mags[3]
    return L


def make_truth(spec: ModelSpec, rng: np.random.Generator, weights: WeightMatrix | None = None, *,
               coef_scale: float = 0.1, loading_scale: float = 0.5, sv_scale: float = 0.1,
               roles: dict | None = None, structural: bool = False, max_radius: float = 0.9) -> Truth:
    require_valid(spec)
    if weights is None:
        weights = random_weights(spec.N, rng)
    coeffs = _random_coefficients(spec, rng, coef_scale)
    while stacked_radius(spec, coeffs, weights) >= max_radius:
        coeffs = _scale_lags(coeffs, 0.9)

    if structural:
        L = structural_loadings(spec, rng, roles, loading_scale)
    else:
        L = rng.normal(0.0, loading_scale, (spec.K, spec.F))
    F, K = spec.F, spec.K
    constant = np.zeros(K, dtype=bool)
    constant[:2 * spec.m] = True
    theta = np.concatenate([np.zeros(F), np.log(rng.uniform(0.2, 0.5, K))])
    phi = np.full(F + K, 0.9)
    sigma = np.full(F + K, sv_scale)
    return Truth(spec, weights, coeffs, L, theta, phi, sigma, constant)


def _ar1_paths(theta, phi, sigma, n, rng):
    h = np.empty((n, theta.size))
    h[0] = theta + sigma / np.sqrt(1.0 - phi ** 2) * rng.standard_normal(theta.size)
    for t in range(1, n):
        h[t] = theta + phi * (h[t - 1] - theta) + sigma * rng.standard_normal(theta.size)
    return h


def simulate(truth: Truth, T: int, rng: np.random.Generator, burn_in: int = SIM_BURN_IN,
             check_stability: bool = True) -> SimulatedPanel:
    """Forward simulation from zero initial conditions; the first ``burn_in`` periods are dropped."""
    spec = truth.spec
    c, G = truth.stacked()
    if check_stability:
        rho = spectral_radius(companion_form(G))
        if rho >= 1.0:
            raise ConfigError(f"true dynamics are explosive (companion spectral radius {rho:.4f})")
    if np.any(np.abs(truth.phi) >= 1.0) or np.any(truth.sigma <= 0):
        raise ConfigError("true SV parameters need |phi| < 1 and sigma > 0")
    F, K = spec.F, spec.K
    n = T + burn_in
    h = _ar1_paths(truth.theta, truth.phi, truth.sigma, n, rng)
    h[:, F:][:, truth.constant] = truth.theta[F:][truth.constant]
    f = np.exp(0.5 * h[:, :F]) * rng.standard_normal((n, F))
    eta = np.exp(0.5 * h[:, F:]) * rng.standard_normal((n, K))
    eps = f @ truth.loadings.T + eta

    H = G.shape[0]
    y = np.zeros((n + H, K))
    for t in range(n):
        acc = c + eps[t]
        for lag in range(1, H + 1):
            acc = acc + G[lag - 1] @ y[H + t - lag]
        y[H + t] = acc
    keep = slice(burn_in, n)
    return SimulatedPanel(y[H:][keep], f[keep], h[keep, :F], h[keep, F:])
