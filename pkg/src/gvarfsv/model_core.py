"""
System layout for the multi-country VAR.

The stacked vector is ordered ``(m_US, m_EA, y~_0, y_1, ..., y_N)`` so the
first ``2m`` entries are the high-frequency surprises, followed by the
``k~`` aggregate low-frequency series and then ``N`` country blocks of
``k`` variables each.

Coefficients are stored as one matrix per equation block whose columns
follow the regressor layout used in estimation:

* aggregate block, ``l x J0`` with ``J0 = 1 + l*P + k*Q``:
  ``[alpha_0 | A_01 ... A_0P | B_01 ... B_0Q]``
* country ``j``, ``k x Jc`` with ``Jc = 1 + k*P + k*Q + l*R``:
  ``[alpha_j | A_j1 ... A_jP | B_j1 ... B_jQ | C_j1 ... C_jR]``
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

REGIONS = ("US", "EA")

_EURO_AGGREGATE_VARIABLES = (
    "US_short_rate", "US_stock", "US_ip", "US_cpi", "US_ebp", "US_long_rate",
    "EA_short_rate", "EA_stock", "EA_ip", "EA_cpi", "EA_bbb_spread", "EA_usdeur",
)
_EURO_COUNTRY_VARIABLES = ("cpi", "equity", "ip", "ltrate", "unemp")
_EURO_COUNTRIES = (
    "AT", "BE", "DE", "ES", "FI", "FR", "GR", "IE", "IT", "NL", "PT",
    "CA", "DK", "JP", "SE", "UK", "US",
)
_SURPRISE_INSTRUMENTS = ("rate", "stock")


@dataclass(frozen=True)
class ModelSpec:
    """
    Dimensions of one system.

    ``l_aggregate`` and ``k_system`` are derived (``2m + k~`` and ``l + kN``)
    when omitted. They may be given explicitly, e.g. when read from JSON,
    in which case :func:`validate_spec` checks them against the formulas.
    The optional name lists only label columns; generated defaults are used
    when they are left out.
    """

    n_countries: int
    k_country: int
    m_surprise: int
    k_aggregate_low_freq: int
    lag_domestic: int = 1
    lag_foreign: int = 1
    lag_aggregate_in_country: int = 1
    n_factors: int = 1
    l_aggregate: int | None = None
    k_system: int | None = None
    country_codes: tuple[str, ...] | None = None
    country_variables: tuple[str, ...] | None = None
    surprise_instruments: tuple[str, ...] | None = None
    aggregate_variables: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.l_aggregate is None:
            object.__setattr__(self, "l_aggregate", 2 * self.m_surprise + self.k_aggregate_low_freq)
        if self.k_system is None:
            object.__setattr__(self, "k_system", self.l_aggregate + self.k_country * self.n_countries)
        for name in ("country_codes", "country_variables", "surprise_instruments", "aggregate_variables"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if self.country_codes is None:
            codes = (_EURO_COUNTRIES if self.n_countries == len(_EURO_COUNTRIES)
                     else tuple(f"C{j + 1:02d}" for j in range(self.n_countries)))
            object.__setattr__(self, "country_codes", codes)
        if self.country_variables is None:
            names = (_EURO_COUNTRY_VARIABLES if self.k_country == len(_EURO_COUNTRY_VARIABLES)
                     else tuple(f"v{i + 1}" for i in range(self.k_country)))
            object.__setattr__(self, "country_variables", names)
        if self.surprise_instruments is None:
            names = (_SURPRISE_INSTRUMENTS[: self.m_surprise] if self.m_surprise <= 2
                     else tuple(f"s{i + 1}" for i in range(self.m_surprise)))
            object.__setattr__(self, "surprise_instruments", names)
        if self.aggregate_variables is None:
            names = (_EURO_AGGREGATE_VARIABLES if self.k_aggregate_low_freq == len(_EURO_AGGREGATE_VARIABLES)
                     else tuple(f"a{i + 1}" for i in range(self.k_aggregate_low_freq)))
            object.__setattr__(self, "aggregate_variables", names)

    # short aliases used throughout the numerical code
    @property
    def N(self) -> int:
        return self.n_countries

    @property
    def k(self) -> int:
        return self.k_country

    @property
    def m(self) -> int:
        return self.m_surprise

    @property
    def l(self) -> int:  # noqa: E743
        return self.l_aggregate

    @property
    def K(self) -> int:
        return self.k_system

    @property
    def P(self) -> int:
        return self.lag_domestic

    @property
    def Q(self) -> int:
        return self.lag_foreign

    @property
    def R(self) -> int:
        return self.lag_aggregate_in_country

    @property
    def F(self) -> int:
        return self.n_factors

    @property
    def max_lag(self) -> int:
        return max(self.P, self.Q, self.R)

    @property
    def n_agg_regressors(self) -> int:
        return 1 + self.l * self.P + self.k * self.Q

    @property
    def n_country_regressors(self) -> int:
        return 1 + self.k * self.P + self.k * self.Q + self.l * self.R

    @property
    def n_agg_coefficients(self) -> int:
        """Length of the free aggregate coefficient vector a_0."""
        return self.k_aggregate_low_freq * self.n_agg_regressors

    @property
    def n_country_coefficients(self) -> int:
        """Length of each country coefficient vector a_j."""
        return self.k * self.n_country_regressors

    def country_offset(self, j: int) -> int:
        """Row offset of country ``j`` (1-based) in the stacked vector."""
        return self.l + (j - 1) * self.k

    def column_ids(self) -> list[str]:
        ids = [f"m{region}.{name}" for region in REGIONS for name in self.surprise_instruments]
        ids += [f"agg.{name}" for name in self.aggregate_variables]
        ids += [f"{code}.{name}" for code in self.country_codes for name in self.country_variables]
        return ids

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown ModelSpec fields: {unknown}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"invalid ModelSpec document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def validate_spec(spec: ModelSpec) -> list[str]:
    """Return every violated invariant; an empty list means the spec is valid."""
    problems = []
    counts = {
        "n_countries": spec.n_countries,
        "k_country": spec.k_country,
        "m_surprise": spec.m_surprise,
        "k_aggregate_low_freq": spec.k_aggregate_low_freq,
        "lag_domestic": spec.lag_domestic,
        "lag_foreign": spec.lag_foreign,
        "lag_aggregate_in_country": spec.lag_aggregate_in_country,
        "n_factors": spec.n_factors,
    }
    for name, value in counts.items():
        if not isinstance(value, (int, np.integer)) or value < 1:
            problems.append(f"{name} must be an integer >= 1 (got {value!r})")
    if spec.l_aggregate != 2 * spec.m_surprise + spec.k_aggregate_low_freq:
        problems.append(
            f"l_aggregate violates l = 2m + k~: {spec.l_aggregate} != "
            f"2*{spec.m_surprise} + {spec.k_aggregate_low_freq}"
        )
    if spec.k_system != spec.l_aggregate + spec.k_country * spec.n_countries:
        problems.append(
            f"k_system violates K = l + kN: {spec.k_system} != "
            f"{spec.l_aggregate} + {spec.k_country}*{spec.n_countries}"
        )
    if isinstance(spec.n_factors, (int, np.integer)) and spec.n_factors > spec.k_system:
        problems.append(f"factor count exceeds system size: F={spec.n_factors} > K={spec.k_system}")
    for name, expected in (
        ("country_codes", spec.n_countries),
        ("country_variables", spec.k_country),
        ("surprise_instruments", spec.m_surprise),
        ("aggregate_variables", spec.k_aggregate_low_freq),
    ):
        if len(getattr(spec, name)) != expected:
            problems.append(f"{name} has {len(getattr(spec, name))} entries, expected {expected}")
    ids = spec.column_ids()
    if len(set(ids)) != len(ids):
        problems.append("column ids are not unique")
    return problems


def require_valid(spec: ModelSpec) -> ModelSpec:
    problems = validate_spec(spec)
    if problems:
        raise ConfigError("invalid model spec: " + "; ".join(problems))
    return spec


class WeightMatrix:
    """
    Cross-section weights ``w[i][j]``, ``i = 0..N`` (row 0 feeds the
    aggregate block), ``j = 1..N`` stored at column ``j - 1``.

    With a single country the country row has no admissible partner and is
    kept at zero, so that country simply has no foreign regressors.
    """

    def __init__(self, values, atol: float = 1e-12):
        w = np.array(values, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] + 1:
            raise DataError(f"weight matrix must be (N+1) x N, got shape {w.shape}")
        n = w.shape[1]
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DataError("weights must be finite and nonnegative")
        for i in range(1, n + 1):
            if w[i, i - 1] != 0.0:
                raise DataError(f"self-weight w[{i}][{i}] must be zero, got {w[i, i - 1]}")
        sums = w.sum(axis=1)
        for i, s in enumerate(sums):
            if n == 1 and i == 1:
                continue
            if abs(s - 1.0) > atol:
                raise DataError(f"weight row {i} sums to {s!r}, expected 1")
        w.setflags(write=False)
        self._w = w

    @property
    def values(self) -> np.ndarray:
        return self._w

    @property
    def n_countries(self) -> int:
        return self._w.shape[1]

    def __getitem__(self, key):
        return self._w[key]

    def __eq__(self, other):
        return isinstance(other, WeightMatrix) and np.array_equal(self._w, other._w)

    def __repr__(self):
        return f"WeightMatrix(N={self.n_countries})"

    @classmethod
    def normalized(cls, raw) -> "WeightMatrix":
        """Zero the country diagonal and rescale each row to sum to one."""
        w = np.array(raw, dtype=float)
        n = w.shape[1]
        for i in range(1, n + 1):
            w[i, i - 1] = 0.0
        sums = w.sum(axis=1)
        for i, s in enumerate(sums):
            if n == 1 and i == 1:
                continue
            if s <= 0:
                raise DataError(f"weight row {i} has no positive entry; cannot normalize")
            w[i] /= s
        return cls(w)


def aggregate_zero_mask(spec: ModelSpec) -> np.ndarray:
    """Boolean ``l x J0`` mask; True marks structural zeros (surprise equations)."""
    mask = np.zeros((spec.l, spec.n_agg_regressors), dtype=bool)
    mask[: 2 * spec.m, :] = True
    return mask


@dataclass(frozen=True)
class CoefficientState:
    """VAR coefficients of the aggregate block and every country block."""

    aggregate: np.ndarray  # (l, J0)
    country: np.ndarray  # (N, k, Jc)
    spec: ModelSpec = field(repr=False, compare=False)

    def __post_init__(self):
        spec = self.spec
        if self.aggregate.shape != (spec.l, spec.n_agg_regressors):
            raise ConfigError(f"aggregate coefficients have shape {self.aggregate.shape}, "
                              f"expected {(spec.l, spec.n_agg_regressors)}")
        if self.country.shape != (spec.N, spec.k, spec.n_country_regressors):
            raise ConfigError(f"country coefficients have shape {self.country.shape}, "
                              f"expected {(spec.N, spec.k, spec.n_country_regressors)}")

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "CoefficientState":
        return cls(np.zeros((spec.l, spec.n_agg_regressors)),
                   np.zeros((spec.N, spec.k, spec.n_country_regressors)), spec)

    def respects_mask(self) -> bool:
        return not np.any(self.aggregate[aggregate_zero_mask(self.spec)])

    def __add__(self, other: "CoefficientState") -> "CoefficientState":
        return CoefficientState(self.aggregate + other.aggregate, self.country + other.country, self.spec)

    # aggregate block pieces
    def alpha0(self) -> np.ndarray:
        return self.aggregate[:, 0]

    def A0(self, p: int) -> np.ndarray:
        l = self.spec.l
        return self.aggregate[:, 1 + (p - 1) * l: 1 + p * l]

    def B0(self, q: int) -> np.ndarray:
        s = self.spec
        start = 1 + s.l * s.P + (q - 1) * s.k
        return self.aggregate[:, start: start + s.k]

    # country block pieces (j is 1-based)
    def alpha(self, j: int) -> np.ndarray:
        return self.country[j - 1, :, 0]

    def A(self, j: int, p: int) -> np.ndarray:
        k = self.spec.k
        return self.country[j - 1, :, 1 + (p - 1) * k: 1 + p * k]

    def B(self, j: int, q: int) -> np.ndarray:
        s = self.spec
        start = 1 + s.k * s.P + (q - 1) * s.k
        return self.country[j - 1, :, start: start + s.k]

    def C(self, j: int, r: int) -> np.ndarray:
        s = self.spec
        start = 1 + s.k * s.P + s.k * s.Q + (r - 1) * s.l
        return self.country[j - 1, :, start: start + s.l]

    def a0(self) -> np.ndarray:
        """Free aggregate coefficients, column-major vec of the k~ unmasked rows."""
        return self.aggregate[2 * self.spec.m:, :].reshape(-1, order="F")

    def a(self, j: int) -> np.ndarray:
        return self.country[j - 1].reshape(-1, order="F")

    def country_vectors(self) -> np.ndarray:
        """All a_j stacked as an ``N x L`` array."""
        return np.stack([self.a(j) for j in range(1, self.spec.N + 1)])


def build_cross_section_averages(data: np.ndarray, w: WeightMatrix, spec: ModelSpec) -> np.ndarray:
    """
    Weighted foreign averages ``x_it = sum_j w[i][j] y_jt``.

    Parameters
    ----------
    data : (T, K) array in stacked order.

    Returns
    -------
    (T, N + 1, k) array; slot ``i`` holds ``x_it``.
    """
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.K:
        raise DataError(f"panel has shape {y.shape}, expected (T, {spec.K})")
    if w.n_countries != spec.N:
        raise DataError(f"weight matrix covers {w.n_countries} countries, "
                        f"but the panel has {spec.N} country blocks")
    countries = y[:, spec.l:].reshape(y.shape[0], spec.N, spec.k)
    return np.einsum("ij,tjv->tiv", w.values, countries)


def assemble_stacked_system(spec: ModelSpec, coeffs: CoefficientState, w: WeightMatrix):
    """
    Write the aggregate and country equations as one K-dimensional VAR.

    Returns
    -------
    intercept : (K,) array
    lags : (H, K, K) array with ``H = max(P, Q, R)``; ``lags[h - 1]`` is G_h.
    Shorter lag orders are zero-padded.
    """
    if w.n_countries != spec.N:
        raise DataError(f"weight matrix covers {w.n_countries} countries, expected {spec.N}")
    if not coeffs.respects_mask():
        raise ConfigError("coefficient state has nonzero entries in structurally-zero slots")
    K, l, k, N = spec.K, spec.l, spec.k, spec.N
    H = spec.max_lag
    G = np.zeros((H, K, K))
    c = np.zeros(K)
    c[:l] = coeffs.alpha0()
    wv = w.values
    for h in range(1, H + 1):
        g = G[h - 1]
        if h <= spec.P:
            g[:l, :l] = coeffs.A0(h)
        if h <= spec.Q:
            b0 = coeffs.B0(h)
            for j in range(1, N + 1):
                o = spec.country_offset(j)
                g[:l, o:o + k] += b0 * wv[0, j - 1]
    for i in range(1, N + 1):
        oi = spec.country_offset(i)
        c[oi:oi + k] = coeffs.alpha(i)
        for h in range(1, H + 1):
            g = G[h - 1]
            if h <= spec.P:
                g[oi:oi + k, oi:oi + k] += coeffs.A(i, h)
            if h <= spec.Q:
                bi = coeffs.B(i, h)
                for j in range(1, N + 1):
                    if wv[i, j - 1] != 0.0:
                        oj = spec.country_offset(j)
                        g[oi:oi + k, oj:oj + k] += bi * wv[i, j - 1]
            if h <= spec.R:
                g[oi:oi + k, :l] += coeffs.C(i, h)
    return c, G


def regressor_matrices(y: np.ndarray, w: WeightMatrix, spec: ModelSpec):
    """
    Build the regressor matrices over the effective sample ``t = H..T-1``.

    Returns
    -------
    Z0 : (T_eff, J0) aggregate regressors
    Zc : (N, T_eff, Jc) country regressors
    """
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    H = spec.max_lag
    if T <= H + 1:
        raise DataError(f"need more than {H + 1} periods, got {T}")
    x = build_cross_section_averages(y, w, spec)
    y0 = y[:, :spec.l]
    T_eff = T - H
    ones = np.ones((T_eff, 1))

    def lagged(series, n_lags):
        return [series[H - p: T - p] for p in range(1, n_lags + 1)]

    Z0 = np.hstack([ones] + lagged(y0, spec.P) + lagged(x[:, 0, :], spec.Q))
    Zc = np.empty((spec.N, T_eff, spec.n_country_regressors))
    for j in range(1, spec.N + 1):
        o = spec.country_offset(j)
        yj = y[:, o:o + spec.k]
        Zc[j - 1] = np.hstack([ones] + lagged(yj, spec.P) + lagged(x[:, j, :], spec.Q) + lagged(y0, spec.R))
    return Z0, Zc


def residuals(y: np.ndarray, intercept: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Reduced-form residuals of the stacked VAR over ``t = H..T-1``."""
    H = lags.shape[0]
    T = y.shape[0]
    fitted = np.broadcast_to(intercept, (T - H, y.shape[1])).copy()
    for h in range(1, H + 1):
        fitted += y[H - h: T - h] @ lags[h - 1].T
    return y[H:] - fitted


def spec_from_sequence(values: Sequence[int], **kwargs) -> ModelSpec:
    """Shorthand ``(N, k, m, k~, P, Q, R, F)`` constructor used by tests and scripts."""
    names = ("n_countries", "k_country", "m_surprise", "k_aggregate_low_freq",
             "lag_domestic", "lag_foreign", "lag_aggregate_in_country", "n_factors")
    return ModelSpec(**dict(zip(names, values)), **kwargs)
