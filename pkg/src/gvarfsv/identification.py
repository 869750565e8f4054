"""
Sign and zero restrictions on impact, imposed by block rotation search.

The lower Cholesky factor ``Q`` of the average covariance is post-multiplied
by a block-diagonal orthonormal ``R`` that rotates only the US-surprise and
the EA-surprise columns. Rotations are redrawn until the impact matrix
``Q R`` passes the restriction table.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .model_core import ModelSpec

CELLS = ("+", "-", "0", "~")
_CODE = {"+": 1, "-": -1, "0": 0, "~": 2}
OTHER = "Other"
DEFAULT_ZERO_TOL = 0.1
DEFAULT_MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class RestrictionTable:
    """
    Cells per (variable, shock). ``shocks`` lists the 2m structural labels,
    US block first, optionally followed by ``"Other"`` which applies to every
    remaining column. Variables not listed are unrestricted. ``rows`` is a
    sequence of ``(variable, cells)`` pairs; a variable may appear more than
    once, in which case every listed row must hold.
    """

    shocks: tuple[str, ...]
    rows: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        rows = self.rows.items() if isinstance(self.rows, dict) else self.rows
        object.__setattr__(self, "shocks", tuple(self.shocks))
        object.__setattr__(self, "rows", tuple((str(v), tuple(c)) for v, c in rows))
        if len(set(self.shocks)) != len(self.shocks):
            raise ConfigError(f"duplicate shock labels in {self.shocks}")
        for var, cells in self.rows:
            if len(cells) != len(self.shocks):
                raise ConfigError(f"row {var!r} has {len(cells)} cells for {len(self.shocks)} shocks")
            bad = [c for c in cells if c not in CELLS]
            if bad:
                raise ConfigError(f"row {var!r} has invalid cells {bad}; allowed {CELLS}")

    @property
    def structural_shocks(self) -> tuple[str, ...]:
        return tuple(s for s in self.shocks if s != OTHER)

    @property
    def has_other(self) -> bool:
        return OTHER in self.shocks

    def to_dict(self) -> dict:
        names = [v for v, _ in self.rows]
        if len(set(names)) == len(names):
            rows = {v: list(c) for v, c in self.rows}
        else:
            rows = [{"variable": v, "cells": list(c)} for v, c in self.rows]
        return {"shocks": list(self.shocks), "rows": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, payload: dict) -> "RestrictionTable":
        if not isinstance(payload, dict) or "shocks" not in payload:
            raise ConfigError("restriction table needs a 'shocks' list")
        extra = set(payload) - {"shocks", "rows"}
        if extra:
            raise ConfigError(f"unknown restriction table keys: {sorted(extra)}")
        rows = payload.get("rows", {})
        if isinstance(rows, list):
            try:
                rows = [(r["variable"], r["cells"]) for r in rows]
            except (KeyError, TypeError):
                raise ConfigError("list-form rows need 'variable' and 'cells' entries") from None
        return cls(tuple(payload["shocks"]), rows)

    @classmethod
    def load(cls, path) -> "RestrictionTable":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read restriction table {path}: {exc}") from exc

    def compile(self, spec: ModelSpec) -> "CompiledRestrictions":
        ids = spec.column_ids()
        two_m = 2 * spec.m
        structural = self.structural_shocks
        if len(structural) != two_m:
            raise ConfigError(f"table has {len(structural)} structural shocks, the model needs 2m = {two_m}")
        if self.has_other and self.shocks[-1] != OTHER:
            raise ConfigError("'Other' must be the last shock column")
        var_idx, shock_idx, codes, other_zero = [], [], [], []
        for var, cells in self.rows:
            if var not in ids:
                raise ConfigError(f"restriction row {var!r} is not a model variable")
            i = ids.index(var)
            for shock, cell in zip(self.shocks, cells):
                code = _CODE[cell]
                if code == 2:
                    continue
                if code == 0 and i >= two_m:
                    raise ConfigError(f"zero restriction on {var!r} ({shock}): zeros are only allowed on surprise rows")
                if shock == OTHER:
                    if code != 0:
                        raise ConfigError(f"sign cell on {var!r} for 'Other': unrotated shocks cannot carry signs")
                    other_zero.append(i)
                else:
                    var_idx.append(i)
                    shock_idx.append(structural.index(shock))
                    codes.append(code)
        return CompiledRestrictions(structural, np.array(var_idx, dtype=int), np.array(shock_idx, dtype=int),
                                    np.array(codes, dtype=int), np.array(sorted(set(other_zero)), dtype=int),
                                    tuple(ids), two_m)


@dataclass(frozen=True)
class CompiledRestrictions:
    """Restrictions as parallel arrays of (variable index, shock index, code)."""

    labels: tuple[str, ...]
    var_idx: np.ndarray
    shock_idx: np.ndarray
    codes: np.ndarray  # 1 positive, -1 negative, 0 zero
    other_zero: np.ndarray  # variable rows with zero impact from every column >= 2m
    columns: tuple[str, ...]
    n_rotated: int

    @property
    def m(self) -> int:
        return self.n_rotated // 2

    def is_unrestricted(self) -> bool:
        return self.codes.size == 0 and self.other_zero.size == 0


@dataclass(frozen=True)
class Violation:
    variable: str
    shock: str
    cell: str
    value: float


@dataclass(frozen=True)
class RestrictionCheck:
    accepted: bool
    signs: np.ndarray  # +-1 per structural column, the normalization applied
    violations: tuple[Violation, ...]


@dataclass(frozen=True)
class IdentifiedDraw:
    R_us: np.ndarray
    R_ea: np.ndarray
    R: np.ndarray
    impact: np.ndarray
    attempts: int


@dataclass(frozen=True)
class SearchExhausted:
    attempts: int
    last_report: RestrictionCheck | None = None


def cholesky_lower(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
        raise NumericalError(f"covariance must be square, got shape {xi.shape}")
    if not np.allclose(xi, xi.T, rtol=1e-10, atol=1e-12):
        raise NumericalError("covariance matrix is not symmetric")
    try:
        return linalg.cholesky(xi, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        ev = np.linalg.eigvalsh(0.5 * (xi + xi.T)) if np.all(np.isfinite(xi)) else np.array([np.nan])
        raise NumericalError(f"covariance is not positive definite (smallest eigenvalue {ev.min():.3e})") from None


def random_block_rotation(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal m x m matrix (QR with positive R diagonal)."""
    if m < 1:
        raise ConfigError("rotation size must be >= 1")
    Z = rng.standard_normal((m, m))
    Qm, Rm = np.linalg.qr(Z)
    return Qm * np.where(np.diag(Rm) < 0, -1.0, 1.0)


def embed_rotation(R_us: np.ndarray, R_ea: np.ndarray, K: int, m: int) -> np.ndarray:
    R_us, R_ea = np.atleast_2d(R_us), np.atleast_2d(R_ea)
    if R_us.shape != (m, m) or R_ea.shape != (m, m):
        raise ConfigError(f"rotation blocks must be {m}x{m}, got {R_us.shape} and {R_ea.shape}")
    if K < 2 * m:
        raise ConfigError(f"system size {K} is smaller than 2m = {2 * m}")
    R = np.eye(K)
    R[:m, :m] = R_us
    R[m:2 * m, m:2 * m] = R_ea
    return R


def _failing(values, codes, zero_tol):
    return (((codes == 1) & ~(values > 0)) | ((codes == -1) & ~(values < 0))
            | ((codes == 0) & ~(np.abs(values) <= zero_tol)))


def check_restrictions(impact: np.ndarray, table: CompiledRestrictions,
                       zero_tol: float = DEFAULT_ZERO_TOL) -> RestrictionCheck:
    """
    Test an impact matrix against the table.

    Each structural column may be negated to satisfy its pattern; the
    chosen signs are returned. The report lists every violated cell, for
    the column orientation with fewer violations.
    """
    impact = np.asarray(impact, dtype=float)
    n = table.n_rotated
    values = impact[table.var_idx, table.shock_idx]
    fail_pos = _failing(values, table.codes, zero_tol)
    fail_neg = _failing(-values, table.codes, zero_tol)
    n_pos = np.bincount(table.shock_idx[fail_pos], minlength=n)
    n_neg = np.bincount(table.shock_idx[fail_neg], minlength=n)
    signs = np.where(n_neg < n_pos, -1.0, 1.0)
    flipped = signs[table.shock_idx] < 0
    failing = np.where(flipped, fail_neg, fail_pos)

    inv = {v: k for k, v in _CODE.items()}
    violations = [
        Violation(table.columns[table.var_idx[e]], table.labels[table.shock_idx[e]],
                  inv[int(table.codes[e])], float(signs[table.shock_idx[e]] * values[e]))
        for e in np.flatnonzero(failing)
    ]
    if table.other_zero.size and impact.shape[1] > n:
        block = np.abs(impact[table.other_zero, n:])
        for r, c in zip(*np.nonzero(~(block <= zero_tol))):
            violations.append(Violation(table.columns[table.other_zero[r]], f"{OTHER}[{n + c}]", "0",
                                        float(impact[table.other_zero[r], n + c])))
    return RestrictionCheck(not violations, signs, tuple(violations))


def rotation_search(Q: np.ndarray, table: CompiledRestrictions, max_attempts: int,
                    rng: np.random.Generator, zero_tol: float = DEFAULT_ZERO_TOL):
    """Returns :class:`IdentifiedDraw` on success or :class:`SearchExhausted`."""
    if max_attempts < 1:
        raise ConfigError("max_attempts must be >= 1")
    K = Q.shape[0]
    m = table.m
    report = None
    for attempt in range(1, max_attempts + 1):
        R_us = random_block_rotation(m, rng)
        R_ea = random_block_rotation(m, rng)
        R = embed_rotation(R_us, R_ea, K, m)
        impact = Q @ R
        report = check_restrictions(impact, table, zero_tol)
        if report.accepted:
            R_us = R_us * report.signs[:m]
            R_ea = R_ea * report.signs[m:]
            R = embed_rotation(R_us, R_ea, K, m)
            return IdentifiedDraw(R_us, R_ea, R, Q @ R, attempt)
    return SearchExhausted(max_attempts, report)


def _identify_one(args):
    xi, table, max_attempts, zero_tol, seed_seq = args
    Q = cholesky_lower(xi)
    return rotation_search(Q, table, max_attempts, np.random.Generator(np.random.PCG64(seed_seq)), zero_tol)


def identify_draws(xi_bars: np.ndarray, table: CompiledRestrictions, seed: int,
                   max_attempts: int = DEFAULT_MAX_ATTEMPTS, zero_tol: float = DEFAULT_ZERO_TOL,
                   workers: int = 1) -> list:
    """
    Rotation search for every posterior draw. Each draw gets its own RNG
    stream spawned from ``seed``, so results do not depend on ``workers``.
    """
    streams = np.random.SeedSequence(seed).spawn(len(xi_bars))
    jobs = [(xi_bars[i], table, max_attempts, zero_tol, streams[i]) for i in range(len(xi_bars))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_identify_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_identify_one(j) for j in jobs]


_STANDARD_ROLES = {
    "us_rate": "agg.US_short_rate", "us_stock": "agg.US_stock",
    "ea_rate": "agg.EA_short_rate", "ea_stock": "agg.EA_stock",
}


def default_roles(spec: ModelSpec) -> dict:
    ids = set(spec.column_ids())
    return {k: (v if v in ids else None) for k, v in _STANDARD_ROLES.items()}


def policy_table(spec: ModelSpec, roles: dict | None = None) -> RestrictionTable:
    """
    The MP/CBI restriction table for ``m = 1`` (rate surprise only, MP
    shocks) or ``m = 2`` (rate and stock surprises, MP and CBI shocks).

    ``roles`` maps ``us_rate``, ``us_stock``, ``ea_rate``, ``ea_stock`` to
    column ids of the low-frequency rate and stock series; missing roles
    leave those rows unrestricted.
    """
    roles = dict(default_roles(spec), **(roles or {}))
    m = spec.m
    inst = spec.surprise_instruments
    if m == 1:
        shocks = ("MP_US", "MP_EA", OTHER)
        rows = {
            f"mUS.{inst[0]}": ("+", "0", "0"),
            f"mEA.{inst[0]}": ("0", "+", "0"),
        }
        low = {"us_rate": ("+", "~", "~"), "us_stock": ("-", "~", "~"),
               "ea_rate": ("~", "+", "~"), "ea_stock": ("~", "-", "~")}
    elif m == 2:
        shocks = ("MP_US", "CBI_US", "MP_EA", "CBI_EA", OTHER)
        rows = {
            f"mUS.{inst[0]}": ("+", "+", "0", "0", "0"),
            f"mUS.{inst[1]}": ("-", "+", "0", "0", "0"),
            f"mEA.{inst[0]}": ("0", "0", "+", "+", "0"),
            f"mEA.{inst[1]}": ("0", "0", "-", "+", "0"),
        }
        low = {"us_rate": ("+", "+", "~", "~", "~"), "us_stock": ("-", "+", "~", "~", "~"),
               "ea_rate": ("~", "~", "+", "+", "~"), "ea_stock": ("~", "~", "-", "+", "~")}
    else:
        raise ConfigError(f"the MP/CBI table is defined for m = 1 or 2, got m = {m}")
    for role, cells in low.items():
        if roles.get(role):
            rows[roles[role]] = cells
    return RestrictionTable(shocks, tuple(rows.items()))
