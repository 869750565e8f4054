"""
Impulse responses of the stacked VAR, posterior summaries and CSV output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_HORIZON = 36
DEFAULT_QUANTILES = (0.16, 0.5, 0.84)
UNIT_TAGS = {"100log": "percent", "pct": "pp"}


def companion_form(G: np.ndarray) -> np.ndarray:
    """``(h, K, K)`` lag matrices -> ``(K h, K h)`` companion matrix."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 2:
        G = G[None]
    h, K, K2 = G.shape
    if K != K2:
        raise DataError(f"lag matrices must be square, got {G.shape[1:]}")
    C = np.zeros((K * h, K * h))
    C[:K] = np.concatenate(list(G), axis=1)
    if h > 1:
        C[K:, :-K] = np.eye(K * (h - 1))
    return C


def spectral_radius(C: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(C)))) if C.size else 0.0


def propagate_irf(companion: np.ndarray, impact: np.ndarray, horizon: int) -> np.ndarray:
    """
    Responses to the given impact columns.

    Returns ``(S, K, horizon + 1)``: shock, variable, horizon. Horizon 0 is
    ``impact`` itself; horizon n is the top-left block of ``companion^n``
    applied to it. Explosive draws yield non-finite entries, which callers
    treat as excluded.
    """
    impact = np.asarray(impact, dtype=float)
    if impact.ndim == 1:
        impact = impact[:, None]
    K, S = impact.shape
    Kh = companion.shape[0]
    if Kh % K:
        raise DataError(f"companion size {Kh} is not a multiple of K = {K}")
    out = np.empty((S, K, horizon + 1))
    out[:, :, 0] = impact.T
    state = np.zeros((Kh, S))
    state[:K] = impact
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, horizon + 1):
            state = companion @ state
            out[:, :, n] = state[:K].T
    return out


@dataclass
class IrfTensor:
    """Responses indexed by (draw, shock, variable, horizon)."""

    values: np.ndarray
    shocks: tuple[str, ...]
    variables: tuple[str, ...]
    units: tuple[str, ...]
    n_excluded: int = 0

    def __post_init__(self):
        D, S, V, _ = self.values.shape
        if len(self.shocks) != S or len(self.variables) != V or len(self.units) != V:
            raise DataError("IRF labels do not match the tensor shape")

    @property
    def horizon(self) -> int:
        return self.values.shape[3] - 1


def stack_irfs(irfs, shocks, variables, units=None) -> IrfTensor:
    """Collect per-draw responses, dropping (and counting) non-finite draws."""
    kept = [a for a in irfs if np.all(np.isfinite(a))]
    excluded = len(irfs) - len(kept)
    units = tuple(units) if units is not None else ("std",) * len(variables)
    if kept:
        values = np.stack(kept)
    else:
        S, V, H1 = np.shape(irfs[0]) if len(irfs) else (len(shocks), len(variables), 1)
        values = np.empty((0, S, V, H1))
    return IrfTensor(values, tuple(shocks), tuple(variables), units, excluded)


def rescale_to_units(tensor: IrfTensor, ledger, transforms=None) -> IrfTensor:
    """
    Multiply each variable's responses by its original standard deviation.

    ``ledger`` provides ``std_of(variable)``; ``transforms`` maps variable
    ids to their transformation tag, from which unit tags are derived.
    """
    scale = np.array([ledger.std_of(v) for v in tensor.variables])
    transforms = transforms or {}
    units = tuple(UNIT_TAGS.get(transforms.get(v, ""), "level") for v in tensor.variables)
    return IrfTensor(tensor.values * scale[None, None, :, None], tensor.shocks, tensor.variables,
                     units, tensor.n_excluded)


@dataclass
class IrfSummary:
    quantiles: tuple[float, ...]
    bands: np.ndarray  # (n_quantiles, S, V, H + 1)
    shocks: tuple[str, ...]
    variables: tuple[str, ...]
    units: tuple[str, ...]
    n_draws: int
    n_excluded: int


def summarize(tensor: IrfTensor, quantiles=DEFAULT_QUANTILES) -> IrfSummary:
    quantiles = tuple(float(q) for q in quantiles)
    if tensor.values.shape[0] == 0:
        raise DataError(f"no IRF draws to summarize ({tensor.n_excluded} excluded)")
    if any(not 0.0 <= q <= 1.0 for q in quantiles):
        raise DataError(f"quantiles must lie in [0, 1], got {quantiles}")
    bands = np.quantile(tensor.values, quantiles, axis=0, method="linear")
    return IrfSummary(quantiles, bands, tensor.shocks, tensor.variables, tensor.units,
                      tensor.values.shape[0], tensor.n_excluded)


def _qname(q: float) -> str:
    return "q" + f"{100 * q:g}".replace(".", "_")


def write_irf_csv(path, summary: IrfSummary, metadata: dict | None = None) -> Path:
    """Long-format CSV plus a ``.json`` sidecar holding draw counts and ``metadata``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [_qname(q) for q in summary.quantiles]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["shock", "variable", "horizon", *names, "unit"])
        S, V, H1 = summary.bands.shape[1:]
        for s in range(S):
            for v in range(V):
                for h in range(H1):
                    writer.writerow([summary.shocks[s], summary.variables[v], h,
                                     *(repr(float(summary.bands[k, s, v, h])) for k in range(len(names))),
                                     summary.units[v]])
    sidecar = {
        "n_draws": summary.n_draws,
        "n_excluded": summary.n_excluded,
        "quantiles": list(summary.quantiles),
        "horizon": summary.bands.shape[3] - 1,
        **(metadata or {}),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return path
