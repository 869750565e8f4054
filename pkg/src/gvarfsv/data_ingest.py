"""
Panel loading, transformations, surprise aggregation and weights.

CSV conventions: a ``period`` column with ``YYYY-MM`` keys, one column per
series named ``<block>.<variable>``, UTF-8 and ``.`` as decimal separator.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .model_core import ModelSpec, WeightMatrix

REGIONS = ("US", "EA")
INSTRUMENTS = ("rate_surprise", "stock_surprise")
WINDOWS = ("press_release", "conference")
TRANSFORMS = ("100log", "pct")


@dataclass(frozen=True)
class RawEventRecord:
    timestamp: datetime
    region: str
    instrument: str
    window: str
    value: float

    def __post_init__(self):
        if self.region not in REGIONS:
            raise DataError(f"unknown region {self.region!r}")
        if self.instrument not in INSTRUMENTS:
            raise DataError(f"unknown instrument {self.instrument!r}")
        if self.window not in WINDOWS:
            raise DataError(f"unknown event window {self.window!r}")
        if not math.isfinite(self.value):
            raise DataError(f"non-finite surprise value at {self.timestamp.isoformat()}")


@dataclass(frozen=True)
class StandardizationLedger:
    columns: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray

    def unstandardize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.stds + self.means

    def std_of(self, column: str) -> float:
        try:
            return float(self.stds[self.columns.index(column)])
        except ValueError:
            raise DataError(f"no standardization entry for variable {column!r}") from None


@dataclass(frozen=True)
class PanelDataset:
    """Monthly panel in stacked column order."""

    periods: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray  # (T, K)
    transforms: tuple[str, ...]
    ledger: StandardizationLedger | None = None

    def __post_init__(self):
        T, K = self.values.shape
        if len(self.periods) != T or len(self.columns) != K or len(self.transforms) != K:
            raise DataError("panel labels do not match the value matrix")

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]


def month_key(ts: datetime) -> str:
    return f"{ts.year:04d}-{ts.month:02d}"


def month_range(start: str, stop: str) -> list[str]:
    """Inclusive list of ``YYYY-MM`` keys."""
    y0, m0 = (int(s) for s in start.split("-"))
    y1, m1 = (int(s) for s in stop.split("-"))
    out = []
    while (y0, m0) <= (y1, m1):
        out.append(f"{y0:04d}-{m0:02d}")
        m0 += 1
        if m0 > 12:
            y0, m0 = y0 + 1, 1
    return out


def aggregate_surprises_to_monthly(events: Iterable[RawEventRecord],
                                   months: Sequence[str] | None = None) -> dict[tuple[str, str], dict[str, float]]:
    """
    Sum intraday surprises to monthly frequency.

    Each announcement contributes the sum of its press-release and
    conference windows; each month is the sum over its announcements.
    Months without announcements are zero.

    Returns
    -------
    ``{(region, instrument): {month: value}}`` for every region/instrument
    pair, covering ``months`` (or the span of the events).
    """
    events = sorted(events, key=lambda e: (e.timestamp, e.region, e.instrument, e.window))
    seen: dict[tuple, int] = defaultdict(int)
    for e in events:
        seen[(e.timestamp, e.region, e.instrument, e.window)] += 1
    duplicates = [key for key, n in seen.items() if n > 1]
    if duplicates:
        listing = ", ".join(f"{ts.isoformat()} {r} {i} {w}" for ts, r, i, w in duplicates)
        raise DataError(f"duplicate surprise records: {listing}")

    if months is None:
        if not events:
            months = []
        else:
            months = month_range(month_key(events[0].timestamp), month_key(events[-1].timestamp))
    out = {(r, i): {mk: 0.0 for mk in months} for r in REGIONS for i in INSTRUMENTS}
    for e in events:
        mk = month_key(e.timestamp)
        series = out[(e.region, e.instrument)]
        if mk not in series:
            raise DataError(f"event at {e.timestamp.isoformat()} falls outside the panel months")
        series[mk] += e.value
    return out


def read_events_csv(path) -> list[RawEventRecord]:
    """Columns: timestamp (ISO-8601), region, instrument, window, value."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                records.append(RawEventRecord(
                    timestamp=datetime.fromisoformat(row["timestamp"]),
                    region=row["region"],
                    instrument=row["instrument"],
                    window=row["window"],
                    value=float(row["value"]),
                ))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed event row ({exc})") from exc
    return records


def apply_transforms(values: np.ndarray, tags: Sequence[str], columns: Sequence[str] | None = None) -> np.ndarray:
    """``100log`` -> 100 ln(x); ``pct`` -> unchanged."""
    x = np.array(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(tags) != x.shape[1]:
        raise DataError(f"{len(tags)} transform tags for {x.shape[1]} columns")
    out = x.copy()
    for c, tag in enumerate(tags):
        name = columns[c] if columns is not None else str(c)
        if tag == "100log":
            bad = np.flatnonzero(~(x[:, c] > 0))
            if bad.size:
                raise DataError(f"nonpositive value under 100log at row {bad[0]}, column {name!r}: {x[bad[0], c]!r}")
            out[:, c] = 100.0 * np.log(x[:, c])
        elif tag != "pct":
            raise DataError(f"unknown transform tag {tag!r} for column {name!r}")
    return out


def standardize(panel: PanelDataset) -> tuple[PanelDataset, StandardizationLedger]:
    """Zero mean and unit sample variance (ddof=1) per column."""
    x = panel.values
    if x.shape[0] < 2:
        raise DataError("need at least two periods to standardize")
    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=1)
    for c, name in enumerate(panel.columns):
        if not np.all(np.isfinite(x[:, c])):
            raise DataError(f"column {name!r} contains non-finite values")
        if np.ptp(x[:, c]) == 0.0 or stds[c] == 0.0:
            raise DataError(f"column {name!r} is constant and cannot be standardized")
    ledger = StandardizationLedger(tuple(panel.columns), means, stds)
    return replace(panel, values=(x - means) / stds, ledger=ledger), ledger


def unstandardize(panel: PanelDataset) -> PanelDataset:
    if panel.ledger is None:
        return panel
    return replace(panel, values=panel.ledger.unstandardize(panel.values), ledger=None)


def build_weights(kind: str, flows, country_order: Sequence[str] | None = None) -> np.ndarray:
    """
    Time-averaged, diagonal-zeroed, row-normalized weights.

    Parameters
    ----------
    kind : ``"gdp_share"`` or ``"export_share"``
    flows : for ``gdp_share`` a (T, N) array (or (N,)) of GDP levels;
        for ``export_share`` a (T, N, N) array (or (N, N)) of exports from
        origin (row) to destination (column).

    Returns
    -------
    ``(N,)`` row for the aggregate block, or ``(N, N)`` country rows.
    """
    f = np.asarray(flows, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DataError("flows must be finite and nonnegative")
    if kind == "gdp_share":
        avg = f.mean(axis=0) if f.ndim == 2 else f
        total = avg.sum()
        if total <= 0:
            raise DataError("GDP flows are all zero; cannot build aggregate weights")
        return avg / total
    if kind == "export_share":
        avg = f.mean(axis=0) if f.ndim == 3 else f.copy()
        np.fill_diagonal(avg, 0.0)
        sums = avg.sum(axis=1)
        if avg.shape[0] == 1:
            return np.zeros_like(avg)
        for i, s in enumerate(sums):
            if s <= 0:
                name = country_order[i] if country_order is not None else str(i + 1)
                raise DataError(f"export row for {name!r} has no positive partner flow")
        return avg / sums[:, None]
    raise DataError(f"unknown weight kind {kind!r}")


def weight_matrix(gdp_row: np.ndarray, export_rows: np.ndarray) -> WeightMatrix:
    return WeightMatrix(np.vstack([np.asarray(gdp_row)[None, :], export_rows]))


# ---------------------------------------------------------------- CSV I/O

def read_wide_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Return (periods, column ids, values) from a wide ``period`` CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "period":
            raise DataError(f"{path}: first column must be 'period'")
        periods, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            periods.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return periods, header[1:], np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def write_wide_csv(path, periods: Sequence[str], columns: Sequence[str], values: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["period", *columns])
        for p, row in zip(periods, values):
            writer.writerow([p, *(repr(float(v)) for v in row)])


def _check_contiguous(periods: Sequence[str], source: str) -> None:
    if not periods:
        raise DataError(f"{source}: no periods")
    try:
        expected = month_range(periods[0], periods[-1])
    except ValueError:
        raise DataError(f"{source}: malformed period keys") from None
    if list(periods) != expected:
        missing = sorted(set(expected) - set(periods))
        raise DataError(f"{source}: periods are not contiguous monthly keys (missing {missing[:5]})")


def load_panel(spec: ModelSpec, files: Sequence, transforms: Mapping[str, str] | None = None,
               events: Sequence[RawEventRecord] | None = None) -> PanelDataset:
    """
    Merge per-block CSVs into one panel ordered as ``spec.column_ids()``.

    Surprise columns may come from ``events`` instead of a CSV; they are
    then aggregated to monthly values over the panel's months.
    """
    transforms = dict(transforms or {})
    merged: dict[str, np.ndarray] = {}
    periods: list[str] | None = None
    for path in files:
        p, cols, vals = read_wide_csv(path)
        _check_contiguous(p, str(path))
        if periods is None:
            periods = p
        elif p != periods:
            raise DataError(f"{path}: period index differs from the other files")
        for c, name in enumerate(cols):
            if name in merged:
                raise DataError(f"column {name!r} appears in more than one file")
            merged[name] = vals[:, c]
    if periods is None:
        raise DataError("no data files given")
    if events is not None:
        monthly = aggregate_surprises_to_monthly(events, months=periods)
        short = {"rate_surprise": "rate", "stock_surprise": "stock"}
        for (region, instrument), series in monthly.items():
            name = f"m{region}.{short[instrument]}"
            if name in spec.column_ids() and name not in merged:
                merged[name] = np.array([series[mk] for mk in periods])

    ids = spec.column_ids()
    missing = [c for c in ids if c not in merged]
    if missing:
        raise DataError(f"missing columns for blocks: {missing}")
    unknown_tags = sorted(set(transforms) - set(ids))
    if unknown_tags:
        raise DataError(f"transform tags given for unknown columns: {unknown_tags}")
    tags = tuple(transforms.get(c, "pct") for c in ids)
    raw = np.column_stack([merged[c] for c in ids])
    if not np.all(np.isfinite(raw)):
        bad = np.argwhere(~np.isfinite(raw))[0]
        raise DataError(f"missing or non-finite value at period {periods[bad[0]]}, column {ids[bad[1]]!r}")
    values = apply_transforms(raw, tags, ids)
    return PanelDataset(tuple(periods), tuple(ids), values, tags)


def read_weight_matrix_csv(path, spec: ModelSpec) -> WeightMatrix:
    """Rows ``agg`` then country codes; columns are country codes."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "origin":
        raise DataError(f"{path}: first column must be 'origin'")
    cols = header[1:]
    expected_rows = ["agg", *spec.country_codes]
    by_name = {r[0]: r[1:] for r in rows[1:] if r}
    if sorted(cols) != sorted(spec.country_codes) or sorted(by_name) != sorted(expected_rows):
        raise DataError(f"{path}: weight matrix must have rows {expected_rows} and columns {list(spec.country_codes)}")
    order = [cols.index(c) for c in spec.country_codes]
    mat = np.array([[float(by_name[r][i]) for i in order] for r in expected_rows])
    return WeightMatrix(mat)


def write_weight_matrix_csv(path, w: WeightMatrix, spec: ModelSpec) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["origin", *spec.country_codes])
        for name, row in zip(["agg", *spec.country_codes], w.values):
            writer.writerow([name, *(repr(float(v)) for v in row)])


def read_export_flows_csv(path, spec: ModelSpec) -> np.ndarray:
    """
    Export flows: columns ``period, origin, <dest codes...>``; one row per
    (period, origin). Returns a (T, N, N) array in the spec's country order.
    """
    by_period: dict[str, dict[str, list[float]]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            by_period[row.get("period", "")][row["origin"]] = [float(row[c]) for c in spec.country_codes]
    out = []
    for period in sorted(by_period):
        rows = by_period[period]
        missing = [c for c in spec.country_codes if c not in rows]
        if missing:
            raise DataError(f"{path}: period {period!r} lacks origins {missing}")
        out.append([rows[c] for c in spec.country_codes])
    return np.array(out)


def read_gdp_csv(path, spec: ModelSpec) -> np.ndarray:
    """GDP levels: wide CSV with ``period`` and one column per country code."""
    _, cols, vals = read_wide_csv(path)
    try:
        idx = [cols.index(c) for c in spec.country_codes]
    except ValueError:
        raise DataError(f"{path}: GDP file must have a column per country code") from None
    return vals[:, idx]


def panel_to_block_files(panel: PanelDataset, spec: ModelSpec, directory) -> list[Path]:
    """Write one wide CSV per block (surprises, aggregate, each country)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cols = list(panel.columns)
    blocks = [("surprises", [c for c in cols if c.startswith("mUS.") or c.startswith("mEA.")]),
              ("aggregate", [c for c in cols if c.startswith("agg.")])]
    blocks += [(code, [c for c in cols if c.startswith(code + ".")]) for code in spec.country_codes]
    paths = []
    for name, block_cols in blocks:
        idx = [cols.index(c) for c in block_cols]
        path = directory / f"{name}.csv"
        write_wide_csv(path, panel.periods, block_cols, panel.values[:, idx])
        paths.append(path)
    return paths
