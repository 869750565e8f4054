"""
Command line entry point: ``gvarfsv {simulate,estimate,identify,irf,dic}``.

Every subcommand reads one JSON run configuration. Relative paths inside it
are resolved against the configuration file's directory. Flags only
override the seed and the input/output locations.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data_ingest as di
from .errors import ConfigError, DataError, GvarError, IdentificationError
from .gibbs import ChainConfig, PriorConfig, compute_dic, prepare_data, run_chain
from .identification import (DEFAULT_MAX_ATTEMPTS, DEFAULT_ZERO_TOL, IdentifiedDraw, RestrictionTable,
                             default_roles, identify_draws, policy_table)
from .irf import (DEFAULT_HORIZON, DEFAULT_QUANTILES, companion_form, propagate_irf, rescale_to_units,
                  stack_irfs, summarize, write_irf_csv)
from .model_core import ModelSpec, WeightMatrix, assemble_stacked_system, require_valid
from .simulate import Truth, make_truth, simulate
from .store import load_store, save_store

STORE_DIR = "draws"
IDENT_DIR = "identified"
IRF_FILE = "irf.csv"
CHECKPOINT_FILE = "chain.ckpt"

_TOP_KEYS = {"spec", "data", "weights", "restrictions", "output_dir", "chain", "priors",
             "identification", "irf", "workers", "simulate"}


@dataclass
class RunConfig:
    base: Path
    raw: dict
    spec: ModelSpec
    chain: ChainConfig
    priors: PriorConfig
    output_dir: Path
    data_files: list[Path] = field(default_factory=list)
    events: Path | None = None
    transforms: dict = field(default_factory=dict)
    standardize: bool = True
    weights: dict = field(default_factory=dict)
    restrictions: object = None
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    zero_tol: float = DEFAULT_ZERO_TOL
    horizon: int = DEFAULT_HORIZON
    quantiles: tuple = DEFAULT_QUANTILES
    workers: int = 1
    simulate: dict = field(default_factory=dict)

    @property
    def store_dir(self) -> Path:
        return self.output_dir / STORE_DIR

    def config_hash(self) -> str:
        payload = dict(self.raw, chain=asdict(self.chain), output_dir=None)
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_config(path, seed: int | None = None, output_dir=None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = path.parent

    spec_entry = raw.get("spec")
    if spec_entry is None:
        raise ConfigError("config needs a 'spec' entry")
    if isinstance(spec_entry, str):
        try:
            spec = ModelSpec.from_json(_resolve(base, spec_entry).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read spec {spec_entry}: {exc}") from exc
    else:
        spec = ModelSpec.from_dict(spec_entry)
    require_valid(spec)

    chain = ChainConfig.from_dict(raw.get("chain", {}))
    if seed is not None:
        chain = replace(chain, seed=seed)
    priors = PriorConfig.from_dict(raw.get("priors", {}))

    data = raw.get("data", {})
    ident = raw.get("identification", {})
    irf = raw.get("irf", {})
    if output_dir is not None:
        out = Path(output_dir).resolve()
    else:
        out = _resolve(base, raw.get("output_dir", "output"))
    workers = raw.get("workers")
    cfg = RunConfig(
        base=base, raw=raw, spec=spec, chain=chain, priors=priors, output_dir=out,
        data_files=[_resolve(base, f) for f in data.get("files", [])],
        events=_resolve(base, data["events"]) if data.get("events") else None,
        transforms=dict(data.get("transforms", {})),
        standardize=bool(data.get("standardize", True)),
        weights={k: _resolve(base, v) for k, v in raw.get("weights", {}).items()},
        restrictions=raw.get("restrictions"),
        max_attempts=int(ident.get("max_attempts", DEFAULT_MAX_ATTEMPTS)),
        zero_tol=float(ident.get("zero_tol", DEFAULT_ZERO_TOL)),
        horizon=int(irf.get("horizon", DEFAULT_HORIZON)),
        quantiles=tuple(irf.get("quantiles", DEFAULT_QUANTILES)),
        workers=int(workers) if workers is not None else (os.cpu_count() or 1),
        simulate=dict(raw.get("simulate", {})),
    )
    if cfg.max_attempts < 1:
        raise ConfigError("identification.max_attempts must be >= 1")
    if cfg.zero_tol < 0:
        raise ConfigError("identification.zero_tol must be >= 0")
    if cfg.horizon < 0:
        raise ConfigError("irf.horizon must be >= 0")
    return cfg


def _require_paths(paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"referenced paths do not exist: {missing}")


def _prepare_output(d: Path) -> None:
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {d} is not writable: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")


def load_weights(cfg: RunConfig) -> WeightMatrix:
    w = cfg.weights
    if "matrix" in w:
        _require_paths([w["matrix"]])
        return di.read_weight_matrix_csv(w["matrix"], cfg.spec)
    if "gdp" in w and "exports" in w:
        _require_paths([w["gdp"], w["exports"]])
        codes = cfg.spec.country_codes
        gdp = di.build_weights("gdp_share", di.read_gdp_csv(w["gdp"], cfg.spec))
        exports = di.build_weights("export_share", di.read_export_flows_csv(w["exports"], cfg.spec), codes)
        return di.weight_matrix(gdp, exports)
    raise ConfigError("weights need either 'matrix' or both 'gdp' and 'exports'")


def load_data(cfg: RunConfig):
    """Panel in stacked order, standardized when configured, plus its ledger."""
    _require_paths(cfg.data_files + ([cfg.events] if cfg.events else []))
    events = di.read_events_csv(cfg.events) if cfg.events else None
    panel = di.load_panel(cfg.spec, cfg.data_files, cfg.transforms, events)
    if cfg.standardize:
        panel, ledger = di.standardize(panel)
    else:
        ledger = di.StandardizationLedger(panel.columns, np.zeros(len(panel.columns)), np.ones(len(panel.columns)))
    return panel, ledger


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _read_ledger(store_dir: Path):
    try:
        payload = json.loads((store_dir / "ledger.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read standardization ledger in {store_dir}: {exc}") from exc
    return (di.StandardizationLedger(tuple(payload["columns"]), np.array(payload["means"]), np.array(payload["stds"])),
            payload.get("transforms", {}))


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg: RunConfig, truth_path=None) -> dict:
    spec = cfg.spec
    rng = np.random.Generator(np.random.PCG64(cfg.chain.seed))
    sim_cfg = cfg.simulate
    _prepare_output(cfg.output_dir)
    if truth_path is not None and Path(truth_path).exists():
        truth = Truth.load(truth_path)
        if truth.spec != spec:
            raise ConfigError(f"truth file {truth_path} was built for a different spec")
    else:
        structural = sim_cfg.get("structural", spec.F >= 2 * spec.m and spec.m <= 2)
        # sign the same low-frequency series the policy table restricts
        table_roles = cfg.restrictions.get("roles") if isinstance(cfg.restrictions, dict) else None
        roles = default_roles(spec) | (table_roles or {}) | (sim_cfg.get("roles") or {})
        truth = make_truth(spec, rng, coef_scale=float(sim_cfg.get("coef_scale", 0.1)),
                           loading_scale=float(sim_cfg.get("loading_scale", 0.5)),
                           sv_scale=float(sim_cfg.get("sv_scale", 0.1)),
                           roles=roles, structural=structural)
    T = int(sim_cfg.get("periods", 240))
    sim = simulate(truth, T, rng)
    panel = sim.to_panel(spec, sim_cfg.get("start", "2000-01"))
    data_dir = cfg.output_dir / "data"
    files = di.panel_to_block_files(panel, spec, data_dir)
    di.write_weight_matrix_csv(data_dir / "weights.csv", truth.weights, spec)
    out_truth = Path(truth_path) if truth_path is not None else cfg.output_dir / "truth.json"
    if not out_truth.exists():
        truth.save(out_truth)
    return {"files": [str(f) for f in files], "truth": str(out_truth), "periods": T}


def cmd_estimate(cfg: RunConfig, resume: bool = False, log=None) -> dict:
    spec = cfg.spec
    weights = load_weights(cfg)
    panel, ledger = load_data(cfg)
    data = prepare_data(spec, panel.values, weights)
    _prepare_output(cfg.output_dir)
    ckpt = cfg.output_dir / CHECKPOINT_FILE
    if resume and not ckpt.exists():
        raise ConfigError(f"no checkpoint to resume from at {ckpt}")
    started = time.perf_counter()
    store = run_chain(cfg.chain, spec, data, cfg.priors,
                      checkpoint_path=ckpt if (cfg.chain.checkpoint_interval or resume) else None,
                      resume=resume)
    elapsed = time.perf_counter() - started
    store.meta["config_hash"] = cfg.config_hash()
    save_store(store, cfg.store_dir)
    di.write_wide_csv(cfg.store_dir / "panel.csv", panel.periods, panel.columns, panel.values)
    _write_json(cfg.store_dir / "ledger.json", {
        "columns": list(ledger.columns), "means": ledger.means.tolist(), "stds": ledger.stds.tolist(),
        "transforms": dict(zip(panel.columns, panel.transforms)),
    })
    run = {
        "seed": cfg.chain.seed, "config_hash": cfg.config_hash(), "retained": len(store),
        "elapsed_seconds": elapsed, "btau_acceptance": store.meta["btau_acceptance"],
        "btau_scale": store.meta["btau_scale"], "resumed": resume,
    }
    _write_json(cfg.output_dir / "run.json", run)
    if log:
        log(f"retained {len(store)} draws in {elapsed:.1f}s -> {cfg.store_dir}")
    return run


def _restriction_table(cfg: RunConfig) -> RestrictionTable:
    entry = cfg.restrictions
    if entry is None or (isinstance(entry, dict) and entry.get("table") == "policy"):
        roles = entry.get("roles") if isinstance(entry, dict) else None
        return policy_table(cfg.spec, roles)
    if isinstance(entry, str):
        p = _resolve(cfg.base, entry)
        _require_paths([p])
        return RestrictionTable.load(p)
    if isinstance(entry, dict):
        return RestrictionTable.from_dict(entry)
    raise ConfigError("'restrictions' must be a path, an inline table or {'table': 'policy'}")


def cmd_identify(cfg: RunConfig, store_dir=None, log=None) -> dict:
    store_dir = Path(store_dir) if store_dir is not None else cfg.store_dir
    store = load_store(store_dir)
    if store.spec != cfg.spec:
        raise ConfigError(f"draw store in {store_dir} was estimated with a different spec")
    table = _restriction_table(cfg).compile(store.spec)
    results = identify_draws(store.arrays["xi_bar"], table, seed=cfg.chain.seed,
                             max_attempts=cfg.max_attempts, zero_tol=cfg.zero_tol, workers=cfg.workers)
    accepted = [i for i, r in enumerate(results) if isinstance(r, IdentifiedDraw)]
    n = len(results)
    stats = {
        "n_draws": n, "n_accepted": len(accepted), "n_discarded": n - len(accepted),
        "discard_rate": (n - len(accepted)) / n if n else 0.0,
        "mean_attempts": float(np.mean([results[i].attempts for i in accepted])) if accepted else None,
        "max_attempts": cfg.max_attempts, "zero_tol": cfg.zero_tol, "shocks": list(table.labels),
        "config_hash": cfg.config_hash(),
    }
    out = cfg.output_dir / IDENT_DIR
    _prepare_output(out)
    _write_json(out / "summary.json", stats)
    if not accepted:
        raise IdentificationError(
            f"no posterior draw satisfied the restrictions within {cfg.max_attempts} attempts; "
            f"consider raising identification.max_attempts or zero_tol (currently {cfg.zero_tol})")
    impacts = np.stack([results[i].impact for i in accepted])
    np.ascontiguousarray(impacts, dtype="<f8").tofile(out / "impacts.f64")
    np.asarray(accepted, dtype="<i8").tofile(out / "draw_index.i64")
    _write_json(out / "manifest.json", {"impacts_shape": list(impacts.shape), "store": str(store_dir.resolve())})
    if log:
        log(f"accepted {len(accepted)} of {n} draws (discard rate {stats['discard_rate']:.3f})")
    return stats


def compute_irfs(store, impacts: np.ndarray, draw_index, n_shocks: int, horizon: int) -> list[np.ndarray]:
    out = []
    for imp, i in zip(impacts, draw_index):
        _, G = assemble_stacked_system(store.spec, store.coefficient_state(int(i)), store.weights)
        out.append(propagate_irf(companion_form(G), imp[:, :n_shocks], horizon))
    return out


def cmd_irf(cfg: RunConfig, store_dir=None, log=None) -> dict:
    store_dir = Path(store_dir) if store_dir is not None else cfg.store_dir
    ident = cfg.output_dir / IDENT_DIR
    try:
        manifest = json.loads((ident / "manifest.json").read_text(encoding="utf-8"))
        summary_in = json.loads((ident / "summary.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"identification output missing in {ident}; run 'identify' first ({exc})") from exc
    store = load_store(store_dir)
    impacts = np.fromfile(ident / "impacts.f64", dtype="<f8").reshape(manifest["impacts_shape"])
    index = np.fromfile(ident / "draw_index.i64", dtype="<i8")
    shocks = summary_in["shocks"]
    irfs = compute_irfs(store, impacts, index, len(shocks), cfg.horizon)
    tensor = stack_irfs(irfs, shocks, store.columns)
    ledger, transforms = _read_ledger(store_dir)
    tensor = rescale_to_units(tensor, ledger, transforms)
    summary = summarize(tensor, cfg.quantiles)
    meta = {"config_hash": cfg.config_hash(), "n_identified": int(len(index)),
            "identification_discard_rate": summary_in["discard_rate"], "seed": cfg.chain.seed}
    path = write_irf_csv(cfg.output_dir / IRF_FILE, summary, meta)
    if log:
        log(f"wrote {path} ({summary.n_draws} draws, {summary.n_excluded} explosive draws excluded)")
    return {"csv": str(path), "n_draws": summary.n_draws, "n_excluded": summary.n_excluded}


def cmd_dic(cfg: RunConfig, factors=None, store_dir=None, log=None) -> list[dict]:
    """DIC of an existing store, or of fresh chains over a grid of factor counts."""
    rows = []
    if factors:
        weights = load_weights(cfg)
        panel, _ = load_data(cfg)
        for F in factors:
            spec = replace(cfg.spec, n_factors=int(F))
            require_valid(spec)
            data = prepare_data(spec, panel.values, weights)
            store = run_chain(cfg.chain, spec, data, cfg.priors)
            d = compute_dic(store, data)
            rows.append({"factors": int(F), **asdict(d)})
    else:
        store_dir = Path(store_dir) if store_dir is not None else cfg.store_dir
        store = load_store(store_dir)
        periods, cols, values = di.read_wide_csv(store_dir / "panel.csv")
        data = prepare_data(store.spec, values, store.weights)
        rows.append({"factors": store.spec.F, **asdict(compute_dic(store, data))})
    _prepare_output(cfg.output_dir)
    _write_json(cfg.output_dir / "dic.json", {"config_hash": cfg.config_hash(), "results": rows})
    if log:
        for r in rows:
            log(f"F={r['factors']}: DIC={r['dic']:.3f} (pD={r['p_d']:.2f})")
    return rows


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvarfsv", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="override chain.seed")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("-q", "--quiet", action="store_true")
        return p

    p = common(sub.add_parser("simulate", help="simulate a synthetic panel from a truth record"))
    p.add_argument("--truth", help="truth JSON to use (created if missing)")
    p = common(sub.add_parser("estimate", help="run the Gibbs sampler and write the draw store"))
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in output_dir")
    p = common(sub.add_parser("identify", help="rotation search on every retained draw"))
    p.add_argument("--store", help="draw store directory (default: <output_dir>/draws)")
    p = common(sub.add_parser("irf", help="impulse responses and credible bands"))
    p.add_argument("--store", help="draw store directory (default: <output_dir>/draws)")
    p = common(sub.add_parser("dic", help="deviance information criterion"))
    p.add_argument("--store", help="draw store directory (default: <output_dir>/draws)")
    p.add_argument("--factors", help="comma-separated factor counts to estimate and compare, e.g. 1,2,3")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
        if args.command == "simulate":
            cmd_simulate(cfg, args.truth)
        elif args.command == "estimate":
            cmd_estimate(cfg, resume=args.resume, log=log)
        elif args.command == "identify":
            cmd_identify(cfg, args.store, log=log)
        elif args.command == "irf":
            cmd_irf(cfg, args.store, log=log)
        elif args.command == "dic":
            factors = None
            if args.factors:
                try:
                    factors = [int(f) for f in args.factors.split(",")]
                except ValueError:
                    raise ConfigError(f"--factors must be comma-separated integers, got {args.factors!r}") from None
            cmd_dic(cfg, factors, args.store, log=log)
    except GvarError as exc:
        print(f"gvarfsv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
