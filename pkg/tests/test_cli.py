import csv
import json

import numpy as np
import pytest

from gvarfsv.cli import build_parser, load_config, main
from gvarfsv.errors import ConfigError
from pipeline import run_pipeline, write_config


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    codes, out = run_pipeline(d)
    return d, codes, out


def test_pipeline_exit_codes_and_files(done):
    _, codes, out = done
    assert codes == [0, 0, 0, 0]
    for rel in ("truth.json", "data/weights.csv", "draws/manifest.json", "draws/ledger.json", "run.json",
                "identified/summary.json", "irf.csv", "irf.json"):
        assert (out / rel).exists(), rel


def test_retained_matches_formula(done):
    _, _, out = done
    run = json.loads((out / "run.json").read_text())
    assert run["retained"] == (60 - 30) // 2


def test_irf_csv_rows(done):
    _, _, out = done
    with open(out / "irf.csv") as fh:
        rows = list(csv.DictReader(fh))
    summary = json.loads((out / "identified" / "summary.json").read_text())
    assert summary["shocks"] == ["MP_US", "MP_EA"]
    assert len(rows) == 2 * 10 * 13  # shocks x K x (H + 1)
    assert {r["unit"] for r in rows} == {"pp"}
    # surprises are unpredictable, so their responses vanish after impact
    late = [float(r["q50"]) for r in rows if r["variable"].startswith("m") and r["horizon"] != "0"]
    assert late and all(v == 0.0 for v in late)
    meta = json.loads((out / "irf.json").read_text())
    assert meta["n_draws"] == summary["n_accepted"]
    # every accepted draw obeys the table, so whole bands sit on the required side
    impact = {(r["shock"], r["variable"]): (float(r["q16"]), float(r["q84"])) for r in rows if r["horizon"] == "0"}
    for shock, var, sign in [("MP_US", "mUS.rate", 1), ("MP_US", "agg.a1", 1), ("MP_US", "agg.a2", -1),
                             ("MP_EA", "mEA.rate", 1), ("MP_EA", "agg.a3", 1), ("MP_EA", "agg.a4", -1)]:
        lo, hi = impact[(shock, var)]
        assert (lo > 0) if sign > 0 else (hi < 0)


def test_simulate_is_seeded(tmp_path):
    for d in ("a", "b"):
        cfg = write_config(tmp_path / d)
        assert main(["simulate", "--config", str(cfg), "-q"]) == 0
    for name in ("surprises.csv", "C02.csv", "weights.csv"):
        assert (tmp_path / "a/out/data" / name).read_bytes() == (tmp_path / "b/out/data" / name).read_bytes()


def test_estimate_manifest_deterministic(tmp_path, done):
    d, _, out = done
    cfg = d / "config.json"
    # data paths are relative to the config, so the rerun reads the same panel
    assert main(["estimate", "--config", str(cfg), "--output-dir", str(tmp_path / "again"), "-q"]) == 0
    a = json.loads((out / "draws" / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "draws" / "manifest.json").read_text())
    assert a["digest"] == b["digest"]


def test_unrestricted_table_accepts_everything(tmp_path, done):
    d, _, out = done
    table = {"shocks": ["A", "B"], "rows": {}}
    cfg = write_config(d, restrictions=table, output_dir="out")
    try:
        assert main(["identify", "--config", str(cfg), "--output-dir", str(tmp_path), "--store",
                     str(out / "draws"), "-q"]) == 0
    finally:
        write_config(d)
    assert json.loads((tmp_path / "identified" / "summary.json").read_text())["discard_rate"] == 0.0


def test_dic_command(tmp_path, done):
    d, _, out = done
    cfg = d / "config.json"
    assert main(["dic", "--config", str(cfg), "--output-dir", str(tmp_path), "--store", str(out / "draws"),
                 "-q"]) == 0
    res = json.loads((tmp_path / "dic.json").read_text())["results"]
    assert res[0]["factors"] == 2 and np.isfinite(res[0]["dic"])


def test_exit_codes_for_errors(tmp_path, capsys):
    assert main(["estimate", "--config", str(tmp_path / "missing.json")]) == 2
    cfg = write_config(tmp_path)
    assert main(["estimate", "--config", str(cfg), "-q"]) == 2  # data files not simulated yet
    assert "referenced paths do not exist" in capsys.readouterr().err
    assert main(["simulate", "--config", str(cfg), "-q"]) == 0
    c01 = tmp_path / "out/data/C01.csv"
    c01.write_text(c01.read_text().replace(",", ";", 3))
    assert main(["estimate", "--config", str(cfg), "-q"]) == 3
    assert "DataError" in capsys.readouterr().err
    infeasible = {"shocks": ["A", "B"], "rows": [{"variable": "agg.a1", "cells": ["+", "~"]},
                                                 {"variable": "agg.a1", "cells": ["-", "~"]}]}
    cfg = write_config(tmp_path, restrictions=infeasible, total=10, burn_in=4,
                       identification={"max_attempts": 5})
    for cmd in ("simulate", "estimate"):
        assert main([cmd, "--config", str(cfg), "-q"]) == 0
    assert main(["identify", "--config", str(cfg), "-q"]) == 5
    assert main(["dic", "--config", str(cfg), "--factors", "x", "-q"]) == 2


def test_config_validation(tmp_path):
    cfg = write_config(tmp_path, bogus=1)
    with pytest.raises(ConfigError, match="bogus"):
        load_config(cfg)
    cfg = write_config(tmp_path, seed=3)
    assert load_config(cfg, seed=11).chain.seed == 11


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("simulate", "estimate", "identify", "irf", "dic"):
        assert cmd in text


def test_resume_flag(tmp_path):
    cfg = write_config(tmp_path, total=20, burn_in=10)
    assert main(["simulate", "--config", str(cfg), "-q"]) == 0
    assert main(["estimate", "--config", str(cfg), "--resume", "-q"]) == 2
    cfg = write_config(tmp_path, total=20, burn_in=10,
                       chain={"total": 20, "burn_in": 10, "thin": 2, "seed": 7, "checkpoint_interval": 5})
    assert main(["estimate", "--config", str(cfg), "-q"]) == 0
    first = (tmp_path / "out/draws/loglik.f64").read_bytes()
    assert main(["estimate", "--config", str(cfg), "--resume", "-q"]) == 0
    assert (tmp_path / "out/draws/loglik.f64").read_bytes() == first


@pytest.mark.slow
def test_full_size_pipeline(tmp_path):
    cfg = {
        "spec": {"n_countries": 17, "k_country": 5, "m_surprise": 2, "k_aggregate_low_freq": 12,
                 "lag_domestic": 2, "lag_foreign": 2, "lag_aggregate_in_country": 2, "n_factors": 10},
        "data": {"files": [f"out/data/{n}.csv" for n in
                           ["surprises", "aggregate", "AT", "BE", "DE", "ES", "FI", "FR", "GR", "IE", "IT",
                            "NL", "PT", "CA", "DK", "JP", "SE", "UK", "US"]]},
        "weights": {"matrix": "out/data/weights.csv"},
        "simulate": {"periods": 216, "start": "1999-01"},
        "output_dir": "out",
        "chain": {"total": 30, "burn_in": 20, "thin": 2, "seed": 1},
        "identification": {"max_attempts": 10000},
        "irf": {"horizon": 6},
        "workers": 2,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    codes = [main([c, "--config", str(path), "-q"]) for c in ("simulate", "estimate", "identify", "irf")]
    assert codes == [0, 0, 0, 0]
    with open(tmp_path / "out" / "irf.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 4 * 101 * 7


def test_simulate_signs_table_roles_by_default(tmp_path):
    # roles given only for the restriction table still shape the simulated truth
    cfg = write_config(tmp_path, simulate={"periods": 60})
    assert main(["simulate", "--config", str(cfg), "-q"]) == 0
    truth = json.loads((tmp_path / "out" / "truth.json").read_text())
    ids = load_config(cfg).spec.column_ids()
    L = np.array(truth["loadings"])
    assert L[ids.index("agg.a1"), 0] > 0 and L[ids.index("agg.a2"), 0] < 0
    assert L[ids.index("agg.a3"), 1] > 0 and L[ids.index("agg.a4"), 1] < 0
