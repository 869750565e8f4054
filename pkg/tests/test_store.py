import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gvarfsv.errors import CheckpointError, DataError
from gvarfsv.model_core import ModelSpec, WeightMatrix
from gvarfsv.store import DrawStore, load_store, read_checkpoint, save_store, write_checkpoint


def make_store(rng, n=4):
    spec = ModelSpec(2, 2, 1, 1, n_factors=1)
    arrays = {
        "aggregate": rng.normal(size=(n, spec.l, spec.n_agg_regressors)),
        "country": rng.normal(size=(n, 2, 2, spec.n_country_regressors)),
        "loglik": rng.normal(size=n),
    }
    return DrawStore(spec, WeightMatrix([[0.5, 0.5], [0, 1], [1, 0]]), arrays, {"seed": 3})


def test_store_roundtrip(tmp_path, rng):
    store = make_store(rng)
    save_store(store, tmp_path / "d")
    back = load_store(tmp_path / "d")
    assert len(back) == 4
    assert back.meta["seed"] == 3
    assert back.spec == store.spec
    for k, v in store.arrays.items():
        assert_array_equal(back.arrays[k], v)
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["files"]["country"]["shape"] == [4, 2, 2, store.spec.n_country_regressors]
    assert (tmp_path / "d" / "loglik.f64").stat().st_size == 4 * 8


def test_store_tamper_detected(tmp_path, rng):
    save_store(make_store(rng), tmp_path)
    raw = bytearray((tmp_path / "loglik.f64").read_bytes())
    raw[3] ^= 0xFF
    (tmp_path / "loglik.f64").write_bytes(bytes(raw))
    with pytest.raises(DataError, match="digest"):
        load_store(tmp_path)


def test_store_truncated(tmp_path, rng):
    save_store(make_store(rng), tmp_path)
    (tmp_path / "loglik.f64").write_bytes(b"\0" * 8)
    with pytest.raises(DataError, match="expected 4 values"):
        load_store(tmp_path)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        arrays = {"a": rng.normal(size=(3, 2)), "b": np.arange(4)}
        write_checkpoint(tmp_path / "c", {"run_hash": "abc", "sweep": 7}, arrays)
        header, back = read_checkpoint(tmp_path / "c", expected_hash="abc")
        assert header["sweep"] == 7
        assert_array_equal(back["a"], arrays["a"])
        assert not (tmp_path / "c.tmp").exists()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c").write_bytes(b"NOTACKPT" + b"\0" * 40)
        with pytest.raises(CheckpointError, match="magic"):
            read_checkpoint(tmp_path / "c")

    def test_payload_corruption(self, tmp_path, rng):
        write_checkpoint(tmp_path / "c", {"run_hash": "x"}, {"a": rng.normal(size=50)})
        raw = bytearray((tmp_path / "c").read_bytes())
        raw[-20] ^= 0x01
        (tmp_path / "c").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="corrupted"):
            read_checkpoint(tmp_path / "c")

    def test_hash_mismatch(self, tmp_path):
        write_checkpoint(tmp_path / "c", {"run_hash": "x"}, {"a": np.zeros(1)})
        with pytest.raises(CheckpointError, match="hash mismatch"):
            read_checkpoint(tmp_path / "c", expected_hash="y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "nope")
