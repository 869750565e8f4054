"""
Posterior draw storage and chain checkpoints.

DrawStore directory layout::

    manifest.json          dimensions, ordering, seed, config, file table
    <name>.f64             raw little-endian float64, C order, leading draw axis

Checkpoints are single binary files::

    b"GVARCKPT" | uint32 version | uint64 header length | JSON header | npz payload

The header embeds the run hash and a SHA-256 digest of the payload.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataError
from .model_core import ModelSpec, WeightMatrix

STORE_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"GVARCKPT"
CHECKPOINT_VERSION = 1

DRAW_ARRAYS = ("aggregate", "country", "loadings", "sv_theta", "sv_phi", "sv_sigma",
               "xi_bar", "loglik", "b_tau", "lambda_tau")


@dataclass
class DrawStore:
    """Retained posterior draws, ordered by sweep."""

    spec: ModelSpec
    weights: WeightMatrix
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.arrays["loglik"].shape[0])

    @property
    def columns(self) -> list[str]:
        return self.meta.get("columns", self.spec.column_ids())

    def coefficient_state(self, i: int):
        from .model_core import CoefficientState
        return CoefficientState(self.arrays["aggregate"][i], self.arrays["country"][i], self.spec)


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_store(store: DrawStore, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in store.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        a.tofile(directory / f"{name}.f64")
        files[name] = {"file": f"{name}.f64", "shape": list(a.shape), "dtype": "float64-le"}
    manifest = {
        "format_version": STORE_FORMAT_VERSION,
        "n_draws": len(store),
        "spec": store.spec.to_dict(),
        "columns": store.columns,
        "ordering": "stacked: mUS, mEA, aggregate, countries in spec order",
        "weights": store.weights.values.tolist(),
        "files": files,
        "digest": _digest({k: np.asarray(v, dtype=float) for k, v in store.arrays.items()}),
        **{k: v for k, v in store.meta.items() if k != "columns"},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_store(directory) -> DrawStore:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read draw store manifest in {directory}: {exc}") from exc
    if manifest.get("format_version") != STORE_FORMAT_VERSION:
        raise DataError(f"unsupported draw store version {manifest.get('format_version')!r}")
    arrays = {}
    for name, entry in manifest["files"].items():
        path = directory / entry["file"]
        data = np.fromfile(path, dtype="<f8")
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise DataError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
        arrays[name] = data.reshape(shape)
    if _digest(arrays) != manifest["digest"]:
        raise DataError(f"draw store in {directory} does not match its manifest digest")
    spec = ModelSpec.from_dict(manifest["spec"])
    meta = {k: v for k, v in manifest.items()
            if k not in ("format_version", "n_draws", "spec", "weights", "files", "digest", "ordering")}
    return DrawStore(spec, WeightMatrix(manifest["weights"]), arrays, meta)


def write_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    header = dict(header, payload_sha256=hashlib.sha256(payload).hexdigest())
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
    tmp.replace(path)


def read_checkpoint(path, expected_hash: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    try:
        version, head_len = struct.unpack_from("<IQ", raw, offset)
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint header") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset += struct.calcsize("<IQ")
    try:
        header = json.loads(raw[offset: offset + head_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint header ({exc})") from exc
    payload = raw[offset + head_len:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: checkpoint payload is corrupted (digest mismatch)")
    if expected_hash is not None and header.get("run_hash") != expected_hash:
        raise CheckpointError(f"{path}: checkpoint belongs to a different spec/data/config (hash mismatch)")
    with np.load(io.BytesIO(payload)) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return header, arrays
