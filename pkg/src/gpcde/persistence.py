"""Versioned model serialization.

Layout: magic bytes, u32 format version, u64 header length, JSON header
(config, dimensions, standardization statistics, column names, training
curve, array manifest with names/shapes), then the raw little-endian f8
array bytes in manifest order, then a sha256 checksum of everything
before it.  Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .config import ModelConfig
from .data import ColumnStats
from .model import GpCdeModel
from .trainer import TrainedModel

MAGIC = b"GPCDE"
VERSION = 1


class PersistenceError(Exception):
    """Unreadable, corrupt, or incompatible model file."""


def _stats_to_json(stats):
    if stats is None:
        return None
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist()}


def _stats_from_json(d):
    if d is None:
        return None
    return ColumnStats(np.asarray(d["mean"], dtype=np.float64),
                       np.asarray(d["std"], dtype=np.float64))


def _collect_arrays(trained: TrainedModel):
    """Named float64 arrays fully determining the model state."""
    model = trained.model
    arrays = {}
    for name in model.store.specs:
        arrays[f"raw/{name}"] = np.asarray(model.store.raw[name],
                                           dtype=np.float64)
    if model.u_mean is not None:
        arrays["state/u_mean"] = model.u_mean
        arrays["state/u_chol"] = model.u_chol
    return arrays


def save_model(trained: TrainedModel, path):
    """Write the model atomically (temp file then rename)."""
    model = trained.model
    arrays = _collect_arrays(trained)
    manifest = [{"name": n, "shape": list(a.shape)}
                for n, a in arrays.items()]
    header = {
        "config": trained.config.to_dict(),
        "d_x": model.d_x,
        "d_y": model.d_y,
        "n_train": model.n_train,
        "curve": [list(row) for row in trained.curve],
        "x_stats": _stats_to_json(trained.x_stats),
        "y_stats": _stats_to_json(trained.y_stats),
        "x_names": trained.x_names,
        "y_names": trained.y_names,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<IQ", VERSION, len(header_bytes))
    payload += header_bytes
    for item in manifest:
        a = np.ascontiguousarray(arrays[item["name"]], dtype="<f8")
        payload += a.tobytes()
    payload += hashlib.sha256(payload).digest()

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 + 32:
        raise PersistenceError(f"{path}: file too short")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise PersistenceError(f"{path}: checksum mismatch (corrupt file)")
    if body[:len(MAGIC)] != MAGIC:
        raise PersistenceError(f"{path}: bad magic, not a model file")
    off = len(MAGIC)
    version, header_len = struct.unpack_from("<IQ", body, off)
    off += 12
    if version != VERSION:
        raise PersistenceError(
            f"{path}: format version {version}, expected {VERSION}")
    try:
        header = json.loads(body[off:off + header_len].decode())
    except ValueError as e:
        raise PersistenceError(f"{path}: unreadable header: {e}") from e
    off += header_len

    config = ModelConfig.from_dict(header["config"])
    model = GpCdeModel(config, header["d_x"], header["d_y"],
                       header["n_train"])
    arrays = {}
    for item in header["arrays"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = off + 8 * count
        if end > len(body):
            raise PersistenceError(f"{path}: truncated array table")
        arrays[item["name"]] = np.frombuffer(
            body[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(body):
        raise PersistenceError(f"{path}: trailing bytes after array table")

    for name in model.store.specs:
        key = f"raw/{name}"
        if key not in arrays:
            raise PersistenceError(f"{path}: missing array {key}")
        model.store.raw[name] = arrays[key]
    if model.u_mean is not None:
        model.u_mean = arrays["state/u_mean"]
        model.u_chol = arrays["state/u_chol"]
    return TrainedModel(
        model, config,
        curve=[tuple(row) for row in header["curve"]],
        x_stats=_stats_from_json(header["x_stats"]),
        y_stats=_stats_from_json(header["y_stats"]),
        x_names=header["x_names"], y_names=header["y_names"])
