"""Serialization: bit-exact round-trips, checksum verification, and
typed failure modes."""

import struct

import numpy as np
import pytest

from gpcde import config as cfg
from gpcde.data import ConditionedDataset
from gpcde.density import nlpp
from gpcde.persistence import (MAGIC, PersistenceError, load_model,
                               save_model)
from gpcde.trainer import deterministic_bound, train


def _trained(seed=0, d_w=1, iterations=30):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (25, 2))
    y = np.sin(x[:, :1]) + 0.1 * rng.standard_normal((25, 1))
    data = ConditionedDataset(x, y).standardized()
    config = cfg.ModelConfig(d_w=d_w, latent_mode=cfg.AMORTIZED,
                             num_inducing=5, iterations=iterations,
                             batch_size=10, seed=seed, encoder_widths=(4,),
                             quad_points=8)
    return train(data, config), data


def test_round_trip_bit_exact(tmp_path):
    trained, data = _trained()
    path = tmp_path / "m.gpcde"
    save_model(trained, path)
    loaded = load_model(path)
    for name in trained.model.store.raw:
        assert np.array_equal(trained.model.store.raw[name],
                              loaded.model.store.raw[name]), name
    assert np.array_equal(trained.model.u_mean, loaded.model.u_mean)
    assert np.array_equal(trained.model.u_chol, loaded.model.u_chol)
    assert loaded.curve == trained.curve
    assert loaded.x_names == trained.x_names
    assert np.array_equal(loaded.x_stats.mean, trained.x_stats.mean)
    assert np.array_equal(loaded.y_stats.std, trained.y_stats.std)


def test_round_trip_preserves_bound_and_nlpp(tmp_path):
    trained, data = _trained(seed=1)
    path = tmp_path / "m.gpcde"
    save_model(trained, path)
    loaded = load_model(path)
    assert deterministic_bound(loaded.model, data) == \
        deterministic_bound(trained.model, data)
    rng_a = np.random.default_rng(9)
    rng_b = np.random.default_rng(9)
    a = nlpp(trained.model, data.X, data.Y, num_samples=200, rng=rng_a)
    b = nlpp(loaded.model, data.X, data.Y, num_samples=200, rng=rng_b)
    assert a == b


def test_round_trip_gp_variant(tmp_path):
    trained, data = _trained(seed=2, d_w=0)
    path = tmp_path / "gp.gpcde"
    save_model(trained, path)
    loaded = load_model(path)
    assert deterministic_bound(loaded.model, data) == \
        deterministic_bound(trained.model, data)


def test_save_overwrites_atomically(tmp_path):
    a, _ = _trained(seed=3, iterations=10)
    b, data = _trained(seed=4, iterations=10)
    path = tmp_path / "m.gpcde"
    save_model(a, path)
    save_model(b, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.model.u_mean, b.model.u_mean)
    leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []


def test_corrupt_byte_detected(tmp_path):
    trained, _ = _trained(seed=5, iterations=5)
    path = tmp_path / "m.gpcde"
    save_model(trained, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(PersistenceError, match="checksum"):
        load_model(path)


def test_bad_magic_detected(tmp_path):
    import hashlib
    body = b"NOTME" + struct.pack("<IQ", 1, 2) + b"{}"
    path = tmp_path / "m.gpcde"
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(PersistenceError, match="magic"):
        load_model(path)


def test_wrong_version_detected(tmp_path):
    import hashlib
    body = MAGIC + struct.pack("<IQ", 99, 2) + b"{}"
    path = tmp_path / "m.gpcde"
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(PersistenceError, match="version"):
        load_model(path)


def test_truncated_file_detected(tmp_path):
    trained, _ = _trained(seed=6, iterations=5)
    path = tmp_path / "m.gpcde"
    save_model(trained, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 3])
    with pytest.raises(PersistenceError):
        load_model(path)


def test_tiny_file_detected(tmp_path):
    path = tmp_path / "m.gpcde"
    path.write_bytes(b"abc")
    with pytest.raises(PersistenceError, match="short"):
        load_model(path)
