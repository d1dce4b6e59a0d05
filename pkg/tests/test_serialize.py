"""Weight-container format tests: header, manifest, payload, validation."""
import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from yotor.nn.serialize import MAGIC, load_weights, save_weights


def _state(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "backbone.w": rng.normal(size=(3, 4)).astype(np.float32),
        "head.bias": rng.normal(size=(7,)),                      # float64
        "scalarish": np.array([np.pi], dtype=np.float64),
        "empty": np.zeros((0, 4), dtype=np.float32),
    }


def test_roundtrip_values_dtypes_shapes(tmp_path):
    path = tmp_path / "w.ytnw"
    state = _state()
    save_weights(path, state)
    loaded, meta = load_weights(path)
    assert meta == {}
    assert list(loaded) == list(state)  # order preserved
    for name, arr in state.items():
        assert loaded[name].dtype == arr.dtype
        assert loaded[name].shape == arr.shape
        assert_array_equal(loaded[name], arr)


def test_roundtrip_meta(tmp_path):
    path = tmp_path / "w.ytnw"
    meta = {"config": {"variant": "toy", "num_classes": 3}, "note": "x"}
    save_weights(path, {"a": np.ones(2)}, meta=meta)
    _, loaded_meta = load_weights(path)
    assert loaded_meta == meta


def test_nonfinite_values_survive(tmp_path):
    path = tmp_path / "w.ytnw"
    arr = np.array([np.nan, np.inf, -np.inf, 0.0])
    save_weights(path, {"a": arr})
    loaded, _ = load_weights(path)
    assert_array_equal(loaded["a"], arr)  # NaN compares equal here


def test_header_and_manifest_layout(tmp_path):
    path = tmp_path / "w.ytnw"
    state = _state(1)
    save_weights(path, state, meta={"k": 1})
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    manifest = json.loads(raw[len(MAGIC) + 8:len(MAGIC) + 8 + mlen])
    assert set(manifest) == {"meta", "tensors"}
    assert manifest["meta"] == {"k": 1}
    entries = manifest["tensors"]
    assert [e["name"] for e in entries] == list(state)
    # offsets are contiguous over the packed blob
    offset = 0
    for e in entries:
        assert set(e) == {"name", "dtype", "shape", "offset", "nbytes"}
        assert e["offset"] == offset
        itemsize = 4 if e["dtype"] == "float32" else 8
        assert e["nbytes"] == int(np.prod(e["shape"])) * itemsize
        offset += e["nbytes"]
    assert len(raw) == len(MAGIC) + 8 + mlen + offset


def test_payload_is_little_endian_in_manifest_order(tmp_path):
    path = tmp_path / "w.ytnw"
    a = np.array([1.0, 2.5], dtype=np.float32)
    b = np.array([3.0], dtype=np.float64)
    save_weights(path, {"a": a, "b": b})
    raw = path.read_bytes()
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    blob = raw[len(MAGIC) + 8 + mlen:]
    assert blob[:8] == a.astype("<f4").tobytes()
    assert blob[8:16] == b.astype("<f8").tobytes()


def test_write_is_deterministic(tmp_path):
    state = _state(2)
    p1, p2 = tmp_path / "a.ytnw", tmp_path / "b.ytnw"
    save_weights(p1, state, meta={"z": [1, 2]})
    save_weights(p2, state, meta={"z": [1, 2]})
    assert p1.read_bytes() == p2.read_bytes()


def test_empty_state(tmp_path):
    path = tmp_path / "w.ytnw"
    save_weights(path, {}, meta={"only": "meta"})
    state, meta = load_weights(path)
    assert state == {} and meta == {"only": "meta"}


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "w.ytnw"
    save_weights(path, {"a": np.ones(2)})
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        load_weights(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(TypeError, match="dtype"):
        save_weights(tmp_path / "w.ytnw", {"a": np.arange(3)})  # int64
    with pytest.raises(TypeError, match="dtype"):
        save_weights(tmp_path / "w.ytnw", {"a": np.ones(3, dtype=np.float16)})


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "w.ytnw"
    save_weights(path, {"a": np.ones((4, 4))})
    raw = path.read_bytes()
    path.write_bytes(raw[:-32])
    with pytest.raises(ValueError):
        load_weights(path)


def test_accepts_tensor_like_values(tmp_path):
    # anything np.asarray understands should be storable
    from yotor.nn import Tensor

    path = tmp_path / "w.ytnw"
    t = Tensor(np.full((2, 3), 0.5), dtype=np.float32)
    save_weights(path, {"t": t.data})
    loaded, _ = load_weights(path)
    assert_array_equal(loaded["t"], t.data)
