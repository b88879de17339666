import io
import struct

import numpy as np
import pytest

from mmfusion.errors import DataError
from mmfusion.serialization import load_tensors, read_tensor, save_tensors, write_tensor
from mmfusion.tensor import Tensor


def test_roundtrip_single():
    arr = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    buf = io.BytesIO()
    write_tensor(buf, arr)
    buf.seek(0)
    back = read_tensor(buf)
    np.testing.assert_array_equal(back, arr)


def test_header_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = io.BytesIO()
    write_tensor(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"MMT1"
    assert struct.unpack("<I", raw[4:8]) == (2,)
    assert struct.unpack("<II", raw[8:16]) == (2, 3)
    assert len(raw) == 16 + 6 * 4
    # payload is little-endian f32 in row order
    assert struct.unpack("<6f", raw[16:]) == tuple(range(6))


def test_scalar_rank_zero():
    buf = io.BytesIO()
    write_tensor(buf, np.float32(2.5))
    buf.seek(0)
    back = read_tensor(buf)
    assert back.shape == ()
    assert back == np.float32(2.5)


def test_bad_magic():
    with pytest.raises(DataError):
        read_tensor(io.BytesIO(b"NOPE" + b"\x00" * 16))


def test_truncated_payload():
    arr = np.ones(10, dtype=np.float32)
    buf = io.BytesIO()
    write_tensor(buf, arr)
    clipped = io.BytesIO(buf.getvalue()[:-4])
    with pytest.raises(DataError):
        read_tensor(clipped)


def test_bundle_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "text.embed": Tensor(rng.standard_normal((7, 3)).astype(np.float32)),
        "fusion.w": rng.standard_normal((3, 2)).astype(np.float32),
    }
    path = tmp_path / "model.mmt"
    save_tensors(path, tensors, metadata={"best_epoch": 4})
    back, meta = load_tensors(path)
    assert list(back) == ["text.embed", "fusion.w"]
    np.testing.assert_array_equal(back["text.embed"], tensors["text.embed"].data)
    np.testing.assert_array_equal(back["fusion.w"], tensors["fusion.w"])
    assert meta["best_epoch"] == 4
    assert meta["tensors"] == ["text.embed", "fusion.w"]


def test_bundle_missing_sidecar(tmp_path):
    path = tmp_path / "model.mmt"
    save_tensors(path, {"a": np.zeros(2, dtype=np.float32)})
    (tmp_path / "model.mmt.json").unlink()
    with pytest.raises(DataError):
        load_tensors(path)


def test_bundle_trailing_garbage(tmp_path):
    path = tmp_path / "model.mmt"
    save_tensors(path, {"a": np.zeros(2, dtype=np.float32)})
    with open(path, "ab") as fh:
        fh.write(b"x")
    with pytest.raises(DataError):
        load_tensors(path)


def test_save_is_deterministic(tmp_path):
    arrs = {"w": np.arange(4, dtype=np.float32), "b": np.zeros(2, dtype=np.float32)}
    p1, p2 = tmp_path / "a.mmt", tmp_path / "b.mmt"
    save_tensors(p1, arrs, metadata={"seed": 0})
    save_tensors(p2, arrs, metadata={"seed": 0})
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a.mmt.json").read_text() == (tmp_path / "b.mmt.json").read_text()
