import numpy as np
import pytest

from gsavatar.engine import load_checkpoint, save_checkpoint
from gsavatar.errors import DataError


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "enc.w0": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "enc.b0": rng.standard_normal((4,)).astype(np.float32),
        "scalar": np.float32(rng.standard_normal()).reshape(()),
    }
    meta = {"levels": 3, "base_width": 16, "resolution": 64}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, meta)
    loaded, meta2 = load_checkpoint(path)
    assert meta2 == meta
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].shape == tensors[k].shape
        assert np.array_equal(
            loaded[k].view(np.uint32), np.ascontiguousarray(tensors[k]).view(np.uint32)
        ), f"bits differ for {k}"


def test_bad_magic_raises(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOTACKPTxxxx")
    with pytest.raises(DataError):
        load_checkpoint(p)


def test_truncated_payload_raises(tmp_path):
    p = tmp_path / "model.ckpt"
    save_checkpoint(p, {"w": np.ones((8, 8), np.float32)})
    data = p.read_bytes()
    p.write_bytes(data[:-16])
    with pytest.raises(DataError):
        load_checkpoint(p)
