import numpy as np
import pytest

from monohdr import checkpoint as ck


def write(path, **blocks):
    rng = np.random.default_rng(0)
    d, c = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4, 3))
    ck.write_checkpoint(path, d, c, (-1, -1, -1), (1, 2, 3), blocks)
    return d, c


def test_round_trip_exact(tmp_path):
    blocks = {"w": np.arange(6.0).reshape(2, 3), "s": np.array(2.5), "meta": {"step": 3, "x": [1, 2]}}
    d, c = write(tmp_path / "c.mh3d", **blocks)
    got = ck.read_checkpoint(tmp_path / "c.mh3d")
    np.testing.assert_array_equal(got["density"], d)
    np.testing.assert_array_equal(got["color"], c)
    np.testing.assert_array_equal(got["bbox_max"], [1, 2, 3])
    np.testing.assert_array_equal(got["blocks"]["w"], blocks["w"])
    assert got["blocks"]["s"].shape == ()
    assert got["blocks"]["meta"] == blocks["meta"]


def test_bytes_deterministic_regardless_of_block_order(tmp_path):
    write(tmp_path / "a", x=np.ones(2), y={"k": 1})
    write(tmp_path / "b", y={"k": 1}, x=np.ones(2))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_header_layout(tmp_path):
    write(tmp_path / "c")
    raw = (tmp_path / "c").read_bytes()
    assert raw[:4] == b"MH3D"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 2, 3, 4]


def test_corrupt_inputs_raise(tmp_path):
    write(tmp_path / "c")
    raw = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(raw[:100])
    with pytest.raises(ck.CheckpointError):
        ck.read_checkpoint(tmp_path / "t")
    (tmp_path / "m").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ck.CheckpointError):
        ck.read_checkpoint(tmp_path / "m")
    (tmp_path / "v").write_bytes(raw[:4] + b"\x09\0\0\0" + raw[8:])
    with pytest.raises(ck.CheckpointError):
        ck.read_checkpoint(tmp_path / "v")
    with pytest.raises(ck.CheckpointError):
        ck.write_checkpoint(tmp_path / "x", np.zeros((2, 2)), np.zeros((2, 2, 3)), (0, 0, 0), (1, 1, 1), {})
