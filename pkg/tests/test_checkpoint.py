import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from dln.checkpoint import CheckpointError, dumps, load, loads, read_kv, save, write_kv
from dln.core import ParamStore


def test_layout_is_bit_exact():
    s = ParamStore()
    s.add("ab", np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    s.add("z", np.array([0.5]), trainable=False)
    expected = (b"DLN1" + struct.pack("<II", 1, 2)
                + struct.pack("<I", 2) + b"ab" + b"\x01" + struct.pack("<III", 2, 1, 3)
                + struct.pack("<3f", 1.0, 2.0, 3.0)
                + struct.pack("<I", 1) + b"z" + b"\x00" + struct.pack("<II", 1, 1) + struct.pack("<f", 0.5))
    assert dumps(s) == expected


@given(st.lists(arrays(np.float32, array_shapes(min_dims=1, max_dims=3, max_side=4),
                       elements=st.floats(-1e6, 1e6, width=32)), min_size=1, max_size=5),
       st.lists(st.booleans(), min_size=5, max_size=5))
def test_round_trip(values, flags):
    s = ParamStore()
    for n, v in enumerate(values):
        s.add(f"p.{n}.é", v, trainable=flags[n])
    back = loads(dumps(s))
    assert back.names() == s.names()
    for (k, a), (_, b) in zip(s.items(), back.items()):
        assert a.trainable == b.trainable
        assert a.shape == b.shape
        assert np.array_equal(a.value, b.value)
    assert dumps(back) == dumps(s)


def test_file_round_trip(tmp_path):
    s = ParamStore()
    s.add("w", np.arange(6, dtype=np.float32).reshape(2, 3))
    save(s, tmp_path / "m.ckpt")
    assert np.array_equal(load(tmp_path / "m.ckpt")["w"].value, s["w"].value)


@pytest.mark.parametrize("mangle", [lambda b: b"XXXX" + b[4:], lambda b: b[:-1], lambda b: b + b"\x00",
                                    lambda b: b[:4] + struct.pack("<I", 9) + b[8:]])
def test_corrupt_inputs_rejected(mangle):
    s = ParamStore()
    s.add("w", np.ones(3, dtype=np.float32))
    with pytest.raises(CheckpointError):
        loads(mangle(dumps(s)))


def test_kv_round_trip_and_comments(tmp_path):
    p = tmp_path / "a.txt"
    write_kv(p, {"a": 1, "b": "x=y", "c": 0.25})
    assert read_kv(p) == {"a": "1", "b": "x=y", "c": "0.25"}
    p.write_text("# note\n\nk = v\n")
    assert read_kv(p) == {"k": "v"}
    p.write_text("novalue\n")
    with pytest.raises(CheckpointError):
        read_kv(p)
