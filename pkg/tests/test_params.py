import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maginet.params import (
    FormatError,
    ParamStore,
    dump_entries,
    load_ntf,
    parse_entries,
    read_tensor,
    save_ntf,
    write_tensor,
)

f32 = hnp.arrays(
    np.float32,
    hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
    elements=st.floats(-1e6, 1e6, width=32),
)


@settings(max_examples=60, deadline=None)
@given(f32)
def test_ntf_roundtrip(arr):
    buf = io.BytesIO()
    write_tensor(buf, arr)
    buf.seek(0)
    back = read_tensor(buf)
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()


def test_ntf_layout_is_little_endian_header_then_payload(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "t.ntf"
    save_ntf(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"NTF1"
    assert struct.unpack("<3I", raw[4:16]) == (2, 2, 3)
    assert np.frombuffer(raw[16:], "<f4").tolist() == list(range(6))
    assert load_ntf(path).tobytes() == arr.tobytes()


def test_bad_magic_and_truncation():
    buf = io.BytesIO()
    write_tensor(buf, np.ones((2, 2), np.float32))
    raw = buf.getvalue()
    with pytest.raises(FormatError):
        read_tensor(io.BytesIO(b"XTF1" + raw[4:]))
    for cut in (2, 6, 10, len(raw) - 1):
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(raw[:cut]))


def test_checkpoint_entries_roundtrip_and_errors():
    entries = {"a/w": np.ones((2, 3), np.float32), "b": np.float32(3.5) * np.ones(())}
    blob = dump_entries(entries)
    back = parse_entries(blob)
    assert list(back) == ["a/w", "b"]
    assert all(back[k].tobytes() == np.asarray(v, np.float32).tobytes() for k, v in entries.items())
    with pytest.raises(FormatError):
        parse_entries(blob + b"\0")
    with pytest.raises(FormatError):
        parse_entries(blob[:-3])


def test_param_store_save_load_and_digest(tmp_path):
    rng = np.random.default_rng(0)
    p = ParamStore({"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(5,))}, step_count=7)
    path = tmp_path / "p.ckpt"
    p.save(path)
    q = ParamStore.load(path)
    assert q.names() == ["x", "y"] and q.step_count == 7
    assert q.digest() == p.digest()
    q["y"].data[0] += 1e-3
    assert q.digest() != p.digest()


def test_param_store_duplicates_and_shape_checks():
    p = ParamStore({"x": np.zeros(2)})
    with pytest.raises(KeyError):
        p.add("x", np.zeros(2))
    with pytest.raises(ValueError):
        p.load_arrays({"x": np.zeros(3)})
    with pytest.raises(KeyError):
        p.load_arrays({})


def test_prefix_view_shares_tensors():
    p = ParamStore({"a/w": np.zeros(2), "b/w": np.zeros(2)})
    sub = p.with_prefix("a/")
    assert sub.names() == ["a/w"] and sub["a/w"] is p["a/w"]
