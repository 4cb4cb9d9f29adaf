import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from patmg.fieldio import MAGIC, read_field, sidecar_path, write_field


@given(arrays(float, array_shapes(min_dims=1, max_dims=3, max_side=6),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_roundtrip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("f") / "x.field"
    write_field(path, values, {"spacing": [1e-4], "units": "Pa"})
    back, meta = read_field(path)
    assert back.shape == values.shape and np.array_equal(back, values)
    assert meta["units"] == "Pa"


def test_header_layout(tmp_path):
    path = write_field(tmp_path / "a.field", np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    assert int.from_bytes(raw[16:20], "little") == 2
    assert len(raw) == 16 + 4 + 8 + 6 * 8
    assert not sidecar_path(path).exists()


def test_rejects_garbage(tmp_path):
    p = tmp_path / "bad.field"
    p.write_bytes(b"notafield" * 4)
    with pytest.raises(ValueError):
        read_field(p)
