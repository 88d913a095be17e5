import json

import numpy as np
import pytest

from stemcal.container import ContainerError, TensorContainer, atomic_write_bytes, read_tensor, write_tensor


def test_round_trip_random_tensors(tmp_path, rng):
    for i in range(100):
        ndim = int(rng.integers(0, 5))
        shape = tuple(int(n) for n in rng.integers(0, 6, ndim))
        values = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / f"t{i}.f32"
        write_tensor(path, values, kind="irm" if i % 2 else None)
        back = read_tensor(path)
        assert back.values.shape == shape
        assert back.values.tobytes() == values.tobytes()
        assert back.kind == ("irm" if i % 2 else None)


def test_special_values_survive(tmp_path):
    values = np.array([np.inf, -np.inf, -0.0, np.float32(1e-45), np.nan], dtype=np.float32)
    write_tensor(tmp_path / "s.f32", values)
    assert read_tensor(tmp_path / "s.f32").values.tobytes() == values.tobytes()


def test_header_layout():
    blob = TensorContainer(np.zeros((2, 3), np.float32), "irm_mel").to_bytes()
    head, payload = blob.split(b"\n", 1)
    assert json.loads(head) == {"dtype": "f32", "shape": [2, 3], "order": "row-major", "endian": "little", "kind": "irm_mel"}
    assert len(payload) == 24


def test_payload_is_little_endian():
    blob = TensorContainer(np.array([1.0], np.float32)).to_bytes()
    assert blob.endswith(b"\x00\x00\x80\x3f")


@pytest.mark.parametrize(
    "blob",
    [
        b'{"dtype":"f32","shape":[2],"order":"row-major","endian":"little"}',
        b'{"dtype":"f32","shape":[2],"order":"row-major","endian":"little"}\n\x00\x00\x00\x00',
        b'{"dtype":"f64","shape":[1],"order":"row-major","endian":"little"}\n\x00\x00\x00\x00',
        b'{"dtype":"f32","shape":[-1],"order":"row-major","endian":"little"}\n',
        b"not json\n",
    ],
)
def test_malformed_containers(blob):
    with pytest.raises(ContainerError):
        TensorContainer.from_bytes(blob)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_bytes(tmp_path / "sub" / "a.bin", b"abc")
    atomic_write_bytes(tmp_path / "sub" / "a.bin", b"xyz")
    assert (tmp_path / "sub" / "a.bin").read_bytes() == b"xyz"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.bin"]
