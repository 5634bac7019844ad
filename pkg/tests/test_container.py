"""Named-tensor container: round trips and the error surface."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from stdense import Tensor
from stdense.container import (
    MAGIC,
    BadMagicError,
    ContainerError,
    DuplicateNameError,
    TruncatedFileError,
    read_container,
    write_container,
)


def test_single_tensor_round_trip(tmp_path):
    path = tmp_path / "one.stdn"
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_container(path, {"w": Tensor(arr)})
    back = read_container(path)
    assert list(back) == ["w"]
    assert back["w"].shape == (2, 3)
    assert back["w"].dtype == np.float32
    npt.assert_array_equal(back["w"].data, arr)


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "mix.stdn"
    entries = {
        "a.small": rng.standard_normal((3, 1, 4)).astype(np.float32),
        "b.double": rng.standard_normal((2, 5)),
        "c.scalar": np.float32(1e-40),  # subnormal survives
        "d.empty": np.zeros((0, 4), np.float64),
    }
    write_container(path, entries)
    back = read_container(path)
    assert list(back) == list(entries)
    for name, arr in entries.items():
        arr = np.asarray(arr)
        assert back[name].dtype == arr.dtype
        assert back[name].data.tobytes() == arr.tobytes()


def test_empty_container(tmp_path):
    path = tmp_path / "empty.stdn"
    write_container(path, {})
    assert read_container(path) == {}
    assert path.stat().st_size == 10  # magic + version + count


def test_bad_magic(tmp_path):
    path = tmp_path / "corrupt.stdn"
    write_container(path, {"w": np.ones((2,), np.float32)})
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_container(path)


def test_truncation_at_every_prefix(tmp_path):
    path = tmp_path / "full.stdn"
    write_container(path, {"w": np.arange(4, dtype=np.float32),
                           "x": np.ones((2, 2), np.float64)})
    raw = path.read_bytes()
    cut_path = tmp_path / "cut.stdn"
    for cut in range(len(raw)):
        cut_path.write_bytes(raw[:cut])
        with pytest.raises(ContainerError):
            read_container(cut_path)
        if cut >= len(MAGIC):  # past the magic, always the truncation error
            cut_path.write_bytes(raw[:cut])
            with pytest.raises(TruncatedFileError):
                read_container(cut_path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "trail.stdn"
    write_container(path, {"w": np.ones(3, np.float32)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ContainerError):
        read_container(path)


def test_duplicate_names_on_write(tmp_path):
    path = tmp_path / "dup.stdn"
    pairs = [("w", np.ones(1, np.float32)), ("w", np.zeros(1, np.float32))]
    with pytest.raises(DuplicateNameError):
        write_container(path, pairs)


def test_duplicate_names_on_read(tmp_path):
    path = tmp_path / "dupfile.stdn"
    entry = (struct.pack("<H", 1) + b"w" + struct.pack("<B", 1)
             + struct.pack("<Q", 1) + struct.pack("<B", 0)
             + np.float32(2.0).tobytes())
    path.write_bytes(MAGIC + struct.pack("<HI", 1, 2) + entry + entry)
    with pytest.raises(DuplicateNameError):
        read_container(path)


def test_error_types_are_distinct():
    kinds = {BadMagicError, TruncatedFileError, DuplicateNameError}
    assert len(kinds) == 3
    for kind in kinds:
        assert issubclass(kind, ContainerError)
    assert not issubclass(BadMagicError, TruncatedFileError)
    assert not issubclass(TruncatedFileError, DuplicateNameError)


def test_unsupported_version_and_dtype(tmp_path):
    path = tmp_path / "ver.stdn"
    path.write_bytes(MAGIC + struct.pack("<HI", 99, 0))
    with pytest.raises(ContainerError):
        read_container(path)
    path.write_bytes(MAGIC + struct.pack("<HI", 1, 1)
                     + struct.pack("<H", 1) + b"w" + struct.pack("<B", 0)
                     + struct.pack("<B", 7))
    with pytest.raises(ContainerError):
        read_container(path)


def test_write_side_validation(tmp_path):
    path = tmp_path / "invalid.stdn"
    with pytest.raises(ValueError):
        write_container(path, {"héllo": np.ones(1, np.float32)})
    with pytest.raises(ValueError):
        write_container(path, {"": np.ones(1, np.float32)})
    with pytest.raises(ValueError):
        write_container(path, {"ints": np.ones(1, np.int32)})
