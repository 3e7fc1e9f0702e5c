import numpy as np
import pytest

from stencilcomm.mhd import FieldState
from stencilcomm.snapshot import SnapshotError, read_snapshot, write_snapshot


def test_round_trip_is_bit_exact(tmp_path):
    state = FieldState.random((5, 6, 7), 2, seed=11)
    path = tmp_path / "s.bin"
    write_snapshot(path, state, seed=11)
    back, header = read_snapshot(path)
    assert np.array_equal(back.interior, state.interior)
    assert back.spacing == state.spacing and back.radius == 2
    assert header["extent"] == [5, 6, 7] and header["seed"] == 11
    assert header["fields"][0] == "lnrho"
    write_snapshot(tmp_path / "t.bin", back, seed=11)
    assert path.read_bytes() == (tmp_path / "t.bin").read_bytes()


def test_body_is_little_endian_row_major(tmp_path):
    state = FieldState.random((2, 3, 4), 1, seed=0)
    path = tmp_path / "s.bin"
    write_snapshot(path, state)
    raw = path.read_bytes()
    body = raw[-state.interior.size * 8:]
    assert np.array_equal(np.frombuffer(body, dtype="<f8"), state.interior.ravel(order="C"))


def test_corrupt_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"hello")
    with pytest.raises(SnapshotError):
        read_snapshot(bad)
    state = FieldState.random((2, 2, 2), 1)
    path = tmp_path / "s.bin"
    write_snapshot(path, state)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(SnapshotError):
        read_snapshot(path)
