import struct

import numpy as np
import pytest

from l1ns.formats import (
    FormatError,
    collection_from_bytes,
    collection_to_bytes,
    load_matrix,
    matrix_from_bytes,
    matrix_from_csv,
    matrix_to_bytes,
    matrix_to_csv,
    save_matrix,
)

from conftest import random_collection


def test_binary_layout():
    data = matrix_to_bytes(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert data[:4] == b"L1NS"
    assert struct.unpack("<IQQ", data[4:24]) == (1, 2, 3)
    assert struct.unpack("<6d", data[24:]) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def test_binary_round_trip(rng):
    M = rng.standard_normal((5, 4))
    np.testing.assert_array_equal(matrix_from_bytes(matrix_to_bytes(M)), M)


def test_csv_round_trip_is_exact(rng):
    M = rng.standard_normal((3, 7)) * 1e-7
    text = matrix_to_csv(M)
    assert text.count("\n") == 3 and "," in text
    np.testing.assert_array_equal(matrix_from_csv(text), M)


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_save_load_detects_format(tmp_path, rng, suffix):
    M = rng.standard_normal((4, 2))
    path = tmp_path / f"m{suffix}"
    save_matrix(path, M)
    np.testing.assert_array_equal(load_matrix(path), M)
    assert [p.name for p in tmp_path.iterdir()] == [path.name]


def test_bad_inputs():
    with pytest.raises(FormatError, match="magic"):
        matrix_from_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError, match="truncated"):
        matrix_from_bytes(matrix_to_bytes(np.ones((2, 2)))[:-3])
    with pytest.raises(FormatError, match="ragged"):
        matrix_from_csv("1,2\n3\n")
    with pytest.raises(FormatError, match="non-finite"):
        matrix_from_csv("1,inf\n")


def test_collection_round_trip(rng):
    col = random_collection(rng, 3, 8, 2)
    back = collection_from_bytes(collection_to_bytes(col))
    np.testing.assert_array_equal(back.stacked(), col.stacked())
