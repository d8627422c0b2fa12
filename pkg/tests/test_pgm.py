"""Binary PGM round-trips and malformed-input handling."""

import numpy as np
import pytest

from bivex.pgm import PgmError, read_pgm, read_pgm_size, write_pgm


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(17, 33), dtype=np.uint8)
    path = tmp_path / "x.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.dtype == np.uint8
    assert np.array_equal(img, back)
    assert read_pgm_size(path) == (33, 17)


def test_header_comments_and_whitespace(tmp_path):
    img = np.arange(6, dtype=np.uint8).reshape(2, 3)
    path = tmp_path / "c.pgm"
    with open(path, "wb") as fh:
        fh.write(b"P5 # comment\n# another comment\n 3\t2 \n255\n" + img.tobytes())
    assert np.array_equal(read_pgm(path), img)


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n1 1\n255\nx")
    with pytest.raises(PgmError):
        read_pgm(path)


def test_truncated_raster(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\nabc")
    with pytest.raises(PgmError, match="truncated"):
        read_pgm(path)


def test_sixteen_bit_rejected(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(PgmError, match="maxval"):
        read_pgm(path)


def test_out_of_range_write_rejected(tmp_path):
    with pytest.raises(PgmError):
        write_pgm(tmp_path / "r.pgm", np.asarray([[300.0]]))
