import io

import numpy as np
import pytest

from tabextract.core import BBox
from tabextract.fileio import (FormatError, boxes_to_csv, bytes_to_class_grid, bytes_to_prob,
                               class_grid_to_bytes, prob_to_bytes, read_boxes_csv, read_pgm, write_pgm)


def test_pgm_round_trip(tmp_path):
    img = np.arange(35, dtype=np.uint8).reshape(5, 7)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_header_comments_and_maxval():
    raw = b"P5\n# made by hand\n2 1\n# another\n15\n\x00\x0f"
    assert read_pgm(io.BytesIO(raw)).tolist() == [[0, 255]]


@pytest.mark.parametrize("raw", [b"P2\n1 1\n255\n0", b"P5\n4 4\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00"])
def test_pgm_rejects_bad_files(raw):
    with pytest.raises(FormatError):
        read_pgm(io.BytesIO(raw))


def test_prob_bytes_round_trip_is_close():
    p = np.linspace(0, 1, 101).reshape(1, -1)
    assert np.abs(bytes_to_prob(prob_to_bytes(p)) - p).max() <= 0.5 / 255 + 1e-12


def test_class_grid_encoding():
    grid = np.array([[0, 1, 2]], dtype=np.uint8)
    enc = class_grid_to_bytes(grid)
    assert enc.tolist() == [[0, 255, 128]]
    assert np.array_equal(bytes_to_class_grid(enc), grid)
    with pytest.raises(FormatError):
        bytes_to_class_grid(np.array([[7]], dtype=np.uint8))


def test_boxes_csv_round_trip():
    rows = [(1, BBox(1, 2, 3, 4)), (2, BBox(0, 0, 10, 10))]
    text = boxes_to_csv(rows)
    assert text.splitlines()[0] == "page,left,top,width,height"
    assert read_boxes_csv(io.StringIO(text)) == rows


def test_boxes_csv_missing_columns():
    with pytest.raises(FormatError):
        read_boxes_csv(io.StringIO("page,left\n1,2\n"))
