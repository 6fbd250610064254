"""Binary PGM (P5) and box-list CSV readers/writers."""
from __future__ import annotations

import csv
import io
import re
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np

from .core import BBox

PathLike = Union[str, Path]

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


class FormatError(ValueError):
    pass


def read_pgm(source) -> np.ndarray:
    """Read an 8-bit binary PGM into a ``(height, width)`` uint8 array."""
    data = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError("not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    body = data[m.end():]
    if len(body) < width * height:
        raise FormatError("truncated PGM pixel data")
    img = np.frombuffer(body[: width * height], dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return img.copy()


def write_pgm(sink, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = img.shape
    payload = b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(payload)
    else:
        sink.write(payload)


def prob_to_bytes(mask: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(mask, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def bytes_to_prob(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


# ClassGrid pixel encoding: OTHER=0 -> 0, SEPARATOR=2 -> 128, TABLE=1 -> 255
_CLASS_TO_BYTE = np.array([0, 255, 128], dtype=np.uint8)


def class_grid_to_bytes(grid: np.ndarray) -> np.ndarray:
    return _CLASS_TO_BYTE[np.asarray(grid, dtype=np.int64)]


def bytes_to_class_grid(img: np.ndarray) -> np.ndarray:
    out = np.full(img.shape, 255, dtype=np.uint8)  # 255 marks unmapped bytes
    out[img == 0] = 0
    out[img == 255] = 1
    out[img == 128] = 2
    if (out == 255).any():
        raise FormatError("class grid contains values outside {0, 128, 255}")
    return out


def write_boxes_csv(sink, rows: Iterable[Tuple[int, BBox]]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["page", "left", "top", "width", "height"])
    for page, box in rows:
        writer.writerow([page, box.left, box.top, box.width, box.height])


def boxes_to_csv(rows: Iterable[Tuple[int, BBox]]) -> str:
    buf = io.StringIO()
    write_boxes_csv(buf, rows)
    return buf.getvalue()


def read_boxes_csv(source) -> List[Tuple[int, BBox]]:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_boxes_csv(fh)
    reader = csv.DictReader(source)
    needed = {"page", "left", "top", "width", "height"}
    if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
        raise FormatError("box CSV needs columns page,left,top,width,height")
    out = []
    for row in reader:
        out.append((int(row["page"]), BBox(int(row["left"]), int(row["top"]),
                                           int(row["width"]), int(row["height"]))))
    return out
