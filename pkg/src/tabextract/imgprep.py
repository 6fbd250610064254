"""Raster cleanup of a detected table region before OCR.

Gray images are ``(height, width)`` uint8 arrays, 0 = black ink, 255 = paper.
Binary images use the same encoding with values in {0, 255}; ink is the
foreground for every morphological operator. Line masks use 255 for covered
pixels and 0 elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple

import numpy as np

from .core import BBox

INK, PAPER = 0, 255
LINE_LENGTH = 50
DEFAULT_PAD = 10


@dataclass(frozen=True)
class StructuringElement:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("structuring element needs rows >= 1 and cols >= 1")


def _check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("gray image must be a non-empty 2-D array")
    if img.dtype != np.uint8:
        raise ValueError("gray image must be uint8")
    return img


def crop_pad(img: np.ndarray, roi: BBox, pad: int = DEFAULT_PAD) -> np.ndarray:
    img = _check_gray(img)
    h, w = img.shape
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if roi.right > w or roi.bottom > h:
        raise ValueError(f"roi {roi} out of bounds for {w}x{h} image")
    out = np.full((roi.height + 2 * pad, roi.width + 2 * pad), PAPER, dtype=np.uint8)
    out[pad:pad + roi.height, pad:pad + roi.width] = img[roi.top:roi.bottom, roi.left:roi.right]
    return out


def otsu_threshold(img: np.ndarray) -> Tuple[int, np.ndarray]:
    """Histogram cut maximising between-class variance.

    Scores are compared as exact rationals, ``(s0*n1 - s1*n0)^2 / (n0*n1)``,
    which is the between-class variance up to the constant factor ``N^2``.
    Ties go to the smaller threshold.
    """
    img = _check_gray(img)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.int64)
    if np.count_nonzero(hist) < 2:
        raise ValueError("degenerate histogram")
    counts = np.cumsum(hist).tolist()
    sums = np.cumsum(hist * np.arange(256, dtype=np.int64)).tolist()
    n_total, s_total = counts[-1], sums[-1]
    best_t, best = None, None
    for t in range(256):
        n0, s0 = counts[t], sums[t]
        n1, s1 = n_total - n0, s_total - s0
        if n0 == 0 or n1 == 0:
            continue
        score = Fraction((s0 * n1 - s1 * n0) ** 2, n0 * n1)
        if best is None or score > best:
            best_t, best = t, score
    binary = np.where(img <= best_t, INK, PAPER).astype(np.uint8)
    return best_t, binary


def rotate_quarter(img: np.ndarray, angle: int) -> np.ndarray:
    """Undo a detected page orientation.

    0 and 180 leave the image alone: a detected 180 is treated as a detector
    error. 90 rotates counter-clockwise and 270 clockwise; both are lossless.
    """
    img = _check_gray(img)
    if angle in (0, 180):
        return img.copy()
    if angle == 90:
        return np.ascontiguousarray(np.rot90(img, 1))
    if angle == 270:
        return np.ascontiguousarray(np.rot90(img, -1))
    raise ValueError(f"angle must be one of 0, 90, 180, 270; got {angle}")


def _window_count(fg: np.ndarray, k: int, offset: int, axis: int) -> np.ndarray:
    """Per pixel, count foreground in ``[x + offset, x + offset + k)`` along ``axis``.

    Cells outside the image count as background.
    """
    a = fg if axis == 1 else np.ascontiguousarray(fg.T)
    n = a.shape[1]
    before = max(0, -offset)
    after = max(0, offset + k - 1)
    cs = np.zeros((a.shape[0], before + n + after + 1), dtype=np.int32)
    np.cumsum(a, axis=1, dtype=np.int32, out=cs[:, before + 1:before + 1 + n])
    cs[:, before + 1 + n:] = cs[:, before + n:before + n + 1]
    s = offset + before
    out = cs[:, s + k:s + k + n] - cs[:, s:s + n]
    return out if axis == 1 else np.ascontiguousarray(out.T)


def _erode_fg(fg: np.ndarray, k: StructuringElement) -> np.ndarray:
    out = _window_count(fg, k.rows, -(k.rows // 2), 0) == k.rows
    return _window_count(out, k.cols, -(k.cols // 2), 1) == k.cols


def _dilate_fg(fg: np.ndarray, k: StructuringElement) -> np.ndarray:
    # reflected element, so that dilate(erode(x)) is a true opening for even sizes too
    out = _window_count(fg, k.rows, k.rows // 2 - k.rows + 1, 0) > 0
    return _window_count(out, k.cols, k.cols // 2 - k.cols + 1, 1) > 0


def _to_fg(img: np.ndarray) -> np.ndarray:
    img = _check_gray(img)
    if not np.isin(img, (INK, PAPER)).all():
        raise ValueError("morphology expects a binary image with values in {0, 255}")
    return img == INK


def _from_fg(fg: np.ndarray) -> np.ndarray:
    return np.where(fg, INK, PAPER).astype(np.uint8)


def morph_erode(img: np.ndarray, k: StructuringElement) -> np.ndarray:
    return _from_fg(_erode_fg(_to_fg(img), k))


def morph_dilate(img: np.ndarray, k: StructuringElement) -> np.ndarray:
    return _from_fg(_dilate_fg(_to_fg(img), k))


def morph_open(img: np.ndarray, k: StructuringElement) -> np.ndarray:
    return _from_fg(_dilate_fg(_erode_fg(_to_fg(img), k), k))


def build_line_mask(img: np.ndarray, length: int = LINE_LENGTH) -> np.ndarray:
    """Mask (255 = covered) of long horizontal and vertical ink strokes."""
    fg = _to_fg(img)
    lines = np.zeros_like(fg)
    for i in (1, 2):
        lines |= _dilate_fg(_erode_fg(fg, StructuringElement(i, length)), StructuringElement(i, length))
        lines |= _dilate_fg(_erode_fg(fg, StructuringElement(length, i)), StructuringElement(length, i))
    grown = _dilate_fg(lines, StructuringElement(3, 3))
    # 3x3 box blur, then keep anything with at least one covered neighbour
    count = _window_count(_window_count(grown, 3, -1, 0), 3, -1, 1)
    blurred = count / 9.0
    return np.where(blurred >= 1.0 / 9.0, 255, 0).astype(np.uint8)


def remove_lines(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    img = _check_gray(img)
    mask = np.asarray(mask)
    if mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape}")
    return np.where(mask > 0, PAPER, img).astype(np.uint8)


def prepare_region(img: np.ndarray, roi: BBox, pad: int = DEFAULT_PAD, angle: int = 0,
                   line_removal: bool = True) -> np.ndarray:
    """Crop/pad, rotate, and strip ruling lines; returns the cleaned gray image."""
    region = rotate_quarter(crop_pad(img, roi, pad), angle)
    if not line_removal:
        return region
    try:
        _, binary = otsu_threshold(region)
    except ValueError:
        return region
    return remove_lines(region, build_line_mask(binary))
