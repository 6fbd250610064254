"""Turn table-probability masks into table boxes, and build 3-class labels.

A probability mask is a ``(height, width)`` float array with values in
``[0, 1]``. Class grids use ``OTHER=0``, ``TABLE=1``, ``SEPARATOR=2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import BBox, box_iou

OTHER, TABLE, SEPARATOR = 0, 1, 2

DEFAULT_THRESHOLD = 0.7
DEFAULT_MIN_FRAC = 0.01
DEFAULT_BAND = 5
DEFAULT_T_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class RegionMask:
    label: int
    values: np.ndarray  # bool, full page size

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def pixel_count(self) -> int:
        return int(self.values.sum())


def validate_prob_mask(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("probability mask must be 2-D")
    if m.size and (m.min() < 0.0 or m.max() > 1.0 or not np.isfinite(m).all()):
        raise ValueError("probabilities must lie in [0, 1]")
    return m


def threshold_mask(m: np.ndarray, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {t}")
    return validate_prob_mask(m) >= t


def connected_regions(mask: np.ndarray) -> List[RegionMask]:
    """Maximal 8-connected components, ordered by their first pixel in raster order."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    # ndimage numbers components in raster order of first encounter
    return [RegionMask(k, labels == k) for k in range(1, n + 1)]


def filter_small_regions(regions: Sequence[RegionMask], page_area: int,
                         min_frac: float = DEFAULT_MIN_FRAC) -> List[RegionMask]:
    if page_area <= 0:
        raise ValueError("page_area must be positive")
    cutoff = min_frac * page_area
    return [r for r in regions if r.pixel_count >= cutoff]


def rectanglize(region: RegionMask) -> BBox:
    rows = np.flatnonzero(region.values.any(axis=1))
    if rows.size == 0:
        raise ValueError("empty region")
    cols = np.flatnonzero(region.values.any(axis=0))
    return BBox.from_edges(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def mask_to_boxes(m: np.ndarray, t: float = DEFAULT_THRESHOLD,
                  min_frac: float = DEFAULT_MIN_FRAC) -> List[BBox]:
    m = validate_prob_mask(m)
    regions = connected_regions(threshold_mask(m, t))
    return [rectanglize(r) for r in filter_small_regions(regions, m.size, min_frac)]


def generate_separator_labels(boxes: Sequence[BBox], width: int, height: int,
                              band: int = DEFAULT_BAND) -> np.ndarray:
    """Label table pixels, plus separator pixels claimed by two or more dilated boxes."""
    if band <= 0:
        raise ValueError("band must be positive")
    grid = np.zeros((height, width), dtype=np.uint8)
    claims = np.zeros((height, width), dtype=np.int32)
    for b in boxes:
        if b.right > width or b.bottom > height:
            raise ValueError(f"box {b} outside {width}x{height} grid")
        claims[max(0, b.top - band): b.bottom + band, max(0, b.left - band): b.right + band] += 1
        grid[b.top:b.bottom, b.left:b.right] = TABLE
    grid[(claims >= 2) & (grid != TABLE)] = SEPARATOR
    return grid


def greedy_match(pred: Sequence[BBox], truth: Sequence[BBox],
                 min_iou: float = 0.0) -> List[Tuple[int, int, float]]:
    """One-to-one matching by descending IOU; pairs need IOU >= min_iou (and > 0)."""
    pairs = []
    for i, p in enumerate(pred):
        for j, g in enumerate(truth):
            v = box_iou(p, g)
            if v > 0 and v >= min_iou:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_t, out = set(), set(), []
    for neg, i, j in pairs:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        out.append((i, j, -neg))
    return out


def page_iou(pred: Sequence[BBox], truth: Sequence[BBox]) -> float:
    """Mean IOU over matched pairs, counting unmatched boxes on either side as 0."""
    matches = greedy_match(pred, truth)
    denom = len(truth) + len(pred) - len(matches)
    if denom == 0:
        return 1.0
    return sum(v for _, _, v in matches) / denom


def tune_threshold(masks: Sequence[np.ndarray], truth: Sequence[Sequence[BBox]],
                   grid: Sequence[float] = DEFAULT_T_GRID,
                   min_frac: float = DEFAULT_MIN_FRAC) -> Tuple[float, float]:
    if len(masks) == 0:
        raise ValueError("empty validation set")
    if len(masks) != len(truth):
        raise ValueError("masks and truth lists differ in length")
    best_t, best_iou = None, -1.0
    for t in grid:
        score = float(np.mean([page_iou(mask_to_boxes(m, t, min_frac), gt)
                               for m, gt in zip(masks, truth)]))
        if score > best_iou or (score == best_iou and t > best_t):
            best_t, best_iou = t, score
    return best_t, best_iou


class DetectionScore(NamedTuple):
    recall: float
    precision: float
    recall_defined: bool
    precision_defined: bool


def detection_pr(pred: Sequence[BBox], truth: Sequence[BBox],
                 match_iou: float = 0.5) -> DetectionScore:
    hits = len(greedy_match(pred, truth, match_iou))
    recall = hits / len(truth) if truth else 0.0
    precision = hits / len(pred) if pred else 0.0
    return DetectionScore(recall, precision, bool(truth), bool(pred))


def pooled_detection_pr(preds: Sequence[Sequence[BBox]], truths: Sequence[Sequence[BBox]],
                        match_iou: float = 0.5) -> DetectionScore:
    """Table-level recall/precision pooled over many pages."""
    hits = n_pred = n_true = 0
    for p, g in zip(preds, truths):
        hits += len(greedy_match(p, g, match_iou))
        n_pred += len(p)
        n_true += len(g)
    return DetectionScore(hits / n_true if n_true else 0.0, hits / n_pred if n_pred else 0.0,
                          n_true > 0, n_pred > 0)
