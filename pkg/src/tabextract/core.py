"""Geometry and record types shared by every pipeline stage.

Pixel coordinates are half-open: a box covers columns ``[left, left + width)``
and rows ``[top, top + height)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class BBox:
    left: int
    top: int
    width: int
    height: int

    def __post_init__(self):
        if self.left < 0 or self.top < 0:
            raise ValueError(f"negative box origin: {self}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"box must have positive size: {self}")

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center_x(self) -> float:
        return self.left + self.width / 2.0

    def h_interval(self) -> "Interval":
        return Interval(self.left, self.right)

    def union(self, other: "BBox") -> "BBox":
        left = min(self.left, other.left)
        top = min(self.top, other.top)
        return BBox(left, top, max(self.right, other.right) - left,
                    max(self.bottom, other.bottom) - top)

    def contains(self, other: "BBox") -> bool:
        return (self.left <= other.left and self.top <= other.top
                and self.right >= other.right and self.bottom >= other.bottom)

    def as_tuple(self) -> tuple:
        return (self.left, self.top, self.width, self.height)

    @classmethod
    def from_edges(cls, left: int, top: int, right: int, bottom: int) -> "BBox":
        return cls(left, top, right - left, bottom - top)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval lo > hi: {self}")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))


@dataclass(frozen=True)
class WordRecord:
    """One OCR token with its layout identifiers.

    ``tag`` optionally carries a precomputed combined part-of-speech tag; when
    absent the featurizer asks its tagger. ``label`` is the gold segment label
    (1 = last token of a cell) when the record comes from an annotated corpus.
    """
    text: str
    box: BBox
    conf: float = 100.0
    page: int = 1
    block: int = 0
    par: int = 0
    line: int = 0
    word: int = 0
    tag: Optional[str] = None
    label: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.conf <= 100.0:
            raise ValueError(f"confidence out of [0, 100]: {self.conf}")
        if min(self.page, self.block, self.par, self.line, self.word) < 0:
            raise ValueError("layout ids must be non-negative")


def interval_iou(a: Interval, b: Interval) -> float:
    inter = max(0.0, min(a.hi, b.hi) - max(a.lo, b.lo))
    union = a.length + b.length - inter
    if union <= 0:
        return 0.0
    return inter / union


def box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    inter = iw * ih if iw > 0 and ih > 0 else 0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0
