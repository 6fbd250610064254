"""Turn per-token segment predictions into a grid of cells and export it.

Tokens are merged into cells wherever the model says a segment continues.
Cells are then grouped into columns with a union-find whose roots carry the
horizontal extent of their members; a cell joins the root it overlaps most
(by interval IOU) as long as that overlap clears a trigger.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import BBox, Interval, WordRecord, interval_iou
from .metrics import confusion, mcc_from_counts, quantile_report, smape

DEFAULT_CUTOFF = 0.5
DEFAULT_IOU_TRIGGER = 0.25
GRID_FORMAT_VERSION = 1
EXPORT_FORMATS = ("csv", "latex", "json")


@dataclass(frozen=True)
class Cell:
    id: int
    text: str
    box: BBox
    row_index: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("cell text must be non-empty")


def merge_segments(table: Sequence[Sequence[WordRecord]], probs, cutoff: float = DEFAULT_CUTOFF) -> List[List[Cell]]:
    """Group tokens into cells; a token scoring ``>= cutoff`` closes its cell.

    ``probs`` is flat in row-major token order. The last token of a row always
    closes whatever cell is open.
    """
    flat = np.asarray(probs, dtype=np.float64).ravel()
    n = sum(len(r) for r in table)
    if flat.size != n:
        raise ValueError(f"{flat.size} probabilities for {n} tokens")
    rows: List[List[Cell]] = []
    pos = 0
    next_id = 0
    for r, row in enumerate(table):
        cells: List[Cell] = []
        open_words: List[WordRecord] = []
        for k, w in enumerate(row):
            open_words.append(w)
            if flat[pos] >= cutoff or k == len(row) - 1:
                box = open_words[0].box
                for o in open_words[1:]:
                    box = box.union(o.box)
                cells.append(Cell(next_id, " ".join(o.text for o in open_words), box, r))
                next_id += 1
                open_words = []
            pos += 1
        rows.append(cells)
    return rows


class DisjointSet:
    """Union-find with path compression, union by rank and per-root hulls."""

    def __init__(self, intervals: Sequence[Interval]):
        n = len(intervals)
        self.parent = list(range(n))
        self.rank = [0] * n
        self.hull: List[Interval] = list(intervals)

    def __len__(self) -> int:
        return len(self.parent)

    def _check(self, x: int) -> None:
        if not 0 <= x < len(self.parent):
            raise IndexError(f"element {x} out of range")

    def find(self, x: int) -> int:
        self._check(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb] or (self.rank[ra] == self.rank[rb] and rb < ra):
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.hull[ra] = self.hull[ra].hull(self.hull[rb])
        return ra

    def interval(self, x: int) -> Interval:
        return self.hull[self.find(x)]

    def roots(self) -> List[int]:
        return sorted({self.find(i) for i in range(len(self.parent))})


def dsu_find(s: DisjointSet, x: int) -> int:
    return s.find(x)


def dsu_union(s: DisjointSet, a: int, b: int) -> int:
    return s.union(a, b)


def _flatten(rows: Sequence[Sequence[Cell]]) -> List[Cell]:
    cells = [c for row in rows for c in row]
    if [c.id for c in cells] != list(range(len(cells))):
        raise ValueError("cell ids must be 0..n-1 in row-major order")
    return cells


def unify_columns(rows: Sequence[Sequence[Cell]], iou_trigger: float = DEFAULT_IOU_TRIGGER) -> DisjointSet:
    cells = _flatten(rows)
    dsu = DisjointSet([c.box.h_interval() for c in cells])
    roots: List[int] = []
    for row in rows:
        for c in row:
            mine = c.box.h_interval()
            best, best_key = None, None
            for r in roots:
                hull = dsu.hull[r]
                score = interval_iou(mine, hull)
                if score < iou_trigger:
                    continue
                key = (-score, hull.lo, r)
                if best_key is None or key < best_key:
                    best, best_key = r, key
            if best is None:
                roots.append(c.id)
            else:
                new = dsu.union(best, c.id)
                if new != best:
                    roots[roots.index(best)] = new
    return dsu


@dataclass
class TableGrid:
    n_rows: int
    n_cols: int
    cells: List[List[str]]
    boxes: List[List[Optional[BBox]]]
    column_roots: List[int] = field(default_factory=list)
    collisions: int = 0

    def non_empty(self) -> int:
        return sum(1 for row in self.cells for c in row if c)


def assemble_grid(rows: Sequence[Sequence[Cell]], dsu: DisjointSet) -> TableGrid:
    cells = _flatten(rows)
    if len(dsu) != len(cells):
        raise ValueError("disjoint set does not cover the cells")
    members: Dict[int, List[Cell]] = {}
    for c in cells:
        members.setdefault(dsu.find(c.id), []).append(c)
    order = sorted(members, key=lambda r: (sum(c.box.center_x for c in members[r]) / len(members[r]), r))
    col_of = {r: k for k, r in enumerate(order)}
    n_rows, n_cols = len(rows), len(order)
    placed: List[List[List[Cell]]] = [[[] for _ in range(n_cols)] for _ in range(n_rows)]
    for c in cells:
        placed[c.row_index][col_of[dsu.find(c.id)]].append(c)
    grid_text = [["" for _ in range(n_cols)] for _ in range(n_rows)]
    grid_box: List[List[Optional[BBox]]] = [[None] * n_cols for _ in range(n_rows)]
    collisions = 0
    for r in range(n_rows):
        for k in range(n_cols):
            group = sorted(placed[r][k], key=lambda c: (c.box.left, c.id))
            if not group:
                continue
            collisions += len(group) - 1
            grid_text[r][k] = " ".join(c.text for c in group)
            box = group[0].box
            for c in group[1:]:
                box = box.union(c.box)
            grid_box[r][k] = box
    return TableGrid(n_rows, n_cols, grid_text, grid_box, order, collisions)


def align_table(table: Sequence[Sequence[WordRecord]], probs, cutoff: float = DEFAULT_CUTOFF,
                iou_trigger: float = DEFAULT_IOU_TRIGGER) -> TableGrid:
    rows = merge_segments(table, probs, cutoff)
    return assemble_grid(rows, unify_columns(rows, iou_trigger))


# --------------------------------------------------------------------------
# export


def to_csv(grid: TableGrid) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(grid.cells)
    return buf.getvalue()


_LATEX_ESCAPES = {
    "\\": r"\textbackslash{}", "&": r"\&", "%": r"\%", "$": r"\$", "#": r"\#", "_": r"\_",
    "{": r"\{", "}": r"\}", "~": r"\textasciitilde{}", "^": r"\textasciicircum{}",
}


def latex_escape(text: str) -> str:
    return "".join(_LATEX_ESCAPES.get(ch, ch) for ch in text)


def to_latex(grid: TableGrid) -> str:
    lines = ["\\begin{tabular}{" + "l" * max(grid.n_cols, 1) + "}"]
    for row in grid.cells:
        lines.append(" & ".join(latex_escape(c) for c in row) + " \\\\")
    lines.append("\\end{tabular}")
    return "\n".join(lines) + "\n"


def to_json(grid: TableGrid) -> str:
    doc = {
        "format_version": GRID_FORMAT_VERSION,
        "n_rows": grid.n_rows,
        "n_cols": grid.n_cols,
        "cells": grid.cells,
        "boxes": [[None if b is None else list(b.as_tuple()) for b in row] for row in grid.boxes],
        "column_roots": grid.column_roots,
        "collisions": grid.collisions,
    }
    return json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n"


def from_json(text: str) -> TableGrid:
    doc = json.loads(text)
    if doc.get("format_version") != GRID_FORMAT_VERSION:
        raise ValueError(f"unsupported grid format_version {doc.get('format_version')!r}")
    boxes = [[None if b is None else BBox(*b) for b in row] for row in doc["boxes"]]
    return TableGrid(doc["n_rows"], doc["n_cols"], doc["cells"], boxes,
                     doc.get("column_roots", []), doc.get("collisions", 0))


def export(grid: TableGrid, fmt: str) -> str:
    if fmt == "csv":
        return to_csv(grid)
    if fmt == "latex":
        return to_latex(grid)
    if fmt == "json":
        return to_json(grid)
    raise ValueError(f"unknown export format {fmt!r}")


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class AlignmentResult:
    pred_cells: int
    true_cells: int
    pred_labels: Optional[np.ndarray] = None
    gold_labels: Optional[np.ndarray] = None


def eval_alignment(results: Sequence[AlignmentResult]) -> Dict[str, float]:
    """Cell-count SMAPE quantiles over tables, plus pooled token MCC if labelled."""
    if not results:
        raise ValueError("no tables to evaluate")
    scores = [smape(r.pred_cells, r.true_cells) for r in results]
    report = quantile_report(scores)
    report["tables"] = len(results)
    if all(r.pred_labels is not None and r.gold_labels is not None for r in results):
        tp = tn = fp = fn = 0
        for r in results:
            c = confusion(r.pred_labels, r.gold_labels)
            tp, tn, fp, fn = tp + c[0], tn + c[1], fp + c[2], fn + c[3]
        report["mcc"] = mcc_from_counts(tp, tn, fp, fn)
    return report
