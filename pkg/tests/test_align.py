import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabextract.align import (Cell, DisjointSet, TableGrid, align_table, assemble_grid, dsu_find, dsu_union,
                              eval_alignment, AlignmentResult, export, from_json, latex_escape,
                              merge_segments, to_csv, to_json, to_latex, unify_columns)
from tabextract.core import BBox, Interval, WordRecord, interval_iou

CHAR_W, GAP = 8, 8


def words_at(text, left=0, top=0):
    """Lay out the space-separated words of ``text`` from ``left``."""
    out, x = [], left
    for t in text.split():
        out.append(WordRecord(t, BBox(x, top, CHAR_W * len(t), 16)))
        x += CHAR_W * len(t) + GAP
    return out


def right_aligned(text, right, top=0):
    width = CHAR_W * len(text.replace(" ", "")) + GAP * (len(text.split()) - 1)
    return words_at(text, right - width, top)


def cell_rows(spec):
    """rows of (left, right) extents -> rows of Cell with sequential ids."""
    rows, k = [], 0
    for r, row in enumerate(spec):
        cells = []
        for lo, hi in row:
            cells.append(Cell(k, f"c{k}", BBox(lo, 20 * r, hi - lo, 16), r))
            k += 1
        rows.append(cells)
    return rows


def gold_probs(cells_per_row):
    """Label 1 on the last word of every cell."""
    probs = []
    for row in cells_per_row:
        for cell in row:
            probs += [0.0] * (len(cell) - 1) + [1.0]
    return probs


def test_merge_segments_examples():
    row = words_at("Less imputed interest (174,862.64)")
    cells = merge_segments([row], [0, 0, 1, 1])
    assert [c.text for c in cells[0]] == ["Less imputed interest", "(174,862.64)"]
    assert cells[0][0].box == BBox(0, 0, row[2].box.right, 16)
    assert len(merge_segments([row], [1, 1, 1, 1])[0]) == 4
    two = [row, words_at("Net cash", top=20)]
    merged = merge_segments(two, [0] * 6)
    assert [len(r) for r in merged] == [1, 1]
    assert [c.id for r in merged for c in r] == [0, 1]
    with pytest.raises(ValueError):
        merge_segments([row], [1, 1])


def test_cutoff_is_inclusive():
    row = words_at("a b")
    assert len(merge_segments([row], [0.5, 0.0])[0]) == 2
    assert len(merge_segments([row], [0.4999, 0.0])[0]) == 1


def test_dsu_basics():
    s = DisjointSet([Interval(i, i + 1) for i in range(5)])
    assert [dsu_find(s, i) for i in range(5)] == list(range(5))
    dsu_union(s, 1, 2)
    dsu_union(s, 2, 3)
    assert dsu_find(s, 1) == dsu_find(s, 3)
    assert s.interval(3) == Interval(1, 4)
    assert dsu_union(s, 4, 0) == 0  # equal rank, lower id wins
    with pytest.raises(IndexError):
        dsu_find(s, 5)


def quick_find_partition(n, script):
    label = list(range(n))
    for a, b in script:
        la, lb = label[a], label[b]
        if la != lb:
            label = [la if x == lb else x for x in label]
    return label


def canonical(labels):
    first = {}
    return [first.setdefault(x, len(first)) for x in labels]


def test_dsu_matches_quick_find_oracle():
    rng = random.Random(1234)
    for _ in range(200):
        n = rng.randint(1, 60)
        script = [(rng.randrange(n), rng.randrange(n)) for _ in range(rng.randint(0, 80))]
        s = DisjointSet([Interval(i, i + 1) for i in range(n)])
        for a, b in script:
            s.union(a, b)
        assert canonical([s.find(i) for i in range(n)]) == canonical(quick_find_partition(n, script))
        for root in s.roots():
            members = [i for i in range(n) if s.find(i) == root]
            assert s.interval(root) == Interval(min(members), max(members) + 1)


def test_dsu_large_script():
    rng = random.Random(99)
    n = 10_000
    script = [(rng.randrange(n), rng.randrange(n)) for _ in range(10_000)]
    s = DisjointSet([Interval(i, i + 1) for i in range(n)])
    for a, b in script:
        s.union(a, b)
    assert canonical([s.find(i) for i in range(n)]) == canonical(quick_find_partition(n, script))


def test_stacked_columns():
    rows = cell_rows([[(0, 40), (60, 100), (120, 160)]] * 3)
    dsu = unify_columns(rows)
    grid = assemble_grid(rows, dsu)
    assert (grid.n_rows, grid.n_cols, grid.collisions) == (3, 3, 0)
    assert len(dsu.roots()) == 3


def test_staircase_gives_one_column_per_cell():
    spec = [[(100 * r, 100 * r + 40)] for r in range(6)]
    rows = cell_rows(spec)
    cells = [c for r in rows for c in r]
    assert all(interval_iou(a.box.h_interval(), b.box.h_interval()) < 0.25
               for a in cells for b in cells if a.id != b.id)
    grid = assemble_grid(rows, unify_columns(rows))
    assert grid.n_cols == 6 and grid.non_empty() == 6


def test_cell_below_trigger_starts_new_column():
    rows = cell_rows([[(0, 100)], [(80, 180)]])  # IOU 20/180
    assert assemble_grid(rows, unify_columns(rows)).n_cols == 2


@pytest.mark.parametrize("header_row", [1, 3])
def test_spanning_header_lands_on_argmax_iou(header_row):
    body = [(0, 40), (60, 100)]
    spec = [list(body) for _ in range(3)]
    spec.insert(header_row, [(10, 100)])
    rows = cell_rows(spec)
    dsu = unify_columns(rows)
    grid = assemble_grid(rows, dsu)
    header = rows[header_row][0]
    above = [c for r in rows[:header_row] for c in r]
    scores = {}
    for c in above:
        root = dsu.find(c.id)
        members = [m for m in above if dsu.find(m.id) == root]
        hull = Interval(min(m.box.left for m in members), max(m.box.right for m in members))
        scores[root] = interval_iou(header.box.h_interval(), hull)
    best = max(scores, key=scores.get)
    assert dsu.find(header.id) == dsu.find(best)
    assert grid.n_cols == 2
    assert grid.cells[header_row] == ["", header.text]


layouts = st.lists(st.lists(st.tuples(st.integers(0, 300), st.integers(5, 80)), min_size=1, max_size=4),
                   min_size=1, max_size=6)


@settings(max_examples=100)
@given(layouts, st.integers(1, 500))
def test_translation_invariance_and_placement(layout, shift):
    spec = [[(lo, lo + w) for lo, w in row] for row in layout]
    rows = cell_rows(spec)
    moved = cell_rows([[(lo + shift, hi + shift) for lo, hi in row] for row in spec])
    a, b = unify_columns(rows), unify_columns(moved)
    n = sum(len(r) for r in rows)
    assert [a.find(i) for i in range(n)] == [b.find(i) for i in range(n)]
    grid = assemble_grid(rows, a)
    assert grid.n_cols == len(a.roots())
    placed = sum(len(t.split(" ")) for row in grid.cells for t in row if t)
    assert placed == n


FIG1 = [
    ("", "September 30,", "March 31,"),
    ("", "2019", "2019"),
    ("Current liabilities", "US$'000", "US$'000"),
    ("Trade payables", "7,857,686", "6,429,835"),
    ("Notes payable", "1,253,503", "1,272,840"),
    ("Derivative financial liabilities", "37,345", "74,426"),
    ("Other payables and accruals", "10,428,998", "8,942,336"),
    ("Provisions", "715,332", "738,688"),
    ("Deferred revenue", "770,229", "780,951"),
    ("Income tax payable", "328,442", "298,224"),
    ("Borrowings", "2,648,151", "1,953,043"),
    ("", "24,039,686", "20,490,343"),
]


def fig1_words():
    table, cells = [], []
    for r, (label, a, b) in enumerate(FIG1):
        row, row_cells = [], []
        for part in (words_at(label, 40, 24 * r) if label else [],
                     right_aligned(a, 480, 24 * r), right_aligned(b, 640, 24 * r)):
            if part:
                row += part
                row_cells.append(part)
        table.append(row)
        cells.append(row_cells)
    return table, cells


def test_fig1_table_shape():
    table, cells = fig1_words()
    grid = align_table(table, gold_probs(cells))
    assert (grid.n_rows, grid.n_cols, grid.collisions) == (12, 3, 0)
    assert grid.cells[3] == ["Trade payables", "7,857,686", "6,429,835"]
    assert grid.cells[0] == ["", "September 30,", "March 31,"]
    content = grid.cells[2:]
    assert len(content) == 10 and all(len(r) == 3 for r in content)
    assert grid.non_empty() == sum(1 for row in FIG1 for c in row if c)


def test_exports():
    one = TableGrid(1, 1, [["a"]], [[BBox(0, 0, 1, 1)]])
    assert to_csv(one) == "a\n"
    comma = TableGrid(1, 2, [["1,234", 'say "hi"']], [[None, None]])
    assert to_csv(comma) == '"1,234","say ""hi"""\n'
    tex = to_latex(TableGrid(2, 2, [["a & b", "50%"], ["", "$1"]], [[None] * 2] * 2))
    assert tex.splitlines() == ["\\begin{tabular}{ll}", "a \\& b & 50\\% \\\\", " & \\$1 \\\\", "\\end{tabular}"]
    assert latex_escape("x_1~^\\") == "x\\_1\\textasciitilde{}\\textasciicircum{}\\textbackslash{}"
    with pytest.raises(ValueError):
        export(one, "xlsx")


def test_json_round_trip_bit_exact():
    table, cells = fig1_words()
    grid = align_table(table[:2], gold_probs(cells[:2]))
    two = TableGrid(2, 2, [["a", "b"], ["", "d"]], [[BBox(0, 0, 1, 1), BBox(2, 0, 1, 1)], [None, BBox(2, 2, 3, 3)]],
                    [0, 1], 1)
    for g in (grid, two):
        text = to_json(g)
        back = from_json(text)
        assert back == g and to_json(back) == text
    with pytest.raises(ValueError):
        from_json('{"format_version": 7}')


def test_eval_alignment_examples():
    rep = eval_alignment([AlignmentResult(8, 10)])
    for q in (10, 25, 50, 75, 90):
        assert abs(rep[f"p{q}"] - 400 / 18) <= 1e-12
    exact = eval_alignment([AlignmentResult(5, 5), AlignmentResult(3, 3)])
    assert exact["p90"] == 0 and exact["perfect_pct"] == 100.0 and "mcc" not in exact
    labelled = eval_alignment([AlignmentResult(2, 2, np.array([1, 0]), np.array([1, 0]))])
    assert labelled["mcc"] == 1.0
    with pytest.raises(ValueError):
        eval_alignment([])
