"""Synthetic financial tables with ground truth at every pipeline stage.

Layout is integer arithmetic on a fixed character grid: each character is
8 px wide, words are separated by one character, rows sit 24 px apart.
The label column is left aligned and every other column right aligned.
Column gaps scale with the table width so that, in clean tables, a word gap
is always under 3% of the row extent and a cell gap always over 6%.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, WordRecord
from .ingest import table_to_record

CHAR_W = 8
WORD_GAP = CHAR_W
ROW_PITCH = 24
WORD_H = 16
MIN_COL_GAP = 24
MARGIN = 40
INTRA_RATIO = 0.03
INTER_RATIO = 0.06
MIN_WIDTH_RATIO = 0.3

_LABEL_WORDS = (
    "trade", "payables", "notes", "payable", "derivative", "financial", "liabilities",
    "other", "and", "accruals", "provisions", "deferred", "revenue", "income", "tax",
    "borrowings", "cash", "equivalents", "receivables", "inventories", "prepaid",
    "expenses", "total", "current", "assets", "property", "plant", "equipment",
    "goodwill", "intangible", "lease", "interest", "less", "imputed", "net", "long-term",
    "debt", "accrued", "salaries", "dividends", "retained", "earnings", "capital",
    "reserves", "minority", "investments", "subsidiaries", "operating", "contract",
)
_HEADERS = (("2019",), ("2020",), ("US$'000",), ("RMB'000",), ("Note",), ("Restated",),
            ("Dec", "2019"), ("March", "31,", "2019"), ("June", "30,", "2020"), ("Sep", "30,", "2021"))
_CURRENCY = ("$", "US$", "HK$")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    rows: Optional[int] = None          # data rows, 3..30 when drawn
    cols: Optional[int] = None          # 2..8 when drawn
    numeric_align: str = "right"
    jitter: int = 0
    conf_noise: float = 0.0
    drop_prob: float = 0.0
    merged_gap_prob: float = 0.0
    currency_prob: float = 0.7
    label_words: Tuple[int, int] = (2, 7)
    header_prob: float = 0.5
    total_prob: float = 0.3
    page_width: int = 3200
    page_height: int = 1200

    def __post_init__(self):
        if self.rows is not None and not 3 <= self.rows <= 30:
            raise ValueError("rows must lie in 3..30")
        if self.cols is not None and not 2 <= self.cols <= 8:
            raise ValueError("cols must lie in 2..8")
        if self.numeric_align not in ("left", "right"):
            raise ValueError("numeric_align must be 'left' or 'right'")
        if self.jitter < 0 or not 0 <= self.drop_prob < 1 or not 0 <= self.merged_gap_prob <= 1:
            raise ValueError("noise knobs out of range")
        if not 0 <= self.conf_noise <= 100:
            raise ValueError("conf_noise must lie in [0, 100]")


CLEAN = SynthSpec()
NOISY = SynthSpec(jitter=2, conf_noise=40.0, drop_prob=0.05, merged_gap_prob=0.15)


def difficulty_spec(name: str, seed: int = 0) -> SynthSpec:
    if name == "clean":
        return replace(CLEAN, seed=seed)
    if name == "noisy":
        return replace(NOISY, seed=seed)
    raise ValueError(f"unknown difficulty {name!r}")


@dataclass
class SynthTable:
    words: List[List[WordRecord]]
    grid: List[List[str]]
    true_cells: int
    segments: List[List[List[str]]]   # per row, per cell, its tokens

    @property
    def n_tokens(self) -> int:
        return sum(len(r) for r in self.words)

    @property
    def labels(self) -> List[List[int]]:
        return [[int(w.label) for w in r] for r in self.words]

    def to_record(self, table_id=None) -> dict:
        return table_to_record(self.words, table_id=table_id, grid=self.grid)


# --------------------------------------------------------------------------
# cell content


def _format_number(rng: np.random.Generator, digits: int) -> str:
    value = int(rng.integers(10 ** (digits - 1), 10 ** digits)) if digits > 1 else int(rng.integers(1, 10))
    text = f"{value:,}"
    if rng.random() < 0.2:
        text = f"({text})"
    return text


def _label_tokens(rng: np.random.Generator, lo: int, hi: int) -> List[str]:
    k = int(rng.integers(lo, hi + 1))
    words = [str(_LABEL_WORDS[int(rng.integers(len(_LABEL_WORDS)))]) for _ in range(k)]
    words[0] = words[0].capitalize()
    return words


def _width(tokens: Sequence[str]) -> int:
    if not tokens:
        return 0
    return CHAR_W * sum(len(t) for t in tokens) + WORD_GAP * (len(tokens) - 1)


def _even_out(column: List[List[str]], regen, rng, tries: int = 50) -> None:
    """Redraw narrow cells until every cell is >= MIN_WIDTH_RATIO of the widest."""
    for _ in range(tries):
        widest = max(_width(c) for c in column if c)
        narrow = [i for i, c in enumerate(column) if c and _width(c) < MIN_WIDTH_RATIO * widest]
        if not narrow:
            return
        for i in narrow:
            column[i] = regen(rng)
    widest = max(_width(c) for c in column if c)
    for i, c in enumerate(column):
        while c and _width(c) < MIN_WIDTH_RATIO * widest:
            c.append(str(_LABEL_WORDS[int(rng.integers(len(_LABEL_WORDS)))]))


def _content(spec: SynthSpec, rng: np.random.Generator):
    n_data = spec.rows if spec.rows is not None else int(rng.integers(3, 31))
    n_cols = spec.cols if spec.cols is not None else int(rng.integers(2, 9))
    header = rng.random() < spec.header_prob
    total = rng.random() < spec.total_prob
    n_rows = n_data + int(header) + int(total)
    cells: List[List[List[str]]] = [[[] for _ in range(n_cols)] for _ in range(n_rows)]
    body = range(int(header), int(header) + n_data)

    lo, hi = spec.label_words
    label_col = [_label_tokens(rng, lo, hi) for _ in body]
    _even_out(label_col, lambda g: _label_tokens(g, lo, hi), rng)
    for r, c in zip(body, label_col):
        cells[r][0] = c
    if total:
        cells[-1][0] = []

    for k in range(1, n_cols):
        digits = int(rng.integers(3, 10))
        currency = str(_CURRENCY[int(rng.integers(len(_CURRENCY)))])

        def number_cell(g, digits=digits, currency=currency):
            text = _format_number(g, int(g.integers(max(3, digits - 2), digits + 1)))
            return [currency, text] if g.random() < spec.currency_prob else [text]

        col = [number_cell(rng) for _ in range(n_rows - int(header))]
        _even_out(col, number_cell, rng)
        if header:
            widest = max(_width(c) for c in col)
            narrowest = min(_width(c) for c in col)
            options = [list(h) for h in _HEADERS
                       if MIN_WIDTH_RATIO * widest <= _width(h) and narrowest >= MIN_WIDTH_RATIO * _width(h)]
            if not options:
                raise ValueError("no header fits this column")
            col = [options[int(rng.integers(len(options)))]] + col
        for r, c in enumerate(col):
            cells[r][k] = c
    return cells


# --------------------------------------------------------------------------
# layout


def _column_gap(widths: Sequence[int]) -> int:
    """Smallest gap meeting the intra/inter ratio constraints for these widths."""
    k = len(widths)
    content = sum(widths)
    if k == 1:
        return 0
    need_total = math.ceil(WORD_GAP / INTRA_RATIO)
    gap = max(MIN_COL_GAP, math.ceil((need_total - content) / (k - 1)))
    denom = 1.0 - INTER_RATIO * (k - 1)
    gap = max(gap, math.ceil(INTER_RATIO * content / denom))
    return gap


def _layout(spec: SynthSpec, cells: List[List[List[str]]], rng: np.random.Generator):
    n_rows, n_cols = len(cells), len(cells[0])
    widths = [max(_width(cells[r][k]) for r in range(n_rows)) for k in range(n_cols)]
    gap = _column_gap(widths)
    gaps = [gap] * (n_cols - 1)
    for k in range(1, n_cols - 1):
        # a tight pair of numeric columns; only token types can separate them
        if rng.random() < spec.merged_gap_prob:
            gaps[k] = WORD_GAP + int(rng.integers(0, 5))
    lefts = [MARGIN]
    for k in range(1, n_cols):
        lefts.append(lefts[-1] + widths[k - 1] + gaps[k - 1])
    right_edge = lefts[-1] + widths[-1] + MARGIN
    bottom = MARGIN + n_rows * ROW_PITCH + MARGIN
    if right_edge > spec.page_width or bottom > spec.page_height:
        raise ValueError(f"infeasible layout: table needs {right_edge}x{bottom} px, "
                         f"page is {spec.page_width}x{spec.page_height}")
    return widths, lefts


def gen_table(spec: SynthSpec) -> SynthTable:
    """One table; same spec (including seed) gives the same table."""
    rng = np.random.default_rng(spec.seed)
    cells = _content(spec, rng)
    widths, lefts = _layout(spec, cells, rng)
    n_cols = len(widths)
    words: List[List[WordRecord]] = []
    segments: List[List[List[str]]] = []
    grid: List[List[str]] = []
    for r, row in enumerate(cells):
        top = MARGIN + r * ROW_PITCH
        out: List[WordRecord] = []
        row_segments: List[List[str]] = []
        for k, tokens in enumerate(row):
            if not tokens:
                continue
            if spec.drop_prob and len(tokens) > 1:
                kept = [t for t in tokens if rng.random() >= spec.drop_prob]
                tokens = kept or tokens[-1:]
            w = _width(tokens)
            left_aligned = k == 0 or spec.numeric_align == "left"
            x = lefts[k] if left_aligned else lefts[k] + widths[k] - w
            for i, t in enumerate(tokens):
                dx = int(rng.integers(-spec.jitter, spec.jitter + 1)) if spec.jitter else 0
                dy = int(rng.integers(-spec.jitter, spec.jitter + 1)) if spec.jitter else 0
                conf = 100.0 if not spec.conf_noise else round(100.0 - spec.conf_noise * float(rng.random()), 1)
                out.append(WordRecord(t, BBox(max(0, x + dx), max(0, top + dy), CHAR_W * len(t), WORD_H),
                                      conf=conf, line=r, word=len(out), label=int(i == len(tokens) - 1)))
                x += CHAR_W * len(t) + WORD_GAP
            row_segments.append(tokens)
        if not out:
            continue
        # jitter can reorder neighbours; keep reading order by left edge
        order = sorted(range(len(out)), key=lambda i: (out[i].box.left, i))
        words.append([replace(out[i], word=j) for j, i in enumerate(order)])
        segments.append(row_segments)
        grid.append([" ".join(c) for c in _row_grid(row, row_segments, n_cols)])
    true_cells = sum(len(s) for s in segments)
    return SynthTable(words, grid, true_cells, segments)


def _row_grid(row: List[List[str]], kept: List[List[str]], n_cols: int) -> List[List[str]]:
    out: List[List[str]] = [[] for _ in range(n_cols)]
    it = iter(kept)
    for k, tokens in enumerate(row):
        if tokens:
            out[k] = next(it)
    return out


def gen_corpus(seed: int, n: int, difficulty: str = "clean", **overrides) -> List[SynthTable]:
    """``n`` tables whose seeds are spawned from ``seed``."""
    base = replace(difficulty_spec(difficulty), **overrides)
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [gen_table(replace(base, seed=int(s))) for s in seeds]


def positive_rate(tables: Sequence[SynthTable]) -> float:
    pos = sum(w.label for t in tables for r in t.words for w in r)
    return pos / max(1, sum(t.n_tokens for t in tables))


# --------------------------------------------------------------------------
# tables whose segmentation is only knowable from the first row


def gen_context_table(seed: int, rows: Tuple[int, int] = (3, 6), groups: Tuple[int, int] = (2, 4)) -> SynthTable:
    """Equally spaced identical tokens; the header says whether cells hold one or two.

    Body rows look the same in both modes, so a row-local model cannot beat
    chance on them while one that carries state down from the header can.
    """
    rng = np.random.default_rng(seed)
    paired = bool(rng.random() < 0.5)
    n_body = int(rng.integers(rows[0], rows[1] + 1))
    n_groups = int(rng.integers(groups[0], groups[1] + 1))
    per = 2 if paired else 1
    n_tok = n_groups * 2
    tok_w = 4 * CHAR_W
    pitch = tok_w + 3 * CHAR_W
    words, segments, grid = [], [], []
    head_tokens = ["Hdr"] * (n_tok // per)
    head_pitch = pitch * per
    row = []
    for i, t in enumerate(head_tokens):
        row.append(WordRecord(t, BBox(MARGIN + i * head_pitch, MARGIN, tok_w, WORD_H), line=0, word=i, label=1))
    words.append(row)
    segments.append([[t] for t in head_tokens])
    grid.append(list(head_tokens))
    for r in range(1, n_body + 1):
        row, segs = [], []
        for i in range(n_tok):
            text = f"{int(rng.integers(1000, 10000))}"
            end = (i % per) == per - 1
            row.append(WordRecord(text, BBox(MARGIN + i * pitch, MARGIN + r * ROW_PITCH, tok_w, WORD_H),
                                  line=r, word=i, label=int(end)))
            if i % per == 0:
                segs.append([])
            segs[-1].append(text)
        words.append(row)
        segments.append(segs)
        grid.append([" ".join(s) for s in segs])
    return SynthTable(words, grid, sum(len(s) for s in segments), segments)


def gen_context_corpus(seed: int, n: int) -> List[SynthTable]:
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [gen_context_table(int(s)) for s in seeds]


# --------------------------------------------------------------------------
# probability masks


MASK_INTERIOR = 0.9
MASK_RIM = 0.72
MASK_HALO = 0.62
MASK_BACKGROUND = 0.05
MASK_SPECKLE = 0.95
MASK_HOLE = 0.3
OPTIMUM = (MASK_HALO, MASK_RIM)   # cuts in (0.62, 0.72] recover every box, also after 8-bit quantization


@dataclass
class MaskPage:
    probs: np.ndarray
    boxes: List[BBox]
    speckles: List[BBox]
    optimum: Tuple[float, float] = OPTIMUM


def gen_mask_page(seed: int, width: int = 240, height: int = 180, max_tables: int = 3,
                  holes: bool = True, ragged: bool = True, speckles: int = 4,
                  adjacent_prob: float = 0.3) -> MaskPage:
    """A page of 1-3 table blobs with a known best threshold interval.

    Each box is a 0.9 interior with a 0.72 one-pixel rim. A 0.62 halo hugs the
    outside, so cuts at or below 0.62 grow the box and cuts above 0.72 shrink it.
    """
    rng = np.random.default_rng(seed)
    probs = np.full((height, width), MASK_BACKGROUND)
    boxes: List[BBox] = []
    occupied = np.zeros((height, width), dtype=bool)
    want = int(rng.integers(1, max_tables + 1))
    min_side = max(20, math.ceil(math.sqrt(0.02 * width * height)))
    for _ in range(200):
        if len(boxes) == want:
            break
        w = int(rng.integers(min_side, max(min_side + 1, width // 2)))
        h = int(rng.integers(min_side, max(min_side + 1, height // 2)))
        if boxes and rng.random() < adjacent_prob:
            # stack just below an existing box with a 3 px gap
            ref = boxes[int(rng.integers(len(boxes)))]
            left, top = ref.left, ref.bottom + 3
        else:
            left = int(rng.integers(3, width - w - 2)) if width - w - 2 > 3 else 3
            top = int(rng.integers(3, height - h - 2)) if height - h - 2 > 3 else 3
        if left + w + 3 > width or top + h + 3 > height:
            continue
        if occupied[max(0, top - 2):top + h + 2, max(0, left - 2):left + w + 2].any():
            continue
        box = BBox(left, top, w, h)
        boxes.append(box)
        occupied[top - 1:top + h + 1, left - 1:left + w + 1] = True
    for b in boxes:
        probs[b.top - 1:b.bottom + 1, b.left - 1:b.right + 1] = MASK_HALO
        probs[b.top:b.bottom, b.left:b.right] = MASK_RIM
        probs[b.top + 1:b.bottom - 1, b.left + 1:b.right - 1] = MASK_INTERIOR
        if holes:
            for _ in range(int(rng.integers(0, 4))):
                hh = int(rng.integers(1, max(2, b.height // 4)))
                hw = int(rng.integers(1, max(2, b.width // 4)))
                ht = int(rng.integers(b.top + 2, max(b.top + 3, b.bottom - 2 - hh)))
                hl = int(rng.integers(b.left + 2, max(b.left + 3, b.right - 2 - hw)))
                probs[ht:min(ht + hh, b.bottom - 2), hl:min(hl + hw, b.right - 2)] = MASK_HOLE
    if ragged:
        for b in boxes:
            for _ in range(int(rng.integers(0, 4))):
                # a short spur leaving the halo, only visible at low cuts
                x = int(rng.integers(b.left, b.right))
                if b.top - 4 < 0 or occupied[b.top - 4:b.top - 1, max(0, x - 1):x + 2].any():
                    continue
                probs[b.top - 3:b.top - 1, x] = MASK_HALO
                occupied[b.top - 3:b.top - 1, x] = True
    specks: List[BBox] = []
    limit = max(1, int(0.01 * width * height) - 1)
    for _ in range(speckles * 20):
        if len(specks) == speckles:
            break
        s = int(rng.integers(1, 4))
        if s * s > limit:
            continue
        x = int(rng.integers(0, width - s))
        y = int(rng.integers(0, height - s))
        if occupied[max(0, y - 4):y + s + 4, max(0, x - 4):x + s + 4].any():
            continue
        probs[y:y + s, x:x + s] = MASK_SPECKLE
        occupied[y:y + s, x:x + s] = True
        specks.append(BBox(x, y, s, s))
    return MaskPage(probs, boxes, specks)


# --------------------------------------------------------------------------
# raster rendering


GLYPH_W = 6
GLYPH_INSET = 2   # glyph rows are [top + inset, top + WORD_H - inset)


@dataclass
class Raster:
    image: np.ndarray
    rules: np.ndarray    # bool, rule pixels
    glyphs: np.ndarray   # bool, glyph pixels


def render_raster(words: Sequence[Sequence[WordRecord]], rules: bool = True, thickness: int = 1,
                  margin: int = 20) -> Raster:
    """Solid per-character blocks plus ruled lines between rows and columns."""
    if thickness not in (1, 2):
        raise ValueError("rule thickness must be 1 or 2")
    all_words = [w for row in words for w in row]
    if not all_words:
        raise ValueError("nothing to render")
    x0 = min(w.box.left for w in all_words)
    y0 = min(w.box.top for w in all_words)
    width = max(w.box.right for w in all_words) - x0 + 2 * margin
    height = max(w.box.bottom for w in all_words) - y0 + 2 * margin
    glyphs = np.zeros((height, width), dtype=bool)
    for w in all_words:
        top = w.box.top - y0 + margin + GLYPH_INSET
        bottom = w.box.top - y0 + margin + w.box.height - GLYPH_INSET
        for i, ch in enumerate(w.text):
            if ch.isspace():
                continue
            left = w.box.left - x0 + margin + i * CHAR_W
            glyphs[top:bottom, left:left + GLYPH_W] = True
    rule = np.zeros_like(glyphs)
    if rules:
        row_tops = sorted({w.box.top - y0 + margin for w in all_words})
        left, right = margin // 2, width - margin // 2
        ys = [t - 4 - thickness for t in row_tops[:1]]
        ys += [t + WORD_H + 4 for t in row_tops]
        for y in ys:
            if 0 <= y and y + thickness <= height:
                rule[y:y + thickness, left:right] = True
        top, bottom = ys[0], ys[-1] + thickness
        if bottom - top >= 50:
            for x in _column_rule_positions(words, x0 - margin, thickness):
                rule[top:bottom, x:x + thickness] = True
    ink = glyphs | rule
    image = np.where(ink, 0, 255).astype(np.uint8)
    return Raster(image, rule, glyphs & ~rule)


def _column_rule_positions(words, x_origin: int, thickness: int, clearance: int = 5) -> List[int]:
    """Vertical rules in gaps that are empty on every row, with room to spare."""
    spans = sorted((w.box.left - x_origin, w.box.right - x_origin) for row in words for w in row)
    out = []
    reach = spans[0][1]
    for lo, hi in spans[1:]:
        if lo - reach >= 2 * clearance + thickness + 16:
            out.append((reach + lo) // 2)
        reach = max(reach, hi)
    return out
