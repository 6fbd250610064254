"""OCR metadata ingestion: TSV parsing, row grouping, vocabulary, featurization."""
from __future__ import annotations

import csv
import io
import json
import logging
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .core import BBox, WordRecord

log = logging.getLogger(__name__)

TSV_COLUMNS = ("level", "page_num", "block_num", "par_num", "line_num", "word_num",
               "left", "top", "width", "height", "conf", "text")
WORD_LEVEL = 5
DEFAULT_MIN_CONF = 30.0
CORPUS_FORMAT_VERSION = 1

TOKEN_MIN_FREQ = 75
TAG_MIN_FREQ = 20
MAX_TAG_LEN = 7
MAX_VOCAB_ENTRIES = 881
UNK_ID = 0

# spatial feature slots
DIST_NEXT, DIST_PREV, START, END = range(4)

Tagger = Callable[[str], List[str]]
TableWords = List[List[WordRecord]]


class InputError(ValueError):
    pass


# --------------------------------------------------------------------------
# TSV


def parse_tsv(stream) -> List[WordRecord]:
    """Read word-level records from Tesseract-style TSV output.

    Non-word rows (level < 5, conf -1) are ignored; malformed rows are skipped
    and counted in a single warning.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, newline="", encoding="utf-8") as fh:
            return parse_tsv(fh)
    try:
        text = stream.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"unreadable TSV stream: {exc}") from exc
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise InputError("empty TSV input")
    header = lines[0].split("\t")
    missing = [c for c in TSV_COLUMNS if c not in header]
    if missing:
        raise InputError(f"TSV header lacks columns: {', '.join(missing)}")
    col = {name: header.index(name) for name in TSV_COLUMNS}

    words, skipped = [], 0
    for raw in lines[1:]:
        if not raw.strip():
            continue
        parts = raw.split("\t")
        try:
            level = int(parts[col["level"]])
            conf = float(parts[col["conf"]])
            if level < WORD_LEVEL or conf < 0:
                continue
            txt = parts[col["text"]].strip() if len(parts) > col["text"] else ""
            if not txt:
                continue
            box = BBox(int(parts[col["left"]]), int(parts[col["top"]]),
                       int(parts[col["width"]]), int(parts[col["height"]]))
            words.append(WordRecord(
                text=txt, box=box, conf=min(conf, 100.0),
                page=int(parts[col["page_num"]]), block=int(parts[col["block_num"]]),
                par=int(parts[col["par_num"]]), line=int(parts[col["line_num"]]),
                word=int(parts[col["word_num"]])))
        except (ValueError, IndexError):
            skipped += 1
    if skipped:
        log.warning("skipped %d malformed TSV rows", skipped)
    return words


def words_to_tsv(rows: TableWords) -> str:
    """Render grouped words back to Tesseract-compatible TSV (word level only)."""
    buf = io.StringIO()
    buf.write("\t".join(TSV_COLUMNS) + "\n")
    for w in (w for row in rows for w in row):
        b = w.box
        buf.write(f"{WORD_LEVEL}\t{w.page}\t{w.block}\t{w.par}\t{w.line}\t{w.word}\t"
                  f"{b.left}\t{b.top}\t{b.width}\t{b.height}\t{w.conf:g}\t{w.text}\n")
    return buf.getvalue()


def filter_confidence(words: Iterable[WordRecord], min_conf: float = DEFAULT_MIN_CONF) -> List[WordRecord]:
    return [w for w in words if w.conf >= min_conf]


def group_rows(words: Iterable[WordRecord]) -> TableWords:
    """Rows keyed by (page, block, par, line), ordered top-down; words left to right."""
    buckets: Dict[tuple, List[WordRecord]] = defaultdict(list)
    for w in words:
        buckets[(w.page, w.block, w.par, w.line)].append(w)
    rows = [sorted(ws, key=lambda w: (w.box.left, w.box.top, w.word)) for ws in buckets.values()]
    rows.sort(key=lambda r: (min(w.box.top for w in r), min(w.box.left for w in r)))
    return rows


# --------------------------------------------------------------------------
# tagging and vocabulary

_SYMBOLS = set("%#@&*/\\")


def char_class(ch: str) -> str:
    if ch.isdigit():
        return "NUM"
    if ch.isalpha():
        return "X"
    cat = unicodedata.category(ch)
    if cat.startswith("S") or ch in _SYMBOLS:
        return "SYM"
    return "PUNCT"


def default_tagger(text: str) -> List[str]:
    """One class per maximal run of letters, digits, punctuation or symbols.

    >>> default_tagger("(45%)")
    ['PUNCT', 'NUM', 'SYM', 'PUNCT']
    """
    pieces: List[str] = []
    for ch in text:
        if ch.isspace():
            continue
        c = char_class(ch)
        if not pieces or pieces[-1] != c:
            pieces.append(c)
    return pieces


def _word_tag(w: WordRecord, tagger: Tagger) -> List[str]:
    return w.tag.split("-") if w.tag else tagger(w.text)


@dataclass
class Vocab:
    tokens: Dict[str, int] = field(default_factory=dict)
    tags: Dict[str, int] = field(default_factory=dict)
    token_min_freq: int = TOKEN_MIN_FREQ
    tag_min_freq: int = TAG_MIN_FREQ
    max_tag_len: int = MAX_TAG_LEN

    @property
    def size(self) -> int:
        return 1 + len(self.tokens) + len(self.tags)

    def lookup(self, w: WordRecord, tagger: Tagger = default_tagger) -> int:
        if w.text in self.tokens:
            return self.tokens[w.text]
        pieces = _word_tag(w, tagger)
        if len(pieces) > self.max_tag_len:
            return UNK_ID
        return self.tags.get("-".join(pieces), UNK_ID)

    def dumps(self) -> str:
        lines = [f"# vocab token_min_freq={self.token_min_freq} tag_min_freq={self.tag_min_freq} "
                 f"max_tag_len={self.max_tag_len}", "[tokens]"]
        lines += [f"{t}\t{i}" for t, i in sorted(self.tokens.items(), key=lambda kv: kv[1])]
        lines.append("[tags]")
        lines += [f"{t}\t{i}" for t, i in sorted(self.tags.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        v = cls()
        section = None
        for line in text.split("\n"):
            if not line:
                continue
            if line.startswith("# vocab"):
                for kv in line.split()[2:]:
                    k, val = kv.split("=")
                    setattr(v, k, int(val))
            elif line in ("[tokens]", "[tags]"):
                section = v.tokens if line == "[tokens]" else v.tags
            elif section is None:
                raise InputError("vocab file: entry before section header")
            else:
                key, _, idx = line.rpartition("\t")
                section[key] = int(idx)
        ids = sorted(list(v.tokens.values()) + list(v.tags.values()))
        if ids != list(range(1, len(ids) + 1)):
            raise InputError("vocab file: ids must be dense from 1")
        return v

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Sequence[TableWords], tagger: Tagger = default_tagger,
                token_min_freq: int = TOKEN_MIN_FREQ, tag_min_freq: int = TAG_MIN_FREQ,
                max_tag_len: int = MAX_TAG_LEN, max_entries: int = MAX_VOCAB_ENTRIES) -> Vocab:
    """Two-stage fallback vocabulary: frequent tokens, else their combined tag, else UNK.

    Frequencies are corpus-wide and must exceed the thresholds. Ids are dense,
    ordered by frequency then lexicographically, tokens before tags; at most
    ``max_entries`` entries survive besides UNK.
    """
    words = [w for table in corpus for row in table for w in row]
    if not words:
        raise InputError("cannot build a vocabulary from an empty corpus")
    tok_freq = Counter(w.text for w in words)
    keep_tok = {t for t, c in tok_freq.items() if c > token_min_freq}
    tag_freq: Counter = Counter()
    for w in words:
        if w.text not in keep_tok:
            pieces = _word_tag(w, tagger)
            if len(pieces) <= max_tag_len:
                tag_freq["-".join(pieces)] += 1
    keep_tag = {t for t, c in tag_freq.items() if c > tag_min_freq}

    ranked = sorted([(-tok_freq[t], 0, t) for t in keep_tok] + [(-tag_freq[t], 1, t) for t in keep_tag])
    ranked = ranked[:max_entries]
    toks = sorted((r for r in ranked if r[1] == 0))
    tags = sorted((r for r in ranked if r[1] == 1))
    v = Vocab(token_min_freq=token_min_freq, tag_min_freq=tag_min_freq, max_tag_len=max_tag_len)
    next_id = 1
    for _, _, t in toks:
        v.tokens[t] = next_id
        next_id += 1
    for _, _, t in tags:
        v.tags[t] = next_id
        next_id += 1
    return v


# --------------------------------------------------------------------------
# featurization


@dataclass
class FeaturizedTable:
    """Per-row token ids, spatial features, activity flags and optional labels."""
    tag_ids: List[np.ndarray]
    spatial: List[np.ndarray]     # (n, 4) float
    active: List[np.ndarray]      # (n, 4) bool
    labels: Optional[List[np.ndarray]] = None

    @property
    def n_rows(self) -> int:
        return len(self.tag_ids)

    @property
    def n_tokens(self) -> int:
        return sum(len(r) for r in self.tag_ids)

    def flat_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("table has no labels")
        return np.concatenate(self.labels) if self.labels else np.zeros(0)


def row_extent(row: Sequence[WordRecord]) -> int:
    return max(w.box.right for w in row) - min(w.box.left for w in row)


def spatial_features(row: Sequence[WordRecord], norm_len: float):
    """Return ``(features, active)`` arrays of shape (n, 4).

    Columns are dist_next, dist_prev, start_of_row, end_of_row. Gaps from
    overlapping boxes clamp to 0 and normalized distances clamp to [0, 1].
    """
    if norm_len <= 0:
        raise ValueError("norm_len must be positive")
    n = len(row)
    feats = np.zeros((n, 4), dtype=np.float64)
    active = np.zeros((n, 4), dtype=bool)
    for i in range(n):
        if i + 1 < n:
            gap = max(0, row[i + 1].box.left - row[i].box.right)
            feats[i, DIST_NEXT] = min(1.0, gap / norm_len)
            active[i, DIST_NEXT] = True
        else:
            feats[i, END] = 1.0
            active[i, END] = True
        if i > 0:
            gap = max(0, row[i].box.left - row[i - 1].box.right)
            feats[i, DIST_PREV] = min(1.0, gap / norm_len)
            active[i, DIST_PREV] = True
        else:
            feats[i, START] = 1.0
            active[i, START] = True
    return feats, active


def featurize_table(table: TableWords, vocab: Optional[Vocab] = None,
                    tagger: Tagger = default_tagger,
                    labels: Optional[Sequence[Sequence[int]]] = None,
                    use_word_labels: bool = True) -> FeaturizedTable:
    """Token ids + spatial features for each row.

    Gold labels come from ``labels`` when given, else from the records' own
    ``label`` fields when every record carries one. Without a vocabulary all
    ids are UNK (enough for spatial-only and unsupervised models).
    """
    if labels is not None:
        if len(labels) != len(table) or any(len(l) != len(r) for l, r in zip(labels, table)):
            raise ValueError("label shape does not match table rows")
    elif use_word_labels and table and all(w.label is not None for r in table for w in r):
        labels = [[w.label for w in r] for r in table]
    norm_len = max((row_extent(r) for r in table if r), default=0) or 1
    ids, feats, acts = [], [], []
    for row in table:
        ids.append(np.array([vocab.lookup(w, tagger) if vocab else UNK_ID for w in row], dtype=np.int64))
        f, a = spatial_features(row, norm_len)
        feats.append(f)
        acts.append(a)
    lab = [np.asarray(l, dtype=np.int64) for l in labels] if labels is not None else None
    return FeaturizedTable(ids, feats, acts, lab)


# --------------------------------------------------------------------------
# corpus files (JSON lines, one table per line)


def table_to_record(table: TableWords, table_id=None, grid=None) -> dict:
    rows = []
    for row in table:
        out_row = []
        for w in row:
            item = {"text": w.text, "left": w.box.left, "top": w.box.top,
                    "width": w.box.width, "height": w.box.height}
            if w.tag is not None:
                item["tag"] = w.tag
            if w.label is not None:
                item["label"] = int(w.label)
            if w.conf != 100.0:
                item["conf"] = w.conf
            out_row.append(item)
        rows.append(out_row)
    rec = {"format_version": CORPUS_FORMAT_VERSION}
    if table_id is not None:
        rec["id"] = table_id
    rec["rows"] = rows
    if grid is not None:
        rec["grid"] = grid
    return rec


def record_to_table(rec: dict) -> TableWords:
    if rec.get("format_version") != CORPUS_FORMAT_VERSION:
        raise InputError(f"unsupported corpus format_version {rec.get('format_version')!r}")
    table = []
    for r, row in enumerate(rec["rows"]):
        out = []
        for k, item in enumerate(row):
            out.append(WordRecord(
                text=item["text"],
                box=BBox(item["left"], item["top"], item["width"], item["height"]),
                conf=float(item.get("conf", 100.0)), line=r, word=k,
                tag=item.get("tag"), label=item.get("label")))
        table.append(out)
    return table


def write_corpus(sink, records: Iterable[dict]) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            return write_corpus(fh, records)
    for rec in records:
        sink.write(json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n")


def read_corpus(source) -> List[dict]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_corpus(fh)
    out = []
    for n, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InputError(f"corpus line {n}: {exc}") from exc
    return out
