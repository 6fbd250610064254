"""Command-line entry point.

Exit codes: 0 on success, 1 for bad input or usage, 2 when an internal
invariant breaks (non-finite training values, failed consistency checks).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from . import align, fileio, imgprep, ingest, maskpost, synth
from .config import PipelineConfig, load_config
from .core import BBox
from .ingest import InputError
from .nn import ModelConfig, build_model, history_csv, load_weights, save_weights, train
from .nn.models import TRAINABLE, ModelError
from .nn.weights import WeightFileError

log = logging.getLogger("tabextract")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _map(fn: Callable, items: Sequence, jobs: int) -> List:
    """Ordered map, optionally over worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _chunks(items: Sequence, n: int) -> List[Sequence]:
    n = max(1, min(n, len(items)))
    size = -(-len(items) // n)
    return [items[i:i + size] for i in range(0, len(items), size)]


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="")


def _config(args, **flags) -> PipelineConfig:
    return load_config(args.config, flags)


def _load_model(path: Optional[str]):
    if path is None:
        return build_model(ModelConfig("UNSUP"))
    return load_weights(path)


# --------------------------------------------------------------------------
# detect-post


def _detect_one(job):
    path, threshold, min_area = job
    probs = fileio.bytes_to_prob(fileio.read_pgm(path))
    return maskpost.mask_to_boxes(probs, threshold, min_area)


def cmd_detect_post(args) -> int:
    cfg = _config(args, threshold=args.threshold, min_area=args.min_area)
    jobs = [(p, cfg.threshold, cfg.min_area) for p in args.mask]
    pages = _map(_detect_one, jobs, args.jobs)
    rows = [(k + 1, b) for k, boxes in enumerate(pages) for b in boxes]
    _emit(fileio.boxes_to_csv(rows), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# prep


def _parse_roi(text: str) -> BBox:
    try:
        left, top, width, height = (int(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"--roi expects left,top,width,height; got {text!r}") from None
    return BBox(left, top, width, height)


def _prep_one(job):
    image_path, roi, pad, angle, line_removal, out_path = job
    img = fileio.read_pgm(image_path)
    fileio.write_pgm(out_path, imgprep.prepare_region(img, roi, pad, angle, line_removal))
    return out_path


def cmd_prep(args) -> int:
    cfg = _config(args, pad=args.pad)
    if args.roi:
        rois = [(args.page, _parse_roi(r)) for r in args.roi]
    elif args.boxes:
        rois = [(p, b) for p, b in fileio.read_boxes_csv(args.boxes) if p == args.page]
    else:
        raise InputError("prep needs --roi or --boxes")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(args.image, roi, cfg.pad, args.angle, not args.keep_lines,
             str(out_dir / f"region_{page:03d}_{k:03d}.pgm")) for k, (page, roi) in enumerate(rois)]
    written = _map(_prep_one, jobs, args.jobs)
    _emit("".join(p + "\n" for p in written), None)
    return EXIT_OK


# --------------------------------------------------------------------------
# align


def _align_one(job):
    tsv_path, model_path, min_conf, cutoff, trigger, fmt = job
    words = ingest.filter_confidence(ingest.parse_tsv(tsv_path), min_conf)
    table = ingest.group_rows(words)
    if not table:
        raise InputError(f"{tsv_path}: no words left after the confidence filter")
    model = _load_model(model_path)
    probs = model.predict([ingest.featurize_table(table, model.vocab)])[0]
    grid = align.align_table(table, probs, cutoff, trigger)
    if grid.collisions:
        log.warning("%s: %d cell collisions", tsv_path, grid.collisions)
    return align.export(grid, fmt)


def cmd_align(args) -> int:
    cfg = _config(args, min_conf=args.min_conf, cutoff=args.cutoff, iou_trigger=args.iou_trigger)
    jobs = [(p, args.model, cfg.min_conf, cfg.cutoff, cfg.iou_trigger, args.out) for p in args.tsv]
    outputs = _map(_align_one, jobs, args.jobs)
    if len(outputs) == 1 and not args.out_dir:
        _emit(outputs[0], args.output)
        return EXIT_OK
    if not args.out_dir:
        raise InputError("several --tsv inputs need --out-dir")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = {"csv": "csv", "latex": "tex", "json": "json"}[args.out]
    for path, text in zip(args.tsv, outputs):
        _emit(text, str(out_dir / f"{Path(path).stem}.{ext}"))
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def _corpus_tables(path: str) -> List[List[list]]:
    tables = [ingest.record_to_table(r) for r in ingest.read_corpus(path)]
    if not tables:
        raise InputError(f"{path}: empty corpus")
    return tables


def cmd_train(args) -> int:
    cfg = _config(args, lr=args.lr, updates=args.updates, seed=args.seed, eval_every=args.eval_every)
    variant = args.variant.upper()
    if variant not in TRAINABLE:
        raise InputError(f"unknown trainable variant {args.variant!r}")
    train_tables = _corpus_tables(args.corpus)
    val_tables = _corpus_tables(args.val)
    vocab = None if variant == "FF_SPATIAL" else ingest.build_vocab(train_tables)
    try:
        train_feats = [ingest.featurize_table(t, vocab) for t in train_tables]
        val_feats = [ingest.featurize_table(t, vocab) for t in val_tables]
    except ValueError as e:
        raise InputError(str(e)) from e
    if any(f.labels is None for f in train_feats + val_feats):
        raise InputError("every corpus word needs a label for training")
    model = build_model(ModelConfig(variant), seed=cfg.seed, vocab=vocab)
    best, history = train(model, train_feats, val_feats, cfg.updates, cfg.lr, cfg.seed, cfg.eval_every)
    save_weights(best, args.weights_out or f"{variant.lower()}.wts")
    _emit(history_csv(history), args.history_out)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


EVAL_COLUMNS = ("method", "tables", "mcc", "p10", "p25", "p50", "p75", "p90", "max", "perfect_pct")


def _true_cells(rec: dict, table) -> int:
    if "grid" in rec:
        return sum(1 for row in rec["grid"] for c in row if c)
    if all(w.label is not None for r in table for w in r):
        return sum(int(w.label) for r in table for w in r)
    raise InputError("eval needs a grid or word labels in every record")


def _eval_chunk(job):
    model_path, records, cutoff, trigger = job
    model = _load_model(model_path)
    tables = [ingest.record_to_table(r) for r in records]
    feats = [ingest.featurize_table(t, model.vocab) for t in tables]
    probs = model.predict(feats)
    out = []
    for rec, table, f, p in zip(records, tables, feats, probs):
        grid = align.align_table(table, p, cutoff, trigger)
        gold = f.flat_labels() if f.labels is not None else None
        pred = (p >= cutoff).astype(int) if gold is not None else None
        out.append(align.AlignmentResult(grid.non_empty(), _true_cells(rec, table), pred, gold))
    return out


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def cmd_eval(args) -> int:
    cfg = _config(args, cutoff=args.cutoff, iou_trigger=args.iou_trigger)
    records = ingest.read_corpus(args.corpus)
    if not records:
        raise InputError(f"{args.corpus}: empty corpus")
    models = list(args.model or [])
    if args.unsup or not models:
        models = [None] + models
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for m in models:
        jobs = [(m, chunk, cfg.cutoff, cfg.iou_trigger) for chunk in _chunks(records, args.jobs)]
        results = [r for part in _map(_eval_chunk, jobs, args.jobs) for r in part]
        report = align.eval_alignment(results)
        name = "UNSUP" if m is None else Path(m).stem
        w.writerow([name] + [_fmt(report.get(k, "")) for k in EVAL_COLUMNS[1:]])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def _synth_chunk(job):
    kind, difficulty, seeds = job
    if kind == "context":
        return [synth.gen_context_table(int(s)).to_record() for s in seeds]
    base = synth.difficulty_spec(difficulty)
    return [synth.gen_table(replace(base, seed=int(s))).to_record() for s in seeds]


def _mask_chunk(job):
    out_dir, seeds, offset = job
    rows = []
    for k, s in enumerate(seeds):
        page = synth.gen_mask_page(int(s))
        fileio.write_pgm(str(Path(out_dir) / f"mask_{offset + k + 1:04d}.pgm"), fileio.prob_to_bytes(page.probs))
        rows += [(offset + k + 1, b) for b in page.boxes]
    return rows


def cmd_synth(args) -> int:
    cfg = _config(args, seed=args.seed)
    if args.tables:
        seeds = np.random.SeedSequence(cfg.seed).generate_state(args.tables, dtype=np.uint32).tolist()
        jobs = [(args.kind, args.difficulty, chunk) for chunk in _chunks(seeds, args.jobs)]
        records = [r for part in _map(_synth_chunk, jobs, args.jobs) for r in part]
        for i, r in enumerate(records):
            r["id"] = f"synth-{i:05d}"
        buf = io.StringIO()
        ingest.write_corpus(buf, records)
        _emit(buf.getvalue(), args.output)
    if args.masks:
        if not args.mask_dir:
            raise InputError("--masks needs --mask-dir")
        out_dir = Path(args.mask_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        seeds = np.random.SeedSequence([cfg.seed, 1]).generate_state(args.masks, dtype=np.uint32).tolist()
        chunks = _chunks(seeds, args.jobs)
        offsets = np.cumsum([0] + [len(c) for c in chunks[:-1]]).tolist()
        rows = [r for part in _map(_mask_chunk, [(str(out_dir), c, o) for c, o in zip(chunks, offsets)], args.jobs)
                for r in part]
        _emit(fileio.boxes_to_csv(rows), str(out_dir / "boxes.csv"))
    if not args.tables and not args.masks:
        raise InputError("synth needs --tables and/or --masks")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tabextract", description="Table extraction pipeline tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value file; explicit flags win")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (output order is fixed)")
        sp.add_argument("--output", "-o", help="write here instead of stdout")

    sp = sub.add_parser("detect-post", help="segmentation masks to table boxes")
    common(sp)
    sp.add_argument("--mask", action="append", required=True, help="8-bit PGM probability mask (repeatable)")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--min-area", type=float, dest="min_area")
    sp.set_defaults(func=cmd_detect_post)

    sp = sub.add_parser("prep", help="crop, rotate and strip ruling lines from table regions")
    common(sp)
    sp.add_argument("--image", required=True, help="8-bit PGM page image")
    sp.add_argument("--boxes", help="box CSV from detect-post")
    sp.add_argument("--roi", action="append", help="left,top,width,height (repeatable)")
    sp.add_argument("--page", type=int, default=1)
    sp.add_argument("--pad", type=int)
    sp.add_argument("--angle", type=int, default=0, choices=(0, 90, 180, 270))
    sp.add_argument("--keep-lines", action="store_true", help="skip line removal")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_prep)

    sp = sub.add_parser("align", help="OCR words to a table grid")
    common(sp)
    sp.add_argument("--tsv", action="append", required=True, help="OCR TSV (repeatable)")
    sp.add_argument("--model", help="weight file; omitted means every word is its own cell")
    sp.add_argument("--out", choices=align.EXPORT_FORMATS, default="csv")
    sp.add_argument("--out-dir", help="directory for per-input outputs")
    sp.add_argument("--min-conf", type=float, dest="min_conf")
    sp.add_argument("--cutoff", type=float)
    sp.add_argument("--iou-trigger", type=float, dest="iou_trigger")
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("train", help="train a segmentation model")
    common(sp)
    sp.add_argument("--variant", required=True, type=str.upper, choices=TRAINABLE)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--updates", type=int)
    sp.add_argument("--eval-every", type=int, dest="eval_every")
    sp.add_argument("--weights-out", help="default: <variant>.wts")
    sp.add_argument("--history-out", help="history CSV; default stdout")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="cell-count SMAPE and token MCC over a labelled corpus")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", action="append", help="weight file (repeatable)")
    sp.add_argument("--unsup", action="store_true", help="also report the unsupervised baseline")
    sp.add_argument("--cutoff", type=float)
    sp.add_argument("--iou-trigger", type=float, dest="iou_trigger")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="generate synthetic tables and masks")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tables", type=int, default=0)
    sp.add_argument("--difficulty", choices=("clean", "noisy"), default="clean")
    sp.add_argument("--kind", choices=("financial", "context"), default="financial")
    sp.add_argument("--masks", type=int, default=0)
    sp.add_argument("--mask-dir")
    sp.set_defaults(func=cmd_synth)
    return p


_INPUT_ERRORS = (InputError, fileio.FormatError, WeightFileError, ModelError, ValueError, OSError, KeyError)
_INVARIANT_ERRORS = (InvariantError, AssertionError, FloatingPointError, ArithmeticError)


def run(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except _INVARIANT_ERRORS as e:
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # anything unexpected is our bug, not the user's
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVARIANT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
