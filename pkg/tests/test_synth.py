import numpy as np
import pytest

from tabextract import align, ingest, synth
from tabextract.core import box_iou
from tabextract.maskpost import mask_to_boxes


def test_same_seed_same_table():
    a = synth.gen_table(synth.SynthSpec(seed=42))
    b = synth.gen_table(synth.SynthSpec(seed=42))
    assert a.to_record() == b.to_record()
    assert synth.gen_table(synth.SynthSpec(seed=43)).to_record() != a.to_record()


def test_fixed_shape_cell_count():
    t = synth.gen_table(synth.SynthSpec(seed=3, rows=10, cols=3, header_prob=0.0, total_prob=0.0))
    assert t.true_cells == 30
    assert len(t.grid) == 10 and all(len(r) == 3 for r in t.grid)


def test_labels_mark_last_token_of_each_cell():
    for t in synth.gen_corpus(5, 40, "noisy"):
        for words, segs in zip(t.words, t.segments):
            assert sum(w.label for w in words) == len(segs)
            assert words[-1].label == 1
        assert t.true_cells == sum(1 for row in t.grid for c in row if c)


def test_clean_labels_are_a_dist_next_threshold():
    tables = synth.gen_corpus(7, 200, "clean")
    inside, between = [], []
    for t in tables:
        ft = ingest.featurize_table(t.words)
        for f, a, lab in zip(ft.spatial, ft.active, ft.labels):
            for k in range(len(lab) - 1):
                (between if lab[k] else inside).append(f[k, ingest.DIST_NEXT])
    assert max(inside) < min(between)


def test_gold_labels_rebuild_the_grid():
    for t in synth.gen_corpus(8, 100, "clean"):
        probs = [w.label for r in t.words for w in r]
        grid = align.align_table(t.words, probs)
        assert [row for row in grid.cells] == t.grid


def test_noisy_differs_from_clean():
    clean = synth.gen_corpus(9, 30, "clean")
    noisy = synth.gen_corpus(9, 30, "noisy")
    assert any(c.to_record() != n.to_record() for c, n in zip(clean, noisy))
    rate = synth.positive_rate(noisy)
    assert 0.2 < rate < 0.7


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.SynthSpec(rows=2)
    with pytest.raises(ValueError):
        synth.SynthSpec(cols=9)
    with pytest.raises(ValueError):
        synth.difficulty_spec("extreme")


def test_context_tables_differ_only_in_header():
    tables = synth.gen_context_corpus(1, 60)
    modes = set()
    for t in tables:
        body = t.words[1:]
        pitches = {b.box.left - a.box.left for row in body for a, b in zip(row, row[1:])}
        assert len(pitches) == 1
        per = len(t.words[1]) // len(t.words[0])
        modes.add(per)
        assert all(sum(w.label for w in row) == len(row) // per for row in body)
    assert modes == {1, 2}


def test_mask_pages():
    for seed in range(40):
        page = synth.gen_mask_page(seed)
        h, w = page.probs.shape
        assert ((page.probs >= 0) & (page.probs <= 1)).all()
        assert 1 <= len(page.boxes) <= 3
        assert all(box_iou(a, b) == 0 for i, a in enumerate(page.boxes) for b in page.boxes[i + 1:])
        assert all(s.area < 0.01 * h * w for s in page.speckles)
        lo, hi = page.optimum
        for t in (hi, (lo + hi) / 2 + 1e-3):
            assert sorted(mask_to_boxes(page.probs, t), key=lambda b: b.as_tuple()) == \
                sorted(page.boxes, key=lambda b: b.as_tuple())


def test_raster_rules_and_glyphs_disjoint():
    t = synth.gen_table(synth.SynthSpec(seed=2, rows=5, cols=3))
    r = synth.render_raster(t.words)
    assert not (r.rules & r.glyphs).any()
    assert r.rules.any() and r.glyphs.any()
    assert ((r.image == 0) == (r.rules | r.glyphs)).all()
    with pytest.raises(ValueError):
        synth.render_raster(t.words, thickness=3)
