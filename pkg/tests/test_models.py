import io

import numpy as np
import pytest

from tabextract import ingest, synth
from tabextract.nn import (PARAM_TARGETS, TRAINABLE, VARIANTS, ModelConfig, ModelError, WeightFileError,
                           build_model, forward, load_weights, make_batch, save_weights)
from tabextract.nn.weights import dumps_weights, loads_weights

ROW_LOCAL = ("FF_SPATIAL", "FF_TOKEN", "FF_BOTH", "LSTM_ROW", "TR_ROW")


@pytest.fixture(scope="module")
def tables():
    corpus = synth.gen_corpus(11, 6, "clean", rows=4)
    vocab = ingest.build_vocab([t.words for t in corpus], token_min_freq=1, tag_min_freq=1)
    return vocab, [ingest.featurize_table(t.words, vocab) for t in corpus]


@pytest.mark.parametrize("variant", VARIANTS)
def test_parameter_counts(variant):
    assert build_model(ModelConfig(variant)).param_count == PARAM_TARGETS[variant]


def test_count_mismatch_is_an_error():
    with pytest.raises(ModelError):
        build_model(ModelConfig("LSTM_ROW", lstm_hidden=17))
    assert build_model(ModelConfig("LSTM_ROW", lstm_hidden=17, strict=False)).param_count != 27025


def test_bad_configs():
    with pytest.raises(ModelError):
        ModelConfig("CNN")
    with pytest.raises(ModelError):
        ModelConfig("TR_ROW", d_model=30)
    assert ModelConfig("lstm_local").variant == "LSTM_LOCAL"


def test_init_ranges():
    m = build_model(ModelConfig("TR_REC"), seed=3)
    for name, p in m.named_parameters():
        if name.endswith("gamma"):
            assert (p.data == 1).all()
        elif name.endswith("beta"):
            assert (p.data == 0).all()
        else:
            assert np.abs(p.data).max() <= 1.0


@pytest.mark.parametrize("variant", TRAINABLE)
def test_outputs_are_probabilities(variant, tables):
    vocab, ft = tables
    m = build_model(ModelConfig(variant), seed=1, vocab=vocab)
    for t, p in zip(ft, m.predict(ft, chunk=4)):
        assert p.shape == (t.n_tokens,)
        assert ((p > 0) & (p < 1)).all()


@pytest.mark.parametrize("variant", ["LSTM_LOCAL", "TR_GLOBAL", "FF_BOTH"])
def test_batching_does_not_change_predictions(variant, tables):
    vocab, ft = tables
    m = build_model(ModelConfig(variant), seed=2, vocab=vocab)
    together = m.predict(ft, chunk=64)
    for t, p in zip(ft, together):
        np.testing.assert_allclose(forward(m, t), p, rtol=0, atol=1e-12)


def test_unsup_marks_every_token():
    ft = ingest.featurize_table(synth.gen_table(synth.SynthSpec(seed=4)).words)
    p = forward(build_model(ModelConfig("UNSUP")), ft)
    assert (p == 1.0).all()


def perturb_first_row(ft):
    spatial = [s.copy() for s in ft.spatial]
    spatial[0] = np.clip(spatial[0] + 0.37, 0, 1) * ft.active[0]
    return ingest.FeaturizedTable(ft.tag_ids, spatial, ft.active, ft.labels)


def test_context_reaches_later_rows_only_when_designed(tables):
    _, ft = tables
    t = ft[0]
    n0 = len(t.tag_ids[0])
    changed = perturb_first_row(t)
    for variant, expect_context in [("LSTM_ROW", False), ("FF_BOTH", False), ("TR_ROW", False),
                                    ("LSTM_LOCAL", True), ("LSTM_SWAP", True), ("LSTM_GLOBAL", True),
                                    ("TR_GLOBAL", True), ("TR_REC", True)]:
        m = build_model(ModelConfig(variant), seed=5)
        a, b = forward(m, t)[n0:], forward(m, changed)[n0:]
        assert (np.abs(a - b).max() > 1e-9) == expect_context, variant


@pytest.mark.parametrize("variant", ROW_LOCAL)
def test_row_local_variants_are_row_permutation_equivariant(variant, tables):
    vocab, ft = tables
    t = ft[1]
    perm = np.random.default_rng(0).permutation(t.n_rows)
    shuffled = ingest.FeaturizedTable([t.tag_ids[i] for i in perm], [t.spatial[i] for i in perm],
                                      [t.active[i] for i in perm])
    m = build_model(ModelConfig(variant), seed=6, vocab=vocab)
    base = forward(m, t)
    bounds = np.cumsum([0] + [len(r) for r in t.tag_ids])
    expected = np.concatenate([base[bounds[i]:bounds[i + 1]] for i in perm])
    np.testing.assert_allclose(forward(m, shuffled), expected, rtol=0, atol=1e-12)


def test_padding_does_not_leak(tables):
    vocab, ft = tables
    m = build_model(ModelConfig("TR_GLOBAL"), seed=7, vocab=vocab)
    b = make_batch(ft[:3])
    z1 = m.logits(b).data
    b.spatial[b.mask == 0] = 123.0
    b.ids[b.mask == 0] = 5
    z2 = m.logits(b).data
    np.testing.assert_allclose(z1[b.mask > 0], z2[b.mask > 0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_weights_round_trip_bit_identical(variant, tables):
    vocab, ft = tables
    m = build_model(ModelConfig(variant), seed=8, vocab=vocab if variant != "UNSUP" else None)
    buf = io.BytesIO()
    save_weights(m, buf)
    back = load_weights(io.BytesIO(buf.getvalue()), expect_variant=variant)
    assert back.cfg == m.cfg
    for k, v in m.state().items():
        assert back.state()[k].tobytes() == v.tobytes()
    assert dumps_weights(back) == buf.getvalue()
    if variant != "UNSUP":
        assert [p.tobytes() for p in back.predict(ft)] == [p.tobytes() for p in m.predict(ft)]


def test_weight_file_errors():
    raw = dumps_weights(build_model(ModelConfig("FF_SPATIAL")))
    for cut in (3, 10, len(raw) // 2, len(raw) - 1):
        with pytest.raises(WeightFileError):
            loads_weights(raw[:cut])
    with pytest.raises(WeightFileError):
        loads_weights(raw, expect_variant="LSTM_ROW")
    with pytest.raises(WeightFileError):
        loads_weights(raw + b"\x00")
    with pytest.raises(WeightFileError):
        loads_weights(b"XXXX" + raw[4:])
    bad_version = raw[:4] + (2).to_bytes(4, "little") + raw[8:]
    with pytest.raises(WeightFileError):
        loads_weights(bad_version)


def test_vocab_larger_than_table_rejected():
    corpus = synth.gen_corpus(1, 3)
    vocab = ingest.build_vocab([t.words for t in corpus], token_min_freq=0, tag_min_freq=0)
    with pytest.raises(ModelError):
        build_model(ModelConfig("FF_TOKEN", vocab_size=vocab.size - 1, strict=False), vocab=vocab)
