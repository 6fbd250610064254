import math

import numpy as np
import pytest

from tabextract import ingest, synth
from tabextract.metrics import mcc
from tabextract.nn import (Adam, ModelConfig, binary_cross_entropy, build_model, gradient_check,
                           history_csv, loss_and_grad, make_batch, train)
from tabextract.nn import autograd as ag
from tabextract.nn.train import Validator, kink_margin, relative_error


def featurized(seed, n, difficulty="clean", vocab=None, **kw):
    return [ingest.featurize_table(t.words, vocab) for t in synth.gen_corpus(seed, n, difficulty, **kw)]


def test_cross_entropy_reference_values():
    assert binary_cross_entropy([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-15)
    assert binary_cross_entropy([1.0, 0.0], [1, 0]) < 1e-11
    assert binary_cross_entropy([0.0], [1]) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        binary_cross_entropy([0.5], [1, 0])


def test_zero_logits_give_ln2():
    ft = featurized(1, 1, rows=3)
    m = build_model(ModelConfig("FF_SPATIAL"), seed=0)
    for p in m.params.values():
        p.data = np.zeros_like(p.data)
    loss, grads = loss_and_grad(m, make_batch(ft))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_loss_requires_labels():
    ft = featurized(1, 1, rows=3)
    b = make_batch(ft, with_labels=False)
    with pytest.raises(ValueError):
        loss_and_grad(build_model(ModelConfig("FF_SPATIAL")), b)


def test_gradient_check_small_model():
    seed = 0
    while True:
        b = make_batch(featurized(2 + seed, 1, rows=3))
        m = build_model(ModelConfig("FF_SPATIAL"), seed=seed)
        if kink_margin(m, b) >= 1e-4:
            break
        seed += 1
    worst = gradient_check(m, b)
    assert max(worst.values()) < 1e-4


def test_kink_margin_is_infinite_without_relu():
    ft = featurized(2, 1, rows=3)
    assert kink_margin(build_model(ModelConfig("LSTM_ROW")), make_batch(ft)) == float("inf")
    assert kink_margin(build_model(ModelConfig("FF_SPATIAL")), make_batch(ft)) < float("inf")


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 0.5


def test_adam_first_step_moves_by_lr():
    p = ag.parameter(np.array([1.0, -1.0]))
    opt = Adam({"w": p}, lr=0.1)
    opt.step({"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-7)


def test_zero_learning_rate_leaves_weights_alone():
    tr, va = featurized(3, 5), featurized(4, 5)
    m = build_model(ModelConfig("FF_SPATIAL"), seed=2)
    best, hist = train(m, tr, va, updates=12, lr=0.0, seed=1, eval_every=5)
    for k, v in m.state().items():
        assert np.array_equal(best.state()[k], v)
    assert [h.update for h in hist] == list(range(1, 13))
    assert [h.val_mcc is not None for h in hist] == [u % 5 == 0 or u == 12 for u in range(1, 13)]


def test_training_is_reproducible_and_does_not_touch_input():
    tr, va = featurized(5, 8), featurized(6, 8)
    m = build_model(ModelConfig("LSTM_ROW"), seed=3)
    before = m.state()
    a, ha = train(m, tr, va, updates=15, seed=9)
    b, hb = train(m, tr, va, updates=15, seed=9)
    assert history_csv(ha) == history_csv(hb)
    assert all(np.array_equal(a.state()[k], b.state()[k]) for k in before)
    assert all(np.array_equal(m.state()[k], v) for k, v in before.items())


def test_best_checkpoint_is_kept():
    tr, va = featurized(7, 10), featurized(8, 10)
    m = build_model(ModelConfig("FF_SPATIAL"), seed=4)
    best, hist = train(m, tr, va, updates=40, lr=0.05, seed=2, eval_every=10)
    scores = [h.val_mcc for h in hist if h.val_mcc is not None]
    assert Validator(va)(best) == pytest.approx(max(scores + [Validator(va)(m)]), abs=1e-12)


def test_history_length_and_csv_shape():
    tr, va = featurized(9, 3), featurized(10, 3)
    _, hist = train(build_model(ModelConfig("UNSUP")), tr, va)
    assert len(hist) == 640
    lines = history_csv(hist).splitlines()
    assert lines[0] == "update,train_loss,val_mcc" and len(lines) == 641


def test_ff_both_learns_clean_tables():
    tr_tables = synth.gen_corpus(21, 50, "clean")
    vocab = ingest.build_vocab([t.words for t in tr_tables])
    tr = [ingest.featurize_table(t.words, vocab) for t in tr_tables]
    va = featurized(22, 50, vocab=vocab)
    best, _ = train(build_model(ModelConfig("FF_BOTH"), seed=0, vocab=vocab), tr, va, seed=0)
    probs = np.concatenate(best.predict(va))
    gold = np.concatenate([t.flat_labels() for t in va])
    assert mcc(probs >= 0.5, gold) >= 0.95


def test_train_rejects_bad_inputs():
    tr = featurized(1, 2)
    unlabeled = [ingest.featurize_table(t.words, use_word_labels=False) for t in synth.gen_corpus(1, 2)]
    m = build_model(ModelConfig("FF_SPATIAL"))
    with pytest.raises(ValueError):
        train(m, [], tr)
    with pytest.raises(ValueError):
        train(m, unlabeled, tr)
    with pytest.raises(ValueError):
        train(m, tr, tr, updates=0)
