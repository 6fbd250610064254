import numpy as np
import pytest

from tabextract.nn import autograd as ag


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=1e-6):
    """Compare autograd against central differences for sum(w * build(*inputs))."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    probe = None

    def scalar(*vals):
        nonlocal probe
        out = build(*[ag.Tensor(v) for v in vals]).data
        if probe is None:
            probe = rng.normal(size=out.shape)
        return float((out * probe).sum())

    scalar(*arrays)
    params = [ag.parameter(a) for a in arrays]
    out = build(*params)
    out.backward(probe)
    for k, p in enumerate(params):
        def f(v, k=k):
            vals = list(arrays)
            vals[k] = v
            return scalar(*vals)
        expected = numeric_grad(f, arrays[k].copy())
        np.testing.assert_allclose(p.grad, expected, rtol=tol, atol=tol)


def test_elementwise_grads():
    check(lambda a, b: a + b, (3, 4), (4,))
    check(lambda a, b: a * b, (2, 3, 4), (3, 1))
    check(lambda a, b: a - b, (3,), (2, 3))
    check(lambda a: ag.sigmoid(a), (5,))
    check(lambda a: ag.tanh(a), (5,))
    check(lambda a: ag.scale(a, 2.5), (2, 2))


def test_relu_grad_away_from_kink():
    x = np.array([-1.0, -0.2, 0.3, 2.0])
    p = ag.parameter(x)
    ag.relu(p).backward(np.ones(4))
    assert p.grad.tolist() == [0.0, 0.0, 1.0, 1.0]


def test_matmul_and_shape_grads():
    check(lambda a, b: a @ b, (3, 4), (4, 2))
    check(lambda a, b: a @ b, (2, 3, 4), (4, 5))
    check(lambda a, b: a @ b, (2, 3, 4), (2, 4, 5))
    check(lambda a: ag.reshape(a, (6, 2)), (3, 4))
    check(lambda a: ag.swapaxes(a, 0, 1), (3, 4))
    check(lambda a: ag.tsum(a, axis=1, keepdims=True), (3, 4))
    check(lambda a: a[1:, ::2], (3, 4))


def test_stack_concat_unstack():
    check(lambda a, b: ag.stack([a, b], axis=0), (3, 2), (3, 2))
    check(lambda a, b: ag.concat([a, b], axis=-1), (3, 2), (3, 5))
    check(lambda a: ag.unstack(a, 1)[2], (3, 4))


def test_take_and_gather():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    check(lambda w: ag.take(w, ids), (4, 3))
    idx = np.array([[2, 0, 1], [1, 1, 0]])
    check(lambda x: ag.gather(x, idx), (2, 3, 4))


def test_fused_grads():
    check(lambda a: ag.softmax(a), (3, 5))
    check(lambda x, g, b: ag.layer_norm(x, g, b), (4, 6), (6,), (6,))
    mask = np.array([[1.0], [0.0], [1.0]])
    check(lambda gx, h, c, w: ag.lstm_cell(gx, h, c, w, mask), (3, 8), (3, 2), (3, 2), (2, 8))
    check(lambda gx, h, c, w: ag.lstm_cell(gx, h, c, w), (3, 8), (3, 2), (3, 2), (2, 8))
    labels = np.array([[1, 0, 1], [0, 0, 1]])
    m = np.array([[1, 1, 0], [1, 1, 1]])
    check(lambda z: ag.bce_with_logits(z, labels, m), (2, 3))


def test_bce_matches_direct_formula():
    z = np.array([-3.0, 0.0, 4.0])
    y = np.array([1, 0, 1])
    p = 1 / (1 + np.exp(-z))
    direct = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    got = ag.bce_with_logits(ag.Tensor(z), y, np.ones(3)).data
    assert got == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        ag.bce_with_logits(ag.Tensor(z), y, np.zeros(3))


def test_leading_copies_match_single_runs():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(5, 4, 3))
    x = rng.normal(size=(2, 4))
    batched = ag.tanh(ag.Tensor(x) @ ag.Tensor(w)).data
    for k in range(5):
        single = ag.tanh(ag.Tensor(x) @ ag.Tensor(w[k])).data
        np.testing.assert_array_equal(batched[k], single)


def test_no_grad_builds_no_graph():
    p = ag.parameter(np.ones(3))
    with ag.no_grad():
        out = ag.tanh(p)
    assert not out.requires_grad


def test_shared_node_accumulates():
    p = ag.parameter(np.array([2.0]))
    q = p * p + p
    q.backward()
    assert p.grad.tolist() == [5.0]


def test_kink_monitor_tracks_smallest_preactivation():
    with ag.watch_kinks() as mon:
        ag.relu(ag.Tensor(np.array([0.5, -0.01, 3.0])))
        ag.relu(ag.Tensor(np.array([-2.0])))
    assert mon.margin == pytest.approx(0.01)
