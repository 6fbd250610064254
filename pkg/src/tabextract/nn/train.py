"""Loss, optimizer, the training loop and a finite-difference gradient checker."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .batch import TableBatch, make_batch
from .models import SegModel
from ..ingest import FeaturizedTable
from ..metrics import confusion, mcc_from_counts

log = logging.getLogger(__name__)

DEFAULT_UPDATES = 640
DEFAULT_LR = 0.01
DEFAULT_EVAL_EVERY = 10


def binary_cross_entropy(probs, labels, eps: float = 1e-12) -> float:
    """Mean log loss on probabilities, clamped to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in shape")
    if p.size == 0:
        raise ValueError("loss over no tokens")
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def _require_labels(batch: TableBatch) -> None:
    if batch.labels is None:
        raise ValueError("batch has no labels")


def loss_and_grad(model: SegModel, batch: TableBatch) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean token cross-entropy and its gradient for every parameter."""
    _require_labels(batch)
    for p in model.params.values():
        p.grad = None
    loss = ag.bce_with_logits(model.logits(batch), batch.labels, batch.mask)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss")
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for k, p in model.params.items()}
    return float(loss.data), grads


def finite_difference_grads(model: SegModel, batch: TableBatch, step: float = 1e-5,
                            budget: int = 16_000_000) -> Dict[str, np.ndarray]:
    """Central differences for every parameter entry.

    All perturbed copies of one parameter run through a single forward pass by
    stacking them on a leading axis; ``budget`` caps copies x parameter size.
    """
    _require_labels(batch)
    base = {k: p.data for k, p in model.params.items()}
    out = {}
    with ag.no_grad():
        for name, value in base.items():
            n = value.size
            chunk = max(1, min(n, budget // (2 * value.size)))
            fd = np.empty(n)
            for s in range(0, n, chunk):
                idx = np.arange(s, min(n, s + chunk))
                copies = np.repeat(value.reshape(1, -1), 2 * len(idx), axis=0)
                rows = np.arange(len(idx))
                copies[rows, idx] += step
                copies[rows + len(idx), idx] -= step
                params = {k: ag.Tensor(v.reshape((1,) + v.shape)) for k, v in base.items()}
                params[name] = ag.Tensor(copies.reshape((2 * len(idx),) + value.shape))
                z = model.logits(batch, params=params, lead=1)
                losses = ag.bce_with_logits(z, batch.labels, batch.mask).data
                fd[s:s + len(idx)] = (losses[:len(idx)] - losses[len(idx):]) / (2 * step)
            out[name] = fd.reshape(value.shape)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def kink_margin(model: SegModel, batch: TableBatch) -> float:
    """Distance of the nearest relu pre-activation from zero at the current weights."""
    with ag.no_grad(), ag.watch_kinks() as mon:
        model.logits(batch)
    return mon.margin


def gradient_check(model: SegModel, batch: TableBatch, step: float = 1e-5) -> Dict[str, float]:
    """Largest relative error per parameter between autodiff and finite differences."""
    _, grads = loss_and_grad(model, batch)
    fd = finite_difference_grads(model, batch, step)
    return {k: float(relative_error(grads[k], fd[k]).max()) for k in grads}


class Adam:
    def __init__(self, params: Dict[str, ag.Tensor], lr: float = DEFAULT_LR,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass(frozen=True)
class HistoryRow:
    update: int
    train_loss: float
    val_mcc: Optional[float]


def history_csv(history: Sequence[HistoryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["update", "train_loss", "val_mcc"])
    for h in history:
        w.writerow([h.update, repr(h.train_loss), "" if h.val_mcc is None else repr(h.val_mcc)])
    return buf.getvalue()


class Validator:
    """Pooled token MCC at a 0.5 cutoff over a fixed set of tables."""

    def __init__(self, tables: Sequence[FeaturizedTable], chunk: int = 128):
        if not tables:
            raise ValueError("empty validation set")
        order = sorted(range(len(tables)), key=lambda i: (tables[i].n_rows, tables[i].n_tokens, i))
        self.batches = [make_batch([tables[i] for i in order[s:s + chunk]], with_labels=True)
                        for s in range(0, len(order), chunk)]

    def __call__(self, model: SegModel) -> float:
        tp = tn = fp = fn = 0
        for b in self.batches:
            probs = model.predict_batch(b)
            m = b.mask > 0
            c = confusion(probs[m] >= 0.5, b.labels[m] > 0.5)
            tp, tn, fp, fn = tp + c[0], tn + c[1], fp + c[2], fn + c[3]
        return mcc_from_counts(tp, tn, fp, fn)


def train(model: SegModel, train_set: Sequence[FeaturizedTable], val_set: Sequence[FeaturizedTable],
          updates: int = DEFAULT_UPDATES, lr: float = DEFAULT_LR, seed: int = 0,
          eval_every: int = DEFAULT_EVAL_EVERY) -> Tuple[SegModel, List[HistoryRow]]:
    """Adam on one table per update; returns the best-validation-MCC snapshot.

    The starting weights count as a candidate, and later snapshots must score
    strictly higher to replace it. Validation runs every ``eval_every``
    updates and after the last one.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    if any(t.labels is None for t in train_set) or any(t.labels is None for t in val_set):
        raise ValueError("every table needs labels")
    if updates < 1 or eval_every < 1:
        raise ValueError("updates and eval_every must be positive")
    model = model.clone()
    if model.variant == "UNSUP":
        return model, [HistoryRow(u + 1, float("nan"), None) for u in range(updates)]
    validate = Validator(val_set)
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr)
    best_mcc = validate(model)
    best_state = model.state()
    history: List[HistoryRow] = []
    order: List[int] = []
    pos = 0
    for u in range(1, updates + 1):
        if pos == len(order):
            order = rng.permutation(len(train_set)).tolist()
            pos = 0
        batch = make_batch([train_set[order[pos]]], with_labels=True)
        pos += 1
        loss, grads = loss_and_grad(model, batch)
        opt.step(grads)
        val = None
        if u % eval_every == 0 or u == updates:
            val = validate(model)
            if val > best_mcc:
                best_mcc, best_state = val, model.state()
            log.debug("update %d loss %.5f val_mcc %.4f", u, loss, val)
        history.append(HistoryRow(u, loss, val))
    model.load_state(best_state)
    return model, history
