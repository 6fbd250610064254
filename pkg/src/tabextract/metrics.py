"""Scalar quality measures shared by training and evaluation."""
from __future__ import annotations

import math
from typing import Dict, Iterable, Sequence

import numpy as np

QUANTILES = (10, 25, 50, 75, 90)


def confusion(pred: Sequence[int], gold: Sequence[int]):
    p = np.asarray(pred).astype(bool).ravel()
    g = np.asarray(gold).astype(bool).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {g.size} labels")
    if p.size == 0:
        raise ValueError("mcc of empty vectors")
    tp = int(np.count_nonzero(p & g))
    tn = int(np.count_nonzero(~p & ~g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, tn, fp, fn


def mcc_from_counts(tp: int, tn: int, fp: int, fn: int) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc(pred: Sequence[int], gold: Sequence[int]) -> float:
    """Matthews correlation; a zero denominator gives 0."""
    return mcc_from_counts(*confusion(pred, gold))


def smape(pred_count: float, true_count: float) -> float:
    if pred_count < 0 or true_count < 0:
        raise ValueError("counts must be non-negative")
    total = abs(pred_count) + abs(true_count)
    if total == 0:
        return 0.0
    return 200.0 * abs(pred_count - true_count) / total


def nearest_rank(values: Iterable[float], pct: float) -> float:
    """Smallest value with at least ``pct`` percent of the sample at or below it."""
    xs = sorted(values)
    if not xs:
        raise ValueError("quantile of an empty sample")
    if not 0 <= pct <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    rank = max(1, math.ceil(pct * len(xs) / 100))
    return xs[rank - 1]


def quantile_report(values: Sequence[float]) -> Dict[str, float]:
    out = {f"p{q}": nearest_rank(values, q) for q in QUANTILES}
    out["max"] = max(values)
    out["perfect_pct"] = 100.0 * sum(1 for v in values if v == 0) / len(values)
    return out
