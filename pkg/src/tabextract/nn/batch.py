"""Padding featurized tables into dense arrays for the models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..ingest import FeaturizedTable


@dataclass
class TableBatch:
    ids: np.ndarray        # (N, R, L) int
    spatial: np.ndarray    # (N, R, L, 4)
    mask: np.ndarray       # (N, R, L) 1.0 on real tokens
    labels: Optional[np.ndarray]
    flat_idx: np.ndarray   # (N, T) position in the R*L grid of the t-th token
    flat_mask: np.ndarray  # (N, T)
    grid_idx: np.ndarray   # (N, R*L) position in the flat sequence (0 on padding)
    row_lens: List[List[int]]

    @property
    def n_tables(self) -> int:
        return self.ids.shape[0]


def make_batch(tables: Sequence[FeaturizedTable], with_labels: Optional[bool] = None) -> TableBatch:
    if not tables:
        raise ValueError("empty batch")
    if with_labels is None:
        with_labels = all(t.labels is not None for t in tables)
    N = len(tables)
    R = max(max(t.n_rows for t in tables), 1)
    L = max(max((len(r) for r in t.tag_ids), default=0) for t in tables) or 1
    T = max(max(t.n_tokens for t in tables), 1)
    ids = np.zeros((N, R, L), dtype=np.int64)
    spatial = np.zeros((N, R, L, 4))
    mask = np.zeros((N, R, L))
    labels = np.zeros((N, R, L)) if with_labels else None
    flat_idx = np.zeros((N, T), dtype=np.int64)
    flat_mask = np.zeros((N, T))
    grid_idx = np.zeros((N, R * L), dtype=np.int64)
    row_lens = []
    for n, t in enumerate(tables):
        pos = 0
        lens = []
        for r in range(t.n_rows):
            k = len(t.tag_ids[r])
            lens.append(k)
            ids[n, r, :k] = t.tag_ids[r]
            spatial[n, r, :k] = t.spatial[r]
            mask[n, r, :k] = 1.0
            if with_labels:
                labels[n, r, :k] = t.labels[r]
            cells = r * L + np.arange(k)
            flat_idx[n, pos:pos + k] = cells
            grid_idx[n, cells] = np.arange(pos, pos + k)
            flat_mask[n, pos:pos + k] = 1.0
            pos += k
        row_lens.append(lens)
    return TableBatch(ids, spatial, mask, labels, flat_idx, flat_mask, grid_idx, row_lens)


def split_probs(batch: TableBatch, probs: np.ndarray) -> List[np.ndarray]:
    """Per-table flat (row-major) token probabilities from an (N, R, L) array."""
    out = []
    for n, lens in enumerate(batch.row_lens):
        out.append(np.concatenate([probs[n, r, :k] for r, k in enumerate(lens)])
                   if lens else np.zeros(0))
    return out
