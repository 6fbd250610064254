"""Column-segmentation models: feedforward, LSTM and transformer variants.

Each model scores every token with the probability that it closes a cell.
Parameter layouts are fixed so that the default configuration of each
variant has exactly the published parameter count (see ``PARAM_TARGETS``).
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .batch import TableBatch, make_batch, split_probs
from ..ingest import FeaturizedTable, Vocab

VARIANTS = ("UNSUP", "FF_SPATIAL", "FF_TOKEN", "FF_BOTH", "LSTM_ROW", "LSTM_LOCAL",
            "LSTM_SWAP", "LSTM_GLOBAL", "TR_ROW", "TR_GLOBAL", "TR_REC")
TRAINABLE = VARIANTS[1:]

PARAM_TARGETS = {
    "UNSUP": 0,
    "FF_SPATIAL": 2769,
    "FF_TOKEN": 16801,
    "FF_BOTH": 17393,
    "LSTM_ROW": 27025,
    "LSTM_LOCAL": 27025,
    "LSTM_SWAP": 27025,
    "LSTM_GLOBAL": 27025,
    "TR_ROW": 27153,
    "TR_GLOBAL": 27153,
    "TR_REC": 35761,
}

ATTN_MASK = -1e9


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    vocab_size: int = 882
    emb_dim: int = 16
    spatial_proj: int = 16
    lstm_hidden: int = 16
    ff_hidden: int = 32
    d_model: int = 32
    d_ff: int = 32
    layers: int = 2
    heads: int = 4
    carry_cell: bool = True
    strict: bool = True

    def __post_init__(self):
        v = self.variant.upper()
        if v not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if self.d_model % self.heads:
            raise ModelError("d_model must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _shapes(cfg: ModelConfig) -> "OrderedDict[str, Tuple[tuple, int]]":
    """name -> (shape, fan_in) in initialization order."""
    s: "OrderedDict[str, Tuple[tuple, int]]" = OrderedDict()

    def dense(name, n_in, n_out):
        s[name + ".weight"] = ((n_in, n_out), n_in)
        s[name + ".bias"] = ((n_out,), n_in)

    v = cfg.variant
    if v == "UNSUP":
        return s
    uses_tokens = v != "FF_SPATIAL"
    uses_spatial = v != "FF_TOKEN"
    if uses_tokens:
        s["emb.weight"] = ((cfg.vocab_size, cfg.emb_dim), 1)
    if uses_spatial:
        dense("proj", 4, cfg.spatial_proj)
    width = (cfg.emb_dim if uses_tokens else 0) + (cfg.spatial_proj if uses_spatial else 0)

    if v.startswith("FF"):
        n_in = width
        for k in range(3):
            dense(f"ff.{k}", n_in, cfg.ff_hidden)
            n_in = cfg.ff_hidden
        dense("head", n_in, 1)
    elif v.startswith("LSTM"):
        H = cfg.lstm_hidden
        n_in = width
        for layer in range(cfg.layers):
            for d in ("fwd", "rev"):
                p = f"lstm.{layer}.{d}"
                s[p + ".w_ih"] = ((n_in, 4 * H), n_in)
                s[p + ".w_hh"] = ((H, 4 * H), H)
                s[p + ".b_ih"] = ((4 * H,), n_in)
                s[p + ".b_hh"] = ((4 * H,), H)
            n_in = 2 * H
        dense("head", n_in, 1)
    else:
        if width != cfg.d_model:
            raise ModelError("transformer input width must equal d_model")
        D = cfg.d_model
        n_attn = 2 if v == "TR_REC" else 1
        for b in range(cfg.layers):
            for a in range(n_attn):
                for proj in ("q", "k", "v", "o"):
                    dense(f"blk.{b}.att{a}.{proj}", D, D)
            dense(f"blk.{b}.ff1", D, cfg.d_ff)
            dense(f"blk.{b}.ff2", cfg.d_ff, D)
            for k in range(n_attn + 1):
                s[f"blk.{b}.ln{k}.gamma"] = ((D,), 0)
                s[f"blk.{b}.ln{k}.beta"] = ((D,), 0)
        dense("head", D, 1)
        if v == "TR_REC":
            s["memory"] = ((D,), D)
    return s


def sinusoid(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


class SegModel:
    def __init__(self, cfg: ModelConfig, params: "OrderedDict[str, Tensor]", vocab: Optional[Vocab] = None):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self._shapes = {k: v[0] for k, v in _shapes(cfg).items()}

    @property
    def variant(self) -> str:
        return self.cfg.variant

    @property
    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def named_parameters(self):
        return list(self.params.items())

    def state(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise ModelError(f"shape mismatch for {k}")
            p.data = np.array(state[k], dtype=np.float64)

    def clone(self) -> "SegModel":
        return SegModel(self.cfg, OrderedDict((k, ag.parameter(p.data)) for k, p in self.params.items()),
                        self.vocab)

    # ------------------------------------------------------------------
    # forward

    def logits(self, batch: TableBatch, params: Optional[Dict[str, Tensor]] = None,
               lead: int = 0) -> Tensor:
        """Token logits of shape ``lead_dims + (N, R, L)``.

        ``params`` overrides the model's own tensors; with ``lead`` > 0 every
        parameter carries that many extra leading axes (used for batched
        finite differences).
        """
        if self.variant == "UNSUP":
            raise ModelError("the unsupervised baseline has no logits")
        run = _Forward(self, params if params is not None else self.params, lead, batch)
        out = run()
        if not np.isfinite(out.data).all():
            raise FloatingPointError(f"non-finite activations in {self.variant}")
        return out

    def predict_batch(self, batch: TableBatch) -> np.ndarray:
        if self.variant == "UNSUP":
            return batch.mask.copy()
        with ag.no_grad():
            z = self.logits(batch).data
        return ag.logistic(z) * batch.mask

    def predict(self, tables: Sequence[FeaturizedTable], chunk: int = 256) -> List[np.ndarray]:
        """Per-table flat token probabilities; tables are batched by size."""
        order = sorted(range(len(tables)), key=lambda i: (tables[i].n_rows,
                                                          max((len(r) for r in tables[i].tag_ids), default=0),
                                                          tables[i].n_tokens, i))
        out: List[Optional[np.ndarray]] = [None] * len(tables)
        for s in range(0, len(order), chunk):
            idx = order[s:s + chunk]
            batch = make_batch([tables[i] for i in idx], with_labels=False)
            for i, p in zip(idx, split_probs(batch, self.predict_batch(batch))):
                out[i] = p
        return out


def forward(model: SegModel, table: FeaturizedTable) -> np.ndarray:
    """Per-token probabilities for a single table, row-major."""
    return model.predict([table])[0]


class _Forward:
    """One forward pass; holds the parameter view and batch for helper methods."""

    def __init__(self, model: SegModel, params, lead: int, batch: TableBatch):
        self.cfg = model.cfg
        self.shapes = model._shapes
        self.P = params
        self.lead = lead
        self.b = batch

    def p(self, name: str, x_ndim: int) -> Tensor:
        t = self.P[name]
        if self.lead == 0:
            return t
        base = self.shapes[name]
        pad = x_ndim - self.lead - len(base)
        return ag.reshape(t, t.shape[:self.lead] + (1,) * pad + base)

    def lin(self, x: Tensor, name: str) -> Tensor:
        w = self.p(name + ".weight", x.ndim)
        return ag.matmul(x, w) + self.p(name + ".bias", x.ndim)

    def lead_shape(self) -> tuple:
        return (1,) * self.lead

    def zeros(self, *shape) -> Tensor:
        return Tensor(np.zeros(self.lead_shape() + shape))

    def inputs(self) -> Tensor:
        v = self.cfg.variant
        parts = []
        if v != "FF_SPATIAL":
            parts.append(ag.take(self.P["emb.weight"], self.b.ids))
        if v != "FF_TOKEN":
            sp = Tensor(self.b.spatial.reshape(self.lead_shape() + self.b.spatial.shape))
            parts.append(self.lin(sp, "proj"))
        return parts[0] if len(parts) == 1 else ag.concat(parts)

    def __call__(self) -> Tensor:
        v = self.cfg.variant
        x = self.inputs()
        if v.startswith("FF"):
            for k in range(3):
                x = ag.relu(self.lin(x, f"ff.{k}"))
            return self.squeeze(self.lin(x, "head"))
        return getattr(self, "_" + v.lower())(x)

    def squeeze(self, x: Tensor) -> Tensor:
        return ag.reshape(x, x.shape[:-1])

    # ---------------- LSTM

    def lstm_dir(self, name: str, x: Tensor, mask: np.ndarray, h0: Tensor, c0: Tensor,
                 reverse: bool):
        """Run one direction over axis -2 of x (..., M, T, D); mask is (M, T)."""
        gx = ag.matmul(x, self.p(name + ".w_ih", x.ndim)) + self.p(name + ".b_ih", x.ndim) \
            + self.p(name + ".b_hh", x.ndim)
        steps = ag.unstack(gx, -2)
        w_hh = self.p(name + ".w_hh", x.ndim - 1)
        H = self.cfg.lstm_hidden
        h, c = h0, c0
        outs: List[Optional[Tensor]] = [None] * len(steps)
        order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
        live = mask.any(axis=0)
        for t in order:
            if live[t]:
                # a fully masked step would pass the state through untouched
                hc = ag.lstm_cell(steps[t], h, c, w_hh, mask[:, t:t + 1])
                h, c = hc[..., :H], hc[..., H:]
            outs[t] = h
        return ag.stack(outs, -2), h, c

    def bilstm(self, x: Tensor, mask: np.ndarray, init=None):
        M = mask.shape[0]
        H = self.cfg.lstm_hidden
        finals = []
        for layer in range(self.cfg.layers):
            if init is None:
                z = self.zeros(M, H)
                (hf, cf), (hr, cr) = (z, z), (z, z)
            else:
                (hf, cf), (hr, cr) = init[layer]
            of, hf, cf = self.lstm_dir(f"lstm.{layer}.fwd", x, mask, hf, cf, False)
            orv, hr, cr = self.lstm_dir(f"lstm.{layer}.rev", x, mask, hr, cr, True)
            x = ag.concat([of, orv])
            finals.append(((hf, cf), (hr, cr)))
        return x, finals

    def _lstm_row(self, x: Tensor) -> Tensor:
        N, R, L = self.b.mask.shape
        xr = ag.reshape(x, x.shape[:-4] + (N * R, L, x.shape[-1]))
        out, _ = self.bilstm(xr, self.b.mask.reshape(N * R, L))
        z = self.squeeze(self.lin(out, "head"))
        return ag.reshape(z, z.shape[:-2] + (N, R, L))

    def _chained(self, x: Tensor, swap: bool) -> Tensor:
        N, R, L = self.b.mask.shape
        H = self.cfg.lstm_hidden
        rows = ag.unstack(x, -3)
        init = None
        outs = []
        for r in range(R):
            out, finals = self.bilstm(rows[r], self.b.mask[:, r, :], init)
            outs.append(self.squeeze(self.lin(out, "head")))
            init = []
            for (hf, cf), (hr, cr) in finals:
                if not self.cfg.carry_cell:
                    cf = cr = self.zeros(N, H)
                init.append(((hr, cr), (hf, cf)) if swap else ((hf, cf), (hr, cr)))
        return ag.stack(outs, -2)

    def _lstm_local(self, x: Tensor) -> Tensor:
        return self._chained(x, swap=False)

    def _lstm_swap(self, x: Tensor) -> Tensor:
        return self._chained(x, swap=True)

    def to_flat(self, x: Tensor) -> Tensor:
        N, R, L = self.b.mask.shape
        xg = ag.reshape(x, x.shape[:-4] + (N, R * L, x.shape[-1]))
        return ag.gather(xg, self.b.flat_idx)

    def to_grid(self, z: Tensor) -> Tensor:
        """Flat per-token scores (..., N, T, 1) back to (..., N, R, L)."""
        N, R, L = self.b.mask.shape
        g = ag.gather(z, self.b.grid_idx)
        return ag.reshape(g, g.shape[:-3] + (N, R, L))

    def _lstm_global(self, x: Tensor) -> Tensor:
        out, _ = self.bilstm(self.to_flat(x), self.b.flat_mask)
        return self.to_grid(self.lin(out, "head"))

    # ---------------- transformer

    def mha(self, name: str, xq: Tensor, xkv: Tensor, key_mask: np.ndarray) -> Tensor:
        heads = self.cfg.heads
        dk = self.cfg.d_model // heads

        def split(t: Tensor) -> Tensor:
            t = ag.reshape(t, t.shape[:-1] + (heads, dk))
            return ag.swapaxes(t, -2, -3)

        q = split(self.lin(xq, name + ".q"))
        k = split(self.lin(xkv, name + ".k"))
        v = split(self.lin(xkv, name + ".v"))
        scores = ag.scale(ag.matmul(q, ag.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk))
        bias = ((1.0 - key_mask) * ATTN_MASK)[:, None, None, :]
        att = ag.softmax(scores + bias)
        ctx = ag.swapaxes(ag.matmul(att, v), -2, -3)
        ctx = ag.reshape(ctx, ctx.shape[:-2] + (self.cfg.d_model,))
        return self.lin(ctx, name + ".o")

    def norm(self, x: Tensor, name: str) -> Tensor:
        return ag.layer_norm(x, self.p(name + ".gamma", x.ndim), self.p(name + ".beta", x.ndim))

    def ffn(self, x: Tensor, b: int) -> Tensor:
        return self.lin(ag.relu(self.lin(x, f"blk.{b}.ff1")), f"blk.{b}.ff2")

    def encoder(self, x: Tensor, key_mask: np.ndarray) -> Tensor:
        x = x + Tensor(sinusoid(x.shape[-2], self.cfg.d_model))
        for b in range(self.cfg.layers):
            x = self.norm(x + self.mha(f"blk.{b}.att0", x, x, key_mask), f"blk.{b}.ln0")
            x = self.norm(x + self.ffn(x, b), f"blk.{b}.ln1")
        return x

    def _tr_row(self, x: Tensor) -> Tensor:
        N, R, L = self.b.mask.shape
        xr = ag.reshape(x, x.shape[:-4] + (N * R, L, x.shape[-1]))
        out = self.encoder(xr, self.b.mask.reshape(N * R, L))
        z = self.squeeze(self.lin(out, "head"))
        return ag.reshape(z, z.shape[:-2] + (N, R, L))

    def _tr_global(self, x: Tensor) -> Tensor:
        out = self.encoder(self.to_flat(x), self.b.flat_mask)
        return self.to_grid(self.lin(out, "head"))

    def _tr_rec(self, x: Tensor) -> Tensor:
        N, R, L = self.b.mask.shape
        D = self.cfg.d_model
        pe = Tensor(sinusoid(L, D))
        rows = ag.unstack(x, -3)
        memory = self.p("memory", x.ndim - 1) + self.zeros(N, L, D)
        mem_mask = self.b.mask[:, 0, :]
        outs = []
        for r in range(R):
            mask = self.b.mask[:, r, :]
            h = rows[r] + pe
            for b in range(self.cfg.layers):
                h = self.norm(h + self.mha(f"blk.{b}.att0", h, h, mask), f"blk.{b}.ln0")
                h = self.norm(h + self.mha(f"blk.{b}.att1", h, memory, mem_mask), f"blk.{b}.ln1")
                h = self.norm(h + self.ffn(h, b), f"blk.{b}.ln2")
            outs.append(self.squeeze(self.lin(h, "head")))
            memory, mem_mask = h, mask
        return ag.stack(outs, -2)


def build_model(cfg: ModelConfig, seed: int = 0, vocab: Optional[Vocab] = None) -> SegModel:
    """Deterministically initialised model; uniform(+-1/sqrt(fan_in)) weights."""
    shapes = _shapes(cfg)
    count = sum(int(np.prod(s)) for s, _ in shapes.values())
    if cfg.strict and count != PARAM_TARGETS[cfg.variant]:
        raise ModelError(f"{cfg.variant}: configuration gives {count} parameters, "
                         f"expected {PARAM_TARGETS[cfg.variant]}")
    rng = np.random.default_rng(seed)
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, (shape, fan_in) in shapes.items():
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith(".beta"):
            data = np.zeros(shape)
        else:
            k = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-k, k, size=shape)
        params[name] = ag.parameter(data)
    if vocab is not None and vocab.size > cfg.vocab_size:
        raise ModelError(f"vocabulary of {vocab.size} ids exceeds the embedding's {cfg.vocab_size} rows")
    return SegModel(cfg, params, vocab)


def param_count(model: SegModel) -> int:
    return model.param_count
