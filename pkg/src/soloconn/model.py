"""Decoder-only transformer sized for desk-scale experiments.

Pre-norm residual blocks, learned positional embeddings, weight-tied LM
head. The whole model fits in a few hundred thousand float64 parameters so
training runs take seconds and finite-difference checks stay feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError
from .rng import substream
from .tensor import (
    Tensor,
    attn_softmax,
    concat_cols,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    transpose,
)


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_seq_len: int
    dropout_rate: float = 0.0

    def __post_init__(self):
        for field in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"{field} must be a positive integer")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_layers < 3:
            raise ConfigError(f"n_layers must be >= 3, got {self.n_layers}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


class DecoderBlock:
    """One pre-norm residual block: attention then MLP."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, index: int):
        d, f = cfg.d_model, cfg.d_ff
        std = 0.02
        # residual output projections get the GPT-2 depth-scaled init
        res_std = std / math.sqrt(2.0 * cfg.n_layers)

        def w(shape, s):
            return rng.normal(0.0, s, size=shape)

        p = f"block{index}."
        self.wq = Tensor(w((d, d), std), True, p + "wq")
        self.bq = Tensor(np.zeros(d), True, p + "bq")
        self.wk = Tensor(w((d, d), std), True, p + "wk")
        self.bk = Tensor(np.zeros(d), True, p + "bk")
        self.wv = Tensor(w((d, d), std), True, p + "wv")
        self.bv = Tensor(np.zeros(d), True, p + "bv")
        self.wo = Tensor(w((d, d), res_std), True, p + "wo")
        self.bo = Tensor(np.zeros(d), True, p + "bo")
        self.w1 = Tensor(w((d, f), std), True, p + "w1")
        self.b1 = Tensor(np.zeros(f), True, p + "b1")
        self.w2 = Tensor(w((f, d), res_std), True, p + "w2")
        self.b2 = Tensor(np.zeros(d), True, p + "b2")
        self.ln1_g = Tensor(np.ones(d), True, p + "ln1_g")
        self.ln1_b = Tensor(np.zeros(d), True, p + "ln1_b")
        self.ln2_g = Tensor(np.ones(d), True, p + "ln2_g")
        self.ln2_b = Tensor(np.zeros(d), True, p + "ln2_b")

    def parameters(self) -> list[Tensor]:
        return [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.w1, self.b1, self.w2, self.b2,
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
        ]

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())


class MiniGptModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = substream(seed, "model-init")
        self.tok_emb = Tensor(rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d_model)), True, "tok_emb")
        self.pos_emb = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_seq_len, cfg.d_model)), True, "pos_emb")
        self.blocks = [DecoderBlock(cfg, rng, i) for i in range(cfg.n_layers)]
        self.lnf_g = Tensor(np.ones(cfg.d_model), True, "lnf_g")
        self.lnf_b = Tensor(np.zeros(cfg.d_model), True, "lnf_b")
        self._masks: dict[tuple[int, int], Tensor] = {}

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("tok_emb", self.tok_emb), ("pos_emb", self.pos_emb)]
        for blk in self.blocks:
            out.extend((p.name, p) for p in blk.parameters())
        out.append(("lnf_g", self.lnf_g))
        out.append(("lnf_b", self.lnf_b))
        return out

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.parameters() if p.requires_grad]

    def total_param_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for _, p in self.parameters())

    def causal_mask(self, seq_len: int) -> Tensor:
        # additive mask: 0 on/below the diagonal, -inf strictly above
        key = (1, seq_len)
        if key not in self._masks:
            m = np.triu(np.full((seq_len, seq_len), -np.inf), k=1)
            self._masks[key] = Tensor(m)
        return self._masks[key]

    def packed_causal_mask(self, segments: int, seg_len: int) -> Tensor:
        """Block-diagonal causal mask: several independent sequences share one
        forward pass without attending across segment boundaries."""
        key = (segments, seg_len)
        if key not in self._masks:
            total = segments * seg_len
            m = np.full((total, total), -np.inf)
            causal = np.triu(np.full((seg_len, seg_len), -np.inf), k=1)
            for b in range(segments):
                sl = slice(b * seg_len, (b + 1) * seg_len)
                m[sl, sl] = causal
            self._masks[key] = Tensor(m)
        return self._masks[key]


def freeze_base(model: MiniGptModel) -> None:
    for _, p in model.parameters():
        p.requires_grad = False


def unfreeze_base(model: MiniGptModel) -> None:
    for _, p in model.parameters():
        p.requires_grad = True


def embed(model: MiniGptModel, tokens, training: bool = False, rng=None, pos_ids=None) -> Tensor:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError(f"tokens must be a non-empty 1-D sequence, got shape {ids.shape}")
    if pos_ids is None:
        if ids.size > model.cfg.max_seq_len:
            raise InputError(f"sequence length {ids.size} exceeds max_seq_len {model.cfg.max_seq_len}")
        pos_ids = np.arange(ids.size)
    x = embedding(model.tok_emb, ids) + embedding(model.pos_emb, pos_ids)
    return dropout(x, model.cfg.dropout_rate, training, rng)


def block_forward(
    block: DecoderBlock,
    x: Tensor,
    model: MiniGptModel,
    training: bool = False,
    rng=None,
    qv_delta=None,
    mask: Tensor | None = None,
) -> Tensor:
    """Pre-norm residual block; ``qv_delta(kind, h)`` lets adapters add to Q/V."""
    cfg = model.cfg
    d, h = cfg.d_model, cfg.n_heads
    if x.data.ndim != 2 or x.data.shape[1] != d:
        raise DimensionError(f"block input shape {x.data.shape} does not end in d_model={d}")
    hd = d // h
    seq = x.data.shape[0]
    rate = cfg.dropout_rate

    a = layer_norm(x, block.ln1_g, block.ln1_b)
    q = linear(a, block.wq, block.bq)
    k = linear(a, block.wk, block.bk)
    v = linear(a, block.wv, block.bv)
    if qv_delta is not None:
        dq = qv_delta("q", a)
        if dq is not None:
            q = q + dq
        dv = qv_delta("v", a)
        if dv is not None:
            v = v + dv

    if mask is None:
        mask = model.causal_mask(seq)
    heads = []
    for i in range(h):
        qh = q.cols(i * hd, (i + 1) * hd)
        kh = k.cols(i * hd, (i + 1) * hd)
        vh = v.cols(i * hd, (i + 1) * hd)
        att = attn_softmax(qh, kh, mask.data, 1.0 / math.sqrt(hd))
        att = dropout(att, rate, training, rng)
        heads.append(matmul(att, vh))
    attn_out = linear(concat_cols(heads), block.wo, block.bo)
    x = x + dropout(attn_out, rate, training, rng)

    m = layer_norm(x, block.ln2_g, block.ln2_b)
    m = linear(gelu(linear(m, block.w1, block.b1)), block.w2, block.b2)
    return x + dropout(m, rate, training, rng)


def finalize(model: MiniGptModel, x: Tensor) -> Tensor:
    """Final layernorm plus the weight-tied LM head."""
    xf = layer_norm(x, model.lnf_g, model.lnf_b)
    return matmul(xf, transpose(model.tok_emb))


def model_forward(model: MiniGptModel, tokens, training: bool = False, rng=None,
                  mask: Tensor | None = None, pos_ids=None) -> Tensor:
    """Causal logits of shape [seq_len x vocab_size]."""
    x = embed(model, tokens, training, rng, pos_ids)
    for block in model.blocks:
        x = block_forward(block, x, model, training, rng, mask=mask)
    return finalize(model, x)
