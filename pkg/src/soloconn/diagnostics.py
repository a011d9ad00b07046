"""The full finite-difference suite behind the `gradcheck` command.

Covers every primitive op category plus composite paths: one decoder block,
the adapter path with all five trainable pieces, the low-rank attention
delta, and a complete adapted model. Each entry returns its max relative
error; the suite passes when every entry is under tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import SoloConfig, build_adapter_set, lora_baseline_attach, lora_forward, solo_forward
from .gradcheck import grad_check, grad_check_params
from .model import MiniGptModel, ModelConfig, block_forward, freeze_base
from .rng import substream
from .tensor import (
    Tensor,
    attn_softmax,
    concat_cols,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    softmax,
    transpose,
)
from .adapters import adapted_forward

DEFAULT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rand(shape, seed):
    return substream(seed, "gradcheck").normal(size=shape)


def run_suite(tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    results: list[CheckResult] = []

    def check(name, err, tol=tolerance):
        results.append(CheckResult(name, float(err), tol))

    b = Tensor(_rand((3, 2), 1))
    check("matmul", grad_check(lambda a: matmul(a, b).sum(), Tensor(_rand((4, 3), 2))))
    y = Tensor(_rand((4, 4), 3))
    check("add", grad_check(lambda x: (x + y).sum(), Tensor(_rand((4, 4), 4))))
    check("mul", grad_check(lambda x: mul(x, y).sum(), Tensor(_rand((4, 4), 5))))
    check("scale", grad_check(lambda x: (x * 1.7).sum(), Tensor(_rand((4, 4), 6))))
    check("gelu", grad_check(lambda x: gelu(x).sum(), Tensor(_rand(12, 7))))
    w = Tensor(_rand((3, 5), 8))
    check("softmax", grad_check(lambda x: mul(softmax(x), w).sum(), Tensor(_rand((3, 5), 9))))
    g8, b8 = Tensor(_rand(8, 10)), Tensor(_rand(8, 11))
    check("layernorm", grad_check(lambda x: layer_norm(x, g8, b8).sum(), Tensor(_rand((2, 8), 12))))
    check("dropout", grad_check(
        lambda x: dropout(x, 0.3, True, substream(13, "fixed")).sum(), Tensor(_rand((4, 4), 14))))
    ids = np.array([0, 3, 1, 3])
    check("embedding", grad_check(lambda t: embedding(t, ids).sum(), Tensor(_rand((5, 4), 15))))
    targets = np.array([1, 0, 2])
    check("cross_entropy", grad_check(
        lambda lg: cross_entropy(lg, targets, np.array([1.0, 1.0, 0.0])), Tensor(_rand((3, 4), 16))))
    check("transpose", grad_check(
        lambda x: matmul(transpose(x), Tensor(_rand((4, 2), 17))).sum(), Tensor(_rand((4, 3), 18))))
    check("slice_concat", grad_check(
        lambda x: mul(concat_cols([x.cols(0, 2), x.cols(2, 5)]), Tensor(_rand((3, 5), 19))).sum(),
        Tensor(_rand((3, 5), 20))))
    wl, bl = Tensor(_rand((5, 3), 31)), Tensor(_rand(3, 32))
    check("linear", grad_check(lambda x: linear(x, wl, bl).sum(), Tensor(_rand((4, 5), 33))))
    amask = np.triu(np.full((4, 4), -np.inf), k=1)
    ak = Tensor(_rand((4, 3), 34))
    aprobe = Tensor(_rand((4, 4), 35))
    check("attn_softmax", grad_check(
        lambda q: mul(attn_softmax(q, ak, amask, 0.5), aprobe).sum(), Tensor(_rand((4, 3), 36))))

    cfg = ModelConfig(vocab_size=9, d_model=8, n_layers=4, n_heads=2, d_ff=12, max_seq_len=8)
    model = MiniGptModel(cfg, seed=21)
    blk = model.blocks[0]
    probe = Tensor(_rand((4, 8), 22))
    x_blk = Tensor(_rand((4, 8), 23), requires_grad=True)
    rep = grad_check_params(
        lambda: (block_forward(blk, x_blk, model) * probe).sum(),
        [("x", x_blk)] + [(p.name, p) for p in blk.parameters()],
    )
    check("decoder_block", max(rep.values()))

    aset = build_adapter_set(cfg, SoloConfig(rank=3, sparsity=0.3, dropout_rate=0.0), seed=24)
    conn = aset.connections[0]
    conn.gate.lam.data[...] = 0.4
    x_solo = Tensor(_rand((4, 8), 25))
    rep = grad_check_params(
        lambda: (solo_forward(conn, aset.codec, x_solo) * probe).sum(),
        aset.parameters(),
    )
    check("solo_path", max(rep.values()))

    lmodel = MiniGptModel(cfg, seed=26)
    lset = lora_baseline_attach(lmodel, rank=2, alpha=8.0, seed=26)
    for pair in lset.pairs.values():
        pair.b.data[...] = _rand(pair.b.data.shape, 27) * 0.1
    toks = substream(28, "tok").integers(0, cfg.vocab_size, size=6)
    rep = grad_check_params(
        lambda: cross_entropy(lora_forward(lmodel, lset, toks[:-1]), toks[1:]),
        lset.parameters(),
    )
    check("lora_path", max(rep.values()))

    fmodel = MiniGptModel(cfg, seed=29)
    freeze_base(fmodel)
    faset = build_adapter_set(cfg, SoloConfig(rank=3, sparsity=0.3, dropout_rate=0.0), seed=29)
    for c in faset.connections:
        c.gate.lam.data[...] = 0.3
    ftoks = substream(30, "tok").integers(0, cfg.vocab_size, size=6)
    rep = grad_check_params(
        lambda: cross_entropy(adapted_forward(fmodel, faset, ftoks[:-1]), ftoks[1:]),
        faset.parameters(),
    )
    check("adapted_model", max(rep.values()))

    return results


def suite_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<16} {'max_rel_error':>14} {'tolerance':>10}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<16} {r.max_rel_error:>14.3e} {r.tolerance:>10.1e}  {status}")
    return "\n".join(lines)
