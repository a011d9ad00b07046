"""Inter-block adapters: a shared sparse low-rank codec feeding per-connection
gated skip paths, plus the intra-block low-rank baseline.

One connection taps the residual stream entering a group of decoder blocks,
runs it through dropout -> shared masked encoder (d->r) -> per-connection
bias in rank space -> shared masked decoder (r->d) -> gate, and adds the
result to the stream leaving the group. A single encoder/decoder pair is
shared by every connection; only the rank-space bias and the gate are
per-connection.

The default gate interpolates between zero output and the decoded signal
with a trainable bounded coefficient that starts near zero, so a freshly
attached adapter set barely perturbs the host model and adaptation ramps
up smoothly during training. The alternative is a bare trainable vector
gate with no bounded coefficient (useful to demonstrate why the bounded
one exists).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .model import MiniGptModel, ModelConfig, block_forward, embed, finalize, freeze_base
from .params import kept_count
from .rng import substream
from .tensor import Tensor, dropout, matmul, mul

GATE_VARIANTS = ("homotopy", "plain_vector")


@dataclass
class SoloConfig:
    rank: int
    sparsity: float = 0.0
    span: int = 1
    dropout_rate: float = 0.1
    lambda_init: float = 0.001
    codec_trainable: bool = True
    gate_variant: str = "homotopy"

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.span < 1:
            raise ConfigError(f"span must be >= 1, got {self.span}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0.0 <= self.lambda_init <= 1.0:
            raise ConfigError(f"lambda_init must be in [0, 1], got {self.lambda_init}")
        if self.gate_variant not in GATE_VARIANTS:
            raise ConfigError(f"gate_variant must be one of {GATE_VARIANTS}, got {self.gate_variant!r}")


def plan_placement(n_layers: int, span: int) -> list[tuple[int, int]]:
    """Choose which block groups receive a connection.

    Returns (input_index, placement_index) pairs: the connection reads the
    output of block input_index (the stream entering block input_index+1)
    and adds to the output of block placement_index. Groups of ``span``
    consecutive blocks start at block 2 and are separated by one untouched
    block, so span=1 lands on {2, 4, ..., n_layers-2}.
    """
    if span < 1:
        raise ConfigError(f"span must be >= 1, got {span}")
    if n_layers < span + 2:
        raise ConfigError(f"n_layers={n_layers} too small for span={span} (need >= span+2)")
    plan = []
    start = 2
    while start + span - 1 <= n_layers - 2:
        placement = start + span - 1
        plan.append((placement - span, placement))
        start += span + 1
    return plan


class HomotopyGate:
    """Bounded interpolation gate: output = lam * v (.) z, lam kept in [0, 1]."""

    def __init__(self, d: int, lambda_init: float, name: str):
        self.lam = Tensor(np.asarray(float(lambda_init)), True, name + ".lam")
        self.v = Tensor(np.ones(d), True, name + ".v")

    def __call__(self, z: Tensor) -> Tensor:
        return mul(self.lam, mul(self.v, z))

    def clamp(self) -> None:
        np.clip(self.lam.data, 0.0, 1.0, out=self.lam.data)


class PlainVectorGate:
    """Unbounded vector gate: output = v (.) z, v randomly initialized."""

    def __init__(self, d: int, rng: np.random.Generator, name: str):
        self.v = Tensor(rng.normal(0.0, math.sqrt(2.0 / d), size=d), True, name + ".v")

    def __call__(self, z: Tensor) -> Tensor:
        return mul(self.v, z)


def homotopy_gate(gate: HomotopyGate, z: Tensor) -> Tensor:
    return gate(z)


def gate_variant_forward(gate: PlainVectorGate, z: Tensor) -> Tensor:
    return gate(z)


class SharedCodec:
    """The single masked encoder/decoder weight pair shared by all connections.

    Masked entries are exactly 0.0 in the stored weights at all times; the
    mask is applied multiplicatively in the forward pass so masked slots
    also receive exactly zero gradient.
    """

    def __init__(self, d: int, rank: int, sparsity: float, trainable: bool, rng: np.random.Generator):
        self.d = d
        self.rank = rank
        self.sparsity = sparsity
        self.trainable = trainable
        kept = kept_count(d, rank, sparsity)

        def mask(shape):
            m = np.zeros(shape[0] * shape[1])
            keep_idx = rng.permutation(m.size)[:kept]
            m[keep_idx] = 1.0
            return m.reshape(shape)

        self.m_enc = Tensor(mask((d, rank)), False, "codec.m_enc")
        self.m_dec = Tensor(mask((rank, d)), False, "codec.m_dec")
        w_enc = rng.normal(0.0, math.sqrt(2.0 / d), size=(d, rank)) * self.m_enc.data
        w_dec = rng.normal(0.0, math.sqrt(2.0 / rank), size=(rank, d)) * self.m_dec.data
        self.w_enc = Tensor(w_enc, trainable, "codec.w_enc")
        self.w_dec = Tensor(w_dec, trainable, "codec.w_dec")

    def encode(self, x: Tensor) -> Tensor:
        return matmul(x, mul(self.w_enc, self.m_enc))

    def decode(self, e: Tensor) -> Tensor:
        return matmul(e, mul(self.w_dec, self.m_dec))

    def rezero_masked(self) -> None:
        self.w_enc.data *= self.m_enc.data
        self.w_dec.data *= self.m_dec.data


class SoloConnection:
    def __init__(self, input_index: int, placement_index: int, rank: int, d: int,
                 gate_variant: str, lambda_init: float, rng: np.random.Generator, name: str):
        self.input_index = input_index
        self.placement_index = placement_index
        self.b = Tensor(np.zeros(rank), True, name + ".b")
        if gate_variant == "homotopy":
            self.gate = HomotopyGate(d, lambda_init, name)
        else:
            self.gate = PlainVectorGate(d, rng, name)

    @property
    def span(self) -> int:
        return self.placement_index - self.input_index


def solo_forward(conn: SoloConnection, codec: SharedCodec, x: Tensor,
                 training: bool = False, dropout_rate: float = 0.0, rng=None) -> Tensor:
    """The adapter path: gate(decode(encode(dropout(x)) + b))."""
    if x.data.ndim != 2 or x.data.shape[1] != codec.d:
        raise DimensionError(f"adapter input shape {x.data.shape} does not end in d={codec.d}")
    z = dropout(x, dropout_rate, training, rng)
    e = codec.encode(z) + conn.b
    return conn.gate(codec.decode(e))


class SoloAdapterSet:
    kind = "solo"

    def __init__(self, config: SoloConfig, codec: SharedCodec,
                 connections: list[SoloConnection], plan: list[tuple[int, int]], d_model: int):
        self.config = config
        self.codec = codec
        self.connections = connections
        self.plan = plan
        self.d_model = d_model
        if len(connections) != len(plan):
            raise ConfigError(
                f"connection count {len(connections)} does not match plan length {len(plan)}"
            )

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.codec.trainable:
            out.append(("codec.w_enc", self.codec.w_enc))
            out.append(("codec.w_dec", self.codec.w_dec))
        for i, conn in enumerate(self.connections):
            out.append((f"conn{i}.b", conn.b))
            if isinstance(conn.gate, HomotopyGate):
                out.append((f"conn{i}.v", conn.gate.v))
                out.append((f"conn{i}.lam", conn.gate.lam))
            else:
                out.append((f"conn{i}.v", conn.gate.v))
        return out

    def trainable_group_counts(self) -> dict[str, int]:
        counts = {"codec": 0, "encoding_vectors": 0, "gate_vectors": 0, "lambdas": 0}
        if self.codec.trainable:
            counts["codec"] = int(self.codec.m_enc.data.sum() + self.codec.m_dec.data.sum())
        for conn in self.connections:
            counts["encoding_vectors"] += conn.b.data.size
            counts["gate_vectors"] += conn.gate.v.data.size
            if isinstance(conn.gate, HomotopyGate):
                counts["lambdas"] += 1
        return counts

    def lambda_summary(self) -> tuple[float, float, float]:
        lams = [float(c.gate.lam.data) for c in self.connections if isinstance(c.gate, HomotopyGate)]
        if not lams:
            return (math.nan, math.nan, math.nan)
        return (min(lams), sum(lams) / len(lams), max(lams))

    def constraints(self) -> list:
        """Post-optimizer-step hooks: re-zero masked codec slots, clamp gates."""
        hooks = [self.codec.rezero_masked]
        for conn in self.connections:
            if isinstance(conn.gate, HomotopyGate):
                hooks.append(conn.gate.clamp)
        return hooks

    def connection_at(self, block_index: int) -> SoloConnection | None:
        for conn in self.connections:
            if conn.placement_index == block_index:
                return conn
        return None

    def without_connection(self, index: int) -> "SoloAdapterSet":
        """A view of this set minus one connection (same codec, same tensors)."""
        clone = copy.copy(self)
        clone.connections = [c for i, c in enumerate(self.connections) if i != index]
        clone.plan = [p for i, p in enumerate(self.plan) if i != index]
        return clone


def build_adapter_set(model_cfg: ModelConfig, solo_cfg: SoloConfig, seed: int) -> SoloAdapterSet:
    """Construct codec, masks, and per-connection state from one seed."""
    rng = substream(seed, "adapter-init")
    plan = plan_placement(model_cfg.n_layers, solo_cfg.span)
    d = model_cfg.d_model
    codec = SharedCodec(d, solo_cfg.rank, solo_cfg.sparsity, solo_cfg.codec_trainable, rng)
    connections = [
        SoloConnection(inp, place, solo_cfg.rank, d, solo_cfg.gate_variant,
                       solo_cfg.lambda_init, rng, f"conn{i}")
        for i, (inp, place) in enumerate(plan)
    ]
    return SoloAdapterSet(solo_cfg, codec, connections, plan, d)


def apply_block_with_solo(model: MiniGptModel, aset: SoloAdapterSet, block_index: int,
                          x: Tensor, training: bool = False, rng=None, mask=None) -> Tensor:
    """Run the block group ending at block_index, adding the adapter signal.

    The adapter reads the stream entering the group (x here) and its output
    is added to the last spanned block's output. Without a connection at
    block_index this is a plain single-block forward.
    """
    conn = aset.connection_at(block_index)
    if conn is None:
        return block_forward(model.blocks[block_index], x, model, training, rng, mask=mask)
    tap = x
    for j in range(conn.input_index + 1, conn.placement_index + 1):
        x = block_forward(model.blocks[j], x, model, training, rng, mask=mask)
    return x + solo_forward(conn, aset.codec, tap, training, aset.config.dropout_rate, rng)


def adapted_forward(model: MiniGptModel, aset: SoloAdapterSet, tokens,
                    training: bool = False, rng=None, mask=None, pos_ids=None) -> Tensor:
    """Full forward pass with every planned connection wired in."""
    by_start = {conn.input_index + 1: conn for conn in aset.connections}
    x = embed(model, tokens, training, rng, pos_ids)
    i = 0
    while i < model.cfg.n_layers:
        conn = by_start.get(i)
        if conn is None:
            x = block_forward(model.blocks[i], x, model, training, rng, mask=mask)
            i += 1
        else:
            x = apply_block_with_solo(model, aset, conn.placement_index, x, training, rng, mask=mask)
            i = conn.placement_index + 1
    return finalize(model, x)


# ---------------------------------------------------------------------------
# low-rank attention baseline
# ---------------------------------------------------------------------------

class LoraPair:
    def __init__(self, d: int, rank: int, rng: np.random.Generator, name: str):
        self.a = Tensor(rng.normal(0.0, math.sqrt(2.0 / d), size=(d, rank)), True, name + ".a")
        self.b = Tensor(np.zeros((rank, d)), True, name + ".b")

    def delta(self, h: Tensor, scaling: float) -> Tensor:
        return matmul(matmul(h, self.a), self.b) * scaling


class LoraAdapterSet:
    """Per-block additive low-rank updates on the attention Q and V projections."""

    kind = "lora"

    def __init__(self, d_model: int, n_blocks: int, rank: int, alpha: float, seed: int):
        if rank < 1:
            raise ConfigError(f"rank must be >= 1, got {rank}")
        rng = substream(seed, "lora-init")
        self.d_model = d_model
        self.n_blocks = n_blocks
        self.rank = rank
        self.alpha = float(alpha)
        self.scaling = self.alpha / rank
        self.pairs = {}
        for i in range(n_blocks):
            self.pairs[(i, "q")] = LoraPair(d_model, rank, rng, f"lora{i}.q")
            self.pairs[(i, "v")] = LoraPair(d_model, rank, rng, f"lora{i}.v")

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for (i, kind), pair in sorted(self.pairs.items()):
            out.append((f"lora{i}.{kind}.a", pair.a))
            out.append((f"lora{i}.{kind}.b", pair.b))
        return out

    def trainable_group_counts(self) -> dict[str, int]:
        a = sum(p.a.data.size for p in self.pairs.values())
        b = sum(p.b.data.size for p in self.pairs.values())
        return {"lora_a": a, "lora_b": b}

    def qv_delta(self, block_index: int):
        def hook(kind: str, h: Tensor):
            pair = self.pairs.get((block_index, kind))
            if pair is None:
                return None
            return pair.delta(h, self.scaling)
        return hook

    def constraints(self) -> list:
        return []

    def lambda_summary(self) -> tuple[float, float, float]:
        return (math.nan, math.nan, math.nan)


def lora_baseline_attach(model: MiniGptModel, rank: int, alpha: float, seed: int = 0) -> LoraAdapterSet:
    """Freeze the base and attach zero-initialized low-rank attention updates."""
    freeze_base(model)
    return LoraAdapterSet(model.cfg.d_model, model.cfg.n_layers, rank, alpha, seed)


def lora_forward(model: MiniGptModel, lset: LoraAdapterSet, tokens,
                 training: bool = False, rng=None, mask=None, pos_ids=None) -> Tensor:
    x = embed(model, tokens, training, rng, pos_ids)
    for i, block in enumerate(model.blocks):
        x = block_forward(block, x, model, training, rng, qv_delta=lset.qv_delta(i), mask=mask)
    return finalize(model, x)


def logit_perturbation(model: MiniGptModel, aset, probe_seqs) -> float:
    """Mean relative Frobenius change the adapter set causes in base logits.

    Used to quantify how gently an adapter initializes: near zero for the
    bounded gate at its default init, large for the unbounded vector gate.
    """
    from .model import model_forward
    from .tensor import no_grad

    ratios = []
    with no_grad():
        for toks in probe_seqs:
            base = model_forward(model, toks).data
            if isinstance(aset, LoraAdapterSet):
                adapted = lora_forward(model, aset, toks).data
            else:
                adapted = adapted_forward(model, aset, toks).data
            ratios.append(float(np.linalg.norm(adapted - base) / np.linalg.norm(base)))
    return float(np.mean(ratios))
