"""Pretrain -> freeze -> fine-tune pipeline with metrics and checkpointing.

One run = one model, one tuning mode, one task, one seed. Metrics stream to
a JSON-lines file, one record per eval point; checkpoints use the binary
container from ``checkpoint``. Everything observable is a pure function of
(config, seed) except wall_clock, which is excluded from stream checksums.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .adapters import (
    LoraAdapterSet,
    SoloAdapterSet,
    SoloConfig,
    adapted_forward,
    build_adapter_set,
    lora_baseline_attach,
    lora_forward,
)
from .config import RunConfig
from .errors import CheckpointGeometryError, ConfigError, NumericError
from .model import MiniGptModel, ModelConfig, freeze_base, model_forward, unfreeze_base
from .optim import AdamW
from .params import enumerate_trainables
from .rng import RngStreams
from .tasks import TaskSampler
from .tensor import Tensor, backward, cross_entropy, no_grad


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    lam_min: float
    lam_mean: float
    lam_max: float
    wall_clock: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def metrics_checksum(path) -> str:
    """Checksum of a metrics stream over its deterministic fields."""
    h = hashlib.sha256()
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        rec.pop("wall_clock", None)
        h.update(json.dumps(rec, sort_keys=True).encode())
    return h.hexdigest()


def load_metrics(path) -> list[MetricsRecord]:
    return [MetricsRecord(**json.loads(line)) for line in Path(path).read_text().splitlines()]


def _forward_for_mode(model, adapters, tokens, training, rng, mask=None, pos_ids=None):
    if isinstance(adapters, SoloAdapterSet):
        return adapted_forward(model, adapters, tokens, training, rng, mask=mask, pos_ids=pos_ids)
    if isinstance(adapters, LoraAdapterSet):
        return lora_forward(model, adapters, tokens, training, rng, mask=mask, pos_ids=pos_ids)
    return model_forward(model, tokens, training, rng, mask=mask, pos_ids=pos_ids)


def _pack(model, batch):
    """Concatenate same-length examples into one forward pass; a block-diagonal
    causal mask keeps the segments independent."""
    seg = batch[0][0].size - 1
    if any(tokens.size - 1 != seg for tokens, _ in batch):
        return None
    ids = np.concatenate([tokens[:-1] for tokens, _ in batch])
    targets = np.concatenate([tokens[1:] for tokens, _ in batch])
    weights = np.concatenate([m for _, m in batch])
    pos_ids = np.tile(np.arange(seg), len(batch))
    mask = model.packed_causal_mask(len(batch), seg)
    return ids, targets, weights, pos_ids, mask


def batch_loss(model, adapters, batch, training: bool, rng) -> Tensor:
    """Mean masked cross-entropy over a batch (packed when lengths agree)."""
    packed = _pack(model, batch)
    if packed is not None:
        ids, targets, weights, pos_ids, mask = packed
        logits = _forward_for_mode(model, adapters, ids, training, rng, mask, pos_ids)
        return cross_entropy(logits, targets, weights)
    total = None
    for tokens, m in batch:
        loss = cross_entropy(
            _forward_for_mode(model, adapters, tokens[:-1], training, rng), tokens[1:], m)
        total = loss if total is None else total + loss
    return total * (1.0 / len(batch))


EVAL_CHUNK = 8


def evaluate(model, adapters, eval_set) -> tuple[float, float]:
    """Masked-position mean loss and token accuracy over a fixed example list."""
    nll_sum = 0.0
    nll_count = 0.0
    correct = 0
    counted = 0
    with no_grad():
        for at in range(0, len(eval_set), EVAL_CHUNK):
            chunk = eval_set[at:at + EVAL_CHUNK]
            packed = _pack(model, chunk)
            if packed is not None:
                ids, targets, weights, pos_ids, mask = packed
                logits = _forward_for_mode(model, adapters, ids, False, None, mask, pos_ids)
                nll_sum += float(cross_entropy(logits, targets, weights).data) * weights.sum()
                nll_count += weights.sum()
                pred = logits.data.argmax(axis=-1)
                sel = weights > 0
                correct += int((pred[sel] == targets[sel]).sum())
                counted += int(sel.sum())
            else:
                for tokens, m in chunk:
                    logits = _forward_for_mode(model, adapters, tokens[:-1], False, None)
                    nll_sum += float(cross_entropy(logits, tokens[1:], m).data) * m.sum()
                    nll_count += m.sum()
                    pred = logits.data.argmax(axis=-1)
                    sel = m > 0
                    correct += int((pred[sel] == tokens[1:][sel]).sum())
                    counted += int(sel.sum())
    return nll_sum / max(1.0, nll_count), correct / max(1, counted)


class Run:
    """Shared machinery for pretraining and fine-tuning loops."""

    def __init__(self, cfg: RunConfig, model: MiniGptModel, adapters, out_dir, tag: str):
        self.cfg = cfg
        self.model = model
        self.adapters = adapters
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.tag = tag
        self.streams = RngStreams(cfg.seed)
        self.sampler = TaskSampler(cfg.task)
        self.eval_set = self.sampler.eval_set(cfg.eval.size, cfg.seed)
        self.metrics_path = self.out_dir / f"{tag}-metrics.jsonl"
        self.records: list[MetricsRecord] = []

    def trainables(self):
        out = list(self.model.trainable_parameters())
        if self.adapters is not None:
            out.extend(self.adapters.parameters())
        return out

    def _lambda_summary(self):
        if isinstance(self.adapters, SoloAdapterSet):
            return self.adapters.lambda_summary()
        return (math.nan, math.nan, math.nan)

    def _record(self, step: int, train_loss: float, t0: float, fh) -> MetricsRecord:
        eval_loss, eval_acc = evaluate(self.model, self.adapters, self.eval_set)
        lam_min, lam_mean, lam_max = self._lambda_summary()
        rec = MetricsRecord(
            step=step,
            train_loss=round(train_loss, 10),
            eval_loss=round(eval_loss, 10),
            eval_accuracy=round(eval_acc, 10),
            lam_min=round(lam_min, 10) if not math.isnan(lam_min) else math.nan,
            lam_mean=round(lam_mean, 10) if not math.isnan(lam_mean) else math.nan,
            lam_max=round(lam_max, 10) if not math.isnan(lam_max) else math.nan,
            wall_clock=round(time.monotonic() - t0, 6),
        )
        self.records.append(rec)
        fh.write(rec.to_json() + "\n")
        fh.flush()
        return rec

    def train(self) -> list[MetricsRecord]:
        cfg = self.cfg
        params = self.trainables()
        constraints = self.adapters.constraints() if self.adapters is not None else []
        opt = AdamW(
            params,
            lr=cfg.optim.learning_rate,
            weight_decay=cfg.optim.weight_decay,
            betas=(cfg.optim.beta1, cfg.optim.beta2),
            eps=cfg.optim.eps,
            warmup_steps=cfg.optim.warmup_steps,
            post_step=constraints,
        ) if params else None

        data_rng = self.streams.stream("data")
        drop_rng = self.streams.stream("dropout")
        t0 = time.monotonic()
        with open(self.metrics_path, "w") as fh:
            rec = self._record(0, math.nan, t0, fh)
            stop = cfg.optim.stop_eval_loss
            if stop is not None and rec.eval_loss < stop:
                return self.records
            for step in range(1, cfg.optim.steps + 1):
                batch = self.sampler.batch(data_rng, cfg.optim.batch_size)
                train_loss = math.nan
                if opt is not None:
                    loss = batch_loss(self.model, self.adapters, batch, True, drop_rng)
                    train_loss = float(loss.data)
                    if not math.isfinite(train_loss):
                        raise NumericError(f"training diverged at step {step}: loss={train_loss}")
                    opt.zero_grad()
                    backward(loss)
                    opt.step()
                if step % cfg.eval.interval == 0 or step == cfg.optim.steps:
                    rec = self._record(step, train_loss, t0, fh)
                    if stop is not None and rec.eval_loss < stop:
                        break
        return self.records


def _base_config_echo(mcfg: ModelConfig, task_kind: Optional[str] = None) -> dict:
    echo = asdict(mcfg)
    if task_kind is not None:
        echo["pretrain_task"] = task_kind
    return echo


def save_base_checkpoint(model: MiniGptModel, path, task_kind: Optional[str] = None) -> None:
    ckpt.write_checkpoint(
        path, "base", _base_config_echo(model.cfg, task_kind),
        [(name, p.data) for name, p in model.parameters()],
    )


def load_base_checkpoint(path) -> MiniGptModel:
    loaded = ckpt.read_checkpoint(path)
    if loaded.kind not in ("base", "full_ft"):
        raise CheckpointGeometryError(f"{path}: expected a base-model checkpoint, got kind {loaded.kind!r}")
    cfg_echo = dict(loaded.config)
    cfg_echo.pop("pretrain_task", None)
    mcfg = ModelConfig(**cfg_echo)
    model = MiniGptModel(mcfg, seed=0)
    for name, p in model.parameters():
        if name not in loaded.tensors:
            raise CheckpointGeometryError(f"{path}: missing tensor {name!r}")
        arr = loaded.tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointGeometryError(
                f"{path}: tensor {name!r} has shape {arr.shape}, model wants {p.data.shape}"
            )
        p.data[...] = arr
    return model


def save_adapter_checkpoint(adapters, model_cfg: ModelConfig, path) -> None:
    if isinstance(adapters, SoloAdapterSet):
        cfg = asdict(adapters.config)
        cfg["d_model"] = adapters.d_model
        cfg["n_layers"] = model_cfg.n_layers
        tensors = [
            ("codec.w_enc", adapters.codec.w_enc.data),
            ("codec.w_dec", adapters.codec.w_dec.data),
            ("codec.m_enc", adapters.codec.m_enc.data),
            ("codec.m_dec", adapters.codec.m_dec.data),
        ]
        for i, conn in enumerate(adapters.connections):
            tensors.append((f"conn{i}.b", conn.b.data))
            tensors.append((f"conn{i}.v", conn.gate.v.data))
            if hasattr(conn.gate, "lam"):
                tensors.append((f"conn{i}.lam", conn.gate.lam.data))
        ckpt.write_checkpoint(path, "solo", cfg, tensors)
    elif isinstance(adapters, LoraAdapterSet):
        cfg = {
            "rank": adapters.rank, "alpha": adapters.alpha,
            "d_model": adapters.d_model, "n_layers": adapters.n_blocks,
        }
        tensors = [(name, p.data) for name, p in adapters.parameters()]
        ckpt.write_checkpoint(path, "lora", cfg, tensors)
    elif adapters is None:
        ckpt.write_checkpoint(path, "frozen", {}, [])
    else:
        raise ConfigError(f"cannot checkpoint adapter set of type {type(adapters).__name__}")


def load_adapter_checkpoint(path, model: MiniGptModel):
    """Rebuild an adapter set from file and validate it against the model."""
    loaded = ckpt.read_checkpoint(path)
    if loaded.kind == "frozen":
        return None
    if loaded.kind == "solo":
        cfg = dict(loaded.config)
        d = cfg.pop("d_model")
        n_layers = cfg.pop("n_layers")
        if d != model.cfg.d_model or n_layers != model.cfg.n_layers:
            raise CheckpointGeometryError(
                f"{path}: adapter built for d={d}, L={n_layers}; "
                f"model has d={model.cfg.d_model}, L={model.cfg.n_layers}"
            )
        scfg = SoloConfig(**cfg)
        aset = build_adapter_set(model.cfg, scfg, seed=0)
        aset.codec.m_enc.data[...] = loaded.tensors["codec.m_enc"]
        aset.codec.m_dec.data[...] = loaded.tensors["codec.m_dec"]
        aset.codec.w_enc.data[...] = loaded.tensors["codec.w_enc"]
        aset.codec.w_dec.data[...] = loaded.tensors["codec.w_dec"]
        for i, conn in enumerate(aset.connections):
            conn.b.data[...] = loaded.tensors[f"conn{i}.b"]
            conn.gate.v.data[...] = loaded.tensors[f"conn{i}.v"]
            if hasattr(conn.gate, "lam"):
                conn.gate.lam.data[...] = loaded.tensors[f"conn{i}.lam"]
        return aset
    if loaded.kind == "lora":
        cfg = loaded.config
        if cfg["d_model"] != model.cfg.d_model or cfg["n_layers"] != model.cfg.n_layers:
            raise CheckpointGeometryError(
                f"{path}: adapter built for d={cfg['d_model']}, L={cfg['n_layers']}; "
                f"model has d={model.cfg.d_model}, L={model.cfg.n_layers}"
            )
        lset = LoraAdapterSet(cfg["d_model"], cfg["n_layers"], cfg["rank"], cfg["alpha"], seed=0)
        for name, p in lset.parameters():
            p.data[...] = loaded.tensors[name]
        return lset
    raise CheckpointGeometryError(f"{path}: unknown adapter kind {loaded.kind!r}")


@dataclass
class RunSummary:
    mode: str
    steps: int
    initial_eval_loss: float
    final_eval_loss: float
    final_eval_accuracy: float
    trainable_count: int
    total_param_count: int
    checkpoint_path: str
    metrics_path: str
    metrics_checksum: str
    lam_final: tuple[float, float, float]


def pretrain(cfg: RunConfig, out_dir) -> RunSummary:
    """Train the base model from scratch (full fine-tune mode) and save it."""
    if cfg.mode != "full_ft":
        raise ConfigError(f"pretrain requires mode=full_ft, got {cfg.mode!r}")
    model = MiniGptModel(cfg.model, seed=cfg.seed)
    run = Run(cfg, model, None, out_dir, tag="pretrain")
    run.train()
    base_path = Path(out_dir) / "base.ckpt"
    save_base_checkpoint(model, base_path, task_kind=cfg.task.kind)
    return _summary(cfg, run, model, None, base_path)


def finetune(cfg: RunConfig, base_path, out_dir) -> RunSummary:
    """Adapt a frozen base per cfg.mode and emit an adapter checkpoint."""
    model = load_base_checkpoint(base_path)
    if cfg.model != model.cfg:
        raise ConfigError(
            f"run config geometry {cfg.model} does not match base checkpoint {model.cfg}"
        )
    # adapter tuning on the base's own pretraining task is a no-op experiment
    pretrain_task = ckpt.read_checkpoint(base_path).config.get("pretrain_task")
    if cfg.mode in ("solo", "lora") and pretrain_task == cfg.task.kind:
        raise ConfigError(
            f"fine-tune task {cfg.task.kind!r} equals the base's pretraining task; "
            f"adaptation needs a different task"
        )
    adapters = None
    if cfg.mode == "full_ft":
        unfreeze_base(model)
    elif cfg.mode == "frozen":
        freeze_base(model)
    elif cfg.mode == "solo":
        freeze_base(model)
        adapters = build_adapter_set(cfg.model, cfg.solo, cfg.seed)
    elif cfg.mode == "lora":
        adapters = lora_baseline_attach(model, cfg.lora.rank, cfg.lora.alpha, cfg.seed)

    run = Run(cfg, model, adapters, out_dir, tag=f"finetune-{cfg.mode}")
    run.train()
    out_path = Path(out_dir) / f"adapter-{cfg.mode}.ckpt"
    if cfg.mode == "full_ft":
        out_path = Path(out_dir) / "full-ft.ckpt"
        ckpt.write_checkpoint(out_path, "full_ft", _base_config_echo(model.cfg),
                              [(name, p.data) for name, p in model.parameters()])
    else:
        save_adapter_checkpoint(adapters, model.cfg, out_path)
    return _summary(cfg, run, model, adapters, out_path)


def _summary(cfg: RunConfig, run: Run, model, adapters, out_path) -> RunSummary:
    budget = enumerate_trainables(model, adapters)
    first, last = run.records[0], run.records[-1]
    return RunSummary(
        mode=cfg.mode,
        steps=last.step,
        initial_eval_loss=first.eval_loss,
        final_eval_loss=last.eval_loss,
        final_eval_accuracy=last.eval_accuracy,
        trainable_count=budget.enumerated_total,
        total_param_count=model.total_param_count(),
        checkpoint_path=str(out_path),
        metrics_path=str(run.metrics_path),
        metrics_checksum=metrics_checksum(run.metrics_path),
        lam_final=(last.lam_min, last.lam_mean, last.lam_max),
    )


def evaluate_checkpoint(cfg: RunConfig, base_path, adapter_path=None) -> tuple[float, float]:
    """Eval loss/accuracy of a saved base (plus optional adapter) on cfg.task."""
    model = load_base_checkpoint(base_path)
    freeze_base(model)
    adapters = load_adapter_checkpoint(adapter_path, model) if adapter_path else None
    sampler = TaskSampler(cfg.task)
    eval_set = sampler.eval_set(cfg.eval.size, cfg.seed)
    return evaluate(model, adapters, eval_set)


def swap_test(base_path, adapter_a, adapter_b, cycles: int = 3,
              probes: int = 8, probe_len: int = 16, seed: int = 0) -> tuple[bool, str]:
    """Alternately attach two adapters to one frozen base; each must reproduce
    its own probe logits bit-exactly on every cycle."""
    from .rng import substream

    model = load_base_checkpoint(base_path)
    freeze_base(model)
    rng = substream(seed, "swap-probes")
    probe_seqs = [
        rng.integers(0, model.cfg.vocab_size, size=probe_len) for _ in range(probes)
    ]

    def fingerprint(adapter_path):
        adapters = load_adapter_checkpoint(adapter_path, model)
        out = []
        with no_grad():
            for toks in probe_seqs:
                out.append(_forward_for_mode(model, adapters, toks, False, None).data.tobytes())
        return out

    reference = {path: fingerprint(path) for path in (adapter_a, adapter_b)}
    for cycle in range(cycles):
        for path in (adapter_a, adapter_b):
            got = fingerprint(path)
            if got != reference[path]:
                return False, f"cycle {cycle + 1}: logits diverged for {path}"
    return True, f"{cycles} swap cycles reproduced both adapters' probe logits bit-exactly"
