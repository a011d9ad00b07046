"""Ablation grids: one fine-tuning run per cell of a hyperparameter product.

A grid shares a single pretrained base; each cell gets its own seed
substream, so results are a pure function of (grid config, seed) and
independent of execution order. Cell failures are isolated: a failed cell
becomes a row with status="failed", never an aborted grid (degenerate
configurations are data, not crashes).
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .adapters import SoloConfig, build_adapter_set, logit_perturbation
from .config import RunConfig
from .errors import ConfigError, SoloError
from .model import freeze_base
from .params import enumerate_trainables
from .rng import derive_seed, substream
from .training import finetune, load_base_checkpoint, pretrain


@dataclass
class GridSpec:
    base: RunConfig
    ranks: list[int] = field(default_factory=lambda: [8, 32, 128])
    sparsities: list[float] = field(default_factory=lambda: [0.0, 0.6])
    spans: list[int] = field(default_factory=lambda: [1])
    gates: list[str] = field(default_factory=lambda: ["homotopy"])
    codec_trainables: list[bool] = field(default_factory=lambda: [True])
    pretrain_steps: int = 1500
    cell_steps: int = 300
    pretrain_kind: str = "copy"   # cells fine-tune base.task, which must differ

    def __post_init__(self):
        for name in ("ranks", "sparsities", "spans", "gates", "codec_trainables"):
            if not getattr(self, name):
                raise ConfigError(f"grid axis {name!r} must be non-empty")
        if self.pretrain_kind == self.base.task.kind:
            raise ConfigError(
                f"grid pretrain task {self.pretrain_kind!r} must differ from the "
                f"fine-tune task {self.base.task.kind!r}"
            )

    def cells(self) -> list[dict[str, Any]]:
        out = []
        for span in self.spans:
            for gate in self.gates:
                for trainable in self.codec_trainables:
                    for s in self.sparsities:
                        for r in self.ranks:
                            out.append({
                                "rank": r, "sparsity": s, "span": span,
                                "gate_variant": gate, "codec_trainable": trainable,
                            })
        return out


def _cell_key(cell: dict[str, Any]) -> str:
    return (f"r{cell['rank']}-s{cell['sparsity']}-span{cell['span']}"
            f"-{cell['gate_variant']}-codec{int(cell['codec_trainable'])}")


def run_cell(grid: GridSpec, base_path, cell: dict[str, Any], out_dir) -> dict[str, Any]:
    key = _cell_key(cell)
    row: dict[str, Any] = dict(cell)
    row["cell"] = key
    try:
        solo = SoloConfig(
            rank=cell["rank"], sparsity=cell["sparsity"], span=cell["span"],
            gate_variant=cell["gate_variant"], codec_trainable=cell["codec_trainable"],
            dropout_rate=grid.base.solo.dropout_rate,
            lambda_init=grid.base.solo.lambda_init,
        )
        cell_seed = derive_seed(grid.base.seed, f"cell:{key}")
        cfg = dataclasses.replace(
            grid.base, mode="solo", solo=solo, seed=cell_seed,
            optim=dataclasses.replace(grid.base.optim, steps=grid.cell_steps),
        )

        model = load_base_checkpoint(base_path)
        freeze_base(model)
        aset = build_adapter_set(cfg.model, solo, cell_seed)
        probes = [
            substream(cell_seed, "probes").integers(0, cfg.model.vocab_size, size=cfg.task.seq_len - 1)
            for _ in range(4)
        ]
        row["init_perturbation"] = round(logit_perturbation(model, aset, probes), 8)
        budget = enumerate_trainables(model, aset)
        row["params_formula"] = budget.formula_total
        row["params_enumerated"] = budget.enumerated_total

        summary = finetune(cfg, base_path, Path(out_dir) / key)
        row["final_eval_loss"] = summary.final_eval_loss
        row["final_eval_accuracy"] = summary.final_eval_accuracy
        lam_min, lam_mean, lam_max = summary.lam_final
        row["lam_min"], row["lam_mean"], row["lam_max"] = lam_min, lam_mean, lam_max
        row["status"] = "ok"
    except SoloError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_grid(grid: GridSpec, out_dir, base_path=None, workers: int = 1) -> list[dict[str, Any]]:
    """Run every cell; returns rows sorted by (span, gate, codec, sparsity, rank)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if base_path is None:
        pre_cfg = dataclasses.replace(
            grid.base, mode="full_ft",
            task=dataclasses.replace(grid.base.task, kind=grid.pretrain_kind),
            optim=dataclasses.replace(grid.base.optim, steps=grid.pretrain_steps),
        )
        pretrain(pre_cfg, out)
        base_path = out / "base.ckpt"

    cells = grid.cells()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda c: run_cell(grid, base_path, c, out), cells))
    else:
        rows = [run_cell(grid, base_path, c, out) for c in cells]

    rows.sort(key=lambda r: (r["span"], r["gate_variant"], not r["codec_trainable"],
                             r["sparsity"], r["rank"]))
    results_path = out / "results.jsonl"
    with open(results_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(_jsonsafe(row), sort_keys=True) + "\n")
    return rows


def _jsonsafe(row: dict[str, Any]) -> dict[str, Any]:
    clean = {}
    for key, value in row.items():
        if isinstance(value, float) and math.isnan(value):
            clean[key] = None
        else:
            clean[key] = value
    return clean


def format_table(rows: list[dict[str, Any]]) -> str:
    headers = ["cell", "params_formula", "params_enumerated", "init_perturbation",
               "final_eval_loss", "final_eval_accuracy", "lam_mean", "status"]
    widths = {h: len(h) for h in headers}
    rendered = []
    for row in rows:
        r = {}
        for h in headers:
            value = row.get(h)
            if isinstance(value, float):
                r[h] = f"{value:.4g}"
            else:
                r[h] = "" if value is None else str(value)
            widths[h] = max(widths[h], len(r[h]))
        rendered.append(r)
    lines = ["  ".join(h.ljust(widths[h]) for h in headers)]
    lines.append("  ".join("-" * widths[h] for h in headers))
    for r in rendered:
        lines.append("  ".join(r[h].ljust(widths[h]) for h in headers))
    return "\n".join(lines)
