"""Pydantic request/response models for the service API."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class ModelConfigModel(BaseModel):
    vocab_size: int = 16
    d_model: int = 64
    n_layers: int = 12
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 64
    dropout_rate: float = 0.0


class SoloConfigModel(BaseModel):
    rank: int = 16
    sparsity: float = 0.6
    span: int = 1
    dropout_rate: float = 0.1
    lambda_init: float = 0.001
    codec_trainable: bool = True
    gate_variant: str = "homotopy"


class LoraConfigModel(BaseModel):
    rank: int = 4
    alpha: float = 32.0


class OptimConfigModel(BaseModel):
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 1000
    warmup_steps: int = 0
    stop_eval_loss: Optional[float] = None


class TaskSpecModel(BaseModel):
    kind: str = "reverse"
    alphabet_size: int = 14
    source_len: int = 8
    split_seed: int = 0
    shift: int = 3


class EvalConfigModel(BaseModel):
    interval: int = 250
    size: int = 64


class RunConfigModel(BaseModel):
    mode: str = "solo"
    seed: int = 0
    model: ModelConfigModel = Field(default_factory=ModelConfigModel)
    solo: SoloConfigModel = Field(default_factory=SoloConfigModel)
    lora: LoraConfigModel = Field(default_factory=LoraConfigModel)
    optim: OptimConfigModel = Field(default_factory=OptimConfigModel)
    task: TaskSpecModel = Field(default_factory=TaskSpecModel)
    eval: EvalConfigModel = Field(default_factory=EvalConfigModel)


class PlacementRequest(BaseModel):
    n_layers: int
    span: int = 1


class PlacementResponse(BaseModel):
    connections: list[tuple[int, int]]
    count: int


class BudgetRequest(BaseModel):
    d: int
    r: int
    s: float
    n: int = 2
    t: int


class BudgetResponse(BaseModel):
    formula_total: int


class CountParamsRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)


class CountParamsResponse(BaseModel):
    kind: str
    formula_total: int
    enumerated_total: int
    groups: dict[str, int]
    d: int
    r: int
    s: float
    t: int
    total_model_params: int
    table: str


class GradcheckRequest(BaseModel):
    tolerance: float = 1e-4


class GradcheckRow(BaseModel):
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    checks: list[GradcheckRow]


class TrainRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)
    out_dir: str
    base_checkpoint: Optional[str] = None   # required for finetune


class TrainResponse(BaseModel):
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
    lam_min: Optional[float] = None
    lam_mean: Optional[float] = None
    lam_max: Optional[float] = None


class EvalRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)
    base_checkpoint: str
    adapter_checkpoint: Optional[str] = None


class EvalResponse(BaseModel):
    eval_loss: float
    eval_accuracy: float


class AblateRequest(BaseModel):
    config: RunConfigModel = Field(default_factory=RunConfigModel)
    ranks: list[int] = Field(default_factory=lambda: [8, 32, 128])
    sparsities: list[float] = Field(default_factory=lambda: [0.0, 0.6])
    spans: list[int] = Field(default_factory=lambda: [1])
    gates: list[str] = Field(default_factory=lambda: ["homotopy"])
    codec_trainables: list[bool] = Field(default_factory=lambda: [True])
    pretrain_steps: int = 1500
    cell_steps: int = 300
    pretrain_kind: str = "copy"
    out_dir: str
    base_checkpoint: Optional[str] = None
    workers: int = 1


class AblateResponse(BaseModel):
    rows: list[dict[str, Any]]
    results_path: str
    table: str


class SwapTestRequest(BaseModel):
    base_checkpoint: str
    adapter_a: str
    adapter_b: str
    cycles: int = 3
    probes: int = 8
    probe_len: int = 16
    seed: int = 0


class SwapTestResponse(BaseModel):
    passed: bool
    cycles: int
    detail: str


class ErrorBody(BaseModel):
    category: str   # usage | numeric | io
    message: str
