"""Inter-block adapter fine-tuning on a miniature decoder-only transformer."""

import os

# desk-scale matrices: multi-threaded BLAS only adds sync overhead. Applied
# before numpy is first imported; a no-op if the process already loaded it.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from .adapters import (
    SoloAdapterSet,
    SoloConfig,
    SoloConnection,
    apply_block_with_solo,
    adapted_forward,
    build_adapter_set,
    homotopy_gate,
    lora_baseline_attach,
    plan_placement,
    solo_forward,
)
from .model import MiniGptModel, ModelConfig, freeze_base, model_forward, unfreeze_base
from .params import ParamBudget, budget_formula, enumerate_trainables
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "MiniGptModel",
    "ModelConfig",
    "ParamBudget",
    "SoloAdapterSet",
    "SoloConfig",
    "SoloConnection",
    "Tensor",
    "adapted_forward",
    "apply_block_with_solo",
    "backward",
    "budget_formula",
    "build_adapter_set",
    "enumerate_trainables",
    "freeze_base",
    "homotopy_gate",
    "lora_baseline_attach",
    "model_forward",
    "no_grad",
    "plan_placement",
    "solo_forward",
    "unfreeze_base",
]
