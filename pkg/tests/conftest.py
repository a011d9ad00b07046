"""Shared fixtures: one copy-pretrained desk base serves every training test."""

import pytest

from soloconn.adapters import SoloConfig
from soloconn.config import EvalConfig, OptimConfig, RunConfig
from soloconn.model import ModelConfig
from soloconn.tasks import TaskSpec
from soloconn.training import pretrain

DESK = ModelConfig(vocab_size=16, d_model=64, n_layers=12, n_heads=4,
                   d_ff=256, max_seq_len=32)
COPY = TaskSpec(kind="copy", alphabet_size=14, source_len=8, split_seed=1)
REVERSE = TaskSpec(kind="reverse", alphabet_size=14, source_len=8, split_seed=1)
SEED = 7


def desk_run_config(**kw) -> RunConfig:
    defaults = dict(
        mode="full_ft", seed=SEED, model=DESK, task=COPY,
        solo=SoloConfig(rank=16, sparsity=0.6, dropout_rate=0.1),
        optim=OptimConfig(learning_rate=1e-3, steps=3000, batch_size=4),
        eval=EvalConfig(interval=250, size=64),
    )
    defaults.update(kw)
    return RunConfig(**defaults)


@pytest.fixture(scope="session")
def desk_base(tmp_path_factory):
    """Copy-pretrained desk base shared by the desk-scale training tests."""
    import time
    out = tmp_path_factory.mktemp("desk-base")
    t0 = time.monotonic()
    summary = pretrain(desk_run_config(), out)
    elapsed = time.monotonic() - t0
    assert summary.final_eval_accuracy > 0.95, (
        f"pretraining regression: copy accuracy {summary.final_eval_accuracy} <= 0.95"
    )
    return {"out": out, "base": out / "base.ckpt", "summary": summary, "seconds": elapsed}
