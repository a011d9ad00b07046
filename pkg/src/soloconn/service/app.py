"""FastAPI service wrapping the core package.

One process holds no global training state: every request carries its full
configuration, so the endpoints are safe to call from several clients. Long
operations (train, ablate) run synchronously within the request.
"""

from __future__ import annotations

import math
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..ablation import GridSpec, format_table, run_grid
from ..adapters import build_adapter_set, lora_baseline_attach, plan_placement
from ..config import RunConfig, run_config_from_nested
from ..diagnostics import run_suite, suite_passed
from ..errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    InputError,
    NumericError,
    SoloError,
)
from ..model import MiniGptModel, freeze_base
from ..params import enumerate_trainables
from ..training import (
    RunSummary,
    evaluate_checkpoint,
    finetune,
    pretrain,
    swap_test,
)
from . import schemas as S

USAGE_ERRORS = (ConfigError, DimensionError, InputError, ContractError)
IO_ERRORS = (CheckpointError, OSError)


def _run_config(model: S.RunConfigModel) -> RunConfig:
    return run_config_from_nested(model.model_dump())


def _train_response(summary: RunSummary) -> S.TrainResponse:
    lam_min, lam_mean, lam_max = summary.lam_final
    return S.TrainResponse(
        mode=summary.mode,
        steps=summary.steps,
        initial_eval_loss=summary.initial_eval_loss,
        final_eval_loss=summary.final_eval_loss,
        final_eval_accuracy=summary.final_eval_accuracy,
        trainable_count=summary.trainable_count,
        total_param_count=summary.total_param_count,
        checkpoint_path=summary.checkpoint_path,
        metrics_path=summary.metrics_path,
        metrics_checksum=summary.metrics_checksum,
        lam_min=None if math.isnan(lam_min) else lam_min,
        lam_mean=None if math.isnan(lam_mean) else lam_mean,
        lam_max=None if math.isnan(lam_max) else lam_max,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="soloconn", version=__version__)

    @app.exception_handler(SoloError)
    async def solo_error_handler(request: Request, exc: SoloError):
        if isinstance(exc, USAGE_ERRORS):
            category, status = "usage", 400
        elif isinstance(exc, NumericError):
            category, status = "numeric", 500
        else:
            category, status = "io", 500
        return JSONResponse(
            status_code=status,
            content={"error": {"category": category, "message": str(exc)}},
        )

    @app.exception_handler(OSError)
    async def os_error_handler(request: Request, exc: OSError):
        return JSONResponse(
            status_code=500,
            content={"error": {"category": "io", "message": str(exc)}},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/placement/plan", response_model=S.PlacementResponse)
    def placement(req: S.PlacementRequest):
        plan = plan_placement(req.n_layers, req.span)
        return S.PlacementResponse(connections=plan, count=len(plan))

    @app.post("/params/budget", response_model=S.BudgetResponse)
    def budget(req: S.BudgetRequest):
        from ..params import budget_formula
        return S.BudgetResponse(formula_total=budget_formula(req.d, req.r, req.s, req.n, req.t))

    @app.post("/params/count", response_model=S.CountParamsResponse)
    def count_params(req: S.CountParamsRequest):
        cfg = _run_config(req.config)
        model = MiniGptModel(cfg.model, seed=cfg.seed)
        adapters = None
        if cfg.mode == "solo":
            freeze_base(model)
            adapters = build_adapter_set(cfg.model, cfg.solo, cfg.seed)
        elif cfg.mode == "lora":
            adapters = lora_baseline_attach(model, cfg.lora.rank, cfg.lora.alpha, cfg.seed)
        elif cfg.mode == "frozen":
            freeze_base(model)
        budget = enumerate_trainables(model, adapters)
        return S.CountParamsResponse(
            kind=budget.kind,
            formula_total=budget.formula_total,
            enumerated_total=budget.enumerated_total,
            groups=budget.groups,
            d=budget.d, r=budget.r, s=budget.s, t=budget.t,
            total_model_params=model.total_param_count(),
            table="\n".join(budget.breakdown_lines()),
        )

    @app.post("/gradcheck", response_model=S.GradcheckResponse)
    def gradcheck(req: S.GradcheckRequest):
        results = run_suite(req.tolerance)
        return S.GradcheckResponse(
            passed=suite_passed(results),
            checks=[
                S.GradcheckRow(name=r.name, max_rel_error=r.max_rel_error,
                               tolerance=r.tolerance, passed=r.passed)
                for r in results
            ],
        )

    @app.post("/pretrain", response_model=S.TrainResponse)
    def do_pretrain(req: S.TrainRequest):
        cfg = _run_config(req.config)
        return _train_response(pretrain(cfg, req.out_dir))

    @app.post("/finetune", response_model=S.TrainResponse)
    def do_finetune(req: S.TrainRequest):
        if not req.base_checkpoint:
            raise ConfigError("finetune requires base_checkpoint")
        cfg = _run_config(req.config)
        return _train_response(finetune(cfg, req.base_checkpoint, req.out_dir))

    @app.post("/eval", response_model=S.EvalResponse)
    def do_eval(req: S.EvalRequest):
        cfg = _run_config(req.config)
        loss, acc = evaluate_checkpoint(cfg, req.base_checkpoint, req.adapter_checkpoint)
        return S.EvalResponse(eval_loss=loss, eval_accuracy=acc)

    @app.post("/ablate", response_model=S.AblateResponse)
    def do_ablate(req: S.AblateRequest):
        cfg = _run_config(req.config)
        grid = GridSpec(
            base=cfg,
            ranks=req.ranks, sparsities=req.sparsities, spans=req.spans,
            gates=req.gates, codec_trainables=req.codec_trainables,
            pretrain_steps=req.pretrain_steps, cell_steps=req.cell_steps,
            pretrain_kind=req.pretrain_kind,
        )
        rows = run_grid(grid, req.out_dir, base_path=req.base_checkpoint, workers=req.workers)
        return S.AblateResponse(
            rows=[{k: (None if isinstance(v, float) and math.isnan(v) else v)
                   for k, v in row.items()} for row in rows],
            results_path=str(Path(req.out_dir) / "results.jsonl"),
            table=format_table(rows),
        )

    @app.post("/swap-test", response_model=S.SwapTestResponse)
    def do_swap_test(req: S.SwapTestRequest):
        passed, detail = swap_test(
            req.base_checkpoint, req.adapter_a, req.adapter_b,
            cycles=req.cycles, probes=req.probes, probe_len=req.probe_len, seed=req.seed,
        )
        return S.SwapTestResponse(passed=passed, cycles=req.cycles, detail=detail)

    return app


app = create_app()
