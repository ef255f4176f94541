"""FastAPI application exposing the forecasting engine.

Endpoints wrap the core package one-to-one: synthetic data generation,
offline pretraining, the experiment matrix (plus the two preconfigured
study variants), and the numerics verification suite.  Payloads carry
data inline (CSV text, JSON checkpoints) so the service stays stateless
and clients own all file I/O.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..continual import StrategyKind, pretrain
from ..data import (
    ContextMode,
    PeriodSplit,
    gen_synthetic,
    normalize,
    scenario_from_dict,
    scenario_preset,
)
from ..errors import DriftcastError
from ..harness import (
    ExperimentConfig,
    aggregate_seeds,
    config_from_payload,
    run_experiment,
    run_gradcheck,
    steps_csv_text,
    summary_csv_text,
    summary_payload,
)
from ..tcn import TcnConfig, checkpoint_hash, model_to_payload, tcn_init
from . import schemas

HOUR = np.timedelta64(1, "h")


def _scenario_from_spec(spec: schemas.ScenarioSpec | str | None, default_preset: str = "default"):
    if spec is None:
        return scenario_preset(default_preset)
    if isinstance(spec, str):
        return scenario_preset(spec)
    payload = spec.to_payload()
    base = scenario_preset(payload.pop("preset")) if payload.get("preset") else None
    return scenario_from_dict(payload, base=base)


def _experiment_config(req: schemas.ExperimentRequest, **overrides) -> ExperimentConfig:
    payload = req.to_payload()
    if req.source == "synthetic":
        payload["scenario"] = vars(_scenario_from_spec(req.scenario))
    payload.update(overrides)
    return config_from_payload(payload)


def _experiment_response(config: ExperimentConfig, deltas_strategy: str | None = None) -> schemas.ExperimentResponse:
    result = run_experiment(config)
    cells = aggregate_seeds(result.reports)
    return schemas.ExperimentResponse(
        config_hash=result.config_hash,
        steps_csv=steps_csv_text(result.reports),
        summary_csv=summary_csv_text(cells),
        summary=summary_payload(result, config, deltas_strategy=deltas_strategy),
        cells=[schemas.SummaryCellModel(**vars(c)) for c in cells],
        failures=[vars(f) for f in result.failures],
        elapsed_seconds=result.elapsed_seconds,
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="driftcast",
        version=__version__,
        description="Continual-learning energy load forecasting service",
    )

    @app.exception_handler(DriftcastError)
    async def _domain_error(_: Request, exc: DriftcastError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/synthetic/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        scenario = _scenario_from_spec(req.scenario)
        frame = gen_synthetic(scenario)
        return schemas.GenerateResponse(
            csv_text=frame.to_csv_text(),
            rows=len(frame),
            start=str(np.datetime_as_string(frame.timestamps[0], unit="s")),
            end=str(np.datetime_as_string(frame.timestamps[-1], unit="s")),
            channel_means={name: float(col.mean()) for name, col in frame.channels.items()},
        )

    @app.post("/pretrain", response_model=schemas.PretrainResponse)
    def pretrain_endpoint(req: schemas.PretrainRequest) -> schemas.PretrainResponse:
        from ..data import align_and_fill, load_csv

        context = ContextMode.parse(req.context)
        if req.source == "synthetic":
            frame = gen_synthetic(_scenario_from_spec(req.scenario))
        elif req.source == "csv":
            if not req.csv_text:
                raise DriftcastError("csv source needs csv_text")
            frame = align_and_fill(load_csv(req.csv_text, is_text=True))
        else:
            raise DriftcastError(f"unknown data source {req.source!r}")
        split = PeriodSplit.by_hours(frame, req.pretrain_hours, req.validation_hours)
        normalized = normalize(frame, split.pretrain)
        cfg = TcnConfig(
            input_channels=len(context.channels()),
            channels=req.channels or 32,
            num_blocks=req.num_blocks or 3,
            kernel_size=req.kernel_size or 3,
            dilations=None if req.dilations is None else tuple(req.dilations),
            lookback=req.lookback or 24,
            horizon=req.horizon or 24,
        )
        lb = cfg.lookback
        result = pretrain(
            tcn_init(cfg, req.seed),
            normalized.subrange(*split.pretrain),
            normalized.subrange(split.validation[0] - (lb - 1) * HOUR, split.validation[1]),
            context,
            epochs=req.pretrain_epochs,
            lr=req.pretrain_lr,
            seed=req.seed,
            batch_size=req.pretrain_batch,
            patience=req.patience,
        )
        payload = model_to_payload(result.model)
        return schemas.PretrainResponse(
            checkpoint=payload,
            checkpoint_hash=checkpoint_hash(payload),
            val_mae=result.val_mae,
            epochs_run=result.epochs_run,
        )

    @app.post("/experiments/run", response_model=schemas.ExperimentResponse)
    def run(req: schemas.ExperimentRequest) -> schemas.ExperimentResponse:
        return _experiment_response(_experiment_config(req))

    @app.post("/experiments/ablate-context", response_model=schemas.ExperimentResponse)
    def ablate_context(req: schemas.ExperimentRequest) -> schemas.ExperimentResponse:
        # the ablation defines its own axes: all four contexts, adaptive model only
        config = _experiment_config(
            req,
            strategies=["fsnet"],
            context_modes=[m.value for m in ContextMode],
        )
        return _experiment_response(config, deltas_strategy=StrategyKind.FSNET.value)

    @app.post("/experiments/compare-strategies", response_model=schemas.ExperimentResponse)
    def compare_strategies(req: schemas.ExperimentRequest) -> schemas.ExperimentResponse:
        config = _experiment_config(req, strategies=[s.value for s in StrategyKind])
        return _experiment_response(config)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
        report = run_gradcheck(trials=req.trials, seed=req.seed, rtol=req.rtol)
        return schemas.GradcheckResponse(
            passed=report.passed,
            trials=report.trials,
            max_rel_err=report.max_rel_err,
            per_op=report.per_op,
            elapsed_seconds=report.elapsed_seconds,
        )

    return app
