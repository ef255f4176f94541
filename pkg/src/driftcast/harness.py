"""Experiment orchestration: the (context x strategy x seed) matrix.

Each (context, seed) cell pretrains one checkpoint and runs every
strategy from that same checkpoint, so strategy comparisons are paired.
Cells are independent tasks and may run in worker processes; results are
aggregated after a join barrier and written atomically.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tcn as tcn_mod
from .continual import MetricsReport, Strategy, StrategyKind, pretrain, run_online
from .data import (
    ContextMode,
    PeriodSplit,
    ShiftScenario,
    TimeSeriesFrame,
    align_and_fill,
    gen_synthetic,
    load_csv,
    make_windows,
    normalize,
    parse_timestamp,
    scenario_from_dict,
    scenario_preset,
)
from .errors import ConfigError, DataError
from .fsnet import AdaptorConfig, FsnetModel, adaptor_from_payload, adaptor_to_payload
from .numerics import run_gradcheck
from .tcn import TcnConfig, checkpoint_hash, model_to_payload, tcn_init

logger = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "SummaryCell",
    "run_experiment",
    "aggregate_seeds",
    "context_deltas",
    "report_emit",
    "read_summary_csv",
    "parse_experiment_ini",
    "parse_scenario_ini",
    "config_from_payload",
    "config_to_payload",
    "run_gradcheck",
]


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synthetic"  # "synthetic" | "csv"
    scenario: ShiftScenario | None = None
    csv_text: str | None = None
    context_modes: tuple[ContextMode, ...] = (ContextMode.NONE,)
    strategies: tuple[StrategyKind, ...] = (
        StrategyKind.FROZEN,
        StrategyKind.OGD,
        StrategyKind.ER,
        StrategyKind.DERPP,
        StrategyKind.FSNET,
    )
    seeds: tuple[int, ...] = tuple(range(10))
    # split
    pretrain_hours: int = 2160
    validation_hours: int = 2160
    boundary: str | None = None  # ISO; defaults to the scenario onset
    # model
    channels: int = 32
    num_blocks: int = 3
    kernel_size: int = 3
    dilations: tuple[int, ...] | None = None
    lookback: int = 24
    horizon: int = 24
    # training
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.05
    pretrain_batch: int = 64
    patience: int = 5
    online_lr: float | None = None  # defaults to 0.3 * pretrain_lr
    # replay strategies
    buffer_capacity: int = 500
    replay_batch: int = 8
    derpp_a_logit: float = 0.5
    derpp_b_label: float = 0.5
    # fsnet sidecar
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    workers: int = 1

    def validate(self) -> None:
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.source!r}; expected 'synthetic' or 'csv'")
        if self.source == "synthetic" and self.scenario is None:
            raise ConfigError("synthetic source needs a scenario")
        if self.source == "csv" and not self.csv_text:
            raise ConfigError("csv source needs csv data")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.context_modes:
            raise ConfigError("at least one context mode is required")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.adaptor.validate()
        self.model_config(ContextMode.NONE).validate()
        for kind in self.strategies:
            self.strategy_for(kind).validate()

    def model_config(self, context: ContextMode) -> TcnConfig:
        return TcnConfig(
            input_channels=len(context.channels()),
            channels=self.channels,
            num_blocks=self.num_blocks,
            kernel_size=self.kernel_size,
            dilations=self.dilations,
            lookback=self.lookback,
            horizon=self.horizon,
        )

    def resolved_online_lr(self) -> float:
        return self.online_lr if self.online_lr is not None else 0.3 * self.pretrain_lr

    def strategy_for(self, kind: StrategyKind) -> Strategy:
        lr = self.resolved_online_lr()
        if kind in (StrategyKind.ER, StrategyKind.DERPP):
            extra = (
                {"a_logit": self.derpp_a_logit, "b_label": self.derpp_b_label}
                if kind is StrategyKind.DERPP
                else {}
            )
            return Strategy(kind, lr=lr, buffer_capacity=self.buffer_capacity, replay_batch=self.replay_batch, **extra)
        return Strategy(kind, lr=lr)


def config_to_payload(config: ExperimentConfig) -> dict:
    payload = {
        "source": config.source,
        "scenario": None if config.scenario is None else vars(config.scenario).copy(),
        "csv_text": config.csv_text,
        "context_modes": [m.value for m in config.context_modes],
        "strategies": [s.value for s in config.strategies],
        "seeds": list(config.seeds),
        "pretrain_hours": config.pretrain_hours,
        "validation_hours": config.validation_hours,
        "boundary": config.boundary,
        "channels": config.channels,
        "num_blocks": config.num_blocks,
        "kernel_size": config.kernel_size,
        "dilations": None if config.dilations is None else list(config.dilations),
        "lookback": config.lookback,
        "horizon": config.horizon,
        "pretrain_epochs": config.pretrain_epochs,
        "pretrain_lr": config.pretrain_lr,
        "pretrain_batch": config.pretrain_batch,
        "patience": config.patience,
        "online_lr": config.online_lr,
        "buffer_capacity": config.buffer_capacity,
        "replay_batch": config.replay_batch,
        "derpp_a_logit": config.derpp_a_logit,
        "derpp_b_label": config.derpp_b_label,
        "adaptor": adaptor_to_payload(config.adaptor),
        "workers": config.workers,
    }
    return payload


def config_from_payload(payload: dict) -> ExperimentConfig:
    payload = dict(payload)
    scenario = payload.get("scenario")
    if isinstance(scenario, str):
        scenario = scenario_preset(scenario)
    elif isinstance(scenario, dict):
        base = scenario_preset(scenario.pop("preset")) if "preset" in scenario else None
        scenario = scenario_from_dict(scenario, base=base)
    adaptor = payload.get("adaptor")
    if isinstance(adaptor, dict):
        adaptor = adaptor_from_payload({**adaptor_to_payload(AdaptorConfig()), **adaptor})
    kwargs = dict(
        source=payload.get("source", "synthetic"),
        scenario=scenario,
        csv_text=payload.get("csv_text"),
        context_modes=tuple(ContextMode.parse(m) for m in payload.get("context_modes", ["none"])),
        strategies=tuple(StrategyKind.parse(s) for s in payload.get("strategies", ["frozen", "ogd", "er", "derpp", "fsnet"])),
        seeds=tuple(int(s) for s in payload.get("seeds", range(10))),
    )
    for key in (
        "pretrain_hours",
        "validation_hours",
        "channels",
        "num_blocks",
        "kernel_size",
        "lookback",
        "horizon",
        "pretrain_epochs",
        "pretrain_batch",
        "patience",
        "buffer_capacity",
        "replay_batch",
        "workers",
    ):
        if payload.get(key) is not None:
            kwargs[key] = int(payload[key])
    for key in ("pretrain_lr", "online_lr", "derpp_a_logit", "derpp_b_label"):
        if payload.get(key) is not None:
            kwargs[key] = float(payload[key])
    if payload.get("boundary"):
        kwargs["boundary"] = str(payload["boundary"])
    if payload.get("dilations") is not None:
        kwargs["dilations"] = tuple(int(d) for d in payload["dilations"])
    if adaptor is not None:
        kwargs["adaptor"] = adaptor
    config = ExperimentConfig(**kwargs)
    config.validate()
    return config


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config_to_payload(config), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------


@dataclass
class CellFailure:
    context: str
    seed: int
    error: str


@dataclass
class PretrainRecord:
    context: str
    seed: int
    val_mae: float
    epochs_run: int
    checkpoint_hash: str


@dataclass
class ExperimentResult:
    reports: list[MetricsReport]
    failures: list[CellFailure]
    pretrains: list[PretrainRecord]
    config_hash: str
    elapsed_seconds: float


def resolve_frame(config: ExperimentConfig) -> tuple[TimeSeriesFrame, PeriodSplit]:
    """Build the normalized stream frame and its period split."""
    if config.source == "synthetic":
        raw = gen_synthetic(config.scenario)
        default_boundary = config.scenario.onset
    else:
        raw = align_and_fill(load_csv(config.csv_text, is_text=True))
        default_boundary = None
    boundary = config.boundary or default_boundary
    split = PeriodSplit.by_hours(raw, config.pretrain_hours, config.validation_hours, boundary=boundary)
    normalized = normalize(raw, split.pretrain)
    return normalized, split


def _run_cell(
    frame: TimeSeriesFrame,
    split: PeriodSplit,
    config: ExperimentConfig,
    context: ContextMode,
    seed: int,
) -> tuple[list[MetricsReport], PretrainRecord]:
    cfg = config.model_config(context)
    lb = cfg.lookback
    train_frame = frame.subrange(*split.pretrain)
    val_frame = frame.subrange(split.validation[0] - (lb - 1) * HOUR, split.validation[1])
    pre = pretrain(
        tcn_init(cfg, seed),
        train_frame,
        val_frame,
        context,
        epochs=config.pretrain_epochs,
        lr=config.pretrain_lr,
        seed=seed,
        batch_size=config.pretrain_batch,
        patience=config.patience,
    )
    ck_hash = checkpoint_hash(model_to_payload(pre.model))
    record = PretrainRecord(context.value, seed, pre.val_mae, pre.epochs_run, ck_hash)
    windows = make_windows(frame, cfg.lookback, cfg.horizon, context)
    reports = []
    for kind in config.strategies:
        strategy = config.strategy_for(kind)
        model = FsnetModel.from_pretrained(pre.model.copy(), config.adaptor) if kind is StrategyKind.FSNET else pre.model
        report = run_online(
            model,
            windows,
            strategy,
            online_start=split.online[0],
            boundary=split.boundary,
            seed=seed,
            context=context.value,
            checkpoint_hash=ck_hash,
        )
        report.forecasts = None  # keep experiment payloads lean
        reports.append(report)
    return reports, record


def _cell_task(args: tuple) -> tuple:
    return _run_cell(*args)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full (context x seed) matrix, every strategy per cell.

    Cell failures are recorded and do not abort the remaining cells.
    """
    config.validate()
    t0 = time.perf_counter()
    frame, split = resolve_frame(config)
    cells = [(context, seed) for context in config.context_modes for seed in config.seeds]
    reports: list[MetricsReport] = []
    failures: list[CellFailure] = []
    pretrains: list[PretrainRecord] = []

    if config.workers > 1 and len(cells) > 1:
        tasks = [(frame, split, config, context, seed) for context, seed in cells]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_cell_task, task) for task in tasks]
            for (context, seed), fut in zip(cells, futures):
                try:
                    cell_reports, record = fut.result()
                    reports.extend(cell_reports)
                    pretrains.append(record)
                except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                    logger.error("cell (%s, seed %d) failed: %s", context.value, seed, exc)
                    failures.append(CellFailure(context.value, seed, str(exc)))
    else:
        for context, seed in cells:
            try:
                cell_reports, record = _run_cell(frame, split, config, context, seed)
                reports.extend(cell_reports)
                pretrains.append(record)
            except Exception as exc:  # noqa: BLE001
                logger.error("cell (%s, seed %d) failed: %s", context.value, seed, exc)
                failures.append(CellFailure(context.value, seed, str(exc)))

    return ExperimentResult(
        reports=reports,
        failures=failures,
        pretrains=pretrains,
        config_hash=config_hash(config),
        elapsed_seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass
class SummaryCell:
    period: str
    context: str
    strategy: str
    mean_mae: float
    std_mae: float
    n_seeds: int
    single_seed: bool

    def key(self) -> tuple[str, str, str]:
        return (self.period, self.context, self.strategy)


def aggregate_seeds(reports: list[MetricsReport]) -> list[SummaryCell]:
    """Mean +/- sample std of per-seed period MAE for every table cell.

    Periods are 'pre', 'post', and 'all' (the accumulated MAE over the
    whole online range).  A single seed yields std 0 and an explicit flag.
    """
    per_seed: dict[tuple[str, str, str], dict[int, float]] = {}
    for rep in reports:
        values = dict(rep.period_mae())
        values["all"] = rep.accumulated_mae
        for period, mae in values.items():
            cell = per_seed.setdefault((period, rep.context, rep.strategy), {})
            if rep.seed in cell:
                raise ConfigError(
                    f"duplicate report for seed {rep.seed} in cell ({period}, {rep.context}, {rep.strategy})"
                )
            cell[rep.seed] = mae
    cells = []
    for (period, context, strategy), seed_map in sorted(per_seed.items()):
        vals = np.array([seed_map[s] for s in sorted(seed_map)])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        cells.append(
            SummaryCell(
                period=period,
                context=context,
                strategy=strategy,
                mean_mae=float(vals.mean()),
                std_mae=std,
                n_seeds=int(vals.size),
                single_seed=vals.size == 1,
            )
        )
    return cells


def context_deltas(cells: list[SummaryCell], strategy: str = "fsnet") -> list[dict]:
    """Improvement columns per period: +M, +T, and T+M.

    +M = no-context minus mobility-only, +T = no-context minus temp-only,
    T+M = temp-only minus both; positive means the added context helped.
    """
    by_key = {c.key(): c for c in cells}
    rows = []
    for period in ("pre", "post", "all"):
        def mean(context: str) -> float | None:
            cell = by_key.get((period, context, strategy))
            return None if cell is None else cell.mean_mae

        none, mob, temp, both = (mean(c) for c in ("none", "mobility", "temperature", "both"))
        row = {"period": period, "strategy": strategy}
        if none is not None and mob is not None:
            row["plus_m"] = none - mob
        if none is not None and temp is not None:
            row["plus_t"] = none - temp
        if temp is not None and both is not None:
            row["t_plus_m"] = temp - both
        if len(row) > 2:
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

SUPPORTED_FORMATS = ("csv", "json")

STEP_HEADER = "context,strategy,seed,timestamp,period,mae,mse"
SUMMARY_HEADER = "period,context,strategy,mean_mae,std_mae,n_seeds,single_seed"


def steps_csv_text(reports: list[MetricsReport]) -> str:
    lines = [STEP_HEADER]
    for rep in sorted(reports, key=lambda r: (r.context, r.strategy, r.seed)):
        stamps = np.datetime_as_string(rep.timestamps, unit="s")
        for i in range(len(rep)):
            lines.append(
                f"{rep.context},{rep.strategy},{rep.seed},{stamps[i]},{rep.periods[i]},"
                f"{rep.mae[i]!r},{rep.mse[i]!r}"
            )
    return "\n".join(lines) + "\n"


def summary_csv_text(cells: list[SummaryCell]) -> str:
    lines = [SUMMARY_HEADER]
    for c in cells:
        lines.append(
            f"{c.period},{c.context},{c.strategy},{c.mean_mae!r},{c.std_mae!r},{c.n_seeds},{int(c.single_seed)}"
        )
    return "\n".join(lines) + "\n"


def read_summary_csv(text: str) -> list[SummaryCell]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != SUMMARY_HEADER:
        raise DataError("not a summary CSV")
    cells = []
    for ln in lines[1:]:
        period, context, strategy, mean, std, n, single = ln.split(",")
        cells.append(
            SummaryCell(period, context, strategy, float(mean), float(std), int(n), bool(int(single)))
        )
    return cells


def summary_payload(result: ExperimentResult, config: ExperimentConfig, deltas_strategy: str | None = None) -> dict:
    cells = aggregate_seeds(result.reports)
    payload = {
        "config": config_to_payload(config),
        "config_hash": result.config_hash,
        "units": "normalized (z-scored on the pretrain range)",
        "cells": [vars(c) for c in cells],
        "pretrains": [vars(p) for p in result.pretrains],
        "failures": [vars(f) for f in result.failures],
        "elapsed_seconds": result.elapsed_seconds,
    }
    if deltas_strategy:
        payload["context_deltas"] = context_deltas(cells, strategy=deltas_strategy)
    return payload


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_emit(
    result: ExperimentResult,
    config: ExperimentConfig,
    out_dir: str,
    formats: tuple[str, ...] = ("csv", "json"),
    deltas_strategy: str | None = None,
    include_generated_at: bool = True,
) -> list[str]:
    """Write steps.csv / summary.csv / summary.json atomically; returns paths."""
    for fmt in formats:
        if fmt not in SUPPORTED_FORMATS:
            raise ConfigError(f"unknown format {fmt!r}; supported formats: {', '.join(SUPPORTED_FORMATS)}")
    cells = aggregate_seeds(result.reports)
    written = []
    if "csv" in formats:
        steps_path = os.path.join(out_dir, "steps.csv")
        _atomic_write(steps_path, steps_csv_text(result.reports))
        summary_path = os.path.join(out_dir, "summary.csv")
        _atomic_write(summary_path, summary_csv_text(cells))
        written.extend([steps_path, summary_path])
    if "json" in formats:
        payload = summary_payload(result, config, deltas_strategy=deltas_strategy)
        if include_generated_at:
            payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        json_path = os.path.join(out_dir, "summary.json")
        _atomic_write(json_path, json.dumps(payload, indent=2, sort_keys=True))
        written.append(json_path)
    return written


# ---------------------------------------------------------------------------
# key-value config files
# ---------------------------------------------------------------------------


def _parse_ini(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parser


def parse_scenario_ini(text: str) -> ShiftScenario:
    """[scenario] section of key = value lines; ``preset`` selects a base."""
    parser = _parse_ini(text)
    if not parser.has_section("scenario"):
        raise ConfigError("scenario file needs a [scenario] section")
    raw = dict(parser.items("scenario"))
    base = scenario_preset(raw.pop("preset")) if "preset" in raw else None
    return scenario_from_dict(raw, base=base)


def _split_list(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def parse_experiment_ini(text: str) -> dict:
    """Translate the INI experiment format into a config payload dict."""
    parser = _parse_ini(text)
    payload: dict = {}

    if parser.has_section("data"):
        data = dict(parser.items("data"))
        if "source" in data:
            payload["source"] = data["source"]
        if "scenario" in data:
            payload["scenario"] = data["scenario"]
        if "scenario_file" in data and data["scenario_file"]:
            with open(data["scenario_file"], "r", encoding="utf-8") as fh:
                payload["scenario"] = vars(parse_scenario_ini(fh.read()))
        if "csv_path" in data and data["csv_path"]:
            with open(data["csv_path"], "r", encoding="utf-8") as fh:
                payload["csv_text"] = fh.read()
        if "context_modes" in data:
            payload["context_modes"] = _split_list(data["context_modes"])
        if "boundary" in data:
            payload["boundary"] = data["boundary"]

    if parser.has_section("split"):
        for key in ("pretrain_hours", "validation_hours"):
            if parser.has_option("split", key):
                payload[key] = parser.getint("split", key)

    if parser.has_section("model"):
        model = dict(parser.items("model"))
        for key in ("channels", "num_blocks", "kernel_size", "lookback", "horizon"):
            if key in model:
                payload[key] = int(model[key])
        if "dilations" in model:
            payload["dilations"] = [int(d) for d in _split_list(model["dilations"])]

    if parser.has_section("train"):
        train = dict(parser.items("train"))
        for key in ("pretrain_epochs", "pretrain_batch", "patience"):
            if key in train:
                payload[key] = int(train[key])
        for key in ("pretrain_lr", "online_lr"):
            if key in train and train[key]:
                payload[key] = float(train[key])

    if parser.has_section("strategies"):
        strat = dict(parser.items("strategies"))
        if "run" in strat:
            payload["strategies"] = _split_list(strat["run"])
        for key in ("buffer_capacity", "replay_batch"):
            if key in strat:
                payload[key] = int(strat[key])
        if "derpp_a_logit" in strat:
            payload["derpp_a_logit"] = float(strat["derpp_a_logit"])
        if "derpp_b_label" in strat:
            payload["derpp_b_label"] = float(strat["derpp_b_label"])

    if parser.has_section("fsnet"):
        fs = dict(parser.items("fsnet"))
        adaptor = {}
        for key, cast in (
            ("gamma", float),
            ("gamma_prime", float),
            ("n_mem", int),
            ("top_k", int),
            ("tau", float),
            ("gain_span", float),
        ):
            if key in fs:
                adaptor[key] = cast(fs[key])
        for key in ("adaptor_enabled", "memory_enabled"):
            if key in fs:
                adaptor[key] = fs[key].strip().lower() in ("1", "true", "yes", "on")
        if adaptor:
            payload["adaptor"] = adaptor

    if parser.has_section("run"):
        run = dict(parser.items("run"))
        if "seeds" in run:
            payload["seeds"] = [int(s) for s in _split_list(run["seeds"])]
        if "workers" in run:
            payload["workers"] = int(run["workers"])

    return payload
