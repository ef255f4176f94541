"""Request/response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ScenarioSpec(BaseModel):
    """Synthetic-scenario selection: a preset name plus field overrides."""

    preset: str | None = None
    start: str | None = None
    onset: str | None = None
    duration_hours: int | None = None
    base_load: float | None = None
    occupancy_coupling: float | None = None
    daily_amp: float | None = None
    weekly_amp: float | None = None
    energy_noise: float | None = None
    energy_lag_hours: int | None = None
    energy_inertia_hours: int | None = None
    occ_overnight: float | None = None
    occ_peak_morning: float | None = None
    occ_peak_afternoon: float | None = None
    weekend_factor: float | None = None
    day_sigma: float | None = None
    post_day_sigma: float | None = None
    day_rho: float | None = None
    occ_noise: float | None = None
    mobility_scale: float | None = None
    mobility_noise: float | None = None
    temp_mean: float | None = None
    temp_annual_amp: float | None = None
    temp_daily_amp: float | None = None
    temp_noise: float | None = None
    mobility_collapse: float | None = None
    decoupling: float | None = None
    seed: int | None = None

    def to_payload(self) -> dict:
        payload = self.model_dump(exclude_none=True)
        return payload


class GenerateRequest(BaseModel):
    scenario: ScenarioSpec = Field(default_factory=ScenarioSpec)


class GenerateResponse(BaseModel):
    csv_text: str
    rows: int
    start: str
    end: str
    channel_means: dict[str, float]


class AdaptorSpec(BaseModel):
    gamma: float | None = None
    gamma_prime: float | None = None
    n_mem: int | None = None
    top_k: int | None = None
    tau: float | None = None
    gain_span: float | None = None
    adaptor_enabled: bool | None = None
    memory_enabled: bool | None = None


class ExperimentRequest(BaseModel):
    """Mirror of the experiment config; omitted fields take defaults."""

    source: str = "synthetic"
    scenario: ScenarioSpec | str | None = None
    csv_text: str | None = None
    context_modes: list[str] | None = None
    strategies: list[str] | None = None
    seeds: list[int] | None = None
    pretrain_hours: int | None = None
    validation_hours: int | None = None
    boundary: str | None = None
    channels: int | None = None
    num_blocks: int | None = None
    kernel_size: int | None = None
    dilations: list[int] | None = None
    lookback: int | None = None
    horizon: int | None = None
    pretrain_epochs: int | None = None
    pretrain_lr: float | None = None
    pretrain_batch: int | None = None
    patience: int | None = None
    online_lr: float | None = None
    buffer_capacity: int | None = None
    replay_batch: int | None = None
    derpp_a_logit: float | None = None
    derpp_b_label: float | None = None
    adaptor: AdaptorSpec | None = None
    workers: int | None = None

    def to_payload(self) -> dict:
        payload = self.model_dump(exclude_none=True)
        scenario = payload.get("scenario")
        if isinstance(scenario, dict):
            payload["scenario"] = scenario
        return payload


class SummaryCellModel(BaseModel):
    period: str
    context: str
    strategy: str
    mean_mae: float
    std_mae: float
    n_seeds: int
    single_seed: bool


class ExperimentResponse(BaseModel):
    config_hash: str
    steps_csv: str
    summary_csv: str
    summary: dict
    cells: list[SummaryCellModel]
    failures: list[dict]
    elapsed_seconds: float


class PretrainRequest(BaseModel):
    source: str = "synthetic"
    scenario: ScenarioSpec | str | None = None
    csv_text: str | None = None
    context: str = "none"
    seed: int = 0
    pretrain_hours: int = 2160
    validation_hours: int = 2160
    channels: int | None = None
    num_blocks: int | None = None
    kernel_size: int | None = None
    dilations: list[int] | None = None
    lookback: int | None = None
    horizon: int | None = None
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.05
    pretrain_batch: int = 64
    patience: int = 5


class PretrainResponse(BaseModel):
    checkpoint: dict
    checkpoint_hash: str
    val_mae: float
    epochs_run: int


class GradcheckRequest(BaseModel):
    trials: int = 100
    seed: int = 0
    rtol: float = 1e-4


class GradcheckResponse(BaseModel):
    passed: bool
    trials: int
    max_rel_err: float
    per_op: dict[str, float]
    elapsed_seconds: float
