"""Training protocols: offline pretraining and the prequential online loop.

The online loop is test-then-train with delayed labels: at each hourly
step the current model forecasts the next H hours *before* any update,
then trains on the newest fully-observed window (the one issued H hours
earlier, whose last target has just arrived).  Strategies differ only in
the update: none (frozen), plain SGD on the newest sample (OGD), SGD
plus uniform replay from a reservoir buffer (ER), replay of both stored
targets and stored model outputs (DER++), or the adaptive sidecar step
(FSNet).
"""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import ContextMode, TimeSeriesFrame, WindowSet, make_windows, split_periods
from .errors import ConfigError, DataError
from .fsnet import FsnetModel, fsnet_forecast, fsnet_step
from .tcn import TcnModel, tcn_forward, tcn_forward_tape

logger = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")


class StrategyKind(str, enum.Enum):
    FROZEN = "frozen"
    OGD = "ogd"
    ER = "er"
    DERPP = "derpp"
    FSNET = "fsnet"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown strategy {text!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    lr: float = 0.01
    buffer_capacity: int | None = None
    replay_batch: int | None = None
    a_logit: float | None = None
    b_label: float | None = None

    def validate(self) -> None:
        needs_buffer = self.kind in (StrategyKind.ER, StrategyKind.DERPP)
        if needs_buffer:
            if self.buffer_capacity is None or self.replay_batch is None:
                raise ConfigError(f"{self.kind.value} requires buffer_capacity and replay_batch")
            if self.buffer_capacity < 1 or self.replay_batch < 0:
                raise ConfigError("buffer_capacity must be >= 1 and replay_batch >= 0")
        else:
            if self.buffer_capacity is not None or self.replay_batch is not None:
                raise ConfigError(f"{self.kind.value} takes no buffer parameters")
        if self.kind is StrategyKind.DERPP:
            if self.a_logit is None or self.b_label is None:
                raise ConfigError("derpp requires a_logit and b_label weights")
        elif self.a_logit is not None or self.b_label is not None:
            raise ConfigError(f"{self.kind.value} takes no replay-loss weights")
        if self.kind is not StrategyKind.FROZEN and self.lr < 0:
            raise ConfigError("learning rate must be non-negative")


class ReplayBuffer:
    """Reservoir-sampled store of (window, target, recorded_forecast) triples.

    Insertion keeps each of the n items seen so far with probability
    capacity/n: once full, item n is accepted with probability capacity/n
    and overwrites a uniformly random slot.
    """

    def __init__(self, capacity: int, seed: int) -> None:
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.items: list[tuple] = []
        self.items_seen = 0
        self._rng = random.Random(seed)

    def __len__(self) -> int:
        return len(self.items)

    def add(self, item: tuple) -> None:
        self.items_seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
        elif self._rng.random() < self.capacity / self.items_seen:
            self.items[self._rng.randrange(self.capacity)] = item

    def sample(self, count: int) -> list[tuple]:
        count = min(count, len(self.items))
        if count <= 0:
            return []
        return [self.items[i] for i in self._rng.sample(range(len(self.items)), count)]


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    model: TcnModel
    val_mae: float
    epochs_run: int
    history: list[float] = field(default_factory=list)


def _batched_forecasts(model: TcnModel, windows: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty((windows.shape[0], model.config.horizon))
    for lo in range(0, windows.shape[0], chunk):
        hi = min(lo + chunk, windows.shape[0])
        out[lo:hi] = tcn_forward_tape(model, windows[lo:hi], None).data
    return out


def evaluate_mae(model: TcnModel, ws: WindowSet) -> float:
    preds = _batched_forecasts(model, ws.windows)
    return float(np.abs(preds - ws.targets).mean())


def pretrain(
    model: TcnModel,
    train_frame: TimeSeriesFrame,
    val_frame: TimeSeriesFrame,
    context: ContextMode,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 64,
    patience: int = 0,
) -> PretrainResult:
    """Mini-batch MSE training; returns the best-validation-MAE checkpoint.

    ``patience`` > 0 stops after that many epochs without a validation
    improvement.  Deterministic given the seed.
    """
    cfg = model.config
    if len(context.channels()) != cfg.input_channels:
        raise ConfigError(
            f"context {context.value!r} provides {len(context.channels())} channels, "
            f"model expects {cfg.input_channels}"
        )
    train = make_windows(train_frame, cfg.lookback, cfg.horizon, context)
    val = make_windows(val_frame, cfg.lookback, cfg.horizon, context)
    if len(train) < 1 or len(val) < 1:
        raise DataError("empty pretrain or validation split after windowing")

    model = model.copy()
    best = model.copy()
    best_mae = evaluate_mae(model, val)
    history = [best_mae]
    rng = np.random.default_rng(seed)
    since_best = 0
    epochs_run = 0
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            model.zero_grad()
            tape = nm.GradTape()
            pred = tcn_forward_tape(model, train.windows[idx], tape)
            loss = nm.mse_loss(pred, train.targets[idx], tape)
            tape.backward(loss)
            nm.sgd_step(model.parameters(), lr)
        epochs_run += 1
        mae = evaluate_mae(model, val)
        history.append(mae)
        if mae < best_mae:
            best_mae = mae
            best = model.copy()
            since_best = 0
        else:
            since_best += 1
            if patience and since_best >= patience:
                break
    return PretrainResult(model=best, val_mae=best_mae, epochs_run=epochs_run, history=history)


# ---------------------------------------------------------------------------
# online strategy steps
# ---------------------------------------------------------------------------


def _stack(batch: list[tuple], index: int) -> np.ndarray:
    return np.stack([item[index] for item in batch])


def ogd_step(model: TcnModel, window: np.ndarray, target: np.ndarray, lr: float) -> np.ndarray:
    """One SGD step on the newest sample's MSE; returns the training forecast."""
    model.zero_grad()
    tape = nm.GradTape()
    pred = tcn_forward_tape(model, window, tape)
    loss = nm.mse_loss(pred, np.asarray(target, dtype=np.float64), tape)
    tape.backward(loss)
    nm.sgd_step(model.parameters(), lr)
    return pred.data.copy()


def er_step(
    model: TcnModel,
    window: np.ndarray,
    target: np.ndarray,
    buffer: ReplayBuffer,
    lr: float,
    replay_batch: int,
) -> np.ndarray:
    """SGD on new-sample MSE plus mean MSE over a uniform replay batch."""
    model.zero_grad()
    tape = nm.GradTape()
    pred = tcn_forward_tape(model, window, tape)
    loss = nm.mse_loss(pred, np.asarray(target, dtype=np.float64), tape)
    batch = buffer.sample(replay_batch) if replay_batch > 0 else []
    if batch:
        replay_pred = tcn_forward_tape(model, _stack(batch, 0), tape)
        loss = nm.add(loss, nm.mse_loss(replay_pred, _stack(batch, 1), tape), tape)
    tape.backward(loss)
    nm.sgd_step(model.parameters(), lr)
    forecast = pred.data.copy()
    buffer.add((np.array(window, copy=True), np.array(target, copy=True), forecast.copy()))
    return forecast


def derpp_step(
    model: TcnModel,
    window: np.ndarray,
    target: np.ndarray,
    buffer: ReplayBuffer,
    lr: float,
    a_logit: float,
    b_label: float,
    replay_batch: int,
) -> np.ndarray:
    """Dark replay: new-sample MSE + a*MSE(to recorded outputs) + b*MSE(to targets).

    The two replay batches are drawn independently; the stored forecast of
    an item never changes after insertion.
    """
    model.zero_grad()
    tape = nm.GradTape()
    pred = tcn_forward_tape(model, window, tape)
    loss = nm.mse_loss(pred, np.asarray(target, dtype=np.float64), tape)
    if replay_batch > 0:
        logit_batch = buffer.sample(replay_batch)
        if logit_batch and a_logit != 0.0:
            lp = tcn_forward_tape(model, _stack(logit_batch, 0), tape)
            loss = nm.add(loss, nm.scale(nm.mse_loss(lp, _stack(logit_batch, 2), tape), a_logit, tape), tape)
        label_batch = buffer.sample(replay_batch)
        if label_batch and b_label != 0.0:
            tp = tcn_forward_tape(model, _stack(label_batch, 0), tape)
            loss = nm.add(loss, nm.scale(nm.mse_loss(tp, _stack(label_batch, 1), tape), b_label, tape), tape)
    tape.backward(loss)
    nm.sgd_step(model.parameters(), lr)
    forecast = pred.data.copy()
    buffer.add((np.array(window, copy=True), np.array(target, copy=True), forecast.copy()))
    return forecast


# ---------------------------------------------------------------------------
# online loop
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-step prequential errors for one (strategy, seed) run."""

    strategy: str
    seed: int
    context: str
    timestamps: np.ndarray
    periods: np.ndarray
    mae: np.ndarray
    mse: np.ndarray
    checkpoint_hash: str = ""
    forecasts: np.ndarray | None = None  # [n, H], kept out of CSV rows

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def accumulated_mae(self) -> float:
        return float(self.mae.mean())

    @property
    def accumulated_mse(self) -> float:
        return float(self.mse.mean())

    def period_mae(self) -> dict[str, float]:
        return {
            label: float(self.mae[self.periods == label].mean())
            for label in ("pre", "post")
            if (self.periods == label).any()
        }

    def rows(self) -> list[dict]:
        return [
            {
                "timestamp": str(np.datetime_as_string(self.timestamps[i], unit="s")),
                "period": str(self.periods[i]),
                "mae": float(self.mae[i]),
                "mse": float(self.mse[i]),
                "strategy": self.strategy,
                "seed": self.seed,
                "context": self.context,
            }
            for i in range(len(self))
        ]


def run_online(
    model: TcnModel | FsnetModel,
    windows: WindowSet,
    strategy: Strategy,
    online_start: np.datetime64,
    boundary: np.datetime64,
    seed: int,
    context: str = "",
    checkpoint_hash: str = "",
) -> MetricsReport:
    """Prequential pass over the online range.

    Each step forecasts first, is scored against the (already present)
    targets attributed to the issue timestamp, and only then updates on
    the newest fully-observed window — the one issued H hours earlier.
    The model is copied, so the caller's checkpoint stays untouched.
    """
    strategy.validate()
    if strategy.kind is StrategyKind.FSNET:
        if not isinstance(model, FsnetModel):
            raise ConfigError("fsnet strategy needs an FsnetModel")
    elif isinstance(model, FsnetModel):
        raise ConfigError(f"{strategy.kind.value} strategy runs on the plain backbone")
    model = model.copy()
    horizon = model.config.horizon
    start_idx = windows.index_at_or_after(online_start)
    if start_idx >= len(windows):
        raise DataError("online range contains no windows")
    diffs = np.diff(windows.issue_timestamps)
    if diffs.size and not np.all(diffs == HOUR):
        raise DataError("online stream has timestamp gaps; align the frame first")

    buffer: ReplayBuffer | None = None
    if strategy.kind in (StrategyKind.ER, StrategyKind.DERPP):
        buffer = ReplayBuffer(strategy.buffer_capacity, seed)

    n = len(windows) - start_idx
    mae = np.empty(n)
    mse = np.empty(n)
    forecasts = np.empty((n, horizon))
    stamps = windows.issue_timestamps[start_idx:]
    kind = strategy.kind
    backbone = model.tcn if isinstance(model, FsnetModel) else model
    for pos in range(n):
        i = start_idx + pos
        w = windows.windows[i]
        if kind is StrategyKind.FSNET:
            forecast = fsnet_forecast(model, w)
        else:
            forecast = tcn_forward(backbone, w)
        forecasts[pos] = forecast
        err = forecast - windows.targets[i]
        mae[pos] = np.abs(err).mean()
        mse[pos] = (err * err).mean()

        j = i - horizon
        if j >= 0 and kind is not StrategyKind.FROZEN:
            wj, yj = windows.windows[j], windows.targets[j]
            if kind is StrategyKind.OGD:
                ogd_step(backbone, wj, yj, strategy.lr)
            elif kind is StrategyKind.ER:
                er_step(backbone, wj, yj, buffer, strategy.lr, strategy.replay_batch)
            elif kind is StrategyKind.DERPP:
                derpp_step(
                    backbone, wj, yj, buffer, strategy.lr, strategy.a_logit, strategy.b_label, strategy.replay_batch
                )
            else:
                fsnet_step(model, wj, yj, strategy.lr)

    periods = split_periods(stamps, boundary)
    return MetricsReport(
        strategy=kind.value,
        seed=seed,
        context=context,
        timestamps=stamps,
        periods=periods,
        mae=mae,
        mse=mse,
        checkpoint_hash=checkpoint_hash,
        forecasts=forecasts,
    )
