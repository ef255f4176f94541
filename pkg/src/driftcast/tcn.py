"""Dilated causal convolution backbone for windowed forecasting.

A stack of residual blocks, each holding two dilated causal conv layers
with ReLU after each conv.  A 1x1 projection aligns the skip path when
channel counts differ.  The head reads the final block's features at the
last time step and maps them linearly to the forecast horizon.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from . import numerics as nm
from .numerics import GradTape, Tensor

CHECKPOINT_VERSION = "tcn/1"


@dataclass(frozen=True)
class TcnConfig:
    input_channels: int = 1
    channels: int = 32
    num_blocks: int = 3
    kernel_size: int = 3
    dilations: tuple[int, ...] | None = None
    lookback: int = 24
    horizon: int = 24

    def resolved_dilations(self) -> tuple[int, ...]:
        if self.dilations is not None:
            return tuple(int(d) for d in self.dilations)
        return tuple(2**b for b in range(self.num_blocks))

    def receptive_field(self) -> int:
        # two convs per block, each reaching back (k-1)*d steps
        return 1 + sum(2 * (self.kernel_size - 1) * d for d in self.resolved_dilations())

    def validate(self) -> None:
        if min(self.input_channels, self.channels, self.num_blocks, self.kernel_size) < 1:
            raise ConfigError("channel, block, and kernel counts must be positive")
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be positive")
        dil = self.resolved_dilations()
        if len(dil) != self.num_blocks:
            raise ConfigError(f"{self.num_blocks} blocks need {self.num_blocks} dilations, got {len(dil)}")
        if any(d < 1 for d in dil):
            raise ConfigError("dilations must be positive")
        rf = self.receptive_field()
        if rf < self.lookback:
            raise ConfigError(
                f"receptive field {rf} does not cover lookback {self.lookback}; "
                "add blocks, taps, or dilation"
            )


class TcnBlock:
    """Two dilated causal convs plus the optional 1x1 skip projection."""

    def __init__(self, conv1: Tensor, conv2: Tensor, proj: Tensor | None, dilation: int) -> None:
        self.conv1 = conv1
        self.conv2 = conv2
        self.proj = proj
        self.dilation = dilation

    def parameters(self) -> list[Tensor]:
        ps = [self.conv1, self.conv2]
        if self.proj is not None:
            ps.append(self.proj)
        return ps


class TcnModel:
    def __init__(self, config: TcnConfig, blocks: list[TcnBlock], head_w: Tensor, head_b: Tensor) -> None:
        self.config = config
        self.blocks = blocks
        self.head_w = head_w
        self.head_b = head_b

    def parameters(self) -> list[Tensor]:
        ps: list[Tensor] = []
        for b in self.blocks:
            ps.extend(b.parameters())
        ps.extend([self.head_w, self.head_b])
        return ps

    def conv_layers(self) -> list[Tensor]:
        """The dilated conv weights in forward order (two per block)."""
        out: list[Tensor] = []
        for b in self.blocks:
            out.extend([b.conv1, b.conv2])
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "TcnModel":
        blocks = [
            TcnBlock(b.conv1.copy(), b.conv2.copy(), b.proj.copy() if b.proj is not None else None, b.dilation)
            for b in self.blocks
        ]
        return TcnModel(self.config, blocks, self.head_w.copy(), self.head_b.copy())


def tcn_init(config: TcnConfig, seed: int) -> TcnModel:
    """Build a model with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    config.validate()
    rng = np.random.default_rng(seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape))

    k = config.kernel_size
    blocks: list[TcnBlock] = []
    c_in = config.input_channels
    for d in config.resolved_dilations():
        conv1 = uniform((config.channels, c_in, k), c_in * k)
        conv2 = uniform((config.channels, config.channels, k), config.channels * k)
        proj = uniform((config.channels, c_in, 1), c_in) if c_in != config.channels else None
        blocks.append(TcnBlock(conv1, conv2, proj, d))
        c_in = config.channels
    head_w = uniform((config.horizon, config.channels), config.channels)
    head_b = Tensor(np.zeros(config.horizon))
    return TcnModel(config, blocks, head_w, head_b)


def _check_window(config: TcnConfig, window: np.ndarray) -> None:
    expected = (config.input_channels, config.lookback)
    if window.shape[-2:] != expected:
        raise ShapeError(f"window shape {window.shape} does not end in {expected}")


def forward_features(model: TcnModel, window: Tensor, tape: GradTape | None = None) -> Tensor:
    """Run the block stack; returns features [channels, L] (batched: [B, C, L])."""
    x = window
    for block in model.blocks:
        h = nm.relu(nm.conv1d_causal(x, block.conv1, block.dilation, tape), tape)
        h = nm.relu(nm.conv1d_causal(h, block.conv2, block.dilation, tape), tape)
        skip = x if block.proj is None else nm.conv1d_causal(x, block.proj, 1, tape)
        x = nm.add(h, skip, tape)
    return x


def forward_from_features(model: TcnModel, features: Tensor, tape: GradTape | None = None) -> Tensor:
    return nm.linear(nm.last_timestep(features, tape), model.head_w, model.head_b, tape)


def tcn_forward_tape(model: TcnModel, window: np.ndarray, tape: GradTape | None) -> Tensor:
    _check_window(model.config, np.asarray(window))
    return forward_from_features(model, forward_features(model, Tensor(window), tape), tape)


def tcn_forward(model: TcnModel, window: np.ndarray) -> np.ndarray:
    """Forecast the next H steps of the target channel (normalized units)."""
    return tcn_forward_tape(model, window, None).data


@dataclass
class TcnGradients:
    """Adjoints of the window MSE loss, exposed per conv layer."""

    conv_grads: list[np.ndarray]
    proj_grads: list[np.ndarray | None]
    head_w_grad: np.ndarray
    head_b_grad: np.ndarray
    loss: float
    forecast: np.ndarray = field(repr=False, default=None)


def tcn_backward(model: TcnModel, window: np.ndarray, target: np.ndarray) -> TcnGradients:
    """Gradients of mse_loss(tcn_forward(window), target) for every parameter."""
    model.zero_grad()
    tape = GradTape()
    pred = tcn_forward_tape(model, window, tape)
    loss = nm.mse_loss(pred, np.asarray(target, dtype=np.float64), tape)
    tape.backward(loss)
    conv_grads = []
    for layer in model.conv_layers():
        conv_grads.append(np.zeros_like(layer.data) if layer.grad is None else layer.grad.copy())
    proj_grads: list[np.ndarray | None] = []
    for b in model.blocks:
        if b.proj is None:
            proj_grads.append(None)
        else:
            proj_grads.append(np.zeros_like(b.proj.data) if b.proj.grad is None else b.proj.grad.copy())
    hw = np.zeros_like(model.head_w.data) if model.head_w.grad is None else model.head_w.grad.copy()
    hb = np.zeros_like(model.head_b.data) if model.head_b.grad is None else model.head_b.grad.copy()
    return TcnGradients(conv_grads, proj_grads, hw, hb, float(loss.data), pred.data.copy())


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def config_to_payload(config: TcnConfig) -> dict:
    return {
        "input_channels": config.input_channels,
        "channels": config.channels,
        "num_blocks": config.num_blocks,
        "kernel_size": config.kernel_size,
        "dilations": list(config.resolved_dilations()),
        "lookback": config.lookback,
        "horizon": config.horizon,
    }


def config_from_payload(payload: dict) -> TcnConfig:
    return TcnConfig(
        input_channels=int(payload["input_channels"]),
        channels=int(payload["channels"]),
        num_blocks=int(payload["num_blocks"]),
        kernel_size=int(payload["kernel_size"]),
        dilations=tuple(int(d) for d in payload["dilations"]),
        lookback=int(payload["lookback"]),
        horizon=int(payload["horizon"]),
    )


def _arr(a: np.ndarray) -> list:
    return a.ravel().tolist()


def _unarr(values: list, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(shape)
    return arr


def model_to_payload(model: TcnModel) -> dict:
    cfg = model.config
    blocks = []
    for b in model.blocks:
        blocks.append(
            {
                "conv1": _arr(b.conv1.data),
                "conv2": _arr(b.conv2.data),
                "proj": None if b.proj is None else _arr(b.proj.data),
                "dilation": b.dilation,
            }
        )
    return {
        "version": CHECKPOINT_VERSION,
        "config": config_to_payload(cfg),
        "blocks": blocks,
        "head_w": _arr(model.head_w.data),
        "head_b": _arr(model.head_b.data),
    }


def model_from_payload(payload: dict) -> TcnModel:
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}, expected {CHECKPOINT_VERSION!r}")
    cfg = config_from_payload(payload["config"])
    k = cfg.kernel_size
    blocks = []
    c_in = cfg.input_channels
    for raw in payload["blocks"]:
        conv1 = Tensor(_unarr(raw["conv1"], (cfg.channels, c_in, k)))
        conv2 = Tensor(_unarr(raw["conv2"], (cfg.channels, cfg.channels, k)))
        proj = None if raw["proj"] is None else Tensor(_unarr(raw["proj"], (cfg.channels, c_in, 1)))
        blocks.append(TcnBlock(conv1, conv2, proj, int(raw["dilation"])))
        c_in = cfg.channels
    head_w = Tensor(_unarr(payload["head_w"], (cfg.horizon, cfg.channels)))
    head_b = Tensor(_unarr(payload["head_b"], (cfg.horizon,)))
    return TcnModel(cfg, blocks, head_w, head_b)


def checkpoint_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(model: TcnModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_payload(model), fh)


def load_checkpoint(path: str) -> TcnModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_payload(json.load(fh))
