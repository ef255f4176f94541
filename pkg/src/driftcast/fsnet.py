"""Per-layer fast adaptation with dual-timescale gradient smoothing.

Each dilated conv layer of the backbone gets a sidecar: two exponential
moving averages of its flattened gradient (a slow-memory one with a high
coefficient and a reactive one with a low coefficient), a chunked affine
adaptor mapping the smoothed gradient to per-channel weight/feature gains,
and a slot-based associative memory that caches those gains and recalls
them when the two EMAs disagree strongly (cosine below the trigger).

The forecast pass multiplies conv weights by the alpha gains and the conv
output by the beta gains; with a zero adaptor both gains are exactly one
and the pass is bit-identical to the plain backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError
from . import numerics as nm
from . import tcn as tcn_mod
from .numerics import GradTape, Tensor
from .tcn import TcnModel

FSNET_CHECKPOINT_VERSION = "fsnet/1"


@dataclass(frozen=True)
class AdaptorConfig:
    gamma: float = 0.9
    gamma_prime: float = 0.3
    n_mem: int = 32
    top_k: int = 2
    tau: float = 0.7
    gain_span: float = 0.5
    adaptor_enabled: bool = True
    memory_enabled: bool = True

    def validate(self) -> None:
        if not (0.0 <= self.gamma < 1.0) or not (0.0 <= self.gamma_prime < 1.0):
            raise ConfigError("EMA coefficients must lie in [0, 1)")
        if self.gamma_prime > self.gamma:
            raise ConfigError("the reactive EMA coefficient must not exceed the slow one")
        if self.n_mem < 1 or not (1 <= self.top_k <= self.n_mem):
            raise ConfigError("memory needs n_mem >= 1 and 1 <= top_k <= n_mem")
        if not (0.0 < self.tau < 1.0):
            raise ConfigError("trigger threshold tau must lie in (0, 1)")
        if self.gain_span <= 0.0:
            raise ConfigError("gain span must be positive")
        if self.memory_enabled and not self.adaptor_enabled:
            raise ConfigError("memory requires the adaptor to be enabled")


@dataclass
class AdaptationCoefficients:
    alpha: np.ndarray
    beta: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])


class AssociativeMemory:
    """Fixed slot matrix with attention read and top-k outer-product write."""

    def __init__(self, n_mem: int, d_coeff: int, tau: float, top_k: int) -> None:
        self.slots = np.zeros((n_mem, d_coeff), dtype=np.float64)
        self.tau = tau
        self.top_k = top_k

    @property
    def n_mem(self) -> int:
        return self.slots.shape[0]

    @property
    def d_coeff(self) -> int:
        return self.slots.shape[1]

    def copy(self) -> "AssociativeMemory":
        m = AssociativeMemory(self.n_mem, self.d_coeff, self.tau, self.top_k)
        m.slots = self.slots.copy()
        return m


def memory_read(memory: AssociativeMemory, mu_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Attention read: softmax scores over slots, summed over the top-k.

    Returns (recalled coefficient vector, full attention vector).  The
    truncated weights are used as-is, without renormalization.
    """
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    if mu_hat.shape != (memory.d_coeff,):
        raise ShapeError(f"query length {mu_hat.shape} != memory width {memory.d_coeff}")
    r = nm.softmax(memory.slots @ mu_hat)
    idx, vals = nm.topk(r, memory.top_k)
    recalled = vals @ memory.slots[idx]
    return recalled, r


def memory_merge(mu: np.ndarray, mu_tilde: np.ndarray, tau: float) -> np.ndarray:
    """Convex combination keeping weight tau on the current coefficients."""
    mu = np.asarray(mu, dtype=np.float64)
    mu_tilde = np.asarray(mu_tilde, dtype=np.float64)
    if mu.shape != mu_tilde.shape:
        raise ShapeError(f"merge shapes differ: {mu.shape} vs {mu_tilde.shape}")
    return tau * mu + (1.0 - tau) * mu_tilde


def memory_write(memory: AssociativeMemory, vec: np.ndarray, r: np.ndarray) -> AssociativeMemory:
    """Decay-and-add update restricted to the top-k attended slots.

    Selected row i becomes tau * row_i + (1 - tau) * r_i * vec; all other
    rows are left untouched so rarely-recalled patterns survive.
    """
    vec = np.asarray(vec, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if vec.shape != (memory.d_coeff,):
        raise ShapeError(f"write vector length {vec.shape} != memory width {memory.d_coeff}")
    if r.shape != (memory.n_mem,):
        raise ShapeError(f"attention length {r.shape} != slot count {memory.n_mem}")
    idx, vals = nm.topk(r, memory.top_k)
    memory.slots[idx] = memory.tau * memory.slots[idx] + (1.0 - memory.tau) * np.outer(vals, vec)
    return memory


@dataclass
class ChunkLayout:
    """Uniform partition of a flattened gradient, zero-padded at the tail."""

    n_chunks: int
    chunk_size: int
    n_values: int

    @classmethod
    def for_layer(cls, n_values: int, n_chunks: int) -> "ChunkLayout":
        if n_values < 1 or n_chunks < 1:
            raise ConfigError("chunk layout needs positive sizes")
        return cls(n_chunks=n_chunks, chunk_size=math.ceil(n_values / n_chunks), n_values=n_values)

    def partition(self, flat: np.ndarray) -> np.ndarray:
        if flat.size != self.n_values:
            raise ShapeError(f"gradient length {flat.size} != layout size {self.n_values}")
        padded = np.zeros(self.n_chunks * self.chunk_size, dtype=np.float64)
        padded[: self.n_values] = flat
        return padded.reshape(self.n_chunks, self.chunk_size)


class LayerState:
    """One conv layer's weights plus its adaptation sidecar."""

    def __init__(self, theta: Tensor, adaptor: AdaptorConfig) -> None:
        c_out = theta.shape[0]
        self.theta = theta
        self.channels = c_out
        self.layout = ChunkLayout.for_layer(theta.size, 2 * c_out)
        self.phi_w = Tensor(np.zeros((self.layout.n_chunks, self.layout.chunk_size)))
        self.phi_b = Tensor(np.zeros(self.layout.n_chunks))
        self.g_fast = np.zeros(theta.size, dtype=np.float64)
        self.g_slow = np.zeros(theta.size, dtype=np.float64)
        self.mu_ema = np.zeros(2 * c_out, dtype=np.float64)
        self.memory = AssociativeMemory(adaptor.n_mem, 2 * c_out, adaptor.tau, adaptor.top_k)
        self.pending_merge: np.ndarray | None = None
        self._check()

    def _check(self) -> None:
        n = self.theta.size
        if self.g_fast.shape != (n,) or self.g_slow.shape != (n,):
            raise ShapeError("EMA gradient buffers must match the flattened weight count")
        if self.mu_ema.shape != (2 * self.channels,):
            raise ShapeError("coefficient EMA length must be twice the output channel count")

    def adaptor_params(self) -> list[Tensor]:
        return [self.phi_w, self.phi_b]


def update_ema_grads(layer: LayerState, g_t: np.ndarray, gamma: float, gamma_prime: float) -> LayerState:
    """Blend the step gradient into both EMA buffers."""
    g_t = np.asarray(g_t, dtype=np.float64).ravel()
    if g_t.shape != layer.g_fast.shape:
        raise ShapeError(f"gradient length {g_t.size} != EMA length {layer.g_fast.size}")
    layer.g_fast = gamma * layer.g_fast + (1.0 - gamma) * g_t
    layer.g_slow = gamma_prime * layer.g_slow + (1.0 - gamma_prime) * g_t
    return layer


def compute_coefficients(layer: LayerState, gain_span: float = 0.5) -> AdaptationCoefficients:
    """Map the smoothed gradient through the chunked adaptor to gains.

    Each uniform chunk of the flattened EMA gradient feeds its own affine
    row; outputs are squashed into [1 - s, 1 + s] around identity.
    """
    chunks = layer.layout.partition(layer.g_fast)
    pre = (layer.phi_w.data * chunks).sum(axis=1) + layer.phi_b.data
    mu = 1.0 + gain_span * np.tanh(pre)
    c = layer.channels
    return AdaptationCoefficients(alpha=mu[:c].copy(), beta=mu[c:].copy())


def adapt_weights(theta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Per-output-channel scaling of conv weights."""
    theta = np.asarray(theta, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if theta.shape[0] != alpha.shape[0]:
        raise ShapeError(f"channel count {theta.shape[0]} != gain count {alpha.shape[0]}")
    return theta * alpha.reshape((-1,) + (1,) * (theta.ndim - 1))


def adapt_features(h: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-channel scaling of a feature map [C, T]."""
    h = np.asarray(h, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if h.shape[0] != beta.shape[0]:
        raise ShapeError(f"channel count {h.shape[0]} != gain count {beta.shape[0]}")
    return h * beta[:, None]


def should_trigger(layer: LayerState, tau: float) -> bool:
    """Memory interaction fires when the two EMAs point nearly opposite ways."""
    return nm.cosine_similarity(layer.g_fast, layer.g_slow) < -tau


class FsnetModel:
    """Backbone plus one adaptation sidecar per dilated conv layer."""

    def __init__(self, backbone: TcnModel, adaptor: AdaptorConfig, layers: list[LayerState], pretrained: bool) -> None:
        self.tcn = backbone
        self.adaptor = adaptor
        self.layers = layers
        self.pretrained = pretrained

    @classmethod
    def from_pretrained(cls, backbone: TcnModel, adaptor: AdaptorConfig | None = None) -> "FsnetModel":
        adaptor = adaptor or AdaptorConfig()
        adaptor.validate()
        layers = [LayerState(theta, adaptor) for theta in backbone.conv_layers()]
        return cls(backbone, adaptor, layers, pretrained=True)

    @property
    def config(self) -> tcn_mod.TcnConfig:
        return self.tcn.config

    def parameters(self) -> list[Tensor]:
        ps = self.tcn.parameters()
        if self.adaptor.adaptor_enabled:
            for layer in self.layers:
                ps.extend(layer.adaptor_params())
        return ps

    def zero_grad(self) -> None:
        for p in self.tcn.parameters():
            p.zero_grad()
        for layer in self.layers:
            layer.phi_w.zero_grad()
            layer.phi_b.zero_grad()

    def copy(self) -> "FsnetModel":
        clone = FsnetModel.from_pretrained(self.tcn.copy(), self.adaptor)
        clone.pretrained = self.pretrained
        for src, dst in zip(self.layers, clone.layers):
            dst.phi_w = src.phi_w.copy()
            dst.phi_b = src.phi_b.copy()
            dst.g_fast = src.g_fast.copy()
            dst.g_slow = src.g_slow.copy()
            dst.mu_ema = src.mu_ema.copy()
            dst.memory = src.memory.copy()
            dst.pending_merge = None if src.pending_merge is None else src.pending_merge.copy()
        return clone


def _coefficients_on_tape(layer: LayerState, adaptor: AdaptorConfig, tape: GradTape | None) -> tuple:
    chunks = layer.layout.partition(layer.g_fast)
    pre = nm.chunk_affine(layer.phi_w, layer.phi_b, chunks, tape)
    mu = nm.soft_gain(pre, adaptor.gain_span, tape)
    if layer.pending_merge is not None:
        mu = nm.add_const(nm.scale(mu, adaptor.tau, tape), (1.0 - adaptor.tau) * layer.pending_merge, tape)
    c = layer.channels
    alpha = nm.slice1d(mu, 0, c, tape)
    beta = nm.slice1d(mu, c, 2 * c, tape)
    return alpha, beta


def adapted_forward(model: FsnetModel, window: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Forward pass with weight and feature gains applied per conv layer."""
    window = np.asarray(window, dtype=np.float64)
    cfg = model.config
    if window.shape != (cfg.input_channels, cfg.lookback):
        raise ShapeError(f"window shape {window.shape} != ({cfg.input_channels}, {cfg.lookback})")
    x = Tensor(window)
    adaptor = model.adaptor
    idx = 0
    for block in model.tcn.blocks:
        block_in = x
        for theta in (block.conv1, block.conv2):
            layer = model.layers[idx]
            idx += 1
            if adaptor.adaptor_enabled:
                alpha, beta = _coefficients_on_tape(layer, adaptor, tape)
                theta_tilde = nm.scale_channels(theta, alpha, tape)
                h = nm.conv1d_causal(x, theta_tilde, block.dilation, tape)
                h = nm.scale_channels(h, beta, tape)
            else:
                h = nm.conv1d_causal(x, theta, block.dilation, tape)
            x = nm.relu(h, tape)
        skip = block_in if block.proj is None else nm.conv1d_causal(block_in, block.proj, 1, tape)
        x = nm.add(x, skip, tape)
    return nm.linear(nm.last_timestep(x, tape), model.tcn.head_w, model.tcn.head_b, tape)


def fsnet_forecast(model: FsnetModel, window: np.ndarray) -> np.ndarray:
    return adapted_forward(model, window, None).data


@dataclass
class StepResult:
    forecast: np.ndarray
    loss: float
    triggered_layers: int = 0


def fsnet_step(model: FsnetModel, window: np.ndarray, target: np.ndarray, lr: float) -> StepResult:
    """One prequential online step.

    Forecasts with the current adapted weights, measures MSE against the
    revealed target, refreshes both gradient EMAs and the coefficient EMA,
    runs the memory interaction when triggered, and finally applies one
    SGD step to backbone, head, and adaptor parameters.
    """
    if not model.pretrained:
        raise ConfigError("online adaptation requires a pretrained model")
    adaptor = model.adaptor
    model.zero_grad()
    tape = GradTape()
    pred = adapted_forward(model, window, tape)
    try:
        loss = nm.mse_loss(pred, np.asarray(target, dtype=np.float64), tape)
    except NonFiniteError as exc:
        raise NonFiniteError(f"online step diverged: {exc}") from exc
    tape.backward(loss)

    triggered = 0
    for layer in model.layers:
        g_t = layer.theta.grad
        g_t = np.zeros(layer.theta.size) if g_t is None else g_t.ravel()
        update_ema_grads(layer, g_t, adaptor.gamma, adaptor.gamma_prime)
        if not adaptor.adaptor_enabled:
            continue
        mu = compute_coefficients(layer, adaptor.gain_span).concat()
        layer.mu_ema = adaptor.gamma_prime * layer.mu_ema + (1.0 - adaptor.gamma_prime) * mu
        if adaptor.memory_enabled and should_trigger(layer, adaptor.tau):
            mu_tilde, r = memory_read(layer.memory, layer.mu_ema)
            layer.pending_merge = mu_tilde
            memory_write(layer.memory, layer.mu_ema, r)
            triggered += 1
        else:
            layer.pending_merge = None

    nm.sgd_step(model.parameters(), lr)
    return StepResult(forecast=pred.data.copy(), loss=float(loss.data), triggered_layers=triggered)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def adaptor_to_payload(adaptor: AdaptorConfig) -> dict:
    return {
        "gamma": adaptor.gamma,
        "gamma_prime": adaptor.gamma_prime,
        "n_mem": adaptor.n_mem,
        "top_k": adaptor.top_k,
        "tau": adaptor.tau,
        "gain_span": adaptor.gain_span,
        "adaptor_enabled": adaptor.adaptor_enabled,
        "memory_enabled": adaptor.memory_enabled,
    }


def adaptor_from_payload(payload: dict) -> AdaptorConfig:
    return AdaptorConfig(
        gamma=float(payload["gamma"]),
        gamma_prime=float(payload["gamma_prime"]),
        n_mem=int(payload["n_mem"]),
        top_k=int(payload["top_k"]),
        tau=float(payload["tau"]),
        gain_span=float(payload["gain_span"]),
        adaptor_enabled=bool(payload["adaptor_enabled"]),
        memory_enabled=bool(payload["memory_enabled"]),
    )


def model_to_payload(model: FsnetModel) -> dict:
    layers = []
    for layer in model.layers:
        layers.append(
            {
                "phi_w": layer.phi_w.data.ravel().tolist(),
                "phi_b": layer.phi_b.data.tolist(),
                "g_fast": layer.g_fast.tolist(),
                "g_slow": layer.g_slow.tolist(),
                "mu_ema": layer.mu_ema.tolist(),
                "memory": layer.memory.slots.ravel().tolist(),
                "pending_merge": None if layer.pending_merge is None else layer.pending_merge.tolist(),
            }
        )
    return {
        "version": FSNET_CHECKPOINT_VERSION,
        "tcn": tcn_mod.model_to_payload(model.tcn),
        "adaptor": adaptor_to_payload(model.adaptor),
        "layers": layers,
        "pretrained": model.pretrained,
    }


def model_from_payload(payload: dict) -> FsnetModel:
    version = payload.get("version")
    if version != FSNET_CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}, expected {FSNET_CHECKPOINT_VERSION!r}")
    backbone = tcn_mod.model_from_payload(payload["tcn"])
    adaptor = adaptor_from_payload(payload["adaptor"])
    model = FsnetModel.from_pretrained(backbone, adaptor)
    model.pretrained = bool(payload["pretrained"])
    for layer, raw in zip(model.layers, payload["layers"]):
        layer.phi_w = Tensor(np.asarray(raw["phi_w"]).reshape(layer.layout.n_chunks, layer.layout.chunk_size))
        layer.phi_b = Tensor(np.asarray(raw["phi_b"]))
        layer.g_fast = np.asarray(raw["g_fast"], dtype=np.float64)
        layer.g_slow = np.asarray(raw["g_slow"], dtype=np.float64)
        layer.mu_ema = np.asarray(raw["mu_ema"], dtype=np.float64)
        layer.memory.slots = np.asarray(raw["memory"], dtype=np.float64).reshape(
            layer.memory.n_mem, layer.memory.d_coeff
        )
        layer.pending_merge = None if raw["pending_merge"] is None else np.asarray(raw["pending_merge"])
        layer._check()
    return model
