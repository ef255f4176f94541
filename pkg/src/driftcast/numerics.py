"""Dense float64 tensor math with hand-written reverse-mode gradients.

Everything the forecasting models need is implemented here as explicit
forward/backward pairs recorded on a :class:`GradTape`.  The op set is
deliberately small: causal dilated 1-D convolution, affine maps, ReLU,
MSE loss, a handful of elementwise helpers, and the non-differentiated
utilities (softmax, cosine similarity, top-k, SGD).

Shapes are fixed per op; there is no general broadcasting.  Convolution
and the affine ops accept an optional leading batch axis because the
training loops need mini-batches, but nothing beyond that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "GradTape",
    "conv1d_causal",
    "linear",
    "relu",
    "add",
    "scale",
    "add_const",
    "scale_channels",
    "last_timestep",
    "slice1d",
    "chunk_affine",
    "soft_gain",
    "mse_loss",
    "softmax",
    "cosine_similarity",
    "topk",
    "sgd_step",
    "finite_difference_grad",
    "run_gradcheck",
    "GradCheckReport",
]

ZERO_NORM_EPS = 1e-12


class Tensor:
    """Contiguous float64 array plus an accumulated gradient buffer.

    ``grad`` is ``None`` until a backward pass deposits something.  The
    tape's closures only propagate into tensors that already appear as
    op inputs, so leaves created by the caller (parameters) keep their
    gradients across the whole backward walk.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape})"


class GradTape:
    """Ordered record of primitive ops, replayed in reverse for adjoints."""

    def __init__(self) -> None:
        self._records: list[Callable[[], None]] = []
        self._consumed = False

    def record(self, backward_fn: Callable[[], None]) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by backward(); record onto a fresh tape")
        self._records.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        """Seed the scalar ``loss`` with adjoint 1 and walk ops in reverse."""
        if self._consumed:
            raise TapeError("backward() called twice on the same tape")
        if loss.data.ndim != 0:
            raise ShapeError(f"backward seed must be a scalar, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for fn in reversed(self._records):
            fn()

    def __len__(self) -> int:
        return len(self._records)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _check_finite(arr: np.ndarray, op: str) -> None:
    # A single reduction: any NaN/Inf poisons the sum.
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(arr: np.ndarray, op: str) -> Tensor:
    _check_finite(arr, op)
    return Tensor(arr)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv1d_causal(x: Tensor, kernel: Tensor, dilation: int = 1, tape: GradTape | None = None) -> Tensor:
    """Dilated causal convolution with left zero-padding.

    out[c, i] = sum_{c', m} kernel[c, c', m] * x[c', i - m*dilation];
    output length equals input length.  ``x`` may carry a leading batch
    axis ([B, C_in, T]).  Both cases reduce to one GEMM over stacked
    dilated taps; the batched case folds the batch into the time axis.
    """
    if dilation < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")
    if kernel.data.ndim != 3:
        raise ShapeError(f"kernel must be [C_out, C_in, k], got shape {kernel.shape}")
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"input must be [C_in, T] or [B, C_in, T], got shape {x.shape}")
    c_out, c_in, k = kernel.shape
    if k < 1:
        raise ShapeError("kernel size must be >= 1")
    if x.shape[-2] != c_in:
        raise ShapeError(f"kernel expects {c_in} input channels, input has {x.shape[-2]}")

    batched = x.data.ndim == 3
    T = x.shape[-1]
    pad = (k - 1) * dilation
    kflat = kernel.data.reshape(c_out, c_in * k)
    if batched:
        b = x.shape[0]
        # channel-major padded copy so each tap is one contiguous block
        xp = np.zeros((c_in, b, T + pad))
        xp[:, :, pad:] = x.data.transpose(1, 0, 2)
        cols = np.empty((c_in, k, b, T))
        for m in range(k):
            start = pad - m * dilation
            cols[:, m] = xp[:, :, start : start + T]
        cols2 = cols.reshape(c_in * k, b * T)
        out = (kflat @ cols2).reshape(c_out, b, T).transpose(1, 0, 2)
    else:
        xp = np.zeros((c_in, T + pad))
        xp[:, pad:] = x.data
        cols = np.empty((c_in, k, T))
        for m in range(k):
            start = pad - m * dilation
            cols[:, m] = xp[:, start : start + T]
        cols2 = cols.reshape(c_in * k, T)
        out = kflat @ cols2
    result = _make(out, "conv1d_causal")

    if tape is not None:

        def _bw() -> None:
            up = result.grad
            if up is None:
                return
            if batched:
                up2 = np.ascontiguousarray(up.transpose(1, 0, 2)).reshape(c_out, b * T)
            else:
                up2 = up
            gk = (up2 @ cols2.T).reshape(c_out, c_in, k)
            _accumulate(kernel, gk)
            gcols = (kflat.T @ up2).reshape((c_in, k, b, T) if batched else (c_in, k, T))
            gxp = np.zeros_like(xp)
            for m in range(k):
                start = pad - m * dilation
                gxp[..., start : start + T] += gcols[:, m]
            gx = gxp[..., pad:]
            _accumulate(x, gx.transpose(1, 0, 2) if batched else gx)

        tape.record(_bw)
    return result


# ---------------------------------------------------------------------------
# affine / elementwise
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor, tape: GradTape | None = None) -> Tensor:
    """out = weight @ x + bias; x is [F] or [B, F], weight [O, F], bias [O]."""
    if weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("weight must be [O, F] and bias [O]")
    o, f = weight.shape
    if bias.shape[0] != o:
        raise ShapeError(f"bias length {bias.shape[0]} != weight rows {o}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != f:
        raise ShapeError(f"input shape {x.shape} incompatible with weight [{o}, {f}]")
    out = x.data @ weight.data.T + bias.data
    result = _make(out, "linear")

    if tape is not None:
        batched = x.data.ndim == 2

        def _bw() -> None:
            up = result.grad
            if up is None:
                return
            if batched:
                _accumulate(weight, up.T @ x.data)
                _accumulate(bias, up.sum(axis=0))
            else:
                _accumulate(weight, np.outer(up, x.data))
                _accumulate(bias, up)
            _accumulate(x, up @ weight.data)

        tape.record(_bw)
    return result


def relu(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is 0."""
    out = np.maximum(x.data, 0.0)
    result = _make(out, "relu")
    if tape is not None:
        mask = x.data > 0.0

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(x, result.grad * mask)

        tape.record(_bw)
    return result


def add(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    result = _make(a.data + b.data, "add")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(a, result.grad)
            _accumulate(b, result.grad)

        tape.record(_bw)
    return result


def scale(x: Tensor, factor: float, tape: GradTape | None = None) -> Tensor:
    """Multiply by a python scalar constant (no gradient w.r.t. the factor)."""
    result = _make(x.data * factor, "scale")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(x, result.grad * factor)

        tape.record(_bw)
    return result


def add_const(x: Tensor, const: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Add a constant array (gradient passes through to ``x`` only)."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != x.shape:
        raise ShapeError(f"add_const shapes differ: {x.shape} vs {const.shape}")
    result = _make(x.data + const, "add_const")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(x, result.grad)

        tape.record(_bw)
    return result


def scale_channels(x: Tensor, gains: Tensor, tape: GradTape | None = None) -> Tensor:
    """Scale along the leading axis: out[c, ...] = gains[c] * x[c, ...]."""
    if gains.data.ndim != 1:
        raise ShapeError(f"gains must be 1-D, got shape {gains.shape}")
    c = gains.shape[0]
    if x.data.ndim < 1 or x.shape[0] != c:
        raise ShapeError(f"leading axis of {x.shape} != gains length {c}")
    g = gains.data.reshape((c,) + (1,) * (x.data.ndim - 1))
    result = _make(x.data * g, "scale_channels")
    if tape is not None:

        def _bw() -> None:
            up = result.grad
            if up is None:
                return
            _accumulate(x, up * g)
            axes = tuple(range(1, x.data.ndim))
            _accumulate(gains, (up * x.data).sum(axis=axes) if axes else up * x.data)

        tape.record(_bw)
    return result


def last_timestep(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Select the final time column: [C, T] -> [C] (or [B, C, T] -> [B, C])."""
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"expected [C, T] or [B, C, T], got {x.shape}")
    result = _make(np.ascontiguousarray(x.data[..., -1]), "last_timestep")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            g = np.zeros_like(x.data)
            g[..., -1] = result.grad
            _accumulate(x, g)

        tape.record(_bw)
    return result


def slice1d(x: Tensor, start: int, stop: int, tape: GradTape | None = None) -> Tensor:
    """Contiguous slice of a 1-D tensor."""
    if x.data.ndim != 1:
        raise ShapeError(f"slice1d expects 1-D input, got {x.shape}")
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for length {x.shape[0]}")
    result = _make(x.data[start:stop].copy(), "slice1d")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            g = np.zeros_like(x.data)
            g[start:stop] = result.grad
            _accumulate(x, g)

        tape.record(_bw)
    return result


def chunk_affine(weight: Tensor, bias: Tensor, chunks: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Per-chunk affine map: out[i] = sum_j weight[i, j] * chunks[i, j] + bias[i].

    ``chunks`` is a constant [n, c] array (a partitioned gradient snapshot);
    gradients flow to ``weight`` and ``bias`` only.
    """
    chunks = np.asarray(chunks, dtype=np.float64)
    if weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("weight must be [n, c] and bias [n]")
    if chunks.shape != weight.shape or bias.shape[0] != weight.shape[0]:
        raise ShapeError(
            f"chunk layout mismatch: weight {weight.shape}, bias {bias.shape}, chunks {chunks.shape}"
        )
    out = (weight.data * chunks).sum(axis=1) + bias.data
    result = _make(out, "chunk_affine")
    if tape is not None:

        def _bw() -> None:
            up = result.grad
            if up is None:
                return
            _accumulate(weight, up[:, None] * chunks)
            _accumulate(bias, up)

        tape.record(_bw)
    return result


def soft_gain(x: Tensor, span: float, tape: GradTape | None = None) -> Tensor:
    """Bounded multiplicative gain centered at identity: 1 + span * tanh(x)."""
    th = np.tanh(x.data)
    result = _make(1.0 + span * th, "soft_gain")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(x, result.grad * span * (1.0 - th * th))

        tape.record(_bw)
    return result


def mse_loss(pred: Tensor, target: Tensor | np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Mean of squared differences over all elements; gradient w.r.t. pred only."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    result = _make(np.asarray((diff * diff).sum() / n), "mse_loss")
    if tape is not None:

        def _bw() -> None:
            if result.grad is None:
                return
            _accumulate(pred, (2.0 / n) * diff * result.grad)

        tape.record(_bw)
    return result


# ---------------------------------------------------------------------------
# non-differentiated utilities
# ---------------------------------------------------------------------------


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D vector (max-subtraction)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D vector, got shape {v.shape}")
    e = np.exp(v - v.max())
    return e / e.sum()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|); defined as 0 when either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine shapes differ: {a.shape} vs {b.shape}")
    na2 = float(np.dot(a, a))
    nb2 = float(np.dot(b, b))
    if na2 < ZERO_NORM_EPS**2 or nb2 < ZERO_NORM_EPS**2:
        return 0.0
    # sqrt(na2 * nb2) keeps identical/negated vectors at exactly +/-1
    return float(np.clip(np.dot(a, b) / math.sqrt(na2 * nb2), -1.0, 1.0))


def topk(v: np.ndarray, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and values of the ``count`` largest entries.

    Ties break toward the lowest index; fully deterministic.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"topk expects a 1-D vector, got shape {v.shape}")
    if not (1 <= count <= v.shape[0]):
        raise ShapeError(f"count {count} out of range for length {v.shape[0]}")
    # stable sort on (-value) keeps earlier indices first among ties
    order = np.argsort(-v, kind="stable")[:count]
    return order, v[order]


def sgd_step(params: Sequence[Tensor], lr: float, grads: Sequence[np.ndarray] | None = None) -> None:
    """In-place p <- p - lr * g for each parameter.

    With ``grads=None`` the accumulated ``.grad`` buffers are used;
    parameters whose gradient is absent are left untouched.
    """
    if grads is not None:
        if len(grads) != len(params):
            raise ShapeError("params and grads length mismatch")
        for p, g in zip(params, grads):
            p.data -= lr * np.asarray(g, dtype=np.float64).reshape(p.shape)
        return
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def finite_difference_grad(
    f: Callable[..., float], arrays: list[np.ndarray], step: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of a scalar function in each array argument."""
    grads = []
    for ai, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.ravel()
        gflat = g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = f(*arrays)
            flat[j] = orig - step
            lo = f(*arrays)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


@dataclass
class GradCheckReport:
    passed: bool
    trials: int
    max_rel_err: float
    per_op: dict[str, float] = field(default_factory=dict)
    elapsed_seconds: float = 0.0


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def run_gradcheck(trials: int = 100, seed: int = 0, step: float = 1e-5, rtol: float = 1e-4) -> GradCheckReport:
    """Randomized finite-difference verification of every differentiable op.

    Each trial draws a small random instance per op, projects the op output
    against a fixed random seed matrix so the check reduces to a scalar, and
    compares tape adjoints against central differences.
    """
    import time

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def check(name: str, build, arrays: list[np.ndarray]) -> None:
        # build(arrays, tape) -> (output tensor, list of input tensors to grade)
        tape = GradTape()
        tensors = [Tensor(a) for a in arrays]
        out, graded = build(tensors, tape)
        proj = rng.standard_normal(out.shape)
        loss_val = float((out.data * proj).sum())

        # seed backward with the projection
        flat_loss = Tensor(np.asarray(loss_val))

        def _seed() -> None:
            _accumulate(out, proj * (flat_loss.grad if flat_loss.grad is not None else 1.0))

        tape.record(_seed)
        tape.backward(flat_loss)

        def scalar_f(*arrs: np.ndarray) -> float:
            ts = [Tensor(a) for a in arrs]
            o, _ = build(ts, None)
            return float((o.data * proj).sum())

        numeric = finite_difference_grad(scalar_f, [a.copy() for a in arrays], step=step)
        for tens, num in zip(graded, numeric):
            analytic = tens.grad if tens.grad is not None else np.zeros_like(num)
            err = _rel_err(np.asarray(analytic, dtype=np.float64).reshape(num.shape), num)
            worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(trials):
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 3))
        k = int(rng.integers(1, 4))
        d = int(rng.integers(1, 3))
        T = int(rng.integers(k * d, k * d + 5))
        x = rng.standard_normal((c_in, T))
        kern = rng.standard_normal((c_out, c_in, k))
        check(
            "conv1d_causal",
            lambda ts, tape: (conv1d_causal(ts[0], ts[1], d, tape), ts),
            [x, kern],
        )

        f = int(rng.integers(1, 5))
        o = int(rng.integers(1, 5))
        check(
            "linear",
            lambda ts, tape: (linear(ts[0], ts[1], ts[2], tape), ts),
            [rng.standard_normal(f), rng.standard_normal((o, f)), rng.standard_normal(o)],
        )

        # keep relu inputs away from the kink
        rx = rng.standard_normal(6)
        rx[np.abs(rx) < 1e-3] = 0.5
        check("relu", lambda ts, tape: (relu(ts[0], tape), ts), [rx])

        h = int(rng.integers(1, 5))
        pred = rng.standard_normal(h)
        tgt = rng.standard_normal(h)
        check(
            "mse_loss",
            lambda ts, tape: (mse_loss(ts[0], tgt, tape), [ts[0]]),
            [pred],
        )

        n = int(rng.integers(2, 5))
        check("add", lambda ts, tape: (add(ts[0], ts[1], tape), ts), [rng.standard_normal(n), rng.standard_normal(n)])

        factor = float(rng.standard_normal())
        check("scale", lambda ts, tape: (scale(ts[0], factor, tape), ts), [rng.standard_normal(n)])

        cv = rng.standard_normal(n)
        check("add_const", lambda ts, tape: (add_const(ts[0], cv, tape), ts), [rng.standard_normal(n)])

        c = int(rng.integers(1, 4))
        t_len = int(rng.integers(1, 4))
        check(
            "scale_channels",
            lambda ts, tape: (scale_channels(ts[0], ts[1], tape), ts),
            [rng.standard_normal((c, t_len)), rng.standard_normal(c)],
        )

        check(
            "last_timestep",
            lambda ts, tape: (last_timestep(ts[0], tape), ts),
            [rng.standard_normal((c, t_len + 1))],
        )

        ln = int(rng.integers(2, 6))
        lo_i = int(rng.integers(0, ln - 1))
        hi_i = int(rng.integers(lo_i + 1, ln + 1))
        check(
            "slice1d",
            lambda ts, tape: (slice1d(ts[0], lo_i, hi_i, tape), ts),
            [rng.standard_normal(ln)],
        )

        nch = int(rng.integers(1, 4))
        csz = int(rng.integers(1, 4))
        chv = rng.standard_normal((nch, csz))
        check(
            "chunk_affine",
            lambda ts, tape: (chunk_affine(ts[0], ts[1], chv, tape), ts),
            [rng.standard_normal((nch, csz)), rng.standard_normal(nch)],
        )

        span = float(rng.uniform(0.1, 1.0))
        check("soft_gain", lambda ts, tape: (soft_gain(ts[0], span, tape), ts), [rng.standard_normal(n)])

    max_err = max(worst.values()) if worst else 0.0
    return GradCheckReport(
        passed=max_err <= rtol,
        trials=trials,
        max_rel_err=max_err,
        per_op=dict(sorted(worst.items())),
        elapsed_seconds=time.perf_counter() - t0,
    )
