"""Feedforward classifier with a flat parameter vector, trained with Adam.

Parameters are stored layer by layer as ``W`` (fan_in x fan_out, row-major)
followed by ``b``. Hidden layers are affine -> ReLU -> inverted dropout;
the output layer is affine -> softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_HIDDEN = (64, 32, 16)


@dataclass(frozen=True)
class LayerLayout:
    input_dim: int
    hidden_dims: tuple = DEFAULT_HIDDEN
    output_dim: int = 7
    dropout_rate: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min(self.dims) < 1:
            raise ValueError(f"all layer dims must be >= 1, got {self.dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return list(zip(d[:-1], d[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)


@dataclass
class ModelParams:
    vector: np.ndarray
    layout: LayerLayout

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.layout.n_params,):
            raise ValueError(
                f"parameter vector has length {self.vector.size}, layout needs {self.layout.n_params}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat vector."""
        return _split(self.vector, self.layout)

    def copy(self) -> "ModelParams":
        return ModelParams(self.vector.copy(), self.layout)


def _split(flat: np.ndarray, layout: LayerLayout):
    out = []
    offset = 0
    for fan_in, fan_out in layout.shapes:
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_model(layout: LayerLayout, seed) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = ModelParams(np.zeros(layout.n_params), layout)
    for w, _ in params.layers():
        fan_in, fan_out = w.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.layout.input_dim:
        raise ValueError(
            f"batch width {batch.shape[-1] if batch.ndim else None} does not match "
            f"input_dim {params.layout.input_dim}"
        )
    return batch


def _forward_cache(params: ModelParams, x: np.ndarray, rng):
    layers = params.layers()
    rate = params.layout.dropout_rate
    acts = [x]
    masks = []
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        if rng is not None and rate > 0:
            mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)
    w, b = layers[-1]
    probs = _softmax(h @ w + b)
    return probs, acts, masks


def forward(params: ModelParams, batch, train_mode: bool = False, rng=None) -> np.ndarray:
    """Class-probability matrix, one row per input row."""
    x = _check_batch(params, batch)
    if train_mode and params.layout.dropout_rate > 0:
        if rng is None:
            raise ValueError("train_mode forward with dropout needs an rng")
    else:
        rng = None
    probs, _, _ = _forward_cache(params, x, rng)
    return probs


def predict(params: ModelParams, batch) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return forward(params, batch).argmax(axis=1)


def loss_and_gradient(params: ModelParams, batch, labels, class_weights, rng=None):
    """Class-weighted cross entropy averaged over the batch, with its gradient.

    When ``rng`` is given, dropout is active (training pass).
    """
    x = _check_batch(params, batch)
    y = np.asarray(labels, dtype=np.int64)
    cw = np.asarray(class_weights, dtype=np.float64)
    k = params.layout.output_dim
    if cw.shape != (k,):
        raise ValueError(f"class_weights must have length {k}")
    if y.shape != (x.shape[0],) or (y.size and (y.min() < 0 or y.max() >= k)):
        raise ValueError("labels out of range or misaligned with batch")
    if params.layout.dropout_rate == 0:
        rng = None

    probs, acts, masks = _forward_cache(params, x, rng)
    n = x.shape[0]
    rows = np.arange(n)
    sample_w = cw[y]
    p_true = probs[rows, y]
    loss = float(np.mean(sample_w * -np.log(np.maximum(p_true, 1e-300))))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    grad = np.zeros_like(params.vector)
    grad_layers = _split(grad, params.layout)
    layers = params.layers()

    delta = probs.copy()
    delta[rows, y] -= 1.0
    delta *= (sample_w / n)[:, None]
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        gw, gb = grad_layers[idx]
        a_in = acts[idx]
        gw[...] = a_in.T @ delta
        gb[...] = delta.sum(axis=0)
        if idx == 0:
            break
        delta = delta @ w.T
        mask = masks[idx - 1]
        if mask is not None:
            delta = delta * mask
        # acts[idx] is post-ReLU (and post-dropout); its sign pattern gates the ReLU
        delta = delta * (a_in > 0)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return loss, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 0.001) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def _adam_update_(vector, m, v, t, grad, lr, beta1, beta2, eps) -> None:
    """In-place bias-corrected Adam update of ``vector``, ``m`` and ``v`` for step ``t``.

    Bias corrections are folded into scalars: the step is
    ``lr / (1 - beta1**t) * m / (sqrt(v) / sqrt(1 - beta2**t) + eps)``.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    denom = np.sqrt(v)
    denom /= np.sqrt(1.0 - beta2**t)
    denom += eps
    np.divide(m, denom, out=denom)
    denom *= lr / (1.0 - beta1**t)
    vector -= denom


def adam_step(state: AdamState, params: ModelParams, grad) -> tuple[ModelParams, AdamState]:
    grad = np.asarray(grad, dtype=np.float64)
    if not (grad.shape == params.vector.shape == state.m.shape == state.v.shape):
        raise ValueError("adam_step: parameter, gradient and moment lengths differ")
    new_state = state.copy()
    new_state.t += 1
    new_params = params.copy()
    _adam_update_(
        new_params.vector, new_state.m, new_state.v, new_state.t, grad,
        state.lr, state.beta1, state.beta2, state.eps,
    )
    return new_params, new_state


def class_weights_for(labels: np.ndarray, k: int) -> np.ndarray:
    """Inverse label frequency, normalized to mean 1 over the classes present.

    Absent classes get weight 1; they never appear in the loss.
    """
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=k).astype(float)
    weights = np.ones(k)
    present = counts > 0
    inv = 1.0 / counts[present]
    weights[present] = inv / inv.mean()
    return weights


def train_local(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 16,
    lr: float = 0.001,
) -> ModelParams:
    """Shuffled mini-batch training with a fresh Adam state; returns new params."""
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    if epochs <= 0:
        return params.copy()
    cw = class_weights_for(labels, params.layout.output_dim)
    state = AdamState.zeros(params.layout.n_params, lr)
    current = params.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grad = loss_and_gradient(current, features[idx], labels[idx], cw, rng=rng)
            state.t += 1
            _adam_update_(current.vector, state.m, state.v, state.t, grad, lr, state.beta1, state.beta2, state.eps)
    return current


# Checkpoint layout: int32 count, int32 dims..., then float64 parameters, all little-endian.


def save_checkpoint(path, params: ModelParams) -> None:
    dims = params.layout.dims
    header = struct.pack(f"<i{len(dims)}i", len(dims), *dims)
    Path(path).write_bytes(header + params.vector.astype("<f8").tobytes())


def load_checkpoint(path, dropout_rate: float = 0.2) -> ModelParams:
    raw = Path(path).read_bytes()
    (count,) = struct.unpack_from("<i", raw, 0)
    dims = struct.unpack_from(f"<{count}i", raw, 4)
    layout = LayerLayout(dims[0], tuple(dims[1:-1]), dims[-1], dropout_rate)
    vector = np.frombuffer(raw, dtype="<f8", offset=4 + 4 * count).astype(np.float64)
    return ModelParams(vector, layout)
