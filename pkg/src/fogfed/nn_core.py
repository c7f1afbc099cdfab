"""Dense 512-64-8 classifier written directly against numpy.

Forward pass, softmax cross-entropy, hand-derived backpropagation, Adam and
the local training loop run by each fog node. Every function is pure: inputs
are never mutated and fresh arrays are returned.

Parameters and activations live in float32 by default. Losses and accuracies
are accumulated in float64. All functions follow the dtype of the parameters
they are given, so the gradient checker can run the same code in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidValueError, ShapeError

DEFAULT_DIMS = (512, 64, 8)
LOG_FLOOR = 1e-12

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True, eq=False)
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        w1, b1, w2, b2 = self.arrays()
        if w1.ndim != 2 or w2.ndim != 2 or b1.ndim != 1 or b2.ndim != 1:
            raise ShapeError("expected 2-d weights and 1-d biases")
        if b1.shape[0] != w1.shape[1] or w2.shape[0] != w1.shape[1] or b2.shape[0] != w2.shape[1]:
            raise ShapeError(
                f"incongruent shapes w1{w1.shape} b1{b1.shape} w2{w2.shape} b2{b2.shape}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.w1, self.b1, self.w2, self.b2)

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(*(a.astype(dtype) for a in self.arrays()))

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def same_shape(self, other: "ModelParams") -> bool:
        return all(a.shape == b.shape for a, b in zip(self.arrays(), other.arrays()))

    def __eq__(self, other):
        # Bit-exact comparison; dtype, shape and every byte must agree.
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )

    __hash__ = None


# Gradients share the container: same four arrays, same shapes.
Gradients = ModelParams


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    local_epochs: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise InvalidArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise InvalidArgumentError(f"{name} must lie in (0, 1), got {value}")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("local_epochs and batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        zeros = ModelParams(*(np.zeros_like(a) for a in params.arrays()))
        return cls(m=zeros, v=zeros.copy(), t=0)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    inputs: np.ndarray
    hidden_pre: np.ndarray
    hidden_post: np.ndarray
    probs: np.ndarray


def init_params(seed: int, dims: Sequence[int] = DEFAULT_DIMS, dtype=np.float32) -> ModelParams:
    """Kaiming-uniform weights, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.

    Draws come from numpy's PCG64 generator seeded with ``seed``; w1 is drawn
    before w2, so identical (seed, dims) give bit-identical parameters.
    """
    if len(dims) != 3:
        raise InvalidArgumentError(f"dims must be (input, hidden, output), got {dims}")
    n_in, n_hidden, n_out = (int(d) for d in dims)
    if min(n_in, n_hidden, n_out) < 1:
        raise InvalidArgumentError(f"all dims must be >= 1, got {tuple(dims)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    bound1 = math.sqrt(6.0 / n_in)
    bound2 = math.sqrt(6.0 / n_hidden)
    w1 = rng.uniform(-bound1, bound1, size=(n_in, n_hidden)).astype(dtype)
    w2 = rng.uniform(-bound2, bound2, size=(n_hidden, n_out)).astype(dtype)
    return ModelParams(w1, np.zeros(n_hidden, dtype), w2, np.zeros(n_out, dtype))


def zero_params(dims: Sequence[int] = DEFAULT_DIMS, dtype=np.float32) -> ModelParams:
    n_in, n_hidden, n_out = dims
    return ModelParams(
        np.zeros((n_in, n_hidden), dtype),
        np.zeros(n_hidden, dtype),
        np.zeros((n_hidden, n_out), dtype),
        np.zeros(n_out, dtype),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis (a vector or a batch of rows)."""
    logits = np.asarray(logits)
    if not np.issubdtype(logits.dtype, np.floating):
        logits = logits.astype(np.float64)
    if np.isnan(logits).any():
        raise InvalidValueError("softmax input contains NaN")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, batch: np.ndarray) -> ForwardCache:
    batch = np.asarray(batch, dtype=params.dtype)
    if batch.ndim != 2 or batch.shape[1] != params.dims[0] or batch.shape[0] < 1:
        raise ShapeError(f"batch must be B x {params.dims[0]} with B >= 1, got {batch.shape}")
    hidden_pre = batch @ params.w1 + params.b1
    hidden_post = np.maximum(hidden_pre, 0)
    probs = softmax(hidden_post @ params.w2 + params.b2)
    return ForwardCache(batch, hidden_pre, hidden_post, probs)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_rows:
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if n_rows and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.intp)


def cross_entropy_loss(probs: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of the true class, clamped at LOG_FLOOR."""
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ShapeError(f"probs must be a non-empty B x C matrix, got {probs.shape}")
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.log(np.maximum(picked, LOG_FLOOR)).mean())


def backward(params: ModelParams, cache: ForwardCache, labels) -> Gradients:
    probs = cache.probs
    n = probs.shape[0]
    if cache.hidden_pre.shape != (n, params.dims[1]) or probs.shape[1] != params.dims[2]:
        raise ShapeError("forward cache does not match params")
    labels = _check_labels(labels, n, probs.shape[1])

    delta_out = probs.copy()
    delta_out[np.arange(n), labels] -= 1
    delta_out /= n
    dw2 = cache.hidden_post.T @ delta_out
    db2 = delta_out.sum(axis=0)
    # ReLU subgradient is 0 at exactly 0.
    delta_hidden = (delta_out @ params.w2.T) * (cache.hidden_pre > 0)
    dw1 = cache.inputs.T @ delta_hidden
    db1 = delta_hidden.sum(axis=0)
    dtype = params.dtype
    return Gradients(dw1.astype(dtype), db1.astype(dtype), dw2.astype(dtype), db2.astype(dtype))


def loss_and_grads(params: ModelParams, batch, labels) -> tuple[float, Gradients]:
    cache = forward(params, batch)
    return cross_entropy_loss(cache.probs, labels), backward(params, cache, labels)


def adam_step(
    params: ModelParams, grads: Gradients, state: AdamState, hyper: HyperParams
) -> tuple[ModelParams, AdamState]:
    if not params.same_shape(grads) or not params.same_shape(state.m):
        raise ShapeError("params, grads and optimizer state must be shape-congruent")
    if not grads.is_finite():
        raise InvalidValueError("non-finite gradient")
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_p.append(p - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon))
        new_m.append(m)
        new_v.append(v)
    return ModelParams(*new_p), AdamState(ModelParams(*new_m), ModelParams(*new_v), t)


def as_arrays(data, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Coerce a dataset-like value into (features, labels) arrays.

    Accepts anything with ``features``/``labels`` attributes, a
    ``(features, labels)`` pair, or a sequence of frames.
    """
    if hasattr(data, "features") and hasattr(data, "labels"):
        x, y = data.features, data.labels
    elif isinstance(data, tuple) and len(data) == 2:
        x, y = data
    else:
        frames = list(data)
        if not frames:
            return np.empty((0, 0), dtype), np.empty(0, np.intp)
        x = np.stack([f.features for f in frames])
        y = np.array([f.label for f in frames])
    return np.asarray(x, dtype=dtype), np.asarray(y, dtype=np.intp)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_local(
    params: ModelParams, window, hyper: HyperParams = HyperParams(), seed: int = 0
) -> tuple[ModelParams, float]:
    """Run ``hyper.local_epochs`` epochs of mini-batch Adam over ``window``.

    Optimizer state starts from zero on every call. Each epoch visits the
    window in an order fixed by (seed, epoch). Returns the trained params and
    the mean cross-entropy over the window under those params.
    """
    x, y = as_arrays(window, params.dtype)
    if len(y) == 0:
        raise InvalidArgumentError("cannot train on an empty window")
    if seed < 0:
        raise InvalidArgumentError("seed must be non-negative")
    state = AdamState.zeros_like(params)
    bs = hyper.batch_size
    for epoch in range(hyper.local_epochs):
        order = epoch_order(len(y), seed, epoch)
        for start in range(0, len(y), bs):
            idx = order[start:start + bs]
            _, grads = loss_and_grads(params, x[idx], y[idx])
            params, state = adam_step(params, grads, state, hyper)
    if not params.is_finite():
        raise InvalidValueError("training diverged to non-finite parameters")
    loss = cross_entropy_loss(forward(params, x).probs, y)
    return params, loss


def predict(params: ModelParams, features) -> np.ndarray:
    """Class predictions; ties go to the lowest index."""
    return np.argmax(forward(params, features).probs, axis=1)


def evaluate(params: ModelParams, data) -> tuple[float, float]:
    x, y = as_arrays(data, params.dtype)
    if len(y) == 0:
        raise InvalidArgumentError("cannot evaluate on empty data")
    probs = forward(params, x).probs
    loss = cross_entropy_loss(probs, y)
    accuracy = float(np.count_nonzero(np.argmax(probs, axis=1) == y)) / len(y)
    return loss, accuracy
