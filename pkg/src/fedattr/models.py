"""Small differentiable classifiers over a flat parameter vector.

Two architectures are supported: multinomial logistic regression and a
one-hidden-layer tanh MLP.  Every operation treats the model as a pure
function of a flat float64 parameter vector, so updates, gradients, and
aggregates all live in one vector space.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

KINDS = ("logistic", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor fixing the flat-index-to-tensor layout."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.kind == "logistic" and self.hidden_dim != 0:
            raise ValueError("logistic model takes hidden_dim=0")
        if self.kind == "mlp1" and self.hidden_dim < 1:
            raise ValueError("mlp1 requires hidden_dim >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")

    @property
    def param_count(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if self.kind == "logistic":
            return c * d + c
        return h * d + h + c * h + c


@dataclass(frozen=True)
class LabeledBatch:
    """Immutable matrix of inputs with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)  # 0 means "infer from labels"

    def __post_init__(self) -> None:
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D matrix")
        if labels.ndim != 1 or len(labels) != inputs.shape[0]:
            raise ValueError("labels length must match input rows")
        if inputs.size and not np.all(np.isfinite(inputs)):
            raise ValueError("inputs must be finite")
        if len(labels) and labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def take(batch: LabeledBatch, idx: np.ndarray) -> LabeledBatch:
    """Row subset of a batch (copying)."""
    return LabeledBatch(batch.inputs[idx], batch.labels[idx], batch.num_classes)


def concat_batches(a: LabeledBatch, b: LabeledBatch) -> LabeledBatch:
    if a.inputs.shape[1] != b.inputs.shape[1]:
        raise ValueError("input dims differ")
    return LabeledBatch(
        np.concatenate([a.inputs, b.inputs], axis=0),
        np.concatenate([a.labels, b.labels]),
        max(a.num_classes, b.num_classes),
    )


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Fresh parameters: weights ~ N(0, 1/fan_in), biases exactly zero."""
    rng = np.random.default_rng(seed)
    d, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    if spec.kind == "logistic":
        w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(c, d))
        return np.concatenate([w.ravel(), np.zeros(c)])
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=(c, h))
    return np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])


def _views(spec: ModelSpec, params: np.ndarray):
    """Reshaped views into the flat vector, in layout order."""
    d, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    if params.ndim != 1 or len(params) != spec.param_count:
        raise ValueError(
            f"parameter vector has length {len(params)}, expected {spec.param_count}"
        )
    if spec.kind == "logistic":
        w = params[: c * d].reshape(c, d)
        b = params[c * d :]
        return w, b
    o1 = h * d
    o2 = o1 + h
    o3 = o2 + c * h
    return (
        params[:o1].reshape(h, d),
        params[o1:o2],
        params[o2:o3].reshape(c, h),
        params[o3:],
    )


def _logits(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    if inputs.shape[1] != spec.input_dim:
        raise ValueError(
            f"inputs have {inputs.shape[1]} columns, expected {spec.input_dim}"
        )
    if spec.kind == "logistic":
        w, b = _views(spec, params)
        return inputs @ w.T + b
    w1, b1, w2, b2 = _views(spec, params)
    hidden = np.tanh(inputs @ w1.T + b1)
    return hidden @ w2.T + b2


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec: ModelSpec, params: np.ndarray, batch: LabeledBatch) -> np.ndarray:
    """Per-row class probabilities (rows sum to one)."""
    return _softmax(_logits(spec, params, batch.inputs))


def loss_and_grad(
    spec: ModelSpec, params: np.ndarray, batch: LabeledBatch
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in the flat space."""
    if len(batch) == 0:
        raise ValueError("batch is empty")
    x, y = batch.inputs, batch.labels
    if y.max() >= spec.num_classes:
        raise ValueError("label out of range for num_classes")
    n = len(batch)

    if spec.kind == "logistic":
        w, b = _views(spec, params)
        z = x @ w.T + b
        logp = z - _logsumexp_rows(z)
        loss = -float(logp[np.arange(n), y].mean())
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grad_w = delta.T @ x
        grad_b = delta.sum(axis=0)
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    w1, b1, w2, b2 = _views(spec, params)
    hidden = np.tanh(x @ w1.T + b1)
    z = hidden @ w2.T + b2
    logp = z - _logsumexp_rows(z)
    loss = -float(logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w2 = delta.T @ hidden
    grad_b2 = delta.sum(axis=0)
    dhidden = (delta @ w2) * (1.0 - hidden * hidden)
    grad_w1 = dhidden.T @ x
    grad_b1 = dhidden.sum(axis=0)
    return loss, np.concatenate(
        [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
    )


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def accuracy(spec: ModelSpec, params: np.ndarray, batch: LabeledBatch) -> float:
    """Fraction of argmax-correct rows; argmax ties go to the lowest class."""
    if len(batch) == 0:
        raise ValueError("batch is empty")
    z = _logits(spec, params, batch.inputs)
    pred = z.argmax(axis=1)  # np.argmax breaks ties toward the lowest index
    return float((pred == batch.labels).mean())


def sgd_train(
    spec: ModelSpec,
    params: np.ndarray,
    data: LabeledBatch,
    epochs: int,
    batch_size: int,
    eta_w: float,
    seed: int,
) -> np.ndarray:
    """Mini-batch SGD with per-epoch reshuffling; returns new parameters.

    Deterministic for fixed (inputs, seed); the input vector is never mutated.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if not np.isfinite(eta_w) or eta_w < 0:
        raise ValueError("eta_w must be a finite non-negative step size")
    if len(data) == 0:
        raise ValueError("training data is empty")

    w = np.array(params, dtype=np.float64, copy=True)
    rng = np.random.default_rng(seed)
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grad = loss_and_grad(spec, w, take(data, idx))
            w -= eta_w * grad
    return w


# Flat-vector wire format: uint64 little-endian length prefix, then the raw
# float64 little-endian payload.  Used by the training-log persistence layer.

def params_to_bytes(params: np.ndarray) -> bytes:
    vec = np.ascontiguousarray(params, dtype="<f8")
    return struct.pack("<Q", vec.size) + vec.tobytes()


def params_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise ValueError("truncated parameter blob")
    (count,) = struct.unpack_from("<Q", blob, 0)
    expected = 8 + 8 * count
    if len(blob) != expected:
        raise ValueError(f"parameter blob has {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f8", offset=8).astype(np.float64)
