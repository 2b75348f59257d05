"""Small softmax MLP trained with mini-batch SGD, plus uniform weight quantization.

Weights are a flat float64 vector (``W_0, b_0, W_1, b_1, ...``) paired with an
:class:`MlpSpec`. Every function here is pure: inputs are never mutated and all
randomness comes from an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels

ACTIVATIONS = {"relu": kernels.RELU, "tanh": kernels.TANH}
QUANT_BITS = (0, 4, 8, 16)


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("MlpSpec needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def tensor_slices(self) -> list[slice]:
        """Slices of the flat vector, one per weight matrix and bias vector."""
        out = []
        off = 0
        s = self.layer_sizes
        for a, b in zip(s[:-1], s[1:]):
            out.append(slice(off, off + a * b))
            off += a * b
            out.append(slice(off, off + b))
            off += b
        return out


@dataclass(frozen=True)
class ModelWeights:
    spec: MlpSpec
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] != self.spec.n_params:
            raise ValueError(
                f"expected {self.spec.n_params} params for {self.spec.layer_sizes}, "
                f"got shape {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "params", p)

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.spec, self.params.copy())


@dataclass(frozen=True)
class QuantizationSpec:
    bits: int = 0

    def __post_init__(self):
        if self.bits not in QUANT_BITS:
            raise ValueError(f"quantization bits must be one of {QUANT_BITS}, got {self.bits}")

    def payload_bytes(self, n_params: int) -> int:
        """Size of one serialized update; unquantized weights ship as float64."""
        bits = self.bits or 64
        return -(-n_params * bits // 8)


@dataclass(frozen=True)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"features {X.shape} and labels {y.shape} do not line up")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "LabeledBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledBatch(self.features[idx], self.labels[idx])


def _check(w: ModelWeights, batch: LabeledBatch) -> None:
    d = w.spec.layer_sizes[0]
    if batch.features.shape[1] != d:
        raise ValueError(f"feature dim {batch.features.shape[1]} != model input dim {d}")
    if len(batch) and batch.labels.max() >= w.spec.n_classes:
        raise ValueError("label index exceeds the model's class count")


def init_weights(spec: MlpSpec, rng: np.random.Generator) -> ModelWeights:
    """Glorot-uniform weights, zero biases."""
    params = np.zeros(spec.n_params)
    s = spec.layer_sizes
    for (fan_in, fan_out), sl in zip(zip(s[:-1], s[1:]), spec.tensor_slices()[::2]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params[sl] = rng.uniform(-a, a, size=fan_in * fan_out)
    return ModelWeights(spec, params)


def _sizes(spec: MlpSpec) -> np.ndarray:
    return np.asarray(spec.layer_sizes, dtype=np.int64)


def forward(w: ModelWeights, batch: LabeledBatch) -> np.ndarray:
    """Row-wise softmax class probabilities."""
    _check(w, batch)
    z = kernels.logits(_sizes(w.spec), ACTIVATIONS[w.spec.activation], w.params, batch.features)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(w: ModelWeights, batch: LabeledBatch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the flat params."""
    _check(w, batch)
    if not len(batch):
        raise ValueError("empty batch")
    return kernels.loss_and_grad(
        _sizes(w.spec), ACTIVATIONS[w.spec.activation], w.params, batch.features, batch.labels
    )


def sgd_train(
    w: ModelWeights,
    train: LabeledBatch,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> ModelWeights:
    """Plain mini-batch SGD; reshuffles every epoch using ``rng``.

    Returns new weights and leaves ``w`` untouched.
    """
    if not len(train):
        raise ValueError("empty training set")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check(w, train)
    n = len(train)
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    params = w.params.copy()
    if lr > 0:
        kernels.sgd_epochs(
            _sizes(w.spec), ACTIVATIONS[w.spec.activation], params,
            train.features, train.labels, order, float(lr), int(batch_size),
        )
    return ModelWeights(w.spec, params)


def predict(w: ModelWeights, batch: LabeledBatch) -> np.ndarray:
    _check(w, batch)
    return kernels.predict(_sizes(w.spec), ACTIVATIONS[w.spec.activation], w.params, batch.features)


def evaluate_accuracy(w: ModelWeights, batch: LabeledBatch) -> float:
    """Fraction of correct argmax predictions; ties go to the lowest class."""
    if not len(batch):
        raise ValueError("cannot evaluate on an empty batch")
    return float(np.mean(predict(w, batch) == batch.labels))


def quantize_tensor(x: np.ndarray, bits: int) -> np.ndarray:
    if bits == 0:
        return x.copy()
    qmax = 2 ** (bits - 1) - 1
    m = float(np.max(np.abs(x))) if x.size else 0.0
    if m == 0.0:
        return x.copy()
    scale = m / qmax
    k = np.clip(np.round(x / scale), -qmax, qmax)
    out = k * scale
    # pin the extreme grid points to +-m so a second pass sees the same scale
    out[k == qmax] = m
    out[k == -qmax] = -m
    return out


def quantize_weights(w: ModelWeights, q: QuantizationSpec) -> ModelWeights:
    """Symmetric uniform per-tensor quantization (fake-quant: values stay float64)."""
    if q.bits == 0:
        return w.copy()
    params = w.params.copy()
    for sl in w.spec.tensor_slices():
        params[sl] = quantize_tensor(w.params[sl], q.bits)
    return ModelWeights(w.spec, params)
