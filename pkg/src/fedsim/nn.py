"""Dense MLP math in plain numpy.

The network is fixed: 110 inputs (a 10x11 packet window, flattened), two
ReLU hidden layers of 32 units, one sigmoid output. Parameters live in a
single flat float64 vector, layer-major (weight then bias), row-major
within each weight matrix. Everything that moves between clients and the
server is that vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

LAYER_SIZES = (110, 32, 32, 1)
INPUT_SHAPE = (10, 11)
PROB_CLAMP = 1e-7


def _layer_slices():
    slices = []
    offset = 0
    for fan_in, fan_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]):
        w = slice(offset, offset + fan_in * fan_out)
        offset += fan_in * fan_out
        b = slice(offset, offset + fan_out)
        offset += fan_out
        slices.append((w, (fan_in, fan_out), b))
    return tuple(slices), offset


LAYER_SLICES, NUM_PARAMS = _layer_slices()
NUM_LAYERS = len(LAYER_SLICES)


def layer_span(layer: int) -> slice:
    """Flat index range covering weight and bias of ``layer``."""
    w, _, b = LAYER_SLICES[layer]
    return slice(w.start, b.stop)


def top_layers_span(p: int) -> slice:
    """Flat index range covering the ``p`` layers closest to the output."""
    if not 1 <= p <= NUM_LAYERS:
        raise ValueError(f"p must be in [1, {NUM_LAYERS}], got {p}")
    return slice(layer_span(NUM_LAYERS - p).start, NUM_PARAMS)


@dataclass
class MlpModel:
    """Structured view over a flat parameter vector.

    ``weights[k]`` has shape (fan_in, fan_out); both weights and biases are
    numpy views into ``params``, so in-place edits go through.
    """

    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (NUM_PARAMS,):
            raise ValueError(
                f"expected {NUM_PARAMS} parameters, got shape {self.params.shape}"
            )

    @property
    def weights(self) -> list[np.ndarray]:
        return [self.params[w].reshape(shape) for w, shape, _ in LAYER_SLICES]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self.params[b] for _, _, b in LAYER_SLICES]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(self.params.copy())


def flatten(model: MlpModel) -> np.ndarray:
    return model.params.copy()


def unflatten(values) -> MlpModel:
    return MlpModel(np.array(values, dtype=np.float64))


def init_model(seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(NUM_PARAMS)
    for w, (fan_in, fan_out), _ in LAYER_SLICES:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[w] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return MlpModel(params)


def _as_params(model) -> np.ndarray:
    if isinstance(model, MlpModel):
        return model.params
    params = np.asarray(model, dtype=np.float64)
    if params.shape != (NUM_PARAMS,):
        raise ValueError(f"expected {NUM_PARAMS} parameters, got shape {params.shape}")
    return params


def _as_batch(batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != LAYER_SIZES[0]:
        raise ValueError(
            f"batch must have {LAYER_SIZES[0]} feature columns, got shape {x.shape}"
        )
    return x


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_trace(params: np.ndarray, x: np.ndarray):
    acts = [x]
    pre = []
    a = x
    for k, (w, shape, b) in enumerate(LAYER_SLICES):
        z = a @ params[w].reshape(shape) + params[b]
        pre.append(z)
        a = sigmoid(z) if k == NUM_LAYERS - 1 else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(model, batch) -> np.ndarray:
    """Attack probability per row of ``batch``."""
    acts, _ = _forward_trace(_as_params(model), _as_batch(batch))
    return acts[-1][:, 0]


def bce_loss(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions, {y.shape[0]} labels")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


@dataclass(frozen=True)
class GradModifier:
    """Extra gradient term added to every local MBGD step.

    kind is one of ``none``, ``proximal`` (lam * (w - anchor)),
    ``variate_correction`` (c_global - c_local) and ``additive``
    (lam * term).
    """

    kind: str = "none"
    lam: float = 0.0
    anchor: Optional[np.ndarray] = None
    c_global: Optional[np.ndarray] = None
    c_local: Optional[np.ndarray] = None
    term: Optional[np.ndarray] = None

    def __post_init__(self):
        required = {
            "none": (),
            "proximal": ("anchor",),
            "variate_correction": ("c_global", "c_local"),
            "additive": ("term",),
        }
        if self.kind not in required:
            raise ValueError(f"unknown modifier kind {self.kind!r}")
        for name in required[self.kind]:
            vec = getattr(self, name)
            if vec is None or np.shape(vec) != (NUM_PARAMS,):
                raise ValueError(f"{self.kind} modifier needs {name} of length {NUM_PARAMS}")

    def gradient(self, params: np.ndarray) -> Optional[np.ndarray]:
        if self.kind == "proximal":
            return self.lam * (params - self.anchor)
        if self.kind == "variate_correction":
            return self.c_global - self.c_local
        if self.kind == "additive":
            return self.lam * self.term
        return None


NO_MODIFIER = GradModifier()

# mbgd_train also accepts a callable so the term can track the current weights
ModifierLike = Union[GradModifier, Callable[[np.ndarray], GradModifier], None]


def _loss_gradient(params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    acts, pre = _forward_trace(params, x)
    n = x.shape[0]
    grad = np.empty(NUM_PARAMS)
    # sigmoid + BCE: d loss / d logit = (p - y) / n
    delta = (acts[-1] - y.reshape(-1, 1)) / n
    for k in range(NUM_LAYERS - 1, -1, -1):
        w, shape, b = LAYER_SLICES[k]
        grad[w] = (acts[k].T @ delta).ravel()
        grad[b] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params[w].reshape(shape).T) * (pre[k - 1] > 0)
    return grad


def backward(model, batch, labels, modifier: ModifierLike = None) -> np.ndarray:
    """Gradient of mean BCE over the batch, plus the modifier's term."""
    params = _as_params(model)
    x = _as_batch(batch)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} samples but {y.shape[0]} labels")
    grad = _loss_gradient(params, x, y)
    mod = modifier(params) if callable(modifier) else modifier
    if mod is not None:
        extra = mod.gradient(params)
        if extra is not None:
            grad += extra
    return grad


def batch_indices(n: int, epochs: int, steps_per_epoch: int, batch_size: int, rng):
    """Yield index arrays: a fresh permutation per epoch, sequential batches,
    wrapping around the permutation when the steps outrun the data."""
    bs = min(batch_size, n)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for step in range(steps_per_epoch):
            start = (step * bs) % n
            idx = np.arange(start, start + bs) % n
            yield perm[idx]


def mbgd_train(
    model,
    dataset,
    epochs: int,
    steps_per_epoch: int,
    batch_size: int,
    lr: float,
    modifier: ModifierLike = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[MlpModel, int]:
    """Plain mini-batch gradient descent.

    ``dataset`` is an ``(x, y)`` pair. Returns the trained copy and the
    number of parameter updates performed (epochs * steps_per_epoch).
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if steps_per_epoch < 1 or batch_size < 1:
        raise ValueError("steps_per_epoch and batch_size must be >= 1")
    x, y = dataset
    x = _as_batch(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    params = _as_params(model).copy()
    if epochs == 0:
        return MlpModel(params), 0
    rng = rng if rng is not None else np.random.default_rng(0)
    updates = 0
    for idx in batch_indices(x.shape[0], epochs, steps_per_epoch, batch_size, rng):
        params -= lr * backward(params, x[idx], y[idx], modifier)
        updates += 1
    return MlpModel(params), updates


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    mean_loss: float


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int, mean_loss: float = 0.0) -> EvalMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    return EvalMetrics(tp, fp, fn, tn, precision, recall, f1, accuracy, mean_loss)


def evaluate(model, split) -> EvalMetrics:
    """Binary metrics at threshold 0.5; p == 0.5 counts as attack."""
    x, y = split
    x = _as_batch(x)
    y = np.asarray(y).ravel().astype(np.int64)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty split")
    p = forward(model, x)
    pred = (p >= 0.5).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    return metrics_from_counts(tp, fp, fn, tn, bce_loss(p, y))
