"""From-scratch multilayer perceptron: one ReLU hidden layer, 4-way softmax,
cross-entropy plus l2 loss, seeded mini-batch SGD with inverted dropout.

Training accepts either a list of FeatureVectors or any object exposing
`.matrix` (dense or scipy CSR, one row per example) and `.layout`; sparse
input keeps the big TF blocks cheap. A trained model is immutable in
practice and safe for concurrent prediction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .corpus import STANCES, Stance
from .errors import DataFormatError, TrainingDivergedError
from .text import BlockSlice, FeatureVector

_MAGIC = b"SKITMLP0"
_VERSION = 1

OUTPUT_DIM = 4  # the four stances, always


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run. All randomness flows from seed.

    Defaults are validation-tuned starting points, not gospel; every field is
    exposed in the experiment config.
    """

    learning_rate: float = 0.01
    batch_size: int = 500
    epochs: int = 90
    dropout_keep: float = 0.6
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


@dataclass
class MlpModel:
    """Weights, biases, and the feature layout the model was trained on."""

    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (4, hidden)
    b2: np.ndarray  # (4,)
    feature_layout: tuple[BlockSlice, ...]

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max subtraction)."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_model(
    input_dim: int,
    hidden_dim: int,
    feature_layout: tuple[BlockSlice, ...],
    seed: int,
) -> MlpModel:
    """Glorot-uniform weights, zero biases, from a dedicated RNG stream."""
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    a2 = np.sqrt(6.0 / (hidden_dim + OUTPUT_DIM))
    return MlpModel(
        w1=rng.uniform(-a1, a1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-a2, a2, size=(OUTPUT_DIM, hidden_dim)),
        b2=np.zeros(OUTPUT_DIM),
        feature_layout=feature_layout,
    )


def forward(
    model: MlpModel,
    features: FeatureVector,
    dropout_mask: np.ndarray | None = None,
    dropout_keep: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """(logits, probabilities) for one example.

    A Bernoulli dropout_mask (training only) zeroes hidden units and rescales
    the survivors by 1/keep, so inference needs no scaling.
    """
    x = features.values
    if len(x) != model.input_dim:
        raise ValueError(f"feature length {len(x)} != model input {model.input_dim}")
    hidden = np.maximum(0.0, model.w1 @ x + model.b1)
    if dropout_mask is not None:
        if dropout_mask.shape != (model.hidden_dim,):
            raise ValueError("dropout mask must have one entry per hidden unit")
        hidden = hidden * dropout_mask / dropout_keep
    logits = model.w2 @ hidden + model.b2
    return logits, softmax(logits)


def predict(model: MlpModel, features: FeatureVector) -> tuple[Stance, np.ndarray]:
    """Argmax stance in canonical order (ties go to the lowest index).

    Routed through the batch kernel so single and batched predictions share
    one arithmetic path bit for bit.
    """
    if features.layout != model.feature_layout:
        raise ValueError(
            f"feature layout {_layout_str(features.layout)} does not match "
            f"model layout {_layout_str(model.feature_layout)}"
        )
    stances, probs = predict_batch(model, features.values[np.newaxis, :])
    return stances[0], probs[0]


def predict_batch(model: MlpModel, matrix) -> tuple[list[Stance], np.ndarray]:
    """Vectorized prediction over a dense or CSR example matrix."""
    probs = _batch_forward(model, matrix)[2]
    picks = np.argmax(probs, axis=1)
    return [STANCES[int(i)] for i in picks], probs


def _layout_str(layout: tuple[BlockSlice, ...]) -> str:
    return "[" + ", ".join(f"{b.name}:{b.length}" for b in layout) + "]"


def _label_index(label) -> int:
    return label.index if isinstance(label, Stance) else int(label)


def _as_matrix(features) -> tuple[object, tuple[BlockSlice, ...]]:
    """Accept a FeatureMatrix-like object or a sequence of FeatureVectors."""
    if hasattr(features, "matrix") and hasattr(features, "layout"):
        return features.matrix, tuple(features.layout)
    vectors = list(features)
    if not vectors:
        raise ValueError("need at least one example")
    layout = vectors[0].layout
    for v in vectors[1:]:
        if v.layout != layout:
            raise ValueError("mixed feature layouts in training data")
    return np.stack([v.values for v in vectors]), layout


def _batch_forward(model: MlpModel, x, mask: np.ndarray | None = None, keep: float = 1.0):
    # overflow here surfaces as a non-finite objective, which train() turns
    # into TrainingDivergedError; the interim warnings are just noise
    with np.errstate(over="ignore", invalid="ignore"):
        hidden_pre = np.asarray(x @ model.w1.T) + model.b1
        hidden = np.maximum(0.0, hidden_pre)
        if mask is not None:
            hidden = hidden * mask / keep
        logits = hidden @ model.w2.T + model.b2
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1)) + logits.max(axis=1)
        probs = softmax(logits)
    return hidden_pre, hidden, probs, logits, lse


def _l2_term(model: MlpModel, l2_lambda: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return l2_lambda * (float(np.sum(model.w1**2)) + float(np.sum(model.w2**2)))


def _batch_objective(model, x, y, l2_lambda, mask=None, keep=1.0):
    """Mean cross-entropy plus the l2 penalty, computed from logits."""
    _, _, _, logits, lse = _batch_forward(model, x, mask, keep)
    ce = float(np.mean(lse - logits[np.arange(len(y)), y]))
    return ce + _l2_term(model, l2_lambda)


def _batch_gradients(model, x, y, l2_lambda, mask=None, keep=1.0):
    """(objective, grads) for one mini-batch; grads keyed like the fields."""
    n = len(y)
    hidden_pre, hidden, probs, logits, lse = _batch_forward(model, x, mask, keep)
    ce = float(np.mean(lse - logits[np.arange(n), y]))

    g_logits = probs.copy()
    g_logits[np.arange(n), y] -= 1.0
    g_logits /= n

    g_w2 = g_logits.T @ hidden + 2.0 * l2_lambda * model.w2
    g_b2 = g_logits.sum(axis=0)
    g_hidden = g_logits @ model.w2
    if mask is not None:
        g_hidden = g_hidden * mask / keep
    g_pre = g_hidden * (hidden_pre > 0.0)
    if sparse.issparse(x):
        g_w1 = np.asarray((x.T @ g_pre)).T + 2.0 * l2_lambda * model.w1
    else:
        g_w1 = g_pre.T @ x + 2.0 * l2_lambda * model.w1
    g_b1 = g_pre.sum(axis=0)

    objective = ce + _l2_term(model, l2_lambda)
    grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}
    return objective, grads


def loss(
    model: MlpModel,
    batch: Sequence[tuple[FeatureVector, Stance | int]],
    config: TrainingConfig,
) -> float:
    """Mean cross-entropy over the batch plus l2 penalty on both weight mats."""
    if not batch:
        raise ValueError("empty batch")
    x = np.stack([fv.values for fv, _ in batch])
    y = np.array([_label_index(lbl) for _, lbl in batch])
    return _batch_objective(model, x, y, config.l2_lambda)


def train(
    features,
    labels: Sequence[Stance | int],
    config: TrainingConfig,
    hidden_dim: int = 100,
    epoch_callback: Callable[[int, float], None] | None = None,
) -> MlpModel:
    """Seeded mini-batch SGD on cross-entropy + l2.

    Deterministic given (data order, config.seed): weight init, epoch
    shuffles, and dropout masks all come from one RNG stream. Raises
    TrainingDivergedError naming the epoch if the objective goes non-finite.
    """
    x, layout = _as_matrix(features)
    y = np.array([_label_index(lbl) for lbl in labels])
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one labeled example")
    if len(y) != n:
        raise ValueError(f"{n} feature rows but {len(y)} labels")

    rng = np.random.default_rng(config.seed)
    model = init_model(x.shape[1], hidden_dim, layout, seed=config.seed)
    keep = config.dropout_keep

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = x[idx]
            yb = y[idx]
            mask = None
            if keep < 1.0:
                mask = (rng.random((len(idx), hidden_dim)) < keep).astype(np.float64)
            objective, grads = _batch_gradients(model, xb, yb, config.l2_lambda, mask, keep)
            if not np.isfinite(objective):
                raise TrainingDivergedError(epoch)
            lr = config.learning_rate
            model.w1 -= lr * grads["w1"]
            model.b1 -= lr * grads["b1"]
            model.w2 -= lr * grads["w2"]
            model.b2 -= lr * grads["b2"]
            epoch_loss += objective * len(idx)
        if epoch_callback is not None:
            epoch_callback(epoch, epoch_loss / n)
    return model


def gradient_check(
    model: MlpModel,
    batch: Sequence[tuple[FeatureVector, Stance | int]],
    config: TrainingConfig,
    sample_size: int = 60,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """Max relative error between backprop and central finite differences.

    Dropout must be disabled (keep = 1); the sampled parameter set always
    covers at least min(sample_size, #params) distinct coordinates.
    """
    if config.dropout_keep != 1.0:
        raise ValueError("gradient_check requires dropout_keep == 1")
    if not batch:
        raise ValueError("empty batch")
    x = np.stack([fv.values for fv, _ in batch])
    y = np.array([_label_index(lbl) for _, lbl in batch])

    _, grads = _batch_gradients(model, x, y, config.l2_lambda)
    params = [(model.w1, grads["w1"]), (model.b1, grads["b1"]),
              (model.w2, grads["w2"]), (model.b2, grads["b2"])]
    sizes = [p.size for p, _ in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(sample_size, total), replace=False)

    worst = 0.0
    for flat in sorted(int(c) for c in chosen):
        for (param, grad), size in zip(params, sizes):
            if flat < size:
                break
            flat -= size
        view = param.reshape(-1)
        original = view[flat]
        view[flat] = original + step
        up = _batch_objective(model, x, y, config.l2_lambda)
        view[flat] = original - step
        down = _batch_objective(model, x, y, config.l2_lambda)
        view[flat] = original
        numeric = (up - down) / (2.0 * step)
        analytic = grad.reshape(-1)[flat]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def save_model(model: MlpModel, path: str | Path) -> None:
    """Versioned flat binary; arrays are row-major little-endian float64."""
    blocks = model.feature_layout
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<IIII", _VERSION, model.input_dim, model.hidden_dim, model.output_dim)
    out += struct.pack("<I", len(blocks))
    for b in blocks:
        name = b.name.encode("utf-8")
        out += struct.pack("<I", len(name)) + name + struct.pack("<II", b.offset, b.length)
    for arr in (model.w1, model.b1, model.w2, model.b2):
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_model(path: str | Path) -> MlpModel:
    """Inverse of save_model; rejects wrong magic, future versions, truncation."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise DataFormatError(f"{path}: truncated model file")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    if take(len(_MAGIC)) != _MAGIC:
        raise DataFormatError(f"{path}: not a model file (bad magic)")
    version, input_dim, hidden_dim, output_dim = struct.unpack("<IIII", take(16))
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported model format version {version}")
    (n_blocks,) = struct.unpack("<I", take(4))
    layout = []
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        offset, length = struct.unpack("<II", take(8))
        layout.append(BlockSlice(name, offset, length))

    def array(shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()

    model = MlpModel(
        w1=array((hidden_dim, input_dim)),
        b1=array((hidden_dim,)),
        w2=array((output_dim, hidden_dim)),
        b2=array((output_dim,)),
        feature_layout=tuple(layout),
    )
    if pos != len(raw):
        raise DataFormatError(f"{path}: trailing bytes after model payload")
    return model
