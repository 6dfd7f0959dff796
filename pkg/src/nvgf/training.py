"""Cross-entropy loss, ADAM, the mini-batch training loop and evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import DENSE, LAYER_KINDS, Model, backward, forward
from .seeding import child_seed


DROPOUT_PLACEMENTS = {"dense": (DENSE,), "all": LAYER_KINDS}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 20
    batch_size: int = 100
    dropout_p: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    dropout_layers: str = "dense"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.dropout_layers not in DROPOUT_PLACEMENTS:
            raise ValueError(f"dropout_layers must be one of {sorted(DROPOUT_PLACEMENTS)}")


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class Metrics:
    epoch_losses: list[float] = field(default_factory=list)
    test_accuracy: float | None = None
    confusion: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(self.epoch_losses, start=1):
            w.writerow([i, repr(float(loss))])
        if self.test_accuracy is not None:
            w.writerow(["test_accuracy", repr(float(self.test_accuracy))])
        return buf.getvalue()


def softmax_cross_entropy(logits, labels):
    """Stabilized softmax cross-entropy.

    Works on one logit vector with an integer label, or on a ``(batch, C)``
    array with a label vector; returns per-sample losses and
    ``softmax - onehot`` of matching shape.
    """
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z2.shape[0] or np.any(y < 0) or np.any(y >= z2.shape[1]):
        raise ValueError("labels must index the logit classes")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = log_norm - shifted[rows, y]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, y] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def adam_step(state: OptimizerState, params, grads, cfg: TrainConfig):
    """One bias-corrected ADAM update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return params, state


def batch_gradients(model: Model, x, y, rng=None, dropout_p: float = 0.0, dropout_layers: str = "dense"):
    """Mean loss over a batch and the gradient of that mean."""
    mode = "train" if dropout_p > 0 else "eval"
    logits, trace = forward(model, x, mode, rng, dropout_p, DROPOUT_PLACEMENTS[dropout_layers])
    loss, g = softmax_cross_entropy(logits, y)
    return float(np.mean(loss)), backward(model, trace, g / len(y))


def train(model: Model, data, cfg: TrainConfig) -> tuple[Model, Metrics]:
    """Mini-batch ADAM training on ``data.train_x / data.train_y``.

    Samples are reshuffled every epoch; the last partial batch is kept.
    Shuffling and dropout draw from separate streams derived from
    ``cfg.seed``, so a run is fully reproducible.
    """
    x, y = np.asarray(data.train_x, dtype=float), np.asarray(data.train_y)
    if len(y) == 0:
        raise ValueError("empty training set")
    if y.max() >= model.num_classes:
        raise ValueError(f"label {y.max()} out of range for {model.num_classes} classes")
    shuffle_rng = np.random.default_rng(child_seed(cfg.seed, "shuffle"))
    dropout_rng = np.random.default_rng(child_seed(cfg.seed, "dropout"))
    params = [p for _, p in model.parameters()]
    state = OptimizerState.zeros_like(params)
    metrics = Metrics()
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = batch_gradients(
                model, x[idx], y[idx], dropout_rng, cfg.dropout_p, cfg.dropout_layers
            )
            total += loss * len(idx)
            adam_step(state, params, grads, cfg)
        metrics.epoch_losses.append(total / len(y))
    return model, metrics


def predict(model: Model, x) -> np.ndarray:
    logits, _ = forward(model, x, "eval")
    # argmax returns the lowest index on ties
    return np.argmax(np.atleast_2d(logits), axis=1)


def evaluate(model: Model, data, metrics: Metrics | None = None) -> Metrics:
    x, y = np.asarray(data.test_x, dtype=float), np.asarray(data.test_y)
    if len(y) == 0:
        raise ValueError("empty test set")
    metrics = Metrics(list(metrics.epoch_losses)) if metrics is not None else Metrics()
    pred = predict(model, x)
    metrics.test_accuracy = float(np.mean(pred == y))
    c = model.num_classes
    metrics.confusion = np.bincount(y * c + pred, minlength=c * c).reshape(c, c)
    return metrics
