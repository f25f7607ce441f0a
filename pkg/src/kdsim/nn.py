"""Dense feed-forward classifiers with hand-rolled, checkable gradients.

Models are deliberately small and boring: float64 numpy, ReLU hidden
layers, analytic gradients, explicit seeds everywhere. Keeping the
arithmetic in plain numpy makes three guarantees cheap that the rest of
the package leans on: repeated runs are bit-identical per (architecture,
seed), frozen models can never be touched by a training step, and every
gradient can be checked against central finite differences.

Training covers two regimes: supervised pre-training with early stopping
on validation accuracy, and bare epoch loops (`train_epochs`) reused by
the transfer and federated trainers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, DataError, DomainError, ShapeError
from .seeding import rng_for

# probabilities are clamped to [PROB_FLOOR, 1] inside every log
PROB_FLOOR = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

OPTIMIZERS = ("adam", "sgd")


@dataclass(eq=False)
class ArchSpec:
    """Layer widths of a fully connected ReLU classifier."""

    input_dim: int
    hidden_layers: tuple[int, ...] = (64,)
    num_classes: int = 2

    def __post_init__(self) -> None:
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError(f"hidden layer widths must be >= 1, got {self.hidden_layers}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArchSpec):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.hidden_layers == other.hidden_layers
            and self.num_classes == other.num_classes
        )

    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.num_classes]


@dataclass(eq=False)
class Model:
    """Parameters of one classifier plus the seed that initialized it."""

    arch: ArchSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    def copy(self) -> "Model":
        return Model(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )


def models_equal(a: Model, b: Model) -> bool:
    """Bit-exact parameter equality (architecture included)."""
    if a.arch != b.arch:
        return False
    return all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights)) and all(
        np.array_equal(x, y) for x, y in zip(a.biases, b.biases)
    )


def init_model(arch: ArchSpec, seed: int) -> Model:
    """Scaled-uniform weight initialization, zero biases.

    Each weight matrix is drawn uniformly in +-sqrt(6 / (fan_in +
    fan_out)). The draw order is fixed, so (arch, seed) determines every
    parameter bit-exactly.
    """
    rng = rng_for(seed, "init")
    dims = arch.layer_dims()
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Model(arch=arch, weights=weights, biases=biases, seed=seed)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _check_input(model: Model, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-d, got shape {x.shape}")
    if x.shape[1] != model.arch.input_dim:
        raise ShapeError(
            f"model expects {model.arch.input_dim} features, got {x.shape[1]}"
        )
    return x


def _forward_cached(model: Model, features: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the input activation of every layer (for backprop)."""
    x = _check_input(model, features)
    activations = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            activations.append(h)
    return h, activations


def forward_logits(model: Model, features: np.ndarray) -> np.ndarray:
    """Pure forward pass: one logit row per input row."""
    logits, _ = _forward_cached(model, features)
    return logits


def backprop_params(
    model: Model, activations: list[np.ndarray], dlogits: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Parameter gradients from a loss gradient at the logits."""
    grads_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(model.biases)
    delta = dlogits
    for i in reversed(range(len(model.weights))):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            # ReLU derivative from the cached post-activation values
            delta = (delta @ model.weights[i].T) * (activations[i] > 0.0)
    return grads_w, grads_b


# --------------------------------------------------------------------------
# Probabilities and losses
# --------------------------------------------------------------------------


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax, computed with max subtraction.

    Higher temperature flattens the distribution toward uniform; rows
    always sum to 1 up to float error.
    """
    if temperature <= 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _clamped_log(probs: np.ndarray) -> np.ndarray:
    return np.log(np.clip(probs, PROB_FLOOR, 1.0))


def onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((len(labels), num_classes), dtype=np.float64)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def ce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ShapeError(
            f"probs {probs.shape} and labels {labels.shape} do not line up"
        )
    if len(labels) == 0:
        raise DataError("cross entropy of an empty batch is undefined")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise DataError(
            f"labels must lie in [0, {probs.shape[1]}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(_clamped_log(picked)))


def ce_grad_logits(probs: np.ndarray, labels: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """d(mean CE)/d(logits) when probs = softmax(logits / temperature)."""
    y = onehot(labels, probs.shape[1])
    return (probs - y) / (len(probs) * temperature)


def kl_loss(student_probs: np.ndarray, target_probs: np.ndarray) -> float:
    """Mean over samples of sum_i target_i * ln(target_i / student_i).

    The target distribution is treated as a constant; zero target entries
    contribute nothing.
    """
    s = np.asarray(student_probs, dtype=np.float64)
    t = np.asarray(target_probs, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeError(f"student {s.shape} and target {t.shape} shapes differ")
    if s.ndim != 2 or len(s) == 0:
        raise DataError("KL divergence needs a non-empty 2-d batch")
    per_sample = np.sum(t * (_clamped_log(t) - _clamped_log(s)), axis=1)
    return float(np.mean(per_sample))


def kl_grad_logits(
    student_probs: np.ndarray, target_probs: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """d(mean KL)/d(student logits) when student = softmax(logits / T)."""
    return (student_probs - target_probs) / (len(student_probs) * temperature)


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------


class _Optimizer:
    """Adam or momentum-SGD with decoupled weight decay.

    Decay applies to weight matrices only, never biases, and uses the
    pre-update parameter value (decay is not folded into the gradient).
    """

    def __init__(
        self,
        name: str,
        learning_rate: float,
        weight_decay: float,
        momentum: float,
        params: list[np.ndarray],
        decay_mask: list[bool],
    ) -> None:
        if name not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {name!r}; choose one of {OPTIMIZERS}")
        self.name = name
        self.lr = learning_rate
        self.wd = weight_decay
        self.momentum = momentum
        self.decay_mask = decay_mask
        self.t = 0
        if name == "adam":
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        else:
            self.vel = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        if self.name == "adam":
            bias1 = 1.0 - ADAM_BETA1**self.t
            bias2 = 1.0 - ADAM_BETA2**self.t
            for p, g, m, v, decay in zip(params, grads, self.m, self.v, self.decay_mask):
                m[:] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
                v[:] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
                update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
                if decay and self.wd:
                    update = update + self.lr * self.wd * p
                p -= update
        else:
            for p, g, vel, decay in zip(params, grads, self.vel, self.decay_mask):
                vel[:] = self.momentum * vel + g
                update = self.lr * vel
                if decay and self.wd:
                    update = update + self.lr * self.wd * p
                p -= update


@dataclass(eq=False)
class TrainConfig:
    """Supervised training recipe."""

    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 4e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {self.optimizer!r}; choose one of {OPTIMIZERS}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError(
                f"patience must lie in [1, max_epochs], got {self.patience}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def make_optimizer(
    name: str,
    learning_rate: float,
    weight_decay: float,
    momentum: float,
    model: Model,
) -> tuple[_Optimizer, list[np.ndarray]]:
    """Optimizer over a model's parameters; weights decay, biases do not."""
    params = list(model.weights) + list(model.biases)
    decay_mask = [True] * len(model.weights) + [False] * len(model.biases)
    return _Optimizer(name, learning_rate, weight_decay, momentum, params, decay_mask), params


def batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled minibatch index slices covering all n samples."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _ce_epoch(
    model: Model,
    features: np.ndarray,
    labels: np.ndarray,
    targets: np.ndarray,
    opt: _Optimizer,
    params: list[np.ndarray],
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    total = 0.0
    for idx in batch_indices(len(features), batch_size, rng):
        logits, acts = _forward_cached(model, features[idx])
        probs = softmax(logits, 1.0)
        total += ce_loss(probs, labels[idx]) * len(idx)
        dlogits = (probs - targets[idx]) / len(idx)
        gw, gb = backprop_params(model, acts, dlogits)
        opt.step(params, gw + gb)
    return total / len(features)


def train_epochs(
    model: Model,
    data: LabeledDataset,
    cfg: TrainConfig,
    epochs: int,
    seed: int | None = None,
) -> Model:
    """Bare cross-entropy training loop without validation or stopping.

    Shuffle order for epoch e derives from (seed, "epoch", e); the
    default seed is the model's own.
    """
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    base = model.seed if seed is None else seed
    work = model.copy()
    opt, params = make_optimizer(
        cfg.optimizer, cfg.learning_rate, cfg.weight_decay, cfg.momentum, work
    )
    targets = onehot(data.labels, work.arch.num_classes)
    for epoch in range(1, epochs + 1):
        rng = rng_for(base, "epoch", epoch)
        _ce_epoch(work, data.features, data.labels, targets, opt, params, cfg.batch_size, rng)
    return work


def train_supervised(
    model: Model,
    train: LabeledDataset,
    val: LabeledDataset,
    cfg: TrainConfig,
) -> tuple[Model, list[dict]]:
    """Early-stopped supervised training.

    Monitors validation accuracy after every epoch; stops once it fails
    to improve for `patience` consecutive epochs and returns the
    parameters of the best epoch seen (the untrained starting point
    counts as the epoch-0 candidate, so the result is never worse on the
    validation set than anything observed). The history holds one record
    per trained epoch.
    """
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation sets must both be non-empty")
    work = model.copy()
    opt, params = make_optimizer(
        cfg.optimizer, cfg.learning_rate, cfg.weight_decay, cfg.momentum, work
    )
    targets = onehot(train.labels, work.arch.num_classes)
    best = work.copy()
    best_acc = evaluate(work, val).overall_accuracy
    history: list[dict] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = rng_for(model.seed, "epoch", epoch)
        loss = _ce_epoch(
            work, train.features, train.labels, targets, opt, params, cfg.batch_size, rng
        )
        acc = evaluate(work, val).overall_accuracy
        history.append({"epoch": epoch, "train_loss": loss, "val_accuracy": acc})
        if acc > best_acc:
            best_acc = acc
            best = work.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(eq=False)
class EvalReport:
    """Overall and per-class accuracy with class supports.

    Classes absent from the evaluation set report accuracy 0 with
    support 0; the overall accuracy always equals the support-weighted
    mean of the per-class accuracies.
    """

    overall_accuracy: float
    per_class_accuracy: np.ndarray
    per_class_support: np.ndarray

    def as_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": [float(a) for a in self.per_class_accuracy],
            "per_class_support": [int(s) for s in self.per_class_support],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(
            overall_accuracy=float(payload["overall_accuracy"]),
            per_class_accuracy=np.asarray(payload["per_class_accuracy"], dtype=np.float64),
            per_class_support=np.asarray(payload["per_class_support"], dtype=np.int64),
        )


def reports_equal(a: EvalReport, b: EvalReport) -> bool:
    return (
        a.overall_accuracy == b.overall_accuracy
        and np.array_equal(a.per_class_accuracy, b.per_class_accuracy)
        and np.array_equal(a.per_class_support, b.per_class_support)
    )


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(forward_logits(model, features), axis=1)


def evaluate(model: Model, data: LabeledDataset) -> EvalReport:
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if data.class_count != model.arch.num_classes:
        raise ShapeError(
            f"model predicts {model.arch.num_classes} classes but data has "
            f"{data.class_count}"
        )
    preds = predict(model, data.features)
    hits = preds == data.labels
    classes = model.arch.num_classes
    support = np.bincount(data.labels, minlength=classes).astype(np.int64)
    correct = np.bincount(data.labels[hits], minlength=classes).astype(np.int64)
    per_class = np.zeros(classes, dtype=np.float64)
    nonzero = support > 0
    per_class[nonzero] = correct[nonzero] / support[nonzero]
    return EvalReport(
        overall_accuracy=float(hits.sum() / len(data)),
        per_class_accuracy=per_class,
        per_class_support=support,
    )
