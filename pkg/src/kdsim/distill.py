"""Knowledge transfer between trained classifiers.

Four mechanisms share one minibatch loop skeleton:

* fixed-parameter distillation against one or more frozen teachers
  (`distill_vanilla`), the (temperature=1, alpha=0.5) configuration
  being the canonical baseline;
* mutual learning between two live peers with alternating updates
  (`distill_dml`);
* mask-routed distillation where each transfer sample is answered either
  by the teacher or by a frozen snapshot of the student's starting
  point, whichever was more confident up front (`distill_dpkd`);
* many-to-one consolidation with per-class accuracy weights
  (`distill_multi_teacher`).

Teacher models are never mutated: each loop reads their probabilities
once up front and only ever steps the student copy. Every loop is
deterministic per (models, transfer set, config, seed).

Temperatures above 1 shrink softened-softmax gradients by roughly T^2,
so the KL objectives here carry an explicit T^2 factor to keep gradient
magnitudes comparable across temperature settings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import PUBLIC_TRANSFER_OPTIONS, TransferSet
from .errors import ConfigError, DataError, ShapeError
from .nn import (
    EvalReport,
    Model,
    _clamped_log,
    _forward_cached,
    backprop_params,
    batch_indices,
    forward_logits,
    kl_loss,
    make_optimizer,
    onehot,
    softmax,
)
from .seeding import rng_for

KD_METHODS = ("vanilla", "dml", "dpkd")


@dataclass(eq=False)
class DistillConfig:
    """Knobs for one distillation run.

    temperature and alpha follow the usual soft-target convention:
    alpha mixes the hard-label term against the distillation term, and
    temperature softens both endpoint distributions of the KL.
    """

    method: str = "vanilla"
    temperature: float = 1.0
    alpha: float = 0.5
    epochs: int = 30
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 4e-4
    batch_size: int = 32
    momentum: float = 0.0
    supervised_dpkd: bool = False

    def __post_init__(self) -> None:
        if self.method not in KD_METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose one of {KD_METHODS}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def _student_optimizer(cfg: DistillConfig, model: Model):
    return make_optimizer(
        cfg.optimizer, cfg.learning_rate, cfg.weight_decay, cfg.momentum, model
    )


def _check_transfer(model: Model, transfer: TransferSet) -> None:
    if len(transfer) == 0:
        raise DataError("transfer set is empty")
    if transfer.features.shape[1] != model.arch.input_dim:
        raise ShapeError(
            f"transfer features have dim {transfer.features.shape[1]}, model "
            f"expects {model.arch.input_dim}"
        )


# --------------------------------------------------------------------------
# Vanilla KD
# --------------------------------------------------------------------------


def effective_teachers(student: Model, teachers: list[Model], origin: str) -> list[Model]:
    """Teacher bench for a vanilla run.

    On a public transfer set a frozen copy of the student's own starting
    point joins the bench, anchoring the student to what it already
    knows while it absorbs the external teachers.
    """
    bench = list(teachers)
    if origin in PUBLIC_TRANSFER_OPTIONS:
        bench.append(student.copy())
    return bench


def distill_vanilla(
    student: Model,
    teachers: list[Model],
    transfer: TransferSet,
    cfg: DistillConfig,
    seed: int,
) -> Model:
    """Fixed-parameter distillation against frozen teachers.

    Labeled transfer data trains on (1 - alpha) * CE + alpha * T^2 * KL,
    the CE term at temperature 1 and the KL term against the mean
    teacher distribution at cfg.temperature. Without labels the loss is
    the KL term alone.
    """
    if not teachers:
        raise ConfigError("vanilla distillation needs at least one teacher")
    _check_transfer(student, transfer)
    bench = effective_teachers(student, teachers, transfer.origin)
    features = transfer.features
    temp = cfg.temperature
    soft_target = np.mean(
        [softmax(forward_logits(t, features), temp) for t in bench], axis=0
    )
    labeled = transfer.labeled
    hard_target = onehot(transfer.labels, student.arch.num_classes) if labeled else None

    work = student.copy()
    opt, params = _student_optimizer(cfg, work)
    for epoch in range(1, cfg.epochs + 1):
        rng = rng_for(seed, "epoch", epoch)
        for idx in batch_indices(len(features), cfg.batch_size, rng):
            logits, acts = _forward_cached(work, features[idx])
            nb = len(idx)
            dlogits = np.zeros_like(logits)
            if labeled and cfg.alpha < 1.0:
                probs = softmax(logits, 1.0)
                dlogits += (1.0 - cfg.alpha) * (probs - hard_target[idx]) / nb
            if not labeled or cfg.alpha > 0.0:
                soft = softmax(logits, temp)
                # d/dlogits of T^2 * mean KL = T * (student - target) / n
                kd = temp * (soft - soft_target[idx]) / nb
                dlogits += kd if not labeled else cfg.alpha * kd
            gw, gb = backprop_params(work, acts, dlogits)
            opt.step(params, gw + gb)
    return work


# --------------------------------------------------------------------------
# Deep mutual learning
# --------------------------------------------------------------------------


def _dml_step(
    work: Model,
    partner: Model,
    features: np.ndarray,
    hard_target: np.ndarray | None,
    idx: np.ndarray,
    opt,
    params,
) -> None:
    logits, acts = _forward_cached(work, features[idx])
    probs = softmax(logits, 1.0)
    partner_probs = softmax(forward_logits(partner, features[idx]), 1.0)
    nb = len(idx)
    dlogits = (probs - partner_probs) / nb
    if hard_target is not None:
        dlogits = dlogits + (probs - hard_target[idx]) / nb
    gw, gb = backprop_params(work, acts, dlogits)
    opt.step(params, gw + gb)


def distill_dml(
    peer_a: Model,
    peer_b: Model,
    transfer_a: TransferSet,
    transfer_b: TransferSet,
    cfg: DistillConfig,
    seed: int,
) -> tuple[Model, Model]:
    """Two peers teach each other with alternating per-minibatch updates.

    Each peer minimizes CE against its labels plus KL toward the
    partner's current predictions; both terms carry unit weight at
    temperature 1, so cfg.temperature and cfg.alpha are ignored here.
    Peer B's update in each step already sees peer A's fresh parameters.

    The mechanism expects labeled transfer data; unlabeled sets are
    allowed but drop the CE term and raise a warning. When the two
    transfer sets differ in length the peers run in lockstep over the
    shorter batch schedule.
    """
    _check_transfer(peer_a, transfer_a)
    _check_transfer(peer_b, transfer_b)
    if not transfer_a.labeled or not transfer_b.labeled:
        warnings.warn(
            "mutual learning without labels drops the supervised term and "
            "tends to degrade both peers",
            stacklevel=2,
        )
    target_a = (
        onehot(transfer_a.labels, peer_a.arch.num_classes) if transfer_a.labeled else None
    )
    target_b = (
        onehot(transfer_b.labels, peer_b.arch.num_classes) if transfer_b.labeled else None
    )
    work_a = peer_a.copy()
    work_b = peer_b.copy()
    opt_a, params_a = _student_optimizer(cfg, work_a)
    opt_b, params_b = _student_optimizer(cfg, work_b)
    for epoch in range(1, cfg.epochs + 1):
        batches_a = list(
            batch_indices(len(transfer_a), cfg.batch_size, rng_for(seed, "peer-a", epoch))
        )
        batches_b = list(
            batch_indices(len(transfer_b), cfg.batch_size, rng_for(seed, "peer-b", epoch))
        )
        for idx_a, idx_b in zip(batches_a, batches_b):
            _dml_step(work_a, work_b, transfer_a.features, target_a, idx_a, opt_a, params_a)
            _dml_step(work_b, work_a, transfer_b.features, target_b, idx_b, opt_b, params_b)
    return work_a, work_b


# --------------------------------------------------------------------------
# Mask-routed distillation (frozen-snapshot fallback)
# --------------------------------------------------------------------------


@dataclass(eq=False)
class MaskPair:
    """Per-sample routing between the teacher and the frozen snapshot.

    teacher_mask marks samples answered by the live teacher;
    snapshot_mask is its complement and routes to the frozen copy of the
    student's starting parameters. Confidence ties go to the snapshot.
    """

    teacher_mask: np.ndarray
    snapshot_mask: np.ndarray


def dpkd_masks(
    teacher: Model, snapshot: Model, transfer: TransferSet, supervised: bool
) -> MaskPair:
    """Compare teacher and snapshot confidence once, before training.

    Supervised mode compares the probability each model assigns to the
    ground-truth class; unsupervised mode compares the models' maximum
    class probabilities. The teacher wins only strictly greater
    comparisons, so a tie keeps the sample with the snapshot.
    """
    _check_transfer(teacher, transfer)
    teacher_probs = softmax(forward_logits(teacher, transfer.features), 1.0)
    snapshot_probs = softmax(forward_logits(snapshot, transfer.features), 1.0)
    if supervised:
        if not transfer.labeled:
            raise ConfigError("supervised mask computation needs a labeled transfer set")
        rows = np.arange(len(transfer))
        teacher_score = teacher_probs[rows, transfer.labels]
        snapshot_score = snapshot_probs[rows, transfer.labels]
    else:
        teacher_score = teacher_probs.max(axis=1)
        snapshot_score = snapshot_probs.max(axis=1)
    teacher_mask = teacher_score > snapshot_score
    return MaskPair(teacher_mask=teacher_mask, snapshot_mask=~teacher_mask)


def masked_targets(
    teacher_probs: np.ndarray, snapshot_probs: np.ndarray, masks: MaskPair
) -> np.ndarray:
    """Per-sample target distribution selected by the mask pair."""
    if teacher_probs.shape != snapshot_probs.shape:
        raise ShapeError("teacher and snapshot probability shapes differ")
    return np.where(masks.teacher_mask[:, None], teacher_probs, snapshot_probs)


def masked_distillation_loss(
    student_logits: np.ndarray, target_probs: np.ndarray, temperature: float
) -> float:
    """T^2 * mean KL between the tempered student and the routed targets."""
    probs = softmax(student_logits, temperature)
    return temperature**2 * kl_loss(probs, target_probs)


def masked_distillation_grad_logits(
    student_logits: np.ndarray, target_probs: np.ndarray, temperature: float
) -> np.ndarray:
    probs = softmax(student_logits, temperature)
    return temperature * (probs - target_probs) / len(probs)


def distill_dpkd(
    student: Model,
    teacher: Model,
    transfer: TransferSet,
    cfg: DistillConfig,
    seed: int,
) -> Model:
    """Distill from whichever of (teacher, frozen starting student) was
    more confident per sample.

    Masks are computed once against a frozen snapshot of the student's
    starting parameters and held fixed for the whole run; the loss is
    T^2 * mean of mask-routed KL terms with no supervised component.
    """
    _check_transfer(student, transfer)
    snapshot = student.copy()
    masks = dpkd_masks(teacher, snapshot, transfer, cfg.supervised_dpkd)
    temp = cfg.temperature
    target = masked_targets(
        softmax(forward_logits(teacher, transfer.features), temp),
        softmax(forward_logits(snapshot, transfer.features), temp),
        masks,
    )
    features = transfer.features
    work = student.copy()
    opt, params = _student_optimizer(cfg, work)
    for epoch in range(1, cfg.epochs + 1):
        rng = rng_for(seed, "epoch", epoch)
        for idx in batch_indices(len(features), cfg.batch_size, rng):
            logits, acts = _forward_cached(work, features[idx])
            dlogits = masked_distillation_grad_logits(logits, target[idx], temp)
            gw, gb = backprop_params(work, acts, dlogits)
            opt.step(params, gw + gb)
    return work


# --------------------------------------------------------------------------
# Multi-teacher consolidation
# --------------------------------------------------------------------------


@dataclass(eq=False)
class TeacherWeights:
    """Per-teacher, per-class KL weights.

    Entries are non-negative and each class column sums to at most 1
    (the student's own share of competence absorbs the rest).
    """

    per_teacher: list[np.ndarray]

    def __post_init__(self) -> None:
        self.per_teacher = [np.asarray(w, dtype=np.float64) for w in self.per_teacher]
        if not self.per_teacher:
            raise ConfigError("teacher weights must cover at least one teacher")
        width = self.per_teacher[0].shape
        for w in self.per_teacher:
            if w.ndim != 1 or w.shape != width:
                raise ShapeError("every teacher weight vector must share one length")
            if np.any(w < 0):
                raise ConfigError("teacher weights must be non-negative")
        total = np.sum(self.per_teacher, axis=0)
        if np.any(total > 1.0 + 1e-9):
            raise ConfigError("per-class teacher weights must sum to at most 1")


def adaptive_teacher_weights(
    student_eval: EvalReport, teacher_evals: list[EvalReport]
) -> TeacherWeights:
    """Class-wise competence shares.

    For class c, teacher j gets Acc_j^c / (Acc_student^c + sum_i
    Acc_i^c); a class nobody predicts correctly gets weight 0 for every
    teacher.
    """
    if not teacher_evals:
        raise ConfigError("need at least one teacher evaluation")
    classes = len(student_eval.per_class_accuracy)
    for rep in teacher_evals:
        if len(rep.per_class_accuracy) != classes:
            raise ShapeError("teacher and student reports disagree on class count")
    denom = student_eval.per_class_accuracy.copy()
    for rep in teacher_evals:
        denom = denom + rep.per_class_accuracy
    weights = []
    for rep in teacher_evals:
        w = np.zeros(classes, dtype=np.float64)
        positive = denom > 0
        w[positive] = rep.per_class_accuracy[positive] / denom[positive]
        weights.append(w)
    return TeacherWeights(per_teacher=weights)


def equal_teacher_weights(num_teachers: int, num_classes: int) -> TeacherWeights:
    """Flat 1 / (J + 1) weights; the +1 keeps the student's own share."""
    if num_teachers < 1:
        raise ConfigError("need at least one teacher")
    share = 1.0 / (num_teachers + 1)
    return TeacherWeights(
        per_teacher=[np.full(num_classes, share) for _ in range(num_teachers)]
    )


def _sample_weights(
    weights: TeacherWeights, teacher_probs: list[np.ndarray]
) -> list[np.ndarray]:
    """Per-sample weight: the teacher's class weight at its argmax class."""
    out = []
    for w, probs in zip(weights.per_teacher, teacher_probs):
        out.append(w[np.argmax(probs, axis=1)])
    return out


def weighted_ensemble_kl(
    student_logits: np.ndarray,
    teacher_probs: list[np.ndarray],
    sample_weights: list[np.ndarray],
    temperature: float,
) -> float:
    """T^2 * sum over teachers of the weighted mean per-sample KL."""
    probs = softmax(student_logits, temperature)
    total = 0.0
    for target, w in zip(teacher_probs, sample_weights):
        per_sample = np.sum(target * (_clamped_log(target) - _clamped_log(probs)), axis=1)
        total += float(np.mean(w * per_sample))
    return temperature**2 * total


def weighted_ensemble_kl_grad_logits(
    student_logits: np.ndarray,
    teacher_probs: list[np.ndarray],
    sample_weights: list[np.ndarray],
    temperature: float,
) -> np.ndarray:
    probs = softmax(student_logits, temperature)
    acc = np.zeros_like(probs)
    for target, w in zip(teacher_probs, sample_weights):
        acc += w[:, None] * (probs - target)
    return temperature * acc / len(probs)


def distill_multi_teacher(
    student: Model,
    teachers: list[Model],
    weights: TeacherWeights,
    transfer: TransferSet,
    cfg: DistillConfig,
    seed: int,
) -> Model:
    """Consolidate several teachers into one student.

    Each teacher's KL contribution is scaled per sample by its class
    weight at the class it predicts for that sample. Labeled transfer
    data adds the usual (1 - alpha) CE term; unlabeled data trains on
    the weighted KL sum alone.
    """
    if not teachers:
        raise ConfigError("multi-teacher distillation needs at least one teacher")
    if len(weights.per_teacher) != len(teachers):
        raise ConfigError(
            f"{len(teachers)} teachers but {len(weights.per_teacher)} weight vectors"
        )
    _check_transfer(student, transfer)
    features = transfer.features
    temp = cfg.temperature
    teacher_probs = [softmax(forward_logits(t, features), temp) for t in teachers]
    sample_w = _sample_weights(weights, teacher_probs)
    labeled = transfer.labeled
    hard_target = onehot(transfer.labels, student.arch.num_classes) if labeled else None

    work = student.copy()
    opt, params = _student_optimizer(cfg, work)
    for epoch in range(1, cfg.epochs + 1):
        rng = rng_for(seed, "epoch", epoch)
        for idx in batch_indices(len(features), cfg.batch_size, rng):
            logits, acts = _forward_cached(work, features[idx])
            nb = len(idx)
            dlogits = np.zeros_like(logits)
            if labeled and cfg.alpha < 1.0:
                probs = softmax(logits, 1.0)
                dlogits += (1.0 - cfg.alpha) * (probs - hard_target[idx]) / nb
            if not labeled or cfg.alpha > 0.0:
                soft = softmax(logits, temp)
                acc = np.zeros_like(soft)
                for target, w in zip(teacher_probs, sample_w):
                    acc += w[idx][:, None] * (soft - target[idx])
                kd = temp * acc / nb
                dlogits += kd if not labeled else cfg.alpha * kd
            gw, gb = backprop_params(work, acts, dlogits)
            opt.step(params, gw + gb)
    return work
