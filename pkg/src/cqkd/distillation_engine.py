"""Training procedures: supervised baseline, teacher-student distillation
across resolutions, and mutual learning in a student cohort.

The distillation loss is
``(1 - alpha) * H(y, p_1) + alpha * KL(teacher_soft || student_soft)``
where both soft distributions use the same temperature and the label term
uses temperature 1.  Teacher outputs are constants: no gradient ever
flows into the teacher.  The mutual-learning loss for cohort member ``i``
is ``H(y, p_i) + mean_j KL(p_j || p_i)`` over its peers, at temperature 1.

All trainers are deterministic given (config, data, seed) and
single-threaded execution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import prob_math
from .calibration_metrics import accuracy, ece, mean_entropy, record_from_probs
from .data_pipeline import Dataset, batches
from .nn_core import (
    ModelParams,
    ScheduleConfig,
    adamw_step,
    backward,
    cyclical_lr,
    forward,
    init_model,
    init_optimizer_state,
    model_bytes,
)

EPS = prob_math.EPS


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by all trainers.

    ``alpha`` weights the distillation term against the label term and is
    only used (and only validated) by the distillation trainer;
    ``cohort_size`` only by the mutual-learning trainer.  Architectures
    are full layer-size lists including the input and output dimensions.
    """

    alpha: float = 0.5
    tau: float = 10.0
    epochs: int = 20
    batch_size: int = 32
    eta_max: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    factor: int = 4
    student_arch: tuple = ()
    teacher_arch: tuple = ()
    cohort_size: int = 3
    ece_bins: int = 10
    floor_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eta_max <= 0:
            raise ValueError(f"eta_max must be > 0, got {self.eta_max!r}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.factor < 1:
            raise ValueError(f"factor must be >= 1, got {self.factor}")
        if self.ece_bins < 1:
            raise ValueError(f"ece_bins must be >= 1, got {self.ece_bins}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float
    entropy: float
    ece: float
    elapsed_s: float


def cqkd_loss(z_s, z_t, y, alpha, tau, rescale_tau_sq: bool = False):
    """Composite distillation loss and its gradient w.r.t. student logits.

    ``loss = (1-alpha) * H(y, p_s1) + alpha * KL(p_t_tau || p_s_tau)``
    with ``p_s1`` the student's temperature-1 distribution and the KL
    taken teacher-first.  Teacher logits are constants.  ``alpha`` may
    take its limit values 0 and 1 for testing.  ``rescale_tau_sq``
    multiplies the divergence term by ``tau**2`` (off by default: the
    composite loss is used exactly as written, with no gradient
    compensation for the temperature).

    Returns ``(loss, grad)`` where ``grad`` is the exact analytic
    gradient w.r.t. ``z_s``.
    """
    z_s = prob_math.as_logit_vector(z_s)
    z_t = prob_math.as_logit_vector(z_t)
    if z_s.shape != z_t.shape:
        raise ValueError(f"logit length mismatch: {z_s.shape[0]} vs {z_t.shape[0]}")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha!r}")

    p_s1 = prob_math.softmax_tau(z_s, 1.0)
    label_loss = prob_math.cross_entropy(y, p_s1)
    p_t = prob_math.softmax_tau(z_t, tau)
    p_s = prob_math.softmax_tau(z_s, tau)
    divergence = prob_math.kl_divergence(p_t, p_s)

    tau = float(tau)
    scale = tau * tau if rescale_tau_sq else 1.0
    loss = (1.0 - alpha) * label_loss + alpha * scale * divergence

    onehot = np.zeros_like(p_s1)
    onehot[int(y)] = 1.0
    grad = (1.0 - alpha) * (p_s1 - onehot) + alpha * scale * (p_s - p_t) / tau
    return float(loss), grad


def dml_loss(prob_vectors, i, y):
    """Mutual-learning loss for cohort member ``i`` and its gradient contract.

    ``loss = H(y, p_i) + (1/(m-1)) * sum_{j != i} KL(p_j || p_i)`` at
    temperature 1; the peers' distributions are constants.  The returned
    gradient is w.r.t. the logits that produced ``prob_vectors[i]``
    through a temperature-1 softmax.
    """
    ps = [prob_math.as_prob_vector(p) for p in prob_vectors]
    m = len(ps)
    if m < 2:
        raise ValueError(f"cohort needs at least 2 members, got {m}")
    if not 0 <= i < m:
        raise ValueError(f"member index {i} out of range [0, {m})")
    k = ps[0].shape[0]
    if any(p.shape[0] != k for p in ps):
        raise ValueError("cohort probability vectors have mismatched lengths")

    label_loss = prob_math.cross_entropy(y, ps[i])
    peer_div = sum(prob_math.kl_divergence(ps[j], ps[i]) for j in range(m) if j != i)
    loss = label_loss + peer_div / (m - 1)

    onehot = np.zeros(k)
    onehot[int(y)] = 1.0
    grad = ps[i] - onehot
    for j in range(m):
        if j != i:
            grad = grad + (ps[i] - ps[j]) / (m - 1)
    return float(loss), grad


# ---------------------------------------------------------------------------
# Row-wise (batched) forms of the losses.  These apply the exact same
# per-sample formulas as the functions above, one row at a time.

def softmax_rows(z, tau=1.0) -> np.ndarray:
    """Temperature softmax applied independently to each row."""
    s = np.asarray(z, dtype=np.float64) / float(tau)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _ce_rows(p1, labels):
    rows = np.arange(len(labels))
    losses = -np.log(np.maximum(p1[rows, labels], EPS))
    grad = p1.copy()
    grad[rows, labels] -= 1.0
    return losses, grad


def _kl_rows(p, q):
    log_ratio = np.log(np.maximum(p, EPS) / np.maximum(q, EPS))
    return np.sum(np.where(p > 0.0, p * log_ratio, 0.0), axis=1)


def _cqkd_rows(z_s, z_t, labels, alpha, tau):
    p_s1 = softmax_rows(z_s, 1.0)
    ce_losses, ce_grad = _ce_rows(p_s1, labels)
    p_t = softmax_rows(z_t, tau)
    p_s = softmax_rows(z_s, tau)
    losses = (1.0 - alpha) * ce_losses + alpha * _kl_rows(p_t, p_s)
    grad = (1.0 - alpha) * ce_grad + alpha * (p_s - p_t) / tau
    return losses, grad


# ---------------------------------------------------------------------------
# Training loops.

def _split_arrays(dataset: Dataset, side: str):
    if side not in ("low", "full"):
        raise ValueError(f"side must be 'low' or 'full', got {side!r}")
    x = np.stack([
        (p.full if side == "full" else p.low).reshape(-1) for p in dataset.pairs
    ])
    return x, dataset.labels()


def _check_datasets(config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
                    check_factor: bool = True):
    if train_ds.num_classes != val_ds.num_classes or train_ds.h_full != val_ds.h_full:
        raise ValueError("train and validation datasets disagree on geometry")
    if train_ds.factor != val_ds.factor:
        raise ValueError(
            f"train factor {train_ds.factor} != validation factor {val_ds.factor}"
        )
    if check_factor and train_ds.factor != config.factor:
        raise ValueError(
            f"dataset factor {train_ds.factor} does not match config factor {config.factor}"
        )


def _check_arch(arch, input_size: int, num_classes: int, name: str):
    arch = tuple(int(s) for s in arch)
    if len(arch) < 2:
        raise ValueError(f"{name} needs at least input and output sizes, got {arch}")
    if arch[0] != input_size:
        raise ValueError(f"{name} input size {arch[0]} != data size {input_size}")
    if arch[-1] != num_classes:
        raise ValueError(f"{name} output size {arch[-1]} != class count {num_classes}")
    return arch


def _records_from_probs(probs, labels):
    return [record_from_probs(probs[i], int(labels[i])) for i in range(len(labels))]


def _metrics_row(epoch, split, loss, probs, labels, num_bins, elapsed) -> EpochMetrics:
    records = _records_from_probs(probs, labels)
    return EpochMetrics(
        epoch=epoch,
        split=split,
        loss=float(loss),
        accuracy=accuracy(records),
        entropy=mean_entropy(records),
        ece=ece(records, num_bins),
        elapsed_s=float(elapsed),
    )


def predict_records(model: ModelParams, dataset: Dataset, side: str = "low"):
    """Temperature-1 prediction records for every sample of a dataset split."""
    x, labels = _split_arrays(dataset, side)
    logits, _ = forward(model, x)
    return _records_from_probs(softmax_rows(logits, 1.0), labels)


def _train_single_model(config, train_ds, val_ds, side, arch, seed, objective,
                        batch_hook=None):
    """Shared epoch/batch loop for the single-model trainers.

    ``objective(logits, idx)`` returns per-sample losses and per-sample
    logit gradients for the given training indices; ``idx=None`` means
    "the whole validation split".
    """
    x_train, y_train = _split_arrays(train_ds, side)
    x_val, y_val = _split_arrays(val_ds, side)

    model = init_model(arch, seed)
    metrics = []
    if config.epochs == 0:
        return model, metrics

    n_batches = len(batches(train_ds, config.batch_size, 0, seed))
    schedule = ScheduleConfig(
        eta_max=config.eta_max,
        total_steps=max(2, config.epochs * n_batches),
        floor_fraction=config.floor_fraction,
    )
    opt = init_optimizer_state(model)
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        loss_sum = 0.0
        for idx in batches(train_ds, config.batch_size, epoch, seed):
            logits, trace = forward(model, x_train[idx])
            losses, dlogits = objective(logits, idx)
            if batch_hook is not None:
                batch_hook(step, idx, logits, losses)
            grads = backward(model, trace, dlogits / len(idx))
            adamw_step(model, grads, opt, lr=cyclical_lr(step, schedule),
                       weight_decay=config.weight_decay)
            step += 1
            loss_sum += float(np.sum(losses))

        train_logits, _ = forward(model, x_train)
        metrics.append(_metrics_row(
            epoch, "train", loss_sum / len(train_ds),
            softmax_rows(train_logits, 1.0), y_train,
            config.ece_bins, time.perf_counter() - start,
        ))
        val_logits, _ = forward(model, x_val)
        val_losses, _ = objective(val_logits, None)
        metrics.append(_metrics_row(
            epoch, "validation", float(np.mean(val_losses)),
            softmax_rows(val_logits, 1.0), y_val,
            config.ece_bins, time.perf_counter() - start,
        ))
    return model, metrics


def train_supervised(config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
                     side: str = "low"):
    """Plain cross-entropy training on one resolution stream of the data.

    Uses ``config.student_arch``; returns ``(model, per-epoch metrics)``
    with a train row and a validation row per epoch.
    """
    _check_datasets(config, train_ds, val_ds, check_factor=(side == "low"))
    input_size = (train_ds.pairs[0].full if side == "full" else train_ds.pairs[0].low).size
    arch = _check_arch(config.student_arch, input_size, train_ds.num_classes, "student_arch")

    y_train = train_ds.labels()
    y_val = val_ds.labels()

    def objective(logits, idx):
        labels = y_val if idx is None else y_train[idx]
        return _ce_rows(softmax_rows(logits, 1.0), labels)

    return _train_single_model(config, train_ds, val_ds, side, arch, config.seed, objective)


def train_teacher(config: TrainConfig, train_ds: Dataset, val_ds: Dataset):
    """Supervised training of the full-resolution teacher (``teacher_arch``)."""
    _check_datasets(config, train_ds, val_ds, check_factor=False)
    input_size = train_ds.pairs[0].full.size
    arch = _check_arch(config.teacher_arch, input_size, train_ds.num_classes, "teacher_arch")

    y_train = train_ds.labels()
    y_val = val_ds.labels()

    def objective(logits, idx):
        labels = y_val if idx is None else y_train[idx]
        return _ce_rows(softmax_rows(logits, 1.0), labels)

    return _train_single_model(config, train_ds, val_ds, "full", arch, config.seed, objective)


def train_cqkd(teacher: ModelParams, config: TrainConfig, train_ds: Dataset,
               val_ds: Dataset, batch_hook=None):
    """Distill the frozen full-resolution teacher into a low-resolution student.

    Per batch the teacher sees the full images and the student the
    downsampled ones; the composite loss gradient is applied to the
    student only.  ``batch_hook(step, indices, student_logits,
    teacher_logits, losses)``, when given, observes every training step.
    Returns ``(student, per-epoch metrics)``.
    """
    _check_datasets(config, train_ds, val_ds)
    if not 0.0 < config.alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1) for distillation, got {config.alpha!r}")
    full_size = train_ds.pairs[0].full.size
    if teacher.input_size != full_size:
        raise ValueError(
            f"teacher input size {teacher.input_size} does not match "
            f"full-resolution size {full_size}"
        )
    low_size = train_ds.pairs[0].low.size
    arch = _check_arch(config.student_arch, low_size, train_ds.num_classes, "student_arch")

    x_train_full, y_train = _split_arrays(train_ds, "full")
    x_val_full, y_val = _split_arrays(val_ds, "full")
    # The teacher is frozen, so its logits are constants; compute them once.
    teacher_train, _ = forward(teacher, x_train_full)
    teacher_val, _ = forward(teacher, x_val_full)

    def objective(logits, idx):
        if idx is None:
            return _cqkd_rows(logits, teacher_val, y_val, config.alpha, config.tau)
        return _cqkd_rows(logits, teacher_train[idx], y_train[idx], config.alpha, config.tau)

    hook = None
    if batch_hook is not None:
        hook = lambda step, idx, logits, losses: batch_hook(
            step, idx, logits, teacher_train[idx], losses
        )
    return _train_single_model(config, train_ds, val_ds, "low", arch, config.seed,
                               objective, batch_hook=hook)


def train_dml(config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
              seed_offsets=None):
    """Train a cohort of students concurrently with mutual learning.

    Each step snapshots every member's predictions on the batch, then
    computes each member's gradient against its peers' snapshot outputs
    and applies all updates; peers are therefore gradient constants
    within a step.  Members are initialized from ``config.seed`` plus a
    per-member offset (0..m-1 by default).  Returns ``(models,
    per-member metrics lists)``.
    """
    _check_datasets(config, train_ds, val_ds)
    m = int(config.cohort_size)
    if m < 2:
        raise ValueError(f"cohort_size must be >= 2, got {config.cohort_size}")
    low_size = train_ds.pairs[0].low.size
    arch = _check_arch(config.student_arch, low_size, train_ds.num_classes, "student_arch")
    if seed_offsets is None:
        seed_offsets = range(m)
    seed_offsets = [int(o) for o in seed_offsets]
    if len(seed_offsets) != m:
        raise ValueError(f"need {m} seed offsets, got {len(seed_offsets)}")

    x_train, y_train = _split_arrays(train_ds, "low")
    x_val, y_val = _split_arrays(val_ds, "low")

    models = [init_model(arch, config.seed + off) for off in seed_offsets]
    metrics = [[] for _ in range(m)]
    if config.epochs == 0:
        return models, metrics

    def member_losses(prob_list, labels, i):
        losses, _ = _ce_rows(prob_list[i], labels)
        for j in range(m):
            if j != i:
                losses = losses + _kl_rows(prob_list[j], prob_list[i]) / (m - 1)
        return losses

    n_batches = len(batches(train_ds, config.batch_size, 0, config.seed))
    schedule = ScheduleConfig(
        eta_max=config.eta_max,
        total_steps=max(2, config.epochs * n_batches),
        floor_fraction=config.floor_fraction,
    )
    opts = [init_optimizer_state(model) for model in models]
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        loss_sums = [0.0] * m
        for idx in batches(train_ds, config.batch_size, epoch, config.seed):
            xb = x_train[idx]
            labels = y_train[idx]
            outs = [forward(model, xb) for model in models]
            probs = [softmax_rows(logits, 1.0) for logits, _ in outs]
            rows = np.arange(len(idx))
            onehot_grad = [p.copy() for p in probs]
            for p in onehot_grad:
                p[rows, labels] -= 1.0

            all_grads = []
            for i in range(m):
                losses = member_losses(probs, labels, i)
                dlogits = onehot_grad[i].copy()
                for j in range(m):
                    if j != i:
                        dlogits += (probs[i] - probs[j]) / (m - 1)
                all_grads.append(backward(models[i], outs[i][1], dlogits / len(idx)))
                loss_sums[i] += float(np.sum(losses))
            lr = cyclical_lr(step, schedule)
            for i in range(m):
                adamw_step(models[i], all_grads[i], opts[i], lr=lr,
                           weight_decay=config.weight_decay)
            step += 1

        train_probs = [softmax_rows(forward(model, x_train)[0], 1.0) for model in models]
        val_probs = [softmax_rows(forward(model, x_val)[0], 1.0) for model in models]
        elapsed = time.perf_counter() - start
        for i in range(m):
            metrics[i].append(_metrics_row(
                epoch, "train", loss_sums[i] / len(train_ds),
                train_probs[i], y_train, config.ece_bins, elapsed,
            ))
            val_losses = member_losses(val_probs, y_val, i)
            metrics[i].append(_metrics_row(
                epoch, "validation", float(np.mean(val_losses)),
                val_probs[i], y_val, config.ece_bins, elapsed,
            ))
    return models, metrics


def checkpoint_bytes(model: ModelParams) -> bytes:
    """Serialized form of a model, for byte-level equality checks."""
    return model_bytes(model)
