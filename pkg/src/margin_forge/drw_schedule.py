"""Two-stage deferred re-balancing training.

Stage 1 (epochs before ``switch_epoch``) trains with unweighted losses; stage
2 multiplies each example's loss by a per-class weight derived from inverse
class frequency. The learning rate follows a linear warm-up and then step
decays.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import NetworkParams, OptimizerState, backward, forward, sgd_update
from .errors import ConfigurationError, InvalidInputError, TrainingDivergedError
from .imbalance_data import LabeledDataset
from .margin_losses import ClassCounts, LossSpec

logger = logging.getLogger(__name__)


class WeightNorm(str, enum.Enum):
    RAW_INVERSE = "raw_inverse"
    BATCH_MEAN_ONE = "batch_mean_one"
    CB_EFFECTIVE = "cb_effective"


class Sampler(str, enum.Enum):
    UNIFORM = "uniform"
    INVERSE = "inverse"  # class-balanced re-sampling, P(x) proportional to 1/n_y


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 200
    switch_epoch: int = 160
    base_lr: float = 0.1
    warmup_epochs: int = 5
    decay_points: tuple[tuple[int, float], ...] = ((160, 0.01), (180, 0.01))
    momentum: float = 0.9
    weight_decay: float = 2e-4
    batch_size: int = 128
    seed: int = 0
    weight_norm_mode: WeightNorm = WeightNorm.BATCH_MEAN_ONE
    cb_beta: float = 0.9999
    sampler: Sampler = Sampler.UNIFORM

    def __post_init__(self):
        object.__setattr__(self, "weight_norm_mode", WeightNorm(self.weight_norm_mode))
        object.__setattr__(self, "sampler", Sampler(self.sampler))
        points = tuple(sorted((int(e), float(f)) for e, f in self.decay_points))
        object.__setattr__(self, "decay_points", points)
        if self.total_epochs < 0:
            raise ConfigurationError(f"total_epochs must be >= 0, got {self.total_epochs}")
        if not 0 <= self.switch_epoch <= self.total_epochs:
            raise ConfigurationError(
                f"switch_epoch must lie in [0, total_epochs={self.total_epochs}], got {self.switch_epoch}")
        if self.warmup_epochs < 0:
            raise ConfigurationError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if points and self.warmup_epochs >= points[0][0]:
            raise ConfigurationError("warm-up must end before the first decay point")
        for epoch, factor in points:
            if not 0 < factor <= 1:
                raise ConfigurationError(f"decay factor at epoch {epoch} must be in (0, 1], got {factor}")
        if self.base_lr < 0:
            raise ConfigurationError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.cb_beta < 1:
            raise ConfigurationError(f"cb_beta must be in [0, 1), got {self.cb_beta}")

    @classmethod
    def scaled(cls, total_epochs: int, **overrides) -> "TrainConfig":
        """The full-length schedule compressed to ``total_epochs``.

        Switch and first decay at 0.8 T, second decay at 0.9 T.
        """
        first, second = int(round(0.8 * total_epochs)), int(round(0.9 * total_epochs))
        defaults = dict(
            total_epochs=total_epochs,
            switch_epoch=first,
            warmup_epochs=min(5, max(first - 1, 0)),
            decay_points=((first, 0.01), (second, 0.01)),
        )
        defaults.update(overrides)
        return cls(**defaults)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for ``epoch`` (0-based)."""
    if epoch < cfg.warmup_epochs:
        lr = cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    else:
        lr = cfg.base_lr
    for point, factor in cfg.decay_points:
        if epoch >= point:
            lr *= factor
    return lr


def class_weights(epoch: int, cfg: TrainConfig, counts, batch_labels=None) -> np.ndarray:
    """Per-class loss multipliers for one mini-batch.

    Uniform before ``switch_epoch``. Afterwards, raw ``1/n_y`` or a
    (possibly class-balanced) inverse frequency rescaled so the mean weight
    over ``batch_labels`` is 1.
    """
    counts = counts if isinstance(counts, ClassCounts) else ClassCounts(tuple(counts))
    n = counts.as_array()
    if epoch < cfg.switch_epoch:
        return np.ones_like(n)
    mode = cfg.weight_norm_mode
    if mode is WeightNorm.RAW_INVERSE:
        return 1.0 / n
    if mode is WeightNorm.CB_EFFECTIVE:
        raw = (1.0 - cfg.cb_beta) / (1.0 - cfg.cb_beta ** n)
    else:
        raw = 1.0 / n
    labels = np.asarray([] if batch_labels is None else batch_labels, dtype=np.intp)
    if labels.size == 0:
        raise ConfigurationError(f"{mode.value} weights need a non-empty batch")
    return raw / raw[labels].mean()


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    stage: int
    mean_loss: float
    train_error: float


EPOCH_COLUMNS = ("epoch", "lr", "stage", "mean_loss", "train_error")


def fmt(x: float) -> str:
    return f"{x:.9g}"


def write_epoch_log(records: list[EpochRecord], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPOCH_COLUMNS)
        for r in records:
            writer.writerow([r.epoch, fmt(r.lr), r.stage, fmt(r.mean_loss), fmt(r.train_error)])


@dataclass
class TrainResult:
    params: NetworkParams
    log: list[EpochRecord] = field(default_factory=list)

    def __iter__(self):
        return iter((self.params, self.log))


def _epoch_order(rng: np.random.Generator, labels: np.ndarray, counts: ClassCounts,
                 sampler: Sampler) -> np.ndarray:
    if sampler is Sampler.UNIFORM:
        return rng.permutation(labels.size)
    p = 1.0 / counts.as_array()[labels]
    return rng.choice(labels.size, size=labels.size, replace=True, p=p / p.sum())


def train(data: LabeledDataset, model: NetworkParams, loss_spec: LossSpec,
          cfg: TrainConfig, counts: ClassCounts | None = None) -> TrainResult:
    """Mini-batch momentum SGD under the two-stage schedule.

    The input model is not modified. ``counts`` defaults to the class sizes of
    ``data`` and drives both stage-2 weights and the re-sampling sampler.

    Raises:
        TrainingDivergedError: a loss or gradient became non-finite; the
            message names the epoch and batch.
    """
    if model.num_classes != data.num_classes:
        raise InvalidInputError(f"model has {model.num_classes} classes, data has {data.num_classes}")
    if loss_spec.counts is not None and len(loss_spec.counts) != data.num_classes:
        raise InvalidInputError("loss counts disagree with the data's class count")
    counts = counts or data.per_class_counts
    params = model.copy()
    state = OptimizerState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    state.init_for(params)
    rng = np.random.default_rng(cfg.seed)
    X, y = data.features, data.labels
    log: list[EpochRecord] = []

    for epoch in range(cfg.total_epochs):
        lr = lr_at(epoch, cfg)
        order = _epoch_order(rng, y, counts, cfg.sampler)
        loss_sum = 0.0
        wrong = 0
        for b, start in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                Z, cache = forward(xb, params)
            if not np.all(np.isfinite(Z)):
                raise TrainingDivergedError(f"non-finite logits at epoch {epoch}, batch {b}")
            values, G = loss_spec(Z, yb)
            w = class_weights(epoch, cfg, counts, yb)[yb]
            if not np.all(np.isfinite(values)):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss_sum += float(np.sum(w * values))
            wrong += int(np.sum(np.argmax(Z, axis=1) != yb))
            grads = backward(cache, G * (w / yb.size)[:, None])
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    sgd_update(params, grads, state, lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b}: {exc}") from exc
        n = max(order.size, 1)
        stage = 1 if epoch < cfg.switch_epoch else 2
        log.append(EpochRecord(epoch, lr, stage, loss_sum / n, wrong / n))
        logger.debug("epoch %d lr %.3g stage %d loss %.4f err %.4f", epoch, lr, stage,
                     loss_sum / n, wrong / n)
    return TrainResult(params, log)
