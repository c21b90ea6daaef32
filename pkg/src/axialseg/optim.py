"""Adam optimizer, the step learning-rate schedule and the epoch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import metrics
from . import model as M
from . import tensor as tt
from .data.augment import AugmentConfig, augment_affine_arrays
from .errors import NumericalError, ParameterError

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    """Epoch budget and the two-level learning rate."""

    epochs: int = 200
    lr_initial: float = 1e-2
    lr_after: float = 1e-3
    decay_epoch: int = 150
    batch_size: int = 4

    def __post_init__(self):
        if min(self.epochs, self.decay_epoch, self.batch_size) <= 0:
            raise ParameterError("epochs, decay_epoch and batch_size must be positive")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ParameterError("learning rates must be positive")
        if self.decay_epoch >= self.epochs:
            raise ParameterError(
                f"decay_epoch {self.decay_epoch} must be < epochs {self.epochs}"
            )

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr_initial": self.lr_initial,
            "lr_after": self.lr_after,
            "decay_epoch": self.decay_epoch,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        return cls(**d)


def lr_at(schedule: TrainSchedule, epoch: int) -> float:
    """Initial rate before decay_epoch, the decayed rate from there on."""
    if not 0 <= epoch < schedule.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {schedule.epochs})")
    return schedule.lr_initial if epoch < schedule.decay_epoch else schedule.lr_after


@dataclass
class AdamState:
    """First/second moment estimates, keyed like the parameter dict."""

    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(named_params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update. Gradients are left untouched.

    Raises NumericalError naming the offending parameter block if a gradient
    or an updated parameter is not finite.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericalError(f"non-finite values in parameter block '{name}' after update")


class Adam:
    """Stateful wrapper around adam_step for a fixed list of (name, Tensor)."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self, lr: float) -> None:
        adam_step(self.named_params, self.state, lr)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_dice: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "val_dice": self.val_dice,
        }


def _validate_samples(samples, crop_shape, what):
    if not samples:
        raise ParameterError(f"{what} set is empty")
    for image, mask in samples:
        if tuple(image.shape) != tuple(crop_shape) or tuple(mask.shape) != tuple(crop_shape):
            raise ParameterError(
                f"{what} sample shape {image.shape}/{mask.shape} != crop_shape {tuple(crop_shape)}"
            )


def mean_validation_dice(model: M.AxialMLPModel, val_set) -> float:
    """Mean soft Dice of eval-mode predictions against the target masks."""
    scores = []
    for image, mask in val_set:
        pred = M.predict(model, np.asarray(image, dtype=model.dtype))
        scores.append(metrics.dice(pred.astype(np.float64), np.asarray(mask, dtype=np.float64)))
    return float(np.mean(scores))


def train(
    model: M.AxialMLPModel,
    train_set: Sequence,
    val_set: Sequence,
    schedule: TrainSchedule,
    augment: Optional[AugmentConfig] = None,
    rng: Optional[np.random.Generator] = None,
    smooth: float = 1.0,
):
    """Run the full epoch loop; return (best checkpoint, per-epoch history).

    `train_set`/`val_set` are sequences of (image, mask) arrays already
    preprocessed to the model's crop shape. After every epoch the mean soft
    Dice on val_set is evaluated in eval mode; the checkpoint with the highest
    value is returned, ties resolved toward the earlier epoch. Augmentation
    seeds are fixed by (epoch, sample index), so data-loading order can never
    change the result.
    """
    cfg = model.config
    _validate_samples(train_set, cfg.crop_shape, "train")
    _validate_samples(val_set, cfg.crop_shape, "val")
    if rng is None:
        rng = np.random.default_rng()

    aug_base = int(rng.integers(2**63)) if augment is not None else 0
    opt = Adam(model.named_parameters())
    history: list[EpochRecord] = []
    best_dice = -np.inf
    best_ckpt: Optional[M.Checkpoint] = None

    n = len(train_set)
    for epoch in range(schedule.epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, schedule.batch_size):
            batch_idx = order[start : start + schedule.batch_size]
            images, masks = [], []
            for i in batch_idx:
                image, mask = train_set[i]
                if augment is not None:
                    aug_rng = np.random.default_rng((aug_base, epoch, int(i)))
                    image, mask = augment_affine_arrays(image, mask, augment, aug_rng)
                images.append(np.asarray(image, dtype=model.dtype))
                masks.append(np.asarray(mask, dtype=model.dtype))
            x = np.stack(images)
            y = np.stack(masks)

            opt.zero_grad()
            pred = M.forward(model, x, mode="train", rng=rng)
            loss = M.batch_soft_dice_loss(pred, y, smooth=smooth)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step(lr)
            epoch_losses.append(loss_value)

        val_dice = mean_validation_dice(model, val_set)
        record = EpochRecord(epoch, lr, float(np.mean(epoch_losses)), val_dice)
        history.append(record)
        log.info(
            "epoch=%03d lr=%.4g train_loss=%.6f val_dice=%.6f",
            record.epoch, record.lr, record.train_loss, record.val_dice,
        )
        if val_dice > best_dice:
            best_dice = val_dice
            best_ckpt = model.to_checkpoint({"epoch": epoch, "val_dice": val_dice})

    return best_ckpt, history
