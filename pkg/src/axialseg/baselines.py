"""Image-free constant-mask baselines.

The mean mask is the voxelwise average of the training masks. The optimized
mask starts from the mean and runs Adam for a fixed number of steps on the
summed soft Dice against every training mask (learning rate 1, betas 0.9 and
0.999, eps 1e-8), clamped back into [0, 1] after each step so it stays a
valid soft mask. Both procedures are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import DimensionError, ParameterError
from .optim import Adam


@dataclass
class ConstantMask:
    """An image-independent soft mask plus how it was produced."""

    values: np.ndarray
    provenance: str  # "mean" | "optimized"
    source: str = ""  # identifier of the training set it came from
    meta: dict = field(default_factory=dict)


def _stack_masks(train_masks) -> np.ndarray:
    arrays = [np.asarray(getattr(m, "data", m), dtype=np.float64) for m in train_masks]
    if not arrays:
        raise ParameterError("need at least one training mask")
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise DimensionError(f"masks disagree on shape: {a.shape} vs {shape}")
    return np.stack(arrays)


def summed_dice(masks: np.ndarray, candidate: np.ndarray) -> float:
    """Objective the optimized mask maximizes: sum over masks of soft Dice."""
    total = 0.0
    c_sum = candidate.sum()
    for y in masks:
        total += 2.0 * (candidate * y).sum() / (c_sum + y.sum())
    return float(total)


def mean_mask(train_masks) -> ConstantMask:
    """Voxelwise arithmetic mean of the training masks."""
    stack = _stack_masks(train_masks)
    return ConstantMask(stack.mean(axis=0), "mean", meta={"n_masks": len(stack)})


def optimized_mask(train_masks, steps: int = 100, lr: float = 1.0) -> ConstantMask:
    """Gradient-ascend the summed soft Dice, starting from the mean mask."""
    if steps < 0:
        raise ParameterError(f"steps must be >= 0, got {steps}")
    stack = _stack_masks(train_masks)
    values = stack.mean(axis=0)
    mask_sums = [float(y.sum()) for y in stack]
    if min(mask_sums) == 0.0:
        raise ParameterError("training masks must be nonempty")

    candidate = tt.Tensor(values, requires_grad=True)
    consts = [tt.Tensor(y) for y in stack]
    opt = Adam([("mask", candidate)])

    for _ in range(steps):
        candidate.grad = None
        terms = [
            (2.0 * (candidate * y).sum()) / (candidate.sum() + s)
            for y, s in zip(consts, mask_sums)
        ]
        objective = tt.add_n(terms)
        (-objective).backward()  # Adam minimizes; ascend the objective
        opt.step(lr)
        np.clip(candidate.data, 0.0, 1.0, out=candidate.data)

    return ConstantMask(
        candidate.data.copy(),
        "optimized",
        meta={"n_masks": len(stack), "steps": steps, "lr": lr},
    )
