"""Training objectives: per-pixel BCE + Dice for masks, CE for token labels.

The total objective is lambda_text * CE + lambda_mask * (BCE + Dice), with
both lambdas 1.0 in the reference configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    accumulate_grad,
    add,
    add_scalar,
    clamp,
    div,
    log,
    mul,
    record_op,
    scale,
    sub,
    sum_all,
)


@dataclass
class LossConfig:
    lambda_text: float = 1.0
    lambda_mask: float = 1.0
    bce_eps: float = 1e-7  # clamp for log
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.lambda_text < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be nonnegative")


def _as_constant(gt) -> Tensor:
    return gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=np.float64))


def bce_loss(probs: Tensor, gt, eps: float = 1e-7) -> Tensor:
    """Mean per-pixel binary cross-entropy on probabilities in (0, 1)."""
    gt_t = _as_constant(gt)
    if probs.dims != gt_t.dims:
        raise ShapeError(f"bce: probs {probs.dims} vs gt {gt_t.dims}")
    p = clamp(probs, eps, 1.0 - eps)
    one_minus_p = add_scalar(scale(p, -1.0), 1.0)
    one_minus_g = add_scalar(scale(gt_t, -1.0), 1.0)
    ll = add(mul(gt_t, log(p)), mul(one_minus_g, log(one_minus_p)))
    return scale(sum_all(ll), -1.0 / probs.numel())


def dice_loss(probs: Tensor, gt, smooth: float = 1.0) -> Tensor:
    """1 - (2 * overlap + smooth) / (mass_pred + mass_gt + smooth)."""
    gt_t = _as_constant(gt)
    if probs.dims != gt_t.dims:
        raise ShapeError(f"dice: probs {probs.dims} vs gt {gt_t.dims}")
    overlap = sum_all(mul(probs, gt_t))
    masses = add(sum_all(probs), sum_all(gt_t))
    ratio = div(add_scalar(scale(overlap, 2.0), smooth), add_scalar(masses, smooth))
    return add_scalar(scale(ratio, -1.0), 1.0)


def ce_loss(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target class per row."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.dims[0]:
        raise ShapeError(f"ce: logits {logits.dims} vs {targets.shape} targets")
    n, k = logits.dims
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        raise ValueError(f"targets must lie in [0, {k}), got {targets.tolist()}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(-logp[np.arange(n), targets].mean())

    def fn(g):
        soft = np.exp(logp)
        soft[np.arange(n), targets] -= 1.0
        accumulate_grad(logits, float(g) * soft / n)

    record_op(out, (logits,), fn)
    return out


def mask_loss(probs: Tensor, gt, cfg: LossConfig) -> Tensor:
    return add(bce_loss(probs, gt, cfg.bce_eps), dice_loss(probs, gt, cfg.dice_smooth))


def total_loss(text_loss: Tensor, mask_loss_value: Tensor, cfg: LossConfig) -> Tensor:
    return add(scale(text_loss, cfg.lambda_text), scale(mask_loss_value, cfg.lambda_mask))
