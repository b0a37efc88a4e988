"""Training objective: two heatmap terms, joint regression and the weight penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable

from .errors import ContractError, NumericFault
from .tensor import Parameter, Tensor, ensure_tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_f: float = 0.005
    lambda_r: float = 0.05
    lambda_hmt: float = 0.005
    lambda_w: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"{f.name} must be non-negative")


@dataclass
class LossBreakdown:
    l_ht_f: Tensor
    l_r: Tensor
    l_ht_hmt: Tensor
    r_w: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).data) for f in fields(self)}


def _sum_sq_per_sample(diff: Tensor) -> Tensor:
    return (diff * diff).sum() * (1.0 / diff.shape[0])


def heatmap_loss(est: Tensor, gt) -> Tensor:
    """Sum of squared differences over joints and cells, averaged over the batch.

    Shapes are ``(B, J, h, w)``.
    """
    gt = ensure_tensor(gt, est.dtype)
    if est.shape != gt.shape or est.ndim != 4:
        raise ContractError(f"heatmap shapes differ or are not (B,J,h,w): {est.shape} vs {gt.shape}")
    return _sum_sq_per_sample(est - gt)


feature_heatmap_loss = heatmap_loss
hmt_heatmap_loss = heatmap_loss


def regression_loss(est: Tensor, gt) -> Tensor:
    """Summed squared Euclidean joint error, averaged over the batch; inputs ``(B, 3J)``."""
    gt = ensure_tensor(gt, est.dtype)
    if est.shape != gt.shape:
        raise ContractError(f"joint vectors differ in shape: {est.shape} vs {gt.shape}")
    if est.ndim == 1:
        est, gt = est.reshape(1, -1), gt.reshape(1, -1)
    return _sum_sq_per_sample(est - gt)


def weight_penalty(params: Iterable[Parameter]) -> Tensor:
    """Half the sum of squares over every regularised parameter (biases excluded)."""
    terms = [(p * p).sum() for p in params if getattr(p, "regularize", True)]
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * 0.5


def total_loss(l_ht_f, l_r, l_ht_hmt, r_w, weights: LossWeights = LossWeights()) -> LossBreakdown:
    parts = [ensure_tensor(p) for p in (l_ht_f, l_r, l_ht_hmt, r_w)]
    for name, p in zip(("l_ht_f", "l_r", "l_ht_hmt", "r_w"), parts):
        value = float(p.data)
        if not math.isfinite(value):
            raise NumericFault(f"loss term {name} is not finite ({value})")
    a, b, c, d = parts
    total = a * weights.lambda_f + b * weights.lambda_r + c * weights.lambda_hmt + d * weights.lambda_w
    return LossBreakdown(a, b, c, d, total)
