"""Identity/view cross-entropy, the orthogonal loss, and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, NumericError
from .tensor import Tensor

NORM_FLOOR = 1e-12


@dataclass
class LossWeights:
    view_weight: float = 1.0
    orth_weight: float = 1.0

    def __post_init__(self):
        for name in ("view_weight", "orth_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")


@dataclass
class LossReport:
    id_loss: float
    view_loss: float
    orth_loss: float
    total: float


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the labelled class."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise DomainError(f"labels must lie in [0, {c}), got range "
                          f"[{labels.min()}, {labels.max()}]")
    logp = T.log_softmax_lastdim(logits)
    picked = T.gather_lastdim(logp, labels)
    return -T.tmean(picked)


def orthogonal_loss(meta: Tensor, view: Tensor) -> Tensor:
    """Mean squared cosine similarity between paired feature rows."""
    dot = T.tsum(T.mul(meta, view), axis=-1)
    meta_norm = T.clip_min(T.sqrt(T.tsum(T.mul(meta, meta), axis=-1)), NORM_FLOOR)
    view_norm = T.clip_min(T.sqrt(T.tsum(T.mul(view, view), axis=-1)), NORM_FLOOR)
    cos = T.div(T.div(dot, meta_norm), view_norm)
    return T.tmean(T.mul(cos, cos))


def total_loss(id_loss: Tensor, view_loss: Tensor, orth_loss: Tensor,
               weights: LossWeights):
    """Weighted sum; returns (total Tensor, LossReport of scalar values)."""
    for name, t in (("id_loss", id_loss), ("view_loss", view_loss),
                    ("orth_loss", orth_loss)):
        if not np.isfinite(t.data).all():
            raise NumericError(f"{name} is not finite")
    total = id_loss + weights.view_weight * view_loss + weights.orth_weight * orth_loss
    report = LossReport(id_loss=id_loss.item(), view_loss=view_loss.item(),
                        orth_loss=orth_loss.item(), total=total.item())
    return total, report
