"""Inter-intra contrastive regularization.

For anchor view ``i`` with positive set ``P(i)`` (other views of the same
class) and denominator set ``D(i)``::

    L_i = -1/|P(i)| * sum_{p in P(i)} log( exp(s_ip / tau) / sum_{n in D(i)} exp(s_in / tau) )

where ``s`` is cosine similarity. ``D(i)`` is either the views outside
``P(i) + {i}`` ("negatives_only") or every view except ``i``
("all_non_anchor"). Anchors with an empty ``P(i)`` or ``D(i)`` contribute
nothing and are left out of the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

REGULARIZERS = ("none", "intra", "i2cr")
DENOMINATORS = ("negatives_only", "all_non_anchor")


@dataclass
class LossConfig:
    temperature: float = 0.1
    reduction: str = "mean"
    denominator: str = "negatives_only"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"denominator must be one of {DENOMINATORS}, got {self.denominator!r}")


@dataclass
class RampSchedule:
    total_epochs: int = 100
    max_alpha: float = 0.5

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if self.max_alpha < 0:
            raise ValueError("max_alpha must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    i2cr: float
    alpha: float
    total: float

    @classmethod
    def compose(cls, ce: float, i2cr: float, alpha: float) -> "LossBreakdown":
        ce, i2cr, alpha = float(ce), float(i2cr), float(alpha)
        return cls(ce, i2cr, alpha, ce + alpha * i2cr)


@dataclass
class EmbeddingBatch:
    z: torch.Tensor
    labels: torch.Tensor
    view_of: torch.Tensor | None = None

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels)
        if self.view_of is not None:
            self.view_of = torch.as_tensor(self.view_of)
        n = self.z.shape[0]
        if n < 1 or self.z.ndim != 2:
            raise ValueError(f"z must be a non-empty (n_views, dim) matrix, got {tuple(self.z.shape)}")
        if self.labels.shape != (n,) or (self.view_of is not None and self.view_of.shape != (n,)):
            raise ValueError("labels and view_of must have one entry per view")


def positive_mask(labels: torch.Tensor, view_of: torch.Tensor | None = None, intra_only: bool = False) -> torch.Tensor:
    """Boolean ``(n, n)`` matrix; row ``i`` marks ``P(i)``.

    With ``intra_only`` the positives are restricted to other views of the
    anchor's own source sample.
    """
    labels = torch.as_tensor(labels)
    n = labels.shape[0]
    mask = labels[:, None] == labels[None, :]
    if intra_only:
        if view_of is None:
            raise ValueError("intra-only positives need view_of")
        view_of = torch.as_tensor(view_of)
        mask &= view_of[:, None] == view_of[None, :]
    mask &= ~torch.eye(n, dtype=torch.bool, device=labels.device)
    return mask


def positive_sets(labels: Sequence[int], view_of: Sequence[int] | None = None, intra_only: bool = False) -> list[set[int]]:
    """``P(i)`` for every view as Python sets; an empty set marks an invalid anchor."""
    mask = positive_mask(torch.as_tensor(list(labels)),
                         None if view_of is None else torch.as_tensor(list(view_of)), intra_only)
    return [set(torch.nonzero(row).flatten().tolist()) for row in mask]


def sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors."""
    na, nb = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return torch.dot(a / na, b / nb)


def _normalize(z: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(z, dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm embedding in contrastive batch")
    return z / norms


def contrastive_loss(z: torch.Tensor, pos: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Loss for an explicit positive mask (see module docstring)."""
    if not cfg.temperature > 0:
        raise ValueError(f"temperature must be positive, got {cfg.temperature}")
    n = z.shape[0]
    zn = _normalize(z)
    logits = zn @ zn.T / cfg.temperature
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    denom = ~eye if cfg.denominator == "all_non_anchor" else ~(pos | eye)
    n_pos = pos.sum(dim=1)
    valid = (n_pos > 0) & denom.any(dim=1)
    if not bool(valid.any()):
        return z.sum() * 0.0
    # rows are selected first so fully-masked rows never reach logsumexp
    logits, pos, denom = logits[valid], pos[valid], denom[valid]
    log_denom = torch.logsumexp(logits.masked_fill(~denom, -math.inf), dim=1)
    pos_sum = torch.where(pos, logits, torch.zeros_like(logits)).sum(dim=1)
    per_anchor = log_denom - pos_sum / n_pos[valid]
    return per_anchor.mean() if cfg.reduction == "mean" else per_anchor.sum()


def i2cr_loss(batch: EmbeddingBatch, cfg: LossConfig | None = None, intra_only: bool = False) -> torch.Tensor:
    cfg = cfg or LossConfig()
    pos = positive_mask(batch.labels.to(batch.z.device),
                        None if batch.view_of is None else batch.view_of.to(batch.z.device), intra_only)
    return contrastive_loss(batch.z, pos, cfg)


def alpha(epoch: int, sched: RampSchedule) -> float:
    """Regularizer weight: 0 in the first epoch, then epoch/total clipped at ``max_alpha``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch == 0:
        return 0.0
    return min(epoch / sched.total_epochs, sched.max_alpha)


def total_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    batch: EmbeddingBatch,
    epoch: int,
    sched: RampSchedule,
    cfg: LossConfig | None = None,
    regularizer: str = "i2cr",
) -> tuple[torch.Tensor, LossBreakdown]:
    """Cross-entropy over every view plus the ramped contrastive term.

    Returns the differentiable total and a float breakdown whose ``total``
    equals ``ce + alpha * i2cr`` exactly.
    """
    if regularizer not in REGULARIZERS:
        raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {regularizer!r}")
    if logits.shape[0] != batch.z.shape[0]:
        raise ValueError("logits and embeddings must have one row per view")
    ce = F.cross_entropy(logits, labels)
    if regularizer == "none":
        return ce, LossBreakdown.compose(ce.item(), 0.0, 0.0)
    a = alpha(epoch, sched)
    reg = i2cr_loss(batch, cfg, intra_only=regularizer == "intra")
    return ce + a * reg, LossBreakdown.compose(ce.item(), reg.item(), a)
