"""Training objectives: supervised cross-entropy, domain-adversarial BCE,
minimum class confusion, BYOL regression, and their unweighted sum."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import torch
import torch.nn.functional as F

from .errors import DegenerateSignalError, ValidationError

__all__ = [
    "LossBundle",
    "MCCIntermediates",
    "task_loss",
    "adversarial_loss",
    "mcc_loss",
    "mcc_from_probabilities",
    "byol_loss",
    "total_loss",
    "register_domain_loss",
    "get_domain_loss",
    "DOMAIN_LOSSES",
]


@dataclass
class LossBundle:
    """Per-step loss components. ``extra`` holds plug-in domain losses (0 by default)."""

    task: torch.Tensor | float = 0.0
    adversarial: torch.Tensor | float = 0.0
    mcc: torch.Tensor | float = 0.0
    byol: torch.Tensor | float = 0.0
    extra: torch.Tensor | float = 0.0
    total: torch.Tensor | float = 0.0

    def item(self) -> "LossBundle":
        return LossBundle(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: _scalar(getattr(self, f.name)) for f in fields(self)}


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


@dataclass
class MCCIntermediates:
    scaled_probs: torch.Tensor
    entropies: torch.Tensor
    weights: torch.Tensor
    correlation: torch.Tensor
    normalized: torch.Tensor


def task_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    return F.cross_entropy(logits, labels)


def adversarial_loss(src_domain_logits: torch.Tensor, tgt_domain_logits: torch.Tensor) -> torch.Tensor:
    """Mean BCE of source logits against 0 plus mean BCE of target logits against 1."""
    src = F.binary_cross_entropy_with_logits(src_domain_logits, torch.zeros_like(src_domain_logits))
    tgt = F.binary_cross_entropy_with_logits(tgt_domain_logits, torch.ones_like(tgt_domain_logits))
    return src + tgt


def mcc_from_probabilities(probs: torch.Tensor) -> tuple[torch.Tensor, MCCIntermediates]:
    """MCC loss from a row-stochastic (N_b, C) probability matrix."""
    n_b, n_c = probs.shape
    if n_b < 1:
        raise ValidationError("MCC needs at least one sample")
    entropies = -torch.special.xlogy(probs, probs).sum(dim=1)
    w = 1.0 + torch.exp(-entropies)
    # normalizer sums the weight of every row in the batch
    weights = n_b * w / w.sum()
    correlation = (probs * weights[:, None]).T @ probs
    row_sums = correlation.sum(dim=1, keepdim=True)
    # a class with no mass anywhere in the batch (only reachable with injected
    # probabilities) has nothing to confuse: its row contributes zero
    empty = row_sums == 0
    normalized = correlation / torch.where(empty, torch.ones_like(row_sums), row_sums)
    loss = (normalized.sum() - torch.trace(normalized)) / n_c
    return loss, MCCIntermediates(probs, entropies, weights, correlation, normalized)


def mcc_loss(target_logits: torch.Tensor, temperature: float = 2.5) -> tuple[torch.Tensor, MCCIntermediates]:
    """Minimum class confusion on unlabeled target logits.

    Temperature-scaled softmax, entropy weights ``N_b (1 + e^-H_i) / sum_k (1 + e^-H_k)``,
    weighted class correlation, row normalization, then the mean over classes of
    the off-diagonal row mass.
    """
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    return mcc_from_probabilities(torch.softmax(target_logits / temperature, dim=1))


def byol_loss(prediction: torch.Tensor, target_projection: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``2 - 2 cos(prediction_i, target_i)``; lies in [0, 4]."""
    pn = prediction.norm(dim=1)
    tn = target_projection.norm(dim=1)
    if bool((pn == 0).any()) or bool((tn == 0).any()):
        raise DegenerateSignalError("zero-norm row in BYOL loss")
    cos = (prediction * target_projection).sum(dim=1) / (pn * tn)
    return (2.0 - 2.0 * cos).mean()


def total_loss(task=0.0, adversarial=0.0, mcc=0.0, byol=0.0, extra=0.0) -> LossBundle:
    """Unit-weight sum of the components."""
    total = task + adversarial + mcc + byol + extra
    return LossBundle(task=task, adversarial=adversarial, mcc=mcc, byol=byol, extra=extra, total=total)


# Plug-in point for alternative domain-alignment objectives. A domain loss is
# called as fn(src_features, tgt_features, src_logits, tgt_logits) -> scalar tensor.
DomainLossFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]
DOMAIN_LOSSES: dict[str, DomainLossFn] = {}


def register_domain_loss(name: str, fn: DomainLossFn) -> DomainLossFn:
    if name in DOMAIN_LOSSES:
        raise ValidationError(f"domain loss {name!r} already registered")
    DOMAIN_LOSSES[name] = fn
    return fn


def get_domain_loss(name: str) -> DomainLossFn:
    try:
        return DOMAIN_LOSSES[name]
    except KeyError:
        raise ValidationError(f"unknown domain loss {name!r}; registered: {sorted(DOMAIN_LOSSES)}") from None
