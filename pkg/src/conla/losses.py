"""Contrastive disentanglement objectives and the warmup-gated total loss.

Both losses operate on L2-normalized embeddings with a temperature tau and
are stabilized by subtracting each anchor's max similarity before the
exponentials (the shift cancels analytically, so gradients are unaffected).

The action loss is a supervised contrastive objective: anchors pull all
same-class rows in the batch and are repelled from the rest. Anchors with no
positive in the batch contribute zero instead of dividing by zero. The
visual loss is an InfoNCE objective over 2N rows where row i and row i+N are
a positive pair (the forward pair and its reverse-order counterpart).

Reduction: "mean" divides by the number of contributing anchors so the loss
scale is independent of batch size; "sum" is the literal summed form.
"""

from __future__ import annotations

import torch

from conla.errors import ConfigError

NEG_INF = float("-inf")


def _check_tau(tau: float):
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")


def supervised_contrastive_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    tau: float = 0.07,
    reduction: str = "mean",
    anchor_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Class-supervised contrastive loss over an N x d batch.

    anchor_mask (bool, N) restricts which rows act as anchors; masked rows
    still serve as positives/negatives for the others.
    """
    _check_tau(tau)
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError(f"supervised contrastive loss needs N >= 2, got N={n}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction '{reduction}'")

    sims = embeddings @ embeddings.T / tau
    not_self = ~torch.eye(n, dtype=torch.bool, device=embeddings.device)
    row_max = sims.masked_fill(~not_self, NEG_INF).max(dim=1, keepdim=True).values.detach()
    logits = sims - row_max
    exp_logits = torch.exp(logits) * not_self
    log_denom = torch.log(exp_logits.sum(dim=1, keepdim=True))
    log_prob = logits - log_denom

    pos_mask = (labels.unsqueeze(0) == labels.unsqueeze(1)) & not_self
    pos_count = pos_mask.sum(dim=1)
    contributing = pos_count > 0
    if anchor_mask is not None:
        contributing = contributing & anchor_mask

    per_anchor = torch.zeros(n, dtype=embeddings.dtype, device=embeddings.device)
    if contributing.any():
        summed = (log_prob * pos_mask).sum(dim=1)
        per_anchor[contributing] = -summed[contributing] / pos_count[contributing]

    total = per_anchor.sum()
    if reduction == "mean":
        n_contrib = int(contributing.sum())
        return total / n_contrib if n_contrib > 0 else total
    return total


def infonce_loss(
    embeddings: torch.Tensor,
    tau: float = 0.07,
    reduction: str = "mean",
) -> torch.Tensor:
    """InfoNCE over 2N stacked rows where the positive of row i is row i±N."""
    _check_tau(tau)
    rows = embeddings.shape[0]
    if rows % 2 != 0 or rows == 0:
        raise ValueError(f"visual loss expects an even, positive row count, got {rows}")
    n = rows // 2
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction '{reduction}'")

    sims = embeddings @ embeddings.T / tau
    not_self = ~torch.eye(rows, dtype=torch.bool, device=embeddings.device)
    row_max = sims.masked_fill(~not_self, NEG_INF).max(dim=1, keepdim=True).values.detach()
    logits = sims - row_max
    exp_logits = torch.exp(logits) * not_self
    log_denom = torch.log(exp_logits.sum(dim=1))

    idx = torch.arange(rows, device=embeddings.device)
    pos_idx = (idx + n) % rows
    pos_logits = logits[idx, pos_idx]
    per_anchor = -(pos_logits - log_denom)

    total = per_anchor.sum()
    return total / rows if reduction == "mean" else total


def total_loss(
    step: int,
    recon,
    vq_terms,
    action=None,
    visual=None,
    *,
    warmup_steps: int,
    lambda_action: float = 1.0,
    lambda_visual: float = 1.0,
):
    """Warmup-gated composition: reconstruction + VQ terms always; the
    contrastive terms join exactly at step == warmup_steps (0-indexed)."""
    total = recon + vq_terms
    if step >= warmup_steps:
        if action is not None:
            total = total + lambda_action * action
        if visual is not None:
            total = total + lambda_visual * visual
    return total
