"""Contrastive (NT-Xent) and regression losses."""

from __future__ import annotations

import torch

from .errors import DataError

COSINE_EPS = 1e-8


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """Cosine similarity along the last axis; the norm product is floored at ``eps``."""
    denom = torch.clamp(a.norm(dim=-1) * b.norm(dim=-1), min=eps)
    return (a * b).sum(dim=-1) / denom


def similarity_matrix(z: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    norms = z.norm(dim=-1)
    return (z @ z.T) / torch.clamp(norms[:, None] * norms[None, :], min=eps)


def positive_index(n_items: int) -> torch.Tensor:
    """Partner of each batch row when pairs occupy rows (2k, 2k+1)."""
    return torch.arange(n_items) ^ 1


def nt_xent_per_anchor(z: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Per-anchor NT-Xent terms for a batch laid out as pairs (2k, 2k+1).

    For anchor i with partner j the term is
    ``-log(exp(s_ij/t) / sum_{k != i} exp(s_ik/t))``.
    """
    n = z.shape[0]
    if n % 2:
        raise DataError(f"contrastive batch must hold whole pairs, got {n} vectors")
    if n < 4:
        raise DataError("contrastive batch needs at least 2 pairs")
    if temperature <= 0:
        raise DataError("temperature must be positive")
    logits = similarity_matrix(z) / temperature
    self_mask = torch.eye(n, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    pos = positive_index(n).to(z.device)
    return torch.logsumexp(logits, dim=1) - logits[torch.arange(n, device=z.device), pos]


def nt_xent_loss(z: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Mean NT-Xent over all 2N anchors (each pair counted in both directions)."""
    return nt_xent_per_anchor(z, temperature).mean()


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise DataError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if pred.numel() == 0:
        raise DataError("MSE of an empty batch")
    return torch.mean((pred - target) ** 2)
