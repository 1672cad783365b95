"""Vector quantizer: nearest-code lookup with a straight-through gradient.

Distances are computed as explicit squared differences (not the expanded
x^2 - 2xc + c^2 form) so a token equal to a codebook row has exactly zero
distance, and exact ties resolve to the lowest code index via argmin.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from conla.errors import NumericError


@dataclass
class QuantizedTokens:
    """Discrete token sequence plus the VQ training terms.

    quantized carries the straight-through estimator: its forward value is
    the selected codebook rows, its gradient flows unchanged to the input.
    codebook_loss is ||sg(token) - code||^2; commitment_loss is already
    scaled by beta: beta * ||token - sg(code)||^2.
    """

    indices: torch.Tensor  # (B, S) int64
    quantized: torch.Tensor  # (B, S, q), straight-through
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor

    @property
    def vq_loss(self) -> torch.Tensor:
        return self.codebook_loss + self.commitment_loss


class VectorQuantizer(nn.Module):
    def __init__(self, codebook_size: int, dim: int, beta: float = 0.25):
        super().__init__()
        self.codebook_size = codebook_size
        self.dim = dim
        self.beta = beta
        bound = 1.0 / codebook_size
        self.codebook = nn.Parameter(
            torch.empty(codebook_size, dim).uniform_(-bound, bound)
        )
        self.register_buffer("usage_counts", torch.zeros(codebook_size, dtype=torch.long))

    def nearest_indices(self, tokens: torch.Tensor) -> torch.Tensor:
        """Exhaustive nearest-neighbor lookup; ties go to the lowest index."""
        diffs = tokens.unsqueeze(-2) - self.codebook  # (..., |C|, q)
        dists = diffs.pow(2).sum(-1)
        return torch.argmin(dists, dim=-1)

    def forward(self, tokens: torch.Tensor) -> QuantizedTokens:
        """tokens: (B, S, q). Usage counters advance only in training mode."""
        if not torch.isfinite(tokens).all():
            raise NumericError("non-finite tokens reached the quantizer")
        indices = self.nearest_indices(tokens)
        codes = self.codebook[indices]  # (B, S, q)
        codebook_loss = (tokens.detach() - codes).pow(2).mean()
        commitment_loss = self.beta * (tokens - codes.detach()).pow(2).mean()
        # Forward value is exactly the codebook rows (codes + 0); the gradient
        # of the (tokens - sg(tokens)) term passes through as identity.
        quantized = codes.detach() + (tokens - tokens.detach())
        if self.training:
            with torch.no_grad():
                self.usage_counts += torch.bincount(
                    indices.reshape(-1), minlength=self.codebook_size
                )
        return QuantizedTokens(indices, quantized, codebook_loss, commitment_loss)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return self.codebook[indices]
