"""Shared transformer pieces for the encoder, decoder and policy trunk.

Everything here is per-sample: pre-norm blocks with LayerNorm only, no
batch-coupled statistics, so batched outputs match single-sample outputs.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def patchify(x: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, H/p * W/p, p*p*C), row-major patch order."""
    b, c, h, w = x.shape
    nh, nw = h // patch, w // patch
    x = x.reshape(b, c, nh, patch, nw, patch)
    x = x.permute(0, 2, 4, 3, 5, 1)  # B, nh, nw, p, p, C
    return x.reshape(b, nh * nw, patch * patch * c)


def unpatchify(tokens: torch.Tensor, patch: int, h: int, w: int, c: int) -> torch.Tensor:
    """Inverse of patchify: (B, N, p*p*C) -> (B, C, H, W)."""
    b = tokens.shape[0]
    nh, nw = h // patch, w // patch
    x = tokens.reshape(b, nh, nw, patch, patch, c)
    x = x.permute(0, 5, 1, 3, 2, 4)  # B, C, nh, p, nw, p
    return x.reshape(b, c, h, w)


class Block(nn.Module):
    """Pre-norm self-attention + MLP block."""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x, attn_mask=None, key_padding_mask=None):
        h = self.norm1(x)
        attn_out, _ = self.attn(
            h, h, h, attn_mask=attn_mask, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


class TransformerStack(nn.Module):
    def __init__(self, width: int, depth: int, heads: int):
        super().__init__()
        self.blocks = nn.ModuleList(Block(width, heads) for _ in range(depth))
        self.final_norm = nn.LayerNorm(width)

    def forward(self, x, attn_mask=None, key_padding_mask=None):
        for block in self.blocks:
            x = block(x, attn_mask=attn_mask, key_padding_mask=key_padding_mask)
        return self.final_norm(x)
