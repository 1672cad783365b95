"""The latent action model: encode a frame pair, split, project, quantize,
and reconstruct the future frame from the current frame plus the tokens.

The inverse-dynamics encoder is a spatio-temporal transformer over the
patchified pair; the forward-dynamics decoder is a spatial transformer over
the current frame conditioned on the (quantized) action tokens. The latent z
splits evenly into an action half and a visual half; each half runs through a
two-layer MLP head. The action head output is projected into seq_len tokens
of dim q for the quantizer; heads are L2-normalized only where the
contrastive objectives consume them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from conla.config import ModelConfig
from conla.errors import ConfigError
from conla.model import checkpoint as ckpt
from conla.model.quantizer import QuantizedTokens, VectorQuantizer
from conla.model.transformer import TransformerStack, patchify, unpatchify


def frames_to_tensor(frames, dtype=torch.float32) -> torch.Tensor:
    """Stack float [0,1] H*W*C frames into a (B, C, H, W) tensor."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype)


def tensor_to_frames(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()


def split_latent(z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Even lossless split along the last dim: z -> (action half, visual half)."""
    d = z.shape[-1]
    if d % 2 != 0:
        raise ConfigError(f"latent dim {d} is odd; an even split is impossible")
    return z[..., : d // 2], z[..., d // 2 :]


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all pixels. Zero iff the frames are equal."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).pow(2).mean()


class PairEncoder(nn.Module):
    """Spatio-temporal transformer over the frame pair -> z in R^d.

    Tokens are spatio-temporal tubelets: each position embeds its patch from
    both frames jointly, so per-location temporal change is available from
    the first layer and the sequence stays one token per spatial position.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_patches = (cfg.image_size // cfg.patch_size) ** 2
        tubelet_dim = 2 * cfg.patch_size * cfg.patch_size * cfg.channels
        self.patch_proj = nn.Linear(tubelet_dim, cfg.d)
        self.pos_emb = nn.Parameter(torch.randn(1, n_patches, cfg.d) * 0.02)
        self.trunk = TransformerStack(cfg.d, cfg.enc_depth, cfg.enc_heads)
        self.out = nn.Linear(cfg.d, cfg.d)

    def forward(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if tuple(first.shape[1:]) != expected or tuple(second.shape[1:]) != expected:
            raise ValueError(
                f"encoder expects frames of shape {expected}, "
                f"got {tuple(first.shape[1:])} and {tuple(second.shape[1:])}"
            )
        tubelets = torch.cat(
            [patchify(first, cfg.patch_size), patchify(second, cfg.patch_size)], dim=-1
        )
        x = self.trunk(self.patch_proj(tubelets) + self.pos_emb)
        return self.out(x.mean(dim=1))


class ProjectionHead(nn.Module):
    """Two-layer MLP head; returns both the L2-normalized and raw outputs."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, out_dim))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw = self.net(x)
        return F.normalize(raw, dim=-1), raw


class FrameDecoder(nn.Module):
    """Spatial transformer over the current frame, conditioned on the tokens.

    The flattened (seq_len * q) conditioning vector is projected to the trunk
    width and added to every patch token.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_patches = (cfg.image_size // cfg.patch_size) ** 2
        patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels
        self.patch_proj = nn.Linear(patch_dim, cfg.d)
        self.pos_emb = nn.Parameter(torch.randn(1, n_patches, cfg.d) * 0.02)
        self.cond_proj = nn.Linear(cfg.seq_len * cfg.q, cfg.d)
        self.trunk = TransformerStack(cfg.d, cfg.dec_depth, cfg.dec_heads)
        self.head = nn.Linear(cfg.d, patch_dim)

    def forward(self, frame: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if tuple(frame.shape[1:]) != (cfg.channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"decoder got frame of shape {tuple(frame.shape[1:])}")
        tokens = self.patch_proj(patchify(frame, cfg.patch_size)) + self.pos_emb
        tokens = tokens + self.cond_proj(cond).unsqueeze(1)
        x = self.trunk(tokens)
        pixels = unpatchify(self.head(x), cfg.patch_size, cfg.image_size, cfg.image_size, cfg.channels)
        return torch.sigmoid(pixels)


@dataclass
class LamOutput:
    z: torch.Tensor
    z_a_prime: torch.Tensor
    z_v_prime: torch.Tensor
    z_a: torch.Tensor  # normalized action embedding (contrastive view)
    z_a_raw: torch.Tensor  # pre-normalization action head output (quantizer view)
    z_v: torch.Tensor  # normalized visual embedding
    pre_quant_tokens: torch.Tensor
    quant: QuantizedTokens
    pred: torch.Tensor


class LatentActionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        half = cfg.d // 2
        self.encoder = PairEncoder(cfg)
        self.action_head = ProjectionHead(half, cfg.head_hidden, cfg.d)
        self.visual_head = ProjectionHead(half, cfg.head_hidden, cfg.d)
        self.token_proj = nn.Linear(cfg.d, cfg.seq_len * cfg.q)
        self.quantizer = VectorQuantizer(cfg.codebook_size, cfg.q, cfg.beta)
        self.decoder = FrameDecoder(cfg)

    def encode(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        return self.encoder(first, second)

    def action_tokens(self, z_a_raw: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        return self.token_proj(z_a_raw).reshape(-1, cfg.seq_len, cfg.q)

    def forward(self, first: torch.Tensor, second: torch.Tensor, decode_source: str | None = None) -> LamOutput:
        cfg = self.cfg
        z = self.encode(first, second)
        z_a_prime, z_v_prime = split_latent(z)
        z_a, z_a_raw = self.action_head(z_a_prime)
        z_v, _ = self.visual_head(z_v_prime)

        quant_input = z_a_raw.detach() if cfg.detach_heads_from_recon else z_a_raw
        pre_quant = self.action_tokens(quant_input)
        quant = self.quantizer(pre_quant)

        source = decode_source or cfg.decode_from
        cond = quant.quantized if source == "quantized" else pre_quant
        pred = self.decoder(first, cond.reshape(cond.shape[0], -1))
        return LamOutput(z, z_a_prime, z_v_prime, z_a, z_a_raw, z_v, pre_quant, quant, pred)

    def visual_embedding(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        """Normalized visual embedding of a (possibly reversed) pair."""
        _, z_v_prime = split_latent(self.encode(first, second))
        z_v, _ = self.visual_head(z_v_prime)
        return z_v

    @torch.no_grad()
    def tokens_for_pair(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        """Inference path: discrete token indices for a batch of pairs."""
        z = self.encode(first, second)
        z_a_prime, _ = split_latent(z)
        _, z_a_raw = self.action_head(z_a_prime)
        return self.quantizer.nearest_indices(self.action_tokens(z_a_raw))

    @torch.no_grad()
    def action_embedding(self, first: torch.Tensor, second: torch.Tensor, quantized: bool = False) -> torch.Tensor:
        """Post-head action embedding; pre-quantization unless quantized=True."""
        z_a_prime, _ = split_latent(self.encode(first, second))
        _, z_a_raw = self.action_head(z_a_prime)
        if not quantized:
            return z_a_raw
        tokens = self.action_tokens(z_a_raw)
        codes = self.quantizer.lookup(self.quantizer.nearest_indices(tokens))
        return codes.reshape(codes.shape[0], -1)

    @torch.no_grad()
    def decode_tokens(self, frame: torch.Tensor, indices: torch.Tensor) -> torch.Tensor:
        """Predict the future frame from a context frame and token indices."""
        if indices.dim() == 1:
            indices = indices.unsqueeze(0)
        cond = self.quantizer.lookup(indices).reshape(indices.shape[0], -1)
        if frame.shape[0] != indices.shape[0]:
            frame = frame.expand(indices.shape[0], -1, -1, -1)
        return self.decoder(frame, cond)


def save_lam_checkpoint(model: LatentActionModel, path, step: int, seed: int, extra: dict | None = None):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "kind": "lam",
        "model_config": model.cfg.__dict__.copy(),
        "step": step,
        "seed": seed,
    }
    if extra:
        meta.update(extra)
    return ckpt.save_arrays(path, arrays, meta)


def load_lam_checkpoint(path) -> tuple[LatentActionModel, dict]:
    arrays, meta = ckpt.load_arrays(path)
    if meta.get("kind") != "lam":
        raise ValueError(f"checkpoint {path} is a '{meta.get('kind')}' checkpoint, not a LAM")
    cfg = ModelConfig(**meta["model_config"])
    model = LatentActionModel(cfg)
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta
