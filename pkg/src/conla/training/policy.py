"""Autoregressive policy: predict latent action tokens from (observation,
instruction) during pretraining, then per-dimension action bins after the
head swap.

The trunk is a small causal transformer over [observation patches,
instruction tokens, output slots]. During finetuning the latent token
embedding and head are dropped entirely and replaced by fresh bin
embedding/head modules; the trunk, observation embedder and instruction
embedder carry over from pretraining.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from conla.config import PolicyConfig
from conla.data.dataset import Episode
from conla.data.instructions import normalize_instruction
from conla.errors import ConfigError, NumericError
from conla.model import checkpoint as ckpt
from conla.model.lam import frames_to_tensor
from conla.model.transformer import TransformerStack, patchify
from conla.training.discretize import discretize_actions
from conla.training.pseudo import PolicySample

PAD, UNK = 0, 1
MAX_TAIL = 16


class Vocabulary:
    """Word-level instruction vocabulary with PAD/UNK at fixed slots."""

    def __init__(self, words: list[str]):
        self.words = list(words)
        self.word_to_id = {w: i + 2 for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words) + 2

    @classmethod
    def from_instructions(cls, instructions) -> "Vocabulary":
        vocab = set()
        for text in instructions:
            cleaned = normalize_instruction(text, conjunctions=frozenset())
            vocab.update(cleaned.split(" ") if cleaned else [])
        return cls(sorted(vocab))

    def encode(self, text: str, max_len: int) -> list[int]:
        cleaned = normalize_instruction(text, conjunctions=frozenset())
        ids = [self.word_to_id.get(w, UNK) for w in cleaned.split(" ") if w]
        ids = ids[:max_len]
        return ids + [PAD] * (max_len - len(ids))


class PolicyModel(nn.Module):
    def __init__(
        self,
        cfg: PolicyConfig,
        image_size: int,
        channels: int,
        instr_vocab_size: int,
        token_vocab: int,
        seq_len: int,
    ):
        super().__init__()
        cfg.validate()
        if image_size % cfg.patch_size != 0:
            raise ConfigError("policy patch_size must divide the image size")
        if max(seq_len, len(cfg.action_low)) >= MAX_TAIL:
            raise ConfigError(f"output length must stay below {MAX_TAIL}")
        self.cfg = cfg
        self.image_size = image_size
        self.channels = channels
        self.token_vocab = token_vocab
        self.seq_len = seq_len
        w = cfg.width
        n_patches = (image_size // cfg.patch_size) ** 2
        patch_dim = cfg.patch_size * cfg.patch_size * channels

        self.obs_proj = nn.Linear(patch_dim, w)
        self.obs_pos = nn.Parameter(torch.randn(1, n_patches, w) * 0.02)
        self.instr_emb = nn.Embedding(instr_vocab_size, w, padding_idx=PAD)
        self.instr_pos = nn.Parameter(torch.randn(1, cfg.max_instr_len, w) * 0.02)
        self.tail_pos = nn.Parameter(torch.randn(1, MAX_TAIL, w) * 0.02)
        self.segment = nn.Parameter(torch.randn(3, w) * 0.02)
        self.trunk = TransformerStack(w, cfg.depth, cfg.heads)

        self.stage = "latent"
        self.latent_emb = nn.Embedding(token_vocab + 1, w)  # last index = BOS
        self.latent_head = nn.Linear(w, token_vocab)
        self.action_emb = None
        self.action_head = None
        self.action_bins = None
        self.action_dims = None

    def replace_head_for_actions(self, bins: int, action_dims: int):
        """Drop the latent head/embedding and attach fresh bin modules."""
        if action_dims >= MAX_TAIL:
            raise ConfigError(f"action_dims must stay below {MAX_TAIL}")
        self.latent_emb = None
        self.latent_head = None
        self.action_emb = nn.Embedding(bins + 1, self.cfg.width)  # last index = BOS
        self.action_head = nn.Linear(self.cfg.width, bins)
        self.action_bins = bins
        self.action_dims = action_dims
        self.stage = "action"

    # -- shared plumbing -------------------------------------------------

    def _prefix(self, obs: torch.Tensor, instr: torch.Tensor):
        if tuple(obs.shape[1:]) != (self.channels, self.image_size, self.image_size):
            raise ConfigError(
                f"policy expects {self.channels}x{self.image_size}x{self.image_size} "
                f"observations, got {tuple(obs.shape[1:])}"
            )
        patches = self.obs_proj(patchify(obs, self.cfg.patch_size)) + self.obs_pos + self.segment[0]
        text = self.instr_emb(instr) + self.instr_pos[:, : instr.shape[1]] + self.segment[1]
        prefix = torch.cat([patches, text], dim=1)
        pad = torch.cat(
            [torch.zeros(obs.shape[0], patches.shape[1], dtype=torch.bool), instr == PAD], dim=1
        )
        return prefix, pad

    def _run_tail(self, prefix, prefix_pad, tail):
        x = torch.cat([prefix, tail], dim=1)
        length = x.shape[1]
        causal = torch.triu(torch.full((length, length), float("-inf"), dtype=x.dtype), diagonal=1)
        pad = torch.cat(
            [prefix_pad, torch.zeros(tail.shape[0], tail.shape[1], dtype=torch.bool)], dim=1
        )
        h = self.trunk(x, attn_mask=causal, key_padding_mask=pad)
        return h[:, -tail.shape[1] :]

    def _tail_embed(self, emb: nn.Embedding, bos: int, targets: torch.Tensor | None, steps: int):
        b = targets.shape[0]
        bos_col = torch.full((b, 1), bos, dtype=torch.long)
        inputs = torch.cat([bos_col, targets[:, : steps - 1]], dim=1) if steps > 1 else bos_col
        return emb(inputs) + self.tail_pos[:, :steps] + self.segment[2]

    # -- latent stage -----------------------------------------------------

    def latent_logits(self, obs, instr, targets) -> torch.Tensor:
        """Teacher-forced logits, (B, seq_len, token_vocab)."""
        if self.stage != "latent":
            raise ConfigError("latent head has been replaced; model is in action stage")
        prefix, pad = self._prefix(obs, instr)
        tail = self._tail_embed(self.latent_emb, self.token_vocab, targets, self.seq_len)
        return self.latent_head(self._run_tail(prefix, pad, tail))

    @torch.no_grad()
    def generate_latent(self, obs, instr) -> torch.Tensor:
        """Greedy token decoding, (B, seq_len)."""
        b = obs.shape[0]
        out = torch.zeros(b, 0, dtype=torch.long)
        prefix, pad = self._prefix(obs, instr)
        for s in range(self.seq_len):
            tail = self._tail_embed(self.latent_emb, self.token_vocab, out, s + 1)
            logits = self.latent_head(self._run_tail(prefix, pad, tail))[:, -1]
            out = torch.cat([out, logits.argmax(dim=-1, keepdim=True)], dim=1)
        return out

    # -- action stage -----------------------------------------------------

    def action_logits(self, obs, instr, target_bins) -> torch.Tensor:
        if self.stage != "action":
            raise ConfigError("action head is absent; call replace_head_for_actions first")
        prefix, pad = self._prefix(obs, instr)
        tail = self._tail_embed(self.action_emb, self.action_bins, target_bins, self.action_dims)
        return self.action_head(self._run_tail(prefix, pad, tail))

    @torch.no_grad()
    def generate_action_bins(self, obs, instr) -> torch.Tensor:
        b = obs.shape[0]
        out = torch.zeros(b, 0, dtype=torch.long)
        prefix, pad = self._prefix(obs, instr)
        for s in range(self.action_dims):
            tail = self._tail_embed(self.action_emb, self.action_bins, out, s + 1)
            logits = self.action_head(self._run_tail(prefix, pad, tail))[:, -1]
            out = torch.cat([out, logits.argmax(dim=-1, keepdim=True)], dim=1)
        return out


# -- checkpoints ----------------------------------------------------------


def save_policy_checkpoint(model: PolicyModel, vocab: Vocabulary, path, step: int, seed: int):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "kind": "policy",
        "policy_config": model.cfg.__dict__.copy(),
        "image_size": model.image_size,
        "channels": model.channels,
        "token_vocab": model.token_vocab,
        "seq_len": model.seq_len,
        "stage": model.stage,
        "action_bins": model.action_bins,
        "action_dims": model.action_dims,
        "vocab_words": vocab.words,
        "step": step,
        "seed": seed,
    }
    return ckpt.save_arrays(path, arrays, meta)


def load_policy_checkpoint(path) -> tuple[PolicyModel, Vocabulary, dict]:
    arrays, meta = ckpt.load_arrays(path)
    if meta.get("kind") != "policy":
        raise ConfigError(f"checkpoint {path} is a '{meta.get('kind')}' checkpoint, not a policy")
    vocab = Vocabulary(meta["vocab_words"])
    cfg = PolicyConfig(**meta["policy_config"])
    model = PolicyModel(
        cfg, meta["image_size"], meta["channels"], len(vocab), meta["token_vocab"], meta["seq_len"]
    )
    if meta["stage"] == "action":
        model.replace_head_for_actions(meta["action_bins"], meta["action_dims"])
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    model.eval()
    return model, vocab, meta


# -- training loops --------------------------------------------------------


def _holdout_split(keys: list[str], holdout_fraction: float) -> np.ndarray:
    """Deterministic hash split; True marks holdout rows."""
    threshold = int(holdout_fraction * 2**31)
    marks = []
    for key in keys:
        h = int.from_bytes(hashlib.md5(key.encode()).digest()[:4], "big") % 2**31
        marks.append(h < threshold)
    return np.asarray(marks, dtype=bool)


def _token_loss(logits: torch.Tensor, targets: torch.Tensor, kind: str) -> torch.Tensor:
    flat = logits.reshape(-1, logits.shape[-1])
    if kind == "ce":
        return F.cross_entropy(flat, targets.reshape(-1))
    one_hot = F.one_hot(targets.reshape(-1), num_classes=logits.shape[-1]).to(logits.dtype)
    return (flat - one_hot).pow(2).mean()


@dataclass
class _TensorSamples:
    obs: torch.Tensor
    instr: torch.Tensor
    targets: torch.Tensor


def _pack(samples, vocab: Vocabulary, max_instr_len: int, targets) -> _TensorSamples:
    obs = frames_to_tensor([s.observation for s in samples])
    instr = torch.tensor(
        [vocab.encode(s.instruction, max_instr_len) for s in samples], dtype=torch.long
    )
    return _TensorSamples(obs, instr, torch.from_numpy(np.asarray(targets, dtype=np.int64)))


def token_accuracy(model: PolicyModel, packed: _TensorSamples, batch: int = 64) -> float:
    hits = total = 0
    for i in range(0, packed.obs.shape[0], batch):
        pred = model.generate_latent(packed.obs[i : i + batch], packed.instr[i : i + batch])
        hits += int((pred == packed.targets[i : i + batch]).sum())
        total += pred.numel()
    return hits / max(total, 1)


def bin_accuracy(model: PolicyModel, packed: _TensorSamples, batch: int = 64) -> float:
    hits = total = 0
    for i in range(0, packed.obs.shape[0], batch):
        pred = model.generate_action_bins(packed.obs[i : i + batch], packed.instr[i : i + batch])
        hits += int((pred == packed.targets[i : i + batch]).sum())
        total += pred.numel()
    return hits / max(total, 1)


def pretrain_policy(
    samples: list[PolicySample],
    cfg: PolicyConfig,
    token_vocab: int,
    seq_len: int,
    seed: int,
    out_dir,
) -> dict:
    """Train the latent-token head; reports held-out per-token accuracy."""
    if not samples:
        raise ValueError("no pretraining samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    vocab = Vocabulary.from_instructions(s.instruction for s in samples)
    holdout = _holdout_split([f"{s.episode_id}:{s.t}" for s in samples], cfg.holdout_fraction)
    if holdout.all() or not holdout.any():
        holdout[:] = False
        holdout[: max(1, len(samples) // 5)] = True
    train_rows = [s for s, h in zip(samples, holdout) if not h]
    hold_rows = [s for s, h in zip(samples, holdout) if h]

    obs_shape = samples[0].observation.shape
    torch.manual_seed(seed)
    model = PolicyModel(cfg, obs_shape[0], obs_shape[2], len(vocab), token_vocab, seq_len)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.pretrain_lr, weight_decay=0.01)
    rng = np.random.default_rng(seed)

    packed_hold = _pack(hold_rows, vocab, cfg.max_instr_len, [s.target_tokens for s in hold_rows])
    metrics_path = out_dir / "pretrain_metrics.jsonl"
    history = []
    with metrics_path.open("w") as metrics:
        for step in range(cfg.pretrain_steps):
            idx = rng.integers(len(train_rows), size=cfg.pretrain_batch)
            rows = [train_rows[i] for i in idx]
            batch = _pack(rows, vocab, cfg.max_instr_len, [s.target_tokens for s in rows])
            logits = model.latent_logits(batch.obs, batch.instr, batch.targets)
            loss = _token_loss(logits, batch.targets, cfg.token_loss)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite policy loss at step {step}", {"step": step})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            record = {"step": step, "loss": float(loss.detach())}
            if (step + 1) % cfg.eval_every == 0 or step == cfg.pretrain_steps - 1:
                acc = token_accuracy(model, packed_hold)
                record["holdout_token_acc"] = acc
                history.append((step, acc))
            metrics.write(json.dumps(record) + "\n")

    model.eval()
    path = save_policy_checkpoint(model, vocab, out_dir / "policy.npz", cfg.pretrain_steps, seed)
    return {
        "checkpoint": path,
        "metrics": metrics_path,
        "model": model,
        "vocab": vocab,
        "holdout_token_acc": history[-1][1] if history else None,
        "history": history,
    }


def trajectory_rows(episodes: list[Episode]) -> list[PolicySample]:
    """Flatten labeled trajectories into per-step rows; tokens carry the
    continuous action until discretization."""
    rows = []
    for ep in episodes:
        if ep.actions is None:
            continue
        for t, action in enumerate(ep.actions):
            rows.append(
                PolicySample(
                    episode_id=ep.episode_id,
                    t=t,
                    observation=ep.frames[t],
                    instruction=ep.instruction,
                    target_tokens=[float(a) for a in action],
                )
            )
    if not rows:
        raise ValueError("no trajectory has continuous actions to finetune on")
    return rows


def finetune_policy(
    episodes: list[Episode],
    cfg: PolicyConfig,
    seed: int,
    out_dir,
    pretrained_checkpoint=None,
    target_accuracy: float | None = None,
) -> dict:
    """Swap in the action-bin head and train on discretized trajectories.

    pretrained_checkpoint=None trains the same architecture from random
    initialization (the scratch baseline).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = trajectory_rows(episodes)
    dims = len(cfg.action_low)
    for row in rows:
        if len(row.target_tokens) != dims:
            raise ConfigError(
                f"action vector has {len(row.target_tokens)} dims, config expects {dims}"
            )
    bins = [
        discretize_actions(np.asarray(r.target_tokens), cfg.action_bins, cfg.action_low, cfg.action_high)
        for r in rows
    ]

    torch.manual_seed(seed)
    if pretrained_checkpoint is not None:
        model, vocab, meta = load_policy_checkpoint(pretrained_checkpoint)
        if meta["stage"] != "latent":
            raise ConfigError("finetuning expects a pretrained (latent-stage) policy checkpoint")
        obs_shape = rows[0].observation.shape
        if meta["image_size"] != obs_shape[0] or meta["channels"] != obs_shape[2]:
            raise ConfigError(
                f"checkpoint observation shape {meta['image_size']} does not match data {obs_shape}"
            )
    else:
        vocab = Vocabulary.from_instructions(r.instruction for r in rows)
        obs_shape = rows[0].observation.shape
        model = PolicyModel(cfg, obs_shape[0], obs_shape[2], len(vocab), token_vocab=1, seq_len=1)
    # Architecture (widths, instruction length) is the model's; the caller's
    # config drives the finetuning hyperparameters and the bin layout.
    max_instr_len = model.cfg.max_instr_len
    model.replace_head_for_actions(cfg.action_bins, dims)
    model.train()

    if cfg.freeze_embedder_in_finetune:
        model.obs_proj.requires_grad_(False)
        model.obs_pos.requires_grad_(False)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=cfg.finetune_lr, weight_decay=0.01)

    holdout = _holdout_split([f"{r.episode_id}:{r.t}" for r in rows], cfg.holdout_fraction)
    if holdout.all() or not holdout.any():
        holdout[:] = False
        holdout[: max(1, len(rows) // 5)] = True
    train_rows = [(r, b) for (r, b), h in zip(zip(rows, bins), holdout) if not h]
    hold_rows = [(r, b) for (r, b), h in zip(zip(rows, bins), holdout) if h]
    packed_hold = _pack(
        [r for r, _ in hold_rows], vocab, max_instr_len, [b for _, b in hold_rows]
    )

    rng = np.random.default_rng(seed)
    metrics_path = out_dir / "finetune_metrics.jsonl"
    steps_to_target = None
    history = []
    with metrics_path.open("w") as metrics:
        for step in range(cfg.finetune_steps):
            idx = rng.integers(len(train_rows), size=cfg.finetune_batch)
            chosen = [train_rows[i] for i in idx]
            batch = _pack([r for r, _ in chosen], vocab, max_instr_len, [b for _, b in chosen])
            logits = model.action_logits(batch.obs, batch.instr, batch.targets)
            loss = _token_loss(logits, batch.targets, "ce")
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite finetune loss at step {step}", {"step": step})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            record = {"step": step, "loss": float(loss.detach())}
            if (step + 1) % cfg.eval_every == 0 or step == cfg.finetune_steps - 1:
                acc = bin_accuracy(model, packed_hold)
                record["holdout_bin_acc"] = acc
                history.append((step, acc))
                if target_accuracy is not None and steps_to_target is None and acc >= target_accuracy:
                    steps_to_target = step + 1
            metrics.write(json.dumps(record) + "\n")

    model.eval()
    path = save_policy_checkpoint(model, vocab, out_dir / "policy_finetuned.npz", cfg.finetune_steps, seed)
    return {
        "checkpoint": path,
        "metrics": metrics_path,
        "model": model,
        "vocab": vocab,
        "holdout_bin_acc": history[-1][1] if history else None,
        "steps_to_target": steps_to_target,
        "history": history,
    }
