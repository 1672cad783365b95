"""Run configuration: synthetic world, model, LAM training, policy stages.

Everything is a plain dataclass serialized to one JSON file per run so that a
run manifest can snapshot the exact configuration. Paper-scale values (d=1024,
batch 96, 100k steps) are expressible; the defaults are desk-scale so every
stage trains on a CPU in minutes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from conla.errors import ConfigError

# 4 cardinal + 4 diagonal sprite displacements, in pixels per frame.
DEFAULT_MOTIONS = [
    [2, 0, "right"],
    [-2, 0, "left"],
    [0, -2, "up"],
    [0, 2, "down"],
    [2, -2, "up_right"],
    [-2, -2, "up_left"],
    [2, 2, "down_right"],
    [-2, 2, "down_left"],
]


@dataclass
class WorldConfig:
    """Synthetic sprite world: one sprite, one constant motion per episode."""

    grid_size: int = 64
    sprite_size: int = 12
    sprite_shapes: list[str] = field(
        default_factory=lambda: ["square", "circle", "triangle"]
    )
    # 0..255 RGB triples; rendering happens on the uint8 grid so that frames
    # survive PNG round-trips bit-exactly.
    sprite_colors: list[list[int]] = field(
        default_factory=lambda: [[220, 60, 60], [60, 120, 220], [235, 200, 60]]
    )
    backgrounds: list[int] = field(default_factory=lambda: [0, 1, 2])
    motion_classes: list[list] = field(default_factory=lambda: [list(m) for m in DEFAULT_MOTIONS])
    episode_length: int = 16
    noise_std: float = 0.0

    def validate(self):
        if self.grid_size <= 0 or self.sprite_size <= 0 or self.episode_length < 2:
            raise ConfigError("grid_size/sprite_size must be positive, episode_length >= 2")
        if self.sprite_size >= self.grid_size:
            raise ConfigError("sprite_size must be smaller than grid_size")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if not self.motion_classes:
            raise ConfigError("motion_classes must be non-empty")
        names = [m[2] for m in self.motion_classes]
        if len(set(names)) != len(names):
            raise ConfigError("motion class names must be distinct")
        if len({(m[0], m[1]) for m in self.motion_classes}) != len(self.motion_classes):
            raise ConfigError("motion class displacements must be distinct")
        for dx, dy, name in self.motion_classes:
            travel = (self.episode_length - 1) * max(abs(dx), abs(dy))
            if travel + self.sprite_size > self.grid_size:
                raise ConfigError(
                    f"motion '{name}' ({dx},{dy}) exits the {self.grid_size}px frame "
                    f"over {self.episode_length} frames"
                )


@dataclass
class ModelConfig:
    """Latent action model sizes and quantizer layout.

    d is the latent embedding width; the quantizer consumes a learned
    projection of the action-head output into seq_len tokens of dim q.
    """

    d: int = 64
    q: int = 8
    codebook_size: int = 8
    seq_len: int = 4
    patch_size: int = 8
    enc_depth: int = 4
    enc_heads: int = 4
    dec_depth: int = 4
    dec_heads: int = 4
    head_hidden: int = 128
    beta: float = 0.25
    image_size: int = 64
    channels: int = 3
    # "quantized" feeds the decoder codebook rows (straight-through);
    # "pre_quant" feeds the continuous tokens. The warmup variant is kept
    # separate so the reconstruction-only phase can be ablated on its own.
    decode_from: str = "quantized"
    warmup_decode_from: str = "quantized"
    # Diagnostic switch: stop reconstruction gradients at the head outputs so
    # the encoder/heads are shaped only by the contrastive terms.
    detach_heads_from_recon: bool = False

    def validate(self):
        if self.d % 2 != 0:
            raise ConfigError("embedding dim d must be even (latent is split in half)")
        if self.d % self.seq_len != 0:
            raise ConfigError("d must be divisible by seq_len")
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be divisible by patch_size")
        for name in ("decode_from", "warmup_decode_from"):
            if getattr(self, name) not in ("quantized", "pre_quant"):
                raise ConfigError(f"{name} must be 'quantized' or 'pre_quant'")


@dataclass
class TrainConfig:
    """Stage-1 LAM training loop (warmup + contrastive phases)."""

    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    warmup_steps: int = 500
    steps: int = 5000
    frame_interval: int = 2
    tau: float = 0.07
    lambda_action: float = 1.0
    lambda_visual: float = 1.0
    loss_reduction: str = "mean"
    disable_action_contrast: bool = False
    disable_visual_contrast: bool = False
    disable_inverse_aug: bool = False
    exclude_uncertain_anchors: bool = False
    fraction: float = 1.0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self):
        if self.warmup_steps > self.steps:
            raise ConfigError("warmup_steps must not exceed total steps")
        if self.tau <= 0:
            raise ConfigError("temperature tau must be positive")
        if self.loss_reduction not in ("sum", "mean"):
            raise ConfigError("loss_reduction must be 'sum' or 'mean'")
        if self.batch_size < 2 and not self.disable_action_contrast:
            raise ConfigError("batch_size must be >= 2 when action contrast is enabled")
        if self.frame_interval < 1:
            raise ConfigError("frame_interval must be >= 1")
        if self.fraction not in (0.1, 0.5, 1.0):
            raise ConfigError("fraction must be one of 0.1, 0.5, 1.0")


@dataclass
class PolicyConfig:
    """Autoregressive policy: latent-token pretraining then bin finetuning."""

    width: int = 64
    depth: int = 2
    heads: int = 4
    patch_size: int = 8
    max_instr_len: int = 8
    pretrain_lr: float = 1e-3
    pretrain_steps: int = 600
    pretrain_batch: int = 32
    finetune_lr: float = 1e-3
    finetune_steps: int = 400
    finetune_batch: int = 32
    eval_every: int = 25
    holdout_fraction: float = 0.2
    action_bins: int = 256
    action_low: list[float] = field(default_factory=lambda: [-3.0, -3.0])
    action_high: list[float] = field(default_factory=lambda: [3.0, 3.0])
    train_embedder_in_pretrain: bool = True
    freeze_embedder_in_finetune: bool = True
    token_loss: str = "ce"  # "mse_logits" keeps the regression variant reachable

    def validate(self):
        if self.action_bins < 2:
            raise ConfigError("action_bins must be >= 2")
        if len(self.action_low) != len(self.action_high):
            raise ConfigError("action_low/action_high must have equal length")
        for lo, hi in zip(self.action_low, self.action_high):
            if not lo < hi:
                raise ConfigError("each action range must have low < high")
        if self.token_loss not in ("ce", "mse_logits"):
            raise ConfigError("token_loss must be 'ce' or 'mse_logits'")


@dataclass
class Config:
    """Top-level bundle written next to every run artifact."""

    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def validate(self):
        self.world.validate()
        self.model.validate()
        self.train.validate()
        self.policy.validate()
        if self.model.image_size != self.world.grid_size:
            raise ConfigError("model.image_size must match world.grid_size")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        for section_name in ("world", "model", "train", "policy"):
            section = data.get(section_name, {})
            target = getattr(cfg, section_name)
            known = {f.name for f in dataclasses.fields(target)}
            for key, value in section.items():
                if key not in known:
                    raise ConfigError(f"unknown config key {section_name}.{key}")
                if key == "betas":
                    value = tuple(value)
                setattr(target, key, value)
        return cfg

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def apply_overrides(self, overrides: list[str]) -> "Config":
        """Apply full-key overrides like 'train.lr=3e-4' or 'model.d=128'."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override '{item}' is not of the form section.key=value")
            dotted, raw = item.split("=", 1)
            parts = dotted.split(".")
            if len(parts) != 2:
                raise ConfigError(f"override key '{dotted}' must be section.key")
            section_name, key = parts
            if not hasattr(self, section_name):
                raise ConfigError(f"unknown config section '{section_name}'")
            section = getattr(self, section_name)
            known = {f.name for f in dataclasses.fields(section)}
            if key not in known:
                raise ConfigError(f"unknown config key {dotted}")
            current = getattr(section, key)
            setattr(section, key, _parse_override(raw, current))
        return self


def _parse_override(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean override '{raw}'")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        value = json.loads(raw)
        return tuple(value) if isinstance(current, tuple) else value
    return raw
