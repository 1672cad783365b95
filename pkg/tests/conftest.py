import numpy as np
import pytest
import torch

from conla.config import Config, ModelConfig, PolicyConfig, TrainConfig, WorldConfig

# Fixed thread count keeps every bit-reproducibility assertion meaningful.
torch.set_num_threads(2)


def small_world(**overrides) -> WorldConfig:
    """32px world that every motion class can traverse in 8 frames."""
    params = dict(grid_size=32, sprite_size=8, episode_length=8)
    params.update(overrides)
    return WorldConfig(**params)


def small_model(**overrides) -> ModelConfig:
    params = dict(
        d=32, q=8, codebook_size=8, seq_len=4, patch_size=8,
        enc_depth=2, enc_heads=2, dec_depth=2, dec_heads=2,
        head_hidden=64, image_size=32,
    )
    params.update(overrides)
    return ModelConfig(**params)


def micro_model(**overrides) -> ModelConfig:
    """8px/d=8 instance small enough for exhaustive finite differences."""
    params = dict(
        d=8, q=4, codebook_size=3, seq_len=2, patch_size=4,
        enc_depth=1, enc_heads=2, dec_depth=1, dec_heads=2,
        head_hidden=8, image_size=8,
    )
    params.update(overrides)
    return ModelConfig(**params)


def small_config(**train_overrides) -> Config:
    train = dict(
        lr=1e-3, batch_size=16, warmup_steps=10, steps=30, frame_interval=2,
    )
    train.update(train_overrides)
    return Config(
        world=small_world(),
        model=small_model(),
        train=TrainConfig(**train),
        policy=PolicyConfig(
            width=32, depth=2, heads=2, patch_size=8,
            pretrain_steps=60, finetune_steps=60, eval_every=20,
            action_bins=16,
        ),
    )


@pytest.fixture
def world():
    return small_world()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
