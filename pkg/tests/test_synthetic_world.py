import numpy as np
import pytest
from scipy import stats

from conla.config import WorldConfig
from conla.data.instructions import extract_action_label, label_episodes, normalize_instruction
from conla.data.synthetic import (
    background_frame,
    build_probe_contexts,
    generate_dataset,
    generate_synthetic_episode,
)
from conla.errors import ConfigError

from conftest import small_world


def sprite_centroid(frame, background):
    """Mean (x, y) of pixels that differ from the sprite-free background."""
    mask = np.any(frame != background, axis=-1)
    ys, xs = np.nonzero(mask)
    return xs.mean(), ys.mean()


def test_rightward_motion_moves_centroid_exactly(world):
    config = small_world(motion_classes=[[2, 0, "right"]])
    ep = generate_synthetic_episode(config, seed=7)
    bg = background_frame(config, ep.appearance_factors["background"])
    cents = [sprite_centroid(f, bg) for f in ep.frames]
    for (x0, y0), (x1, y1) in zip(cents, cents[1:]):
        assert x1 - x0 == pytest.approx(2.0, abs=1e-9)
        assert y1 - y0 == pytest.approx(0.0, abs=1e-9)


def test_generation_is_deterministic(world):
    a = generate_synthetic_episode(world, seed=7)
    b = generate_synthetic_episode(world, seed=7)
    assert a.instruction == b.instruction
    assert a.gt_motion_class == b.gt_motion_class
    assert a.appearance_factors == b.appearance_factors
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa, fb)


def test_different_seeds_vary(world):
    eps = generate_dataset(world, 40, seed=0)
    assert len({e.gt_motion_class for e in eps}) > 1
    assert len({e.appearance_factors["shape"] for e in eps}) > 1


def test_motion_independent_of_appearance(world):
    episodes = generate_dataset(world, 1000, seed=123)
    motions = sorted({m[2] for m in world.motion_classes})
    shapes = sorted(world.sprite_shapes)
    table = np.zeros((len(motions), len(shapes)), dtype=int)
    for ep in episodes:
        table[motions.index(ep.gt_motion_class), shapes.index(ep.appearance_factors["shape"])] += 1
    _, p_value, _, _ = stats.chi2_contingency(table)
    assert p_value > 0.01  # independence not rejected at alpha=0.01


def test_displacement_exiting_frame_is_config_error():
    config = small_world(motion_classes=[[8, 0, "right"]], episode_length=8)
    with pytest.raises(ConfigError):
        generate_synthetic_episode(config, seed=0)


def test_pixels_in_unit_range_and_quantized(world):
    ep = generate_synthetic_episode(world, seed=3)
    for frame in ep.frames:
        assert frame.min() >= 0.0 and frame.max() <= 1.0
        assert np.array_equal(frame, np.round(frame * 255) / 255)


def test_noise_respects_range():
    config = small_world(noise_std=0.1)
    ep = generate_synthetic_episode(config, seed=11)
    for frame in ep.frames:
        assert frame.min() >= 0.0 and frame.max() <= 1.0


def test_instructions_label_back_to_motion_direction(world):
    episodes = generate_dataset(world, 64, seed=5)
    for ep in episodes:
        label = extract_action_label(normalize_instruction(ep.instruction))
        assert label is not None
        _, direction = label
        assert direction == ep.gt_motion_class


def test_label_episodes_assigns_classes(world):
    episodes = generate_dataset(world, 64, seed=5)
    labels = label_episodes(episodes, min_count=1)
    assert "uncertain" in labels
    assert sorted(labels.values()) == list(range(len(labels)))
    for ep in episodes:
        assert ep.action_class in labels


def test_actions_match_displacement(world):
    ep = generate_synthetic_episode(world, seed=9)
    dx, dy, _ = next(m for m in world.motion_classes if m[2] == ep.gt_motion_class)
    for action in ep.actions:
        assert action.tolist() == [dx, dy]


def test_probe_contexts_have_exact_futures(world):
    contexts = build_probe_contexts(world, k=2, n=4, seed=2)
    for ctx in contexts:
        assert set(ctx.futures) == {m[2] for m in world.motion_classes}
        bg = background_frame(world, ctx.appearance["background"])
        x0, y0 = sprite_centroid(ctx.context, bg)
        for dx, dy, name in world.motion_classes:
            x1, y1 = sprite_centroid(ctx.futures[name], bg)
            assert x1 - x0 == pytest.approx(2 * dx, abs=1e-9)
            assert y1 - y0 == pytest.approx(2 * dy, abs=1e-9)
