"""Synthetic sprite world with ground-truth motion.

Each episode shows one sprite translating with a constant per-frame
displacement over a static textured background. Shape, color and background
are sampled independently of the motion class, which makes the world a
controlled testbed: motion is the only factor the latent action should carry,
and every appearance/motion combination has an exactly computable future
frame for the transplanted-action probes.

Rendering happens on the uint8 grid (then /255), so stored PNG frames
round-trip bit-exactly and integer displacements shift the sprite centroid by
exactly (dx, dy) pixels per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from conla.config import WorldConfig
from conla.data.dataset import Episode
from conla.data.pairs import FramePair
from conla.errors import ConfigError

COLOR_NAMES = ["red", "blue", "yellow", "green", "purple", "teal", "orange", "gray"]

# Several phrasings per direction keep the direction-dictionary lookup
# non-trivial without introducing filtered conjunctions. One verb only: the
# derived (verb, direction) classes then coincide with the motion classes,
# so the weak supervision is about motion, not phrasing.
DIRECTION_PHRASES = {
    "right": ["to the right", "rightwards"],
    "left": ["to the left", "leftwards"],
    "up": ["up", "to the top"],
    "down": ["down", "to the bottom"],
    "up_right": ["to the upper right", "up toward the right"],
    "up_left": ["to the upper left", "up toward the left"],
    "down_right": ["to the lower right", "down toward the right"],
    "down_left": ["to the lower left", "down toward the left"],
}
TEMPLATE_VERBS = ["move"]


def _shape_mask(shape: str, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        return (xs - c) ** 2 + (ys - c) ** 2 <= (size / 2.0) ** 2
    if shape == "triangle":
        half_width = (ys + 1) * (size / 2.0) / size
        return np.abs(xs - c) <= half_width
    if shape == "cross":
        return (np.abs(xs - c) <= size / 6.0) | (np.abs(ys - c) <= size / 6.0)
    raise ConfigError(f"unknown sprite shape '{shape}'")


def _texture(bg_id: int, n: int) -> np.ndarray:
    """Deterministic uint8 background texture for a background id."""
    kind = bg_id % 5
    if kind == 0:
        return np.full((n, n, 3), 60, dtype=np.uint8)
    if kind == 1:
        return np.full((n, n, 3), 190, dtype=np.uint8)
    if kind == 2:
        row = np.linspace(30, 220, n).astype(np.uint8)
        return np.repeat(row[None, :, None], n, axis=0).repeat(3, axis=2)
    if kind == 3:
        col = np.linspace(220, 30, n).astype(np.uint8)
        return np.repeat(col[:, None, None], n, axis=1).repeat(3, axis=2)
    tile = ((np.add.outer(np.arange(n) // 8, np.arange(n) // 8) % 2) * 80 + 80).astype(np.uint8)
    return np.repeat(tile[:, :, None], 3, axis=2)


def background_frame(config: WorldConfig, bg_id: int) -> np.ndarray:
    """The sprite-free background as a float frame (for masks and probes)."""
    return _texture(bg_id, config.grid_size).astype(np.float32) / 255.0


def render_frame(
    config: WorldConfig, shape: str, color: list[int], bg_id: int, x: int, y: int
) -> np.ndarray:
    """Render one float32 frame in [0,1] with the sprite at integer (x, y)."""
    n = config.grid_size
    s = config.sprite_size
    if x < 0 or y < 0 or x + s > n or y + s > n:
        raise ConfigError(f"sprite at ({x},{y}) exits the {n}px frame")
    canvas = _texture(bg_id, n).copy()
    mask = _shape_mask(shape, s)
    patch = canvas[y : y + s, x : x + s]
    patch[mask] = np.asarray(color, dtype=np.uint8)
    return canvas.astype(np.float32) / 255.0


def _start_range(total: int, grid: int, sprite: int) -> tuple[int, int]:
    lo = max(0, -total)
    hi = grid - sprite - max(0, total)
    return lo, hi


def _apply_noise(frame: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    noisy = frame + rng.normal(0.0, std, size=frame.shape)
    arr = np.round(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)
    return arr.astype(np.float32) / 255.0


def generate_synthetic_episode(config: WorldConfig, seed: int) -> Episode:
    """One episode: constant motion, independent appearance, templated text."""
    config.validate()
    rng = np.random.default_rng(seed)
    n, s = config.grid_size, config.sprite_size

    shape_idx = int(rng.integers(len(config.sprite_shapes)))
    color_idx = int(rng.integers(len(config.sprite_colors)))
    bg_idx = int(rng.integers(len(config.backgrounds)))
    motion_idx = int(rng.integers(len(config.motion_classes)))

    shape = config.sprite_shapes[shape_idx]
    color = config.sprite_colors[color_idx]
    bg_id = config.backgrounds[bg_idx]
    dx, dy, motion_name = config.motion_classes[motion_idx]

    total_x = (config.episode_length - 1) * dx
    total_y = (config.episode_length - 1) * dy
    x_lo, x_hi = _start_range(total_x, n, s)
    y_lo, y_hi = _start_range(total_y, n, s)
    x0 = int(rng.integers(x_lo, x_hi + 1))
    y0 = int(rng.integers(y_lo, y_hi + 1))

    frames = []
    for t in range(config.episode_length):
        frame = render_frame(config, shape, color, bg_id, x0 + t * dx, y0 + t * dy)
        if config.noise_std > 0:
            frame = _apply_noise(frame, config.noise_std, rng)
        frames.append(frame)

    color_name = COLOR_NAMES[color_idx % len(COLOR_NAMES)]
    verb = TEMPLATE_VERBS[int(rng.integers(len(TEMPLATE_VERBS)))]
    phrases = DIRECTION_PHRASES.get(motion_name, [motion_name.replace("_", " ")])
    phrase = phrases[int(rng.integers(len(phrases)))]
    instruction = f"{verb.capitalize()} the {color_name} {shape} {phrase}."

    actions = [np.asarray([dx, dy], dtype=np.float32) for _ in range(config.episode_length - 1)]
    return Episode(
        episode_id=f"ep{seed:08d}",
        frames=frames,
        instruction=instruction,
        gt_motion_class=motion_name,
        appearance_factors={
            "shape": shape,
            "color": color_name,
            "background": bg_id,
            "start_x": x0,
            "start_y": y0,
        },
        actions=actions,
    )


def generate_dataset(config: WorldConfig, n_episodes: int, seed: int) -> list[Episode]:
    """n_episodes independent episodes seeded from consecutive offsets."""
    return [generate_synthetic_episode(config, seed + i) for i in range(n_episodes)]


@dataclass
class ProbeContext:
    """A context frame plus the exact future frame under every motion class."""

    context: np.ndarray
    futures: dict[str, np.ndarray]
    appearance: dict


@dataclass
class ProbeSet:
    """Transplanted-action probes: tokens come from sources, frames from contexts."""

    sources: list[tuple[FramePair, str]]  # (forward pair, motion class name)
    contexts: list[ProbeContext]
    interval_k: int


def build_probe_contexts(config: WorldConfig, k: int, n: int, seed: int) -> list[ProbeContext]:
    """Contexts whose start position stays valid for every motion over k steps."""
    config.validate()
    rng = np.random.default_rng(seed)
    grid, s = config.grid_size, config.sprite_size

    x_lo = max([max(0, -k * dx) for dx, _, _ in config.motion_classes])
    x_hi = min([grid - s - max(0, k * dx) for dx, _, _ in config.motion_classes])
    y_lo = max([max(0, -k * dy) for _, dy, _ in config.motion_classes])
    y_hi = min([grid - s - max(0, k * dy) for _, dy, _ in config.motion_classes])
    if x_lo > x_hi or y_lo > y_hi:
        raise ConfigError(f"no start position is valid for all motions at interval k={k}")

    contexts = []
    for _ in range(n):
        shape = config.sprite_shapes[int(rng.integers(len(config.sprite_shapes)))]
        color = config.sprite_colors[int(rng.integers(len(config.sprite_colors)))]
        bg_id = config.backgrounds[int(rng.integers(len(config.backgrounds)))]
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))
        context = render_frame(config, shape, color, bg_id, x0, y0)
        futures = {
            name: render_frame(config, shape, color, bg_id, x0 + k * dx, y0 + k * dy)
            for dx, dy, name in config.motion_classes
        }
        contexts.append(
            ProbeContext(context, futures, {"shape": shape, "background": bg_id, "x": x0, "y": y0})
        )
    return contexts


def build_probe_set(
    config: WorldConfig,
    episodes: list[Episode],
    k: int,
    n_sources: int,
    n_contexts: int,
    seed: int,
) -> ProbeSet:
    """Sample source pairs from episodes and generate matching contexts."""
    rng = np.random.default_rng(seed)
    labeled = [ep for ep in episodes if ep.gt_motion_class is not None and len(ep) > k]
    if not labeled:
        raise ValueError("probe sources need synthetic episodes with ground-truth motion")
    sources = []
    for _ in range(n_sources):
        ep = labeled[int(rng.integers(len(labeled)))]
        t = int(rng.integers(len(ep) - k))
        pair = FramePair(ep.frames[t], ep.frames[t + k], k)
        sources.append((pair, ep.gt_motion_class))
    contexts = build_probe_contexts(config, k, n_contexts, seed + 1)
    return ProbeSet(sources=sources, contexts=contexts, interval_k=k)
