"""Episode container and the on-disk dataset layout.

A dataset directory holds:

    manifest.jsonl          one JSON record per episode (full set)
    manifest.10pct.jsonl    deterministic 10% shard (hash-ordered prefix)
    manifest.50pct.jsonl    deterministic 50% shard
    labels.json             action class name -> dense id
    frames/                 per-frame PNG (uint8, lossless) or .npy arrays

Frames are float32 H*W*C in [0, 1]. The synthetic generator renders on the
uint8 grid, so PNG round-trips are bit-exact; arbitrary float frames should
use frame_format="npy".
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from conla.errors import DataError, MissingArtifactError

UNCERTAIN = "uncertain"

FRACTION_MANIFESTS = {0.1: "manifest.10pct.jsonl", 0.5: "manifest.50pct.jsonl", 1.0: "manifest.jsonl"}


@dataclass
class ActionClassLabel:
    """(verb, direction) category used as weak supervision."""

    class_id: int
    verb: str
    direction: str
    is_uncertain: bool = False

    @classmethod
    def from_name(cls, name: str, labels: dict[str, int]) -> "ActionClassLabel":
        if name == UNCERTAIN:
            return cls(labels[UNCERTAIN], "", "", is_uncertain=True)
        verb, _, direction = name.partition("_")
        return cls(labels[name], verb, direction or "none")


@dataclass
class Episode:
    """An ordered frame sequence with its instruction and optional labels."""

    episode_id: str
    frames: list[np.ndarray]
    instruction: str
    action_class: str | None = None  # consolidated (verb, direction) name
    gt_motion_class: str | None = None  # synthetic ground truth motion name
    appearance_factors: dict = field(default_factory=dict)
    actions: list[np.ndarray] | None = None  # per-step continuous controls

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError(f"episode {self.episode_id} has fewer than 2 frames")

    def __len__(self):
        return len(self.frames)


def _shard_key(episode_id: str) -> str:
    return hashlib.md5(episode_id.encode("utf-8")).hexdigest()


def fraction_ids(episode_ids: list[str], fraction: float) -> list[str]:
    """Hash-ordered prefix of size floor(fraction * N); smaller fractions nest."""
    ranked = sorted(episode_ids, key=lambda e: (_shard_key(e), e))
    take = int(np.floor(fraction * len(episode_ids)))
    return ranked[:take]


def _save_frame(frame: np.ndarray, path: Path, fmt: str):
    if fmt == "png":
        arr = np.round(frame * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(path)
    else:
        np.save(path, frame.astype(np.float32))


def _load_frame(path: Path) -> np.ndarray:
    if path.suffix == ".png":
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
        return arr / 255.0
    return np.load(path).astype(np.float32)


def write_dataset(
    episodes: list[Episode],
    out_dir,
    labels: dict[str, int] | None = None,
    frame_format: str = "png",
    fractions: tuple[float, ...] = (0.1, 0.5),
) -> Path:
    """Write episodes to the manifest + frames layout. Returns the directory."""
    if frame_format not in ("png", "npy"):
        raise DataError(f"unknown frame format '{frame_format}'")
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    ext = ".png" if frame_format == "png" else ".npy"

    records = {}
    lines = []
    for ep in episodes:
        rel_paths = []
        for i, frame in enumerate(ep.frames):
            rel = f"frames/{ep.episode_id}_{i:03d}{ext}"
            _save_frame(frame, out_dir / rel, frame_format)
            rel_paths.append(rel)
        rec = {
            "episode_id": ep.episode_id,
            "instruction": ep.instruction,
            "action_class": ep.action_class,
            "gt_motion_class": ep.gt_motion_class,
            "appearance_factors": ep.appearance_factors,
            "frames": rel_paths,
            "actions": None if ep.actions is None else [list(map(float, a)) for a in ep.actions],
        }
        records[ep.episode_id] = json.dumps(rec, sort_keys=True)
        lines.append(records[ep.episode_id])

    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    ids = [ep.episode_id for ep in episodes]
    for frac in fractions:
        keep = set(fraction_ids(ids, frac))
        shard = [records[e] for e in ids if e in keep]
        (out_dir / FRACTION_MANIFESTS[frac]).write_text("\n".join(shard) + ("\n" if shard else ""))

    (out_dir / "labels.json").write_text(json.dumps(labels or {}, indent=2, sort_keys=True))
    return out_dir


def load_labels(path) -> dict[str, int]:
    labels_path = Path(path) / "labels.json"
    if not labels_path.exists():
        raise MissingArtifactError(labels_path)
    return json.loads(labels_path.read_text())


def load_dataset(path, fraction: float = 1.0):
    """Stream episodes in manifest order. Raises DataError for bad records."""
    root = Path(path)
    if fraction not in FRACTION_MANIFESTS:
        raise DataError(f"fraction must be one of {sorted(FRACTION_MANIFESTS)}, got {fraction}")
    manifest = root / FRACTION_MANIFESTS[fraction]
    if not manifest.exists():
        raise MissingArtifactError(manifest)

    with manifest.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON record: {exc}", line=lineno) from exc
            for key in ("episode_id", "instruction", "frames"):
                if key not in rec:
                    raise DataError(f"record missing field '{key}'", line=lineno)
            frames = []
            for rel in rec["frames"]:
                frame_path = root / rel
                if not frame_path.exists():
                    raise DataError(f"missing frame file {frame_path}", line=lineno)
                frames.append(_load_frame(frame_path))
            actions = rec.get("actions")
            yield Episode(
                episode_id=rec["episode_id"],
                frames=frames,
                instruction=rec["instruction"],
                action_class=rec.get("action_class"),
                gt_motion_class=rec.get("gt_motion_class"),
                appearance_factors=rec.get("appearance_factors") or {},
                actions=None if actions is None else [np.asarray(a, dtype=np.float32) for a in actions],
            )


def dataset_hash(path) -> str:
    """Content hash of the manifest and label map (frame bytes are canonical
    functions of the manifest for generated data)."""
    root = Path(path)
    h = hashlib.md5()
    for name in ("manifest.jsonl", "labels.json"):
        p = root / name
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()
