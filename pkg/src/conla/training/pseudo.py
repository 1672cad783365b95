"""Pseudo-labeling: run the trained encoder over a dataset and emit
(observation, instruction, latent token sequence) samples for policy
pretraining. Pure inference: model parameters and usage counters stay fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conla.data.dataset import Episode
from conla.errors import DataError, MissingArtifactError
from conla.model.lam import LatentActionModel, frames_to_tensor


@dataclass
class PolicySample:
    """One pretraining sample: predict the tokens from (observation, text)."""

    episode_id: str
    t: int
    observation: np.ndarray
    instruction: str
    target_tokens: list[int]


def pseudo_label(
    episodes: list[Episode],
    lam: LatentActionModel,
    k: int,
    stride: int = 1,
) -> list[PolicySample]:
    """Tokens for every (O_t, O_{t+k}) pair at the given stride."""
    was_training = lam.training
    lam.eval()
    samples = []
    for ep in episodes:
        starts = list(range(0, len(ep) - k, stride))
        if not starts:
            continue
        firsts = frames_to_tensor([ep.frames[t] for t in starts])
        seconds = frames_to_tensor([ep.frames[t + k] for t in starts])
        indices = lam.tokens_for_pair(firsts, seconds)
        for row, t in enumerate(starts):
            samples.append(
                PolicySample(
                    episode_id=ep.episode_id,
                    t=t,
                    observation=ep.frames[t],
                    instruction=ep.instruction,
                    target_tokens=[int(i) for i in indices[row]],
                )
            )
    if was_training:
        lam.train()
    return samples


def write_label_file(samples: list[PolicySample], out_dir, meta: dict) -> Path:
    """labels.jsonl + meta.json; observations stay in the source dataset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "labels.jsonl"
    with path.open("w") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "episode_id": s.episode_id,
                        "t": s.t,
                        "instruction": s.instruction,
                        "tokens": s.target_tokens,
                    }
                )
                + "\n"
            )
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_label_file(label_dir, episodes: list[Episode]) -> tuple[list[PolicySample], dict]:
    """Re-join label records with their source episodes."""
    label_dir = Path(label_dir)
    path = label_dir / "labels.jsonl"
    if not path.exists():
        raise MissingArtifactError(path)
    meta = json.loads((label_dir / "meta.json").read_text()) if (label_dir / "meta.json").exists() else {}
    by_id = {ep.episode_id: ep for ep in episodes}
    samples = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            ep = by_id.get(rec["episode_id"])
            if ep is None:
                raise DataError(f"label references unknown episode {rec['episode_id']}", line=lineno)
            samples.append(
                PolicySample(
                    episode_id=rec["episode_id"],
                    t=rec["t"],
                    observation=ep.frames[rec["t"]],
                    instruction=rec["instruction"],
                    target_tokens=list(rec["tokens"]),
                )
            )
    return samples, meta
