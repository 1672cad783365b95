"""Run manifests: everything needed to re-run a stage bit-identically.

A manifest is written into the output directory before the stage starts
(config snapshot, seed, input hashes, code version, thread count) and
finalized once with the end timestamp. Re-running a stage from its manifest
with the same seed and thread count reproduces checkpoints and metrics logs
byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import torch

import conla

MANIFEST_NAME = "run_manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    stage: str
    seed: int
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    dataset_hash: str | None = None
    code_version: str = conla.__version__
    thread_count: int = 0
    start_time: str = ""
    end_time: str | None = None

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True))
        return path


def start_manifest(stage: str, seed: int, config: dict, out_dir, inputs=None, extra=None, dataset_hash=None) -> RunManifest:
    manifest = RunManifest(
        stage=stage,
        seed=seed,
        config=config,
        inputs={k: str(v) for k, v in (inputs or {}).items()},
        extra=extra or {},
        dataset_hash=dataset_hash,
        thread_count=torch.get_num_threads(),
        start_time=_now(),
    )
    manifest.write(out_dir)
    return manifest


def finish_manifest(manifest: RunManifest, out_dir, outputs=None) -> RunManifest:
    manifest.outputs = {k: str(v) for k, v in (outputs or {}).items()}
    manifest.end_time = _now()
    manifest.write(out_dir)
    return manifest


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    data = json.loads(path.read_text())
    return RunManifest(**data)
