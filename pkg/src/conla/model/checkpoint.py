"""Checkpoint container: one .npz archive of named arrays + JSON metadata.

The metadata document is embedded as a uint8 payload under "__meta__" so a
checkpoint stays a single file. The zip is written with fixed entry
timestamps and no compression, so identical contents produce bit-identical
files; arrays round-trip exactly (dtype and values), which gives
load(save(M)) == M for all model outputs.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
from numpy.lib import format as npformat

from conla.errors import MissingArtifactError

FORMAT_VERSION = 1
META_KEY = "__meta__"
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp for reproducible bytes


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    meta = dict(meta)
    meta.setdefault("format_version", FORMAT_VERSION)
    payload = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in [(META_KEY, payload), *sorted(arrays.items())]:
            buf = io.BytesIO()
            npformat.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path)
    with np.load(path) as archive:
        meta = json.loads(bytes(archive[META_KEY]).decode("utf-8"))
        arrays = {k: archive[k] for k in archive.files if k != META_KEY}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {meta.get('format_version')}, "
            f"expected {FORMAT_VERSION}"
        )
    return arrays, meta
