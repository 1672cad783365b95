import json

import numpy as np
import pytest

from conla.data.dataset import (
    dataset_hash,
    fraction_ids,
    load_dataset,
    load_labels,
    write_dataset,
)
from conla.data.instructions import label_episodes
from conla.data.synthetic import generate_dataset
from conla.errors import DataError, MissingArtifactError

from conftest import small_world


@pytest.fixture
def episodes():
    return generate_dataset(small_world(), 20, seed=0)


def _write(episodes, path, **kwargs):
    labels = label_episodes(episodes, min_count=1)
    return write_dataset(episodes, path, labels, **kwargs)


def test_roundtrip_bit_exact_png(tmp_path, episodes):
    _write(episodes, tmp_path)
    loaded = list(load_dataset(tmp_path))
    assert [e.episode_id for e in loaded] == [e.episode_id for e in episodes]
    for orig, back in zip(episodes, loaded):
        assert back.instruction == orig.instruction
        assert back.gt_motion_class == orig.gt_motion_class
        assert back.action_class == orig.action_class
        assert len(back.frames) == len(orig.frames)
        for fo, fb in zip(orig.frames, back.frames):
            assert np.array_equal(fo, fb)
        for ao, ab in zip(orig.actions, back.actions):
            assert np.array_equal(ao, ab)


def test_roundtrip_bit_exact_npy(tmp_path, episodes):
    # npy holds arbitrary floats; add noise so values are not /255 multiples
    for ep in episodes:
        ep.frames = [np.clip(f + 1e-4, 0, 1).astype(np.float32) for f in ep.frames]
    _write(episodes, tmp_path, frame_format="npy")
    loaded = list(load_dataset(tmp_path))
    for orig, back in zip(episodes, loaded):
        for fo, fb in zip(orig.frames, back.frames):
            assert np.array_equal(fo, fb)


def test_missing_frame_file_is_ingestion_error(tmp_path, episodes):
    _write(episodes, tmp_path)
    victim = next((tmp_path / "frames").iterdir())
    victim.unlink()
    with pytest.raises(DataError):
        list(load_dataset(tmp_path))


def test_malformed_record_names_line(tmp_path, episodes):
    _write(episodes, tmp_path)
    manifest = tmp_path / "manifest.jsonl"
    lines = manifest.read_text().splitlines()
    lines[4] = "{not json"
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as err:
        list(load_dataset(tmp_path))
    assert err.value.line == 5
    assert "line 5" in str(err.value)


def test_missing_field_is_ingestion_error(tmp_path, episodes):
    _write(episodes, tmp_path)
    manifest = tmp_path / "manifest.jsonl"
    lines = manifest.read_text().splitlines()
    rec = json.loads(lines[0])
    del rec["frames"]
    lines[0] = json.dumps(rec)
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError):
        list(load_dataset(tmp_path))


def test_fraction_counts_exact(tmp_path, episodes):
    _write(episodes, tmp_path)
    n = len(episodes)
    assert len(list(load_dataset(tmp_path, fraction=0.1))) == int(np.floor(0.1 * n))
    assert len(list(load_dataset(tmp_path, fraction=0.5))) == int(np.floor(0.5 * n))
    assert len(list(load_dataset(tmp_path, fraction=1.0))) == n
    # stable under reload
    first = [e.episode_id for e in load_dataset(tmp_path, fraction=0.1)]
    again = [e.episode_id for e in load_dataset(tmp_path, fraction=0.1)]
    assert first == again


def test_fractions_nest(tmp_path, episodes):
    _write(episodes, tmp_path)
    ids10 = {e.episode_id for e in load_dataset(tmp_path, fraction=0.1)}
    ids50 = {e.episode_id for e in load_dataset(tmp_path, fraction=0.5)}
    ids100 = {e.episode_id for e in load_dataset(tmp_path, fraction=1.0)}
    assert ids10 <= ids50 <= ids100


def test_fraction_ids_partition():
    ids = [f"ep{i}" for i in range(30)]
    f10 = set(fraction_ids(ids, 0.1))
    f50 = set(fraction_ids(ids, 0.5))
    f100 = set(fraction_ids(ids, 1.0))
    assert f100 == set(ids)
    # shards are disjoint pieces whose union is the full set
    shards = [f10, f50 - f10, f100 - f50]
    assert set().union(*shards) == set(ids)
    assert sum(len(s) for s in shards) == len(ids)


def test_dataset_hash_reproducible(tmp_path, episodes):
    _write(episodes, tmp_path / "a")
    again = generate_dataset(small_world(), 20, seed=0)
    _write(again, tmp_path / "b")
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")
    other = generate_dataset(small_world(), 20, seed=1)
    _write(other, tmp_path / "c")
    assert dataset_hash(tmp_path / "a") != dataset_hash(tmp_path / "c")


def test_labels_roundtrip(tmp_path, episodes):
    _write(episodes, tmp_path)
    labels = load_labels(tmp_path)
    assert labels["uncertain"] == labels[sorted(labels)[list(sorted(labels)).index("uncertain")]]
    assert all(isinstance(v, int) for v in labels.values())


def test_missing_dataset_is_missing_artifact(tmp_path):
    with pytest.raises(MissingArtifactError):
        list(load_dataset(tmp_path / "nope"))
