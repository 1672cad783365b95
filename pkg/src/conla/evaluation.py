"""Disentanglement diagnostics for a trained latent action model.

Four probes quantify what the latent action space actually encodes:

* cluster_metrics: k-means purity and silhouette of the action embeddings
  against ground-truth motion classes (compactness of same-motion clips).
* shortcut_probe: tokens extracted from a source pair are decoded on top of
  an unrelated context frame. A motion-faithful model lands near the
  context's true future under the source motion (low motion-fidelity MSE); a
  shortcut model drifts toward the source clip's own future frame instead.
* codebook_usage: token histogram entropy/perplexity, the collapse signal.
* export_embeddings: tabular dump (optionally 2-D PCA) for external plots.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from conla.data.dataset import Episode
from conla.data.synthetic import ProbeSet
from conla.model.lam import LatentActionModel, frames_to_tensor, reconstruction_loss

COLLAPSE_PERPLEXITY = 1.5


# -- embeddings -------------------------------------------------------------


def collect_action_embeddings(
    lam: LatentActionModel,
    episodes: list[Episode],
    k: int,
    stride: int = 1,
    quantized: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Post-head action embeddings for every (t, t+k) pair of every episode.

    Returns (embeddings, integer labels, class names, episode ids); labels
    index the sorted unique ground-truth motion classes.
    """
    lam.eval()
    class_names = sorted({ep.gt_motion_class for ep in episodes if ep.gt_motion_class})
    name_to_id = {n: i for i, n in enumerate(class_names)}
    embs, labels, ep_ids = [], [], []
    for ep in episodes:
        if ep.gt_motion_class is None or len(ep) <= k:
            continue
        starts = list(range(0, len(ep) - k, stride))
        firsts = frames_to_tensor([ep.frames[t] for t in starts])
        seconds = frames_to_tensor([ep.frames[t + k] for t in starts])
        z = lam.action_embedding(firsts, seconds, quantized=quantized)
        embs.append(z.numpy())
        labels.extend([name_to_id[ep.gt_motion_class]] * len(starts))
        ep_ids.extend([ep.episode_id] * len(starts))
    return np.concatenate(embs, axis=0), np.asarray(labels), class_names, ep_ids


# -- clustering --------------------------------------------------------------


def purity_from_assignments(cluster_ids: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose cluster's majority class matches their own."""
    total = 0
    for c in np.unique(cluster_ids):
        members = labels[cluster_ids == c]
        counts = np.bincount(members)
        total += int(counts.max())
    return total / len(labels)


def cluster_metrics(
    embeddings: np.ndarray, labels: np.ndarray, seed: int = 0
) -> tuple[float, float, np.ndarray]:
    """k-means purity (k = #classes, 10 restarts) and silhouette over L2-
    normalized embeddings. Returns (purity, silhouette, confusion) where
    confusion[c, y] counts samples of class y in cluster c."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ValueError("cluster metrics need >= 2 classes with >= 2 samples each")
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    x = embeddings / np.maximum(norms, 1e-12)
    km = KMeans(n_clusters=len(classes), n_init=10, random_state=seed).fit(x)
    purity = purity_from_assignments(km.labels_, labels)
    sil = float(silhouette_score(x, labels, metric="euclidean"))
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    for c, y in zip(km.labels_, labels):
        confusion[c, y] += 1
    return purity, sil, confusion


# -- codebook usage -----------------------------------------------------------


@dataclass
class UsageStats:
    counts: list[int]
    entropy: float  # nats
    perplexity: float

    @property
    def collapsed(self) -> bool:
        return self.perplexity <= COLLAPSE_PERPLEXITY


def codebook_usage(indices, codebook_size: int) -> UsageStats:
    flat = np.asarray(indices).reshape(-1)
    if flat.size == 0:
        raise ValueError("empty token stream")
    counts = np.bincount(flat, minlength=codebook_size)
    probs = counts / counts.sum()
    nz = probs[probs > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return UsageStats(counts=[int(c) for c in counts], entropy=entropy, perplexity=float(np.exp(entropy)))


# -- shortcut probe ------------------------------------------------------------


@dataclass
class ProbeResult:
    motion_fidelity: float  # MSE(decoded, true future of the context under the source motion)
    leak_distance: float  # MSE(decoded, the source pair's own future frame)
    appearance_leak_score: float  # fidelity / (fidelity + leak_distance), 1.0 = pure copying
    n_probes: int


def shortcut_probe(lam: LatentActionModel, probes: ProbeSet, decode_fn=None) -> ProbeResult:
    """Transplant source tokens onto every context and score the decodes.

    decode_fn(context_tensor, token_indices) -> predicted frame tensor; the
    default uses the model's own decoder. Injectable so degenerate decoders
    (e.g. one that copies the source future regardless of context) can be
    scored by the same harness.
    """
    lam.eval()
    fidelities, leaks = [], []
    for pair, motion in probes.sources:
        first = frames_to_tensor(pair.first)
        second = frames_to_tensor(pair.second)
        tokens = lam.tokens_for_pair(first, second)
        for ctx in probes.contexts:
            if motion not in ctx.futures:
                raise ValueError(f"probe context lacks ground truth for motion '{motion}'")
            ctx_t = frames_to_tensor(ctx.context)
            if decode_fn is None:
                decoded = lam.decode_tokens(ctx_t, tokens)
            else:
                decoded = decode_fn(ctx_t, tokens)
            gt = frames_to_tensor(ctx.futures[motion])
            fidelities.append(float(reconstruction_loss(decoded, gt)))
            leaks.append(float(reconstruction_loss(decoded, second)))
    fid = float(np.mean(fidelities))
    leak = float(np.mean(leaks))
    denom = fid + leak
    score = fid / denom if denom > 0 else 0.0
    return ProbeResult(fid, leak, score, len(fidelities))


# -- embedding export ----------------------------------------------------------


def pca2(x: np.ndarray) -> np.ndarray:
    """First two principal components with a deterministic sign convention."""
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def export_embeddings(
    lam: LatentActionModel,
    episodes: list[Episode],
    out_path,
    k: int,
    projection: str = "none",
    quantized: bool = False,
    stride: int = 1,
) -> Path:
    """Write one row per sampled pair: episode_id, class_id, then the
    embedding columns (or its 2-D PCA projection)."""
    if projection not in ("none", "pca2"):
        raise ValueError(f"unknown projection '{projection}'")
    emb, labels, class_names, ep_ids = collect_action_embeddings(
        lam, episodes, k, stride=stride, quantized=quantized
    )
    data = pca2(emb) if projection == "pca2" else emb
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as fh:
        dims = "\t".join(f"dim{i}" for i in range(data.shape[1]))
        fh.write(f"episode_id\tclass_id\tclass_name\t{dims}\n")
        for ep_id, label, row in zip(ep_ids, labels, data):
            cols = "\t".join(repr(float(v)) for v in row)
            fh.write(f"{ep_id}\t{label}\t{class_names[label]}\t{cols}\n")
    return out_path


# -- report ---------------------------------------------------------------------


@dataclass
class DisentanglementReport:
    purity: float
    silhouette: float
    motion_fidelity_score: float
    appearance_leak_score: float
    leak_distance: float
    codebook_entropy: float
    codebook_perplexity: float
    collapsed: bool
    n_embeddings: int
    n_probes: int
    class_names: list[str] = field(default_factory=list)
    confusion: list[list[int]] = field(default_factory=list)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


def evaluate_lam(
    lam: LatentActionModel,
    episodes: list[Episode],
    probes: ProbeSet,
    k: int,
    seed: int = 0,
    stride: int = 1,
) -> DisentanglementReport:
    """One-stop evaluation used by the CLI and the benchmark."""
    emb, labels, class_names, _ = collect_action_embeddings(lam, episodes, k, stride=stride)
    purity, sil, confusion = cluster_metrics(emb, labels, seed=seed)
    probe = shortcut_probe(lam, probes)

    token_stream = []
    for ep in episodes:
        if len(ep) <= k:
            continue
        starts = list(range(0, len(ep) - k, stride))
        firsts = frames_to_tensor([ep.frames[t] for t in starts])
        seconds = frames_to_tensor([ep.frames[t + k] for t in starts])
        token_stream.append(lam.tokens_for_pair(firsts, seconds).reshape(-1).numpy())
    usage = codebook_usage(np.concatenate(token_stream), lam.cfg.codebook_size)

    return DisentanglementReport(
        purity=purity,
        silhouette=sil,
        motion_fidelity_score=probe.motion_fidelity,
        appearance_leak_score=probe.appearance_leak_score,
        leak_distance=probe.leak_distance,
        codebook_entropy=usage.entropy,
        codebook_perplexity=usage.perplexity,
        collapsed=usage.collapsed,
        n_embeddings=len(labels),
        n_probes=probe.n_probes,
        class_names=class_names,
        confusion=[[int(v) for v in row] for row in confusion],
    )
