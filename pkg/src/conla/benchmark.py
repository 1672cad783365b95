"""Ablation benchmark: train the four contrastive configurations across
seeds on the synthetic world and compare purity, shortcut motion fidelity and
codebook perplexity. Identical seeds produce an identical table.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from conla.config import Config
from conla.data.instructions import label_episodes
from conla.data.synthetic import build_probe_set, generate_dataset
from conla.evaluation import evaluate_lam
from conla.training.lam_trainer import train_lam

# Table rows, in the order they are reported: the full objective, action
# contrast alone, action+visual without the reverse-order augmentation, and
# the reconstruction-only VQ baseline.
ABLATION_CONFIGS = {
    "full": {},
    "action_only": {"disable_visual_contrast": True},
    "action_visual_no_invaug": {"disable_inverse_aug": True},
    "vq_only": {"disable_action_contrast": True, "disable_visual_contrast": True},
}

METRIC_COLUMNS = ("purity", "motion_fidelity", "perplexity", "silhouette")


def prepare_world(config: Config, seed: int, n_train: int, n_eval: int, min_count: int = 1):
    """Per-seed data: labeled training episodes, held-out eval set, probes."""
    world = config.world
    train_eps = generate_dataset(world, n_train, seed=10_000 * (seed + 1))
    eval_eps = generate_dataset(world, n_eval, seed=10_000 * (seed + 1) + 5_000)
    labels = label_episodes(train_eps, min_count=min_count)
    probes = build_probe_set(
        world, eval_eps, k=config.train.frame_interval,
        n_sources=12, n_contexts=6, seed=10_000 * (seed + 1) + 9_000,
    )
    return train_eps, labels, eval_eps, probes


def run_variant(
    name: str,
    config: Config,
    train_eps,
    labels,
    eval_eps,
    probes,
    seed: int,
    out_dir,
) -> dict:
    """Train one ablation variant and evaluate it."""
    variant = copy.deepcopy(config)
    for key, value in ABLATION_CONFIGS[name].items():
        setattr(variant.train, key, value)
    result = train_lam(train_eps, labels, variant, out_dir, seed)
    report = evaluate_lam(
        result["model"], eval_eps, probes, k=variant.train.frame_interval, seed=seed
    )
    return {
        "purity": report.purity,
        "motion_fidelity": report.motion_fidelity_score,
        "perplexity": report.codebook_perplexity,
        "silhouette": report.silhouette,
        "collapsed": report.collapsed,
        "checkpoint": str(result["checkpoint"]),
    }


def run_benchmark(
    config: Config,
    seeds: list[int],
    out_dir,
    n_train: int = 96,
    n_eval: int = 48,
    min_count: int = 1,
) -> dict:
    """Train every (variant, seed) cell and write benchmark.json + a table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: dict[str, dict] = {name: {} for name in ABLATION_CONFIGS}
    for seed in seeds:
        train_eps, labels, eval_eps, probes = prepare_world(config, seed, n_train, n_eval, min_count)
        for name in ABLATION_CONFIGS:
            cell_dir = out_dir / f"{name}_seed{seed}"
            results[name][str(seed)] = run_variant(
                name, config, train_eps, labels, eval_eps, probes, seed, cell_dir
            )
    report = {
        "configs": list(ABLATION_CONFIGS),
        "seeds": [str(s) for s in seeds],
        "results": results,
    }
    (out_dir / "benchmark.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out_dir / "benchmark_table.txt").write_text(format_table(report))
    return report


def format_table(report: dict) -> str:
    """Fixed-width comparison table, one row per configuration."""
    seeds = report["seeds"]
    lines = []
    header = f"{'config':<26}" + "".join(f"{m:>18}" for m in METRIC_COLUMNS)
    lines.append(header)
    lines.append("-" * len(header))
    for name in report["configs"]:
        per_seed = report["results"][name]
        cols = []
        for metric in METRIC_COLUMNS:
            values = [per_seed[s][metric] for s in seeds]
            mean = sum(values) / len(values)
            cols.append(f"{mean:>18.4f}")
        lines.append(f"{name:<26}" + "".join(cols))
    lines.append("")
    lines.append(f"seeds: {', '.join(seeds)} (means over seeds; purity/perplexity higher is "
                 "better, motion_fidelity lower is better)")
    return "\n".join(lines) + "\n"
