"""Single command line entry point.

Subcommands cover the whole pipeline: gen-data, train-lam, label, pretrain,
finetune, eval, benchmark, plus rerun to repeat any stage from its manifest.
Exit codes: 0 success, 1 usage/config error, 2 missing prerequisite, 3
numeric failure. CONLA_THREADS pins the torch thread count for
reproducibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch

import conla
from conla.benchmark import format_table, run_benchmark
from conla.config import Config, WorldConfig
from conla.data.dataset import dataset_hash, load_dataset, load_labels, write_dataset
from conla.data.instructions import label_episodes
from conla.data.synthetic import build_probe_set, generate_dataset
from conla.errors import ConfigError, DataError, MissingArtifactError, NumericError
from conla.evaluation import evaluate_lam, export_embeddings
from conla.manifest import finish_manifest, load_manifest, start_manifest
from conla.model.lam import load_lam_checkpoint
from conla.training.lam_trainer import train_lam
from conla.training.policy import finetune_policy, pretrain_policy
from conla.training.pseudo import load_label_file, pseudo_label, write_label_file


def _resolve_config(config_path: str | None, overrides: list[str] | None) -> Config:
    if config_path:
        if not Path(config_path).exists():
            raise MissingArtifactError(config_path)
        cfg = Config.load(config_path)
    else:
        cfg = Config()
    if overrides:
        cfg.apply_overrides(overrides)
    cfg.validate()
    return cfg


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path)
    return path


# -- stages -----------------------------------------------------------------


def stage_gen_data(
    out_dir,
    config: Config,
    seed: int,
    n_episodes: int,
    min_count: int = 1,
    frame_format: str = "png",
    force: bool = False,
) -> dict:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(
        "gen-data", seed, config.to_dict(), out,
        extra={"episodes": n_episodes, "min_count": min_count, "frame_format": frame_format},
    )
    episodes = generate_dataset(config.world, n_episodes, seed)
    labels = label_episodes(episodes, min_count=min_count)
    write_dataset(episodes, out, labels, frame_format=frame_format)
    (out / "world.json").write_text(
        json.dumps(dataclasses.asdict(config.world), indent=2, sort_keys=True)
    )
    digest = dataset_hash(out)
    finish_manifest(manifest, out, outputs={"dataset": out, "dataset_hash": digest})
    return {"dataset": out, "dataset_hash": digest, "n_episodes": n_episodes}


def stage_train_lam(data_dir, out_dir, config: Config, seed: int, fraction: float = 1.0) -> dict:
    data_dir = _require_dir(data_dir, "dataset")
    config.train.fraction = fraction
    config.validate()
    episodes = list(load_dataset(data_dir, fraction=fraction))
    labels = load_labels(data_dir)
    manifest = start_manifest(
        "train-lam", seed, config.to_dict(), out_dir,
        inputs={"data": data_dir}, extra={"fraction": fraction},
        dataset_hash=dataset_hash(data_dir),
    )
    result = train_lam(episodes, labels, config, out_dir, seed)
    finish_manifest(
        manifest, out_dir,
        outputs={"checkpoint": result["checkpoint"], "metrics": result["metrics"]},
    )
    return result


def stage_label(data_dir, lam_path, out_dir, config: Config, seed: int = 0, stride: int = 1) -> dict:
    data_dir = _require_dir(data_dir, "dataset")
    lam, lam_meta = load_lam_checkpoint(lam_path)
    episodes = list(load_dataset(data_dir))
    manifest = start_manifest(
        "label", seed, config.to_dict(), out_dir,
        inputs={"data": data_dir, "lam": lam_path}, extra={"stride": stride},
        dataset_hash=dataset_hash(data_dir),
    )
    samples = pseudo_label(episodes, lam, k=config.train.frame_interval, stride=stride)
    path = write_label_file(
        samples, out_dir,
        meta={
            "source_dataset": str(data_dir),
            "dataset_hash": dataset_hash(data_dir),
            "lam_checkpoint": str(lam_path),
            "k": config.train.frame_interval,
            "codebook_size": lam.cfg.codebook_size,
            "seq_len": lam.cfg.seq_len,
            "lam_step": lam_meta.get("step"),
        },
    )
    finish_manifest(manifest, out_dir, outputs={"labels": path})
    return {"labels": path, "n_samples": len(samples)}


def stage_pretrain(data_dir, labels_dir, out_dir, config: Config, seed: int) -> dict:
    data_dir = _require_dir(data_dir, "dataset")
    labels_dir = _require_dir(labels_dir, "labels")
    episodes = list(load_dataset(data_dir))
    samples, label_meta = load_label_file(labels_dir, episodes)
    manifest = start_manifest(
        "pretrain", seed, config.to_dict(), out_dir,
        inputs={"data": data_dir, "labels": labels_dir},
        dataset_hash=dataset_hash(data_dir),
    )
    result = pretrain_policy(
        samples, config.policy,
        token_vocab=label_meta["codebook_size"], seq_len=label_meta["seq_len"],
        seed=seed, out_dir=out_dir,
    )
    finish_manifest(
        manifest, out_dir,
        outputs={"checkpoint": result["checkpoint"], "metrics": result["metrics"]},
    )
    return result


def stage_finetune(
    data_dir, out_dir, config: Config, seed: int,
    policy_path=None, target_accuracy: float | None = None,
) -> dict:
    data_dir = _require_dir(data_dir, "dataset")
    if policy_path is not None:
        policy_path = _require_dir(policy_path, "policy checkpoint")
    episodes = list(load_dataset(data_dir))
    manifest = start_manifest(
        "finetune", seed, config.to_dict(), out_dir,
        inputs={"data": data_dir, **({"policy": policy_path} if policy_path else {})},
        extra={"target_accuracy": target_accuracy, "scratch": policy_path is None},
        dataset_hash=dataset_hash(data_dir),
    )
    result = finetune_policy(
        episodes, config.policy, seed, out_dir,
        pretrained_checkpoint=policy_path, target_accuracy=target_accuracy,
    )
    finish_manifest(
        manifest, out_dir,
        outputs={"checkpoint": result["checkpoint"], "metrics": result["metrics"]},
    )
    return result


def stage_eval(
    lam_path, data_dir, out_dir, config: Config, seed: int,
    projection: str = "none", quantized: bool = False,
    n_sources: int = 12, n_contexts: int = 6,
) -> dict:
    data_dir = _require_dir(data_dir, "dataset")
    lam, _ = load_lam_checkpoint(lam_path)
    world_path = Path(data_dir) / "world.json"
    if not world_path.exists():
        raise MissingArtifactError(world_path)
    world = WorldConfig(**json.loads(world_path.read_text()))
    episodes = list(load_dataset(data_dir))
    manifest = start_manifest(
        "eval", seed, config.to_dict(), out_dir,
        inputs={"lam": lam_path, "data": data_dir},
        extra={"projection": projection, "quantized": quantized},
        dataset_hash=dataset_hash(data_dir),
    )
    k = config.train.frame_interval
    probes = build_probe_set(world, episodes, k, n_sources, n_contexts, seed)
    report = evaluate_lam(lam, episodes, probes, k=k, seed=seed)
    out = Path(out_dir)
    report_path = report.to_json(out / "report.json")
    emb_path = export_embeddings(
        lam, episodes, out / "embeddings.tsv", k, projection=projection, quantized=quantized
    )
    finish_manifest(manifest, out_dir, outputs={"report": report_path, "embeddings": emb_path})
    return {"report": report_path, "embeddings": emb_path, "purity": report.purity}


def stage_benchmark(out_dir, config: Config, seeds: list[int], n_train: int, n_eval: int) -> dict:
    manifest = start_manifest(
        "benchmark", seeds[0] if seeds else 0, config.to_dict(), out_dir,
        extra={"seeds": seeds, "n_train": n_train, "n_eval": n_eval},
    )
    report = run_benchmark(config, seeds, out_dir, n_train=n_train, n_eval=n_eval)
    finish_manifest(manifest, out_dir, outputs={"report": str(Path(out_dir) / "benchmark.json")})
    return report


def rerun_from_manifest(manifest_path, out_dir) -> dict:
    """Repeat a stage with the inputs frozen in its manifest."""
    m = load_manifest(manifest_path)
    config = Config.from_dict(m.config)
    config.validate()
    extra = m.extra
    if m.stage == "gen-data":
        return stage_gen_data(
            out_dir, config, m.seed, extra["episodes"], extra["min_count"],
            extra.get("frame_format", "png"), force=True,
        )
    if m.stage == "train-lam":
        return stage_train_lam(m.inputs["data"], out_dir, config, m.seed, extra.get("fraction", 1.0))
    if m.stage == "label":
        return stage_label(m.inputs["data"], m.inputs["lam"], out_dir, config, m.seed, extra.get("stride", 1))
    if m.stage == "pretrain":
        return stage_pretrain(m.inputs["data"], m.inputs["labels"], out_dir, config, m.seed)
    if m.stage == "finetune":
        return stage_finetune(
            m.inputs["data"], out_dir, config, m.seed,
            policy_path=m.inputs.get("policy"), target_accuracy=extra.get("target_accuracy"),
        )
    if m.stage == "eval":
        return stage_eval(
            m.inputs["lam"], m.inputs["data"], out_dir, config, m.seed,
            projection=extra.get("projection", "none"), quantized=extra.get("quantized", False),
        )
    if m.stage == "benchmark":
        return stage_benchmark(
            out_dir, config, extra["seeds"], extra.get("n_train", 96), extra.get("n_eval", 48)
        )
    raise ConfigError(f"manifest has unknown stage '{m.stage}'")


# -- argument plumbing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the documented contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p):
    p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for this stage")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conla", description=__doc__)
    parser.add_argument("--version", action="version", version=f"conla {conla.__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset with labels")
    _add_common(p)
    p.add_argument("--world-config", dest="config_alias", help="alias for --config")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--frame-format", choices=["png", "npy"], default="png")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-lam", help="stage 1: contrastive latent action training")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, choices=[0.1, 0.5, 1.0], default=1.0)
    p.add_argument("--ablate", default="", help="comma list from {action,visual,invaug}")
    p.set_defaults(func=_cmd_train_lam)

    p = sub.add_parser("label", help="stage 2a: pseudo-label a dataset with a trained LAM")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("pretrain", help="stage 2b: train the policy on latent tokens")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="stage 3: map the policy onto discretized actions")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--policy", help="pretrained policy checkpoint (omit with --scratch)")
    p.add_argument("--scratch", action="store_true", help="random-init baseline")
    p.add_argument("--target-acc", type=float, default=None)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="disentanglement report + embedding export")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--projection", choices=["none", "pca2"], default="none")
    p.add_argument("--embedding", choices=["za", "zaq"], default="za")
    p.add_argument("--probe-sources", type=int, default=12)
    p.add_argument("--probe-contexts", type=int, default=6)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("benchmark", help="train all ablation variants across seeds")
    _add_common(p)
    p.add_argument("--seeds", default="0,1,2", help="comma list of seeds")
    p.add_argument("--train-episodes", type=int, default=96)
    p.add_argument("--eval-episodes", type=int, default=48)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("rerun", help="re-run a stage from its run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rerun)
    return parser


def _cmd_gen_data(args):
    config_path = args.config or getattr(args, "config_alias", None)
    config = _resolve_config(config_path, args.overrides)
    result = stage_gen_data(
        args.out, config, args.seed, args.episodes, args.min_count,
        frame_format=args.frame_format, force=args.force,
    )
    print(f"dataset written to {result['dataset']} (hash {result['dataset_hash']})")


def _cmd_train_lam(args):
    config = _resolve_config(args.config, args.overrides)
    flags = {f.strip() for f in args.ablate.split(",") if f.strip()}
    unknown = flags - {"action", "visual", "invaug"}
    if unknown:
        raise ConfigError(f"unknown ablation flags: {sorted(unknown)}")
    config.train.disable_action_contrast = "action" in flags
    config.train.disable_visual_contrast = "visual" in flags
    config.train.disable_inverse_aug = "invaug" in flags
    result = stage_train_lam(args.data, args.out, config, args.seed, fraction=args.fraction)
    print(f"checkpoint: {result['checkpoint']}")


def _cmd_label(args):
    config = _resolve_config(args.config, args.overrides)
    result = stage_label(args.data, args.lam, args.out, config, args.seed, stride=args.stride)
    print(f"wrote {result['n_samples']} samples to {result['labels']}")


def _cmd_pretrain(args):
    config = _resolve_config(args.config, args.overrides)
    result = stage_pretrain(args.data, args.labels, args.out, config, args.seed)
    print(f"checkpoint: {result['checkpoint']} holdout_token_acc={result['holdout_token_acc']}")


def _cmd_finetune(args):
    config = _resolve_config(args.config, args.overrides)
    if args.scratch and args.policy:
        raise ConfigError("--scratch and --policy are mutually exclusive")
    if not args.scratch and not args.policy:
        raise ConfigError("finetune needs --policy CKPT or --scratch")
    result = stage_finetune(
        args.data, args.out, config, args.seed,
        policy_path=None if args.scratch else args.policy,
        target_accuracy=args.target_acc,
    )
    print(f"checkpoint: {result['checkpoint']} holdout_bin_acc={result['holdout_bin_acc']}")


def _cmd_eval(args):
    config = _resolve_config(args.config, args.overrides)
    result = stage_eval(
        args.lam, args.data, args.out, config, args.seed,
        projection=args.projection, quantized=args.embedding == "zaq",
        n_sources=args.probe_sources, n_contexts=args.probe_contexts,
    )
    print(f"report: {result['report']} purity={result['purity']:.4f}")


def _cmd_benchmark(args):
    config = _resolve_config(args.config, args.overrides)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigError("benchmark needs at least one seed")
    report = stage_benchmark(args.out, config, seeds, args.train_episodes, args.eval_episodes)
    print(format_table(report))


def _cmd_rerun(args):
    rerun_from_manifest(args.manifest, args.out)
    print(f"stage re-run into {args.out}")


def main(argv=None) -> int:
    threads = os.environ.get("CONLA_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        args.func(args)
    except MissingArtifactError as exc:
        print(f"conla: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"conla: numeric failure: {exc}", file=sys.stderr)
        if exc.diagnostic:
            print(json.dumps(exc.diagnostic, indent=2), file=sys.stderr)
        return 3
    except (ConfigError, DataError) as exc:
        print(f"conla: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
