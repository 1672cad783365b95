"""Stage-1 training loop: warmup on reconstruction, then add the contrastive
terms.

Per step the loop samples a batch of forward pairs with their action-class
ids, runs the full model, and (after the warmup boundary) additionally
encodes the reverse-order pairs for the visual objective. Ablation flags skip
the corresponding terms entirely, so a run with both contrastive losses
disabled is literally the VQ-only loop.

Everything is driven by two seeded generators (numpy for data, torch for
parameters), which makes runs bit-reproducible under a fixed thread count.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from conla.config import Config
from conla.data.dataset import UNCERTAIN, Episode
from conla.errors import NumericError
from conla.losses import infonce_loss, supervised_contrastive_loss, total_loss
from conla.model.lam import LatentActionModel, frames_to_tensor, reconstruction_loss, save_lam_checkpoint


class PairSampler:
    """Uniform (episode, t) sampling of forward pairs with class-label ids."""

    def __init__(self, episodes: list[Episode], labels: dict[str, int], k: int, rng: np.random.Generator):
        self.episodes = [ep for ep in episodes if len(ep) > k]
        if not self.episodes:
            raise ValueError(f"no episode is long enough for frame interval k={k}")
        self.labels = labels
        self.k = k
        self.rng = rng
        self.uncertain_id = labels.get(UNCERTAIN, -1)

    def label_id(self, ep: Episode) -> int:
        name = ep.action_class if ep.action_class in self.labels else UNCERTAIN
        return self.labels.get(name, self.uncertain_id)

    def sample(self, batch_size: int):
        firsts, seconds, ids = [], [], []
        for _ in range(batch_size):
            ep = self.episodes[int(self.rng.integers(len(self.episodes)))]
            t = int(self.rng.integers(len(ep) - self.k))
            firsts.append(ep.frames[t])
            seconds.append(ep.frames[t + self.k])
            ids.append(self.label_id(ep))
        return (
            frames_to_tensor(firsts),
            frames_to_tensor(seconds),
            torch.tensor(ids, dtype=torch.long),
        )


def _grad_norm(model: torch.nn.Module) -> float:
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def _batch_perplexity(indices: torch.Tensor, codebook_size: int) -> float:
    counts = torch.bincount(indices.reshape(-1), minlength=codebook_size).double()
    probs = counts / counts.sum()
    nz = probs[probs > 0]
    entropy = float(-(nz * nz.log()).sum())
    return math.exp(entropy)


def train_lam(
    episodes: list[Episode],
    labels: dict[str, int],
    config: Config,
    out_dir,
    seed: int,
    step_callback=None,
) -> dict:
    """Run the full stage-1 loop; returns paths plus the trained model.

    step_callback(step, model, record) fires after backward and before the
    optimizer step, so tests can inspect per-step gradients.
    """
    config.validate()
    tc, mc = config.train, config.model
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "lam.npz"

    torch.manual_seed(seed)
    model = LatentActionModel(mc)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=tc.lr, betas=tuple(tc.betas), weight_decay=tc.weight_decay
    )
    sampler = PairSampler(episodes, labels, tc.frame_interval, np.random.default_rng(seed))

    with metrics_path.open("w") as metrics:
        for step in range(tc.steps):
            first, second, label_ids = sampler.sample(tc.batch_size)
            warmup = step < tc.warmup_steps
            source = mc.warmup_decode_from if warmup else mc.decode_from
            try:
                out = model(first, second, decode_source=source)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} at step {step}",
                    diagnostic={"step": step, "l_mse": None, "grad_norm": _grad_norm(model)},
                ) from exc
            recon = reconstruction_loss(out.pred, second)
            vq = out.quant.vq_loss

            action = visual = None
            if not warmup:
                if not tc.disable_action_contrast:
                    anchor_mask = None
                    if tc.exclude_uncertain_anchors and sampler.uncertain_id >= 0:
                        anchor_mask = label_ids != sampler.uncertain_id
                    action = supervised_contrastive_loss(
                        out.z_a, label_ids, tau=tc.tau,
                        reduction=tc.loss_reduction, anchor_mask=anchor_mask,
                    )
                if not tc.disable_visual_contrast:
                    if tc.disable_inverse_aug:
                        z_v_second = model.visual_embedding(first, second)
                    else:
                        z_v_second = model.visual_embedding(second, first)
                    stacked = torch.cat([out.z_v, z_v_second], dim=0)
                    visual = infonce_loss(stacked, tau=tc.tau, reduction=tc.loss_reduction)

            loss = total_loss(
                step, recon, vq, action, visual,
                warmup_steps=tc.warmup_steps,
                lambda_action=tc.lambda_action,
                lambda_visual=tc.lambda_visual,
            )

            record = {
                "step": step,
                "l_mse": float(recon.detach()),
                "l_vq": float(vq.detach()),
            }
            if action is not None:
                record["l_action"] = float(action.detach())
            if visual is not None:
                record["l_visual"] = float(visual.detach())

            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {step}",
                    diagnostic={**record, "grad_norm": _grad_norm(model)},
                )

            optimizer.zero_grad()
            loss.backward()
            record["grad_norm"] = _grad_norm(model)
            record["codebook_usage"] = _batch_perplexity(out.quant.indices, mc.codebook_size)
            if step_callback is not None:
                step_callback(step, model, record)
            optimizer.step()
            metrics.write(json.dumps(record) + "\n")

            if tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
                save_lam_checkpoint(model, out_dir / f"lam_step{step + 1:06d}.npz", step + 1, seed)

    model.eval()
    save_lam_checkpoint(model, ckpt_path, tc.steps, seed)
    return {"checkpoint": ckpt_path, "metrics": metrics_path, "model": model}
