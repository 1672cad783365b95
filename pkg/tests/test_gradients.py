"""Full-model gradient verification against central finite differences.

The composed objective (reconstruction + action contrast + visual contrast +
both VQ terms) is checked on a micro configuration in float64. Two details
make the probe well-posed:

* the decoder consumes the continuous pre-quantization tokens, so the decode
  path is differentiable (the hard nearest-neighbor lookup has its own
  straight-through contract tests);
* the stop-gradient arguments inside the VQ terms (the detached tokens in
  the codebook loss, the detached codes in the commitment loss) are
  constants of the objective by construction, so the finite-difference
  evaluation holds them fixed at their unperturbed values. The frozen form
  is verified to reproduce the live loss value and its autograd gradients
  exactly before the sweep runs.
"""

import numpy as np
import pytest
import torch

from conla.losses import infonce_loss, supervised_contrastive_loss, total_loss
from conla.model.lam import LatentActionModel, reconstruction_loss, split_latent

from conftest import micro_model

TAU = 0.2
H = 1e-5


def _build(detach_heads=False, seed=0):
    torch.manual_seed(seed)
    cfg = micro_model(decode_from="pre_quant", detach_heads_from_recon=detach_heads)
    model = LatentActionModel(cfg).double()
    rng = np.random.default_rng(seed + 1)
    first = torch.from_numpy(rng.random((4, 3, 8, 8)))
    second = torch.from_numpy(rng.random((4, 3, 8, 8)))
    labels = torch.tensor([0, 0, 1, 1])
    return model, first, second, labels


def _live_loss(model, first, second, labels):
    """The training composition exactly as the trainer builds it."""
    out = model(first, second)
    recon = reconstruction_loss(out.pred, second)
    vq = out.quant.vq_loss
    action = supervised_contrastive_loss(out.z_a, labels, tau=TAU)
    z_v_inv = model.visual_embedding(second, first)
    visual = infonce_loss(torch.cat([out.z_v, z_v_inv], dim=0), tau=TAU)
    return total_loss(10, recon, vq, action, visual, warmup_steps=0)


def _frozen_loss(model, first, second, labels, frozen_tokens, frozen_codes, frozen_idx):
    """Same objective with the stop-gradient arguments pinned as constants."""
    z = model.encode(first, second)
    z_a_prime, z_v_prime = split_latent(z)
    z_a, z_a_raw = model.action_head(z_a_prime)
    z_v, _ = model.visual_head(z_v_prime)
    pre_quant = model.action_tokens(z_a_raw)

    codes = model.quantizer.codebook[frozen_idx]
    codebook_loss = (frozen_tokens - codes).pow(2).mean()
    commitment = model.quantizer.beta * (pre_quant - frozen_codes).pow(2).mean()

    pred = model.decoder(first, pre_quant.reshape(pre_quant.shape[0], -1))
    recon = reconstruction_loss(pred, second)
    action = supervised_contrastive_loss(z_a, labels, tau=TAU)
    z_v_inv = model.visual_embedding(second, first)
    visual = infonce_loss(torch.cat([z_v, z_v_inv], dim=0), tau=TAU)
    return total_loss(10, recon, codebook_loss + commitment, action, visual, warmup_steps=0)


def _assignment_margin(model, first, second):
    """Gap between best and second-best code distance over all tokens."""
    with torch.no_grad():
        out = model(first, second)
        diffs = out.pre_quant_tokens.unsqueeze(-2) - model.quantizer.codebook
        dists = diffs.pow(2).sum(-1)
        ordered = torch.sort(dists, dim=-1).values
        return float((ordered[..., 1] - ordered[..., 0]).min())


def test_full_model_gradients_match_finite_differences():
    model, first, second, labels = _build()
    # finite differences are only valid away from assignment flips
    assert _assignment_margin(model, first, second) > 1e-3

    with torch.no_grad():
        out0 = model(first, second)
        frozen_tokens = out0.pre_quant_tokens.clone()
        frozen_idx = out0.quant.indices.clone()
        frozen_codes = model.quantizer.codebook[frozen_idx].clone()

    live = _live_loss(model, first, second, labels)
    model.zero_grad()
    live.backward()
    live_grads = {n: p.grad.clone() for n, p in model.named_parameters()}

    frozen = _frozen_loss(model, first, second, labels, frozen_tokens, frozen_codes, frozen_idx)
    assert float(frozen.detach()) == pytest.approx(float(live.detach()), rel=1e-12)
    model.zero_grad()
    frozen.backward()
    for name, param in model.named_parameters():
        assert torch.allclose(param.grad, live_grads[name], atol=1e-12), name

    worst = 0.0
    checked = 0
    for name, param in model.named_parameters():
        grad_flat = live_grads[name].view(-1)
        flat = param.data.view(-1)
        for j in range(flat.numel()):
            orig = float(flat[j])
            with torch.no_grad():
                flat[j] = orig + H
                up = float(_frozen_loss(model, first, second, labels,
                                        frozen_tokens, frozen_codes, frozen_idx))
                flat[j] = orig - H
                down = float(_frozen_loss(model, first, second, labels,
                                          frozen_tokens, frozen_codes, frozen_idx))
                flat[j] = orig
            fd = (up - down) / (2 * H)
            an = float(grad_flat[j])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
            checked += 1
            assert rel < 1e-4, f"{name}[{j}]: fd={fd:.3e} autograd={an:.3e} rel={rel:.3e}"
    assert checked > 1000  # the sweep really covered the whole model
    print(f"\nchecked {checked} parameter elements, worst relative error {worst:.3e}")


def test_warmup_composition_gives_contrastive_heads_zero_gradient():
    """Warmup loss (reconstruction + VQ) with heads detached from the
    reconstruction path: both contrastive heads receive exactly zero."""
    model, first, second, labels = _build(detach_heads=True)
    out = model(first, second)
    loss = total_loss(
        0, reconstruction_loss(out.pred, second), out.quant.vq_loss,
        None, None, warmup_steps=100,
    )
    model.zero_grad()
    loss.backward()
    for name, param in model.named_parameters():
        if name.startswith(("action_head", "visual_head")):
            assert param.grad is None or not param.grad.any(), name
        if name.startswith("encoder"):
            # with the heads detached the encoder has no path into the loss
            assert param.grad is None or not param.grad.any(), name


def test_default_config_action_head_receives_reconstruction_gradient():
    """Without the detach switch the action head sits in the decode path and
    is trained by reconstruction alone during warmup."""
    model, first, second, labels = _build(detach_heads=False)
    out = model(first, second)
    loss = reconstruction_loss(out.pred, second) + out.quant.vq_loss
    model.zero_grad()
    loss.backward()
    action_grads = [p.grad for n, p in model.named_parameters() if n.startswith("action_head")]
    assert any(g is not None and g.abs().sum() > 0 for g in action_grads)
    visual_grads = [p.grad for n, p in model.named_parameters() if n.startswith("visual_head")]
    assert all(g is None or not g.any() for g in visual_grads)
