import math

import numpy as np
import pytest
import torch

from conla.errors import ConfigError
from conla.losses import infonce_loss, supervised_contrastive_loss, total_loss


# -- independent double-loop references (kept deliberately naive) ------------


def supcon_reference(z, labels, tau, reduction="mean"):
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    total = 0.0
    contributing = 0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        contributing += 1
        inner = 0.0
        for p in positives:
            denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in range(n) if a != i)
            inner += math.log(math.exp(float(z[i] @ z[p]) / tau) / denom)
        total += -inner / len(positives)
    if reduction == "mean" and contributing > 0:
        total /= contributing
    return total


def infonce_reference(z, tau, reduction="mean"):
    z = np.asarray(z, dtype=np.float64)
    rows = len(z)
    n = rows // 2
    total = 0.0
    for i in range(rows):
        j = (i + n) % rows
        denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in range(rows) if a != i)
        total += -math.log(math.exp(float(z[i] @ z[j]) / tau) / denom)
    if reduction == "mean":
        total /= rows
    return total


def random_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- exact zero cases ----------------------------------------------------------


def test_supcon_two_samples_same_class_is_exactly_zero():
    rng = np.random.default_rng(0)
    for _ in range(10):
        z = torch.from_numpy(random_rows(rng, 2, 6))
        labels = torch.tensor([0, 0])
        assert float(supervised_contrastive_loss(z, labels, tau=0.07)) == 0.0


def test_infonce_single_pair_is_exactly_zero():
    rng = np.random.default_rng(1)
    for _ in range(10):
        z = torch.from_numpy(random_rows(rng, 2, 6))
        assert float(infonce_loss(z, tau=0.07)) == 0.0


# -- closed forms ----------------------------------------------------------------


def test_supcon_one_hot_closed_form():
    tau = 0.07
    z = torch.eye(3)[[0, 0, 1]].double()
    labels = torch.tensor([0, 0, 1])
    expected = 2 * math.log(1 + math.exp(-1 / tau))
    got = float(supervised_contrastive_loss(z, labels, tau=tau, reduction="sum"))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)
    assert got == pytest.approx(supcon_reference(z.numpy(), [0, 0, 1], tau, "sum"), rel=1e-9)


def test_infonce_orthogonal_closed_form():
    tau = 0.07
    z = torch.eye(2)[[0, 1, 0, 1]].double()
    expected = 4 * math.log(1 + 2 * math.exp(-1 / tau))
    got = float(infonce_loss(z, tau=tau, reduction="sum"))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)
    assert got == pytest.approx(infonce_reference(z.numpy(), tau, "sum"), rel=1e-9)


# -- oracle equivalence over random batches ---------------------------------------


@pytest.mark.parametrize("reduction", ["sum", "mean"])
def test_supcon_matches_double_loop_oracle(reduction):
    rng = np.random.default_rng(42)
    for trial in range(100):
        n = int(rng.integers(2, 17))
        d = int(rng.integers(2, 9))
        tau = float(rng.choice([0.07, 0.5, 1.0]))
        z = random_rows(rng, n, d)
        labels = rng.integers(0, max(2, n // 2), size=n)
        expected = supcon_reference(z, labels, tau, reduction)
        got = float(
            supervised_contrastive_loss(
                torch.from_numpy(z), torch.from_numpy(labels), tau=tau, reduction=reduction
            )
        )
        rel = abs(got - expected) / max(abs(expected), 1e-12)
        assert rel < 1e-6 or abs(got - expected) < 1e-9


@pytest.mark.parametrize("reduction", ["sum", "mean"])
def test_infonce_matches_double_loop_oracle(reduction):
    rng = np.random.default_rng(43)
    for trial in range(100):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(2, 9))
        tau = float(rng.choice([0.07, 0.5, 1.0]))
        z = random_rows(rng, 2 * n, d)
        expected = infonce_reference(z, tau, reduction)
        got = float(infonce_loss(torch.from_numpy(z), tau=tau, reduction=reduction))
        rel = abs(got - expected) / max(abs(expected), 1e-12)
        assert rel < 1e-6 or abs(got - expected) < 1e-9


# -- invariances --------------------------------------------------------------------


def test_supcon_permutation_invariant():
    rng = np.random.default_rng(7)
    z = torch.from_numpy(random_rows(rng, 10, 5))
    labels = torch.from_numpy(rng.integers(0, 3, size=10))
    base = float(supervised_contrastive_loss(z, labels, tau=0.07, reduction="sum"))
    for _ in range(10):
        perm = torch.from_numpy(rng.permutation(10))
        permuted = float(
            supervised_contrastive_loss(z[perm], labels[perm], tau=0.07, reduction="sum")
        )
        assert permuted == pytest.approx(base, abs=1e-9)


def test_infonce_half_swap_invariant():
    rng = np.random.default_rng(8)
    a = torch.from_numpy(random_rows(rng, 5, 6))
    b = torch.from_numpy(random_rows(rng, 5, 6))
    fwd = float(infonce_loss(torch.cat([a, b]), tau=0.07, reduction="sum"))
    swp = float(infonce_loss(torch.cat([b, a]), tau=0.07, reduction="sum"))
    assert swp == pytest.approx(fwd, abs=1e-9)


# -- bounds and stability ---------------------------------------------------------------


def test_infonce_nonnegative():
    rng = np.random.default_rng(9)
    for _ in range(50):
        z = torch.from_numpy(random_rows(rng, 2 * int(rng.integers(1, 9)), 4))
        assert float(infonce_loss(z, tau=0.5)) >= 0.0


def test_supcon_nonnegative_when_positives_in_denominator():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        z = torch.from_numpy(random_rows(rng, n, 4))
        labels = torch.from_numpy(rng.integers(0, 3, size=n))
        assert float(supervised_contrastive_loss(z, labels, tau=0.5)) >= 0.0


def test_stability_at_low_temperature_high_dim():
    """tau=0.07 with duplicated rows injects exp(1/tau) ~ e^14.3 terms."""
    rng = np.random.default_rng(11)
    base = random_rows(rng, 8, 1024).astype(np.float32)
    z = torch.from_numpy(np.concatenate([base, base], axis=0))
    labels = torch.from_numpy(np.tile(np.arange(8), 2))
    a = supervised_contrastive_loss(z, labels, tau=0.07)
    v = infonce_loss(z, tau=0.07)
    assert torch.isfinite(a) and torch.isfinite(v)


def test_anchors_without_positives_contribute_zero():
    # all labels distinct: every anchor lacks positives -> loss is exactly 0
    rng = np.random.default_rng(12)
    z = torch.from_numpy(random_rows(rng, 4, 4))
    labels = torch.tensor([0, 1, 2, 3])
    assert float(supervised_contrastive_loss(z, labels, tau=0.07)) == 0.0


def test_anchor_mask_excludes_anchors_but_keeps_them_as_context():
    rng = np.random.default_rng(13)
    z = random_rows(rng, 6, 4)
    labels = np.array([0, 0, 1, 1, 2, 2])
    mask = torch.tensor([True, True, True, True, False, False])
    got = float(
        supervised_contrastive_loss(
            torch.from_numpy(z), torch.from_numpy(labels), tau=0.5, reduction="sum",
            anchor_mask=mask,
        )
    )
    # reference: loop over unmasked anchors only, denominators over everyone
    expected = 0.0
    for i in range(4):
        positives = [p for p in range(6) if p != i and labels[p] == labels[i]]
        inner = 0.0
        for p in positives:
            denom = sum(math.exp(float(z[i] @ z[a]) / 0.5) for a in range(6) if a != i)
            inner += math.log(math.exp(float(z[i] @ z[p]) / 0.5) / denom)
        expected += -inner / len(positives)
    assert got == pytest.approx(expected, rel=1e-9)


# -- input validation ---------------------------------------------------------------------


def test_bad_temperature_is_config_error():
    z = torch.eye(2)
    with pytest.raises(ConfigError):
        supervised_contrastive_loss(z, torch.tensor([0, 0]), tau=0.0)
    with pytest.raises(ConfigError):
        infonce_loss(z, tau=-1.0)


def test_single_row_is_input_error():
    with pytest.raises(ValueError):
        supervised_contrastive_loss(torch.eye(2)[:1], torch.tensor([0]), tau=0.1)


def test_odd_rows_is_input_error():
    with pytest.raises(ValueError):
        infonce_loss(torch.eye(3), tau=0.1)


# -- total loss gating -----------------------------------------------------------------------


def test_total_loss_warmup_excludes_contrastive():
    assert total_loss(0, 0.3, 0.0, 2.0, 1.5, warmup_steps=5000) == pytest.approx(0.3)
    assert total_loss(4999, 0.3, 0.1, 2.0, 1.5, warmup_steps=5000) == pytest.approx(0.4)


def test_total_loss_boundary_flips_at_warmup_steps():
    assert total_loss(5000, 0.3, 0.0, 2.0, 1.5, warmup_steps=5000) == pytest.approx(3.8)
    assert total_loss(5001, 0.3, 0.0, 2.0, 1.5, warmup_steps=5000) == pytest.approx(3.8)


def test_total_loss_unit_weights_and_lambdas():
    got = total_loss(10, 1.0, 0.5, 2.0, 3.0, warmup_steps=0, lambda_action=0.5, lambda_visual=2.0)
    assert got == pytest.approx(1.0 + 0.5 + 1.0 + 6.0)


def test_total_loss_gate_gradient_by_finite_differences():
    """d(total)/d(action term) is 0 before the boundary and lambda after."""
    h = 1e-3
    for step, expected in [(0, 0.0), (499, 0.0), (500, 1.0), (501, 1.0)]:
        up = total_loss(step, 0.3, 0.1, 2.0 + h, 1.5, warmup_steps=500)
        down = total_loss(step, 0.3, 0.1, 2.0 - h, 1.5, warmup_steps=500)
        assert (up - down) / (2 * h) == pytest.approx(expected, abs=1e-9)


def test_total_loss_zero_contrastive_gradient_during_warmup_torch():
    action = torch.tensor(2.0, requires_grad=True)
    visual = torch.tensor(1.5, requires_grad=True)
    recon = torch.tensor(0.3, requires_grad=True)
    loss = total_loss(3, recon, torch.tensor(0.0), action, visual, warmup_steps=10)
    loss.backward()
    assert action.grad is None
    assert visual.grad is None
    assert float(recon.grad) == 1.0
