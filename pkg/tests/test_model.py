import numpy as np
import pytest
import torch

from conla.errors import ConfigError
from conla.model.lam import (
    LatentActionModel,
    frames_to_tensor,
    load_lam_checkpoint,
    reconstruction_loss,
    save_lam_checkpoint,
    split_latent,
)

from conftest import micro_model, small_model


@pytest.fixture
def model():
    torch.manual_seed(0)
    m = LatentActionModel(small_model())
    m.eval()
    return m


def _pair_batch(n, size=32, seed=0):
    rng = np.random.default_rng(seed)
    first = rng.random((n, size, size, 3), dtype=np.float32)
    second = rng.random((n, size, size, 3), dtype=np.float32)
    return frames_to_tensor(first), frames_to_tensor(second)


def test_encode_deterministic(model):
    first, second = _pair_batch(4)
    z1 = model.encode(first, second)
    z2 = model.encode(first, second)
    assert torch.equal(z1, z2)


def test_encode_output_dim_matches_config(model):
    first, second = _pair_batch(2)
    assert model.encode(first, second).shape == (2, model.cfg.d)


def test_encode_batch_composition_independent(model):
    first, second = _pair_batch(8)
    batched = model.encode(first, second)
    for i in range(8):
        alone = model.encode(first[i : i + 1], second[i : i + 1])
        assert torch.allclose(batched[i], alone[0], atol=1e-6)


def test_encode_shape_mismatch_is_input_error(model):
    bad = torch.zeros(1, 3, 16, 16)
    good = torch.zeros(1, 3, 32, 32)
    with pytest.raises(ValueError):
        model.encode(bad, good)


def test_split_halves_and_roundtrip():
    z = torch.tensor([[1.0, 2.0, 3.0, 4.0]])
    a, v = split_latent(z)
    assert a.tolist() == [[1.0, 2.0]]
    assert v.tolist() == [[3.0, 4.0]]
    z2 = torch.randn(5, 32)
    a2, v2 = split_latent(z2)
    assert torch.equal(torch.cat([a2, v2], dim=-1), z2)


def test_split_odd_dim_is_config_error():
    with pytest.raises(ConfigError):
        split_latent(torch.zeros(1, 7))


def test_heads_normalize_and_keep_raw(model):
    x = torch.randn(16, model.cfg.d // 2)
    normed, raw = model.action_head(x)
    assert torch.allclose(normed.norm(dim=-1), torch.ones(16), atol=1e-6)
    assert raw.shape == (16, model.cfg.d)
    # normalization is a rescale of raw, not a different vector
    assert torch.allclose(normed * raw.norm(dim=-1, keepdim=True), raw, atol=1e-5)


def test_visual_head_weight_sharing(model):
    """Forward and reversed halves run through the same parameters: identical
    inputs give identical outputs."""
    x = torch.randn(4, model.cfg.d // 2)
    out1, _ = model.visual_head(x)
    out2, _ = model.visual_head(x.clone())
    assert torch.equal(out1, out2)


def test_decoder_output_shape_and_range(model):
    first, second = _pair_batch(3)
    out = model(first, second)
    assert out.pred.shape == first.shape
    assert float(out.pred.min()) >= 0.0
    assert float(out.pred.max()) <= 1.0


def test_forward_deterministic(model):
    first, second = _pair_batch(2)
    a = model(first, second)
    b = model(first, second)
    assert torch.equal(a.pred, b.pred)
    assert torch.equal(a.quant.indices, b.quant.indices)


def test_decode_tokens_deterministic(model):
    first, _ = _pair_batch(1)
    indices = torch.tensor([[0, 1, 2, 3]])
    p1 = model.decode_tokens(first, indices)
    p2 = model.decode_tokens(first, indices)
    assert torch.equal(p1, p2)
    assert p1.shape == first.shape


def test_reconstruction_loss_analytic():
    zeros = torch.zeros(1, 3, 8, 8)
    ones = torch.ones(1, 3, 8, 8)
    assert float(reconstruction_loss(zeros, zeros)) == 0.0
    assert float(reconstruction_loss(zeros, ones)) == pytest.approx(1.0)


def test_reconstruction_loss_matches_double_loop():
    rng = np.random.default_rng(1)
    a = rng.random((2, 3, 4, 4)).astype(np.float64)
    b = rng.random((2, 3, 4, 4)).astype(np.float64)
    naive = 0.0
    for i in np.ndindex(a.shape):
        naive += (a[i] - b[i]) ** 2
    naive /= a.size
    got = float(reconstruction_loss(torch.from_numpy(a), torch.from_numpy(b)))
    assert abs(got - naive) < 1e-9


def test_reconstruction_loss_shape_mismatch():
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 4, 4))


def test_checkpoint_roundtrip_bit_exact(model, tmp_path):
    first, second = _pair_batch(2, seed=5)
    before = model(first, second)
    path = save_lam_checkpoint(model, tmp_path / "lam.npz", step=17, seed=3)
    loaded, meta = load_lam_checkpoint(path)
    after = loaded(first, second)
    assert torch.equal(before.pred, after.pred)
    assert torch.equal(before.z, after.z)
    assert torch.equal(before.quant.indices, after.quant.indices)
    assert meta["step"] == 17 and meta["seed"] == 3
    assert meta["model_config"]["d"] == model.cfg.d


def test_checkpoint_bytes_deterministic(model, tmp_path):
    p1 = save_lam_checkpoint(model, tmp_path / "a.npz", step=1, seed=0)
    p2 = save_lam_checkpoint(model, tmp_path / "b.npz", step=1, seed=0)
    assert p1.read_bytes() == p2.read_bytes()


def test_micro_config_shapes():
    torch.manual_seed(0)
    m = LatentActionModel(micro_model())
    first = torch.rand(2, 3, 8, 8)
    second = torch.rand(2, 3, 8, 8)
    out = m(first, second)
    assert out.z.shape == (2, 8)
    assert out.quant.indices.shape == (2, 2)
    assert out.pred.shape == (2, 3, 8, 8)
