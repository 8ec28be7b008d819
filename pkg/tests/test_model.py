import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from jsqa.errors import ConfigError, DataError
from jsqa.losses import cosine_similarity, mse_loss, nt_xent_loss, nt_xent_per_anchor
from jsqa.model import (
    EncoderConfig,
    ModelConfig,
    ProjectionConfig,
    RegressorConfig,
    count_parameters,
    encoder_forward,
    half_embedding,
    init_params,
    layer_table,
    projection_forward,
    regressor_forward,
    scaled_sigmoid,
)

TOY = EncoderConfig.toy(4)


def brute_nt_xent(z, tau=1.0):
    """Direct transcription of the pairwise loss with explicit loops over every anchor."""
    z = [list(map(float, row)) for row in z]
    n = len(z)

    def sim(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        return dot / max(math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)), 1e-8)

    total = 0.0
    for i in range(n):
        j = i + 1 if i % 2 == 0 else i - 1
        num = math.exp(sim(z[i], z[j]) / tau)
        den = sum(math.exp(sim(z[i], z[k]) / tau) for k in range(n) if k != i)
        total += -math.log(num / den)
    return total / n


def hand_param_count(start=64, kernel=15, with_projection=False):
    """Closed-form count: conv weights + conv bias + batch-norm scale/shift, then dense heads."""
    chans = [start * 2 ** (i // 4) for i in range(16)]
    enc = 0
    c_in = 1
    for c in chans:
        enc += c_in * c * kernel + c + 2 * c
        c_in = c
    e = chans[-1]
    dims = [e, e // 2, e // 4, e // 8, 1]
    reg = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    proj = 0
    if with_projection:
        h = e // 2
        proj = h * (h // 2) + h // 2 + (h // 2) * (h // 4) + h // 4
    return enc, reg, proj


# --- configuration ---------------------------------------------------------


def test_default_config_shape():
    cfg = EncoderConfig()
    assert cfg.num_layers == 16 and cfg.kernel_size == 15
    assert cfg.channel_schedule == (64,) * 4 + (128,) * 4 + (256,) * 4 + (512,) * 4
    assert cfg.embedding_dim == 512 and cfg.half_dim == 256
    assert cfg.stride_schedule == (2, 1) * 8
    assert cfg.receptive_field() == 10711
    assert cfg.output_length(32000) == 125
    assert layer_table(cfg)[-1]["frames"] == 125


def test_channel_change_only_on_block_boundaries():
    with pytest.raises(ConfigError):
        EncoderConfig(channel_schedule=(8, 16) + (16,) * 14)
    with pytest.raises(ConfigError):
        EncoderConfig(kernel_size=14)
    with pytest.raises(ConfigError):
        ProjectionConfig(True, 256, (100, 64))
    with pytest.raises(ConfigError):
        RegressorConfig(512, (256, 128))


def test_narrow_deviation_notes():
    lit = EncoderConfig.narrow()
    assert lit.embedding_dim == 128
    assert any("embedding_dim=128" in n for n in lit.reference_deviations())
    assert any("first block has 64" in n for n in EncoderConfig().reference_deviations())


def test_model_config_roundtrip():
    cfg = ModelConfig.for_encoder(TOY, projection=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.projection.layer_dims == (8, 4)
    assert cfg.regressor.hidden_dims == (16, 8, 4)


# --- parameter accounting ----------------------------------------------------


def test_param_count_matches_hand_formula():
    enc, reg, proj = hand_param_count(with_projection=True)
    assert (enc, reg, proj) == (18_260_160, 172_545, 41_152)
    model = init_params(ModelConfig())
    assert count_parameters(model.encoder) == enc
    assert count_parameters(model.regressor) == reg
    assert count_parameters(model) == 18_432_705
    with_head = init_params(ModelConfig.for_encoder(EncoderConfig(), projection=True))
    assert count_parameters(with_head) == 18_432_705 + 41_152


def test_narrow_count_differs():
    enc, reg, _ = hand_param_count(start=16)
    model = init_params(ModelConfig.for_encoder(EncoderConfig.narrow()))
    assert count_parameters(model.encoder) == enc == 1_143_600
    assert count_parameters(model) == enc + reg


@pytest.mark.filterwarnings("ignore:Initializing zero-element tensors")
def test_zero_layer_config_counts_zero():
    cfg = EncoderConfig(num_layers=0, channel_schedule=(), stride_schedule=())
    model = init_params(ModelConfig(cfg, ProjectionConfig(), RegressorConfig(0, (0, 0, 0))))
    assert count_parameters(model.encoder) == 0
    with pytest.raises(ConfigError):
        model.encoder(torch.zeros(1, 100))


# --- init and encoder --------------------------------------------------------


def test_init_is_deterministic():
    cfg = ModelConfig.for_encoder(TOY, projection=True)
    a = init_params(cfg, seed=3).state_dict()
    b = init_params(cfg, seed=3).state_dict()
    c = init_params(cfg, seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a if a[k].is_floating_point())


def test_init_values():
    model = init_params(ModelConfig.for_encoder(TOY), seed=0)
    conv = model.encoder.convs[5]
    bound = math.sqrt(6 / ((1 + 0.04) * conv.weight[0].numel()))
    assert conv.weight.abs().max() <= bound
    assert not conv.bias.any()
    bn = model.encoder.norms[5]
    assert torch.all(bn.weight == 1) and not bn.bias.any()


def test_encoder_shapes_and_batch_independence():
    model = init_params(ModelConfig.for_encoder(TOY), seed=1)
    rf = TOY.receptive_field()
    gen = torch.Generator().manual_seed(0)
    clip = torch.randn(1, rf + 300, generator=gen)
    others = torch.randn(3, rf + 300, generator=gen)
    # give the running stats something non-trivial first
    encoder_forward(model, torch.cat([clip, others]), mode="train")
    e1 = encoder_forward(model, torch.cat([clip, others[:1]]), mode="eval")[0]
    e2 = encoder_forward(model, torch.cat([others[1:], clip]), mode="eval")[-1]
    assert torch.allclose(e1, e2, atol=1e-6)
    for n in (rf, rf + 1, 2 * rf + 17):
        assert encoder_forward(model, torch.randn(2, n, generator=gen)).shape == (2, TOY.embedding_dim)


def test_encoder_zero_input():
    # zero biases and zero BN shifts propagate zeros through every layer
    model = init_params(ModelConfig.for_encoder(TOY), seed=2)
    out = encoder_forward(model, torch.zeros(2, TOY.receptive_field()))
    assert torch.isfinite(out).all() and not out.any()


def test_encoder_rejects_short_input():
    model = init_params(ModelConfig.for_encoder(TOY))
    with pytest.raises(DataError):
        model.encoder(torch.zeros(1, TOY.receptive_field() - 1))
    with pytest.raises(DataError):
        model.encoder(torch.zeros(TOY.receptive_field()))


# --- half embedding and projection -----------------------------------------------


def test_half_embedding():
    e = torch.ones(512)
    assert torch.equal(half_embedding(e, 512), torch.ones(256))
    x = torch.randn(3, 512)
    assert torch.equal(torch.cat([half_embedding(x), x[:, 256:]], dim=1), x)
    with pytest.raises(DataError):
        half_embedding(torch.ones(511))
    with pytest.raises(DataError):
        half_embedding(torch.ones(256), 512)


def test_half_embedding_gradient_ignores_second_half():
    e = torch.randn(4, 16, dtype=torch.float64, requires_grad=True)
    nt_xent_loss(half_embedding(e)).backward()
    assert not e.grad[:, 8:].any()
    assert e.grad[:, :8].abs().sum() > 0


def test_projection_modes():
    cfg = ModelConfig.for_encoder(EncoderConfig(), projection=True)
    model = init_params(cfg, seed=0)
    h = torch.randn(5, 256)
    a = projection_forward(model, h, "eval")
    b = projection_forward(model, h, "eval")
    assert torch.equal(a, b) and a.shape == (5, 64)
    g1 = torch.Generator().manual_seed(1)
    assert not torch.equal(projection_forward(model, h, "train", g1), a)
    zero = init_params(ModelConfig.for_encoder(EncoderConfig(), projection=True, dropout_rate=0.0), seed=0)
    assert torch.equal(projection_forward(zero, h, "train"), projection_forward(zero, h, "eval"))
    with pytest.raises(ConfigError):
        projection_forward(init_params(ModelConfig.for_encoder(TOY)), torch.randn(1, 16))


# --- regressor -----------------------------------------------------------------


def test_scaled_sigmoid_values():
    assert scaled_sigmoid(torch.tensor(0.0)).item() == 3.0
    assert scaled_sigmoid(torch.tensor(50.0)).item() == pytest.approx(5.0)
    assert scaled_sigmoid(torch.tensor(-50.0)).item() == pytest.approx(1.0)


def test_regressor_bounded():
    model = init_params(ModelConfig(), seed=5)
    with torch.no_grad():
        s = regressor_forward(model, torch.randn(10_000, 512, generator=torch.Generator().manual_seed(0)) * 3)
    assert s.shape == (10_000,)
    assert torch.all(s > 1) and torch.all(s < 5)


def test_regressor_zero_preactivation():
    model = init_params(ModelConfig.for_encoder(TOY), seed=0)
    with torch.no_grad():
        assert model.regressor.pre_activation(torch.zeros(1, 32)).item() == 0.0
        assert regressor_forward(model, torch.zeros(1, 32)).item() == 3.0


# --- cosine similarity and NT-Xent ------------------------------------------------


def test_cosine_similarity_examples():
    a = torch.tensor([1.0, 2.0, -3.0])
    assert cosine_similarity(a, a).item() == pytest.approx(1.0)
    assert cosine_similarity(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 2.0])).item() == 0.0
    assert cosine_similarity(a, -a).item() == pytest.approx(-1.0)
    assert cosine_similarity(torch.zeros(3), a).item() == 0.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_nt_xent_matches_brute_force(n):
    z = torch.randn(2 * n, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(n))
    for tau in (1.0, 0.5):
        assert nt_xent_loss(z, tau).item() == pytest.approx(brute_nt_xent(z.tolist(), tau), abs=1e-6)


def test_nt_xent_identical_batch():
    z = torch.ones(16, 256, dtype=torch.float64)
    assert torch.allclose(nt_xent_per_anchor(z), torch.full((16,), math.log(15), dtype=torch.float64))


def test_nt_xent_orthogonal_negatives():
    # pairs share a basis vector, different pairs are orthogonal
    z = torch.zeros(16, 8, dtype=torch.float64)
    for k in range(8):
        z[2 * k, k] = z[2 * k + 1, k] = 1.0
    assert nt_xent_loss(z).item() == pytest.approx(math.log(1 + 14 / math.e), abs=1e-9)
    assert nt_xent_loss(z).item() == pytest.approx(1.816503, abs=1e-6)


def test_nt_xent_guards():
    with pytest.raises(DataError):
        nt_xent_loss(torch.randn(5, 3))
    with pytest.raises(DataError):
        nt_xent_loss(torch.randn(2, 3))
    with pytest.raises(DataError):
        nt_xent_loss(torch.randn(4, 3), temperature=0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 6), scale=st.floats(1e-3, 1e3), tau=st.floats(0.1, 2.0))
def test_nt_xent_properties(seed, n, scale, tau):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(2 * n, 5, dtype=torch.float64, generator=g)
    loss = nt_xent_loss(z, tau).item()
    assert nt_xent_loss(z * scale, tau).item() == pytest.approx(loss, abs=1e-9)
    perm = torch.randperm(n, generator=g)
    rows = torch.stack([perm * 2, perm * 2 + 1], dim=1).reshape(-1)
    assert nt_xent_loss(z[rows], tau).item() == pytest.approx(loss, abs=1e-9)
    assert torch.all(nt_xent_per_anchor(z, tau) >= math.log(2 * n - 1) - 2 / tau - 1e-12)


# --- MSE and gradients ---------------------------------------------------------


def test_mse_examples():
    t = torch.tensor([1.0, 2.5, 4.0])
    assert mse_loss(t, t).item() == 0.0
    assert mse_loss(t + 1, t).item() == 1.0
    assert mse_loss(torch.tensor([3.0, 1.0]), torch.tensor([1.0, 3.0])).item() == 4.0
    with pytest.raises(DataError):
        mse_loss(torch.tensor([]), torch.tensor([]))
    with pytest.raises(DataError):
        mse_loss(torch.ones(2), torch.ones(3))


def central_diff(f, x, h=1e-4):
    g = np.zeros(x.numel())
    flat = x.detach().clone().reshape(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = f(flat.view_as(x)).item()
        flat[i] = old - h
        down = f(flat.view_as(x)).item()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return g.reshape(tuple(x.shape))


def test_mse_gradient():
    pred = torch.randn(6, dtype=torch.float64, requires_grad=True)
    target = torch.randn(6, dtype=torch.float64)
    mse_loss(pred, target).backward()
    num = central_diff(lambda p: mse_loss(p, target), pred)
    np.testing.assert_allclose(pred.grad.numpy(), num, rtol=1e-4, atol=1e-8)
