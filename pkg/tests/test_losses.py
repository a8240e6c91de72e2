import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from casgan.errors import ConfigError, ShapeError
from casgan.losses import (
    PRESET_NAMES,
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    combined_generator_loss,
    content_loss,
    gram_matrix,
    l1_loss,
    l2_loss,
    loss_preset,
    perceptual_component,
    perceptual_loss,
    style_loss,
    tv_loss,
)

from oracles import (
    fd_gradient,
    loop_content,
    loop_gram,
    loop_l1,
    loop_l2,
    loop_perceptual,
    loop_style,
    loop_tv,
    max_relative_error,
)


def rand(shape, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=gen, dtype=dtype) * 2 - 1


def rand_stacks(seed=0, layers=((2, 8, 8), (4, 4, 4), (8, 2, 2))):
    gen = torch.Generator().manual_seed(seed)
    stacks = []
    for _ in range(2):
        stacks.append([torch.rand(1, c, h, w, generator=gen, dtype=torch.float64) for c, h, w in layers])
    return stacks


# ---------------------------------------------------------------- adversarial

def test_adversarial_discriminator_half_half():
    half = torch.full((1, 1, 4, 4), 0.5)
    value = adversarial_loss_discriminator(half, half)
    assert float(value) == pytest.approx(2 * math.log(0.5), abs=1e-6)  # -1.3863


def test_adversarial_discriminator_optimum_approached():
    good = adversarial_loss_discriminator(torch.full((1, 1, 2, 2), 0.999), torch.full((1, 1, 2, 2), 0.001))
    bad = adversarial_loss_discriminator(torch.full((1, 1, 2, 2), 0.5), torch.full((1, 1, 2, 2), 0.5))
    assert float(good) > float(bad)
    assert float(good) < 0.0  # approaches 0 from below


def test_adversarial_discriminator_mean_linearity():
    uniform = torch.full((1, 1, 4, 4), 0.3)
    gen = torch.Generator().manual_seed(0)
    varied = torch.rand(1, 1, 4, 4, generator=gen) * 0.2 + 0.2
    varied = varied - varied.mean() + 0.3
    # same mean probability map but per-patch structure: equal real-term loss
    a = adversarial_loss_discriminator(uniform, uniform)
    b = adversarial_loss_discriminator(uniform, uniform.flip(-1))
    assert float(a) == pytest.approx(float(b), abs=1e-7)


def test_adversarial_generator_values():
    assert float(adversarial_loss_generator(torch.full((1, 1, 3, 3), 0.5))) == pytest.approx(
        -math.log(0.5), abs=1e-6
    )  # 0.6931
    assert float(adversarial_loss_generator(torch.full((1, 1, 3, 3), 0.9999999))) == pytest.approx(
        0.0, abs=1e-5
    )


def test_adversarial_generator_gradient_sign():
    probs = torch.tensor([[[[0.2, 0.5], [0.7, 0.9]]]], requires_grad=True)
    adversarial_loss_generator(probs).backward()
    assert torch.all(probs.grad < 0)  # -log is decreasing everywhere


def test_adversarial_clamping_is_safe():
    zero = torch.zeros(1, 1, 2, 2)
    one = torch.ones(1, 1, 2, 2)
    assert math.isfinite(float(adversarial_loss_discriminator(zero, one)))
    assert math.isfinite(float(adversarial_loss_generator(zero)))


# ---------------------------------------------------------------- pixel terms

def test_l1_basic():
    x = rand((1, 1, 4, 4), seed=1)
    assert float(l1_loss(x, x)) == 0.0
    assert float(l1_loss(x + 0.5, x)) == pytest.approx(0.5, abs=1e-12)


def test_l1_l2_match_loop_oracle():
    a, b = rand((1, 1, 8, 8), seed=2), rand((1, 1, 8, 8), seed=3)
    assert float(l1_loss(a, b)) == pytest.approx(loop_l1(a, b), abs=1e-10)
    assert float(l2_loss(a, b)) == pytest.approx(loop_l2(a, b), abs=1e-10)


def test_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        l1_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 2, 2))


def test_tv_constant_and_ramp():
    assert float(tv_loss(torch.full((1, 1, 5, 5), 0.37))) == 0.0
    ramp = torch.tensor([[[[0.0, 1.0, 2.0]]]])
    # single row: two forward differences of 1, no vertical terms
    assert float(tv_loss(ramp)) == pytest.approx(1.0, abs=1e-12)


def test_tv_matches_loop_oracle():
    img = rand((1, 1, 8, 8), seed=4)
    assert float(tv_loss(img)) == pytest.approx(loop_tv(img), abs=1e-10)


# ---------------------------------------------------------------- perceptual

def test_perceptual_component_values():
    a = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    b = a.clone()
    b[0, 0, 0, 0] = 1.0
    assert float(perceptual_component(b, a)) == pytest.approx(0.25, abs=1e-12)  # 1/(2*2*1)
    assert float(perceptual_component(a, a)) == 0.0


def test_perceptual_component_is_raw_l1_at_index_zero():
    a, b = rand((1, 2, 6, 6), seed=5), rand((1, 2, 6, 6), seed=6)
    assert float(perceptual_component(a, b)) == pytest.approx(float(l1_loss(a, b)), abs=1e-12)


def test_perceptual_loss_reduces_to_pixel_mae():
    fake, real = rand_stacks(seed=7)
    value = perceptual_loss(fake, real, (1.0, 0.0, 0.0))
    assert float(value) == pytest.approx(float(l1_loss(fake[0], real[0])), abs=1e-12)


def test_perceptual_loss_annihilation_and_identity():
    fake, real = rand_stacks(seed=8)
    assert float(perceptual_loss(fake, real, (0.0, 0.0, 0.0))) == 0.0
    assert float(perceptual_loss(fake, fake, (1.0, 1.0, 1.0))) == 0.0


def test_perceptual_loss_matches_loop_oracle():
    fake, real = rand_stacks(seed=9)
    lam = (1.0, 0.5, 2.0)
    assert float(perceptual_loss(fake, real, lam)) == pytest.approx(
        loop_perceptual(fake, real, lam), abs=1e-10
    )


def test_perceptual_loss_length_mismatch():
    fake, real = rand_stacks(seed=10)
    with pytest.raises(ShapeError):
        perceptual_loss(fake[:2], real, (1.0, 1.0, 1.0))
    with pytest.raises(ConfigError):
        perceptual_loss(fake, real, (1.0, 1.0))


# ---------------------------------------------------------------- gram/style

def test_gram_hand_examples():
    # 1x1 spatial, 2 channels, values (2, 0): normalizer 1/(1*1*2)
    v = torch.tensor([[[2.0]], [[0.0]]])
    assert torch.allclose(gram_matrix(v), torch.tensor([[2.0, 0.0], [0.0, 0.0]]))
    ones = torch.ones(3, 2, 2)  # (C,H,W): every entry (2*2)/(2*2*3) = 1/3
    assert torch.allclose(gram_matrix(ones), torch.full((3, 3), 1.0 / 3.0))


def test_gram_matches_loop_oracle():
    v = rand((4, 5, 6), seed=11)
    ours = gram_matrix(v).numpy()
    assert abs(ours - loop_gram(v)).max() <= 1e-10


def test_gram_symmetric_psd():
    v = rand((6, 4, 4), seed=12)
    g = gram_matrix(v)
    assert torch.allclose(g, g.t(), atol=1e-12)
    eigvals = torch.linalg.eigvalsh(g)
    assert float(eigvals.min()) >= -1e-9


def test_style_single_block_hand_value():
    # d=1 features with Gram difference 2 -> (1/4)*2^2 = 1.0
    fa = torch.full((1, 1, 1, 1), 2.0, dtype=torch.float64)  # gram = 4
    fb = torch.full((1, 1, 1, 1), math.sqrt(2.0), dtype=torch.float64)  # gram = 2
    assert float(style_loss([fa], [fb], (1.0,))) == pytest.approx(1.0, abs=1e-10)


def test_style_identity_and_oracle():
    fake, real = rand_stacks(seed=13)
    lam = (1.0, 0.0, 0.5)
    assert float(style_loss(fake, fake, lam)) == 0.0
    assert float(style_loss(fake, real, lam)) == pytest.approx(
        loop_style(fake, real, lam), abs=1e-10
    )


def test_style_default_mask_only_first_and_last():
    weights = LossWeights()
    fake, real = rand_stacks(seed=14, layers=((2, 8, 8), (4, 4, 4), (4, 4, 4), (4, 4, 4), (8, 2, 2)))
    full = style_loss(fake, real, weights.lambda_s)
    # zeroing the middle blocks' features changes nothing
    for i in (1, 2, 3):
        fake[i] = torch.zeros_like(fake[i])
    masked = style_loss(fake, real, weights.lambda_s)
    assert float(full) == pytest.approx(float(masked), abs=1e-12)


def test_content_hand_value_and_defaults():
    fa = torch.zeros(1, 1, 1, 1, dtype=torch.float64)
    fb = torch.full((1, 1, 1, 1), 3.0, dtype=torch.float64)
    assert float(content_loss([fa], [fb], (1.0,))) == pytest.approx(9.0, abs=1e-12)

    weights = LossWeights()
    assert weights.lambda_c[-1] == 0.0  # deepest block contributes nothing


def test_content_identity_and_oracle():
    fake, real = rand_stacks(seed=15)
    lam = (0.5, 1.0, 2.0)
    assert float(content_loss(fake, fake, lam)) == 0.0
    assert float(content_loss(fake, real, lam)) == pytest.approx(
        loop_content(fake, real, lam), abs=1e-10
    )


# ---------------------------------------------------------------- combination

def test_combined_defaults_recorded():
    weights = LossWeights()
    assert weights.lambda1 == 20.0
    assert weights.lambda2 == pytest.approx(1e-4)
    assert weights.lambda3 == pytest.approx(1e-4)
    breakdown = combined_generator_loss(0.7, 0.1, 0.2, 0.3, weights=weights)
    expected = 0.7 + 20.0 * 0.1 + 1e-4 * 0.2 + 1e-4 * 0.3
    assert breakdown.total == pytest.approx(expected, abs=1e-12)


def test_combined_identity_inputs_leave_adversarial_only():
    weights = LossWeights(lambda_l1=1.0, lambda_l2=1.0, lambda_tv=0.0)
    breakdown = combined_generator_loss(0.42, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, weights=weights)
    assert breakdown.total == pytest.approx(0.42, abs=1e-15)


def test_combined_zero_weights():
    weights = loss_preset("cgan")
    breakdown = combined_generator_loss(1.3, 9.9, 9.9, 9.9, 9.9, 9.9, 9.9, weights=weights)
    assert breakdown.total == pytest.approx(1.3, abs=1e-12)


# ---------------------------------------------------------------- presets

def test_preset_names_complete():
    for name in PRESET_NAMES:
        loss_preset(name)
    with pytest.raises(ConfigError) as err:
        loss_preset("nope")
    for name in PRESET_NAMES:
        assert name in str(err.value)


def test_preset_cgan_all_non_adversarial_zero():
    w = loss_preset("cgan")
    assert w.lambda1 == w.lambda2 == w.lambda3 == 0.0
    assert w.lambda_l1 == w.lambda_l2 == w.lambda_tv == 0.0
    assert all(v == 0 for v in w.lambda_p + w.lambda_s + w.lambda_c)


def test_preset_medgan_paper_values():
    w = loss_preset("medgan")
    assert w.lambda1 == 20.0
    assert w.lambda2 == pytest.approx(1e-4)
    assert w.lambda3 == pytest.approx(1e-4)
    assert w.lambda_p == (1.0, 1.0, 1.0)
    assert w.lambda_s == (1.0, 0.0, 0.0, 0.0, 1.0)
    assert w.lambda_c == (1.0, 1.0, 1.0, 1.0, 0.0)


def test_preset_pix2pix_adversarial_plus_l1_only():
    w = loss_preset("pix2pix")
    assert w.lambda_l1 > 0
    assert w.lambda1 == w.lambda2 == w.lambda3 == w.lambda_l2 == w.lambda_tv == 0.0


def test_preset_baselines():
    idcgan = loss_preset("id-cgan-like")
    assert idcgan.lambda_l2 > 0 and idcgan.lambda3 > 0
    assert idcgan.lambda1 == idcgan.lambda2 == idcgan.lambda_l1 == idcgan.lambda_tv == 0.0
    fila = loss_preset("fila-like")
    assert fila.lambda2 > 0 and fila.lambda3 > 0 and fila.lambda_l1 > 0 and fila.lambda_tv > 0
    assert fila.lambda1 == 0.0


def test_weights_validation_and_round_trip():
    with pytest.raises(ConfigError):
        LossWeights(lambda1=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_s=(1.0, -0.1, 0, 0, 0))
    w = loss_preset("fila-like")
    assert LossWeights.from_dict(w.to_dict()) == w


# ---------------------------------------------------------------- properties

@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.floats(min_value=0.1, max_value=10.0))
def test_homogeneity_in_weights(seed, factor):
    fake, real = rand_stacks(seed=seed % 1000)
    lam = (1.0, 0.7, 0.3)
    scaled = tuple(factor * v for v in lam)
    base_p = float(perceptual_loss(fake, real, lam))
    assert float(perceptual_loss(fake, real, scaled)) == pytest.approx(factor * base_p, rel=1e-9)
    base_s = float(style_loss(fake, real, lam))
    assert float(style_loss(fake, real, scaled)) == pytest.approx(factor * base_s, rel=1e-9)
    base_c = float(content_loss(fake, real, lam))
    assert float(content_loss(fake, real, scaled)) == pytest.approx(factor * base_c, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_symmetry_and_nonnegativity(seed):
    a, b = rand((1, 1, 6, 6), seed=seed % 997), rand((1, 1, 6, 6), seed=(seed + 1) % 997)
    for fn in (l1_loss, l2_loss):
        assert float(fn(a, b)) == pytest.approx(float(fn(b, a)), abs=1e-12)
        assert float(fn(a, b)) >= 0.0
    fake, real = rand_stacks(seed=seed % 991)
    lam = (1.0, 1.0, 1.0)
    assert float(perceptual_loss(fake, real, lam)) == pytest.approx(
        float(perceptual_loss(real, fake, lam)), abs=1e-12
    )
    assert float(style_loss(fake, real, lam)) == pytest.approx(
        float(style_loss(real, fake, lam)), abs=1e-12
    )
    assert float(content_loss(fake, real, lam)) == pytest.approx(
        float(content_loss(real, fake, lam)), abs=1e-12
    )


def test_zero_iff_identical_for_positive_weights():
    fake, real = rand_stacks(seed=77)
    lam = (1.0, 1.0, 1.0)
    assert float(perceptual_loss(fake, real, lam)) > 0
    assert float(content_loss(fake, real, lam)) > 0
    assert float(l1_loss(fake[0], real[0])) > 0


# ---------------------------------------------------------------- gradients

def _fd_check(fn, x, rel=1e-3):
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    with torch.no_grad():
        numeric = fd_gradient(lambda t: float(fn(t)), x.detach())
    assert max_relative_error(x.grad, numeric, floor=1e-6) <= rel


def test_gradients_of_pixel_losses():
    x = rand((1, 1, 4, 4), seed=21)
    target = rand((1, 1, 4, 4), seed=22)
    _fd_check(lambda t: l1_loss(t, target), x)
    _fd_check(lambda t: l2_loss(t, target), x)
    _fd_check(tv_loss, x)


def test_gradients_of_feature_losses():
    fake, real = rand_stacks(seed=23, layers=((2, 4, 4), (3, 2, 2)))
    lam = (1.0, 0.5)
    base = fake[0]

    def perceptual_of(t):
        return perceptual_loss([t, fake[1]], real, lam)

    def style_of(t):
        return style_loss([t, fake[1]], real, lam)

    def content_of(t):
        return content_loss([t, fake[1]], real, lam)

    _fd_check(perceptual_of, base)
    _fd_check(style_of, base)
    _fd_check(content_of, base)
