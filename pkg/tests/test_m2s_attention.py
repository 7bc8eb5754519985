import math

import pytest
import torch

from m2sseg import ConfigurationError, DimensionError
from m2sseg.config import M2SConfig
from m2sseg.m2s_attention import (M2SAttention, PyramidLevel, SpectralChannelAttention,
                                  dct_basis, dump_basis, frequency_pairs, recalibrate,
                                  resize, spectral_project)

from oracles import fd_gradient_check

TOY_CFG = M2SConfig(reduced_channels=4, num_frequencies=4, pyramid_levels=2,
                    min_channels=4, min_height=4, min_width=4)
FULL_CFG = M2SConfig()
FULL_ENCODER = (64, 128, 320, 512)


def _zero_biases(module):
    for m in module.modules():
        if getattr(m, "bias", None) is not None:
            torch.nn.init.zeros_(m.bias)


def _toy_pyramid(batch=1, dtype=torch.float32, generator=None):
    # strides 4/8/16/32 of a 64x64 image
    channels = (8, 12, 16, 20)
    sizes = (16, 8, 4, 2)
    return [torch.randn(batch, c, s, s, dtype=dtype, generator=generator)
            for c, s in zip(channels, sizes)]


# -- frequency selection and basis -----------------------------------------

def test_frequency_pairs_zigzag_order():
    pairs = frequency_pairs(4, 4, 7)
    assert pairs == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0), (0, 3)]


def test_frequency_pairs_respect_grid_bounds():
    pairs = frequency_pairs(2, 8, 10)
    assert all(u < 2 and v < 8 for u, v in pairs)
    assert len(set(pairs)) == 10


def test_too_many_frequencies_rejected():
    with pytest.raises(ConfigurationError):
        frequency_pairs(2, 2, 5)


def test_basis_dc_is_constant_one():
    for h, w in ((2, 2), (5, 3), (8, 8)):
        _, images = dct_basis(h, w, 1)
        assert torch.allclose(images[0], torch.ones(h, w, dtype=torch.float64))


def test_basis_2x2_hand_values():
    pairs, images = dct_basis(2, 2, 2)
    assert pairs[1] == (0, 1)
    c = math.cos(math.pi / 4)
    expected = torch.tensor([[c, -c], [c, -c]], dtype=torch.float64)
    assert torch.allclose(images[1], expected, atol=1e-12)


def test_basis_orthogonality_brute_force():
    n = 4
    _, images = dct_basis(n, n, n * n)
    flat = images.reshape(n * n, -1)
    gram = flat @ flat.T
    off = gram - torch.diag(torch.diag(gram))
    assert off.abs().max() <= 1e-9 * n * n


def test_basis_binary_dump(tmp_path):
    import numpy as np
    path = dump_basis(tmp_path / "basis.f32", 4, 4, 3)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    _, images = dct_basis(4, 4, 3)
    assert np.array_equal(raw.reshape(3, 4, 4), images.numpy().astype(np.float32))


def test_freq_offset_mode_differs():
    _, standard = dct_basis(4, 4, 1, mode="standard")
    _, offset = dct_basis(4, 4, 1, mode="freq_offset")
    assert torch.allclose(standard[0], torch.ones(4, 4, dtype=torch.float64))
    assert not torch.allclose(offset[0], torch.ones(4, 4, dtype=torch.float64))


# -- spectral projection -----------------------------------------------------

def test_projection_dc_equals_scaled_mean():
    torch.manual_seed(0)
    feature = torch.randn(2, 6, 8, 8, dtype=torch.float64)
    _, images = dct_basis(8, 8, 1)
    sums, _ = spectral_project(feature, images)
    expected = feature.mean(dim=(-2, -1)) * 64.0
    rel = ((sums[:, 0] - expected).abs() / expected.abs().clamp_min(1e-12)).max()
    assert rel <= 1e-5


def test_projection_hand_value():
    feature = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=torch.float64)
    _, images = dct_basis(2, 2, 2)
    sums, _ = spectral_project(feature, images)
    assert abs(sums[0, 1, 0].item() - (-1.4142135623730951)) < 1e-12


def test_projection_max_mode_with_dc_basis():
    torch.manual_seed(1)
    feature = torch.rand(3, 5, 4, 4)  # non-negative
    _, images = dct_basis(4, 4, 1)
    _, maxes = spectral_project(feature, images)
    assert torch.allclose(maxes[:, 0], feature.amax(dim=(-2, -1)))


def test_projection_resolution_mismatch():
    _, images = dct_basis(4, 4, 2)
    with pytest.raises(DimensionError):
        spectral_project(torch.rand(1, 3, 8, 8), images)


# -- spectral channel attention ----------------------------------------------

def test_zero_input_gives_half_weights():
    attn = SpectralChannelAttention(16, TOY_CFG)
    _zero_biases(attn)
    weights = attn(torch.zeros(2, 16, 8, 8))
    assert torch.allclose(weights, torch.full((2, 16), 0.5))


def test_weights_monotone_toward_one_with_scale():
    torch.manual_seed(3)
    attn = SpectralChannelAttention(16, TOY_CFG)
    _zero_biases(attn)
    with torch.no_grad():
        attn.fc1.weight.abs_()
        attn.fc2.weight.abs_()
    base = torch.rand(1, 16, 8, 8) + 0.1  # positive input -> positive logits
    previous = None
    for scale in (1.0, 10.0, 100.0):
        weights = attn(base * scale)
        assert (weights > 0.5).all()
        if previous is not None:
            assert (weights >= previous).all()
        previous = weights
    assert (previous > 0.99).all()


def test_weight_bounds_on_random_inputs():
    torch.manual_seed(4)
    attn = SpectralChannelAttention(16, TOY_CFG)
    # the model initializes projections at trunc_normal(0.02), zero bias
    with torch.no_grad():
        torch.nn.init.trunc_normal_(attn.fc1.weight, std=0.02)
        torch.nn.init.trunc_normal_(attn.fc2.weight, std=0.02)
        attn.fc1.bias.zero_()
        attn.fc2.bias.zero_()
    weights = attn(torch.randn(1000, 16, 4, 4))
    assert (weights > 0.0).all() and (weights < 1.0).all()


# -- recalibration -----------------------------------------------------------

def test_recalibrate_identity_and_annihilation():
    torch.manual_seed(5)
    feature = torch.randn(2, 6, 4, 4)
    ones = torch.ones(2, 6)
    assert torch.equal(recalibrate(feature, ones), feature)
    weights = ones.clone()
    weights[:, 2] = 0.0
    out = recalibrate(feature, weights)
    assert torch.equal(out[:, 2], torch.zeros(2, 4, 4))
    assert torch.equal(recalibrate(feature, 0.5 * ones), 0.5 * feature)


def test_recalibrate_length_mismatch():
    with pytest.raises(DimensionError):
        recalibrate(torch.randn(1, 6, 4, 4), torch.ones(1, 5))


# -- pyramid levels -----------------------------------------------------------

def test_level_shapes_full_defaults():
    levels = [PyramidLevel(l, 256, FULL_CFG) for l in (1, 2, 3)]
    x = torch.randn(1, 256, 32, 32)
    shapes = [tuple(level.decompose(x).shape[1:]) for level in levels]
    assert shapes == [(256, 32, 32), (128, 16, 16), (64, 8, 8)]


def test_level_one_keeps_resolution():
    level = PyramidLevel(1, 16, TOY_CFG)
    x = torch.randn(1, 16, 8, 8)
    assert level.decompose(x).shape[-2:] == (8, 8)


def test_level_dims_clamped_at_minimum():
    level = PyramidLevel(3, 16, TOY_CFG)  # scale 4 on an 8x8 grid -> clamp to 4x4
    x = torch.randn(1, 16, 8, 8)
    assert level.decompose(x).shape[-2:] == (4, 4)


def test_level_zero_input_zero_output():
    level = PyramidLevel(2, 16, TOY_CFG)
    _zero_biases(level)
    out = level.decompose(torch.zeros(1, 16, 8, 8))
    assert torch.equal(out, torch.zeros_like(out))


def test_blend_partition_of_unity():
    torch.manual_seed(6)
    level = PyramidLevel(1, 16, TOY_CFG)
    x = torch.randn(4, level.level_channels, 8, 8)
    fg = torch.sigmoid(level.foreground(x))
    bg = 1.0 - fg
    assert (fg > 0).all() and (fg < 1).all()
    assert (fg + bg - 1.0).abs().max() <= 1e-6
    assert (level.blend(x) - x).abs().max() <= 1e-6  # fg_weight = bg_weight = 1


def test_blend_zero_mixing_weights():
    level = PyramidLevel(1, 16, TOY_CFG)
    with torch.no_grad():
        level.fg_weight.zero_()
        level.bg_weight.zero_()
    x = torch.randn(1, level.level_channels, 8, 8)
    assert torch.equal(level.blend(x), torch.zeros_like(x))


# -- block-level behaviour -----------------------------------------------------

def test_preprocess_full_shape():
    block = M2SAttention(FULL_ENCODER, FULL_CFG)
    stages = [torch.randn(1, c, 256 // 2 ** (i + 2), 256 // 2 ** (i + 2))
              for i, c in enumerate(FULL_ENCODER)]
    fused, reduced = block.preprocess(stages)
    assert fused.shape == (1, 256, 32, 32)
    assert [tuple(r.shape[1:]) for r in reduced] == [(64, 32, 32)] * 4


def test_preprocess_native_stage_bypasses_resampling():
    torch.manual_seed(7)
    block = M2SAttention((8, 12, 16, 20), TOY_CFG)
    stages = _toy_pyramid()
    fused, reduced = block.preprocess(stages)
    direct = block.reduce[1](stages[1])  # stage 2 already sits on the target grid
    assert torch.equal(reduced[1], direct)
    assert torch.equal(fused[:, 4:8], direct)


def test_preprocess_zero_stages_zero_output():
    block = M2SAttention((8, 12, 16, 20), TOY_CFG)
    _zero_biases(block)
    stages = [torch.zeros_like(s) for s in _toy_pyramid()]
    fused, _ = block.preprocess(stages)
    assert torch.equal(fused, torch.zeros_like(fused))


def test_refine_residual_identity_with_zeroed_branches():
    torch.manual_seed(8)
    block = M2SAttention((8, 12, 16, 20), TOY_CFG)
    with torch.no_grad():
        for level in block.levels:
            for p in level.parameters():
                p.zero_()
    fused = torch.randn(2, 16, 8, 8)
    assert torch.equal(block.refine(fused), fused)


def test_postprocess_zero_refined_equals_residual():
    torch.manual_seed(9)
    block = M2SAttention((8, 12, 16, 20), TOY_CFG)
    stages = _toy_pyramid()
    _, reduced = block.preprocess(stages)
    sizes = [s.shape[-2:] for s in stages]
    outs = block.postprocess(torch.zeros(1, 16, 8, 8), reduced, sizes)
    for out, red, size in zip(outs, reduced, sizes):
        assert torch.equal(out, resize(red, size))


def test_postprocess_full_skip_shapes():
    block = M2SAttention(FULL_ENCODER, FULL_CFG)
    stages = [torch.randn(1, c, 256 // 2 ** (i + 2), 256 // 2 ** (i + 2))
              for i, c in enumerate(FULL_ENCODER)]
    outs = block(stages)
    shapes = [tuple(o.shape[1:]) for o in outs]
    assert shapes == [(64, 64, 64), (64, 32, 32), (64, 16, 16), (64, 8, 8)]


def test_postprocess_chunk_isolation():
    torch.manual_seed(10)
    block = M2SAttention((8, 12, 16, 20), TOY_CFG)
    stages = _toy_pyramid()
    _, reduced = block.preprocess(stages)
    sizes = [s.shape[-2:] for s in stages]
    refined = torch.randn(1, 16, 8, 8)
    base = block.postprocess(refined, reduced, sizes)
    bumped = refined.clone()
    bumped[0, 0, 3, 3] += 1.0     # channel 0 -> only the first skip
    outs = block.postprocess(bumped, reduced, sizes)
    assert not torch.equal(outs[0], base[0])
    for i in (1, 2, 3):
        assert torch.equal(outs[i], base[i])
    bumped = refined.clone()
    # channel 3*C_r -> only the last skip; pixel (1, 1) stays inside the
    # bilinear sampling footprint of the 8x8 -> 2x2 downsample
    bumped[0, 12, 1, 1] += 1.0
    outs = block.postprocess(bumped, reduced, sizes)
    assert not torch.equal(outs[3], base[3])
    for i in (0, 1, 2):
        assert torch.equal(outs[i], base[i])


def test_shape_contract_for_other_configs():
    cfg = M2SConfig(reduced_channels=6, target_divisor=4, num_frequencies=4,
                    pyramid_levels=2, min_channels=6, min_height=4, min_width=4)
    block = M2SAttention((8, 12, 16, 20), cfg)
    stages = _toy_pyramid()
    outs = block(stages)
    for i, out in enumerate(outs):
        assert tuple(out.shape[1:]) == (6, 64 // 2 ** (i + 2), 64 // 2 ** (i + 2))


def test_dc_equivalence_through_module():
    torch.manual_seed(11)
    attn = SpectralChannelAttention(16, TOY_CFG)
    feature = torch.randn(1, 16, 8, 8, dtype=torch.float64)
    basis = attn.basis_for(8, 8)
    sums, _ = spectral_project(feature, basis)
    expected = feature.mean(dim=(-2, -1)) * 64.0
    rel = ((sums[:, 0] - expected).abs() / expected.abs().clamp_min(1e-12)).max()
    assert rel <= 1e-5


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    block = M2SAttention((8, 12, 16, 20), TOY_CFG).double()
    gen = torch.Generator().manual_seed(123)
    with torch.no_grad():
        for p in block.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.1)
    stages = _toy_pyramid(dtype=torch.float64, generator=gen)
    probes = [torch.randn(o.shape, generator=gen, dtype=torch.float64)
              for o in block(stages)]

    def loss_fn():
        return sum((o * p).mean() for o, p in zip(block(stages), probes))

    worst, name = fd_gradient_check(loss_fn, list(block.named_parameters()))
    assert worst <= 1e-4, f"worst relative error {worst:.3e} at {name}"
