import numpy as np
import pytest

from snapvit.errors import ConfigError, ConstraintError, DimensionError
from snapvit.imaging import bilinear_matrix, patchify, resize
from snapvit.toy import toy_config
from snapvit.vit import (DEFAULT_CAPS, VIT_B16, Caps, Kind, ModelWeights, PruneMask, ViTConfig,
                         compact, embed, forward, init_weights, layer_widths, structure_census)

from conftest import TINY, random_mask


def test_toy_census_counts():
    cfg = toy_config()
    c = structure_census(cfg)
    assert len(c) == 4 * (4 + 128) == 528
    assert c.n_units == 4 * (4 + 1) == 20
    assert structure_census(cfg, "ffn_only").n_units == 4
    assert (structure_census(cfg, "ffn_only").membership[c.is_head()] == -1).all()
    # every FFN neuron of a layer shares one unit
    ffn = ~c.is_head()
    for l in range(4):
        assert len(set(c.membership[ffn & (c.layers() == l)])) == 1


def test_vit_b_census_and_caps():
    c = structure_census(VIT_B16)
    assert len(c) == 12 * (12 + 3072)
    assert c.n_units == 12 * 13 == 156
    assert DEFAULT_CAPS.min_ffn(3072) == 154  # ceil(0.05 * 3072)
    assert DEFAULT_CAPS.min_heads(12) == 3  # ceil(0.2 * 12)
    assert DEFAULT_CAPS.min_heads(4) == 1 and DEFAULT_CAPS.min_ffn(128) == 7
    # (1 - 0.8) * 10 evaluates to 2.0000000000000004; the minimum must still be 2
    assert Caps(0.8, 0.95).min_heads(10) == 2


def test_owned_params():
    cfg = toy_config()
    c = structure_census(cfg)
    owned = c.owned_params()
    assert owned[0] == 4 * 16 * 64  # head: q, k, v rows and proj columns
    assert owned[4] == 2 * 64 + 1  # neuron: in row, in bias, out column
    prunable = sum(v.size for k, v in init_weights(cfg).params.items()
                   if k.split(".", 2)[-1] in ("attn.q.weight", "attn.k.weight", "attn.v.weight",
                                              "attn.proj.weight", "ffn.in.weight", "ffn.in.bias",
                                              "ffn.out.weight"))
    assert owned.sum() == prunable


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        ViTConfig(image_size=30, patch_size=8)
    cfg = toy_config()
    assert ViTConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.n_tokens == 17


def test_mask_validation():
    cfg = TINY
    m = PruneMask.all_keep(cfg)
    m.validate(cfg)
    m.heads[0][:] = False
    with pytest.raises(ConstraintError):
        m.validate(cfg)
    m.validate(cfg, caps=None)  # shapes only
    bad = PruneMask([np.ones(3, bool)] * cfg.n_layers, m.ffn)
    with pytest.raises(ConstraintError):
        bad.validate(cfg, caps=None)


def test_keep_vector_roundtrip():
    cfg = TINY
    c = structure_census(cfg)
    rng = np.random.default_rng(0)
    keep = rng.random(len(c)) < 0.7
    np.testing.assert_array_equal(PruneMask.from_keep_vector(c, keep).keep_vector(c), keep)


def test_forward_shapes_and_dtype(tiny_weights):
    x = np.random.default_rng(0).random((3, 3, 16, 16))
    out = forward(tiny_weights, None, x)
    assert out.shape == (3, TINY.d_model) and out.dtype == np.float64
    with pytest.raises(DimensionError):
        forward(tiny_weights, None, x[:, :2])
    with pytest.raises(DimensionError):
        forward(tiny_weights, None, np.zeros((1, 3, 12, 12)))


def test_all_keep_mask_equals_no_mask(tiny_weights):
    x = np.random.default_rng(1).random((4, 3, 16, 16))
    a = forward(tiny_weights, None, x)
    b = forward(tiny_weights, PruneMask.all_keep(TINY), x)
    np.testing.assert_array_equal(a, b)


def test_masked_equals_compacted(tiny_weights):
    rng = np.random.default_rng(2)
    x = rng.random((5, 3, 16, 16))
    for _ in range(5):
        mask = random_mask(TINY, rng)
        a = forward(tiny_weights, mask, x)
        b = forward(compact(tiny_weights, mask), None, x)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_fully_masked_sublayers_are_skipped(tiny_weights):
    """Masking everything in a layer equals a compacted width-0 layer (bias skipped too)."""
    x = np.random.default_rng(3).random((2, 3, 16, 16))
    mask = PruneMask.all_keep(TINY)
    mask.heads[1][:] = False
    mask.ffn[0][:] = False
    a = forward(tiny_weights, mask, x, caps=None)
    small = compact(tiny_weights, mask, caps=None)
    assert layer_widths(small) == [(2, 0), (0, 24)]
    np.testing.assert_allclose(a, forward(small, None, x), rtol=1e-12, atol=1e-12)


def test_head_mask_equals_zeroed_projection_columns(tiny_weights):
    x = np.random.default_rng(4).random((2, 3, 16, 16))
    mask = PruneMask.all_keep(TINY)
    mask.heads[0][1] = False
    p = dict(tiny_weights.params)
    proj = p["blocks.0.attn.proj.weight"].copy()
    proj[:, 8:16] = 0
    p["blocks.0.attn.proj.weight"] = proj
    np.testing.assert_allclose(forward(tiny_weights, mask, x),
                               forward(ModelWeights(TINY, p), None, x), rtol=1e-12, atol=1e-12)


def test_capture_keys_and_shapes(tiny_weights):
    cap = {}
    forward(tiny_weights, None, np.zeros((2, 3, 16, 16)), capture=cap)
    t = TINY.n_tokens
    assert cap[("attn", 0)].shape == (2 * t, 2 * 8)
    assert cap[("ffn", 1)].shape == (2 * t, 24)
    assert cap[("heads", 1)].shape == (2, 2, t, 8)


def test_small_inputs_use_resampled_positions(tiny_weights):
    out = forward(tiny_weights, None, np.random.default_rng(5).random((2, 3, 8, 8)))
    assert out.shape == (2, TINY.d_model) and np.all(np.isfinite(out))


def test_bilinear_identity_and_rows_sum_to_one():
    np.testing.assert_array_equal(bilinear_matrix(5, 5), np.eye(5))
    m = bilinear_matrix(3, 7, 1.5, 4.0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    img = np.random.default_rng(0).random((3, 6, 6))
    np.testing.assert_array_equal(resize(img, 6, 6), img)
    # constant images stay constant under any resampling
    np.testing.assert_allclose(resize(np.full((1, 5, 5), 0.3), 9, 2), 0.3)


def test_patchify_row_major():
    img = np.arange(2 * 4 * 4, dtype=float).reshape(1, 2, 4, 4)
    p = patchify(img, 2)
    assert p.shape == (1, 4, 8)
    # patch 1 is the top-right 2x2 block, channel-major
    np.testing.assert_array_equal(p[0, 1], [2, 3, 6, 7, 18, 19, 22, 23])


def test_embed_chunks_match_single_batch(tiny_weights):
    x = np.random.default_rng(6).random((7, 3, 16, 16))
    np.testing.assert_allclose(embed(tiny_weights, x, batch_size=3), embed(tiny_weights, x),
                               rtol=1e-12, atol=1e-12)


def test_census_kinds_order():
    c = structure_census(TINY)
    assert c.structures[0].kind == Kind.HEAD and c.structures[2].kind == Kind.FFN
    assert c.structures[2 + 24].layer == 1
