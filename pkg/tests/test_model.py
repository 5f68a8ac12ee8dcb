import numpy as np
import pytest

from gradcheck import random_batch, variant_error
from hiercrop import kernels as K
from hiercrop.model import (
    VARIANTS, Batch, HierCropModel, MissingModalityError, ModelSpec, UnknownVariantError, bag_of_crops,
    check_variant,
)


def small(variant, V=5, **kw):
    kw = dict(dict(embed_dim=3, rnn_dim=4, rs_proj_dim=3, stacked_lstm=2, n_rs_variables=1), **kw)
    return HierCropModel(ModelSpec(variant, V, **kw))


@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_gradients(variant):
    for seed in range(3):
        assert variant_error(variant, seed) < 1e-4


@pytest.mark.parametrize("variant", ["HierE_MM", "IntraYE_RS"])
def test_ten_windows_accepted(variant):
    rng = np.random.default_rng(0)
    m = small(variant)
    p = m.init_params(rng)
    b = random_batch(rng, m.spec, W=10)
    logits = m.predict_logits(p, b)
    assert logits.shape == (3, 5) and np.all(np.isfinite(logits))
    assert m.attention_weights(p, b).shape == (3, 10)


def test_zeroed_attention_head_uniform():
    rng = np.random.default_rng(0)
    m = small("HierE_RS")
    p = m.init_params(rng)
    p["intra.att.W2"][:] = 0
    u = m.attention_weights(p, random_batch(rng, m.spec, W=7))
    assert np.allclose(u, 1 / 7, atol=1e-6)


def test_fusion_dims_full_size():
    m = HierCropModel(ModelSpec("HierE_final", 225))
    p = m.init_params(np.random.default_rng(0))
    assert p["inter.0.Wx"].shape[1] == 64 + 128 == 192
    assert p["fc2.W"].shape == (256, 256) and p["fc1.W"].shape == (256, 256 + 225)
    assert sum(k.startswith("inter.") and k.endswith(".Wh") for k in p) == 3


def test_zero_rs_gives_projection_bias():
    rng = np.random.default_rng(0)
    m = small("InterYE_MM")
    p = m.init_params(rng)
    b = random_batch(rng, m.spec)
    b.rs = np.zeros_like(b.rs)
    _, cache = m.forward(p, b)
    assert np.array_equal(cache["f_rs_a"], np.broadcast_to(p["f_rs.b"], cache["f_rs_a"].shape))


def test_single_season_is_one_stacked_step():
    rng = np.random.default_rng(1)
    m = small("InterYE_Crop")
    p = m.init_params(rng)
    b = Batch(crops_prev=np.array([[5], [2]]), target=np.array([0, 1]))
    x = p["embed.E"][b.crops_prev[:, 0]]
    h = np.zeros((2, 4))
    for k in range(2):
        h, _, _ = K.lstm_cell_forward(x, np.zeros((2, 4)), np.zeros((2, 4)), p[f"inter.{k}.Wx"],
                                      p[f"inter.{k}.Wh"], p[f"inter.{k}.b"])
        x = h
    expect = h @ p["f_c.W"].T + p["f_c.b"]
    assert np.allclose(m.predict_logits(p, b), expect, atol=1e-12)


def test_inter_prefix_causality():
    rng = np.random.default_rng(2)
    m = small("InterYE_MM")
    p = m.init_params(rng)
    b = random_batch(rng, m.spec, T=5)
    x_full = m.forward(p, b)[1]
    hs_full = x_full["inter"][-1][3]
    for t in range(1, 5):
        pre = Batch(crops_prev=b.crops_prev[:, :t], rs=b.rs[:, :t], target=b.target)
        hs_pre = m.forward(p, pre)[1]["inter"][-1][3]
        assert np.allclose(hs_pre, hs_full[:, :t], atol=1e-12)
    # a later season's input never reaches an earlier state
    b2 = Batch(crops_prev=b.crops_prev.copy(), rs=b.rs.copy(), target=b.target)
    b2.rs[:, 4] += 10
    b2.crops_prev[:, 4] = 0
    assert np.allclose(m.forward(p, b2)[1]["inter"][-1][3][:, :4], hs_full[:, :4], atol=1e-12)


def test_zero_cd_only_h_path():
    rng = np.random.default_rng(3)
    m = small("HierE_final")
    p = m.init_params(rng)
    b = random_batch(rng, m.spec)
    b.cd = np.zeros_like(b.cd)
    base = m.predict_logits(p, b)
    p["fc1.W"][:, 4:] = rng.normal(size=p["fc1.W"][:, 4:].shape)
    assert np.array_equal(m.predict_logits(p, b), base)


def test_bag_of_crops():
    assert np.array_equal(bag_of_crops([[1]], 3), [[0, 1, 0]])
    assert np.array_equal(bag_of_crops([[0, 0, 1]], 3), [[2, 1, 0]])
    assert np.array_equal(bag_of_crops([[2, 0, -1, 0]], 3), bag_of_crops([[0, -1, 0, 2]], 3))


def test_inter_crop_learns_alternation():
    rng = np.random.default_rng(0)
    m = small("InterYE_Crop", V=2, rnn_dim=8, embed_dim=4, stacked_lstm=1)
    p = m.init_params(rng)
    # sequences of length 4 alternating A/B, previous-crop input with a "none" start row
    seqs = np.array([[0, 1, 0, 1, 0], [1, 0, 1, 0, 1]] * 8)
    b = Batch(crops_prev=np.concatenate([np.full((16, 1), 2), seqs[:, :3]], axis=1), target=seqs[:, 3])
    state = K.AdamState(lr=0.05)
    for _ in range(100):
        _, g, _ = m.loss_and_grads(p, b)
        K.adam_step(p, g, state)
    assert np.mean(m.predict(p, b) == b.target) == 1.0


def test_hier_rs_equals_mm_with_zero_embedding():
    rng = np.random.default_rng(4)
    mm, rs = small("HierE_MM"), small("HierE_RS")
    p = mm.init_params(rng)
    p["embed.E"][:] = 0
    q = {k: v for k, v in p.items() if not k.startswith("embed.")}
    q["inter.0.Wx"] = p["inter.0.Wx"][:, 3:]
    b = random_batch(rng, mm.spec)
    assert np.allclose(mm.predict_logits(p, b), rs.predict_logits(q, b), atol=1e-12)


def test_modality_mismatch_and_unknown_variant():
    rng = np.random.default_rng(0)
    m = small("HierE_final")
    p = m.init_params(rng)
    b = random_batch(rng, m.spec)
    b.cd = None
    with pytest.raises(MissingModalityError, match="HierE_final.*CD"):
        m.forward(p, b)
    with pytest.raises(UnknownVariantError, match="HierE_final"):
        check_variant("HierE_best")
    m2 = small("IntraYE_MM")
    b2 = random_batch(rng, m2.spec)
    b2.boc = None
    with pytest.raises(MissingModalityError):
        m2.forward(m2.init_params(rng), b2)


def test_argmax_shift_invariance():
    rng = np.random.default_rng(5)
    m = small("InterYE_MM")
    p = m.init_params(rng)
    b = random_batch(rng, m.spec, B=20)
    before = m.predict(p, b)
    p["f_c.b"] += 3.7
    assert np.array_equal(m.predict(p, b), before)


def test_variant_modalities_table():
    from hiercrop.model import MODALITIES

    assert MODALITIES["InterYE_Crop"] == ("CR",)
    assert MODALITIES["HierE_final"] == ("CR", "RS", "CD")
    assert len(VARIANTS) == 8


def test_spec_round_trip():
    s = ModelSpec("HierE_MM", 10, embed_dim=7)
    assert ModelSpec.from_dict(s.to_dict()) == s
