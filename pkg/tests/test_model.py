import dataclasses

import numpy as np
import pytest

from msfet_e2v.autodiff import Tensor, no_grad
from msfet_e2v.model import TINY, ConfigError, ModelConfig, RecurrentState, architecture, init_weights, model_forward
from msfet_e2v.model import blocks
from msfet_e2v.model.network import MSFETE2V
from msfet_e2v.wavelet import dwt2

DEFAULT = ModelConfig()


@pytest.fixture(scope="module")
def tiny():
    return init_weights(TINY, seed=0)


@pytest.fixture(scope="module")
def default_weights():
    return init_weights(DEFAULT, seed=0)


def zeroed(weights, predicate):
    w = weights.copy()
    for name, p in w.named_parameters():
        if predicate(name):
            p.data = np.zeros_like(p.data)
    return w


def voxel(rng, cfg=TINY, h=32, w=32):
    return Tensor(rng.normal(size=(cfg.bins, h, w)).astype(np.float32))


# -- weights ----------------------------------------------------------------------------------

def test_init_is_seeded():
    a, b, c = init_weights(TINY, 5), init_weights(TINY, 5), init_weights(TINY, 6)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
    assert not np.array_equal(a["head.weight"].data, c["head.weight"].data)


def test_shapes_follow_architecture(tiny):
    table = architecture(TINY)
    assert list(tiny.params) == list(table)
    assert all(tiny[n].shape == s for n, s in table.items())


def test_default_parameter_count(default_weights):
    n = default_weights.count()
    assert n == 21_519_809
    assert abs(n - 16.71e6) / 16.71e6 <= 0.40


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(embed_dim=30, heads=8)
    with pytest.raises(ConfigError):
        ModelConfig(depth=5)
    with pytest.raises(ConfigError):
        ModelConfig(cdam_mode="xx")


def test_patch_geometry_table():
    assert [DEFAULT.patch_geometry(j) for j in DEFAULT.scales] == [(7, 4, 3), (3, 2, 1), (3, 1, 1)]


# -- blocks -----------------------------------------------------------------------------------

def test_head(default_weights, rng):
    w = default_weights
    out = blocks.head_forward(w, Tensor(np.zeros((5, 64, 64), np.float32)))
    assert out.shape == (32, 64, 64)
    assert np.allclose(out.data, w["head.bias"].data[:, None, None])
    a, b = rng.normal(size=(2, 5, 64, 64)).astype(np.float32)
    zb = zeroed(w, lambda n: n == "head.bias")
    lhs = blocks.head_forward(zb, Tensor(a + 2 * b)).data
    rhs = blocks.head_forward(zb, Tensor(a)).data + 2 * blocks.head_forward(zb, Tensor(b)).data
    assert np.allclose(lhs, rhs, atol=1e-4)


def test_downconv_shapes_and_dataflow(default_weights, rng):
    x = Tensor(rng.normal(size=(32, 64, 64)).astype(np.float32))
    feats = blocks.downconv_forward(default_weights, DEFAULT, x)
    assert [f.shape for f in feats] == [(64, 32, 32), (128, 16, 16), (256, 8, 8)]
    again = blocks.downconv_forward(zeroed(default_weights, lambda n: n.startswith("down3")), DEFAULT, x)
    assert np.array_equal(feats[0].data, again[0].data)
    assert not np.array_equal(feats[2].data, again[2].data)


def test_zero_residual_block_is_identity(tiny, rng):
    w = zeroed(tiny, lambda n: ".st_rb." in n)
    x = Tensor(rng.normal(size=(16, 8, 8)).astype(np.float32))
    assert np.array_equal(blocks.residual_block(w, "cdam2.st_rb", x).data, x.data)


def test_convlstm_examples(tiny, rng):
    zero = zeroed(tiny, lambda n: ".lstm." in n)
    h, _ = blocks.convlstm_step(zero, "cdam2", Tensor(rng.normal(size=(16, 8, 8)).astype(np.float32)))
    assert not h.data.any()
    x = Tensor(rng.normal(size=(16, 8, 8)).astype(np.float32))
    c_prev = rng.normal(size=(16, 8, 8)).astype(np.float32)
    _, (_, c_new) = blocks.convlstm_step(tiny, "cdam2", x, (Tensor(np.zeros_like(c_prev)), Tensor(c_prev)))
    assert np.all(np.abs(c_new.data) <= np.abs(c_prev) + 1 + 1e-6)
    h1, s1 = blocks.convlstm_step(tiny, "cdam2", x)
    h2, _ = blocks.convlstm_step(tiny, "cdam2", x, s1)
    assert not np.allclose(h1.data, h2.data)


def test_convlstm_rejects_stale_state(tiny, rng):
    _, state = blocks.convlstm_step(tiny, "cdam2", Tensor(np.zeros((16, 8, 8), np.float32)))
    with pytest.raises(ValueError, match="reset"):
        blocks.convlstm_step(tiny, "cdam2", Tensor(np.zeros((16, 4, 4), np.float32)), state)


def test_patch_embed_shapes(default_weights, rng):
    x2 = Tensor(rng.normal(size=(64, 32, 32)).astype(np.float32))
    tok, hw = blocks.patch_embed(default_weights, "cdam2.embed_st", DEFAULT, 2, x2)
    assert tok.shape == (64, 256) and hw == (8, 8)
    x8 = Tensor(rng.normal(size=(256, 8, 8)).astype(np.float32))
    assert blocks.patch_embed(default_weights, "cdam8.embed_st", DEFAULT, 8, x8)[1] == (8, 8)
    grid = blocks.tokens_to_grid(tok, hw)
    back, _ = (grid.reshape(256, 64).T, None)
    assert np.array_equal(back.data, tok.data)


def test_cdam_tokens_per_scale(default_weights, rng):
    x = Tensor(rng.normal(size=(5, 64, 64)).astype(np.float32))
    feats = blocks.downconv_forward(default_weights, DEFAULT, blocks.head_forward(default_weights, x))
    trace = {}
    for j, f in zip(DEFAULT.scales, feats):
        tok, hw, _ = blocks.cdam_forward(default_weights, DEFAULT, j, f, None, trace)
        assert tok.shape == (64, 256) and hw == (8, 8)
        probs = trace["attention"][j]
        assert probs.shape == (8, 64, 64)
        assert np.allclose(probs.sum(-1), 1, atol=1e-6)


def test_zero_queries_give_uniform_attention(tiny, rng):
    nh, n, dh = TINY.heads, 6, TINY.head_dim
    v = rng.normal(size=(nh, n, dh)).astype(np.float32)
    w = zeroed(tiny, lambda name: name == "cdam2.o.bias")
    w["cdam2.o.weight"].data = np.eye(TINY.embed_dim, dtype=np.float32)
    out, probs = blocks.attend(w, "cdam2", TINY, Tensor(np.zeros((nh, n, dh), np.float32)),
                               Tensor(rng.normal(size=(nh, n, dh)).astype(np.float32)), Tensor(v))
    assert np.allclose(probs.data, 1.0 / n)
    expected = np.repeat(v.mean(axis=1)[:, None, :], n, axis=1).transpose(1, 0, 2).reshape(n, -1)
    assert np.allclose(out.data, expected, atol=1e-6)


def test_aggregate(rng):
    z = Tensor(np.zeros((64, 256), np.float32))
    t = Tensor(rng.normal(size=(64, 256)).astype(np.float32))
    u = Tensor(rng.normal(size=(64, 256)).astype(np.float32))
    assert np.array_equal(blocks.aggregate_cdam([z, z, t], (8, 8)).data, t.data.T.reshape(256, 8, 8))
    assert np.allclose(blocks.aggregate_cdam([t, u, z], (8, 8)).data, blocks.aggregate_cdam([u, z, t], (8, 8)).data)


def test_wsb_zero_blocks_doubles(tiny, rng):
    w = zeroed(tiny, lambda n: n.startswith("wsb"))
    f = rng.normal(size=(16, 8, 8)).astype(np.float32)
    assert np.allclose(blocks.wsb_forward(w, 2, Tensor(f)).data, 2 * f, atol=1e-5)


def test_wsb_hh_path(tiny, rng):
    # perturbing only HH content changes the frequency branch through HH alone
    w = zeroed(tiny, lambda n: n.startswith("wsb2.rb"))
    f = rng.normal(size=(16, 8, 8)).astype(np.float32)
    g = f.copy()
    g[:, 0::2, 0::2] += 0.1
    g[:, 1::2, 1::2] += 0.1
    g[:, 0::2, 1::2] -= 0.1
    g[:, 1::2, 0::2] -= 0.1  # +0.2 in HH, zero in LL/LH/HL
    assert np.allclose(dwt2(g - f).ll, 0, atol=1e-6)
    d = blocks.wsb_forward(w, 2, Tensor(g)).data - blocks.wsb_forward(w, 2, Tensor(f)).data
    sub = dwt2(d - (g - f))
    assert np.allclose(sub.ll, 0, atol=1e-5) and np.allclose(sub.lh, 0, atol=1e-5) and np.allclose(sub.hl, 0, atol=1e-5)


def test_rgd_shapes(default_weights, rng):
    x = Tensor(rng.normal(size=(256, 8, 8)).astype(np.float32))
    out = blocks.rgd_forward(default_weights, 1, x, Tensor(np.zeros((256, 8, 8), np.float32)))
    assert out.shape == (128, 16, 16)
    assert np.array_equal(out.data, blocks.rgd_forward(default_weights, 1, x, Tensor(np.zeros((256, 8, 8), np.float32))).data)


# -- full model -------------------------------------------------------------------------------

def test_shape_contract(default_weights, rng):
    with no_grad():
        img, _ = model_forward(default_weights, voxel(rng, DEFAULT, 64, 64))
        assert img.shape == (1, 64, 64)
        img, _ = model_forward(default_weights, voxel(rng, DEFAULT, 100, 76))
        assert img.shape == (1, 100, 76)


def test_bins_mismatch_rejected(tiny):
    with pytest.raises(ConfigError):
        model_forward(tiny, np.zeros((4, 32, 32), np.float32))


def test_state_evolves_on_zero_input(tiny, rng):
    # fresh init has zero biases, so an all-zero input would stay exactly zero
    w = tiny.copy()
    for name, p in w.named_parameters():
        if name.endswith(".bias"):
            p.data = rng.normal(scale=0.1, size=p.shape).astype(np.float32)
    m = MSFETE2V(w)
    z = np.zeros((5, 32, 32), np.float32)
    with no_grad():
        a, b = m(z).data, m(z).data
    assert not np.array_equal(a, b)


def test_determinism_and_reset(tiny, rng):
    seq = [voxel(rng) for _ in range(3)]
    with no_grad():
        m = MSFETE2V(tiny)
        first = [m(v).data for v in seq]
        m.reset_state()
        again = [m(v).data for v in seq]
        fresh = [MSFETE2V(tiny).forward(v).data for v in seq[:1]]
    assert all(np.array_equal(a, b) for a, b in zip(first, again))
    assert np.array_equal(first[0], fresh[0])


def test_zero_residual_blocks_reduce_to_skip_path(tiny, rng, monkeypatch):
    w = zeroed(tiny, lambda n: any(k in n for k in ("_rb.", ".rb.", "hh_rb.")))
    x = voxel(rng)
    with no_grad():
        got, _ = model_forward(w, x)
        monkeypatch.setattr(blocks, "residual_block", lambda W, name, t: t)
        expected, _ = model_forward(w, x)
    assert np.array_equal(got.data, expected.data)


@pytest.mark.parametrize("variant", [
    {"depth": 1}, {"depth": 2}, {"depth": 4}, {"cdam_mode": "ll"}, {"cdam_mode": "hf"},
    {"bins": 2}, {"bins": 10}, {"attn_scale": "head"}, {"lstm_kernel": 3},
])
def test_ablation_variants_forward(variant, rng):
    cfg = dataclasses.replace(TINY, **variant)
    w = init_weights(cfg, 1)
    trace = {}
    with no_grad():
        img, state = model_forward(w, voxel(rng, cfg, 40, 36), None, trace)
        img, _ = model_forward(w, voxel(rng, cfg, 40, 36), state, trace)
    assert img.shape == (1, 40, 36) and np.all(np.isfinite(img.data))
    assert len(trace["attention"]) == cfg.depth
    for probs in trace["attention"].values():
        assert np.allclose(probs.sum(-1), 1, atol=1e-6)
