import dataclasses
import math

import numpy as np
import pytest

import oracles
from cfpneck import evc as E
from cfpneck import params as P
from cfpneck import tensor as T
from cfpneck.evc import Codebook, EvcConfig
from cfpneck.layers import BatchNormParams, init_batch_norm
from cfpneck.tensor import ConvSpec, ShapeError, Tensor


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), np.float64)


def small_cfg(**kw):
    base = dict(channels=4, expansion=2, groupnorm_groups=2, codewords=3)
    base.update(kw)
    return EvcConfig(**base)


def random_params(factory, seed=0):
    rng = np.random.default_rng(seed)
    return P.randomize(factory(rng), rng)


def bn_tuple(bn):
    return (bn.running_mean.data, bn.running_var.data, bn.gamma.data, bn.beta.data, bn.eps)


# -------------------------------------------------------------------- config


def test_config_defaults():
    cfg = EvcConfig()
    assert (cfg.channels, cfg.expansion, cfg.dconv_kernel, cfg.codewords) == (256, 4, 1, 64)
    assert cfg.effective_groups == 32
    assert EvcConfig(channels=8).effective_groups == 8
    with pytest.raises(ValueError):
        EvcConfig(channels=12, groupnorm_groups=8).effective_groups
    with pytest.raises(ValueError):
        EvcConfig(dconv_kernel=2)
    with pytest.raises(ValueError):
        EvcConfig(droppath=1.0)


# ----------------------------------------------------------------------- stem


def test_stem_shape_contract():
    p = E.init_stem(np.random.default_rng(0), 64, EvcConfig())
    assert p.conv.kernel == (7, 7) and p.conv.padding == 3 and p.conv.stride == 1
    assert E.stem_forward(Tensor(np.zeros((1, 64, 8, 8))), p).shape == (1, 256, 8, 8)


def test_stem_identity_embedding():
    # a 7x7 kernel with only the centre tap set acts like a 1x1 identity
    w = np.zeros((4, 4, 7, 7))
    for c in range(4):
        w[c, c, 3, 3] = 1.0
    p = E.init_stem(np.random.default_rng(0), 4, small_cfg())
    p = dataclasses.replace(p, conv=dataclasses.replace(p.conv, weight=t64(w), bias=t64(np.zeros(4))))
    p = P.cast(p, np.float64)
    bn = init_batch_norm(4, eps=1e-12)
    p = dataclasses.replace(p, bn=P.cast(bn, np.float64))
    x = np.random.default_rng(1).normal(size=(1, 4, 5, 5))
    np.testing.assert_allclose(E.stem_forward(t64(x), p).numpy(), np.maximum(x, 0), atol=1e-9)


def test_stem_matches_op_oracles():
    p = random_params(lambda r: E.init_stem(r, 3, small_cfg()))
    x = np.random.default_rng(2).normal(size=(1, 3, 5, 5))
    conv = oracles.conv2d(x, p.conv.weight.data, p.conv.bias.data, 1, 3)
    want = oracles.relu(oracles.batch_norm(conv, *bn_tuple(p.bn)))
    np.testing.assert_allclose(E.stem_forward(t64(x), p).numpy(), want, atol=1e-9)


# ------------------------------------------------------------ lightweight MLP


def zero_scales(p):
    z = t64(np.zeros(p.scale1.shape))
    return dataclasses.replace(p, scale1=z, scale2=z)


def test_zero_scales_make_mlp_branch_identity():
    p = zero_scales(random_params(lambda r: E.init_mlp_block(r, small_cfg(dconv_kernel=3))))
    x = t64(np.random.default_rng(3).normal(size=(2, 4, 3, 3)))
    np.testing.assert_array_equal(E.dconv_block_forward(x, p).numpy(), x.numpy())
    np.testing.assert_array_equal(E.channel_mlp_block_forward(x, p).numpy(), x.numpy())
    np.testing.assert_array_equal(E.lightweight_mlp_forward(x, p).numpy(), x.numpy())


def test_dconv_block_definition():
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg(dconv_kernel=3)))
    p = dataclasses.replace(p, scale1=t64(np.ones(4)))
    x = np.random.default_rng(4).normal(size=(1, 4, 4, 4))
    gn = oracles.group_norm(x, 2, p.gn1.gamma.data, p.gn1.beta.data, p.gn1.eps)
    want = oracles.conv2d(gn, p.dconv.weight.data, p.dconv.bias.data, 1, 1, 4) + x
    np.testing.assert_allclose(E.dconv_block_forward(t64(x), p).numpy(), want, atol=1e-9)


def test_eval_mode_ignores_droppath_rate():
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg()))
    dropped = dataclasses.replace(p, droppath1=0.7, droppath2=0.7)
    x = t64(np.random.default_rng(5).normal(size=(2, 4, 3, 3)))
    np.testing.assert_array_equal(
        E.lightweight_mlp_forward(x, dropped).numpy(), E.lightweight_mlp_forward(x, p).numpy()
    )


def test_channel_mlp_per_pixel_oracle():
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg()))
    x = np.random.default_rng(6).normal(size=(1, 4, 2, 2))
    gn = oracles.group_norm(x, 2, p.gn2.gamma.data, p.gn2.beta.data, p.gn2.eps)
    want = np.empty_like(x)
    for i in range(2):
        for j in range(2):
            h = oracles.linear(gn[0, :, i, j], p.fc1.weight.data, p.fc1.bias.data)
            h = np.array([v * oracles.sigmoid(v) for v in h])
            y = oracles.linear(h, p.fc2.weight.data, p.fc2.bias.data)
            want[0, :, i, j] = p.scale2.data * y + x[0, :, i, j]
    np.testing.assert_allclose(E.channel_mlp_block_forward(t64(x), p).numpy(), want, atol=1e-9)


def test_channel_mlp_is_equivariant_to_pixel_permutation():
    # group norm statistics are permutation invariant, so the whole block is equivariant
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg()))
    x = np.random.default_rng(7).normal(size=(1, 4, 3, 3))
    perm = np.random.default_rng(8).permutation(9)
    xp = x.reshape(1, 4, 9)[:, :, perm].reshape(x.shape)
    a = E.channel_mlp_block_forward(t64(x), p).numpy().reshape(1, 4, 9)[:, :, perm]
    b = E.channel_mlp_block_forward(t64(xp), p).numpy().reshape(1, 4, 9)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_lightweight_mlp_composition_and_shape():
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg()))
    x = t64(np.random.default_rng(9).normal(size=(1, 4, 3, 3)))
    composed = E.channel_mlp_block_forward(E.dconv_block_forward(x, p), p)
    np.testing.assert_array_equal(E.lightweight_mlp_forward(x, p).numpy(), composed.numpy())
    full = E.init_mlp_block(np.random.default_rng(0), EvcConfig())
    assert E.lightweight_mlp_forward(Tensor(np.zeros((1, 256, 8, 8))), full).shape == (1, 256, 8, 8)


# ------------------------------------------------------------------ codebook


def identity_bn(k):
    return P.cast(init_batch_norm(k, eps=1e-12), np.float64)


def test_lvc_encode_single_codeword():
    cb = Codebook(t64([[0.5]]), t64([1.0]))
    x = t64(np.full((1, 1, 1, 1), 2.0))
    np.testing.assert_array_equal(E.lvc_assignments(x, cb).numpy(), [[[1.0]]])
    np.testing.assert_allclose(E.lvc_residuals(x, cb).numpy(), [[[1.5]]])
    np.testing.assert_allclose(E.lvc_encode(x, cb, identity_bn(1)).numpy(), [[1.5]], rtol=1e-9)


def test_lvc_encode_zero_residual():
    rng = np.random.default_rng(10)
    b = rng.normal(size=3)
    cb = Codebook(t64(b[None]), t64([2.0]))
    x = t64(np.broadcast_to(b[None, :, None, None], (1, 3, 2, 2)))
    np.testing.assert_allclose(E.lvc_residuals(x, cb).numpy(), 0.0, atol=1e-12)


def test_lvc_encode_equidistant_codewords():
    cb = Codebook(t64([[0.0], [2.0]]), t64([1.0, 1.0]))
    x = t64(np.ones((1, 1, 1, 1)))
    np.testing.assert_allclose(E.lvc_assignments(x, cb).numpy(), [[[0.5, 0.5]]])
    np.testing.assert_allclose(E.lvc_residuals(x, cb).numpy(), [[[0.5], [-0.5]]])
    # relu(bn) then mean over the two codewords: (0.5 + 0) / 2
    np.testing.assert_allclose(E.lvc_encode(x, cb, identity_bn(2)).numpy(), [[0.25]], rtol=1e-9)
    want = oracles.lvc_encode(x.data, cb.codewords.data, cb.smoothing.data, bn_tuple(identity_bn(2)))
    np.testing.assert_allclose(E.lvc_encode(x, cb, identity_bn(2)).numpy(), want, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lvc_encode_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    C, K = 3, 4
    cb = Codebook(t64(rng.normal(size=(K, C))), t64(rng.uniform(0.5, 1.5, K)))
    bn = BatchNormParams(t64(rng.normal(size=K)), t64(rng.uniform(0.5, 2, K)), t64(rng.normal(size=K)), t64(rng.normal(size=K)))
    x = rng.normal(size=(2, C, 3, 2))
    want = oracles.lvc_encode(x, cb.codewords.data, cb.smoothing.data, bn_tuple(bn))
    np.testing.assert_allclose(E.lvc_encode(t64(x), cb, bn).numpy(), want, atol=1e-10)


def test_lvc_encode_errors():
    cb = Codebook(t64(np.zeros((2, 3))), t64(np.ones(2)))
    with pytest.raises(ShapeError):
        E.lvc_encode(t64(np.zeros((1, 4, 2, 2))), cb, identity_bn(2))
    with pytest.raises(ShapeError):
        E.lvc_encode(t64(np.zeros((1, 3, 2, 2))), cb, identity_bn(3))
    with pytest.raises(ShapeError):
        Codebook(t64(np.zeros((2, 3))), t64(np.ones(3)))


# ----------------------------------------------------------------------- LVC


def closed_gate(p, bias):
    C = p.proj.out_channels
    proj = dataclasses.replace(p.proj, weight=t64(np.zeros(p.proj.weight.shape)), bias=t64(np.full(C, bias)))
    return dataclasses.replace(p, proj=proj)


def test_lvc_half_gate_scales_input():
    p = closed_gate(random_params(lambda r: E.init_lvc(r, small_cfg())), 0.0)
    x = t64(np.random.default_rng(11).normal(size=(2, 4, 3, 3)))
    np.testing.assert_allclose(E.lvc_forward(x, p).numpy(), 1.5 * x.numpy(), rtol=1e-12)


def test_lvc_closed_gate_returns_input():
    p = closed_gate(random_params(lambda r: E.init_lvc(r, small_cfg())), -19.0)
    x = t64(np.random.default_rng(12).normal(size=(1, 4, 3, 3)))
    e = E.lvc_encode(E.lvc_encoder_features(x, p), p.codebook, p.phi_bn)
    assert E.lvc_gate(e, p).numpy().max() <= 1e-8
    np.testing.assert_allclose(E.lvc_forward(x, p).numpy(), x.numpy(), atol=1e-6)


def test_lvc_gate_bounded():
    p = random_params(lambda r: E.init_lvc(r, small_cfg()), seed=3)
    x = t64(np.random.default_rng(13).normal(size=(2, 4, 3, 3)))
    e = E.lvc_encode(E.lvc_encoder_features(x, p), p.codebook, p.phi_bn)
    w = E.lvc_gate(e, p).numpy()
    assert ((w > 0) & (w < 1)).all()
    assert (np.abs(E.lvc_forward(x, p).numpy()) <= 2 * np.abs(x.numpy()) + 1e-12).all()


def test_lvc_forward_tiny_brute_force():
    cfg = EvcConfig(channels=2, groupnorm_groups=1, codewords=2)
    p = random_params(lambda r: E.init_lvc(r, cfg), seed=4)
    x = np.random.default_rng(14).normal(size=(1, 2, 2, 2))

    def cbr(h, layer):
        pad = layer.conv.kernel[0] // 2
        return oracles.relu(oracles.batch_norm(oracles.conv2d(h, layer.conv.weight.data, layer.conv.bias.data, 1, pad), *bn_tuple(layer.bn)))

    h = x
    for layer in p.conv_block:
        h = cbr(h, layer)
    h = cbr(h, p.cbr)
    e = oracles.lvc_encode(h, p.codebook.codewords.data, p.codebook.smoothing.data, bn_tuple(p.phi_bn))
    z = oracles.linear(e, p.fc.weight.data, p.fc.bias.data)
    z = oracles.linear(z, p.proj.weight.data[:, :, 0, 0], p.proj.bias.data)
    w = np.vectorize(oracles.sigmoid)(z)
    want = x + x * w[:, :, None, None]
    np.testing.assert_allclose(E.lvc_forward(t64(x), p).numpy(), want, atol=1e-10)


# ----------------------------------------------------------------------- EVC


def test_evc_default_shape_contract():
    p = E.init_evc_params(1024, EvcConfig(), np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(1, 1024, 8, 8)))
    assert E.evc_forward(x, p).shape == (1, 256, 8, 8)
    cat = E.evc_concat(x, p)
    assert cat.shape == (1, 512, 8, 8)
    _, mlp_out, _ = E.evc_branches(x, p)
    np.testing.assert_array_equal(cat.numpy()[:, :256], mlp_out.numpy())


def test_evc_averaging_projection():
    cfg = small_cfg()
    p = random_params(lambda r: E.init_evc_params(3, cfg, r))
    w = np.zeros((4, 8, 1, 1))
    for c in range(4):
        w[c, c] = w[c, 4 + c] = 0.5
    p = dataclasses.replace(p, fuse_proj=ConvSpec(8, 4, 1, 1, 0, 1, t64(w), t64(np.zeros(4))))
    x = t64(np.random.default_rng(15).normal(size=(1, 3, 4, 4)))
    _, mlp_out, lvc_out = E.evc_branches(x, p)
    want = (mlp_out.numpy() + lvc_out.numpy()) / 2
    np.testing.assert_allclose(E.evc_forward(x, p).numpy(), want, atol=1e-12)


def test_evc_eval_deterministic():
    p = E.init_evc_params(8, small_cfg(), np.random.default_rng(0))
    x = Tensor(np.random.default_rng(16).normal(size=(2, 8, 4, 4)))
    assert E.evc_forward(x, p).numpy().tobytes() == E.evc_forward(x, p).numpy().tobytes()


def test_init_is_seeded():
    a = E.init_evc_params(8, small_cfg(), np.random.default_rng(3))
    b = E.init_evc_params(8, small_cfg(), np.random.default_rng(3))
    for (na, ta), (nb, tb) in zip(P.named_tensors(a).items(), P.named_tensors(b).items()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    cb = E.init_codebook(np.random.default_rng(0), 64, 256)
    assert np.abs(cb.codewords.data).max() <= 1 / math.sqrt(256)
    np.testing.assert_array_equal(cb.smoothing.data, 1.0)
    mlp = E.init_mlp_block(np.random.default_rng(0), EvcConfig())
    np.testing.assert_allclose(mlp.scale1.data, 1e-6)


# ------------------------------------------------------------------ droppath


def branch_contribution(p, x, training, rng):
    return (E.dconv_block_forward(x, p, training, rng).data - x.data)


@pytest.mark.parametrize("rate", [0.1, 0.5])
def test_droppath_rescale_keeps_expectation(rate):
    p = random_params(lambda r: E.init_mlp_block(r, small_cfg()))
    p = dataclasses.replace(p, droppath1=rate, droppath_rescale=True)
    x = t64(np.random.default_rng(17).normal(size=(1, 4, 2, 2)))
    ref = branch_contribution(p, x, False, None)
    big = t64(np.broadcast_to(x.data, (10_000,) + x.shape[1:]))
    samples = branch_contribution(p, big, True, np.random.default_rng(18))
    mean, se = samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    assert (np.abs(mean - ref[0]) <= 3 * se + 1e-12).all()
