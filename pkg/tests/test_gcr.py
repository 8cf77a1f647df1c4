import dataclasses

import numpy as np
import pytest

from cfpneck import params as P
from cfpneck import tensor as T
from cfpneck.evc import EvcConfig, evc_forward
from cfpneck.gcr import (
    GcrConfig,
    Pyramid,
    PyramidError,
    cfp_forward,
    gcr_fusion_input,
    gcr_regulate_level,
    init_cfp_params,
    level_stride,
    upsample_to,
)
from cfpneck.layers import init_conv
from cfpneck.tensor import ConvSpec, Tape, Tensor

SMALL = EvcConfig(channels=8, expansion=2, groupnorm_groups=2, codewords=3)


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), np.float64)


def pyramid(channels, sizes, seed=0, batch=1, first=None):
    rng = np.random.default_rng(seed)
    first = 5 - len(channels) if first is None else first
    return Pyramid({first + k: Tensor(rng.normal(size=(batch, c, s, s))) for k, (c, s) in enumerate(zip(channels, sizes))})


# -------------------------------------------------------------------- Pyramid


def test_pyramid_geometry():
    pyr = pyramid((4, 4, 4), (8, 4, 2))
    assert list(pyr.levels) == [2, 3, 4]
    assert pyr.strides == {2: 8, 3: 16, 4: 32}
    assert [level_stride(i) for i in range(5)] == [2, 4, 8, 16, 32]
    assert pyr.deepest == 4
    with pytest.raises(PyramidError):
        pyramid((4, 4), (8, 8))
    with pytest.raises(PyramidError):
        Pyramid({3: Tensor(np.zeros((1, 1, 4, 4))), 4: Tensor(np.zeros((2, 1, 2, 2)))})
    with pytest.raises(PyramidError):
        Pyramid({5: Tensor(np.zeros((1, 1, 2, 2)))})
    with pytest.raises(PyramidError):
        pyr[0]


def test_upsample_to_powers_of_two_only():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    assert upsample_to(x, (8, 8)).shape == (1, 1, 8, 8)
    with pytest.raises(PyramidError):
        upsample_to(x, (6, 6))
    with pytest.raises(PyramidError):
        upsample_to(x, (2, 2))
    with pytest.raises(PyramidError):
        upsample_to(x, (4, 8))


# ------------------------------------------------------------ regulate level


def test_regulate_level_shape_contract():
    rng = np.random.default_rng(0)
    lateral, fuse = init_conv(rng, 512, 256, 1), init_conv(rng, 512, 256, 1)
    out = gcr_regulate_level(Tensor(np.zeros((1, 512, 16, 16))), Tensor(np.zeros((1, 256, 8, 8))), lateral, fuse)
    assert out.shape == (1, 256, 16, 16)
    with pytest.raises(T.ShapeError):
        gcr_regulate_level(Tensor(np.zeros((1, 256, 16, 16))), Tensor(np.zeros((1, 256, 8, 8))), lateral, fuse)


def test_constant_deep_map_is_spatially_constant_after_upsampling():
    rng = np.random.default_rng(1)
    lateral = init_conv(rng, 6, 4, 1)
    deep = Tensor(np.broadcast_to(rng.normal(size=(1, 4, 1, 1)), (1, 4, 2, 2)))
    fused = gcr_fusion_input(Tensor(rng.normal(size=(1, 6, 8, 8))), deep, lateral).numpy()
    up = fused[:, 4:]
    np.testing.assert_array_equal(up, np.broadcast_to(up[:, :, :1, :1], up.shape))


def test_selector_projection_returns_lateral():
    rng = np.random.default_rng(2)
    lateral = init_conv(rng, 6, 4, 1)
    w = np.zeros((4, 8, 1, 1))
    w[np.arange(4), np.arange(4)] = 1.0
    fuse = ConvSpec(8, 4, 1, 1, 0, 1, Tensor(w), Tensor(np.zeros(4)))
    shallow, deep = Tensor(rng.normal(size=(1, 6, 8, 8))), Tensor(rng.normal(size=(1, 4, 4, 4)))
    out = gcr_regulate_level(shallow, deep, lateral, fuse)
    np.testing.assert_array_equal(out.numpy(), T.conv2d(shallow, lateral).numpy())


# ---------------------------------------------------------------- cfp_forward


def test_default_shape_contract():
    pyr = pyramid((256, 512, 1024), (32, 16, 8))
    params = init_cfp_params({2: 256, 3: 512, 4: 1024}, rng=0)
    out = cfp_forward(pyr, params)
    assert out.shapes() == {2: (1, 256, 32, 32), 3: (1, 256, 16, 16), 4: (1, 256, 8, 8)}


def test_empty_regulated_set_passes_shallow_levels_through():
    pyr = pyramid((4, 6, 8), (8, 4, 2), first=2)
    cfg = GcrConfig(regulated_levels=())
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, cfg, 0)
    out = cfp_forward(pyr, params, cfg)
    for i in (2, 3):
        assert out[i] is pyr[i]
    np.testing.assert_array_equal(out[4].numpy(), evc_forward(pyr[4], params.evc).numpy())


def test_unregulated_level_passes_through_untouched():
    pyr = pyramid((3, 4, 6, 8), (16, 8, 4, 2))
    params = init_cfp_params({1: 3, 2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    out = cfp_forward(pyr, params)
    assert out[1] is pyr[1]
    assert out[2].shape == (1, 8, 16 // 2, 16 // 2)


def test_regulation_uses_evc_output_directly():
    pyr = pyramid((4, 6, 8), (8, 4, 2))
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    out = cfp_forward(pyr, params)
    reg = evc_forward(pyr[4], params.evc)
    for i in (3, 2):
        want = gcr_regulate_level(pyr[i], reg, params.lateral[i], params.fuse[i])
        np.testing.assert_array_equal(out[i].numpy(), want.numpy())


def test_chained_variant_feeds_previous_level():
    pyr = pyramid((4, 6, 8), (8, 4, 2))
    cfg = GcrConfig(chained=True)
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, cfg, 0)
    out = cfp_forward(pyr, params, cfg)
    want = gcr_regulate_level(pyr[2], out[3], params.lateral[2], params.fuse[2])
    np.testing.assert_array_equal(out[2].numpy(), want.numpy())


def test_repeat_two_is_composition():
    pyr = pyramid((8, 8, 8), (8, 4, 2))
    one = GcrConfig(repeat=1)
    params = init_cfp_params({2: 8, 3: 8, 4: 8}, SMALL, one, 0)
    twice = cfp_forward(cfp_forward(pyr, params, one), params, one)
    direct = cfp_forward(pyr, params, GcrConfig(repeat=2))
    for i in (2, 3, 4):
        np.testing.assert_array_equal(direct[i].numpy(), twice[i].numpy())


def test_repeat_requires_common_width():
    pyr = pyramid((4, 6, 8), (8, 4, 2))
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    with pytest.raises(PyramidError):
        cfp_forward(pyr, params, GcrConfig(repeat=2))


def test_missing_levels_are_errors():
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    with pytest.raises(PyramidError):
        cfp_forward(pyramid((6, 8), (4, 2)), params)
    with pytest.raises(ValueError):
        GcrConfig(regulated_levels=(4,))
    with pytest.raises(ValueError):
        GcrConfig(repeat=0)


def test_locality_of_perturbation():
    pyr = pyramid((3, 4, 6, 8), (16, 8, 4, 2))
    params = init_cfp_params({1: 3, 2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    base = cfp_forward(pyr, params)
    levels = dict(pyr.levels)
    levels[1] = Tensor(pyr[1].numpy() + 1.0)
    bumped = cfp_forward(Pyramid(levels), params)
    assert not np.array_equal(bumped[1].numpy(), base[1].numpy())
    for i in (2, 3, 4):
        np.testing.assert_array_equal(bumped[i].numpy(), base[i].numpy())


def test_top_down_flow_reaches_every_regulated_level():
    rng = np.random.default_rng(5)
    params = P.randomize(init_cfp_params({2: 4, 3: 4, 4: 4}, SMALL, GcrConfig(), 0), rng)
    maps = {i: t64(rng.normal(size=(1, 4, s, s))) for i, s in ((2, 8), (3, 4), (4, 2))}
    for level in (2, 3):
        tape = Tape()
        x4 = tape.watch(maps[4])
        out = cfp_forward(Pyramid({**maps, 4: x4}), params)
        (g,) = tape.backward(T.sum_all(T.mul(out[level], t64(rng.normal(size=out[level].shape)))), [x4])
        assert np.abs(g).max() > 0


def test_eval_forward_is_bit_deterministic():
    pyr = pyramid((4, 6, 8), (8, 4, 2), batch=2)
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, SMALL, GcrConfig(), 0)
    a, b = cfp_forward(pyr, params), cfp_forward(pyr, params)
    for i in a.levels:
        assert a[i].numpy().tobytes() == b[i].numpy().tobytes()


def test_train_mode_droppath_is_seeded():
    cfg = dataclasses.replace(SMALL, droppath=0.5)
    pyr = pyramid((4, 6, 8), (8, 4, 2), batch=4)
    params = init_cfp_params({2: 4, 3: 6, 4: 8}, cfg, GcrConfig(), 0)
    a = cfp_forward(pyr, params, training=True, rng=np.random.default_rng(1))
    b = cfp_forward(pyr, params, training=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a[2].numpy(), b[2].numpy())
