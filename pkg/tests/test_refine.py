import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdsr import grad as gc
from gdsr.errors import InvalidInputError, ShapeError
from gdsr.refine import (
    RefineNetConfig,
    build_refine_net,
    layer_plan,
    plan_radius,
    receptive_field_radius,
    refine_forward,
)
from gradcheck import check_op

SMALL = RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=1)


def randomize_projection(net, rng, scale=0.3):
    w, b = net.layers["proj"]
    w.tensor.data = rng.uniform(-scale, scale, w.tensor.shape).astype(w.tensor.data.dtype)
    b.tensor.data = rng.uniform(-scale, scale, b.tensor.shape).astype(b.tensor.data.dtype)


def inputs(rng, h, w, c=3, n=1):
    return (gc.Tensor(rng.standard_normal((n, 1, h, w))), gc.Tensor(rng.standard_normal((n, c, h, w))))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.sampled_from([8, 16, 24]), st.floats(1e-3, 1e4))
def test_fresh_net_is_identity(seed, stages, size, scale):
    cfg = RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=stages)
    net = build_refine_net(cfg, seed)
    rng = np.random.default_rng(seed)
    x = gc.Tensor((rng.standard_normal((2, 1, size, size)) * scale).astype(np.float32))
    g = gc.Tensor(rng.standard_normal((2, 3, size, size)))
    assert np.array_equal(net(x, g).data, x.data)


def test_same_seed_same_parameters():
    a, b = build_refine_net(SMALL, 7), build_refine_net(SMALL, 7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name and np.array_equal(pa.data, pb.data)
    c = build_refine_net(SMALL, 8)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_default_parameter_count():
    cfg = RefineNetConfig()
    hd, k2 = cfg.hidden_dim, 9
    conv = hd * hd * k2 + hd
    expected = ((cfg.guide_channels + 1) * hd * k2 + hd
                + conv * (2 * cfg.n_scale_stages + 2 * cfg.n_res_blocks)
                + hd * k2 + 1)
    assert expected == 446_081
    assert build_refine_net(cfg).parameter_count() == expected


@pytest.mark.parametrize("size", [64, 128, 256])
def test_output_shape(size, rng):
    net = build_refine_net(RefineNetConfig())
    x, g = inputs(rng, size, size)
    assert refine_forward(net, x, g).shape == (1, 1, size, size)


def test_shape_errors(rng):
    net = build_refine_net(SMALL)
    with pytest.raises(ShapeError):
        net(*inputs(rng, 9, 8))
    with pytest.raises(ShapeError):
        net(*inputs(rng, 8, 8, c=2))
    with pytest.raises(InvalidInputError):
        RefineNetConfig(hidden_dim=4)


# -- receptive field ---------------------------------------------------------


def test_minimal_net_radius():
    # conv_in, two convs in the residual block, projection: four 3x3 convs
    cfg = RefineNetConfig(n_res_blocks=1, n_scale_stages=0)
    assert layer_plan(cfg) == ["conv"] * 4
    assert receptive_field_radius(cfg) == 4


@pytest.mark.parametrize("stages,blocks", [(0, 1), (1, 2), (2, 4), (3, 1)])
def test_extra_full_resolution_conv_adds_one(stages, blocks):
    plan = layer_plan(RefineNetConfig(n_res_blocks=blocks, n_scale_stages=stages))
    assert plan_radius(plan + ["conv"]) == plan_radius(plan) + 1
    assert plan_radius(["conv"] + plan) == plan_radius(plan) + 1


def test_default_radius_below_64():
    assert receptive_field_radius(RefineNetConfig()) == 43


def _output_change(net, x, g, pos, out, rng):
    x2 = x.data.copy()
    x2[0, 0, pos[0], pos[1]] += 1.0 + rng.random()
    g2 = g.data.copy()
    g2[0, :, pos[0], pos[1]] += 1.0
    y = net(gc.Tensor(x2), gc.Tensor(g2)).data
    base = net(x, g).data
    return y[0, 0, out[0], out[1]] - base[0, 0, out[0], out[1]]


@pytest.mark.parametrize("cfg", [SMALL, RefineNetConfig(hidden_dim=16, n_res_blocks=2, n_scale_stages=2)])
def test_perturbation_outside_radius_has_no_effect(cfg, rng):
    net = build_refine_net(cfg, 3)
    randomize_projection(net, rng)
    r = receptive_field_radius(cfg)
    size = 2 * r + 8 + (-(2 * r + 8)) % cfg.size_multiple
    x, g = inputs(rng, size, size)
    for _ in range(100):
        out = tuple(rng.integers(0, size, 2))
        while True:
            pos = tuple(rng.integers(0, size, 2))
            if max(abs(pos[0] - out[0]), abs(pos[1] - out[1])) > r:
                break
        assert _output_change(net, x, g, pos, out, rng) == 0


def test_radius_is_tight_for_minimal_net(rng):
    cfg = RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=0)
    net = build_refine_net(cfg, 5)
    randomize_projection(net, rng)
    x, g = inputs(rng, 16, 16)
    # both the guide and the DSM feed conv_in; a pixel exactly r away still matters
    assert _output_change(net, x, g, (8, 12), (8, 8), rng) != 0
    assert _output_change(net, x, g, (8, 13), (8, 8), rng) == 0


def test_translation_covariance(rng):
    cfg = RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=2)
    net = build_refine_net(cfg, 1)
    randomize_projection(net, rng)
    x, g = inputs(rng, 64, 64)
    s = cfg.size_multiple
    y = net(x, g).data
    ys = net(gc.Tensor(np.roll(x.data, s, axis=3)), gc.Tensor(np.roll(g.data, s, axis=3))).data
    band = receptive_field_radius(cfg) + s
    assert np.allclose(ys[..., band:-band, band + s:-band], y[..., band:-band, band:-band - s], atol=1e-5)


# -- training behaviour ------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_one_step_decreases_loss(seed):
    rng = np.random.default_rng(seed)
    net = build_refine_net(SMALL, seed)
    x, g = inputs(rng, 16, 16)
    target = gc.Tensor(x.data + 0.5 * rng.standard_normal(x.shape))
    params = net.parameters()
    loss0 = gc.l1_loss(net(x, g), target)
    gc.zero_grad(params)
    gc.backward(loss0)
    gc.adam_step(params, 1e-4)
    loss1 = gc.l1_loss(net(x, g), target)
    assert loss1.item() < loss0.item()


def test_network_gradients_match_finite_differences(rng):
    with gc.precision(np.float64):
        net = build_refine_net(RefineNetConfig(hidden_dim=8, n_res_blocks=1, n_scale_stages=1), 2)
        for p in net.parameters():
            p.tensor.data = p.tensor.data.astype(np.float64)
        randomize_projection(net, rng)
    err = check_op(lambda d, g: refine_forward(net, d, g),
                   [rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 3, 4, 4))], np.float64)
    assert err < 1e-4
