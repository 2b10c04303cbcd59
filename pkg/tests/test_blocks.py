import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypernet import blocks as hb
from hypernet.blocks import (BlockParams, NetworkSpec, StatePair, block_plan, classifier_head,
                             dense_head, forward_network, hyper_reverse, hyper_step, init_params,
                             opening_layer, param_count, symmetric_layer, up_reverse, up_step)
from hypernet.grad import reversal_errors
from hypernet.tensor import conv2d, conv2d_adjoint, relu
from hypernet.wavelet import haar_forward


def zero_block(c):
    return BlockParams(np.zeros((c, c, 3, 3)), np.zeros(c))


def rand_block(rng, c, scale=0.3):
    return BlockParams(scale * rng.standard_normal((c, c, 3, 3)), scale * rng.standard_normal(c))


def one_by_one(w):
    return BlockParams(np.full((1, 1, 1, 1), w), np.zeros(1))


# --- symmetric layer ---------------------------------------------------------


def test_symmetric_layer_examples():
    assert not symmetric_layer(np.ones((2, 3, 3)), zero_block(2)).any()
    assert symmetric_layer(np.ones((1, 1, 1)), one_by_one(1.0)).item() == -1.0
    assert symmetric_layer(np.full((1, 1, 1), -2.0), one_by_one(1.0)).item() == 0.0


def test_symmetric_layer_composes_public_ops(rng):
    y = rng.standard_normal((3, 5, 5))
    p = rand_block(rng, 3)
    ref = -conv2d_adjoint(relu(conv2d(y, p.K, p.b)), p.K)
    np.testing.assert_allclose(symmetric_layer(y, p), ref, rtol=0, atol=1e-13)
    with pytest.raises(ValueError):
        symmetric_layer(rng.standard_normal((2, 5, 5)), p)


@given(seed=st.integers(0, 2**31))
def test_symmetric_layer_is_monotone_decreasing(seed):
    # <f(a) - f(b), a - b> <= 0 because f = -K^T relu(K . + b) and relu is monotone
    r = np.random.default_rng(seed)
    p = rand_block(r, 2, 1.0)
    a, b = r.standard_normal((2, 2, 4, 4))
    assert np.vdot(symmetric_layer(a, p) - symmetric_layer(b, p), a - b) <= 1e-12


# --- leapfrog steps ----------------------------------------------------------


def test_constant_state_is_fixed_point(rng):
    c = np.full((2, 4, 4), 1.7)
    s = StatePair(c, c, 0)
    for _ in range(5):
        s = hyper_step(s, zero_block(2))
    np.testing.assert_array_equal(s.y_curr, c)
    np.testing.assert_array_equal(s.y_prev, c)


def test_zero_velocity_start_extrapolates_linearly(rng):
    y = rng.standard_normal((2, 4, 4))
    s = hyper_step(StatePair(np.zeros_like(y), y, 0), zero_block(2))
    np.testing.assert_array_equal(s.y_curr, 2 * y)
    back = hyper_reverse(s, zero_block(2))
    assert not back.y_prev.any()


def test_step_and_reverse_round_trip(rng):
    p = rand_block(rng, 3)
    s = StatePair(rng.standard_normal((3, 6, 6)), rng.standard_normal((3, 6, 6)), 0)
    back = hyper_reverse(hyper_step(s, p), p)
    assert np.max(np.abs(back.y_prev - s.y_prev)) < 1e-12
    assert np.max(np.abs(back.y_curr - s.y_curr)) < 1e-12


def test_coarsening_round_trip_restores_shapes(rng):
    p = rand_block(rng, 8)
    s = StatePair(rng.standard_normal((2, 6, 4)), rng.standard_normal((2, 6, 4)), 0)
    nxt = hyper_step(s, p, coarsen=True)
    assert nxt.y_curr.shape == (8, 3, 2) and nxt.level == 1
    back = hyper_reverse(nxt, p, coarsen=True)
    assert back.y_curr.shape == (2, 6, 4) and back.level == 0
    assert np.max(np.abs(back.y_prev - s.y_prev)) < 1e-12


def test_coarsening_step_uses_transformed_pair(rng):
    p = rand_block(rng, 4)
    prev, curr = rng.standard_normal((2, 1, 4, 4))
    s = hyper_step(StatePair(prev, curr, 0), p, coarsen=True)
    u = haar_forward(curr)
    ref = 2 * u - haar_forward(prev) + symmetric_layer(u, p)
    np.testing.assert_allclose(s.y_curr, ref, rtol=0, atol=1e-13)
    np.testing.assert_array_equal(s.y_prev, u)


def test_transform_alone_preserves_norm(rng):
    y = rng.standard_normal((3, 8, 8))
    s = hyper_step(StatePair(y, y, 0), zero_block(12), coarsen=True)
    assert abs(np.linalg.norm(s.y_curr) - np.linalg.norm(y)) <= 1e-12 * np.linalg.norm(y)


def test_refine_of_constant_coarse_state():
    coarse = np.zeros((4, 3, 3))
    coarse[0] = 2 * 1.5
    s = up_step(StatePair(coarse, coarse, 1), zero_block(1), refine=True)
    np.testing.assert_allclose(s.y_curr, np.full((1, 6, 6), 1.5), rtol=0, atol=1e-15)
    assert s.level == 0


def test_up_after_down_restores_resolution(rng):
    y = rng.standard_normal((1, 4, 4))
    s = hyper_step(StatePair(y, y, 0), zero_block(4), coarsen=True)
    s = up_step(s, zero_block(1), refine=True)
    assert s.y_curr.shape == y.shape
    np.testing.assert_allclose(s.y_curr, y, rtol=0, atol=1e-14)


def test_up_reverse_round_trip(rng):
    p = rand_block(rng, 2)
    s = StatePair(rng.standard_normal((8, 3, 3)), rng.standard_normal((8, 3, 3)), 1)
    back = up_reverse(up_step(s, p, refine=True), p, refine=True)
    assert np.max(np.abs(back.y_curr - s.y_curr)) < 1e-12
    assert np.max(np.abs(back.y_prev - s.y_prev)) < 1e-12


def test_step_shape_errors(rng):
    with pytest.raises(ValueError):
        hyper_step(StatePair(np.ones((1, 3, 4)), np.ones((1, 3, 4)), 0), zero_block(4), coarsen=True)
    with pytest.raises(ValueError):
        up_step(StatePair(np.ones((6, 2, 2)), np.ones((6, 2, 2)), 1), zero_block(1), refine=True)
    with pytest.raises(ValueError):
        hyper_step(StatePair(np.ones((2, 4, 4)), np.ones((2, 4, 4)), 0), zero_block(3))
    with pytest.raises(ValueError):
        StatePair(np.ones((1, 2, 2)), np.ones((1, 4, 4)), 0)


@given(seed=st.integers(0, 2**31), coarsen=st.booleans(), scale=st.floats(0.01, 1.0))
def test_reverse_inverts_step_property(seed, coarsen, scale):
    r = np.random.default_rng(seed)
    c = 2
    p = rand_block(r, 4 * c if coarsen else c, scale)
    s = StatePair(r.standard_normal((c, 4, 4)), r.standard_normal((c, 4, 4)), 0)
    back = hyper_reverse(hyper_step(s, p, coarsen), p, coarsen)
    assert np.max(np.abs(back.y_prev - s.y_prev)) < 1e-10
    assert np.max(np.abs(back.y_curr - s.y_curr)) < 1e-10


# --- opening layer and heads -------------------------------------------------


def test_opening_layer(rng):
    x = rng.standard_normal((2, 4, 4))
    s = opening_layer(x, np.zeros((3, 2, 3, 3)))
    assert not s.y_prev.any() and not s.y_curr.any() and s.level == 0
    eye = np.zeros((2, 2, 1, 1))
    eye[0, 0] = eye[1, 1] = 1
    s = opening_layer(x, eye)
    np.testing.assert_array_equal(s.y_curr, x)
    np.testing.assert_array_equal(s.y_prev, x)


def test_classifier_head(rng):
    y = rng.standard_normal((4, 3, 3))
    assert not classifier_head(y, np.zeros((5, 4)), np.zeros(5)).any()
    v = 0.7
    logit = classifier_head(np.full((4, 3, 3), v), np.ones((1, 4)), np.zeros(1))
    assert logit[0] == pytest.approx(4 * v, rel=1e-15)
    W, b = rng.standard_normal((5, 4)), rng.standard_normal(5)
    perm = rng.permutation(9)
    shuffled = y.reshape(4, 9)[:, perm].reshape(4, 3, 3)
    np.testing.assert_allclose(classifier_head(y, W, b), classifier_head(shuffled, W, b), rtol=1e-14)


def test_flatten_head_uses_every_pixel(rng):
    y = rng.standard_normal((2, 2, 2))
    W = rng.standard_normal((3, 8))
    np.testing.assert_allclose(classifier_head(y, W, np.zeros(3), pool="flatten"), W @ y.ravel())


def test_dense_head(rng):
    y = rng.standard_normal((3, 5, 5))
    sel = np.zeros((2, 3, 1, 1))
    sel[0, 0] = sel[1, 2] = 1
    out = dense_head(y, sel)
    np.testing.assert_array_equal(out, y[[0, 2]])
    assert dense_head(y, np.zeros((4, 3, 1, 1))).shape == (4, 5, 5)


# --- whole network -----------------------------------------------------------


def test_block_plan_layout():
    plan = block_plan(NetworkSpec(width=2, levels=2, blocks_per_level=3))
    assert [b.name for b in plan] == ["level0.block0", "level0.block1", "level0.block2",
                                      "level1.block0", "level1.block1", "level1.block2"]
    assert [b.transform for b in plan] == [None, None, "down", None, None, "down"]
    assert [b.channels for b in plan] == [2, 2, 8, 8, 8, 32]
    up = block_plan(NetworkSpec(width=2, levels=2, blocks_per_level=2, topology="downup"))
    assert [b.transform for b in up] == [None, "down", None, "down", None, "up", None, "up"]
    assert up[-1].channels == 2


def test_four_coarsenings_reach_two_by_two(rng):
    spec = NetworkSpec(input_channels=3, width=3, levels=4, blocks_per_level=1)
    params = init_params(spec, rng)
    _, s = forward_network(rng.standard_normal((3, 32, 32)), spec, params)
    assert s.y_curr.shape == (768, 2, 2)
    assert s.level == 4


def test_downup_keeps_input_resolution(rng):
    spec = NetworkSpec(input_channels=3, width=2, levels=2, blocks_per_level=2, head="segmenter",
                       classes=5, topology="downup")
    params = init_params(spec, rng)
    out, s = forward_network(rng.standard_normal((3, 32, 32)), spec, params)
    assert s.y_curr.shape[1:] == (32, 32) and out.shape == (5, 32, 32)


@given(levels=st.integers(0, 3), bpl=st.integers(1, 2), mult=st.integers(1, 2), seed=st.integers(0, 99))
def test_shape_mirror_property(levels, bpl, mult, seed):
    spec = NetworkSpec(input_channels=1, width=1, levels=levels, blocks_per_level=bpl,
                       head="regressor", topology="downup")
    side = 2**levels * mult
    params = init_params(spec, np.random.default_rng(seed))
    out, _ = forward_network(np.random.default_rng(seed).standard_normal((1, side, side)), spec, params)
    assert out.shape == (1, side, side)


def test_zero_parameters_give_zero_output(rng):
    spec = NetworkSpec(input_channels=3, width=2, levels=2, blocks_per_level=2)
    params = {k: np.zeros_like(v) for k, v in init_params(spec, rng).items()}
    out, _ = forward_network(rng.standard_normal((2, 3, 8, 8)), spec, params)
    assert not out.any()


def test_network_input_and_parameter_errors(rng):
    spec = NetworkSpec(input_channels=3, width=2, levels=2, blocks_per_level=1)
    params = init_params(spec, rng)
    with pytest.raises(ValueError):
        forward_network(rng.standard_normal((3, 6, 6)), spec, params)
    with pytest.raises(ValueError):
        forward_network(rng.standard_normal((2, 8, 8)), spec, params)
    bad = dict(params)
    del bad["level0.block0.b"]
    with pytest.raises(ValueError):
        forward_network(rng.standard_normal((3, 8, 8)), spec, bad)


def test_init_is_seeded_and_scaled():
    spec = NetworkSpec(width=2, levels=1, blocks_per_level=1)
    a = init_params(spec, np.random.default_rng(3))
    b = init_params(spec, np.random.default_rng(3))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not a["level0.block0.b"].any()
    assert np.abs(a["level0.block0.K"]).max() <= 1 / np.sqrt(8 * 9)
    assert param_count(a) == sum(v.size for v in a.values())


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(blocks_per_level=0)
    with pytest.raises(ValueError):
        NetworkSpec(levels=-1)
    with pytest.raises(ValueError):
        NetworkSpec(topology="up")


@pytest.mark.parametrize("topology,levels,bpl", [("down", 0, 34), ("down", 2, 17), ("downup", 2, 6)])
def test_chain_reversal_accuracy(rng, topology, levels, bpl):
    spec = NetworkSpec(input_channels=3, width=2, levels=levels, blocks_per_level=bpl,
                       head="classifier" if topology == "down" else "segmenter", topology=topology)
    params = init_params(spec, rng)
    errs = reversal_errors(rng.standard_normal((1, 3, 16, 16)), spec, params)
    assert max(errs) < 1e-9


def test_internal_vjp_fault_flag_is_off():
    assert hb._VJP_FAULT == 0.0
