import numpy as np
import pytest

from hypernet.baseline import (ResNetBaseline, ResNetBaselineSpec, avgpool2, avgpool2_vjp, param_shapes,
                               resnet_step)
from hypernet.blocks import BlockParams, symmetric_layer
from hypernet.losses import cross_entropy_loss
from hypernet.train import model_from_json


def test_identity_and_zero_w_with_f_zero(rng):
    y = rng.standard_normal((3, 4, 4))
    p = BlockParams(np.zeros((3, 3, 3, 3)), np.zeros(3))
    np.testing.assert_array_equal(resnet_step(y, p, identity=True), y)
    assert not resnet_step(y, p, identity=False).any()


def test_step_equals_residual_form(rng):
    y = rng.standard_normal((2, 3, 5, 5))
    p = BlockParams(rng.standard_normal((3, 3, 3, 3)), rng.standard_normal(3))
    np.testing.assert_allclose(resnet_step(y, p), y + symmetric_layer(y, p), rtol=0, atol=1e-13)


def test_avgpool_adjoint(rng):
    x = rng.standard_normal((2, 3, 6, 4))
    g = rng.standard_normal((2, 3, 3, 2))
    assert np.vdot(avgpool2(x), g) == pytest.approx(np.vdot(x, avgpool2_vjp(g)), rel=1e-13)
    with pytest.raises(ValueError):
        avgpool2(rng.standard_normal((1, 1, 3, 4)))


def test_param_layout():
    shapes = param_shapes(ResNetBaselineSpec(width=2, levels=2, blocks_per_level=1, classes=5))
    assert shapes["level0.pool.K"] == (4, 8, 1, 1)
    assert shapes["level1.pool.K"] == (8, 16, 1, 1)
    assert shapes["head.W"] == (5, 8)
    avg = param_shapes(ResNetBaselineSpec(width=2, levels=2, blocks_per_level=1, coarsening="avgpool"))
    assert avg["level0.pool.K"] == (4, 2, 1, 1)


@pytest.mark.parametrize("coarsening", ["wavepool", "avgpool"])
def test_gradients_match_finite_differences(coarsening):
    model = ResNetBaseline(ResNetBaselineSpec(input_channels=2, width=2, levels=2, blocks_per_level=2,
                                              classes=3, coarsening=coarsening))
    r = np.random.default_rng(0)
    p = model.init_params(r)
    for k in p:
        if k.endswith(".b"):
            p[k] = 0.1 * r.standard_normal(p[k].shape)
    x = r.standard_normal((2, 2, 8, 8))
    y = np.array([0, 2])
    _, g, peak = model.loss_and_grad(p, x, y, cross_entropy_loss)
    assert peak > 0
    h = 1e-5
    for k in p:
        fd = np.zeros_like(p[k])
        for idx in np.ndindex(p[k].shape):
            old = p[k][idx]
            p[k][idx] = old + h
            lp = cross_entropy_loss(model.forward(p, x), y)[0]
            p[k][idx] = old - h
            lm = cross_entropy_loss(model.forward(p, x), y)[0]
            p[k][idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        assert np.max(np.abs(fd - g[k])) <= 1e-5 * np.max(np.abs(fd)), k


def test_json_round_trip_and_checks(rng):
    m = ResNetBaseline(ResNetBaselineSpec(width=2, levels=1, coarsening="avgpool"))
    back = model_from_json(m.to_json())
    assert isinstance(back, ResNetBaseline) and back.spec == m.spec
    p = m.init_params(rng)
    m.check_params(p)
    p["head.W"] = p["head.W"][:, :1]
    with pytest.raises(ValueError):
        m.check_params(p)
    with pytest.raises(ValueError):
        ResNetBaselineSpec(coarsening="maxpool")
