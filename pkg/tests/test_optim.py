import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypernet.optim import Optimizer, StepSchedule, adam_step, lr_at, sgd_step


def test_plain_sgd_step():
    p = {"w": np.array([1.0, -2.0])}
    sgd_step(p, {"w": np.array([0.5, 0.25])}, {}, lr=0.1)
    np.testing.assert_allclose(p["w"], [1.0 - 0.05, -2.0 - 0.025], rtol=0, atol=1e-15)


def test_sgd_zero_grad_leaves_params():
    p = {"w": np.array([3.0])}
    sgd_step(p, {"w": np.zeros(1)}, {}, lr=0.1, momentum=0.9)
    assert p["w"][0] == 3.0


def test_sgd_momentum_two_steps():
    p = {"w": np.array([0.0])}
    state = {}
    g = {"w": np.array([2.0])}
    for _ in range(2):
        sgd_step(p, g, state, lr=0.1, momentum=0.9)
    assert p["w"][0] == pytest.approx(-0.1 * 2.0 * (1 + 1.9), abs=1e-12)


def test_sgd_weight_decay_single_step():
    p = {"w": np.array([2.0])}
    sgd_step(p, {"w": np.array([0.5])}, {}, lr=0.1, weight_decay=5e-4)
    assert p["w"][0] == pytest.approx(2.0 - 0.1 * (0.5 + 5e-4 * 2.0), abs=1e-12)


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    adam_step(p, {"w": np.array([3.0, -0.2, 1e-3])}, {}, lr=0.01, eps=0.0)
    np.testing.assert_allclose(p["w"], [0.99, 1.01, 0.99], rtol=0, atol=1e-12)


def test_adam_single_step_hand_computed():
    g, lr, b1, b2, eps = 0.4, 0.1, 0.9, 0.999, 1e-8
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    expected = 1.0 - lr * (m / (1 - b1)) / ((v / (1 - b2)) ** 0.5 + eps)
    p = {"w": np.array([1.0])}
    state = {}
    adam_step(p, {"w": np.array([g])}, state, lr, b1, b2, eps)
    assert abs(p["w"][0] - expected) <= 1e-12
    assert state["t"][0] == 1


def test_adam_zero_grad_leaves_params():
    p = {"w": np.array([1.5, -2.0])}
    state = {}
    for _ in range(3):
        adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.5, -2.0])


@given(seed=st.integers(0, 2**31), name=st.sampled_from(["sgd", "adam"]))
def test_replay_is_bit_identical(seed, name):
    def run():
        r = np.random.default_rng(seed)
        p = {"a": r.standard_normal(4), "b": r.standard_normal((2, 2))}
        opt = Optimizer(name, 0.05, momentum=0.5 if name == "sgd" else 0.0, weight_decay=1e-3)
        for _ in range(4):
            opt.step(p, {k: r.standard_normal(v.shape) for k, v in p.items()}, 0.05)
        return p

    a, b = run(), run()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1)
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros((2, 1))}, {}, 0.1)


def test_optimizer_validation():
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
    with pytest.raises(ValueError):
        Optimizer("sgd", momentum=1.0)


def test_period_schedule():
    s = StepSchedule(0.1, factor=0.1, period=100)
    assert [lr_at(s, e) for e in (0, 100, 200)] == pytest.approx([0.1, 0.01, 0.001], rel=1e-12)
    assert s.lr_at(99) == 0.1


def test_milestone_schedule():
    s = StepSchedule(0.1, factor=0.1, milestones=(200, 300))
    assert s.lr_at(250) == pytest.approx(0.01, rel=1e-12)
    assert s.lr_at(199) == 0.1
    assert s.lr_at(300) == pytest.approx(0.001, rel=1e-12)


def test_schedule_validation():
    with pytest.raises(ValueError):
        StepSchedule(0.1, factor=0.0)
    with pytest.raises(ValueError):
        StepSchedule(0.1).lr_at(-1)


@given(lr0=st.floats(1e-4, 1.0), period=st.integers(1, 50), epoch=st.integers(0, 500))
def test_schedule_is_nonincreasing(lr0, period, epoch):
    s = StepSchedule(lr0, 0.5, period)
    assert s.lr_at(epoch + 1) <= s.lr_at(epoch)
