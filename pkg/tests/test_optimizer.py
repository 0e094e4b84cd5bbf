import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesvb.core import Layout, NonFiniteError, ParamVector
from nesvb.optimizer import OptimizerState, clip_by_norm, step

LAYOUT = Layout({"a": 1, "b": 1})


def pv(*values):
    return ParamVector(np.array(values, dtype=float), LAYOUT)


def test_sgd_ascent_step():
    new = step(OptimizerState("sgd", 0.1), pv(0.0, 0.0), np.array([1.0, 0.0]))
    assert np.allclose(new.values, [0.1, 0.0], atol=1e-15)


def test_sgd_zero_gradient_is_a_no_op():
    p = pv(3.0, -2.0)
    assert np.array_equal(step(OptimizerState("sgd", 0.5), p, np.zeros(2)).values, p.values)


def test_adam_first_step_moves_lr_per_coordinate():
    new = step(OptimizerState("adam", 0.01), pv(0.0, 0.0), np.array([5.0, -1e-3]))
    # bias-corrected first step is lr * g / (|g| + eps)
    assert new.values[0] == pytest.approx(0.01, abs=1e-9)
    assert new.values[1] == pytest.approx(-0.01 * 1e-3 / (1e-3 + 1e-8), abs=1e-12)


def reference_adam(grads, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = np.zeros(2), np.zeros(2), np.zeros(2)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x + lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return x


def test_adam_matches_reference_loop():
    grads = np.random.default_rng(0).standard_normal((50, 2))
    state, p = OptimizerState(), pv(0.0, 0.0)
    for g in grads:
        p = step(state, p, g)
    assert np.allclose(p.values, reference_adam(grads), atol=1e-12)
    assert state.t == 50


def test_trajectory_is_bit_reproducible():
    grads = np.random.default_rng(1).standard_normal((20, 2))

    def trajectory():
        state, p = OptimizerState(clip_norm=1.0), pv(1.0, 2.0)
        for g in grads:
            p = step(state, p, g)
        return p.values

    assert np.array_equal(trajectory(), trajectory())


@settings(max_examples=100)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(1e-3, 10.0))
def test_clipping_bounds_norm_and_keeps_direction(g, c):
    g = np.array(g)
    out = clip_by_norm(g, c)
    assert np.linalg.norm(out) <= c * (1 + 1e-12) or np.array_equal(out, g)
    norm = np.linalg.norm(g)
    if norm > 0:
        cos = out @ g / (np.linalg.norm(out) * norm)
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_clipping_leaves_small_gradients_alone():
    g = np.array([0.3, 0.4])
    assert np.array_equal(clip_by_norm(g, 1.0), g)
    assert np.allclose(clip_by_norm(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_non_finite_gradient_raises_with_step_index(bad):
    state, p = OptimizerState("sgd", 0.1), pv(0.0, 0.0)
    p = step(state, p, np.ones(2))
    with pytest.raises(NonFiniteError) as info:
        step(state, p, np.array([bad, 0.0]))
    assert info.value.index == 2
    assert "step 2" in str(info.value)


def test_rejects_bad_config_and_shapes():
    with pytest.raises(ValueError):
        OptimizerState("rmsprop")
    with pytest.raises(ValueError):
        OptimizerState(learning_rate=0.0)
    with pytest.raises(ValueError):
        step(OptimizerState(), pv(0.0, 0.0), np.ones(3))
