import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nesvb.core import NonFiniteError, ParamVector
from nesvb.estimators import (
    EstimatorConfig,
    GradientEstimate,
    MissingHookError,
    NesConfig,
    RunningMeanBaseline,
    make_estimator,
    nesvb_gradient,
    normalized_weights,
    reinforce_gradient,
    rws_gradient,
    sgvb_gradient,
    st_gumbel_gradient,
)
from nesvb.gradcheck import finite_diff
from nesvb.models import GmmModel, NoisyScaleModel, gmm_generate_dataset
from nesvb.stats import RngStream
from nesvb.verify import check_unbiased

from conftest import StubModel
from oracles import noisy_scale_elbo_exact


def pv(model, values):
    return ParamVector(np.asarray(values, dtype=float), model.layout)


def test_linear_objective_single_pair_along_basis(linear_stub):
    model, a = linear_stub
    for k in range(3):
        eps = np.eye(3)[k][None, :]
        g = nesvb_gradient(model, pv(model, [0.3, -1.0, 2.0]), RngStream(0, 0), NesConfig(0.1, 1), eps=eps)
        expected = np.zeros(3)
        expected[k] = a[k]
        assert np.allclose(g.grad, expected, atol=1e-12)
        assert g.evaluations_used == 2 and g.estimator_name == "nesvb"


def test_quadratic_cancellation_symbolic():
    # for F(v) = -|v|^2 + c, one mirrored pair gives -2 (theta . eps) eps regardless of c
    th = sp.symbols("t0:3")
    ep = sp.symbols("e0:3")
    sigma, c = sp.symbols("sigma c", positive=True)
    f = lambda v: -sum(x**2 for x in v) + c
    plus = f([t + sigma * e for t, e in zip(th, ep)])
    minus = f([t - sigma * e for t, e in zip(th, ep)])
    dot = sum(t * e for t, e in zip(th, ep))
    for k in range(3):
        estimate = (plus - minus) * ep[k] / (2 * sigma)
        assert sp.simplify(estimate - (-2 * dot * ep[k])) == 0


def test_quadratic_cancellation_numeric(quadratic_stub):
    theta = np.array([0.5, -1.0, 2.0])
    eps = RngStream(1, 0).standard_normal((4, 3))
    g = nesvb_gradient(quadratic_stub, pv(quadratic_stub, theta), RngStream(0, 0), NesConfig(0.2, 4), eps=eps)
    expected = np.mean([-2 * (theta @ e) * e for e in eps], axis=0)
    assert np.allclose(g.grad, expected, atol=1e-12)
    shifted = StubModel(lambda v: -float(v @ v) + 1e3, 3)
    g2 = nesvb_gradient(shifted, pv(shifted, theta), RngStream(0, 0), NesConfig(0.2, 4), eps=eps)
    assert np.allclose(g.grad, g2.grad, atol=1e-9)


def test_constant_objective_gives_exactly_zero(constant_stub):
    for i in range(20):
        g = nesvb_gradient(constant_stub, pv(constant_stub, np.ones(3)), RngStream(2, i), NesConfig(0.5, 7))
        assert np.array_equal(g.grad, np.zeros(3))


def test_nesvb_reports_offending_perturbation():
    model = StubModel(lambda v: math.nan if v[0] > 10 else 0.0, 3)
    eps = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(NonFiniteError) as info:
        nesvb_gradient(model, pv(model, [9.99, 0, 0]), RngStream(0, 0), NesConfig(1.0, 3), eps=eps)
    assert info.value.index == 2


def test_nesvb_deterministic_given_rng():
    model = NoisyScaleModel()
    p = model.initial_params()
    a = nesvb_gradient(model, p, RngStream(3, 0))
    b = nesvb_gradient(model, p, RngStream(3, 0))
    assert np.array_equal(a.grad, b.grad)
    assert a.evaluations_used == 50


def test_nesvb_unbiased_for_smoothed_noisy_scale():
    result = check_unbiased(NoisyScaleModel(), "nesvb", (8.5, 0.0), 10_000, 1_000_000, seed=7)
    assert result.passed, result.detail


def test_nesvb_unbiased_for_smoothed_quadratic(quadratic_stub):
    # grad of E[-|theta + sigma eps|^2] = -2 theta
    theta = np.array([0.5, -1.0, 2.0])
    grads = np.stack([nesvb_gradient(quadratic_stub, pv(quadratic_stub, theta), RngStream(4, i),
                                     NesConfig(0.1, 5)).grad for i in range(10_000)])
    se = grads.std(axis=0, ddof=1) / math.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0) + 2 * theta) < 3 * se)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5).filter(lambda e: abs(e) > 1e-6), st.floats(0.5, 3.0))
def test_fitness_shaping_keeps_single_pair_sign(t, e, slope):
    model = StubModel(lambda v: slope * v[0] ** 3 + v[0], 1)
    eps = np.array([[e]])
    raw = nesvb_gradient(model, pv(model, [t]), RngStream(0, 0), NesConfig(0.1, 1), eps=eps).grad
    shaped = nesvb_gradient(model, pv(model, [t]), RngStream(0, 0), NesConfig(0.1, 1, fitness_shaping=True), eps=eps).grad
    assert np.sign(raw[0]) == np.sign(shaped[0])


def test_common_random_numbers_reduce_variance():
    model = NoisyScaleModel()
    p = model.initial_params()
    indep = np.stack([nesvb_gradient(model, p, RngStream(5, i)).grad for i in range(2000)])
    crn = np.stack([nesvb_gradient(model, p, RngStream(5, i), NesConfig(common_random_numbers=True)).grad
                    for i in range(2000)])
    assert crn.var(axis=0).sum() < indep.var(axis=0).sum()


def test_sgvb_stationary_at_posterior_with_zero_noise():
    model = NoisyScaleModel()
    post = model.posterior()
    g = sgvb_gradient(model, model.params(post.mean, post.std_dev), None, u=[0.0])
    assert abs(g.grad[0]) < 1e-9
    # the log-variance coordinate only sees the entropy term at u = 0
    assert g.grad[1] == pytest.approx(0.5)


def test_sgvb_deterministic_for_fixed_noise():
    model = NoisyScaleModel()
    p = pv(model, [8.0, 0.4])
    assert np.array_equal(sgvb_gradient(model, p, None, u=[0.7]).grad, sgvb_gradient(model, p, None, u=[0.7]).grad)


def test_sgvb_matches_closed_form_elbo_gradient():
    model = NoisyScaleModel()
    x = np.array([8.5, 0.0])
    target = finite_diff(lambda v: noisy_scale_elbo_exact(v[0], math.exp(0.5 * v[1])), x)
    grads = np.stack([sgvb_gradient(model, pv(model, x), RngStream(6, i)).grad for i in range(10_000)])
    se = grads.std(axis=0, ddof=1) / math.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0) - target) < 3 * se)


def test_sgvb_unbiased_against_finite_differences():
    assert check_unbiased(NoisyScaleModel(), "sgvb", (7.0, 0.5), 10_000, 1_000_000, seed=8).passed


def test_sgvb_requires_hook():
    model = GmmModel(gmm_generate_dataset(3, RngStream(0, 0)))
    with pytest.raises(MissingHookError):
        sgvb_gradient(model, model.initial_params(), RngStream(0, 0))


def test_reinforce_unbiased_and_deterministic():
    assert check_unbiased(NoisyScaleModel(), "reinforce", (8.5, 0.0), 10_000, 1_000_000, seed=9).passed
    model = NoisyScaleModel()
    p = model.initial_params()
    assert np.array_equal(reinforce_gradient(model, p, RngStream(1, 1)).grad,
                          reinforce_gradient(model, p, RngStream(1, 1)).grad)


def test_reinforce_variance_exceeds_sgvb():
    model = NoisyScaleModel()
    p = model.initial_params()
    rf = np.stack([reinforce_gradient(model, p, RngStream(10, i)).grad for i in range(10_000)])
    sg = np.stack([sgvb_gradient(model, p, RngStream(11, i)).grad for i in range(10_000)])
    assert np.all(rf.var(axis=0) > sg.var(axis=0))


def test_reinforce_control_variate_reduces_variance():
    model = NoisyScaleModel()
    p = model.initial_params()
    est = make_estimator(EstimatorConfig("reinforce", control_variate=True))
    for i in range(50):  # warm the running mean
        est(model, p, RngStream(12, 10_000 + i))
    cv = np.stack([est(model, p, RngStream(12, i)).grad for i in range(5000)])
    raw = np.stack([reinforce_gradient(model, p, RngStream(12, i)).grad for i in range(5000)])
    assert cv.var(axis=0).sum() < raw.var(axis=0).sum()


def test_centered_ranks_ties():
    from nesvb.estimators import centered_ranks

    assert np.array_equal(centered_ranks([3.0, 1.0, 2.0]), [0.5, -0.5, 0.0])
    assert np.array_equal(centered_ranks([1.0, 1.0]), [0.0, 0.0])


def test_running_mean_baseline():
    b = RunningMeanBaseline(decay=0.5)
    b.update([2.0])
    b.update([4.0])
    assert b.value == 3.0


def test_rws_weights_normalized():
    model = NoisyScaleModel()
    for i in range(100):
        log_w, _ = model.score_terms(np.array([7.0, 0.3]), RngStream(13, i), 5)
        assert abs(normalized_weights(log_w).sum() - 1.0) < 1e-12


def test_rws_at_exact_posterior_has_zero_mean():
    model = NoisyScaleModel()
    post = model.posterior()
    p = model.params(post.mean, post.std_dev)
    log_w, _ = model.score_terms(p.values, RngStream(14, 0), 5)
    assert np.ptp(log_w) < 1e-12  # q equals the joint up to a constant
    grads = np.stack([rws_gradient(model, p, RngStream(15, i)).grad for i in range(10_000)])
    se = grads.std(axis=0, ddof=1) / math.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0)) < 3 * se)


def test_rws_points_uphill_far_from_posterior():
    model = NoisyScaleModel()
    x = np.array([6.0, 0.0])
    true_dir = finite_diff(lambda v: noisy_scale_elbo_exact(v[0], math.exp(0.5 * v[1])), x)
    grads = np.stack([rws_gradient(model, pv(model, x), RngStream(16, i)).grad for i in range(10_000)])
    assert grads.mean(axis=0) @ true_dir > 0


def test_rws_needs_two_particles():
    model = NoisyScaleModel()
    with pytest.raises(ValueError):
        rws_gradient(model, model.initial_params(), RngStream(0, 0), n_particles=1)


def test_st_gumbel_relaxed_gradient_matches_finite_differences():
    model = GmmModel(gmm_generate_dataset(10, RngStream(17, 0)))
    x = RngStream(17, 1).standard_normal(9)
    gumbel = -np.log(-np.log(RngStream(17, 2).uniform((30, 3))))
    g, _ = model.st_gumbel_gradient(x, gumbel, 0.7, hard=False)
    fd = finite_diff(lambda v: model.relaxed_objective(v, gumbel, 0.7), x)
    assert np.allclose(g, fd, atol=1e-5)


def test_st_gumbel_estimator_interface():
    model = GmmModel(gmm_generate_dataset(10, RngStream(18, 0)))
    p = model.initial_params()
    a = st_gumbel_gradient(model, p, RngStream(18, 1))
    assert np.array_equal(a.grad, st_gumbel_gradient(model, p, RngStream(18, 1)).grad)
    assert a.grad.shape == (9,) and a.estimator_name == "st_gumbel"
    with pytest.raises(ValueError):
        st_gumbel_gradient(model, p, RngStream(18, 1), temperature=0.0)
    with pytest.raises(MissingHookError):
        st_gumbel_gradient(NoisyScaleModel(), NoisyScaleModel().initial_params(), RngStream(0, 0))


def test_gradient_estimate_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        GradientEstimate(np.array([1.0, np.inf]), 1, "x")


@pytest.mark.parametrize("name", ["nesvb", "sgvb", "reinforce", "rws"])
def test_estimators_are_pure(name):
    model = NoisyScaleModel()
    p = pv(model, [8.2, -0.4])
    est = make_estimator(EstimatorConfig(name))
    assert np.array_equal(est(model, p, RngStream(19, 3)).grad, est(model, p, RngStream(19, 3)).grad)


def test_config_validation():
    with pytest.raises(ValueError):
        NesConfig(sigma=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig("bogus")
    assert EstimatorConfig("st-gumbel").name == "st_gumbel"
