"""Gradient checks: analytic hooks against finite differences, estimators against their targets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParamVector, elbo_mean
from .estimators import NesConfig, nesvb_gradient, reinforce_gradient, sgvb_gradient
from .gradcheck import finite_diff, smoothed_samples
from .models import GmmModel, NoisyScaleModel, gmm_generate_dataset
from .stats import RngStream, gumbel_from_uniform

PROBE_POINTS = ((8.5, 0.0), (9.1356, math.log(0.36)), (6.0, 0.0), (10.0, -1.0), (8.0, 1.0))


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_delta: float
    tolerance: float
    detail: str = ""


def _hook_tolerance(g):
    return np.maximum(1e-5, 1e-3 * np.abs(g))


def check_reparam_hook(model, n_points=20, seed=11):
    rng = RngStream(seed, 1)
    worst, ok = 0.0, True
    for _ in range(n_points):
        x = np.array([rng.uniform() * 6 + 6, rng.uniform() * 5 - 3])
        u = rng.standard_normal()
        g = model.reparam_gradient(x[None, :], np.array([u]))[0]
        fd = finite_diff(lambda v: float(model.elbo_integrand(v[None, :], np.array([u]))[0]), x)
        delta = np.abs(g - fd)
        ok &= bool(np.all(delta <= _hook_tolerance(fd)))
        worst = max(worst, float(delta.max()))
    return CheckResult(f"{model.name}.reparam_gradient", ok, worst, 1e-5)


def check_score_hook(model, n_points=20, seed=12):
    rng = RngStream(seed, 1)
    worst, ok = 0.0, True
    for _ in range(n_points):
        x = np.array([rng.uniform() * 6 + 6, rng.uniform() * 5 - 3])
        z = x[0] + math.exp(0.5 * x[1]) * rng.standard_normal()

        def log_q(v):
            s = math.exp(0.5 * v[1])
            return -math.log(s) - 0.5 * math.log(2 * math.pi) - 0.5 * ((z - v[0]) / s) ** 2

        g = model.score(x, z)
        fd = finite_diff(log_q, x)
        delta = np.abs(g - fd)
        ok &= bool(np.all(delta <= _hook_tolerance(fd)))
        worst = max(worst, float(delta.max()))
    return CheckResult(f"{model.name}.score", ok, worst, 1e-5)


def check_relaxed_gumbel_hook(model: GmmModel, n_points=20, seed=13, temperature=1.0):
    rng = RngStream(seed, 1)
    worst, ok = 0.0, True
    for _ in range(n_points):
        x = rng.standard_normal(model.layout.size)
        gumbel = gumbel_from_uniform(rng.uniform((len(model.dataset), model.n_components)))
        g, _ = model.st_gumbel_gradient(x, gumbel, temperature, hard=False)
        fd = finite_diff(lambda v: model.relaxed_objective(v, gumbel, temperature), x)
        delta = np.abs(g - fd)
        ok &= bool(np.all(delta <= _hook_tolerance(fd)))
        worst = max(worst, float(delta.max()))
    return CheckResult(f"{model.name}.st_gumbel_gradient(relaxed)", ok, worst, 1e-5)


def batched_fd(objective, x, n_batches, seed):
    """Finite differences of a common-random-numbers objective, split into independent batches.

    ``objective(v, rng)`` must be deterministic for a fixed ``rng``. Returns the
    batch-mean gradient and its standard error.
    """
    grads = np.stack([
        finite_diff(lambda v, b=b: objective(v, RngStream(seed, (7, b))), x)
        for b in range(n_batches)
    ])
    return grads.mean(axis=0), grads.std(axis=0, ddof=1) / math.sqrt(n_batches)


def estimator_vs_target(estimate, target_mean, target_se, n_trials, seed):
    """Compare the empirical mean of ``estimate(rng)`` to a target within 3 combined standard errors."""
    rng = RngStream(seed, 3)
    samples = np.stack([estimate(rng.child(i)).grad for i in range(n_trials)])
    mean = samples.mean(axis=0)
    se = np.sqrt(samples.var(axis=0, ddof=1) / n_trials + target_se**2)
    z = np.abs(mean - target_mean) / se
    return mean, se, z


def elbo_objective(model, n_draws):
    def f(v, rng):
        return elbo_mean(model, ParamVector(v, model.layout), rng, n_draws).value
    return f


def smoothed_objective_fn(model, sigma, n_outer, n_inner):
    def f(v, rng):
        return float(smoothed_samples(model, v, sigma, n_outer, n_inner, rng).mean())
    return f


def check_unbiased(model, name, point, n_trials, oracle_draws, seed, sigma=0.1):
    x = np.asarray(point, dtype=float)
    params = ParamVector(x, model.layout)
    n_batches = 10
    per_batch = max(oracle_draws // n_batches, 1)
    if name == "nesvb":
        cfg = NesConfig(sigma=sigma)
        target, target_se = batched_fd(smoothed_objective_fn(model, sigma, per_batch, 1), x, n_batches, seed)
        est = lambda rng: nesvb_gradient(model, params, rng, cfg)
    else:
        target, target_se = batched_fd(elbo_objective(model, per_batch), x, n_batches, seed)
        fn = sgvb_gradient if name == "sgvb" else reinforce_gradient
        est = lambda rng: fn(model, params, rng)
    mean, se, z = estimator_vs_target(est, target, target_se, n_trials, seed + 1)
    return CheckResult(
        f"{name} unbiased at {tuple(round(p, 4) for p in point)}",
        bool(np.all(z <= 3.0)),
        float(z.max()),
        3.0,
        detail=f"mean={np.round(mean, 4).tolist()} target={np.round(target, 4).tolist()} se={np.round(se, 4).tolist()}",
    )


def run_checks(quick=False, noisy_model=None, gmm_model=None):
    noisy = noisy_model if noisy_model is not None else NoisyScaleModel()
    if gmm_model is None:
        gmm_model = GmmModel(gmm_generate_dataset(10 if quick else 100, RngStream(5, 0)))
    n_hook = 5 if quick else 20
    results = [
        check_reparam_hook(noisy, n_hook),
        check_score_hook(noisy, n_hook),
        check_relaxed_gumbel_hook(gmm_model, n_hook),
    ]
    points = PROBE_POINTS[:1] if quick else PROBE_POINTS
    n_trials = 2000 if quick else 10_000
    oracle_draws = 100_000 if quick else 1_000_000
    for i, point in enumerate(points):
        for j, name in enumerate(("nesvb", "sgvb", "reinforce")):
            results.append(check_unbiased(noisy, name, point, n_trials, oracle_draws, seed=100 + 10 * i + j))
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  max_dev      tolerance"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}    {r.max_delta:<11.3g}  {r.tolerance:g}")
        if not r.passed and r.detail:
            lines.append(f"    {r.detail}")
    return "\n".join(lines)
