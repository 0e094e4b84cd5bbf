"""ELBO gradient estimators sharing one calling convention.

Every estimator maps ``(model, params, rng, ...)`` to a :class:`GradientEstimate`
holding an *ascent* direction for the ELBO. Randomness is pulled only through
child streams of ``rng``, so each estimate is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteError, ParamVector, check_layout
from .stats import gumbel_from_uniform, softmax

ESTIMATORS = ("nesvb", "sgvb", "reinforce", "rws", "st_gumbel")


class MissingHookError(TypeError):
    """The model lacks the analytic hook an estimator needs."""


@dataclass(frozen=True)
class GradientEstimate:
    grad: np.ndarray
    evaluations_used: int
    estimator_name: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise NonFiniteError(f"{self.estimator_name} produced a non-finite gradient")


@dataclass(frozen=True)
class NesConfig:
    sigma: float = 0.1
    n_pairs: int = 25
    fitness_shaping: bool = False
    common_random_numbers: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")

    @property
    def evaluations(self) -> int:
        return 2 * self.n_pairs


def centered_ranks(x):
    """Ranks of ``x`` mapped linearly onto [-0.5, 0.5]; tied values share their mean rank."""
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return np.zeros(1)
    ranks = np.empty(x.size)
    ranks[np.argsort(x, kind="stable")] = np.arange(x.size)
    _, group = np.unique(x, return_inverse=True)
    ranks = (np.bincount(group, ranks) / np.bincount(group))[group]
    return ranks / (x.size - 1) - 0.5


def nesvb_gradient(model, params: ParamVector, rng, cfg: NesConfig = NesConfig(), eps=None):
    """Mirrored-sampling evolution-strategies estimate of the ELBO gradient.

    Returns ``1/(2 n sigma) * sum_i (F(p + sigma e_i) - F(p - sigma e_i)) e_i``.
    ``eps`` (shape ``(n_pairs, d)``) overrides the perturbation draws.
    """
    check_layout(model, params)
    d = len(params)
    if eps is None:
        eps = rng.child(0).standard_normal((cfg.n_pairs, d))
    eps = np.asarray(eps, dtype=float).reshape(cfg.n_pairs, d)
    theta = params.values
    if cfg.common_random_numbers:
        f_plus = model.elbo_batch(theta + cfg.sigma * eps, rng.child(1))
        f_minus = model.elbo_batch(theta - cfg.sigma * eps, rng.child(1))
    else:
        f_plus = model.elbo_batch(theta + cfg.sigma * eps, rng.child(1))
        f_minus = model.elbo_batch(theta - cfg.sigma * eps, rng.child(2))
    bad = np.flatnonzero(~(np.isfinite(f_plus) & np.isfinite(f_minus)))
    if bad.size:
        raise NonFiniteError(f"non-finite ELBO at perturbation pair {bad[0]}", index=int(bad[0]))
    if cfg.fitness_shaping:
        shaped = centered_ranks(np.concatenate([f_plus, f_minus]))
        f_plus, f_minus = shaped[: cfg.n_pairs], shaped[cfg.n_pairs:]
    grad = (f_plus - f_minus) @ eps / (2.0 * cfg.n_pairs * cfg.sigma)
    return GradientEstimate(grad, cfg.evaluations, "nesvb")


def sgvb_gradient(model, params: ParamVector, rng, n_samples: int = 1, u=None):
    """Reparameterized (pathwise) gradient, averaged over ``n_samples`` draws."""
    check_layout(model, params)
    if not hasattr(model, "reparam_gradient"):
        raise MissingHookError(f"{model.name} has no reparameterized gradient; use st_gumbel")
    if u is None:
        u = rng.child(0).standard_normal(n_samples)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    grads = model.reparam_gradient(np.broadcast_to(params.values, (len(u), len(params))), u)
    return GradientEstimate(grads.mean(axis=0), len(u), "sgvb")


@dataclass
class RunningMeanBaseline:
    """Exponential running mean of past learning signals, used as a control variate."""

    decay: float = 0.9
    value: float | None = None

    def update(self, signals):
        m = float(np.mean(signals))
        self.value = m if self.value is None else self.decay * self.value + (1 - self.decay) * m


def reinforce_gradient(model, params: ParamVector, rng, n_samples: int = 1,
                       baseline: RunningMeanBaseline | None = None):
    """Score-function estimate: mean of (ln p - ln q - b) * grad ln q over draws from q."""
    check_layout(model, params)
    if not hasattr(model, "score_terms"):
        raise MissingHookError(f"{model.name} has no score-function hook")
    log_w, score = model.score_terms(params.values, rng.child(0), n_samples)
    signal = log_w
    if baseline is not None:
        if baseline.value is not None:
            signal = log_w - baseline.value
        baseline.update(log_w)
    grad = (signal[:, None] * score).mean(axis=0)
    return GradientEstimate(grad, n_samples, "reinforce")


def normalized_weights(log_w):
    return softmax(np.asarray(log_w, dtype=float))


def rws_gradient(model, params: ParamVector, rng, n_particles: int = 5):
    """Wake-phase q update of reweighted wake-sleep.

    Self-normalized importance weights over ``n_particles`` draws from q weight
    the particles' score vectors.
    """
    check_layout(model, params)
    if not hasattr(model, "score_terms"):
        raise MissingHookError(f"{model.name} has no score-function hook")
    if n_particles < 2:
        raise ValueError("RWS needs at least 2 particles")
    log_w, score = model.score_terms(params.values, rng.child(0), n_particles)
    grad = normalized_weights(log_w) @ score
    return GradientEstimate(grad, n_particles, "rws")


def st_gumbel_gradient(model, params: ParamVector, rng, temperature: float = 1.0, gumbel=None):
    """Straight-through Gumbel-softmax estimate for categorical-posterior models."""
    check_layout(model, params)
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not hasattr(model, "st_gumbel_gradient"):
        raise MissingHookError(f"{model.name} is not a categorical-posterior model")
    if gumbel is None:
        shape = (len(model.dataset), model.n_components)
        gumbel = gumbel_from_uniform(rng.child(0).uniform(shape))
    grad, _ = model.st_gumbel_gradient(params.values, gumbel, temperature, hard=True)
    return GradientEstimate(grad, 1, "st_gumbel")


@dataclass
class EstimatorConfig:
    name: str = "nesvb"
    sigma: float = 0.1
    n_pairs: int = 25
    fitness_shaping: bool = False
    common_random_numbers: bool = False
    n_particles: int = 5
    temperature: float = 1.0
    n_samples: int = 1
    control_variate: bool = False
    nes: NesConfig = field(init=False, repr=False)

    def __post_init__(self):
        self.name = normalize_estimator_name(self.name)
        self.nes = NesConfig(self.sigma, self.n_pairs, self.fitness_shaping, self.common_random_numbers)
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def normalize_estimator_name(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}; valid: {', '.join(ESTIMATORS)}")
    return key


def make_estimator(cfg: EstimatorConfig):
    """Bind a config into ``estimate(model, params, rng) -> GradientEstimate``.

    Stateful pieces (the REINFORCE running baseline) live in the returned closure,
    so build one estimator per run.
    """
    if cfg.name == "nesvb":
        return lambda model, params, rng: nesvb_gradient(model, params, rng, cfg.nes)
    if cfg.name == "sgvb":
        return lambda model, params, rng: sgvb_gradient(model, params, rng, cfg.n_samples)
    if cfg.name == "reinforce":
        baseline = RunningMeanBaseline() if cfg.control_variate else None
        return lambda model, params, rng: reinforce_gradient(model, params, rng, cfg.n_samples, baseline)
    if cfg.name == "rws":
        return lambda model, params, rng: rws_gradient(model, params, rng, cfg.n_particles)
    return lambda model, params, rng: st_gumbel_gradient(model, params, rng, cfg.temperature)
