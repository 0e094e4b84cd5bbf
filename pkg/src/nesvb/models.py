"""The two generative models: a conjugate "noisy scale" and a 2-D, 3-component GMM.

Both keep their hyperparameters fixed; only the approximate posterior lives in
the parameter vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import ElboEstimate, Layout, ParamVector, check_layout
from .stats import (
    HALF_LOG_2PI,
    Gaussian1D,
    categorical_from_uniform,
    gaussian_logpdf,
    log_softmax,
    softmax,
)


class NoisyScaleModel:
    """Scale reading ``y ~ N(x, 0.75)`` of an object with weight ``x ~ N(8.5, 1.0)``.

    Approximate posterior is ``N(mean, exp(0.5 * log_var))``. With
    ``deterministic=True`` the black-box ELBO is evaluated at ``x = mean``
    instead of a draw from q; the analytic gradient hooks are unaffected.
    """

    layout = Layout({"mean": 1, "log_var": 1})

    def __init__(self, prior=Gaussian1D(8.5, 1.0), obs_noise_std=0.75, observation=9.5,
                 deterministic=False):
        self.prior = prior
        self.obs_noise_std = obs_noise_std
        self.observation = observation
        self.deterministic = deterministic
        self.name = "noisy_scale_deterministic" if deterministic else "noisy_scale"

    def posterior(self) -> Gaussian1D:
        prec = 1.0 / self.prior.std_dev**2 + 1.0 / self.obs_noise_std**2
        mean = (self.prior.mean / self.prior.std_dev**2 + self.observation / self.obs_noise_std**2) / prec
        return Gaussian1D(mean, prec**-0.5)

    def log_evidence(self) -> float:
        marginal_std = math.hypot(self.prior.std_dev, self.obs_noise_std)
        return float(gaussian_logpdf(self.observation, self.prior.mean, marginal_std))

    def initial_params(self) -> ParamVector:
        return ParamVector.from_slices(self.layout, mean=self.prior.mean,
                                       log_var=2.0 * math.log(self.prior.std_dev))

    def params(self, mean, std) -> ParamVector:
        return ParamVector.from_slices(self.layout, mean=mean, log_var=2.0 * math.log(std))

    def log_joint(self, z):
        return (gaussian_logpdf(self.observation, z, self.obs_noise_std)
                + gaussian_logpdf(z, self.prior.mean, self.prior.std_dev))

    def elbo_integrand(self, values, u):
        """ln p(y, x) - ln q(x) at the reparameterized draw ``x = mean + std * u``."""
        values = np.atleast_2d(values)
        theta, log_var = values[:, 0], values[:, 1]
        z = theta + np.exp(0.5 * log_var) * u
        log_q = -0.5 * log_var - HALF_LOG_2PI - 0.5 * ((z - theta) / np.exp(0.5 * log_var)) ** 2
        return self.log_joint(z) - log_q

    def elbo_batch(self, values, rng):
        values = np.atleast_2d(values)
        if self.deterministic:
            return self.elbo_integrand(values, np.zeros(len(values)))
        return self.elbo_integrand(values, rng.standard_normal(len(values)))

    def reparam_gradient(self, values, u):
        """Pathwise gradient of the ELBO integrand w.r.t. (mean, log_var) with ``u`` held fixed.

        Works row-wise on ``values`` of shape (m, 2) with ``u`` of shape (m,).
        """
        values = np.atleast_2d(values)
        theta, log_var = values[:, 0], values[:, 1]
        std = np.exp(0.5 * log_var)
        z = theta + std * u
        dlogjoint_dz = ((self.observation - z) / self.obs_noise_std**2
                        + (self.prior.mean - z) / self.prior.std_dev**2)
        # -ln q at a reparameterized draw is 0.5*log_var + const, independent of theta
        return np.stack([dlogjoint_dz, dlogjoint_dz * 0.5 * std * u + 0.5], axis=-1)

    def score(self, values, z):
        """Gradient of ln q(z) w.r.t. (mean, log_var); ``values`` is a single row."""
        theta, log_var = values
        var = math.exp(log_var)
        r = np.asarray(z) - theta
        return np.stack([r / var, -0.5 + 0.5 * r * r / var], axis=-1)

    def score_terms(self, values, rng, n):
        """Draw ``n`` latents from q; return their log-weights ln p - ln q and scores."""
        values = np.asarray(values, dtype=float)
        u = rng.standard_normal(n)
        z = values[0] + math.exp(0.5 * values[1]) * u
        log_w = self.elbo_integrand(np.broadcast_to(values, (n, 2)), u)
        return log_w, self.score(values, z)


_DEFAULT_NOISY_SCALE = NoisyScaleModel()
_DEFAULT_NOISY_SCALE_DET = NoisyScaleModel(deterministic=True)


def noisy_scale_elbo(params: ParamVector, rng) -> ElboEstimate:
    check_layout(_DEFAULT_NOISY_SCALE, params)
    return ElboEstimate(float(_DEFAULT_NOISY_SCALE.elbo_batch(params.values, rng)[0]), 1)


def noisy_scale_elbo_deterministic(params: ParamVector) -> ElboEstimate:
    check_layout(_DEFAULT_NOISY_SCALE_DET, params)
    return ElboEstimate(float(_DEFAULT_NOISY_SCALE_DET.elbo_batch(params.values, None)[0]), 1)


GMM_COMPONENTS = (Gaussian1D(-1.0, 0.5), Gaussian1D(3.0, 0.25), Gaussian1D(-5.0, 0.45))


@dataclass(frozen=True)
class GmmDataset:
    points: np.ndarray  # (N, 2)
    labels: np.ndarray  # (N,) true component index

    def __len__(self):
        return len(self.labels)


def gmm_generate_dataset(n_per_component: int, rng, components=GMM_COMPONENTS) -> GmmDataset:
    """Both coordinates of every point come from the same component."""
    if n_per_component < 1:
        raise ValueError("n_per_component must be >= 1")
    k = len(components)
    means = np.array([c.mean for c in components])[:, None, None]
    stds = np.array([c.std_dev for c in components])[:, None, None]
    u = rng.standard_normal((k, n_per_component, 2))
    points = (means + stds * u).reshape(-1, 2)
    labels = np.repeat(np.arange(k), n_per_component)
    return GmmDataset(points, labels)


def write_dataset_csv(dataset: GmmDataset, path, assigned=None):
    from .io import atomic_write_text, fmt

    header = "x1,x2,true_label" + (",assigned_label" if assigned is not None else "")
    rows = [header]
    for i, ((x1, x2), c) in enumerate(zip(dataset.points, dataset.labels)):
        row = f"{fmt(x1)},{fmt(x2)},{int(c)}"
        if assigned is not None:
            row += f",{int(assigned[i])}"
        rows.append(row)
    atomic_write_text(path, "\n".join(rows) + "\n")


class GmmModel:
    """Fixed 3-component GMM with a linear-softmax categorical posterior over assignments.

    ELBO is the per-point average of ln p(x, c) - ln q(c | x), one sampled
    component per point.
    """

    def __init__(self, dataset: GmmDataset, components=GMM_COMPONENTS, mixture_weights=None):
        self.name = "gmm"
        self.dataset = dataset
        self.components = tuple(components)
        k = len(self.components)
        self.n_components = k
        self.mixture_weights = (np.full(k, 1.0 / k) if mixture_weights is None
                                else np.asarray(mixture_weights, dtype=float))
        self.layout = Layout({"weights": 2 * k, "bias": k})
        x = dataset.points
        means = np.array([c.mean for c in self.components])
        stds = np.array([c.std_dev for c in self.components])
        # (N, k): ln N(x1; c) + ln N(x2; c) + ln pi_c
        self.log_joint_table = (gaussian_logpdf(x[:, :1], means, stds)
                                + gaussian_logpdf(x[:, 1:], means, stds)
                                + np.log(self.mixture_weights))

    def initial_params(self) -> ParamVector:
        return ParamVector(np.zeros(self.layout.size), self.layout)

    def logits(self, values):
        """Logits of shape (m, N, k) for parameter rows of shape (m, d), or (N, k) for one row."""
        values = np.asarray(values, dtype=float)
        single = values.ndim == 1
        values = np.atleast_2d(values)
        k = self.n_components
        w = values[:, self.layout["weights"]].reshape(-1, k, 2)
        b = values[:, self.layout["bias"]]
        out = np.einsum("nj,mcj->mnc", self.dataset.points, w) + b[:, None, :]
        return out[0] if single else out

    def forward(self, values):
        return softmax(self.logits(values))

    def elbo_batch(self, values, rng):
        values = np.atleast_2d(values)
        log_q = log_softmax(self.logits(values))
        u = rng.uniform((len(values), len(self.dataset)))
        c = categorical_from_uniform(np.exp(log_q), u)
        joint = np.take_along_axis(np.broadcast_to(self.log_joint_table, log_q.shape), c[..., None], -1)[..., 0]
        chosen_log_q = np.take_along_axis(log_q, c[..., None], -1)[..., 0]
        return (joint - chosen_log_q).mean(axis=-1)

    def relaxed_objective(self, values, gumbel, temperature, hard=False):
        """Per-point mean of sum_c w_c (ln p(x, c) - ln q(c | x)).

        ``w`` is the Gumbel-softmax relaxation ``softmax((logits + g) / T)`` or,
        with ``hard=True``, its argmax one-hot.
        """
        logits = self.logits(values)
        log_q = log_softmax(logits)
        y = softmax((logits + gumbel) / temperature)
        if hard:
            y = np.eye(self.n_components)[np.argmax(y, axis=-1)]
        return float(np.mean(np.sum(y * (self.log_joint_table - log_q), axis=-1)))

    def st_gumbel_gradient(self, values, gumbel, temperature, hard=True):
        """Straight-through Gumbel-softmax gradient at fixed noise ``gumbel`` of shape (N, k).

        Returns ``(grad, forward_value)``. With ``hard=False`` this is the exact
        gradient of ``relaxed_objective``.
        """
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        x = self.dataset.points
        logits = self.logits(values)
        log_q = log_softmax(logits)
        p = np.exp(log_q)
        y = softmax((logits + gumbel) / temperature)
        h = np.eye(self.n_components)[np.argmax(y, axis=-1)]
        a = self.log_joint_table - log_q
        w = h if hard else y
        # through y: (1/T) * y * (a - <y, a>); through ln q: p * sum(w) - w
        g_logits = y * (a - np.sum(y * a, axis=-1, keepdims=True)) / temperature + (p - w)
        n = len(x)
        grad = np.empty(self.layout.size)
        grad[self.layout["weights"]] = (g_logits.T @ x).ravel() / n
        grad[self.layout["bias"]] = g_logits.mean(axis=0)
        value = float(np.mean(np.sum(w * a, axis=-1)))
        return grad, value

    def assign(self, values):
        return np.argmax(self.logits(values), axis=-1)

    def bayes_assign(self):
        """Assign each point to its exact posterior-responsibility argmax."""
        return np.argmax(self.log_joint_table, axis=-1)


def gmm_elbo(params: ParamVector, dataset: GmmDataset, rng) -> ElboEstimate:
    model = GmmModel(dataset)
    check_layout(model, params)
    return ElboEstimate(float(model.elbo_batch(params.values, rng)[0]), len(dataset))


def gmm_assign(params: ParamVector, dataset: GmmDataset):
    return GmmModel(dataset).assign(params.values)


def adjusted_accuracy(true_labels, assigned, k=3) -> float:
    """Accuracy under the best relabelling of the assigned clusters."""
    true_labels = np.asarray(true_labels)
    assigned = np.asarray(assigned)
    best = 0.0
    for perm in permutations(range(k)):
        best = max(best, float(np.mean(np.asarray(perm)[assigned] == true_labels)))
    return best
