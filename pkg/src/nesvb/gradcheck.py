"""Central finite differences and the Gaussian-smoothed objective they are checked against."""
from __future__ import annotations

import numpy as np

from .core import NonFiniteError, ParamVector


def finite_diff(f, at, h=1e-5, relative=True):
    """Central-difference gradient of scalar ``f`` at ``at``.

    With ``relative=True`` the step for coordinate k is ``h * max(1, |x_k|)``.
    """
    x = np.array(at, dtype=float, ndmin=1)
    grad = np.empty_like(x)
    for k in range(x.size):
        hk = h * max(1.0, abs(x[k])) if relative else h
        xp, xm = x.copy(), x.copy()
        xp[k] += hk
        xm[k] -= hk
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite around coordinate {k}", index=k)
        grad[k] = (fp - fm) / (xp[k] - xm[k])
    return grad


def smoothed_samples(model, params, sigma, n_outer, n_inner, rng):
    """Per-perturbation means of F(params + sigma * eps), shape (n_outer,)."""
    if n_outer < 1 or n_inner < 1:
        raise ValueError("budgets must be >= 1")
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    eps = rng.child(0).standard_normal((n_outer, theta.size))
    rows = np.repeat(theta + sigma * eps, n_inner, axis=0)
    f = model.elbo_batch(rows, rng.child(1))
    return f.reshape(n_outer, n_inner).mean(axis=1)


def smoothed_objective(model, params, sigma, n_outer, n_inner, rng, return_stderr=False):
    """Monte Carlo estimate of E_eps F(params + sigma * eps), eps ~ N(0, I).

    Deterministic for a fixed ``rng`` seed/key, so it can be finite-differenced
    with common random numbers.
    """
    s = smoothed_samples(model, params, sigma, n_outer, n_inner, rng)
    mean = float(s.mean())
    if return_stderr:
        return mean, float(s.std(ddof=1) / np.sqrt(n_outer)) if n_outer > 1 else float("nan")
    return mean
