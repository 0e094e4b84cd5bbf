from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteError, ParamVector


@dataclass
class OptimizerState:
    """SGD or Adam state for gradient *ascent* on the ELBO."""

    kind: str = "adam"
    learning_rate: float = 0.01
    clip_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}; valid: sgd, adam")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")


def clip_by_norm(g, max_norm):
    norm = float(np.linalg.norm(g))
    if max_norm is None or norm <= max_norm:
        return g
    return g * (max_norm / norm)


def step(state: OptimizerState, params: ParamVector, g) -> ParamVector:
    grad = np.asarray(getattr(g, "grad", g), dtype=float)
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.values.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite gradient at step {state.t + 1}", index=state.t + 1)
    grad = clip_by_norm(grad, state.clip_norm)
    state.t += 1
    if state.kind == "sgd":
        new = params.values + state.learning_rate * grad
    else:
        if state.m is None:
            state.m = np.zeros_like(grad)
            state.v = np.zeros_like(grad)
        state.m = state.beta1 * state.m + (1 - state.beta1) * grad
        state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
        m_hat = state.m / (1 - state.beta1**state.t)
        v_hat = state.v / (1 - state.beta2**state.t)
        new = params.values + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new)):
        raise NonFiniteError(f"parameters became non-finite at step {state.t}", index=state.t)
    return params.replace(new)
