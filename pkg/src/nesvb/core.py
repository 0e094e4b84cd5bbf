"""Parameter vectors with named slices, and the ELBO evaluation contract."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a parameter vector, ELBO value or gradient stops being finite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LayoutMismatch(ValueError):
    pass


class Layout:
    """Ordered map from slice name to ``(offset, length)``.

    Slices are laid out contiguously in declaration order, so they are
    disjoint and cover the whole vector by construction.
    """

    def __init__(self, sizes: dict[str, int]):
        self.slices: dict[str, tuple[int, int]] = {}
        offset = 0
        for name, length in sizes.items():
            if length < 1:
                raise ValueError(f"slice {name!r} must have positive length")
            self.slices[name] = (offset, length)
            offset += length
        self.size = offset

    def __getitem__(self, name) -> slice:
        off, n = self.slices[name]
        return slice(off, off + n)

    def __iter__(self):
        return iter(self.slices)

    def __eq__(self, other):
        return isinstance(other, Layout) and self.slices == other.slices

    def __repr__(self):
        return f"Layout({ {k: v[1] for k, v in self.slices.items()} })"


@dataclass
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.shape != (self.layout.size,):
            raise LayoutMismatch(
                f"expected {self.layout.size} values for {self.layout}, got shape {self.values.shape}"
            )

    @classmethod
    def from_slices(cls, layout: Layout, **parts) -> "ParamVector":
        values = np.zeros(layout.size)
        for name, part in parts.items():
            values[layout[name]] = np.ravel(part)
        return cls(values, layout)

    def __getitem__(self, name) -> np.ndarray:
        return self.values[self.layout[name]]

    def __len__(self):
        return self.layout.size

    def replace(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class ElboEstimate:
    value: float
    n_inner_samples: int


class Model(Protocol):
    """What every estimator needs from a model.

    ``elbo_batch`` evaluates one single-sample ELBO per row of ``values``
    (shape ``(m, d)``), drawing all latent noise from ``rng`` in row order.
    Analytic hooks (``reparam_gradient``, ``score_terms``, ``st_gumbel_gradient``)
    are optional and model specific.
    """

    name: str
    layout: Layout

    def elbo_batch(self, values: np.ndarray, rng) -> np.ndarray: ...


def check_layout(model, params: ParamVector):
    if params.layout != model.layout:
        raise LayoutMismatch(f"{model.name} expects {model.layout}, got {params.layout}")


def elbo_single_sample(model, params: ParamVector, rng) -> ElboEstimate:
    check_layout(model, params)
    value = float(model.elbo_batch(params.values[None, :], rng)[0])
    return ElboEstimate(value, 1)


def elbo_mean(model, params: ParamVector, rng, n: int = 1) -> ElboEstimate:
    if n < 1:
        raise ValueError("n must be >= 1")
    check_layout(model, params)
    draws = model.elbo_batch(np.broadcast_to(params.values, (n, len(params))), rng)
    return ElboEstimate(float(np.mean(draws)), n)
