"""Seeded random streams and the probability primitives used everywhere else.

Streams are backed by numpy's counter-based Philox generator, keyed through a
``SeedSequence`` spawn key so that any ``(seed, stream path)`` pair names one
fixed, independent sequence no matter which thread asks for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class RngStream:
    """A reproducible random stream identified by ``seed`` and a key path.

    ``child(*ids)`` derives a new independent stream without consuming any
    draws from this one, so derivation order never matters.
    """

    def __init__(self, seed: int, stream_id: int | tuple[int, ...] = 0):
        if isinstance(stream_id, (int, np.integer)):
            key = (int(stream_id),)
        else:
            key = tuple(int(k) for k in stream_id)
        if seed < 0 or any(k < 0 for k in key):
            raise ValueError("seed and stream ids must be non-negative")
        self.seed = int(seed)
        self.key = key
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    @property
    def stream_id(self) -> int:
        return self.key[0]

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(ids))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        """Uniform draws on the open interval (0, 1)."""
        # random() is [0, 1); move the excluded endpoint inside the interval
        u = self._gen.random(size)
        u = np.where(u == 0.0, np.finfo(float).tiny, u)
        return float(u) if size is None else u

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    std_dev: float

    def __post_init__(self):
        if not (self.std_dev > 0.0):
            raise ValueError(f"std_dev must be positive, got {self.std_dev}")


def gaussian_sample(d: Gaussian1D, rng) -> float:
    return d.mean + d.std_dev * rng.standard_normal()


def gaussian_logpdf(x, d_or_mean, std_dev=None):
    """Log density of a univariate normal.

    Accepts either a ``Gaussian1D`` or explicit ``(mean, std_dev)``; the
    explicit form broadcasts over arrays.
    """
    if std_dev is None:
        mean, std_dev = d_or_mean.mean, d_or_mean.std_dev
    else:
        mean = d_or_mean
    z = (x - mean) / std_dev
    return -np.log(std_dev) - HALF_LOG_2PI - 0.5 * z * z


def softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_sum_exp(v, axis=None):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def categorical_from_uniform(p, u):
    """Inverse-CDF categorical draw(s): ``p`` has shape (..., k), ``u`` shape (...)."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    cdf = np.cumsum(p, axis=-1)
    idx = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    return np.minimum(idx, p.shape[-1] - 1)


def categorical_sample(p, rng) -> int:
    p = np.asarray(p, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probability vector must sum to 1")
    return int(categorical_from_uniform(p, rng.uniform()))


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def gumbel_sample(rng, size=None):
    return gumbel_from_uniform(rng.uniform(size))
