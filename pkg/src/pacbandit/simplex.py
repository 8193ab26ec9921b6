"""Finite probability distributions: construction, KL, Gibbs weights, smoothing, sampling.

The array-level helpers (``gibbs_weights``, ``mix_weights``, ``kl_rows``,
``sample_rows``) operate along the last axis so the batched simulators can
reuse them on ``(replicas, K)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIMPLEX_ATOL = 1e-9
# slack accepted when a schedule lands on eps == 1/K up to rounding
_EPS_RTOL = 1e-12


@dataclass(frozen=True)
class SimplexDistribution:
    """Probability vector over ``K`` outcomes."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise ValueError("distribution needs at least one entry")
        if not np.all(np.isfinite(w)):
            raise ValueError("distribution entries must be finite")
        if np.any(w < 0):
            raise ValueError(f"negative probability: {w.min()!r}")
        total = w.sum()
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, K: int) -> SimplexDistribution:
        return cls(np.full(K, 1.0 / K))

    @classmethod
    def point_mass(cls, K: int, index: int) -> SimplexDistribution:
        w = np.zeros(K)
        w[index] = 1.0
        return cls(w)

    @property
    def K(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.weights.size

    def __getitem__(self, a):
        return self.weights[a]

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)

    def expect(self, values) -> float:
        """Expectation of a per-outcome quantity under this distribution."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def _as_weights(d) -> np.ndarray:
    if isinstance(d, SimplexDistribution):
        return d.weights
    return np.asarray(d, dtype=float)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p||q) along the last axis; +inf on support violations."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(q)), 0.0)
    out = terms.sum(axis=-1)
    # rounding can leave tiny negatives when p ~= q
    return np.maximum(out, 0.0)


def kl_divergence(p, q) -> float:
    """KL(p||q) with 0 ln 0 = 0; ``math.inf`` when p puts mass where q has none."""
    pw, qw = _as_weights(p), _as_weights(q)
    if pw.shape != qw.shape:
        raise ValueError(f"dimension mismatch: {pw.shape} vs {qw.shape}")
    return float(kl_rows(pw, qw))


def _shifted_exponents(scores, temperature) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if np.any(np.isnan(s)):
        raise ValueError("NaN score")
    temp = np.asarray(temperature, dtype=float)
    if np.any(temp < 0):
        raise ValueError("temperature must be nonnegative")
    z = temp[..., None] * s if temp.ndim else temp * s
    return z - z.max(axis=-1, keepdims=True)


def log_gibbs_weights(scores, temperature) -> np.ndarray:
    """Log of the normalized Gibbs weights along the last axis."""
    z = _shifted_exponents(scores, temperature)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gibbs_weights(scores, temperature) -> np.ndarray:
    """Weights proportional to ``exp(temperature * score)`` along the last axis.

    The exponent is shifted by its row maximum first, so any finite scores are
    safe regardless of magnitude.
    """
    z = np.exp(_shifted_exponents(scores, temperature))
    return z / z.sum(axis=-1, keepdims=True)


def gibbs(scores, temperature: float) -> SimplexDistribution:
    s = np.asarray(scores, dtype=float)
    if np.any(np.isnan(s)):
        raise ValueError("NaN score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return SimplexDistribution(gibbs_weights(s, temperature))


def _check_eps(eps, K: int):
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0) or np.any(eps * K > 1.0 + _EPS_RTOL):
        raise ValueError(f"smoothing eps must lie in [0, 1/K] (K={K}), got {eps!r}")
    return eps


def mix_weights(rho: np.ndarray, eps) -> np.ndarray:
    """Row-wise ``(1 - K eps) rho + eps``; ``eps`` is a scalar or one value per row."""
    rho = np.asarray(rho, dtype=float)
    K = rho.shape[-1]
    eps = _check_eps(eps, K)
    scale = np.maximum(1.0 - K * eps, 0.0)
    if eps.ndim:
        return scale[..., None] * rho + eps[..., None]
    return scale * rho + eps


def mix_with_uniform(rho, eps: float) -> SimplexDistribution:
    return SimplexDistribution(mix_weights(_as_weights(rho), eps))


def sample_rows(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: index of the first cumulative weight exceeding ``u``."""
    cdf = np.cumsum(weights, axis=-1)
    idx = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    # u close to 1 can run past the last cumulative value after rounding
    last = weights.shape[-1] - 1
    idx = np.minimum(idx, last)
    # never land on a zero-probability index
    if weights.ndim == 1:
        while weights[idx] == 0:
            idx -= 1
        return idx
    rows = np.arange(weights.shape[0])
    bad = weights[rows, idx] == 0
    while np.any(bad):
        idx = np.where(bad, idx - 1, idx)
        bad = weights[rows, idx] == 0
    return idx


def sample(d, rng: np.random.Generator) -> int:
    """Draw one index from ``d`` using a single uniform from ``rng``."""
    return int(sample_rows(_as_weights(d), rng.random()))
