"""Stochastic bandit environments with oracle moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simplex import SimplexDistribution

REWARD_LAWS = ("bernoulli", "fixed")


@dataclass(frozen=True)
class BanditEnvironment:
    """K arms with rewards in [0, 1].

    ``reward_law`` is ``"bernoulli"`` (reward 1 w.p. R(a)) or ``"fixed"``
    (reward exactly R(a)).
    """

    arm_means: np.ndarray
    reward_law: str = "bernoulli"

    def __post_init__(self):
        means = np.array(self.arm_means, dtype=float).reshape(-1)
        if means.size < 2:
            raise ValueError("need at least two arms")
        if not np.all((means >= 0) & (means <= 1)):
            raise ValueError("arm means must lie in [0, 1]")
        if self.reward_law not in REWARD_LAWS:
            raise ValueError(f"unknown reward law {self.reward_law!r}; expected one of {REWARD_LAWS}")
        means.setflags(write=False)
        object.__setattr__(self, "arm_means", means)

    @property
    def K(self) -> int:
        return self.arm_means.size

    @property
    def best_arm(self) -> int:
        # np.argmax returns the first maximizer: lowest-index tie-break
        return int(np.argmax(self.arm_means))

    @property
    def gaps(self) -> np.ndarray:
        return self.arm_means[self.best_arm] - self.arm_means

    @property
    def worst_arm(self) -> int:
        return int(np.argmin(self.arm_means))

    @property
    def second_moments(self) -> np.ndarray:
        """E[R^2] per arm under the reward law."""
        if self.reward_law == "bernoulli":
            return self.arm_means.copy()
        return self.arm_means**2

    def gap_of(self, d) -> float:
        """Expected gap of a distribution over arms."""
        return float(np.dot(np.asarray(d, dtype=float), self.gaps))

    def rewards_from_uniforms(self, arms: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vectorized rewards for the given arms driven by uniforms ``u``."""
        p = self.arm_means[arms]
        if self.reward_law == "bernoulli":
            return (u < p).astype(float)
        return p.astype(float)

    def pull(self, a: int, rng: np.random.Generator) -> float:
        if not 0 <= a < self.K:
            raise IndexError(f"arm {a} out of range for K={self.K}")
        return float(self.rewards_from_uniforms(np.asarray(a), rng.random()))


def best_arm(env: BanditEnvironment) -> int:
    return env.best_arm


def pull(env: BanditEnvironment, a: int, rng: np.random.Generator) -> float:
    return env.pull(a, rng)


def step_variances(env: BanditEnvironment, pi: np.ndarray) -> np.ndarray:
    """Per-arm E[((R^{a*} - R^a) - gap(a))^2 | past] for sampling weights ``pi``.

    Works row-wise on ``(..., K)`` arrays. The cross term vanishes because only
    one arm is played per round, leaving m(a*)/pi(a*) + m(a)/pi(a) - gap(a)^2.
    The best arm's entry is exactly zero.
    """
    pi = np.asarray(pi, dtype=float)
    star = env.best_arm
    m = env.second_moments
    with np.errstate(divide="ignore"):
        out = m[star] / pi[..., star : star + 1] + m / pi - env.gaps**2
    out[..., star] = 0.0
    return out


def step_conditional_variance(env: BanditEnvironment, pi, a: int) -> float:
    w = np.asarray(pi, dtype=float)
    star = env.best_arm
    if w[a] <= 0 or w[star] <= 0:
        raise ValueError("importance weight undefined: zero probability on played or best arm")
    if a == star:
        return 0.0
    m = env.second_moments
    return float(m[star] / w[star] + m[a] / w[a] - env.gaps[a] ** 2)


@dataclass(frozen=True)
class VarianceLedger:
    """Running sums W_t(a) of the exact conditional variances of the gap martingales."""

    W: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: int = 0

    @classmethod
    def fresh(cls, K: int) -> VarianceLedger:
        return cls(np.zeros(K), 0)


def accumulate_variance(ledger: VarianceLedger, env: BanditEnvironment, pi) -> VarianceLedger:
    w = pi.weights if isinstance(pi, SimplexDistribution) else np.asarray(pi, dtype=float)
    if np.any(w <= 0):
        raise ValueError("importance weight undefined: sampling distribution has a zero entry")
    return VarianceLedger(ledger.W + step_variances(env, w), ledger.t + 1)
