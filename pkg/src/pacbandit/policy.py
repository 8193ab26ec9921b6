"""Smoothed exponential-weights policy with importance-weighted reward estimates.

Rounds are numbered from 1. Rounds 1..K-1 play uniformly; from round K on the
policy plays

    pi_{t+1} = (1 - K eps_{t+1}) * gibbs(R_hat_t, gamma_t) + eps_{t+1}

with gamma_t = K^{-1/3} t^{1/3} sqrt(ln K) and eps_t = K^{-2/3} t^{-1/3}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .simplex import SimplexDistribution, gibbs, mix_with_uniform, sample_rows

WARMUP_MODES = ("uniform", "round_robin")


def _check_K(K: int):
    if K < 2:
        raise ValueError(f"schedules need K >= 2 (ln K must be positive), got K={K}")


def gamma_value(t, K: int):
    """Inverse temperature K^{-1/3} t^{1/3} sqrt(ln K); accepts arrays of t."""
    _check_K(K)
    return np.cbrt(np.asarray(t, dtype=float) / K) * math.sqrt(math.log(K))


def epsilon_value(t, K: int):
    """Exploration floor K^{-2/3} t^{-1/3}; accepts arrays of t."""
    _check_K(K)
    return 1.0 / np.cbrt(np.asarray(t, dtype=float) * K * K)


@dataclass(frozen=True)
class Schedules:
    K: int

    def __post_init__(self):
        _check_K(self.K)

    def gamma(self, t):
        return gamma_value(t, self.K)

    def epsilon(self, t):
        return epsilon_value(t, self.K)


@dataclass(frozen=True)
class PolicyState:
    """Policy state for round ``t``.

    ``current_pi`` is the distribution played at round ``t``. After
    :func:`importance_weighted_update` the accumulated sums include round ``t``;
    :func:`advance` then forms pi_{t+1} and moves to the next round.
    """

    t: int
    cum_iw_reward: np.ndarray
    current_pi: SimplexDistribution
    schedules: Schedules
    warmup: str = "uniform"

    @classmethod
    def initial(cls, K: int, warmup: str = "uniform") -> PolicyState:
        if warmup not in WARMUP_MODES:
            raise ValueError(f"unknown warmup mode {warmup!r}")
        return cls(1, np.zeros(K), SimplexDistribution.uniform(K), Schedules(K), warmup)

    @property
    def K(self) -> int:
        return self.schedules.K

    @property
    def estimates(self) -> np.ndarray:
        """R_hat(a) = cumulative importance-weighted reward / t."""
        return self.cum_iw_reward / self.t


def choose_arm(state: PolicyState, rng: np.random.Generator) -> int:
    """Draw A_t from pi_t (or the next arm in turn under round-robin warmup)."""
    u = rng.random()
    if state.warmup == "round_robin" and state.t < state.K:
        return (state.t - 1) % state.K
    return int(sample_rows(state.current_pi.weights, u))


def importance_weighted_update(state: PolicyState, a_played: int, reward: float) -> PolicyState:
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward {reward!r} outside [0, 1]")
    p = state.current_pi[a_played]
    if p <= 0:
        raise ValueError(f"arm {a_played} had zero probability under pi_t")
    cum = state.cum_iw_reward.copy()
    cum[a_played] += reward / p
    return replace(state, cum_iw_reward=cum)


def posterior(state: PolicyState) -> SimplexDistribution:
    """Gibbs distribution over R_hat_t with temperature gamma_t."""
    if state.t < 1:
        raise ValueError("posterior needs t >= 1")
    return gibbs(state.estimates, float(state.schedules.gamma(state.t)))


def next_sampling_distribution(state: PolicyState) -> SimplexDistribution:
    t, K = state.t, state.K
    if t < K - 1:
        return SimplexDistribution.uniform(K)
    eps = float(state.schedules.epsilon(t + 1))
    return mix_with_uniform(posterior(state), eps)


def advance(state: PolicyState) -> PolicyState:
    """Form pi_{t+1} from the round-t estimates and move to round t+1."""
    return replace(state, t=state.t + 1, current_pi=next_sampling_distribution(state))


def play_round(state: PolicyState, env, rng: np.random.Generator) -> tuple[PolicyState, int, float]:
    """One full round: draw arm, pull, update estimates, advance.

    Consumes exactly two uniforms from ``rng`` (arm, reward), in the same
    order as the batched simulator.
    """
    a = choose_arm(state, rng)
    r = env.pull(a, rng)
    state = importance_weighted_update(state, a, r)
    return advance(state), a, r
