"""Closed-form evaluators for the concentration and regret inequalities.

Evaluators that carry a certification precondition never refuse to compute:
they return the value together with a flag so reports can show the rounds
before the guarantee switches on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .policy import epsilon_value
from .simplex import SimplexDistribution, gibbs

E_MINUS_2 = math.e - 2.0
VIOLATION_ATOL = 1e-9


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")


def l_t(t, delta: float):
    """L_t = 2 ln(t+1) + ln(2/delta); vectorized over ``t``."""
    _check_delta(delta)
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("rounds start at t = 1")
    out = 2.0 * np.log1p(t) + math.log(2.0 / delta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BoundInputs:
    """Scalars feeding the PAC-Bayes-Bernstein evaluators.

    ``lam`` is the Bernstein tilt sqrt(L / ((e-2) V_bar)) used inside the
    proof; it is derived, not supplied.
    """

    delta: float
    t: int
    C: float
    V_bar: float

    def __post_init__(self):
        _check_delta(self.delta)
        if self.V_bar <= 0:
            raise ValueError("V_bar must be positive")
        if self.C <= 0:
            raise ValueError("C must be positive")

    @property
    def L(self) -> float:
        return l_t(self.t, self.delta)

    @property
    def lam(self) -> float:
        return math.sqrt(self.L / (E_MINUS_2 * self.V_bar))


def pac_bayes_bernstein_rhs(kl, v_rho, inputs: BoundInputs | None = None, *, V_bar=None, L=None):
    """sqrt(e-2) * (KL sqrt(V_bar/L) + V(rho) sqrt(L/V_bar) + sqrt(L V_bar)).

    Either pass ``inputs`` or the raw ``V_bar`` and ``L`` (arrays broadcast).
    """
    if inputs is not None:
        V_bar, L = inputs.V_bar, inputs.L
    V_bar = np.asarray(V_bar, dtype=float)
    L = np.asarray(L, dtype=float)
    kl = np.asarray(kl, dtype=float)
    v_rho = np.asarray(v_rho, dtype=float)
    if np.any(kl < 0) or np.any(v_rho < 0):
        raise ValueError("kl and v_rho must be nonnegative")
    out = math.sqrt(E_MINUS_2) * (kl * np.sqrt(V_bar / L) + v_rho * np.sqrt(L / V_bar) + np.sqrt(L * V_bar))
    return float(out) if out.ndim == 0 else out


def check_technical_condition(inputs: BoundInputs) -> bool:
    """sqrt(L / ((e-2) V_bar)) <= 1/C, i.e. the Bernstein tilt is admissible."""
    return technical_condition(inputs.L, inputs.V_bar, inputs.C)


def technical_condition(L, V_bar, C):
    # squared form: L C^2 <= (e-2) V_bar, exact at the boundary
    ok = np.asarray(L) * np.asarray(C) ** 2 <= E_MINUS_2 * np.asarray(V_bar) * (1 + 1e-15)
    return bool(ok) if np.ndim(ok) == 0 else ok


def bandit_condition(t, eps_t, delta: float):
    """L_t / (2 (e-2) t) <= eps_t: the bandit form of the technical condition."""
    L = l_t(t, delta)
    ok = np.asarray(L) <= 2.0 * E_MINUS_2 * np.asarray(t, dtype=float) * np.asarray(eps_t)
    return bool(ok) if np.ndim(ok) == 0 else ok


class GapBound(NamedTuple):
    value: float
    certified: bool


def gap_bound_rhs(kl, t, eps_t, L_t):
    """sqrt(2(e-2)/(t eps_t)) * (KL/sqrt(L_t) + 2 sqrt(L_t)); vectorized."""
    kl, t, eps_t, L_t = (np.asarray(x, dtype=float) for x in (kl, t, eps_t, L_t))
    out = np.sqrt(2.0 * E_MINUS_2 / (t * eps_t)) * (kl / np.sqrt(L_t) + 2.0 * np.sqrt(L_t))
    return float(out) if out.ndim == 0 else out


def gap_bound(kl, t: int, eps_t: float, delta: float) -> GapBound:
    """Gap deviation bound with its certification flag."""
    L = l_t(t, delta)
    return GapBound(gap_bound_rhs(kl, t, eps_t, L), bandit_condition(t, eps_t, delta))


def variance_upper_bound(t, eps_t):
    """2t / eps_t, the deterministic cap on the gap martingales' variance."""
    out = 2.0 * np.asarray(t, dtype=float) / np.asarray(eps_t, dtype=float)
    return float(out) if out.ndim == 0 else out


def gibbs_prior(env_means, gamma_t: float) -> SimplexDistribution:
    """Oracle prior: Gibbs weights over the true means. Diagnostics only."""
    return gibbs(env_means, gamma_t)


def kl_bound_lemma5_rhs(gamma_t, gap_rho_true, gap_rho_emp, gap_mu_true, gap_mu_emp):
    return gamma_t * ((gap_rho_true - gap_rho_emp) + (gap_mu_emp - gap_mu_true))


def expsum_bound(x, alpha: float) -> tuple[float, float]:
    """(sum x_i e^{-alpha x_i} / sum e^{-alpha x_j}, ln(n)/alpha) with x_1 = 0."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need n >= 2")
    if x[0] != 0:
        raise ValueError("first coordinate must be exactly 0")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return float(expsum_ratio(x, alpha)), math.log(x.size) / alpha


def expsum_ratio(x, alpha):
    """Row-wise sum x_i e^{-alpha x_i} / sum e^{-alpha x_j} (max-shifted)."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    z = -(alpha[..., None] * x if alpha.ndim else alpha * x)
    w = np.exp(z - z.max(axis=-1, keepdims=True))
    return (x * w).sum(axis=-1) / w.sum(axis=-1)


def regret_decomposition_rhs(gap_rho_true, gap_rho_emp, gamma_t, K: int, eps_next):
    return (gap_rho_true - gap_rho_emp) + math.log(K) / np.asarray(gamma_t) + K * np.asarray(eps_next)


def theorem3_regret_rhs(t, K: int, L_t):
    """(K/(t+1))^{1/3} * ((16(e-2)+1) sqrt(ln K) + 2 sqrt(2(e-2) L_t) + 1)."""
    t = np.asarray(t, dtype=float)
    pre = np.cbrt(K / (t + 1.0))
    out = pre * ((16.0 * E_MINUS_2 + 1.0) * math.sqrt(math.log(K)) + 2.0 * np.sqrt(2.0 * E_MINUS_2 * np.asarray(L_t)) + 1.0)
    return float(out) if out.ndim == 0 else out


def round_threshold_max_expression(K: int, delta: float) -> int:
    """ceil(max(K, K^{4(e-2)} sqrt(delta/2)))."""
    _check_delta(delta)
    return int(math.ceil(max(float(K), K ** (4.0 * E_MINUS_2) * math.sqrt(delta / 2.0))))


def _eq3_holds(t: np.ndarray, K: int, delta: float) -> np.ndarray:
    return bandit_condition(t, epsilon_value(t, K), delta)


@lru_cache(maxsize=256)
def round_threshold(K: int, delta: float, horizon: int = 10**7) -> int:
    """First round at which the regret bound is certified.

    Starts from :func:`round_threshold_max_expression`, scans upward to the
    first t where the bandit technical condition holds, and confirms that it
    keeps holding for every t up to ``horizon``.
    """
    if K < 2:
        raise ValueError("need K >= 2")
    start = round_threshold_max_expression(K, delta)
    last_bad = start - 1
    chunk = 1 << 16
    for lo in range(start, horizon + 1, chunk):
        ts = np.arange(lo, min(lo + chunk, horizon + 1), dtype=float)
        bad = np.flatnonzero(~_eq3_holds(ts, K, delta))
        if bad.size:
            last_bad = int(ts[bad[-1]])
    if last_bad >= horizon:
        raise ValueError(f"technical condition does not hold at horizon={horizon}")
    return last_bad + 1


def theorem3_certified(t, K: int, delta: float):
    return np.asarray(t) >= round_threshold(K, delta)


class BoundReport(NamedTuple):
    """One per-round row of ``bounds.csv``."""

    replica: int
    t: int
    kl_rho_mu: float
    v_rho: float
    delta_rho_true: float
    delta_rho_emp: float
    thm2_rhs: float
    thm2_violation: bool
    lemma1_lhs: float
    lemma1_rhs: float
    lemma5_lhs: float
    lemma5_rhs: float
    regret_decomp_rhs: float
    thm3_rhs: float
    thm3_certified: bool
    thm3_violation: bool


def violated(lhs, rhs, atol: float = VIOLATION_ATOL):
    return np.abs(lhs) > np.asarray(rhs) + atol
