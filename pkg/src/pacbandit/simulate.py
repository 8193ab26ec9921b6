"""Batched simulation of the smoothed exponential-weights policy.

All replicas in a batch advance in lockstep on ``(replicas, K)`` arrays; each
replica still consumes its own uniform stream (two uniforms per round: arm,
reward), so a replica's trajectory does not depend on which batch it ran in.
Every round is checked against the deterministic inequalities and the
high-probability bounds; only the configured report rounds are kept.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from .env import BanditEnvironment, step_variances
from .policy import WARMUP_MODES, epsilon_value, gamma_value
from .simplex import log_gibbs_weights, mix_weights, sample_rows
from .streams import ReplicaNoise

POSTERIORS = ("rho_exp", "worst_arm")


def default_report_rounds(T: int, stride: int | None = None) -> np.ndarray:
    """Every round below 256 plus powers of two, or every ``stride``-th round; T always included."""
    if stride:
        ts = set(range(stride, T + 1, stride))
    else:
        ts = set(range(1, min(T, 255) + 1))
        p = 256
        while p <= T:
            ts.add(p)
            p *= 2
    ts.add(T)
    return np.array(sorted(ts), dtype=np.int64)


def curve_rounds(T: int, n: int = 400) -> np.ndarray:
    """Roughly log-spaced rounds in [1, T] used for regret-slope fits."""
    ts = np.unique(np.round(np.geomspace(1, T, n)).astype(np.int64))
    return ts


@dataclass
class StepInfo:
    t: int
    arms: np.ndarray
    rewards: np.ndarray
    pi: np.ndarray
    X: np.ndarray
    var: np.ndarray
    estimates: np.ndarray
    gamma: float
    rho_log: np.ndarray
    rho: np.ndarray
    pi_next: np.ndarray


class BatchBandit:
    """Lockstep state of many independent policy runs on one environment."""

    def __init__(self, env: BanditEnvironment, n: int, warmup: str = "uniform"):
        if warmup not in WARMUP_MODES:
            raise ValueError(f"unknown warmup mode {warmup!r}")
        self.env = env
        self.n = n
        self.warmup = warmup
        K = env.K
        self.t = 0
        self.pi = np.full((n, K), 1.0 / K)
        self.cum = np.zeros((n, K))
        self.W = np.zeros((n, K))
        self.cum_regret = np.zeros(n)
        self._rows = np.arange(n)

    def take(self, rows) -> BatchBandit:
        """Copy of the selected rows (used to branch histories)."""
        rows = np.asarray(rows)
        out = BatchBandit(self.env, rows.size, self.warmup)
        out.t = self.t
        for name in ("pi", "cum", "W", "cum_regret"):
            setattr(out, name, getattr(self, name)[rows].copy())
        return out

    def step(self, u: np.ndarray) -> StepInfo:
        env, K, rows = self.env, self.env.K, self._rows
        self.t += 1
        t = self.t
        pi = self.pi
        if self.warmup == "round_robin" and t < K:
            arms = np.full(self.n, (t - 1) % K)
        else:
            arms = sample_rows(pi, u[:, 0])
        rewards = env.rewards_from_uniforms(arms, u[:, 1])
        iw = np.zeros_like(pi)
        iw[rows, arms] = rewards / pi[rows, arms]
        star = env.best_arm
        X = iw[:, star : star + 1] - iw - env.gaps
        X[:, star] = 0.0
        var = step_variances(env, pi)
        self.W += var
        self.cum += iw
        self.cum_regret += pi @ env.gaps
        est = self.cum / t
        gam = float(gamma_value(t, K))
        rho_log = log_gibbs_weights(est, gam)
        rho = np.exp(rho_log)
        if t < K - 1:
            pi_next = np.full_like(pi, 1.0 / K)
        else:
            pi_next = mix_weights(rho, float(epsilon_value(t + 1, K)))
        self.pi = pi_next
        return StepInfo(t, arms, rewards, pi, X, var, est, gam, rho_log, rho, pi_next)


@dataclass
class BanditBatchResult:
    """Per-replica outcome of :func:`simulate_bandit` (rows follow ``replicas``)."""

    replicas: np.ndarray
    report_t: np.ndarray
    report: dict = field(default_factory=dict)
    curve_t: np.ndarray = None
    cum_regret_curve: np.ndarray = None
    thm2_any: dict = field(default_factory=dict)
    thm2_certified_rounds: int = 0
    lemma1_min_slack: np.ndarray = None
    lemma5_min_slack: np.ndarray = None
    decomp_min_slack: np.ndarray = None
    thm3_any: np.ndarray = None
    thm3_threshold: int | None = None
    W: np.ndarray = None
    cum_iw_reward: np.ndarray = None
    actions: np.ndarray = None
    rewards: np.ndarray = None

    @classmethod
    def concat(cls, parts: list[BanditBatchResult]) -> BanditBatchResult:
        """Merge batches and order rows by replica index."""
        order = np.argsort(np.concatenate([p.replicas for p in parts]), kind="stable")

        def cat(get):
            vals = [get(p) for p in parts]
            if vals[0] is None:
                return None
            return np.concatenate(vals, axis=0)[order]

        first = parts[0]
        return cls(
            replicas=cat(lambda p: p.replicas),
            report_t=first.report_t,
            report={k: cat(lambda p, k=k: p.report[k]) for k in first.report},
            curve_t=first.curve_t,
            cum_regret_curve=cat(lambda p: p.cum_regret_curve),
            thm2_any={k: cat(lambda p, k=k: p.thm2_any[k]) for k in first.thm2_any},
            thm2_certified_rounds=first.thm2_certified_rounds,
            lemma1_min_slack=cat(lambda p: p.lemma1_min_slack),
            lemma5_min_slack=cat(lambda p: p.lemma5_min_slack),
            decomp_min_slack=cat(lambda p: p.decomp_min_slack),
            thm3_any=cat(lambda p: p.thm3_any),
            thm3_threshold=first.thm3_threshold,
            W=cat(lambda p: p.W),
            cum_iw_reward=cat(lambda p: p.cum_iw_reward),
            actions=cat(lambda p: p.actions),
            rewards=cat(lambda p: p.rewards),
        )


REPORT_FIELDS = (
    "kl_rho_mu", "v_rho", "delta_rho_true", "delta_rho_emp", "thm2_rhs", "thm2_violation",
    "lemma1_lhs", "lemma1_rhs", "lemma5_lhs", "lemma5_rhs", "regret_decomp_rhs",
    "thm3_rhs", "thm3_certified", "thm3_violation", "instant_regret", "cumulative_regret",
)


def simulate_bandit(
    env: BanditEnvironment,
    delta: float,
    T: int,
    replicas,
    master_seed: int,
    *,
    warmup: str = "uniform",
    report_rounds=None,
    slope_rounds=None,
    record_actions: bool = False,
) -> BanditBatchResult:
    """Run the policy on a batch of replicas for ``T`` rounds, checking every round."""
    K = env.K
    if T < K:
        raise ValueError(f"horizon T={T} is shorter than the warmup (K={K})")
    replicas = np.asarray(replicas, dtype=np.int64)
    n = replicas.size
    report_t = default_report_rounds(T) if report_rounds is None else np.asarray(report_rounds, dtype=np.int64)
    curve_t = curve_rounds(T) if slope_rounds is None else np.asarray(slope_rounds, dtype=np.int64)
    report_idx = {int(t): i for i, t in enumerate(report_t)}
    curve_idx = {int(t): i for i, t in enumerate(curve_t)}

    try:
        threshold = B.round_threshold(K, delta)
    except ValueError:
        threshold = None

    sim = BatchBandit(env, n, warmup)
    noise = ReplicaNoise(master_seed, replicas, "bandit", 2)
    star, worst = env.best_arm, env.worst_arm
    gaps = env.gaps

    report = {k: np.zeros((n, report_t.size)) for k in REPORT_FIELDS}
    curve = np.zeros((n, curve_t.size))
    thm2_any = {k: np.zeros(n, dtype=bool) for k in POSTERIORS}
    lemma1_min = np.full(n, np.inf)
    lemma5_min = np.full(n, np.inf)
    decomp_min = np.full(n, np.inf)
    thm3_any = np.zeros(n, dtype=bool)
    thm2_rounds = 0
    actions = np.zeros((n, T), dtype=np.int64) if record_actions else None
    rewards = np.zeros((n, T)) if record_actions else None

    for u in noise.rounds(T):
        s = sim.step(u)
        t = s.t
        if record_actions:
            actions[:, t - 1] = s.arms
            rewards[:, t - 1] = s.rewards
        inst = s.pi @ gaps
        eps_t = float(epsilon_value(t, K))
        eps_next = float(epsilon_value(t + 1, K))
        L = B.l_t(t, delta)

        mu_log = log_gibbs_weights(env.arm_means, s.gamma)
        mu = np.exp(mu_log)
        kl = np.maximum((s.rho * (s.rho_log - mu_log)).sum(axis=1), 0.0)
        d_hat = s.estimates[:, star : star + 1] - s.estimates
        gap_rho = s.rho @ gaps
        gap_rho_emp = (s.rho * d_hat).sum(axis=1)
        gap_mu = float(mu @ gaps)
        gap_mu_emp = d_hat @ mu
        lemma5_rhs = B.kl_bound_lemma5_rhs(s.gamma, gap_rho, gap_rho_emp, gap_mu, gap_mu_emp)
        lemma5_min = np.minimum(lemma5_min, lemma5_rhs - kl)

        gap_next = s.pi_next @ gaps
        decomp_rhs = B.regret_decomposition_rhs(gap_rho, gap_rho_emp, s.gamma, K, eps_next)
        lemma1_lhs = sim.W.max(axis=1)
        lemma1_rhs = B.variance_upper_bound(t, eps_t)
        if t >= K:
            decomp_min = np.minimum(decomp_min, decomp_rhs - gap_next)
            lemma1_min = np.minimum(lemma1_min, lemma1_rhs - lemma1_lhs)

        thm2_cert = t >= K and B.bandit_condition(t, eps_t, delta)
        thm2_rhs = B.gap_bound_rhs(kl, t, eps_t, L)
        thm2_viol = B.violated(gap_rho - gap_rho_emp, thm2_rhs) & thm2_cert
        if thm2_cert:
            thm2_rounds += 1
            thm2_any["rho_exp"] |= thm2_viol
            kl_worst = -mu_log[worst]
            rhs_worst = B.gap_bound_rhs(kl_worst, t, eps_t, L)
            thm2_any["worst_arm"] |= B.violated(gaps[worst] - d_hat[:, worst], rhs_worst)

        thm3_cert = threshold is not None and t >= threshold
        thm3_rhs = B.theorem3_regret_rhs(t, K, L)
        thm3_viol = B.violated(gap_next, thm3_rhs) & thm3_cert
        thm3_any |= thm3_viol

        j = curve_idx.get(t)
        if j is not None:
            curve[:, j] = sim.cum_regret
        i = report_idx.get(t)
        if i is not None:
            cols = report
            cols["kl_rho_mu"][:, i] = kl
            cols["v_rho"][:, i] = (s.rho * sim.W).sum(axis=1)
            cols["delta_rho_true"][:, i] = gap_rho
            cols["delta_rho_emp"][:, i] = gap_rho_emp
            cols["thm2_rhs"][:, i] = thm2_rhs
            cols["thm2_violation"][:, i] = thm2_viol
            cols["lemma1_lhs"][:, i] = lemma1_lhs
            cols["lemma1_rhs"][:, i] = lemma1_rhs
            cols["lemma5_lhs"][:, i] = kl
            cols["lemma5_rhs"][:, i] = lemma5_rhs
            cols["regret_decomp_rhs"][:, i] = decomp_rhs
            cols["thm3_rhs"][:, i] = thm3_rhs
            cols["thm3_certified"][:, i] = thm3_cert
            cols["thm3_violation"][:, i] = thm3_viol
            cols["instant_regret"][:, i] = inst
            cols["cumulative_regret"][:, i] = sim.cum_regret

    return BanditBatchResult(
        replicas=replicas,
        report_t=report_t,
        report=report,
        curve_t=curve_t,
        cum_regret_curve=curve,
        thm2_any=thm2_any,
        thm2_certified_rounds=thm2_rounds,
        lemma1_min_slack=lemma1_min,
        lemma5_min_slack=lemma5_min,
        decomp_min_slack=decomp_min,
        thm3_any=thm3_any,
        thm3_threshold=threshold,
        W=sim.W.copy(),
        cum_iw_reward=sim.cum.copy(),
        actions=actions,
        rewards=rewards,
    )
