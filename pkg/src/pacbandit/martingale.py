"""Synthetic martingale families and Monte Carlo validators for the concentration machinery.

A family advances a batch of independent replicas one step at a time. Each
step returns the martingale differences ``X`` of shape ``(replicas, H)`` and
their conditional variances ``E[X^2 | past]`` (known before the draw, so the
tracked V_t is exact).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import bounds as B
from .env import BanditEnvironment
from .policy import epsilon_value
from .simplex import kl_rows
from .simulate import BatchBandit
from .streams import ReplicaNoise, replica_rng

MGF_LAMBDA_GRID = (0.1, 0.25, 0.5, 0.75, 1.0)


class MartingaleFamily:
    """Base class: bounded martingale difference sequences indexed by h."""

    name = "base"
    noise_dim = 1

    def __init__(self, H_size: int = 1, C: float = 1.0):
        if H_size < 1:
            raise ValueError("H_size must be >= 1")
        self.H_size = H_size
        self.C = float(C)

    def bound(self, t) -> float:
        """Uniform bound on |X_tau(h)| for all tau <= t."""
        return self.C

    def start(self, n: int):
        raise NotImplementedError

    def take(self, state, rows):
        raise NotImplementedError

    def step(self, state, u: np.ndarray):
        raise NotImplementedError


class RademacherFamily(MartingaleFamily):
    """Independent +-C steps; V_t(h) = t C^2."""

    name = "rademacher"

    @property
    def noise_dim(self):
        return self.H_size

    def start(self, n):
        return n

    def take(self, state, rows):
        return len(rows)

    def step(self, state, u):
        X = np.where(u < 0.5, -self.C, self.C)
        return state, X, np.full_like(X, self.C**2)


class ScaledFamily(MartingaleFamily):
    """+-sigma_t(h) steps with predictable scale sigma_t = C (1 + |sin M_{t-1}(h)|) / 2."""

    name = "scaled"

    @property
    def noise_dim(self):
        return self.H_size

    def start(self, n):
        return np.zeros((n, self.H_size))

    def take(self, state, rows):
        return state[np.asarray(rows)].copy()

    def scale(self, M):
        return self.C * (1.0 + np.abs(np.sin(M))) / 2.0

    def step(self, M, u):
        sigma = self.scale(M)
        X = np.where(u < 0.5, -sigma, sigma)
        return M + X, X, sigma**2


class BanditGapFamily(MartingaleFamily):
    """Gap martingales t(D_hat_t(a) - D(a)) of a live policy run, indexed by arm.

    Differences are (R^{a*} - R^a) - gap(a); with the exploration floor they are
    bounded by 1/eps_t + 1 up to round t.
    """

    name = "bandit"
    noise_dim = 2

    def __init__(self, env: BanditEnvironment, warmup: str = "uniform"):
        super().__init__(H_size=env.K, C=math.inf)
        self.env = env
        self.warmup = warmup

    def bound(self, t) -> float:
        t = max(int(t), self.env.K)
        return 1.0 / float(epsilon_value(t, self.env.K)) + 1.0

    def start(self, n):
        return BatchBandit(self.env, n, self.warmup)

    def take(self, state, rows):
        return state.take(rows)

    def step(self, state, u):
        s = state.step(u)
        return state, s.X, s.var


def builtin_families(H_size: int = 1, C: float = 1.0, env: BanditEnvironment | None = None):
    """Rademacher, history-scaled, and bandit-gap families."""
    env = env or BanditEnvironment([0.9, 0.7, 0.5, 0.3, 0.1])
    return [RademacherFamily(H_size, C), ScaledFamily(H_size, C), BanditGapFamily(env)]


@dataclass
class MartingaleTrace:
    """Running M_t(h) and V_t(h) for a batch of replicas."""

    M: np.ndarray
    V: np.ndarray
    t: int = 0

    def push(self, X, var):
        self.M = self.M + X
        self.V = self.V + var
        self.t += 1


def run_paths(family: MartingaleFamily, T: int, replicas, master_seed: int, suite: str = "mgf", block: int = 512):
    """Yield the trace after each of T steps for the given replica indices."""
    replicas = np.asarray(replicas, dtype=np.int64)
    n = replicas.size
    noise = ReplicaNoise(master_seed, replicas, suite, family.noise_dim)
    state = family.start(n)
    trace = MartingaleTrace(np.zeros((n, family.H_size)), np.zeros((n, family.H_size)))
    for u in noise.rounds(T, block):
        state, X, var = family.step(state, u)
        trace.push(X, var)
        yield trace, X


def _chunks(n: int, size: int):
    for lo in range(0, n, size):
        yield np.arange(lo, min(n, lo + size))


class MGFResult(NamedTuple):
    lam: float
    sample_mean: float
    std_err: float
    passed: bool


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def bernstein_mgf_grid(family: MartingaleFamily, lambdas, T: int, replicas: int, master_seed: int, *, h: int = 0, chunk: int = 20000):
    """Monte Carlo E exp(lam M_T - (e-2) lam^2 V_T) for each lam, sharing sample paths."""
    C = family.bound(T)
    lambdas = [float(x) for x in lambdas]
    for lam in lambdas:
        if lam < 0 or lam > 1.0 / C * (1 + 1e-12):
            raise ValueError(f"lambda={lam} outside [0, 1/C] with C={C}")
    M = np.empty(replicas)
    V = np.empty(replicas)
    for rows in _chunks(replicas, chunk):
        for trace, _ in run_paths(family, T, rows, master_seed, "mgf"):
            pass
        M[rows] = trace.M[:, h]
        V[rows] = trace.V[:, h]
    out = []
    for lam in lambdas:
        vals = np.exp(lam * M - B.E_MINUS_2 * lam**2 * V)
        mean, se = _mean_se(vals)
        out.append(MGFResult(lam, mean, se, mean <= 1.0 + 3.0 * se))
    return out


def bernstein_mgf_check(family, lam, T, replicas, master_seed, **kw) -> tuple[float, float, bool]:
    r = bernstein_mgf_grid(family, [lam], T, replicas, master_seed, **kw)[0]
    return r.sample_mean, r.std_err, r.passed


class ChangeOfMeasure(NamedTuple):
    lhs: float
    rhs: float
    passed: bool
    support_violation: bool


def _log_mean_exp(phi, mu):
    phi = np.asarray(phi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    pos = mu > 0
    z = np.where(pos, phi + np.log(np.where(pos, mu, 1.0)), -np.inf)
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def change_of_measure_check(phi, rho, mu, atol: float = B.VIOLATION_ATOL) -> ChangeOfMeasure:
    """E_rho[phi] <= KL(rho||mu) + ln E_mu[e^phi]."""
    phi, rho, mu = (np.asarray(x, dtype=float) for x in (phi, rho, mu))
    if not (phi.shape == rho.shape == mu.shape):
        raise ValueError("phi, rho, mu must have matching shapes")
    lhs = float(np.dot(rho, phi))
    kl = float(kl_rows(rho, mu))
    rhs = kl + float(_log_mean_exp(phi, mu))
    if math.isinf(kl):
        return ChangeOfMeasure(lhs, rhs, True, True)
    return ChangeOfMeasure(lhs, rhs, lhs <= rhs + atol, False)


def change_of_measure_suite(n_triples: int = 10_000, max_H: int = 50, seed: int = 0):
    """Randomized triples; returns (min slack rhs - lhs, all passed, softmax equality error)."""
    rng = replica_rng(seed, 0, "lemmas")
    worst = math.inf
    ok = True
    eq_err = 0.0
    for _ in range(n_triples):
        H = int(rng.integers(1, max_H + 1))
        phi = rng.uniform(-10, 10, H)
        mu = rng.dirichlet(np.full(H, rng.uniform(0.1, 5)))
        rho = rng.dirichlet(np.full(H, rng.uniform(0.1, 5)))
        if H > 1 and rng.random() < 0.3:
            rho[rng.random(H) < 0.5] = 0.0
            if rho.sum() == 0:
                rho[0] = 1.0
            rho /= rho.sum()
        mu = np.maximum(mu, 1e-300)
        mu /= mu.sum()
        r = change_of_measure_check(phi, rho, mu)
        ok &= r.passed
        worst = min(worst, r.rhs - r.lhs)
        # the Gibbs posterior mu e^phi / Z attains equality
        g = mu * np.exp(phi - phi.max())
        g /= g.sum()
        e = change_of_measure_check(phi, g, mu)
        eq_err = max(eq_err, abs(e.rhs - e.lhs))
    return worst, ok, eq_err


def expsum_suite(n_tuples: int = 100_000, seed: int = 0, max_n: int = 8, x_max: float = 50.0):
    """Randomized check of the expsum inequality; returns (max lhs - rhs, count)."""
    rng = replica_rng(seed, 1, "lemmas")
    ns = rng.integers(2, max_n + 1, n_tuples)
    alphas = 10.0 ** rng.uniform(-2, 2, n_tuples)
    worst = -math.inf
    for n in range(2, max_n + 1):
        sel = ns == n
        k = int(sel.sum())
        if not k:
            continue
        x = rng.uniform(-x_max, x_max, (k, n))
        x[:, 0] = 0.0
        lhs = B.expsum_ratio(x, alphas[sel])
        rhs = math.log(n) / alphas[sel]
        worst = max(worst, float((lhs - rhs).max()))
    return worst, n_tuples


class Theorem1Result(NamedTuple):
    rate: float
    std_err: float
    n: int
    passed: bool
    flags: np.ndarray
    certified_rounds: int


PosteriorRule = Callable[[np.ndarray, np.ndarray], np.ndarray]


def argmax_posterior(M, V):
    """Point mass on the index with the largest |M_t(h)|."""
    w = np.zeros_like(M)
    w[np.arange(M.shape[0]), np.abs(M).argmax(axis=1)] = 1.0
    return w


def uniform_posterior(M, V):
    return np.full_like(M, 1.0 / M.shape[1])


POSTERIOR_RULES = {"argmax": argmax_posterior, "uniform": uniform_posterior}


def default_v_bar(family: MartingaleFamily) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(family, BanditGapFamily):
        K = family.env.K
        return lambda t: B.variance_upper_bound(t, epsilon_value(t, K))
    return lambda t: np.asarray(t, dtype=float) * family.C**2 * (1 + 1e-6)


def theorem1_violation_rate(
    family: MartingaleFamily,
    delta: float,
    T: int,
    replicas: int,
    master_seed: int,
    posterior_rule: str | PosteriorRule = "argmax",
    v_bar: Callable | None = None,
    chunk: int = 512,
) -> Theorem1Result:
    """Fraction of replicas where |M_t(rho_t)| exceeds the PAC-Bayes-Bernstein bound at some certified t.

    Rounds where the tilt condition fails for (V_bar_t, C) carry no guarantee
    and are skipped; an error is raised only if no round up to T qualifies.
    The prior is uniform over the H indices.
    """
    rule = POSTERIOR_RULES[posterior_rule] if isinstance(posterior_rule, str) else posterior_rule
    v_bar = v_bar or default_v_bar(family)
    ts = np.arange(1, T + 1)
    L = B.l_t(ts, delta)
    vb = np.broadcast_to(np.asarray(v_bar(ts), dtype=float), ts.shape)
    C = np.array([family.bound(t) for t in ts])
    cert = B.technical_condition(L, vb, C)
    if not np.any(cert):
        raise ValueError("technical condition fails at every round up to T for this family and V_bar")
    H = family.H_size
    mu = np.full(H, 1.0 / H)
    flags = np.zeros(replicas, dtype=bool)
    for rows in _chunks(replicas, chunk):
        f = np.zeros(rows.size, dtype=bool)
        for trace, _ in run_paths(family, T, rows, master_seed, "theorem1"):
            i = trace.t - 1
            if not cert[i]:
                continue
            rho = rule(trace.M, trace.V)
            kl = kl_rows(rho, mu)
            m_rho = (rho * trace.M).sum(axis=1)
            v_rho = (rho * trace.V).sum(axis=1)
            rhs = B.pac_bayes_bernstein_rhs(kl, v_rho, V_bar=vb[i], L=L[i])
            f |= B.violated(m_rho, rhs)
        flags[rows] = f
    rate = float(flags.mean())
    se = math.sqrt(rate * (1 - rate) / replicas)
    return Theorem1Result(rate, se, replicas, rate <= delta, flags, int(cert.sum()))


class ConditionalMeanResult(NamedTuple):
    z_scores: np.ndarray
    passed: bool


def conditional_mean_check(family: MartingaleFamily, t: int = 10, n_histories: int = 20, draws: int = 20000, master_seed: int = 0, z_max: float = 3.0):
    """Sample histories up to round t-1, then estimate E[X_t(h) | history] by branching.

    Indices with zero conditional variance (e.g. the best arm's gap martingale)
    must have an exactly zero mean.
    """
    hist = np.arange(n_histories)
    state = family.start(n_histories)
    noise = ReplicaNoise(master_seed, hist, "conditional", family.noise_dim)
    for u in noise.rounds(t - 1):
        state, _, _ = family.step(state, u)
    rows = np.repeat(hist, draws)
    branched = family.take(state, rows)
    rng = replica_rng(master_seed, n_histories, "conditional")
    _, X, _ = family.step(branched, rng.random((rows.size, family.noise_dim)))
    X = X.reshape(n_histories, draws, family.H_size)
    mean = X.mean(axis=1)
    se = X.std(axis=1, ddof=1) / math.sqrt(draws)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / se, np.where(np.abs(mean) <= 1e-12, 0.0, np.inf))
    return ConditionalMeanResult(z, bool(np.all(np.abs(z) <= z_max)))
