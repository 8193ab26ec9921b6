"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (shown in the terminal summary and
printed with ``-s``). Tolerances and problem sizes are fixed here on purpose.
"""
import math
import time

import numpy as np
import pytest

import test_golden
from conftest import ACCEPTANCE_LINES
from pacbandit import bounds as B
from pacbandit.env import BanditEnvironment
from pacbandit.harness import REPLICA_CHUNK, estimate_regret_slope
from pacbandit.martingale import (
    MGF_LAMBDA_GRID,
    RademacherFamily,
    ScaledFamily,
    bernstein_mgf_grid,
    change_of_measure_suite,
    expsum_suite,
    theorem1_violation_rate,
)
from pacbandit.simulate import BanditBatchResult, simulate_bandit

MEANS = [0.9, 0.7, 0.5, 0.3, 0.1]
SEED = 2024


def report(criterion, passed, detail):
    line = f"{criterion:<4s} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def run_bandit(T, replicas):
    env = BanditEnvironment(MEANS)
    parts = [
        simulate_bandit(env, 0.1, T, np.arange(lo, min(lo + REPLICA_CHUNK, replicas)), SEED, report_rounds=[T])
        for lo in range(0, replicas, REPLICA_CHUNK)
    ]
    return BanditBatchResult.concat(parts)


@pytest.fixture(scope="module")
def thm2_run():
    start = time.perf_counter()
    res = run_bandit(5000, 1000)
    return res, time.perf_counter() - start


def test_c1_change_of_measure():
    start = time.perf_counter()
    slack, ok, eq_err = change_of_measure_suite(10_000, 50, SEED)
    elapsed = time.perf_counter() - start
    passed = ok and slack >= -1e-9 and eq_err <= 1e-12 and elapsed < 5
    report("C1", passed, f"min slack {slack:.3g}, equality error {eq_err:.2g}, {elapsed:.1f}s")


def test_c2_expsum():
    start = time.perf_counter()
    worst, n = expsum_suite(100_000, SEED)
    x = np.arange(0, 20 + 5e-5, 1e-4)
    sup = float(B.expsum_ratio(np.stack([np.zeros_like(x), x], axis=1), 1.0).max())
    elapsed = time.perf_counter() - start
    passed = n == 100_000 and worst <= 1e-12 and sup <= math.log(2) and elapsed < 10
    report("C2", passed, f"max lhs-rhs {worst:.3g} over {n}, n=2 sup {sup:.6f} < ln2, {elapsed:.1f}s")


def test_c3_bernstein_mgf():
    start = time.perf_counter()
    worst = -math.inf
    ok = True
    for fam in (RademacherFamily(1, 1.0), ScaledFamily(1, 1.0)):
        for r in bernstein_mgf_grid(fam, MGF_LAMBDA_GRID, 100, 100_000, SEED):
            ok &= r.sample_mean <= 1 + 3 * r.std_err
            worst = max(worst, (r.sample_mean - 1) / r.std_err)
    elapsed = time.perf_counter() - start
    report("C3", ok and elapsed < 120, f"worst (mean-1)/se {worst:.2f} (limit 3), {elapsed:.1f}s")


def test_c4_theorem1():
    start = time.perf_counter()
    r = theorem1_violation_rate(RademacherFamily(20, 1.0), 0.05, 1000, 2000, SEED, "argmax")
    elapsed = time.perf_counter() - start
    passed = r.rate <= 0.05 and r.certified_rounds > 0 and elapsed < 300
    report("C4", passed, f"rate {r.rate:.4f} ± {r.std_err:.4f} over {r.certified_rounds} certified rounds, {elapsed:.1f}s")


def test_c5_lemma1(thm2_run):
    res, _ = thm2_run
    slack = float(res.lemma1_min_slack.min())
    report("C5", slack >= -1e-9, f"min slack of 2t/eps_t - W_t(a) over t >= K: {slack:.4g}")


def test_c6_lemma5_and_regret_decomposition(thm2_run):
    res, _ = thm2_run
    l5 = float(res.lemma5_min_slack.min())
    dec = float(res.decomp_min_slack.min())
    report("C6", l5 >= -1e-9 and dec >= -1e-9, f"min slack KL bound {l5:.3g}, regret decomposition {dec:.3g}")


def test_c7_theorem2(thm2_run):
    res, elapsed = thm2_run
    rates = {k: float(v.mean()) for k, v in res.thm2_any.items()}
    passed = all(r <= 0.1 for r in rates.values()) and res.thm2_certified_rounds > 0 and elapsed < 600
    detail = ", ".join(f"{k} rate {v:.4f}" for k, v in rates.items())
    report("C7", passed, f"{detail}; {res.thm2_certified_rounds} certified rounds, {elapsed:.1f}s")


def test_c8_theorem3_and_slope():
    res = run_bandit(10_000, 200)
    thr = res.thm3_threshold
    rate = float(res.thm3_any.mean())
    slope = estimate_regret_slope(res.curve_t, res.cum_regret_curve, 100, 10_000)
    passed = thr == B.round_threshold(5, 0.1) and 1 - rate >= 0.9 and 0.55 <= slope <= 0.90
    report("C8", passed, f"threshold {thr}, violation rate {rate:.3f}, slope {slope:.3f}")


def test_c9_gap_bound_consistency():
    rng = np.random.default_rng(SEED)
    n = 1000
    t = rng.integers(1, 10**7, n).astype(float)
    K = rng.integers(2, 1000, n)
    eps = 1 / np.cbrt(t * K * K)
    L = B.l_t(t, 0.05) + rng.uniform(0, 10, n)
    kl = rng.uniform(0, 100, n)
    vbar = 2 * t / eps
    lhs = B.pac_bayes_bernstein_rhs(kl, vbar, V_bar=vbar, L=L) / t
    rel = float(np.max(np.abs(lhs / B.gap_bound_rhs(kl, t, eps, L) - 1)))
    report("C9", rel <= 1e-12, f"max relative error {rel:.2g} over {n} tuples")


def test_c10_golden(golden):
    failures = []
    names = [n for n in dir(test_golden) if n.startswith("test_") and n != "test_oracle_regenerates_frozen_file"]
    for name in names:
        try:
            getattr(test_golden, name)(golden)
        except AssertionError as exc:
            failures.append(f"{name}: {exc}")
    report("C10", not failures, f"{len(names)} golden groups, {len(golden)} constants" + (f"; {failures}" if failures else ""))
