"""Experiment driver: config parsing, suite execution, CSV/JSON reports."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as B
from .env import REWARD_LAWS, BanditEnvironment
from .martingale import (
    MGF_LAMBDA_GRID,
    RademacherFamily,
    ScaledFamily,
    bernstein_mgf_grid,
    change_of_measure_suite,
    expsum_suite,
    theorem1_violation_rate,
)
from .policy import WARMUP_MODES, epsilon_value
from .simulate import BanditBatchResult, default_report_rounds, simulate_bandit
from .streams import replica_rng

log = logging.getLogger(__name__)

SUITES = ("bandit", "bounds", "mgf", "theorem1", "lemmas")
BOUNDS_COLUMNS = list(B.BoundReport._fields)
REGRET_COLUMNS = ["replica", "t", "instant_regret", "cumulative_regret"]
CHECKS_COLUMNS = ["suite", "statistic", "value", "std_err", "pass"]
REPLICA_CHUNK = 256

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` points into the JSON source."""

    def __init__(self, message: str, line: int = 1):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ExperimentConfig:
    K: int
    arm_means: list
    delta: float
    horizon: int
    replicas: int
    reward_law: str = "bernoulli"
    master_seed: int = 0
    suites: list = field(default_factory=lambda: ["bandit"])
    output_dir: str = "out"
    report_stride: int | None = None
    warmup: str = "uniform"
    slope_window: list | None = None
    slope_band: list = field(default_factory=lambda: [0.55, 0.90])
    mgf: dict = field(default_factory=dict)
    theorem1: dict = field(default_factory=dict)
    lemmas: dict = field(default_factory=dict)

    @property
    def env(self) -> BanditEnvironment:
        return BanditEnvironment(self.arm_means, self.reward_law)

    def to_json(self) -> dict:
        return asdict(self)


def _key_line(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", _key_line(text, key))
    for key in ("K", "arm_means", "delta", "horizon", "replicas"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    def fail(key, msg):
        raise ConfigError(msg, _key_line(text, key))

    def integer(key):
        v = raw[key]
        if isinstance(v, bool) or not isinstance(v, int):
            fail(key, f"{key} must be an integer")
        return v

    K = integer("K")
    if not 2 <= K <= 10**4:
        fail("K", "K must lie in [2, 10^4]")
    T = integer("horizon")
    if not 1 <= T <= 10**8:
        fail("horizon", "horizon must lie in [1, 10^8]")
    if T < K:
        fail("horizon", f"horizon {T} is shorter than the warmup (K={K})")
    delta = raw["delta"]
    if isinstance(delta, bool) or not isinstance(delta, (int, float)) or not 0 < delta < 1:
        fail("delta", "delta must lie in (0, 1)")
    if integer("replicas") < 1:
        fail("replicas", "replicas must be >= 1")
    means = raw["arm_means"]
    if not isinstance(means, list) or len(means) != K:
        fail("arm_means", f"arm_means must be a list of length K={K}")
    if not all(isinstance(m, (int, float)) and not isinstance(m, bool) and 0 <= m <= 1 for m in means):
        fail("arm_means", "arm means must be numbers in [0, 1]")
    if raw.get("reward_law", "bernoulli") not in REWARD_LAWS:
        fail("reward_law", f"reward_law must be one of {REWARD_LAWS}")
    if raw.get("warmup", "uniform") not in WARMUP_MODES:
        fail("warmup", f"warmup must be one of {WARMUP_MODES}")
    if "master_seed" in raw:
        integer("master_seed")
    suites = raw.get("suites", ["bandit"])
    if not isinstance(suites, list) or not suites or any(s not in SUITES for s in suites):
        fail("suites", f"suites must be a non-empty subset of {SUITES}")
    stride = raw.get("report_stride")
    if stride is not None and (isinstance(stride, bool) or not isinstance(stride, int) or stride < 1):
        fail("report_stride", "report_stride must be a positive integer or null")
    window = raw.get("slope_window")
    if window is not None and (not isinstance(window, list) or len(window) != 2 or not 1 <= window[0] < window[1]):
        fail("slope_window", "slope_window must be [t_min, t_max] with 1 <= t_min < t_max")
    for key in ("mgf", "theorem1", "lemmas"):
        if key in raw and not isinstance(raw[key], dict):
            fail(key, f"{key} must be an object")
    return ExperimentConfig(**raw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------- checks


def check(value, passed, std_err=None, n=None, rate=False) -> dict:
    return {"value": value, "std_err": std_err, "n": n, "pass": bool(passed), "kind": "rate" if rate else "value"}


def rate_check(flags, limit) -> dict:
    flags = np.asarray(flags, dtype=bool)
    n = flags.size
    rate = float(flags.mean())
    return check(rate, rate <= limit, math.sqrt(rate * (1 - rate) / n), n, rate=True)


def summarize_suite(checks: dict) -> dict:
    rates = [(c["value"], c) for c in checks.values() if c["kind"] == "rate"]
    worst = max(rates, key=lambda x: x[0])[1] if rates else None
    return {
        "pass": all(c["pass"] for c in checks.values()),
        "rate": worst["value"] if worst else 0.0,
        "std_err": worst["std_err"] if worst else 0.0,
        "n": worst["n"] if worst else len(checks),
        "checks": checks,
    }


# ---------------------------------------------------------------- slope


def estimate_regret_slope(t, cumulative_regret, t_min: float, t_max: float) -> float:
    """Least-squares slope of ln(regret) against ln(t) over [t_min, t_max].

    A 2-D ``cumulative_regret`` (replicas x rounds) is reduced to its median
    across replicas first. Nonpositive values are skipped.
    """
    if t_max < 10 * t_min:
        raise ValueError("need t_max >= 10 * t_min")
    t = np.asarray(t, dtype=float)
    y = np.asarray(cumulative_regret, dtype=float)
    if y.ndim == 2:
        y = np.median(y, axis=0)
    sel = (t >= t_min) & (t <= t_max) & (y > 0)
    if sel.sum() < 10:
        raise ValueError(f"only {int(sel.sum())} usable points in [{t_min}, {t_max}]; need 10")
    slope, _ = np.polyfit(np.log(t[sel]), np.log(y[sel]), 1)
    return float(slope)


def read_regret_csv(path):
    by_t: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_t.setdefault(int(row["t"]), []).append(float(row["cumulative_regret"]))
    ts = np.array(sorted(by_t))
    med = np.array([np.median(by_t[t]) for t in ts])
    return ts, med


# ---------------------------------------------------------------- suites


def _bandit_chunk(args):
    env, delta, T, rows, seed, warmup, report_t = args
    return simulate_bandit(env, delta, T, rows, seed, warmup=warmup, report_rounds=report_t)


def run_bandit_replicas(cfg: ExperimentConfig, seed: int, threads: int = 1) -> BanditBatchResult:
    """Run all replicas in fixed-size chunks; output is independent of ``threads``."""
    report_t = default_report_rounds(cfg.horizon, cfg.report_stride)
    jobs = [
        (cfg.env, cfg.delta, cfg.horizon, np.arange(lo, min(lo + REPLICA_CHUNK, cfg.replicas)), seed, cfg.warmup, report_t)
        for lo in range(0, cfg.replicas, REPLICA_CHUNK)
    ]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_bandit_chunk, jobs))
    else:
        parts = [_bandit_chunk(j) for j in jobs]
    return BanditBatchResult.concat(parts)


def bandit_checks(cfg: ExperimentConfig, res: BanditBatchResult) -> dict:
    tol = -B.VIOLATION_ATOL
    checks = {
        "thm2_rho_exp": rate_check(res.thm2_any["rho_exp"], cfg.delta),
        "thm2_worst_arm": rate_check(res.thm2_any["worst_arm"], cfg.delta),
        "lemma1": rate_check(res.lemma1_min_slack < tol, 0.0),
        "lemma5": rate_check(res.lemma5_min_slack < tol, 0.0),
        "regret_decomposition": rate_check(res.decomp_min_slack < tol, 0.0),
        "thm3": rate_check(res.thm3_any, cfg.delta),
    }
    checks["thm2_rho_exp"]["certified_rounds"] = res.thm2_certified_rounds
    checks["thm3"]["round_threshold"] = res.thm3_threshold
    t_min, t_max = cfg.slope_window or [100, cfg.horizon]
    if cfg.horizon >= 10 * t_min and t_max >= 10 * t_min:
        slope = estimate_regret_slope(res.curve_t, res.cum_regret_curve, t_min, t_max)
        lo, hi = cfg.slope_band
        checks["regret_slope"] = check(slope, lo <= slope <= hi, n=int(res.replicas.size))
    return checks


def bounds_checks(cfg: ExperimentConfig, seed: int) -> dict:
    """Algebraic identities and monotonicity of the bound evaluators."""
    rng = replica_rng(seed, 0, "bounds")
    n = 1000
    t = rng.integers(1, 10**6, n).astype(float)
    K = rng.integers(2, 1000, n)
    eps = 1.0 / np.cbrt(t * K * K)
    delta = rng.uniform(0.001, 0.5, n)
    L = np.array([B.l_t(ti, di) for ti, di in zip(t, delta)])
    kl = rng.uniform(0, 50, n)
    vbar = 2 * t / eps
    lhs = B.pac_bayes_bernstein_rhs(kl, vbar, V_bar=vbar, L=L) / t
    rhs = B.gap_bound_rhs(kl, t, eps, L)
    rel = float(np.max(np.abs(lhs - rhs) / rhs))
    checks = {"thm2_equals_thm1_over_t": check(rel, rel <= 1e-12, n=n)}

    # nondecreasing in kl and v everywhere; in L only while kl <= L (1 + v / V_bar)
    g = np.linspace(0, 100, 10)
    kk, vv, ll = np.meshgrid(g, g, g + 0.5, indexing="ij")
    vb = 50.0
    val = B.pac_bayes_bernstein_rhs(kk, vv, V_bar=vb, L=ll)
    mono = bool(np.all(np.diff(val, axis=0) >= 0) and np.all(np.diff(val, axis=1) >= 0))
    in_l = kk[:, :, 1:] <= ll[:, :, :-1] * (1 + vv[:, :, 1:] / vb)
    mono &= bool(np.all(np.diff(val, axis=2)[in_l] >= 0))
    checks["thm1_rhs_monotone"] = check(float(mono), mono, n=val.size)

    ts = np.arange(max(cfg.K, 3), 10**6 + 1)
    r3 = B.theorem3_regret_rhs(ts, cfg.K, B.l_t(ts, cfg.delta))
    dec = bool(np.all(np.diff(r3) < 0))
    checks["thm3_rhs_decreasing"] = check(float(dec), dec, n=ts.size)
    try:
        thr = B.round_threshold(cfg.K, cfg.delta)
        holds = B.bandit_condition(thr, float(epsilon_value(thr, cfg.K)), cfg.delta)
        checks["round_threshold_condition"] = check(thr, holds, n=1)
    except ValueError:
        checks["round_threshold_condition"] = check(None, True, n=0)
    return checks


def mgf_checks(cfg: ExperimentConfig, seed: int) -> dict:
    p = {"T": 100, "replicas": cfg.replicas, "C": 1.0, "lambdas": list(MGF_LAMBDA_GRID), **cfg.mgf}
    checks = {}
    for fam in (RademacherFamily(1, p["C"]), ScaledFamily(1, p["C"])):
        lams = [x / fam.C for x in p["lambdas"]]
        for r in bernstein_mgf_grid(fam, lams, p["T"], p["replicas"], seed):
            checks[f"{fam.name}_lambda_{r.lam:g}"] = check(r.sample_mean, r.passed, r.std_err, p["replicas"])
    return checks


def theorem1_checks(cfg: ExperimentConfig, seed: int) -> dict:
    p = {"H_size": 20, "T": min(cfg.horizon, 1000), "replicas": cfg.replicas, "family": "rademacher", **cfg.theorem1}
    fam = RademacherFamily(p["H_size"]) if p["family"] == "rademacher" else ScaledFamily(p["H_size"])
    checks = {}
    for rule in ("argmax", "uniform"):
        r = theorem1_violation_rate(fam, cfg.delta, p["T"], p["replicas"], seed, rule)
        c = check(r.rate, r.passed, r.std_err, r.n, rate=True)
        c["certified_rounds"] = r.certified_rounds
        checks[f"{fam.name}_{rule}"] = c
    return checks


def lemma_checks(cfg: ExperimentConfig, seed: int) -> dict:
    p = {"triples": 10_000, "tuples": 100_000, **cfg.lemmas}
    slack, ok, eq_err = change_of_measure_suite(p["triples"], 50, seed)
    checks = {
        "change_of_measure": check(slack, ok and slack >= -B.VIOLATION_ATOL, n=p["triples"]),
        "change_of_measure_equality": check(eq_err, eq_err <= 1e-12, n=p["triples"]),
    }
    worst, n = expsum_suite(p["tuples"], seed)
    checks["expsum"] = check(worst, worst <= 1e-12, n=n)
    x = np.arange(0, 20 + 5e-5, 1e-4)
    grid = np.stack([np.zeros_like(x), x], axis=1)
    sup = float(B.expsum_ratio(grid, 1.0).max())
    checks["expsum_n2_bruteforce"] = check(sup, sup <= math.log(2), n=x.size)
    return checks


def run_suite(name: str, cfg: ExperimentConfig, seed: int, threads: int = 1, bandit_result=None):
    if name == "bandit":
        res = bandit_result if bandit_result is not None else run_bandit_replicas(cfg, seed, threads)
        return bandit_checks(cfg, res)
    return {"bounds": bounds_checks, "mgf": mgf_checks, "theorem1": theorem1_checks, "lemmas": lemma_checks}[name](cfg, seed)


# ---------------------------------------------------------------- reports


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_bounds_csv(path, res: BanditBatchResult):
    rep = res.report
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUNDS_COLUMNS)
        for i, r in enumerate(res.replicas):
            for j, t in enumerate(res.report_t):
                row = B.BoundReport(
                    int(r), int(t),
                    *(rep[c][i, j] for c in BOUNDS_COLUMNS[2:]),
                )
                out = [_fmt(v) for v in row]
                # flag columns are stored as floats in the report arrays
                for k, name in enumerate(BOUNDS_COLUMNS):
                    if name.endswith(("_violation", "_certified")):
                        out[k] = int(row[k])
                w.writerow(out)


def write_regret_csv(path, res: BanditBatchResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGRET_COLUMNS)
        for i, r in enumerate(res.replicas):
            for j, t in enumerate(res.report_t):
                w.writerow([int(r), int(t), _fmt(res.report["instant_regret"][i, j]), _fmt(res.report["cumulative_regret"][i, j])])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def run(cfg: ExperimentConfig, seed: int | None = None, threads: int = 1, out_dir=None, suites=None) -> tuple[dict, int]:
    """Execute the requested suites, write reports, return (summary, exit code)."""
    seed = cfg.master_seed if seed is None else seed
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    suites = list(suites or cfg.suites)
    results = {}
    for name in suites:
        log.info("running suite %s", name)
        if name == "bandit":
            res = run_bandit_replicas(cfg, seed, threads)
            write_bounds_csv(out / "bounds.csv", res)
            write_regret_csv(out / "regret.csv", res)
            results[name] = summarize_suite(run_suite(name, cfg, seed, bandit_result=res))
        else:
            results[name] = summarize_suite(run_suite(name, cfg, seed, threads))
    summary = {
        "artifact_version": __version__,
        "seed": seed,
        "config": cfg.to_json(),
        "suites": results,
        "pass": all(r["pass"] for r in results.values()),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "checks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKS_COLUMNS)
        for sname, r in results.items():
            for cname, c in r["checks"].items():
                w.writerow([sname, cname, _fmt(c["value"]), _fmt(c["std_err"]) if c["std_err"] is not None else "", int(c["pass"])])
    return summary, EXIT_PASS if summary["pass"] else EXIT_FAIL


def default_threads() -> int:
    return os.cpu_count() or 1
