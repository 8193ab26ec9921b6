import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pacbandit import cli, harness
from pacbandit.harness import ConfigError, estimate_regret_slope, parse_config
from pacbandit.simulate import BanditBatchResult, default_report_rounds, simulate_bandit

TINY = Path(__file__).parent / "data" / "tiny"

BASE = {"K": 3, "arm_means": [0.8, 0.5, 0.2], "delta": 0.1, "horizon": 30, "replicas": 4}


def cfg_text(**over):
    return json.dumps({**BASE, **over}, indent=2)


def test_config_round_trip():
    cfg = parse_config(cfg_text(master_seed=3))
    assert cfg.K == 3 and cfg.master_seed == 3 and cfg.suites == ["bandit"]
    assert cfg.env.best_arm == 0


@pytest.mark.parametrize(
    "over,key",
    [
        ({"horizon": 2}, "horizon"),
        ({"delta": 1.5}, "delta"),
        ({"arm_means": [0.1, 0.2]}, "arm_means"),
        ({"suites": ["nope"]}, "suites"),
        ({"bogus": 1}, "bogus"),
        ({"K": 1}, "K"),
    ],
)
def test_config_errors_point_at_line(over, key):
    text = cfg_text(**over)
    line = next(i for i, s in enumerate(text.splitlines(), 1) if f'"{key}"' in s)
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_horizon_shorter_than_warmup_message():
    with pytest.raises(ConfigError, match="shorter than the warmup"):
        parse_config(cfg_text(horizon=2))


def test_malformed_json_line():
    with pytest.raises(ConfigError) as exc:
        parse_config('{\n  "K": 3,\n  "delta": ,\n}')
    assert exc.value.line == 3


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(cfg_text(horizon=1))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line" in capsys.readouterr().err


def test_cli_io_error_exit_code(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(cfg_text())
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--config", str(p), "--out", str(blocker / "sub")]) == 3
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 3


def test_report_rounds_default():
    r = default_report_rounds(1000)
    assert r[:255].tolist() == list(range(1, 256))
    assert {256, 512, 1000} <= set(r.tolist())
    assert default_report_rounds(20, 5).tolist() == [5, 10, 15, 20]


def test_simulate_rejects_short_horizon():
    with pytest.raises(ValueError):
        simulate_bandit(parse_config(cfg_text()).env, 0.1, 2, [0], 0)


def test_golden_csv_files(tmp_path):
    cfg = harness.load_config(TINY / "config.json")
    summary, code = harness.run(cfg, threads=1, out_dir=tmp_path)
    assert code == 0
    for name in ("bounds.csv", "regret.csv"):
        assert (tmp_path / name).read_bytes() == (TINY / name).read_bytes()


def test_csv_column_order(tmp_path):
    harness.run(harness.load_config(TINY / "config.json"), out_dir=tmp_path)
    with open(tmp_path / "bounds.csv") as fh:
        assert next(csv.reader(fh)) == [
            "replica", "t", "kl_rho_mu", "v_rho", "delta_rho_true", "delta_rho_emp", "thm2_rhs",
            "thm2_violation", "lemma1_lhs", "lemma1_rhs", "lemma5_lhs", "lemma5_rhs",
            "regret_decomp_rhs", "thm3_rhs", "thm3_certified", "thm3_violation",
        ]
    with open(tmp_path / "regret.csv") as fh:
        assert next(csv.reader(fh)) == ["replica", "t", "instant_regret", "cumulative_regret"]
    with open(tmp_path / "checks.csv") as fh:
        assert next(csv.reader(fh)) == ["suite", "statistic", "value", "std_err", "pass"]


def test_summary_schema(tmp_path):
    cfg = harness.load_config(TINY / "config.json")
    summary, _ = harness.run(cfg, out_dir=tmp_path)
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["seed"] == 42
    assert on_disk["config"]["K"] == 3
    assert on_disk["artifact_version"]
    block = on_disk["suites"]["bandit"]
    assert {"pass", "rate", "std_err", "n"} <= set(block)
    assert 0 <= block["rate"] <= 1


def _run_bytes(cfg, out, threads, seed=None):
    harness.run(cfg, seed=seed, threads=threads, out_dir=out)
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_reruns_are_byte_identical(tmp_path):
    cfg = parse_config(cfg_text(horizon=40, replicas=5, master_seed=11))
    assert _run_bytes(cfg, tmp_path / "a", 1) == _run_bytes(cfg, tmp_path / "b", 1)
    assert _run_bytes(cfg, tmp_path / "c", 1, seed=12) != _run_bytes(cfg, tmp_path / "a", 1)


def test_thread_count_does_not_change_output(tmp_path):
    cfg = parse_config(cfg_text(horizon=12, replicas=300, report_stride=4))
    assert _run_bytes(cfg, tmp_path / "one", 1) == _run_bytes(cfg, tmp_path / "two", 2)


def test_replica_order_does_not_change_results():
    cfg = parse_config(cfg_text(horizon=60, replicas=12))
    env = cfg.env
    rows = np.arange(12)
    ordered = simulate_bandit(env, cfg.delta, cfg.horizon, rows, 5)
    perm = np.random.default_rng(0).permutation(12)
    parts = [simulate_bandit(env, cfg.delta, cfg.horizon, perm[i : i + 5], 5) for i in range(0, 12, 5)]
    shuffled = BanditBatchResult.concat(parts)
    for k in ordered.report:
        np.testing.assert_array_equal(ordered.report[k], shuffled.report[k])
    assert harness.bandit_checks(cfg, ordered) == harness.bandit_checks(cfg, shuffled)


def test_adding_replicas_keeps_existing_streams():
    env = parse_config(cfg_text()).env
    a = simulate_bandit(env, 0.1, 30, np.arange(3), 1, record_actions=True)
    b = simulate_bandit(env, 0.1, 30, np.arange(6), 1, record_actions=True)
    np.testing.assert_array_equal(a.actions, b.actions[:3])


@pytest.mark.parametrize("power", [2 / 3, 1.0])
def test_slope_exact_power_laws(power):
    t = np.arange(1, 10**4 + 1, dtype=float)
    assert estimate_regret_slope(t, 3.5 * t**power, 100, 10**4) == pytest.approx(power, abs=1e-6)


def test_slope_uses_median_and_skips_nonpositive():
    t = np.arange(1, 2001, dtype=float)
    curves = np.stack([t**0.7, 2 * t**0.7, 4 * t**0.7])
    curves[:, 500] = 0.0
    assert estimate_regret_slope(t, curves, 100, 2000) == pytest.approx(0.7, abs=1e-9)


def test_slope_errors():
    t = np.arange(1, 1000, dtype=float)
    with pytest.raises(ValueError):
        estimate_regret_slope(t, t, 100, 500)
    with pytest.raises(ValueError):
        estimate_regret_slope(np.array([1.0, 20.0]), np.array([1.0, 2.0]), 1, 20)


def test_cli_slope(tmp_path, capsys):
    p = tmp_path / "regret.csv"
    with open(p, "w") as fh:
        fh.write("replica,t,instant_regret,cumulative_regret\n")
        for r in range(3):
            for t in range(1, 2001):
                fh.write(f"{r},{t},0,{(r + 1) * t ** (2 / 3)!r}\n")
    assert cli.main(["slope", "--input", str(p), "--tmin", "100", "--tmax", "2000"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(2 / 3, abs=1e-6)
    assert cli.main(["slope", "--input", str(tmp_path / "none.csv"), "--tmin", "1", "--tmax", "10"]) == 3


def test_cli_suite_runs_single_suite(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(cfg_text(replicas=50, lemmas={"triples": 200, "tuples": 2000}))
    assert cli.main(["suite", "lemmas", "--config", str(p), "--out", str(tmp_path / "o"), "--threads", "1"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert list(summary["suites"]) == ["lemmas"]
    assert "lemmas" in capsys.readouterr().out


def test_failing_suite_exit_code(tmp_path):
    # an impossible slope band forces a suite failure
    p = tmp_path / "cfg.json"
    p.write_text(cfg_text(horizon=2000, replicas=8, slope_band=[5.0, 6.0]))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--threads", "1"]) == 1
