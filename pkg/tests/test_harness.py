import csv
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsctl import harness
from irsctl.harness import ConfigError, RunConfig, aggregate, fmt, main, moving_average, parse_config, run_campaign
from irsctl.system import BlockReport

TINY = """
[run]
scenario = scenario1_nlos
strategies = RA
M = 2
T_reconf = 100e-6
n_episodes = 10
n_blocks = 5
seed = 3
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def fake_episode(rates, eff=None):
    eff = rates if eff is None else eff
    return [BlockReport(t, 0, r, r, 0.0, e, 0) for t, (r, e) in enumerate(zip(rates, eff))]


# -- config


def test_parse_defaults_and_values():
    cfg = parse_config(TINY)
    assert cfg.strategies == ["RA"] and cfg.M == [2] and cfg.T_reconf == [100e-6]
    assert (cfg.n_episodes, cfg.n_blocks, cfg.seed) == (10, 5, 3)
    d = RunConfig()
    assert (d.n_episodes, d.n_blocks, d.train_episodes, d.train_blocks) == (200, 30, 100, 200)


def test_parse_physical():
    cfg = parse_config(TINY + "[physical]\nP_dBm = 10\nv_UE = 0\nrho = 1.0\nx_UE_center = 80, 5\nT_c = 5e-3\n")
    sim = cfg.sim_config(20e-6)
    assert sim.budget.P == pytest.approx(0.01)
    assert sim.env.rho == 1.0 and sim.env.x_UE_center == (80.0, 5.0)
    assert sim.budget.T_reconf == 20e-6
    assert parse_config(TINY + "[physical]\nrho = jakes\n").sim_config().env.rho is None


@pytest.mark.parametrize(
    "text",
    [
        TINY + "bogus = 1\n",
        TINY + "[extra]\nx = 1\n",
        TINY + "[physical]\nwhatever = 3\n",
        TINY.replace("M = 2", "M ="),
        TINY.replace("strategies = RA", "strategies = FOO"),
        TINY.replace("n_blocks = 5", "n_blocks = five"),
        TINY.replace("n_blocks = 5", "n_blocks = 0"),
        TINY.replace("scenario1_nlos", "mars"),
        TINY + "phase = later\n",
        TINY + "[physical]\nT_c = 1e-3\nN_BS = 2.5\n",
        "not an ini file",
    ],
)
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_keys_are_case_sensitive():
    with pytest.raises(ConfigError):
        parse_config(TINY + "SEED = 4\n")


# -- statistics


def test_moving_average_constant():
    np.testing.assert_allclose(moving_average(np.full(250, 3.7)), 3.7, rtol=1e-12)


def test_moving_average_ramp():
    x = np.arange(1, 1001, dtype=float)
    ma = moving_average(x, 100)
    for e in range(1, 1001):
        lo = max(1, e - 99)
        # mean of the arithmetic series lo..e
        assert ma[e - 1] == pytest.approx((lo + e) / 2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.integers(1, 20))
def test_moving_average_brute(xs, w):
    ma = moving_average(xs, w)
    for e in range(len(xs)):
        win = xs[max(0, e - w + 1) : e + 1]
        assert ma[e] == pytest.approx(math.fsum(win) / len(win), abs=1e-9)


def test_aggregate_single_episode():
    s = aggregate([fake_episode([1.0, 2.0, 4.0])])
    np.testing.assert_array_equal(s.rate_t, [1.0, 2.0, 4.0])
    assert s.n_episodes == 1 and np.all(np.isnan(s.rate_t_std))
    assert s.rate == pytest.approx(7 / 3)


def test_aggregate_symmetric():
    r = [0.5, 1.5, 2.5]
    s = aggregate([fake_episode(r), fake_episode([-v for v in r])])
    np.testing.assert_array_equal(s.rate_t, 0.0)
    assert s.rate == 0.0


def test_aggregate_two_pass_oracle():
    rng = np.random.default_rng(0)
    data = rng.normal(5, 2, (100, 30))
    eff = data * 0.8
    s = aggregate([fake_episode(row, erow) for row, erow in zip(data, eff)])
    for t in range(30):
        col = [data[e][t] for e in range(100)]
        mean = math.fsum(col) / 100
        var = math.fsum((v - mean) ** 2 for v in col) / 99
        assert abs(s.rate_t[t] - mean) <= 1e-12 * max(1, abs(mean))
        assert abs(s.rate_t_std[t] ** 2 - var) <= 1e-12 * max(1, var)
    flat = data.ravel().tolist()
    mean = math.fsum(flat) / len(flat)
    var = math.fsum((v - mean) ** 2 for v in flat) / (len(flat) - 1)
    assert abs(s.rate - mean) <= 1e-12 * mean
    assert abs(s.rate_std**2 - var) <= 1e-12 * var
    assert s.eff == pytest.approx(0.8 * s.rate, rel=1e-12)


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_fmt():
    assert fmt(3) == "3"
    assert fmt(np.int64(7)) == "7"
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(100e-6) == "0.0001"
    assert fmt("RA") == "RA"


# -- campaigns


def test_tiny_campaign_rows(tmp_path):
    cfg = parse_config(TINY + f"out = {tmp_path / 'o'}\n")
    res = run_campaign(cfg)
    ts = read_csv(res.out / "timestep_rate.csv")
    assert len(ts) == 5 and [int(r["t"]) for r in ts] == list(range(5))
    assert all(int(r["n_episodes"]) == 10 for r in ts)
    eps = read_csv(res.out / "episodes.csv")
    assert len(eps) == 50
    assert {(int(r["episode"]), r["seed"]) for r in eps} == {(e, "3") for e in range(10)}
    by_m = read_csv(res.out / "rate_vs_M.csv")
    assert len(by_m) == 1 and by_m[0]["n_aborted"] == "0"
    # grand mean equals the mean of the per-episode block rows
    mean = np.mean([float(r["rate_true"]) for r in eps])
    assert float(by_m[0]["mean_rate"]) == pytest.approx(mean, rel=1e-8)
    manifest = (res.out / "manifest.txt").read_text()
    assert "seed = 3" in manifest and "[config]" in manifest
    assert (res.out / "plot_figures.py").exists()
    assert read_csv(res.out / "training_curve.csv") == []


def test_campaign_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        run_campaign(parse_config(TINY + f"out = {tmp_path / name}\n"))
        outs.append(tmp_path / name)
    for f in ("timestep_rate.csv", "rate_vs_M.csv", "effrate_vs_M.csv", "episodes.csv", "training_curve.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_parallel_matches_serial(tmp_path):
    base = TINY.replace("M = 2", "M = 1, 2") + "strategies = RVQ, RA\n"
    base = base.replace("strategies = RA\n", "")
    run_campaign(parse_config(base + f"out = {tmp_path / 's'}\n"))
    run_campaign(parse_config(base + f"out = {tmp_path / 'p'}\nworkers = 2\n"))
    for f in ("timestep_rate.csv", "episodes.csv"):
        assert (tmp_path / "s" / f).read_bytes() == (tmp_path / "p" / f).read_bytes()


def test_dpic_train_then_utilize(tmp_path):
    text = TINY.replace("strategies = RA", "strategies = SDPIC") + "train_episodes = 2\ntrain_blocks = 20\n"
    ckpt = tmp_path / "agents.ckpt"
    run_campaign(parse_config(text + f"out = {tmp_path / 't'}\nphase = train\ncheckpoint = {ckpt}\n"))
    curve = read_csv(tmp_path / "t" / "training_curve.csv")
    assert [int(r["episode"]) for r in curve] == [0, 1]
    assert float(curve[1]["moving_avg_100"]) == pytest.approx(
        (float(curve[0]["mean_effective_rate"]) + float(curve[1]["mean_effective_rate"])) / 2, rel=1e-8)
    assert ckpt.exists()
    res = run_campaign(parse_config(text + f"out = {tmp_path / 'u'}\ncheckpoint = {ckpt}\n"))
    assert len(read_csv(res.out / "timestep_rate.csv")) == 5
    assert read_csv(res.out / "training_curve.csv") == []


def test_missing_checkpoint(tmp_path):
    text = TINY.replace("strategies = RA", "strategies = SDPIC")
    with pytest.raises(ConfigError):
        run_campaign(parse_config(text + f"out = {tmp_path}\ncheckpoint = {tmp_path / 'nope.ckpt'}\n"))


def test_unwritable_out_fails_before_simulating(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("x")

    def boom(*a, **k):
        raise AssertionError("simulation started")

    monkeypatch.setattr(harness, "run_episode", boom)
    monkeypatch.setattr(harness, "run_training", boom)
    with pytest.raises(OSError):
        run_campaign(parse_config(TINY + f"out = {blocker / 'sub'}\n"))


# -- CLI


def test_cli_success(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--episodes", "2", "--seed", "9"]) == 0
    eps = read_csv(tmp_path / "o" / "episodes.csv")
    assert len(eps) == 10 and eps[0]["seed"] == "9"


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(TINY + "nonsense = 1\n")
    assert main(["--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["--config", str(tmp_path / "missing.ini")]) == 3
    good = tmp_path / "c.ini"
    good.write_text(TINY)
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["--config", str(good), "--out", str(blocker / "x")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(good), "--phase", "sideways"])
    assert exc.value.code != 0


def test_console_script_entry(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    proc = subprocess.run([sys.executable, "-m", "irsctl.harness", "--config", str(cfg), "--out", str(tmp_path / "o"),
                           "--episodes", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "timestep_rate.csv").exists()
