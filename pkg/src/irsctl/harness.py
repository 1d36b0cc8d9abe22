"""Campaign runner and ``simulate`` command-line entry point.

A campaign sweeps (strategy, M, T_reconf) cells, runs ``n_episodes``
utilization episodes per cell and writes CSV tables plus a plotting script.
DPIC strategies first train agents (or load them from a checkpoint); the
trained agents are independent of M and are reused across every cell of
that strategy.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import SCENARIOS, EnvConfig
from .drl import load_checkpoint
from .protocol import (
    KINDS,
    EpisodeAborted,
    SimConfig,
    StrategyConfig,
    episode_rngs,
    run_episode,
    run_training,
)
from .reflection import ReflectionError, default_table, load_table
from .system import BlockReport, LinkBudget, dbm_to_watt

log = logging.getLogger(__name__)

MA_WINDOW = 100
UTILIZE_TAG = 0
TRAIN_TAG = 1


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _words(text: str) -> list[str]:
    return text.replace(",", " ").split()


# [run] keys: name -> parser
RUN_KEYS = {
    "scenario": str.strip,
    "strategies": _words,
    "M": _ints,
    "T_reconf": _floats,
    "n_episodes": int,
    "n_blocks": int,
    "train_episodes": int,
    "train_blocks": int,
    "M_train": int,
    "M_A": int,
    "seed": int,
    "out": str.strip,
    "phase": str.strip,
    "checkpoint": str.strip,
    "workers": int,
}

# [physical] keys beyond the EnvConfig field names
PHYSICAL_EXTRA = {
    "P_dBm": float,
    "sigma2_dBm": float,
    "R_feedback": float,
    "N_G": int,
    "K": int,
    "C_min": float,
    "C_max": float,
    "delta_RA": float,
    "circuit_table": str.strip,
}


@dataclass
class RunConfig:
    scenario: str = "scenario1_nlos"
    strategies: list = field(default_factory=lambda: ["RVQ", "RA"])
    M: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    T_reconf: list = field(default_factory=lambda: [100e-6])
    n_episodes: int = 200
    n_blocks: int = 30
    train_episodes: int = 100
    train_blocks: int = 200
    M_train: int = 8
    M_A: int | None = None
    seed: int = 0
    out: str = "results"
    phase: str = "utilize"
    checkpoint: str | None = None
    workers: int = 1
    physical: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for name in ("strategies", "M", "T_reconf"):
            if not getattr(self, name):
                raise ConfigError(f"sweep {name!r} is empty")
        bad = [s for s in self.strategies if s not in KINDS]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; expected a subset of {KINDS}")
        if any(m < 1 for m in self.M):
            raise ConfigError("every M must be at least 1")
        if any(not t > 0 for t in self.T_reconf):
            raise ConfigError("every T_reconf must be positive")
        for name in ("n_episodes", "n_blocks", "train_blocks", "M_train", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.train_episodes < 0:
            raise ConfigError("train_episodes must be non-negative")
        if self.phase not in ("train", "utilize"):
            raise ConfigError(f"phase must be 'train' or 'utilize', got {self.phase!r}")

    def sim_config(self, T_reconf: float | None = None) -> SimConfig:
        phys = dict(self.physical)
        env_names = {f.name for f in dataclasses.fields(EnvConfig)}
        env = EnvConfig(**{k: v for k, v in phys.items() if k in env_names})
        budget_kw = {"T_c": env.T_c}
        if "P_dBm" in phys:
            budget_kw["P"] = dbm_to_watt(phys["P_dBm"])
        if "sigma2_dBm" in phys:
            budget_kw["sigma2"] = dbm_to_watt(phys["sigma2_dBm"])
        if "R_feedback" in phys:
            budget_kw["R_feedback"] = phys["R_feedback"]
        if T_reconf is not None:
            budget_kw["T_reconf"] = T_reconf
        table = load_table(phys["circuit_table"], f=env.f) if "circuit_table" in phys else default_table()
        sim_kw = {k: phys[k] for k in ("N_G", "K", "C_min", "C_max", "delta_RA") if k in phys}
        return SimConfig(env=env, budget=LinkBudget(**budget_kw), table=table, **sim_kw)


def _parse_env_value(name: str, text: str):
    ftype = {f.name: f.type for f in dataclasses.fields(EnvConfig)}[name]
    if "tuple" in str(ftype):
        return tuple(_floats(text))
    if "int" in str(ftype) and "float" not in str(ftype):
        return int(text)
    if "None" in str(ftype) and text.strip().lower() in ("", "none", "jakes"):
        return None
    return float(text)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse an INI-style config with ``[run]`` and ``[physical]`` sections.

    Key names are case-sensitive and unknown sections or keys are errors.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    extra = set(cp.sections()) - {"run", "physical"}
    if extra:
        raise ConfigError(f"{source}: unknown section(s) {sorted(extra)}")
    kw = {}
    if cp.has_section("run"):
        for key, raw in cp.items("run"):
            if key not in RUN_KEYS:
                raise ConfigError(f"{source}: unknown key {key!r} in [run]")
            try:
                kw[key] = RUN_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {raw!r}") from exc
    phys = {}
    if cp.has_section("physical"):
        env_names = {f.name for f in dataclasses.fields(EnvConfig)}
        for key, raw in cp.items("physical"):
            try:
                if key in env_names:
                    phys[key] = _parse_env_value(key, raw)
                elif key in PHYSICAL_EXTRA:
                    phys[key] = PHYSICAL_EXTRA[key](raw)
                else:
                    raise ConfigError(f"{source}: unknown key {key!r} in [physical]")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{source}: bad value for {key!r}: {raw!r}") from exc
    cfg = RunConfig(**kw, physical=phys, source=text)
    try:
        cfg.sim_config()
    except (ValueError, ReflectionError, OSError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(), source=str(path))


# ---------------------------------------------------------------- statistics


def moving_average(x, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean: entry e averages x[max(0, e - window + 1) .. e]."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(0, idx - window + 1)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)


def _std(x, axis=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis] if axis is not None else x.size
    if n < 2:
        shape = np.delete(x.shape, axis) if axis is not None else ()
        return np.full(shape, np.nan) if axis is not None else math.nan
    return np.std(x, axis=axis, ddof=1)


@dataclass
class Summary:
    n_episodes: int
    rate_t: np.ndarray
    rate_t_std: np.ndarray
    eff_t: np.ndarray
    eff_t_std: np.ndarray
    rate: float
    rate_std: float
    eff: float
    eff_std: float


def aggregate(episodes) -> Summary:
    """Per-timestep and grand means (with sample standard deviations) over episodes.

    ``episodes`` is a sequence of equal-length BlockReport lists.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("nothing to aggregate")
    rate = np.array([[r.rate_true for r in ep] for ep in episodes], dtype=float)
    eff = np.array([[r.rate_effective for r in ep] for ep in episodes], dtype=float)
    return Summary(
        n_episodes=len(episodes),
        rate_t=rate.mean(axis=0),
        rate_t_std=_std(rate, axis=0),
        eff_t=eff.mean(axis=0),
        eff_t_std=_std(eff, axis=0),
        rate=float(rate.mean()),
        rate_std=float(_std(rate)),
        eff=float(eff.mean()),
        eff_std=float(_std(eff)),
    )


# ------------------------------------------------------------------ campaign


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.9g}"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _checkpoint_path(base: str, kind: str, n_kinds: int) -> Path:
    p = Path(base)
    return p if n_kinds == 1 else p.with_name(f"{p.stem}.{kind}{p.suffix}")


def _run_cell(args):
    cfg, kind, M, T_reconf, agents, D = args
    sim = cfg.sim_config(T_reconf)
    strategy = StrategyConfig.preset(kind, M, "utilization", M_A=len(agents) if agents else None)
    episodes, aborted = [], []
    for e in range(cfg.n_episodes):
        try:
            reps = run_episode(cfg.scenario, strategy, sim, cfg.n_blocks, episode_rngs(cfg.seed, e, UTILIZE_TAG), agents, D)
        except (EpisodeAborted, FloatingPointError) as exc:
            aborted.append((e, str(exc)))
            continue
        episodes.append((e, reps))
    return kind, M, T_reconf, episodes, aborted


@dataclass
class CampaignResult:
    out: Path
    cells: list
    training: dict
    aborted: list


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc


def run_campaign(cfg: RunConfig) -> CampaignResult:
    out = Path(cfg.out)
    _check_writable(out)
    dpic_kinds = [k for k in cfg.strategies if k in KINDS[2:]]
    base_sim = cfg.sim_config(cfg.T_reconf[0])

    trained, training = {}, {}
    for kind in dpic_kinds:
        ckpt = _checkpoint_path(cfg.checkpoint, kind, len(dpic_kinds)) if cfg.checkpoint else None
        if cfg.phase == "utilize" and ckpt is not None:
            if not ckpt.exists():
                raise ConfigError(f"checkpoint {ckpt} does not exist")
            agents, D = load_checkpoint(ckpt, base_sim.agent)
            log.info("%s: loaded %d agent(s) from %s", kind, len(agents), ckpt)
        else:
            M_A = cfg.M_A if kind in ("MDPIC", "RA_MDPIC") else None
            strat = StrategyConfig.preset(kind, cfg.M_train, "training", M_A=M_A)
            res = run_training(cfg.scenario, strat, base_sim, cfg.train_episodes, cfg.train_blocks, cfg.seed,
                               checkpoint=ckpt, tag=TRAIN_TAG)
            agents, D = res.agents, res.D
            training[kind] = (strat, res)
        for ag in agents:
            ag.buffer = None  # utilization never touches replay memory
        trained[kind] = (agents, D)

    cells = []
    if cfg.phase == "utilize":
        jobs = [
            (cfg, kind, M, T, *trained.get(kind, ((), None)))
            for kind in cfg.strategies
            for T in cfg.T_reconf
            for M in cfg.M
        ]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                cells = list(pool.map(_run_cell, jobs))
        else:
            cells = [_run_cell(j) for j in jobs]

    aborted = [(k, M, T, e, why) for k, M, T, _, ab in cells for e, why in ab]
    _write_outputs(cfg, out, cells, training, aborted)
    return CampaignResult(out=out, cells=cells, training=training, aborted=aborted)


def _write_outputs(cfg: RunConfig, out: Path, cells, training, aborted) -> None:
    ts_rows, m_rows, eff_rows, ep_rows = [], [], [], []
    for kind, M, T, episodes, ab in cells:
        for e, reps in episodes:
            for r in reps:
                ep_rows.append((kind, M, T, cfg.seed, e, *r.as_row()))
        if not episodes:
            continue
        s = aggregate(reps for _, reps in episodes)
        for t in range(cfg.n_blocks):
            ts_rows.append((kind, M, T, t, s.n_episodes, s.rate_t[t], s.rate_t_std[t], s.eff_t[t], s.eff_t_std[t]))
        m_rows.append((kind, T, M, s.n_episodes, len(ab), s.rate, s.rate_std))
        eff_rows.append((kind, T, M, s.n_episodes, len(ab), s.eff, s.eff_std))

    cell_cols = ("strategy", "M", "T_reconf")
    _write_csv(out / "timestep_rate.csv",
               (*cell_cols, "t", "n_episodes", "mean_rate", "std_rate", "mean_effective_rate", "std_effective_rate"),
               ts_rows)
    _write_csv(out / "rate_vs_M.csv", ("strategy", "T_reconf", "M", "n_episodes", "n_aborted", "mean_rate", "std_rate"),
               m_rows)
    _write_csv(out / "effrate_vs_M.csv",
               ("strategy", "T_reconf", "M", "n_episodes", "n_aborted", "mean_effective_rate", "std_effective_rate"),
               eff_rows)
    _write_csv(out / "episodes.csv", (*cell_cols, "seed", "episode", *BlockReport.FIELDS), ep_rows)

    tr_rows = []
    for kind, (strat, res) in training.items():
        ma = moving_average(res.episode_effective_rate)
        for e, (eps, r, er, m) in enumerate(zip(res.epsilons, res.episode_rate, res.episode_effective_rate, ma)):
            tr_rows.append((kind, strat.M, strat.M_A, cfg.seed, e, eps, r, er, m))
    _write_csv(out / "training_curve.csv",
               ("strategy", "M", "M_A", "seed", "episode", "epsilon", "mean_rate", "mean_effective_rate",
                f"moving_avg_{MA_WINDOW}"),
               tr_rows)

    lines = [f"package_version = {__version__}", f"numpy_version = {np.__version__}", f"seed = {cfg.seed}",
             f"scenario = {cfg.scenario}", f"phase = {cfg.phase}", f"cells = {len(cells)}",
             f"aborted_episodes = {len(aborted)}"]
    lines += [f"aborted = {k} M={M} T_reconf={fmt(T)} episode={e}: {why}" for k, M, T, e, why in aborted]
    lines += ["", "[config]", cfg.source.strip()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    (out / "plot_figures.py").write_text(PLOT_SCRIPT)
    for k, M, T, e, why in aborted:
        log.warning("aborted episode %d of %s M=%d T_reconf=%s: %s", e, k, M, fmt(T), why)


PLOT_SCRIPT = '''"""Plot the campaign CSVs next to this script (needs matplotlib)."""
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent


def rows(name):
    path = here / name
    return list(csv.DictReader(path.open())) if path.exists() else []


fig, axes = plt.subplots(1, 4, figsize=(18, 4))

curves = defaultdict(list)
for r in rows("timestep_rate.csv"):
    curves[(r["strategy"], r["M"], r["T_reconf"])].append((int(r["t"]), float(r["mean_rate"])))
for (kind, M, T), pts in sorted(curves.items()):
    axes[0].plot(*zip(*pts), label=f"{kind} M={M}")
axes[0].set(xlabel="timestep", ylabel="rate (bit/s/Hz)", title="rate vs time")

for ax, name, col in ((axes[1], "rate_vs_M.csv", "mean_rate"), (axes[2], "effrate_vs_M.csv", "mean_effective_rate")):
    series = defaultdict(list)
    for r in rows(name):
        series[(r["strategy"], r["T_reconf"])].append((int(r["M"]), float(r[col])))
    for (kind, T), pts in sorted(series.items()):
        ax.plot(*zip(*sorted(pts)), marker="o", label=f"{kind} T_reconf={T}")
    ax.set(xscale="log", xlabel="M", ylabel=col, title=col + " vs M")

train = defaultdict(list)
for r in rows("training_curve.csv"):
    train[r["strategy"]].append((int(r["episode"]), float(r["moving_avg_100"])))
for kind, pts in sorted(train.items()):
    axes[3].plot(*zip(*pts), label=kind)
axes[3].set(xlabel="episode", ylabel="effective rate (moving avg)", title="training")

for ax in axes:
    if ax.lines:
        ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(here / "figures.png", dpi=120)
'''


# ----------------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simulate", description="Adaptive limited-feedback IRS control campaigns.")
    p.add_argument("--config", required=True, help="INI-style campaign file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--episodes", type=int, help="utilization episodes per cell")
    p.add_argument("--phase", choices=("train", "utilize"))
    p.add_argument("--checkpoint", help="agent checkpoint to write (train) or read (utilize)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {"seed": args.seed, "out": args.out, "n_episodes": args.episodes, "phase": args.phase,
                     "checkpoint": args.checkpoint}
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        result = run_campaign(cfg)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"simulate: I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"simulate: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
