"""Experiment orchestration: the five control modes, sweeps and reports.

Every run writes a per-step metrics CSV (one row per environment step)
plus a per-day aggregate CSV, both stamped with a hash of the full
configuration.  Runs are deterministic given (config, seed), so a rerun
with the same hash reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import refopt, sac
from .env import VoltageLimits, VvcEnv
from .gridflow import case_path, load_case, scale_impedances
from .scenario import (ScenarioSet, device_action_box, generate_profiles,
                       load_devices, save_scenario)

log = logging.getLogger(__name__)

NETWORKS = ("case33", "case69", "case118")
MODES = ("mbo_accurate", "mbo_reference", "sac", "rm_sac_wide", "rm_sac")
METRICS_COLUMNS = ("day", "step", "train_reward", "test_reward", "test_ploss",
                   "test_violation", "critic_loss", "alpha", "reference_action_norm")
FINAL_WINDOW = 50     # days entering "final" statistics
BEST_LAMBDA = {"case33": 0.3, "case69": 0.5, "case118": 0.2}


@dataclass(frozen=True)
class ExperimentConfig:
    network: str = "case33"
    mode: str = "rm_sac"
    lambda_scale: float | None = None     # required for rm_sac, else None
    impedance_factor: float = 1.5
    days: int = 100
    seed: int = 0
    c_v: float = 50.0
    v_min: float = 0.95
    v_max: float = 1.05
    hyper: dict = field(default_factory=dict)   # SacConfig overrides
    out_dir: str = "runs/experiment"
    cache_refactions: str | None = None

    def validate(self) -> None:
        if self.network not in NETWORKS:
            raise ValueError(f"unknown network {self.network!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "rm_sac":
            if self.lambda_scale is None or not 0.0 <= self.lambda_scale <= 1.0:
                raise ValueError("rm_sac needs lambda_scale in [0, 1]")
        elif self.lambda_scale is not None:
            raise ValueError(f"lambda_scale is meaningful only for rm_sac, not {self.mode}")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.impedance_factor <= 0:
            raise ValueError("impedance_factor must be positive")

    def hash(self) -> str:
        payload = asdict(self)
        payload.pop("out_dir")              # location does not change results
        payload.pop("cache_refactions")
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sac_config(self) -> sac.SacConfig:
        over = dict(self.hyper)
        if "hidden" in over:
            over["hidden"] = tuple(over["hidden"])
        return sac.SacConfig(**over)


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Execute one experiment; returns the per-step metrics file path."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    if not force and metrics_path.exists():
        existing = read_metrics(metrics_path)
        if existing["config_hash"] == cfg.hash():
            log.info("reusing %s (same config hash)", metrics_path)
            return metrics_path

    t0 = time.time()
    net = load_case(cfg.network)
    devices = load_devices(case_path(cfg.network))
    scn = generate_profiles(net, devices, cfg.days, cfg.seed)
    limits = VoltageLimits(cfg.v_min, cfg.v_max)
    box = device_action_box(devices)
    a_m_table = reference_actions(cfg, net, devices, scn, limits)

    train_env = VvcEnv(net, devices, scn, limits, cfg.c_v)
    if cfg.mode.startswith("mbo_"):
        step_log = _replay_dispatch(train_env, a_m_table, box, cfg.days)
    else:
        policy = sac.ResidualPolicy(
            mode={"sac": "full", "rm_sac_wide": "wide", "rm_sac": "rm"}[cfg.mode],
            box=box,
            lambda_scale=cfg.lambda_scale or 0.0,
        )
        eval_env = VvcEnv(net, devices, scn, limits, cfg.c_v)
        _, step_log = sac.train_day_loop(
            train_env, eval_env, a_m_table, policy, cfg.sac_config(),
            cfg.seed, cfg.days, progress=_progress_printer(cfg))
    write_metrics(metrics_path, cfg.hash(), step_log)
    write_daily(out / "daily.csv", cfg.hash(), step_log)
    log.info("%s/%s done in %.1f s -> %s", cfg.network, cfg.mode,
             time.time() - t0, metrics_path)
    return metrics_path


def reference_actions(cfg: ExperimentConfig, net, devices, scn: ScenarioSet,
                      limits: VoltageLimits) -> np.ndarray:
    """Per-step dispatch table for the experiment's controller mode."""
    if cfg.mode == "sac":
        return np.zeros((scn.n_steps, len(devices)))
    factor = 1.0 if cfg.mode == "mbo_accurate" else cfg.impedance_factor
    model = net if factor == 1.0 else scale_impedances(net, factor)
    cache_path = key = None
    if cfg.cache_refactions:
        cache_dir = Path(cfg.cache_refactions)
        cache_dir.mkdir(parents=True, exist_ok=True)
        key = f"{cfg.network}|{factor}|{cfg.seed}|{cfg.days}|{cfg.c_v}"
        cache_path = cache_dir / (
            f"refactions_{cfg.network}_f{factor}_s{cfg.seed}_d{cfg.days}.csv")
    return refopt.compute_action_table(model, devices, scn, limits, cfg.c_v,
                                       cache_path=cache_path, cache_key=key)


def _replay_dispatch(env: VvcEnv, table: np.ndarray, box, days: int) -> sac.StepLog:
    """Execute precomputed dispatch actions on the accurate environment."""
    steps_per_day = env.scn.steps_per_day
    n_steps = days * steps_per_day
    log_ = sac.StepLog(*(np.zeros(n_steps) for _ in range(9)))
    log_.day[:] = np.repeat(np.arange(days), steps_per_day)
    log_.step[:] = np.tile(np.arange(steps_per_day), days)
    log_.critic_loss[:] = np.nan
    log_.alpha[:] = np.nan
    env.reset(day=0)
    for g in range(n_steps):
        a = np.clip(table[g], box.a_low, box.a_high)
        reward, _, _ = env.step(a)
        log_.train_reward[g] = reward.r
        log_.test_reward[g] = reward.r
        log_.test_ploss[g] = -reward.r_p
        log_.test_violation[g] = -reward.r_v
        log_.reference_action_norm[g] = float(np.linalg.norm(a))
    return log_


def _progress_printer(cfg: ExperimentConfig):
    def cb(day, step_log):
        if (day + 1) % 10 == 0:
            s = slice(day * 96, (day + 1) * 96)
            log.info("%s/%s day %d: train %.3f test %.3f",
                     cfg.network, cfg.mode, day,
                     step_log.train_reward[s].sum(), step_log.test_reward[s].sum())
    return cb


def write_metrics(path, config_hash: str, step_log: sac.StepLog) -> None:
    cols = [getattr(step_log, c) for c in METRICS_COLUMNS]
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for i in range(len(step_log.day)):
            row = [str(int(step_log.day[i])), str(int(step_log.step[i]))]
            row += [repr(float(col[i])) for col in cols[2:]]
            fh.write(",".join(row) + "\n")


def write_daily(path, config_hash: str, step_log: sac.StepLog) -> None:
    days = np.unique(step_log.day.astype(int))
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("day,train_reward,test_reward,test_ploss,test_violation,critic_loss,alpha\n")
        for d in days:
            m = step_log.day == d
            closs = step_log.critic_loss[m]
            closs = float(np.mean(closs[np.isfinite(closs)])) if np.any(np.isfinite(closs)) else float("nan")
            alpha = step_log.alpha[m]
            alpha = float(alpha[np.isfinite(alpha)][-1]) if np.any(np.isfinite(alpha)) else float("nan")
            fh.write(",".join([
                str(d),
                repr(float(step_log.train_reward[m].sum())),
                repr(float(step_log.test_reward[m].sum())),
                repr(float(step_log.test_ploss[m].sum())),
                repr(float(step_log.test_violation[m].sum())),
                repr(closs),
                repr(alpha),
            ]) + "\n")


def read_metrics(path) -> dict:
    """Load a metrics CSV back into arrays, plus its config hash."""
    with open(path) as fh:
        header = fh.readline().strip()
        names = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not header.startswith("# config_hash="):
        raise ValueError(f"{path} is not a metrics file")
    data = np.array([[float(x) for x in row] for row in rows]) if rows else np.empty((0, len(names)))
    out = {name: data[:, j] for j, name in enumerate(names)}
    out["config_hash"] = header.split("=", 1)[1]
    return out


def daily_sums(metrics: dict, column: str) -> np.ndarray:
    """Sum a per-step column over each day, in day order."""
    days = metrics["day"].astype(int)
    n_days = days.max() + 1 if len(days) else 0
    out = np.zeros(n_days)
    np.add.at(out, days, metrics[column])
    return out


def final_days_slice(n_days: int, window: int = FINAL_WINDOW) -> slice:
    return slice(max(0, n_days - window), n_days)


def error_vs_baseline(method: dict, baseline: dict) -> dict:
    """Per-day optimality gaps: baseline daily result minus method's.

    Both metrics sets must come from runs over the identical scenario
    (same days, steps and seed); reward errors are then attributable to
    the controller alone.
    """
    for col in ("day", "step"):
        if len(method[col]) != len(baseline[col]) or np.any(method[col] != baseline[col]):
            raise ValueError("metrics are misaligned; runs must share scenario and days")
    days = np.unique(method["day"].astype(int))
    out = {"day": days}
    for name, col in (("reward_error", "test_reward"),
                      ("ploss_error", "test_ploss"),
                      ("violation_error", "test_violation")):
        out[name] = daily_sums(baseline, col) - daily_sums(method, col)
    w = final_days_slice(len(days))
    out["final"] = {name: float(np.mean(out[name][w]))
                    for name in ("reward_error", "ploss_error", "violation_error")}
    return out


def write_error_report(path, err: dict) -> None:
    with open(path, "w") as fh:
        fh.write("day,reward_error,ploss_error,violation_error\n")
        for i, d in enumerate(err["day"]):
            fh.write(f"{d},{err['reward_error'][i]!r},{err['ploss_error'][i]!r},"
                     f"{err['violation_error'][i]!r}\n")


def lambda_sweep(base_cfg: ExperimentConfig, lambdas, force: bool = False
                 ) -> tuple[list[dict], Path]:
    """Run rm_sac for each residual scale and summarise the final window.

    Emits one row per lambda with final-50-day means of critic loss and
    of the daily accumulated train/test rewards plus their gap.
    """
    rows = []
    base_out = Path(base_cfg.out_dir)
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda {lam} outside [0, 1]")
        cfg = replace(base_cfg, mode="rm_sac", lambda_scale=lam,
                      out_dir=str(base_out / f"lambda_{lam:g}"))
        metrics = read_metrics(run_experiment(cfg, force=force))
        rows.append(sweep_row(lam, metrics))
    path = base_out / "sweep_summary.csv"
    base_out.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("lambda,critic_loss,train_reward,test_reward,train_minus_test\n")
        for r in rows:
            fh.write(f"{r['lambda']:g},{r['critic_loss']!r},{r['train_reward']!r},"
                     f"{r['test_reward']!r},{r['train_minus_test']!r}\n")
    return rows, path


def sweep_row(lam: float, metrics: dict) -> dict:
    days = metrics["day"].astype(int)
    n_days = days.max() + 1
    w = final_days_slice(n_days)
    day_range = np.arange(n_days)[w]
    in_window = np.isin(days, day_range)
    closs = metrics["critic_loss"][in_window]
    closs = float(np.mean(closs[np.isfinite(closs)])) if np.any(np.isfinite(closs)) else float("nan")
    train_daily = daily_sums(metrics, "train_reward")[w]
    test_daily = daily_sums(metrics, "test_reward")[w]
    return {
        "lambda": lam,
        "critic_loss": closs,
        "train_reward": float(train_daily.mean()),
        "test_reward": float(test_daily.mean()),
        "train_minus_test": float((train_daily - test_daily).mean()),
    }


def early_stage_report(metrics_by_lambda: dict[float, dict], days: int = 10
                       ) -> list[dict]:
    """Mean test reward over the first `days` days, per residual scale.

    This isolates the exploration-noise effect: those days are driven by
    the uniform random phase, so wider residual spaces should hurt.
    """
    rows = []
    for lam in sorted(metrics_by_lambda):
        metrics = metrics_by_lambda[lam]
        d = metrics["day"].astype(int)
        if d.max() + 1 < days:
            raise ValueError(f"need at least {days} days of data, have {d.max() + 1}")
        sel = d < days
        rows.append({"lambda": lam,
                     "early_test_reward": float(np.mean(
                         daily_sums(metrics, "test_reward")[:days]))})
    return rows


def write_early_report(path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("lambda,early_test_reward\n")
        for r in rows:
            fh.write(f"{r['lambda']:g},{r['early_test_reward']!r}\n")


def regenerate_scenario(network: str, days: int, seed: int, out_path) -> Path:
    """Persist the scenario a given (network, days, seed) would produce."""
    net = load_case(network)
    devices = load_devices(case_path(network))
    scn = generate_profiles(net, devices, days, seed)
    save_scenario(scn, net, devices, out_path)
    return Path(out_path)


def comparison_suite_configs(out_root, network: str = "case33", days: int = 100,
                             seed: int = 0, lambdas=(0.2, 0.3, 0.4, 0.8)
                             ) -> dict[str, ExperimentConfig]:
    """The standard comparison batch: both dispatch baselines, plain SAC,
    the un-reduced residual variant, and rm_sac at several scales, all on
    one shared scenario seed."""
    out_root = Path(out_root)
    factor = 1.3 if network == "case118" else 1.5
    cache = str(out_root / "cache")
    base = dict(network=network, days=days, seed=seed, impedance_factor=factor,
                cache_refactions=cache)
    cfgs = {
        "mbo_accurate": ExperimentConfig(mode="mbo_accurate",
                                         out_dir=str(out_root / "mbo_accurate"), **base),
        "mbo_reference": ExperimentConfig(mode="mbo_reference",
                                          out_dir=str(out_root / "mbo_reference"), **base),
        "sac": ExperimentConfig(mode="sac", out_dir=str(out_root / "sac"), **base),
        "rm_sac_wide": ExperimentConfig(mode="rm_sac_wide",
                                        out_dir=str(out_root / "rm_sac_wide"), **base),
    }
    for lam in lambdas:
        cfgs[f"rm_sac_{lam:g}"] = ExperimentConfig(
            mode="rm_sac", lambda_scale=lam,
            out_dir=str(out_root / f"rm_sac_{lam:g}"), **base)
    return cfgs


def run_suite(cfgs: dict[str, ExperimentConfig], workers: int = 2,
              force: bool = False) -> dict[str, Path]:
    """Run a batch of experiments as parallel subprocesses.

    Dispatch-table runs go first so later runs hit the shared cache
    instead of recomputing.  Each worker is pinned to one BLAS thread;
    at these matrix sizes that is faster than sharing threads.
    """
    pending = {}
    results: dict[str, Path] = {}
    for name, cfg in cfgs.items():
        cfg.validate()
        metrics = Path(cfg.out_dir) / "metrics.csv"
        if not force and metrics.exists() and read_metrics(metrics)["config_hash"] == cfg.hash():
            results[name] = metrics
        else:
            pending[name] = cfg

    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1")
    # two phases: cache producers, then cache consumers
    phases = [
        {n: c for n, c in pending.items() if c.mode.startswith("mbo_")},
        {n: c for n, c in pending.items() if not c.mode.startswith("mbo_")},
    ]
    for phase in phases:
        queue = list(phase.items())
        running: list[tuple[str, ExperimentConfig, subprocess.Popen]] = []
        while queue or running:
            while queue and len(running) < workers:
                name, cfg = queue.pop(0)
                argv = [sys.executable, "-m", "vvclab.cli", "run",
                        "--network", cfg.network, "--mode", cfg.mode,
                        "--days", str(cfg.days), "--seed", str(cfg.seed),
                        "--impedance-factor", str(cfg.impedance_factor),
                        "--out", cfg.out_dir]
                if cfg.mode == "rm_sac":
                    argv += ["--lambda", str(cfg.lambda_scale)]
                if cfg.cache_refactions:
                    argv += ["--cache-refactions", cfg.cache_refactions]
                if force:
                    argv += ["--force"]
                log.info("suite: starting %s", name)
                proc = subprocess.Popen(argv, env=env, stdout=subprocess.PIPE,
                                        stderr=subprocess.STDOUT, text=True)
                running.append((name, cfg, proc))
            name, cfg, proc = running[0]
            out, _ = proc.communicate()
            running.pop(0)
            if proc.returncode != 0:
                raise RuntimeError(f"suite run {name} failed:\n{out}")
            results[name] = Path(cfg.out_dir) / "metrics.csv"
            log.info("suite: finished %s", name)
    return results
