"""Experiment configuration, sweep runner, and results CLI.

A YAML file declares one experiment: a policy, the sweep axes (vehicle
count, access mode, radio pipeline, message size, seeds), and optional
overrides for the scenario, channel, radio, agent, and GA parameter
blocks. `run` executes the full cross product and writes:

    results.csv          one row per run with final KPIs
    learning_curves.csv  per-episode (or per-generation) training traces
    timings.csv          wallclock per run, kept out of results.csv so
                         reruns of the same config are byte-identical
    manifest.json        config echo, content hash, library versions

`summarize` aggregates results over seeds into summary.csv and
learning_summary.csv, the files the figure renderer consumes. `rerun`
replays a finished experiment from its manifest.json alone.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import (ChromosomePolicy, FixedPolicy, GaConfig,
                        GeneticOptimizer, RandomPolicy, weighted_objective)
from .channel import ChannelParams, dbm_to_watts
from .env import AccessMode, EnvParams, ObjectiveWeights, SidelinkEnv, run_episode
from .mpdqn import AgentParams, AgentPolicy, MpdqnAgent, train
from .scenario import ConfigError, ScenarioConfig
from .sps import Mode, RRI_CHOICES, SpsParams

EVAL_EPISODE_BASE = 10_000   # eval episode indices stay clear of training indices
POLICIES = ("random", "fixed", "mpdqn", "ga")


@dataclass
class ExperimentConfig:
    name: str
    policy: str
    access: list[str] = field(default_factory=lambda: ["NOMA"])
    radio: list[str] = field(default_factory=lambda: ["NR"])
    n_vehicles: list[int] = field(default_factory=lambda: [20])
    message_size_bits: list[float] = field(default_factory=lambda: [2400.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    horizon_slots: int = 5000
    episodes: int = 1
    eval_episodes: int = 1
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    scenario_overrides: dict = field(default_factory=dict)
    env_overrides: dict = field(default_factory=dict)
    channel_overrides: dict = field(default_factory=dict)
    sps_overrides: dict = field(default_factory=dict)
    agent_overrides: dict = field(default_factory=dict)
    ga_overrides: dict = field(default_factory=dict)
    fixed_rri: int = 100
    fixed_power_dbm: float = 23.0

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        for a in self.access:
            if a not in ("OMA", "NOMA"):
                raise ConfigError(f"access entries must be OMA or NOMA, got {a!r}")
        for r in self.radio:
            if r not in ("NR", "LTE"):
                raise ConfigError(f"radio entries must be NR or LTE, got {r!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(n < 2 for n in self.n_vehicles):
            raise ConfigError("n_vehicles entries must be >= 2")
        if any(g <= 0 for g in self.message_size_bits):
            raise ConfigError("message_size_bits entries must be > 0")
        if self.horizon_slots <= 0 or self.episodes <= 0 or self.eval_episodes <= 0:
            raise ConfigError("horizon_slots, episodes, eval_episodes must be > 0")
        if self.policy == "fixed" and self.fixed_rri not in RRI_CHOICES:
            raise ConfigError(f"fixed rri must be one of {RRI_CHOICES}")


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': " +
                          ", ".join(f"{section}.{k}" for k in unknown))


def _dataclass_fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


_TOP_KEYS = {"name", "policy", "sweep", "sim", "weights", "train",
             "agent", "ga", "channel", "sps", "fixed"}
_SWEEP_KEYS = {"access", "radio", "n_vehicles", "message_size_bits", "seeds"}
_TRAIN_KEYS = {"episodes", "eval_episodes"}
_FIXED_KEYS = {"rri", "power_dbm"}
_SIM_SCENARIO_KEYS = {"horizon_slots", "road_length_m", "rsu_range_m",
                      "rx_range_m", "v_min_mps", "v_max_mps",
                      "n_lanes_per_direction"}
_SIM_ENV_KEYS = {"arrival_period_slots", "queue_capacity", "n_subchannels",
                 "succ_window_slots", "p_max_dbm"}


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a YAML experiment file; raises ConfigError."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError("experiment file must contain a mapping at top level")
    _check_keys("<top>", raw, _TOP_KEYS)
    for key in ("name", "policy"):
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")

    def section(key: str, allowed: set[str]) -> dict:
        data = raw.get(key, {}) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"'{key}' must be a mapping")
        _check_keys(key, data, allowed)
        return data

    sweep = section("sweep", _SWEEP_KEYS)
    sim = section("sim", _SIM_SCENARIO_KEYS | _SIM_ENV_KEYS)
    weights = section("weights", {"energy", "aoi"})
    trn = section("train", _TRAIN_KEYS)
    fixed = section("fixed", _FIXED_KEYS)
    agent = section("agent", _dataclass_fields(AgentParams))
    ga = section("ga", _dataclass_fields(GaConfig))
    chn = section("channel", _dataclass_fields(ChannelParams))
    sps_sec = section("sps", _dataclass_fields(SpsParams) - {"mode"})

    def listify(value):
        return value if isinstance(value, list) else [value]

    cfg = ExperimentConfig(
        name=str(raw["name"]),
        policy=str(raw["policy"]),
        access=[str(a) for a in listify(sweep.get("access", ["NOMA"]))],
        radio=[str(r) for r in listify(sweep.get("radio", ["NR"]))],
        n_vehicles=[int(n) for n in listify(sweep.get("n_vehicles", [20]))],
        message_size_bits=[float(g) for g in
                           listify(sweep.get("message_size_bits", [2400.0]))],
        seeds=[int(s) for s in listify(sweep.get("seeds", [0]))],
        horizon_slots=int(sim.get("horizon_slots", 5000)),
        episodes=int(trn.get("episodes", 1)),
        eval_episodes=int(trn.get("eval_episodes", 1)),
        weights=ObjectiveWeights(float(weights.get("energy", 0.6)),
                                 float(weights.get("aoi", 0.4))),
        scenario_overrides={k: v for k, v in sim.items()
                            if k in _SIM_SCENARIO_KEYS and k != "horizon_slots"},
        env_overrides={k: v for k, v in sim.items() if k in _SIM_ENV_KEYS},
        channel_overrides=dict(chn),
        sps_overrides=dict(sps_sec),
        agent_overrides=dict(agent),
        ga_overrides=dict(ga),
        fixed_rri=int(fixed.get("rri", 100)),
        fixed_power_dbm=float(fixed.get("power_dbm", 23.0)),
    )
    cfg.validate()
    return cfg


# -- running -------------------------------------------------------------


@dataclass
class RunSpec:
    run_id: str
    policy: str
    access: str
    radio: str
    n_vehicles: int
    message_size_bits: float
    seed: int


def expand_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    runs = []
    for n in cfg.n_vehicles:
        for g in cfg.message_size_bits:
            for access in cfg.access:
                for radio in cfg.radio:
                    for seed in cfg.seeds:
                        rid = (f"{cfg.policy}-{access}-{radio}-n{n}"
                               f"-g{int(g)}-s{seed}")
                        runs.append(RunSpec(rid, cfg.policy, access, radio,
                                            n, g, seed))
    return runs


def build_env(cfg: ExperimentConfig, spec: RunSpec) -> SidelinkEnv:
    scen = ScenarioConfig(n_vehicles=spec.n_vehicles,
                          horizon_slots=cfg.horizon_slots, seed=spec.seed,
                          **cfg.scenario_overrides)
    chn = ChannelParams(**cfg.channel_overrides)
    mode = Mode.NR_MODE2 if spec.radio == "NR" else Mode.LTE_MODE4
    sps_params = SpsParams(mode=mode, **cfg.sps_overrides)
    env_params = EnvParams(weights=cfg.weights,
                           access=AccessMode[spec.access],
                           message_size_bits=spec.message_size_bits,
                           **cfg.env_overrides)
    return SidelinkEnv(scen, chn, sps_params, env_params)


def _eval_policy(env: SidelinkEnv, policy, episodes: int) -> dict[str, float]:
    aoi, energy, reward = [], [], []
    for j in range(episodes):
        m = run_episode(env, policy, explore=False,
                        episode=EVAL_EPISODE_BASE + j)
        aoi.append(m["avg_aoi_slots"])
        energy.append(m["avg_energy_j"])
        reward.append(m["mean_reward"])
    return {"avg_aoi_slots": float(np.mean(aoi)),
            "avg_energy_j": float(np.mean(energy)),
            "mean_reward": float(np.mean(reward))}


def execute_run(cfg: ExperimentConfig, spec: RunSpec) -> tuple[dict, list[dict]]:
    """Returns (result row, learning-curve rows) for one sweep point."""
    env = build_env(cfg, spec)
    curves: list[dict] = []
    if cfg.policy == "random":
        policy = RandomPolicy(env.p_max_w, seed=spec.seed)
        metrics = _eval_policy(env, policy, cfg.eval_episodes)
    elif cfg.policy == "fixed":
        policy = FixedPolicy(cfg.fixed_rri, dbm_to_watts(cfg.fixed_power_dbm))
        metrics = _eval_policy(env, policy, cfg.eval_episodes)
    elif cfg.policy == "mpdqn":
        agent = MpdqnAgent(spec.n_vehicles,
                           AgentParams(seed=spec.seed, **cfg.agent_overrides))
        report = train(agent, env, cfg.episodes)
        for ep, (rew, aoi, en) in enumerate(zip(report.episode_rewards,
                                                report.episode_aoi,
                                                report.episode_energy)):
            curves.append({"run_id": spec.run_id, "episode": ep,
                           "mean_reward": rew, "avg_aoi_slots": aoi,
                           "avg_energy_j": en})
        metrics = _eval_policy(env, AgentPolicy(agent, env.p_max_w),
                               cfg.eval_episodes)
    elif cfg.policy == "ga":
        opt = GeneticOptimizer(env, GaConfig(seed=spec.seed,
                                             **cfg.ga_overrides),
                               eval_episode=0)
        best, report = opt.run()
        # per-generation trace: negated best objective plays the reward role
        for gen, b in enumerate(report.best_objective):
            curves.append({"run_id": spec.run_id, "episode": gen,
                           "mean_reward": -b, "avg_aoi_slots": "",
                           "avg_energy_j": ""})
        metrics = _eval_policy(env, ChromosomePolicy(best, env.p_max_w),
                               cfg.eval_episodes)
    else:
        raise ConfigError(f"unsupported policy {cfg.policy!r}")

    w1, w2 = cfg.weights.normalized()
    row = {"run_id": spec.run_id, "policy": spec.policy, "access": spec.access,
           "radio": spec.radio, "n_vehicles": spec.n_vehicles,
           "message_size_bits": spec.message_size_bits, "seed": spec.seed,
           "avg_aoi_slots": metrics["avg_aoi_slots"],
           "avg_energy_j": metrics["avg_energy_j"],
           "mean_reward": metrics["mean_reward"],
           "objective": weighted_objective(metrics, w1, w2)}
    return row, curves


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


RESULT_COLUMNS = ["run_id", "policy", "access", "radio", "n_vehicles",
                  "message_size_bits", "seed", "avg_aoi_slots",
                  "avg_energy_j", "mean_reward", "objective"]
CURVE_COLUMNS = ["run_id", "episode", "mean_reward", "avg_aoi_slots",
                 "avg_energy_j"]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path,
                   jobs: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = expand_runs(cfg)
    results, curves, timings = [], [], []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = pool.map(_execute_star, [(cfg, s) for s in runs])
    else:
        outputs = (_execute_star((cfg, s)) for s in runs)
    for spec, (row, crv, dt) in zip(runs, outputs):
        results.append(row)
        curves.extend(crv)
        timings.append({"run_id": spec.run_id, "wallclock_s": dt})

    results.sort(key=lambda r: r["run_id"])
    curves.sort(key=lambda r: (r["run_id"], r["episode"]))
    _write_csv(out / "results.csv", results, RESULT_COLUMNS)
    _write_csv(out / "learning_curves.csv", curves, CURVE_COLUMNS)
    _write_csv(out / "timings.csv", timings, ["run_id", "wallclock_s"])

    cfg_dict = dataclasses.asdict(cfg)
    cfg_json = json.dumps(cfg_dict, sort_keys=True, default=str)
    manifest = {
        "name": cfg.name,
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "runs": [r.run_id for r in runs],
        "versions": {"package": __version__,
                     "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


def _execute_star(args):
    t0 = time.perf_counter()
    row, crv = execute_run(*args)
    return row, crv, time.perf_counter() - t0


def config_from_manifest(path: str | Path) -> ExperimentConfig:
    """Rebuild the experiment configuration embedded in a run manifest."""
    data = json.loads(Path(path).read_text())
    raw = dict(data["config"])
    raw["weights"] = ObjectiveWeights(**raw["weights"])
    cfg = ExperimentConfig(**raw)
    cfg.validate()
    return cfg


# -- summarizing ------------------------------------------------------------


SUMMARY_GROUP = ["policy", "access", "radio", "n_vehicles", "message_size_bits"]
SUMMARY_COLUMNS = SUMMARY_GROUP + [
    "n_seeds", "aoi_mean", "aoi_std", "energy_mean", "energy_std",
    "reward_mean", "reward_std", "objective_mean", "objective_std"]
LEARNING_SUMMARY_COLUMNS = ["policy", "access", "radio", "n_vehicles",
                            "message_size_bits", "episode", "n_seeds",
                            "reward_mean", "reward_std"]


def _group_rows(rows: list[dict], keys: list[str]) -> dict[tuple, list[dict]]:
    grouped: dict[tuple, list[dict]] = {}
    for row in rows:
        grouped.setdefault(tuple(row[k] for k in keys), []).append(row)
    return grouped


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=0))


def summarize(results_dir: str | Path, out_dir: str | Path) -> Path:
    results_dir, out = Path(results_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (results_dir / "results.csv").open() as fh:
        results = list(csv.DictReader(fh))
    for row in results:
        row["n_vehicles"] = int(row["n_vehicles"])
        row["message_size_bits"] = float(row["message_size_bits"])
        for key in ("avg_aoi_slots", "avg_energy_j", "mean_reward", "objective"):
            row[key] = float(row[key])

    summary_rows = []
    for key, group in sorted(_group_rows(results, SUMMARY_GROUP).items()):
        aoi = _mean_std([r["avg_aoi_slots"] for r in group])
        energy = _mean_std([r["avg_energy_j"] for r in group])
        reward = _mean_std([r["mean_reward"] for r in group])
        objective = _mean_std([r["objective"] for r in group])
        summary_rows.append(dict(zip(SUMMARY_GROUP, key)) | {
            "n_seeds": len(group), "aoi_mean": aoi[0], "aoi_std": aoi[1],
            "energy_mean": energy[0], "energy_std": energy[1],
            "reward_mean": reward[0], "reward_std": reward[1],
            "objective_mean": objective[0], "objective_std": objective[1]})
    _write_csv(out / "summary.csv", summary_rows, SUMMARY_COLUMNS)

    curves_path = results_dir / "learning_curves.csv"
    learning_rows = []
    if curves_path.exists():
        with curves_path.open() as fh:
            curves = list(csv.DictReader(fh))
        run_meta = {r["run_id"]: r for r in results}
        for row in curves:
            meta = run_meta[row["run_id"]]
            row.update({k: meta[k] for k in SUMMARY_GROUP})
            row["episode"] = int(row["episode"])
            row["mean_reward"] = float(row["mean_reward"])
        group_keys = SUMMARY_GROUP + ["episode"]
        for key, group in sorted(_group_rows(curves, group_keys).items()):
            reward = _mean_std([r["mean_reward"] for r in group])
            learning_rows.append(dict(zip(group_keys, key)) | {
                "n_seeds": len(group), "reward_mean": reward[0],
                "reward_std": reward[1]})
    _write_csv(out / "learning_summary.csv", learning_rows,
               LEARNING_SUMMARY_COLUMNS)
    return out


# -- CLI ------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sidelink",
        description="Sidelink resource-allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment sweep")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed-override", default=None,
                       help="comma-separated seeds replacing the config's list")

    p_val = sub.add_parser("validate", help="check an experiment file")
    p_val.add_argument("--config", required=True)

    p_sum = sub.add_parser("summarize", help="aggregate results over seeds")
    p_sum.add_argument("--results", required=True)
    p_sum.add_argument("--out", required=True)

    p_rerun = sub.add_parser("rerun", help="replay an experiment from its manifest")
    p_rerun.add_argument("--manifest", required=True)
    p_rerun.add_argument("--out", required=True)
    p_rerun.add_argument("--jobs", type=int, default=1)

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            load_config(args.config)
            print(f"{args.config}: OK")
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed_override:
                cfg.seeds = [int(s) for s in args.seed_override.split(",")]
                cfg.validate()
            out = run_experiment(cfg, args.out, jobs=args.jobs)
            print(f"wrote {out / 'results.csv'}")
            return 0
        if args.command == "summarize":
            out = summarize(args.results, args.out)
            print(f"wrote {out / 'summary.csv'}")
            return 0
        if args.command == "rerun":
            cfg = config_from_manifest(args.manifest)
            out = run_experiment(cfg, args.out, jobs=args.jobs)
            print(f"wrote {out / 'results.csv'}")
            return 0
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure in a run
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
