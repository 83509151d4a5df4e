"""Experiment orchestration: configuration, seeding, policy comparison runs,
sweeps, and CSV emission.

Every replica (seed x policy) is independent and deterministic: a master
seed fans out into named substreams (topology, dynamics, exploration,
weight init) so ablations can hold one stream fixed while varying another.
All policies for a given seed share the same generated topology and, during
evaluation, the same dynamics trajectory, so comparisons are paired.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .agent import AgentConfig, Trainer
from .apps import LbConfig, LoadBalancingApp, ShortestPathRoutingApp, SprConfig, build_pairs
from .baselines import GreedyPolicy, RandomPolicy, RoundRobinPolicy
from .envcore import ConfigError, EnvConfig, EpisodeStats, SyncPlaceEnv, enumerate_actions, sync_budget
from .netmodel import DynamicsConfig, GenerationConfig, generate_topology

# Named substreams of a replica's master seed.
STREAM_TOPOLOGY = 0
STREAM_DYNAMICS = 1
STREAM_EXPLORE = 2
STREAM_WEIGHTS = 3

# Dynamics phases: training rolls its own trajectory; every policy's
# evaluation shares one held-out trajectory per seed.
PHASE_TRAIN = 0
PHASE_EVAL = 1

POLICIES = ("ddrl", "round_robin", "random")

SWEEPABLE = ("tau", "budget_fraction", "num_domains")

BASE_COLUMNS = ("episode", "phase", "p_explore", "r_sync_mean", "r_sync_sum",
                "r_place_mean", "r_place_sum", "r_total_mean", "r_total_sum",
                "relocations")

SUMMARY_METRICS = ("r_sync_mean", "r_place_mean", "r_total_mean")


def substream_seed(master_seed: int, stream: int, *extra) -> int:
    """A derived integer seed for one named substream."""
    seq = np.random.SeedSequence((master_seed, stream) + tuple(extra))
    return int(seq.generate_state(1, np.uint64)[0])


def substream(master_seed: int, stream: int, *extra) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, stream) + tuple(extra))
    )


@dataclass
class ApplicationConfig:
    name: str = "spr"
    k: float = None
    capacity_reference: float = 10.0

    def validate(self):
        if self.name not in ("spr", "lb"):
            raise ConfigError(f"application.name must be 'spr' or 'lb', got {self.name!r}")
        SprConfig(k=self.k).validate()
        LbConfig(capacity_reference=self.capacity_reference).validate()


@dataclass
class RunConfig:
    policies: tuple = POLICIES
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_episodes: int = 50
    out_dir: str = "runs"
    workers: int = None
    checkpoint_every: int = None

    def validate(self):
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"run.policies: unknown policy {p!r}")
        if not self.seeds:
            raise ConfigError("run.seeds must be nonempty")
        if any(int(s) < 0 for s in self.seeds):
            raise ConfigError("run.seeds must be nonnegative")
        if self.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


@dataclass
class ExperimentConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    application: ApplicationConfig = field(default_factory=ApplicationConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        lo, hi = self.generation.switches_range
        if self.generation.num_domains < 2:
            raise ConfigError("generation.num_domains must be >= 2")
        if not (1 <= lo <= hi <= 64):
            raise ConfigError("generation.switches_range must lie within [1, 64]")
        if not (0.0 <= self.dynamics.link_flip_prob <= 1.0):
            raise ConfigError("dynamics.link_flip_prob must be in [0, 1]")
        if self.dynamics.capacity_step < 0:
            raise ConfigError("dynamics.capacity_step must be >= 0")
        blo, bhi = self.dynamics.capacity_bounds
        if blo > bhi:
            raise ConfigError("dynamics.capacity_bounds must be ordered")
        if (self.application.name == "lb"
                and self.application.capacity_reference < bhi):
            raise ConfigError(
                "application.capacity_reference must be >= dynamics.capacity_bounds max"
            )
        self.env.validate()
        self.agent.validate()
        self.application.validate()
        self.run.validate()

    def to_dict(self) -> dict:
        return {
            "generation": asdict(self.generation),
            "dynamics": asdict(self.dynamics),
            "env": asdict(self.env),
            "agent": asdict(self.agent),
            "application": asdict(self.application),
            "run": asdict(self.run),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"generation", "dynamics", "env", "agent", "application", "run"}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config section {key!r}")

        def build(section, cls_, tuple_fields=()):
            payload = dict(data.get(section, {}))
            names = {f.name for f in cls_.__dataclass_fields__.values()}
            for key in payload:
                if key not in names:
                    raise ConfigError(f"unknown key {section}.{key}")
            for tf in tuple_fields:
                if tf in payload and payload[tf] is not None:
                    payload[tf] = tuple(payload[tf])
            return cls_(**payload)

        return cls(
            generation=build("generation", GenerationConfig,
                             ("switches_range", "delay_range", "capacity_range",
                              "capacity_volatility_range")),
            dynamics=build("dynamics", DynamicsConfig, ("capacity_bounds",)),
            env=build("env", EnvConfig),
            agent=build("agent", AgentConfig, ("hidden_sizes",)),
            application=build("application", ApplicationConfig),
            run=build("run", RunConfig, ("policies", "seeds")),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        import json

        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fmt(value) -> str:
    """CSV cell: floats at 9 significant digits, everything else verbatim."""
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def metric_key(cfg: ExperimentConfig) -> str:
    return "spr_detect_rate" if cfg.application.name == "spr" else "lb_loss"


def build_app(cfg: ExperimentConfig, topology):
    if cfg.application.name == "spr":
        return ShortestPathRoutingApp(build_pairs(topology),
                                      SprConfig(k=cfg.application.k))
    return LoadBalancingApp(LbConfig(cfg.application.capacity_reference))


def build_env(cfg: ExperimentConfig, seed: int, phase: int) -> SyncPlaceEnv:
    """A replica's environment: topology from the seed's topology stream,
    dynamics from its per-phase dynamics stream."""
    gen = replace(cfg.generation, rng_seed=substream_seed(seed, STREAM_TOPOLOGY))
    topology = generate_topology(gen)
    dyn = replace(cfg.dynamics,
                  rng_seed=substream_seed(seed, STREAM_DYNAMICS, phase))
    return SyncPlaceEnv(topology, replace(cfg.env), dyn, build_app(cfg, topology))


def rollout_policy(env: SyncPlaceEnv, policy, episodes: int) -> list:
    records = []
    for ep in range(1, episodes + 1):
        env.reset()
        stats = EpisodeStats()
        for _ in range(env.cfg.horizon):
            stats.add(env.step(policy.act()))
        records.append(stats.record(ep, "eval", 0.0))
    return records


def run_replica(cfg: ExperimentConfig, seed: int, policy: str):
    """Train (ddrl) or roll out (baselines) one seed of one policy.

    Returns (records, eval_record_count); every policy's evaluation phase
    runs on the PHASE_EVAL dynamics trajectory for the seed.
    """
    records = []
    if policy == "ddrl":
        train_env = build_env(cfg, seed, PHASE_TRAIN)
        trainer = Trainer(train_env, replace(cfg.agent),
                          init_rng=substream(seed, STREAM_WEIGHTS),
                          explore_rng=substream(seed, STREAM_EXPLORE))
        records.extend(trainer.train())
        eval_env = build_env(cfg, seed, PHASE_EVAL)
        trainer.env = eval_env
        records.extend(trainer.evaluate(cfg.run.eval_episodes))
    elif policy == "round_robin":
        env = build_env(cfg, seed, PHASE_EVAL)
        records.extend(rollout_policy(env, RoundRobinPolicy(env),
                                      cfg.run.eval_episodes))
    elif policy == "random":
        env = build_env(cfg, seed, PHASE_EVAL)
        records.extend(rollout_policy(
            env, RandomPolicy(env, substream(seed, STREAM_EXPLORE)),
            cfg.run.eval_episodes))
    else:
        raise ConfigError(f"unknown policy {policy!r}")
    return records


def write_episodes_csv(path, records, metric: str) -> None:
    columns = BASE_COLUMNS + (metric,)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([fmt(rec.get(col, 0.0)) for col in columns])


def eval_means(records, metric: str) -> dict:
    """Per-seed summary: mean of each reported metric over eval episodes."""
    evals = [r for r in records if r["phase"] == "eval"]
    keys = (metric,) + SUMMARY_METRICS
    return {k: float(np.mean([r[k] for r in evals])) for k in keys}


def _replica_task(args):
    cfg, seed, policy, out_dir, metric = args
    records = run_replica(cfg, seed, policy)
    write_episodes_csv(os.path.join(out_dir, f"episodes_{policy}_{seed}.csv"),
                       records, metric)
    return seed, policy, eval_means(records, metric)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every seed x policy replica, write per-replica episode CSVs and a
    cross-seed summary.csv; returns {policy: {metric: (mean, std), ...}}."""
    cfg.validate()
    out_dir = cfg.run.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    metric = metric_key(cfg)
    tasks = [(cfg, seed, policy, out_dir, metric)
             for policy in cfg.run.policies for seed in cfg.run.seeds]

    workers = cfg.run.workers or min(len(tasks), os.cpu_count() or 1)
    if workers <= 1 or len(tasks) == 1:
        results = [_replica_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica_task, tasks))

    by_policy = {}
    for seed, policy, means in results:
        by_policy.setdefault(policy, []).append(means)

    summary = {}
    keys = (metric,) + SUMMARY_METRICS
    for policy in cfg.run.policies:
        rows = by_policy[policy]
        summary[policy] = {}
        for key in keys:
            vals = np.array([r[key] for r in rows])
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            summary[policy][key] = (float(np.mean(vals)), std)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["policy", "seeds"]
        for key in keys:
            header += [f"{key}_mean", f"{key}_std"]
        writer.writerow(header)
        for policy in cfg.run.policies:
            row = [policy, len(cfg.run.seeds)]
            for key in keys:
                mean, std = summary[policy][key]
                row += [fmt(mean), fmt(std)]
            writer.writerow(row)
    return summary


def apply_sweep_value(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    if param == "tau":
        return replace(cfg, env=replace(cfg.env, tau=int(value)))
    if param == "budget_fraction":
        return replace(cfg, env=replace(cfg.env, budget_fraction=float(value)))
    if param == "num_domains":
        return replace(cfg, generation=replace(cfg.generation,
                                               num_domains=int(value)))
    raise ConfigError(f"sweep parameter must be one of {SWEEPABLE}, got {param!r}")


def run_sweep(cfg: ExperimentConfig, param: str, values, out_dir=None) -> dict:
    """run_experiment once per swept value; writes sweep_<param>.csv with one
    row per (value, policy)."""
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep parameter must be one of {SWEEPABLE}, got {param!r}")
    cfg.validate()
    out_dir = cfg.run.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    metric = metric_key(cfg)

    results = {}
    for value in values:
        sub_cfg = apply_sweep_value(cfg, param, value)
        sub_dir = os.path.join(out_dir, f"{param}_{value}")
        results[value] = run_experiment(sub_cfg, sub_dir)

    path = os.path.join(out_dir, f"sweep_{param}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([param, "policy", f"{metric}_mean", f"{metric}_std",
                         "r_place_mean", "r_place_std"])
        for value in values:
            for policy in cfg.run.policies:
                m, s = results[value][policy][metric]
                pm, ps = results[value][policy]["r_place_mean"]
                writer.writerow([fmt(value), policy, fmt(m), fmt(s),
                                 fmt(pm), fmt(ps)])
    return results


def describe_actions(cfg: ExperimentConfig) -> str:
    """Human-readable canonical action ordering for the configured instance."""
    from .envcore import ACTION_ORDER

    gen = replace(cfg.generation, rng_seed=substream_seed(
        cfg.run.seeds[0], STREAM_TOPOLOGY))
    topology = generate_topology(gen)
    n = len(topology.neighbor_domains())
    b = sync_budget(cfg.env.budget_fraction, n)
    sites = len(topology.focal.candidate_sites)
    actions = enumerate_actions(n, b, sites, cfg.env.max_actions)
    lines = [ACTION_ORDER,
             f"neighbors={n} budget={b} sites={sites} actions={len(actions)}"]
    for i, a in enumerate(actions):
        subset = ",".join(str(s) for s in a.sync_set)
        lines.append(f"action {i}: sync={{{subset}}} site={a.place_site}")
    return "\n".join(lines)
