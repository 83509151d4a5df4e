"""Command line interface.

Subcommands: generate-topology, train, evaluate, compare, sweep,
describe-actions.  All runs are driven by a JSON config file with sections
generation / dynamics / env / agent / application / run; flags override the
seed list and output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import netmodel
from .agent import Trainer, TrainingDiverged, load_checkpoint, save_checkpoint
from .envcore import ConfigError
from .harness import (
    ExperimentConfig,
    PHASE_EVAL,
    PHASE_TRAIN,
    STREAM_EXPLORE,
    STREAM_TOPOLOGY,
    STREAM_WEIGHTS,
    build_env,
    describe_actions,
    eval_means,
    metric_key,
    run_experiment,
    run_sweep,
    substream,
    substream_seed,
    write_episodes_csv,
)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, run=replace(cfg.run, seeds=(args.seed,)))
    if getattr(args, "seeds", None):
        seeds = tuple(int(s) for s in args.seeds.split(","))
        cfg = replace(cfg, run=replace(cfg.run, seeds=seeds))
    if getattr(args, "out", None):
        cfg = replace(cfg, run=replace(cfg.run, out_dir=args.out))
    cfg.validate()
    return cfg


def cmd_generate_topology(args) -> int:
    cfg = _load_config(args)
    gen = replace(cfg.generation,
                  rng_seed=substream_seed(cfg.run.seeds[0], STREAM_TOPOLOGY))
    topo = netmodel.generate_topology(gen)
    out = args.topology_out or "topology.json"
    netmodel.save_topology(out, topo)
    print(f"wrote {out}: {len(topo.nodes)} nodes, {len(topo.links)} links, "
          f"{len(topo.domains)} domains")
    return 0


def cmd_describe_actions(args) -> int:
    print(describe_actions(_load_config(args)))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = cfg.run.seeds[0]
    os.makedirs(cfg.run.out_dir, exist_ok=True)
    env = build_env(cfg, seed, PHASE_TRAIN)
    trainer = Trainer(env, replace(cfg.agent),
                      init_rng=substream(seed, STREAM_WEIGHTS),
                      explore_rng=substream(seed, STREAM_EXPLORE))
    ckpt = os.path.join(cfg.run.out_dir, f"checkpoint_{seed}.json")
    records = trainer.train(checkpoint_every=args.checkpoint_every,
                            checkpoint_path=ckpt)
    save_checkpoint(ckpt, trainer)
    path = os.path.join(cfg.run.out_dir, f"episodes_ddrl_{seed}.csv")
    write_episodes_csv(path, records, metric_key(cfg))
    print(f"trained {len(records)} episodes; checkpoint {ckpt}, episodes {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    seed = cfg.run.seeds[0]
    os.makedirs(cfg.run.out_dir, exist_ok=True)
    env = build_env(cfg, seed, PHASE_EVAL)
    trainer = load_checkpoint(args.checkpoint, env)
    records = trainer.evaluate(args.episodes or cfg.run.eval_episodes)
    path = os.path.join(cfg.run.out_dir, f"eval_ddrl_{seed}.csv")
    write_episodes_csv(path, records, metric_key(cfg))
    means = eval_means(records, metric_key(cfg))
    print(f"wrote {path}")
    for key, val in means.items():
        print(f"  {key}: {val:.9g}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    if args.policy:
        cfg = replace(cfg, run=replace(cfg.run, policies=(args.policy,)))
    summary = run_experiment(cfg)
    metric = metric_key(cfg)
    for policy in cfg.run.policies:
        mean, std = summary[policy][metric]
        print(f"{policy}: {metric} = {mean:.9g} +/- {std:.9g}")
    print(f"outputs in {cfg.run.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = [float(v) if args.param == "budget_fraction" else int(v)
              for v in args.values.split(",")]
    run_sweep(cfg, args.param, values)
    print(f"swept {args.param} over {values}; outputs in {cfg.run.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="syncplace",
        description="Joint controller synchronization and placement experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="single master seed")
        if seeds:
            p.add_argument("--seeds", help="comma-separated master seeds")
        p.add_argument("--out", help="output directory override")

    p = sub.add_parser("generate-topology", help="write a topology JSON")
    common(p)
    p.add_argument("--topology-out", help="output path (default topology.json)")
    p.set_defaults(func=cmd_generate_topology)

    p = sub.add_parser("describe-actions", help="print the flat action ordering")
    common(p)
    p.set_defaults(func=cmd_describe_actions)

    p = sub.add_parser("train", help="train the learning policy on one seed")
    common(p)
    p.add_argument("--checkpoint-every", type=int,
                   help="checkpoint every N episodes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy rollout of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="run all policies over all seeds")
    common(p, seeds=True)
    p.add_argument("--policy", choices=("ddrl", "round_robin", "random"),
                   help="restrict to one policy")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="sweep one parameter")
    common(p, seeds=True)
    p.add_argument("--param", required=True,
                   choices=("tau", "budget_fraction", "num_domains"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
