"""Command-line shell: train, eval, ablate, transfer, export-beliefs,
baseline-random.  Every run writes a self-contained directory with the
resolved config, a delimited epoch log, and versioned checkpoints."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import runio
from .evaluation import (
    correlation_study,
    evaluate,
    random_policy_stats,
    transfer_eval,
)
from .gridworld import EnvConfig, PredatorPreyEnv
from .model import BepalParams
from .optim import RmspropState
from .runio import RunConfig
from .training import TrainConfig, build_targets, rollout_episode, train_epoch

log = logging.getLogger("bepal")

ABLATION_VARIANTS = ("full", "no_reward_pred", "no_motion_pred", "no_aux")


def _setup_logging() -> None:
    level = os.environ.get("BEPAL_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(message)s")


def _load_config(path: str) -> RunConfig:
    try:
        return RunConfig.from_dict(runio.read_json(path))
    except (ValueError, TypeError, KeyError) as err:
        raise SystemExit(f"invalid config {path}: {err}")


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    env = config.env
    train = config.train
    train_updates = {}
    if getattr(args, "epochs", None) is not None:
        train_updates["epochs"] = args.epochs
    if getattr(args, "episodes_per_epoch", None) is not None:
        train_updates["episodes_per_epoch"] = args.episodes_per_epoch
    if getattr(args, "no_motion_pred", False):
        train_updates["no_motion"] = True
    if getattr(args, "no_reward_pred", False):
        train_updates["no_reward"] = True
    if getattr(args, "no_aux", False):
        train_updates["no_aux"] = True
    if train_updates:
        train = dataclasses.replace(train, **train_updates)
    updates = {"env": env, "train": train}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if getattr(args, "name", None) is not None:
        updates["name"] = args.name
    return dataclasses.replace(config, **updates)


def _latest_checkpoint(run_dir: Path) -> Path:
    path = run_dir / "checkpoints" / "latest.ckpt"
    if not path.exists():
        raise SystemExit(f"no checkpoint found at {path}")
    return path


def _save_state(run_dir: Path, config: RunConfig, params, opt_state, epoch, rng) -> None:
    ckpt_dir = run_dir / "checkpoints"
    target = ckpt_dir / f"ckpt_{epoch:05d}.ckpt"
    runio.save_checkpoint(
        target, params, opt_state, epoch, rng.bit_generator.state, config.to_dict()
    )
    latest = ckpt_dir / "latest.ckpt"
    latest.write_bytes(target.read_bytes())


def run_training(config: RunConfig, resume: bool = False) -> Path:
    """Train per the config; returns the run directory."""
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    env = PredatorPreyEnv(config.env)
    if resume:
        ckpt = runio.load_checkpoint(_latest_checkpoint(run_dir))
        params, opt_state, start_epoch = ckpt.params, ckpt.opt_state, ckpt.epoch
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
        log.info("resuming %s from epoch %d", run_dir, start_epoch)
    else:
        runio.write_json(run_dir / "config.json", config.to_dict())
        rng = np.random.default_rng(config.seed)
        params = BepalParams.create(rng, n_agents=config.env.n_agents)
        opt_state = RmspropState(
            learning_rate=config.train.learning_rate, smoothing=config.train.smoothing
        )
        start_epoch = 0
    total_epochs = config.train.epochs
    for epoch in range(start_epoch + 1, total_epochs + 1):
        started = time.perf_counter()
        metrics = train_epoch(params, opt_state, env, config.train, rng)
        row = {"epoch": epoch, "wall_time": time.perf_counter() - started, **metrics}
        runio.append_log_row(run_dir / "log.csv", row)
        log.info(
            "epoch %d/%d steps %.2f done %.2f loss %.4f",
            epoch,
            total_epochs,
            metrics["avg_steps"],
            metrics["completion_rate"],
            metrics["total_loss"],
        )
        if epoch % config.checkpoint_interval == 0 or epoch == total_epochs:
            _save_state(run_dir, config, params, opt_state, epoch, rng)
    return run_dir


def cmd_train(args: argparse.Namespace) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    run_dir = run_training(config, resume=args.resume)
    print(run_dir)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt_path = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(Path(args.run))
    ckpt = runio.load_checkpoint(ckpt_path)
    env_cfg = _target_env(ckpt, args)
    report = evaluate(
        ckpt.params,
        env_cfg,
        args.episodes,
        args.seed,
        greedy=args.argmax,
        measure_beliefs=args.measure_beliefs,
    )
    out_dir = Path(args.out) if args.out else ckpt_path.parent.parent / "reports"
    report_path = out_dir / f"eval_m{env_cfg.map_size}_o{env_cfg.n_obstacles}_s{args.seed}.json"
    runio.write_json(report_path, report.to_dict())
    print(f"avg_steps {report.avg_steps:.2f} +- {report.std_steps:.2f} "
          f"completion {report.completion_rate:.3f} ({report_path})")
    log_path = ckpt_path.parent.parent / "log.csv"
    if log_path.exists():
        history = runio.read_log(log_path)
        if len(history) >= 3:
            try:
                corr = correlation_study(history)
            except ValueError as err:
                log.info("skipping correlation report: %s", err)
            else:
                runio.write_json(out_dir / "correlation.json", corr.to_dict())
                print(
                    f"pearson motion {corr.pearson_motion:.3f} (p={corr.p_motion:.2e}) "
                    f"reward {corr.pearson_reward:.3f} (p={corr.p_reward:.2e})"
                )
    return 0


def _target_env(ckpt, args) -> EnvConfig:
    base = EnvConfig(**ckpt.config["env"]) if ckpt.config else None
    updates = {}
    for attr, flag in (
        ("map_size", "map_size"),
        ("n_obstacles", "obstacles"),
        ("max_steps", "max_steps"),
        ("n_agents", "agents"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[attr] = value
    if base is None:
        required = {"map_size", "n_agents"}
        if not required <= set(updates):
            raise SystemExit("checkpoint has no env config; pass --map-size and --agents")
        return EnvConfig(**updates)
    return dataclasses.replace(base, **updates) if updates else base


def cmd_transfer(args: argparse.Namespace) -> int:
    ckpt = runio.load_checkpoint(Path(args.checkpoint))
    env_cfg = _target_env(ckpt, args)
    try:
        report = transfer_eval(ckpt.params, env_cfg, args.episodes, args.seed, greedy=args.argmax)
    except ValueError as err:
        raise SystemExit(str(err))
    if args.out:
        runio.write_json(Path(args.out), report.to_dict())
    print(
        f"transfer to m={env_cfg.map_size} obstacles={env_cfg.n_obstacles}: "
        f"avg_steps {report.avg_steps:.2f} completion {report.completion_rate:.3f}"
    )
    return 0


def _variant_train(base: TrainConfig, variant: str) -> TrainConfig:
    flags = {
        "full": {},
        "no_reward_pred": {"no_reward": True},
        "no_motion_pred": {"no_motion": True},
        "no_aux": {"no_aux": True},
    }[variant]
    return dataclasses.replace(base, **flags)


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    seeds = [int(s) for s in args.seeds.split(",")]
    tail = args.tail_epochs
    rows = []
    for variant in ABLATION_VARIANTS:
        finals = []
        for seed in seeds:
            run_cfg = dataclasses.replace(
                config,
                name=f"{config.name}-{variant}",
                seed=seed,
                train=_variant_train(config.train, variant),
            )
            run_dir = run_cfg.run_dir()
            if not (run_dir / "log.csv").exists():
                log.info("training %s seed %d", variant, seed)
                run_training(run_cfg)
            history = runio.read_log(run_dir / "log.csv")
            finals.append(float(np.mean([r["avg_steps"] for r in history[-tail:]])))
        rows.append((variant, float(np.mean(finals)), float(np.std(finals))))
    out_path = Path(config.out_dir) / f"{config.name}-ablation.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("variant,avg_steps,std_steps\n")
        for variant, mean, std in rows:
            fh.write(f"{variant},{mean!r},{std!r}\n")
    for variant, mean, std in rows:
        print(f"{variant:16s} {mean:6.2f} +- {std:.2f}")
    print(out_path)
    return 0


def cmd_export_beliefs(args: argparse.Namespace) -> int:
    ckpt = runio.load_checkpoint(Path(args.checkpoint))
    env_cfg = _target_env(ckpt, args)
    if env_cfg.n_agents != ckpt.params.n_agents:
        raise SystemExit("checkpoint and environment disagree on the number of agents")
    env = PredatorPreyEnv(env_cfg)
    rng = np.random.default_rng(args.seed)
    gamma = ckpt.config["train"]["gamma"] if ckpt.config else 1.0
    records = []
    traces = []
    m = float(env_cfg.map_size)
    for episode in range(args.episodes):
        env_seed = int(rng.integers(0, 2**62))
        batch = rollout_episode(ckpt.params, env, rng, env_seed=env_seed, with_beliefs=True)
        if batch.length == 0:
            continue
        batch.motion_targets, batch.reward_targets = build_targets(env, batch, gamma)
        for t in range(batch.length):
            for i in range(batch.n_agents):
                motion = batch.motion_beliefs[t].data[i]
                records.append(
                    {
                        "episode": episode,
                        "step": t,
                        "agent": i,
                        "map_size": env_cfg.map_size,
                        "true_cells": batch.positions[t + 1].tolist(),
                        "prey_cell": list(batch.prey),
                        "obstacles": [list(o) for o in batch.obstacles],
                        "action": int(batch.actions[t, i]),
                        "gate": int(batch.gates[t, i]),
                        "reward": float(batch.rewards[t, i]),
                        "pred_positions": (motion[:, :2] * m).tolist(),
                        "pred_dirs": motion[:, 2:].tolist(),
                        "pred_reward": batch.reward_beliefs[t].data[i].tolist(),
                        "target_motion": batch.motion_targets[t].tolist(),
                        "target_reward": batch.reward_targets[t].tolist(),
                    }
                )
        traces.extend(
            {**row, "episode": episode} for row in runio.trace_rows(batch)
        )
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent.parent
    count = runio.write_belief_records(out_dir / "beliefs.jsonl", records)
    with open(out_dir / "traces.csv", "w", encoding="utf-8") as fh:
        fh.write("episode,step,agent,row,col,action,gate,reward\n")
        for row in traces:
            fh.write(
                f"{row['episode']},{row['step']},{row['agent']},{row['row']},"
                f"{row['col']},{row['action']},{row['gate']},{row['reward']!r}\n"
            )
    print(f"{count} records -> {out_dir / 'beliefs.jsonl'}")
    return 0


def cmd_baseline_random(args: argparse.Namespace) -> int:
    env_cfg = EnvConfig(
        map_size=args.map_size,
        n_agents=args.agents,
        n_obstacles=args.obstacles,
        max_steps=args.max_steps,
    )
    report = random_policy_stats(env_cfg, args.episodes, args.seed)
    if args.out:
        runio.write_json(Path(args.out), report.to_dict())
    print(
        f"random baseline m={args.map_size} N={args.agents} obstacles={args.obstacles}: "
        f"avg_steps {report.avg_steps:.2f} +- {report.std_steps:.2f} "
        f"completion {report.completion_rate:.3f}"
    )
    return 0


def _add_env_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--map-size", type=int, default=None)
    parser.add_argument("--obstacles", type=int, default=None)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--agents", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bepal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model per a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--episodes-per-epoch", type=int, default=None)
    p_train.add_argument("--no-motion-pred", action="store_true")
    p_train.add_argument("--no-reward-pred", action="store_true")
    p_train.add_argument("--no-aux", action="store_true")
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--name", default=None)
    p_train.add_argument("--resume", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--run", default=None, help="run directory (uses latest checkpoint)")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--argmax", action="store_true")
    p_eval.add_argument("--measure-beliefs", action="store_true")
    p_eval.add_argument("--out", default=None)
    _add_env_overrides(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train and compare the four ablation variants")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--seeds", default="0,1,2")
    p_ablate.add_argument("--epochs", type=int, default=None)
    p_ablate.add_argument("--episodes-per-epoch", type=int, default=None)
    p_ablate.add_argument("--tail-epochs", type=int, default=20,
                          help="epochs averaged for the final score")
    p_ablate.add_argument("--out", default=None)
    p_ablate.set_defaults(func=cmd_ablate)

    p_transfer = sub.add_parser("transfer", help="evaluate a checkpoint on a different map")
    p_transfer.add_argument("--checkpoint", required=True)
    p_transfer.add_argument("--episodes", type=int, default=100)
    p_transfer.add_argument("--seed", type=int, default=0)
    p_transfer.add_argument("--argmax", action="store_true")
    p_transfer.add_argument("--out", default=None)
    _add_env_overrides(p_transfer)
    p_transfer.set_defaults(func=cmd_transfer)

    p_export = sub.add_parser("export-beliefs", help="export belief snapshots for plotting")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--episodes", type=int, default=5)
    p_export.add_argument("--seed", type=int, default=0)
    p_export.add_argument("--out", default=None)
    _add_env_overrides(p_export)
    p_export.set_defaults(func=cmd_export_beliefs)

    p_rand = sub.add_parser("baseline-random", help="measure the random-policy baseline")
    p_rand.add_argument("--map-size", type=int, required=True)
    p_rand.add_argument("--agents", type=int, required=True)
    p_rand.add_argument("--obstacles", type=int, default=0)
    p_rand.add_argument("--max-steps", type=int, default=40)
    p_rand.add_argument("--episodes", type=int, default=500)
    p_rand.add_argument("--seed", type=int, default=0)
    p_rand.add_argument("--out", default=None)
    p_rand.set_defaults(func=cmd_baseline_random)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not (args.checkpoint or args.run):
        parser.error("eval needs --checkpoint or --run")
    try:
        return args.func(args)
    except ValueError as err:
        raise SystemExit(f"error: {err}")


if __name__ == "__main__":
    sys.exit(main())
