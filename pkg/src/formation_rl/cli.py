"""Command-line entry point: ``formation-rl <command> --config FILE --seed N --out-dir DIR``.

Every command is a pure function of its config, input files and seed, and
writes its primary outputs into ``--out-dir``. Configuration and input files
are validated before anything is written.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from formation_rl import config as config_mod
from formation_rl.config import ConfigError, RunConfig
from formation_rl.env import BALL_DIM, DRONE_DIM, SELF_DIM, STATIC_DIM, TRAJECTORY_COLUMNS, reset, run_episode
from formation_rl.kernels import BACKEND
from formation_rl.metrics import evaluate, sweep_eval, write_reports_csv, write_reports_json
from formation_rl.nn.checkpoint import CheckpointMismatch, load_checkpoint, load_into, params_hash, policy_arrays, save_checkpoint
from formation_rl.nn.optim import Adam
from formation_rl.nn.policy import AttentionPolicy
from formation_rl.policies import HoverPolicy, LearnedActor, TrackingController
from formation_rl.reward import COMPONENTS, WeightVector
from formation_rl.train.pipeline import OBJECTIVES, Trainer, train_stage1, train_stage2

SCRIPTED = {"hover": HoverPolicy, "tracking": TrackingController}


class CliError(Exception):
    pass


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_run_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def load_weights(path) -> WeightVector:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read weights file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"weights file {path} is not valid JSON: {exc}") from exc
    weights = data.get("weights", data) if isinstance(data, dict) else None
    if not isinstance(weights, dict):
        raise CliError(f"weights file {path} must hold an object with keys {', '.join(COMPONENTS)}")
    try:
        return WeightVector.from_array([weights[k] for k in COMPONENTS])
    except KeyError as exc:
        raise CliError(f"weights file {path} lacks component {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise CliError(f"weights file {path}: {exc}") from exc


def weights_dict(w: WeightVector) -> dict:
    return dict(zip(COMPONENTS, (float(x) for x in w.as_array())))


def load_policy(cfg: RunConfig, path) -> AttentionPolicy:
    try:
        tensors, _ = load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"checkpoint {path} is malformed: {exc}") from exc
    policy = AttentionPolicy(cfg.policy, seed=cfg.seed)
    try:
        load_into(policy, tensors)
    except CheckpointMismatch as exc:
        raise CliError(f"checkpoint does not fit the configured policy: {exc}") from exc
    return policy


def make_actor(cfg: RunConfig, args):
    if args.policy == "learned":
        if not args.checkpoint:
            raise CliError("--checkpoint is required for the learned policy")
        return LearnedActor(load_policy(cfg, args.checkpoint), cfg.quad)
    if args.checkpoint:
        raise CliError(f"--checkpoint cannot be combined with --policy {args.policy}")
    return SCRIPTED[args.policy](cfg.quad)


# search-weights


def cmd_search_weights(args, cfg: RunConfig):
    os.makedirs(args.out_dir, exist_ok=True)
    results = train_stage1(cfg.search, cfg.ppo, cfg.seed, cfg.policy, cfg.reward, cfg.quad, cfg.env)
    path = os.path.join(args.out_dir, "stage1_results.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "trial", *(f"w_{c}" for c in COMPONENTS), "sr", *OBJECTIVES])
        for rank, r in enumerate(results):
            sat = r["satisfaction"]
            writer.writerow(
                [rank, r["trial"], *(repr(float(x)) for x in r["weights"].as_array()),
                 repr(sat["sr"]), *(repr(sat[k]) for k in OBJECTIVES)]
            )  # fmt: skip
    best = results[0]
    _write_json(
        os.path.join(args.out_dir, "best_weights.json"),
        {"weights": weights_dict(best["weights"]), "trial": best["trial"], "sr": best["satisfaction"]["sr"]},
    )
    save_checkpoint(
        os.path.join(args.out_dir, "best_policy.json"),
        policy_arrays(best["policy"]),
        {"trial": best["trial"], "weights": weights_dict(best["weights"])},
        binary=cfg.io.binary_checkpoints,
    )
    for r in results:
        print(f"trial {r['trial']}: SR {r['satisfaction']['sr']:.3f}")
    return 0


# train


class MetricsLog:
    """Append-only JSONL metrics file; ``keep`` truncates an existing file on resume."""

    def __init__(self, path, keep: int | None):
        lines = []
        if keep is not None:
            if not os.path.exists(path):
                raise CliError(f"cannot resume: {path} is missing")
            with open(path) as fh:
                lines = fh.readlines()
            if len(lines) < keep:
                raise CliError(f"cannot resume: {path} has {len(lines)} records, checkpoint expects {keep}")
            lines = lines[:keep]
        self.fh = open(path, "w")
        self.fh.writelines(lines)
        self.count = len(lines)

    def write(self, record: dict):
        self.fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
        self.fh.flush()
        self.count += 1

    def close(self):
        self.fh.close()


def _jsonable(record: dict) -> dict:
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in record.items()}


def cmd_train(args, cfg: RunConfig):
    weights = load_weights(args.weights)
    policy = AttentionPolicy(cfg.policy, seed=cfg.seed)
    optimizer = Adam(policy.parameters(), lr=cfg.ppo.lr)
    start = (0, 0)
    keep = None
    if args.resume:
        try:
            tensors, meta = load_checkpoint(args.resume)
        except OSError as exc:
            raise CliError(f"cannot read checkpoint {args.resume}: {exc.strerror}") from exc
        if "next" not in meta:
            raise CliError(f"{args.resume} is not a resumable training checkpoint")
        if meta.get("weights") != weights_dict(weights):
            raise CliError("resume checkpoint was trained with different reward weights")
        try:
            load_into(policy, tensors)
            optimizer.load_state(tensors, int(meta["adam_t"]))
        except (CheckpointMismatch, KeyError) as exc:
            raise CliError(f"checkpoint does not fit the configured policy: {exc}") from exc
        start = tuple(meta["next"])
        keep = int(meta["metrics_records"])

    ckpt_dir = os.path.join(args.out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    log = MetricsLog(os.path.join(args.out_dir, "metrics.jsonl"), keep)

    def checkpoint(period: int, next_update: int, name: str):
        meta = {
            "next": [period, next_update],
            "adam_t": optimizer.t,
            "metrics_records": log.count,
            "weights": weights_dict(weights),
            "seed": cfg.seed,
        }
        tensors = {**policy_arrays(policy), **optimizer.state_arrays()}
        save_checkpoint(os.path.join(ckpt_dir, name), tensors, meta, binary=cfg.io.binary_checkpoints)

    periods = cfg.curriculum.periods

    def on_update(record):
        if record["update"] == 0:
            spec = periods[record["period"]]
            log.write({"event": "period_start", "period": record["period"],
                       "n_columns": spec.n_columns, "n_balls": spec.n_balls})  # fmt: skip
        log.write(_jsonable(record))

    def on_chunk_end(period, next_update):
        checkpoint(period, next_update, f"period{period}_update{next_update:05d}.json")

    def on_period_end(period, summary):
        log.write({"event": "period_boundary", **summary})
        checkpoint(period + 1, 0, f"period{period}_end.json")

    trainer = Trainer(policy, weights, cfg.ppo, cfg.seed, cfg.reward, cfg.quad, optimizer)
    try:
        _, evals = train_stage2(
            weights, cfg.curriculum, cfg.ppo, policy, cfg.seed, cfg.env, cfg.reward, cfg.quad,
            eval_episodes=cfg.io.period_eval_episodes, thresholds=cfg.search.thresholds, trainer=trainer,
            checkpoint_every=cfg.io.checkpoint_every, on_update=on_update, on_chunk_end=on_chunk_end,
            on_period_end=on_period_end, start=start,
        )  # fmt: skip
    finally:
        log.close()
    save_checkpoint(
        os.path.join(args.out_dir, "final.json"),
        policy_arrays(policy),
        {"weights": weights_dict(weights), "seed": cfg.seed},
        binary=cfg.io.binary_checkpoints,
    )
    print(f"final parameters {params_hash(policy_arrays(policy))[:16]}")
    for e in evals:
        print(f"period {e['period']}: SR {e.get('sr', float('nan')):.3f}")
    return 0


# eval


def _parse_sweeps(raw) -> list[tuple[str, list[int]]]:
    sweeps = []
    for entry in raw or []:
        axis, *values = entry
        if axis not in ("columns", "balls"):
            raise CliError(f"--sweep axis must be 'columns' or 'balls', got {axis!r}")
        if not values:
            raise CliError(f"--sweep {axis} needs at least one value")
        try:
            ints = [int(v) for v in values]
        except ValueError as exc:
            raise CliError(f"--sweep {axis}: values must be integers") from exc
        if min(ints) < 0:
            raise CliError(f"--sweep {axis}: values must be nonnegative")
        sweeps.append((axis, ints))
    return sweeps


def cmd_eval(args, cfg: RunConfig):
    sweeps = _parse_sweeps(args.sweep)
    actor = make_actor(cfg, args)
    env_cfg = replace(cfg.env, n_columns=args.columns, n_balls=args.balls)
    episodes = args.episodes or cfg.io.eval_episodes
    th = cfg.search.thresholds
    os.makedirs(args.out_dir, exist_ok=True)
    scenario = f"{args.balls} balls + {args.columns} columns"
    report = evaluate(actor, env_cfg, episodes, cfg.seed, scenario, th, cfg.reward, cfg.quad)
    write_reports_csv(os.path.join(args.out_dir, "eval_report.csv"), [report])
    write_reports_json(os.path.join(args.out_dir, "eval_report.json"), [report], {"policy": args.policy})
    fm = "n/a" if report.fm is None else f"{report.fm:.4f}"
    print(f"{scenario}: CFR {report.cfr:.3f}  FM {fm}  SR {report.sr:.3f}")
    for axis, values in sweeps:
        rows = sweep_eval(actor, env_cfg, axis, values, episodes, cfg.seed, th, cfg.reward, cfg.quad)
        write_reports_csv(os.path.join(args.out_dir, f"sweep_{axis}.csv"), rows)
        write_reports_json(os.path.join(args.out_dir, f"sweep_{axis}.json"), rows, {"axis": axis})
        for r in rows:
            print(f"{r.scenario}: CFR {r.cfr:.3f}")
    return 0


# replay and inspect-env


def cmd_replay(args, cfg: RunConfig):
    actor = make_actor(cfg, args)
    env_cfg = replace(cfg.env, n_columns=args.columns, n_balls=args.balls)
    os.makedirs(args.out_dir, exist_ok=True)
    record = run_episode(actor, env_cfg, cfg.reward, cfg.quad, seed=args.episode_seed)
    record.to_csv(os.path.join(args.out_dir, "trajectory.csv"))
    _write_json(os.path.join(args.out_dir, "layout.json"), record.layout_dict())
    print(f"{record.n_steps} steps, goal {record.goal_reached}, collided {record.collided}")
    return 0


def cmd_inspect_env(args, cfg: RunConfig):
    env_cfg = replace(cfg.env, n_columns=args.columns, n_balls=args.balls)
    state, obs = reset(env_cfg, cfg.reward, cfg.quad, seed=args.episode_seed)
    os.makedirs(args.out_dir, exist_ok=True)
    payload = {
        "backend": BACKEND,
        "observation_widths": {"self": SELF_DIM, "drones": DRONE_DIM, "static": STATIC_DIM, "dynamic": BALL_DIM},
        "observation_shapes": {k: list(v.shape) for k, v in obs.items()},
        "initial_observation": {k: v.tolist() for k, v in obs.items()},
        "initial_positions": state.pos.tolist(),
        "formation_target": state.offsets.tolist(),
        "layout": state.world.layout_dict(),
        "trajectory_columns": TRAJECTORY_COLUMNS,
    }
    _write_json(os.path.join(args.out_dir, "inspect_env.json"), payload)
    print(f"{env_cfg.n_drones} drones, {len(state.world.columns)} columns, {env_cfg.n_balls} ball slots")
    for k, v in obs.items():
        print(f"  {k}: {list(v.shape)}")
    return 0


def cmd_config(args, cfg: RunConfig):
    if args.print_defaults:
        sys.stdout.write(config_mod.dumps(RunConfig()))
    else:
        sys.stdout.write(config_mod.dumps(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formation-rl", description="Multi-objective formation flight with MAPPO")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out-dir", default="out" if out else None, help="output directory")

    def policy_args(p):
        p.add_argument("--checkpoint", help="policy checkpoint (learned policy)")
        p.add_argument("--policy", choices=["learned", *SCRIPTED], default="learned")

    def scenario_args(p, columns, balls):
        p.add_argument("--columns", type=int, default=columns, help="number of columns")
        p.add_argument("--balls", type=int, default=balls, help="number of concurrent balls")

    p = sub.add_parser("search-weights", help="stage 1: random reward-weight search")
    common(p)
    p.set_defaults(func=cmd_search_weights)

    p = sub.add_parser("train", help="stage 2: curriculum training with fixed weights")
    common(p)
    p.add_argument("--weights", required=True, help="weights JSON (e.g. best_weights.json)")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate CFR, FM and SR, optionally sweeping obstacle counts")
    common(p)
    policy_args(p)
    scenario_args(p, 10, 2)
    p.add_argument("--episodes", type=int, help="episodes per scenario (default io.eval_episodes)")
    p.add_argument("--sweep", nargs="+", action="append", metavar="AXIS_OR_VALUE",
                   help="e.g. --sweep columns 5 10 15 20; may be repeated")  # fmt: skip
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="roll out one episode and export trajectory and layout")
    common(p)
    policy_args(p)
    scenario_args(p, 10, 2)
    p.add_argument("--episode-seed", type=int, default=0)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("inspect-env", help="describe the observation layout at reset")
    common(p)
    scenario_args(p, 10, 2)
    p.add_argument("--episode-seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect_env)

    p = sub.add_parser("config", help="print the effective or default configuration")
    common(p, out=False)
    p.add_argument("--print-defaults", action="store_true")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        for name in ("columns", "balls", "episodes"):
            value = getattr(args, name, None)
            if value is not None and value < (1 if name == "episodes" else 0):
                raise CliError(f"--{name} must be {'positive' if name == 'episodes' else 'nonnegative'}")
        return args.func(args, cfg)
    except (ConfigError, CliError) as exc:
        print(f"formation-rl: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"formation-rl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
