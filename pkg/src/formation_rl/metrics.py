"""Evaluation metrics over episode records: collision-free rate, formation maintenance, sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from formation_rl.env import EnvConfig, EpisodeRecord, episode_seeds, run_episodes
from formation_rl.train.pipeline import OBJECTIVES, SatisfactionThresholds, satisfaction_from_records

SWEEP_AXES = {"columns": "n_columns", "balls": "n_balls"}
REPORT_FIELDS = ["scenario", "n_columns", "n_balls", "n_episodes", "cfr", "fm", "sr", *OBJECTIVES]


def is_success(record: EpisodeRecord) -> bool:
    return bool(record.goal_reached) and not bool(np.any(record.collision))


def collision_free_rate(records: list[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("collision_free_rate needs at least one episode")
    return sum(is_success(r) for r in records) / len(records)


def formation_maintenance(records: list[EpisodeRecord]) -> float | None:
    """Mean unnormalized Laplacian distance over successful episodes; None without any."""
    per_episode = [float(np.mean(r.e_shape_unnormalized)) for r in records if is_success(r)]
    if not per_episode:
        return None
    return float(np.mean(per_episode))


@dataclass
class EvalReport:
    scenario: str
    n_columns: int
    n_balls: int
    n_episodes: int
    cfr: float
    fm: float | None
    sr: float
    flight: float
    formation: float
    obstacle: float
    action: float

    def row(self) -> dict:
        d = asdict(self)
        return {k: _fmt(d[k]) for k in REPORT_FIELDS}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def report_from_records(records, scenario: str, cfg: EnvConfig, thresholds=SatisfactionThresholds()) -> EvalReport:
    sat = satisfaction_from_records(records, thresholds)
    return EvalReport(
        scenario=scenario,
        n_columns=cfg.n_columns,
        n_balls=cfg.n_balls,
        n_episodes=len(records),
        cfr=collision_free_rate(records),
        fm=formation_maintenance(records),
        sr=sat["sr"],
        **{k: sat[k] for k in OBJECTIVES},
    )


def evaluate(policy, cfg: EnvConfig, n_episodes: int = 100, seed: int = 0, scenario: str = "eval",
             thresholds=SatisfactionThresholds(), reward_cfg=None, quad=None) -> EvalReport:
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    records = run_episodes(policy, cfg, episode_seeds(seed, n_episodes), reward_cfg, quad)
    return report_from_records(records, scenario, cfg, thresholds)


def sweep_eval(policy, base_cfg: EnvConfig, axis: str, values, n_episodes: int = 100, seed: int = 0,
               thresholds=SatisfactionThresholds(), reward_cfg=None, quad=None) -> list[EvalReport]:
    """One report per obstacle count; every row uses the same episode seeds."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in values:
        cfg = replace(base_cfg, **{SWEEP_AXES[axis]: int(v)})
        rows.append(evaluate(policy, cfg, n_episodes, seed, f"{axis}={v}", thresholds, reward_cfg, quad))
    return rows


def write_reports_csv(path, reports: list[EvalReport]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())


def write_reports_json(path, reports: list[EvalReport], extra: dict | None = None):
    """Plot-ready export: one object per row plus optional metadata."""
    payload = {"rows": [asdict(r) for r in reports], **(extra or {})}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
