"""Two-stage pipeline: random reward-weight search, then curriculum training.

Training proceeds in chunks of updates. Each chunk starts from fresh
environments and a fresh sampling generator, both seeded from
``(seed, period, chunk)``, so a run resumed from a chunk-boundary
checkpoint replays the uninterrupted run exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from formation_rl.dynamics import QuadrotorParams
from formation_rl.env import EnvConfig, VecEnv, episode_seeds, run_episodes
from formation_rl.nn.optim import Adam
from formation_rl.nn.policy import AttentionPolicy, PolicyConfig
from formation_rl.policies import LearnedActor
from formation_rl.reward import RewardConfig, WeightVector
from formation_rl.train.ppo import PpoConfig, RolloutCollector, ppo_update

OBJECTIVES = ("flight", "formation", "obstacle", "action")


@dataclass(frozen=True)
class SatisfactionThresholds:
    max_mean_e_v: float = 0.3
    max_mean_e_shape: float = 0.05
    max_mean_size_error: float = 0.25
    max_mean_e_net: float = 0.2


@dataclass(frozen=True)
class CurriculumPeriod:
    n_columns: int
    n_balls: int
    steps: int

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("curriculum budgets must be positive")


@dataclass(frozen=True)
class CurriculumSchedule:
    periods: tuple[CurriculumPeriod, ...] = (
        CurriculumPeriod(0, 0, 200_000),
        CurriculumPeriod(10, 0, 1_000_000),
        CurriculumPeriod(10, 2, 1_000_000),
    )


@dataclass(frozen=True)
class WeightSearchConfig:
    n_trials: int = 8
    trial_steps: int = 300_000
    eval_episodes: int = 100
    n_drones: int = 3
    n_columns: int = 0
    n_balls: int = 3
    thresholds: SatisfactionThresholds = field(default_factory=SatisfactionThresholds)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.trial_steps < 1 or self.eval_episodes < 1:
            raise ValueError("trial_steps and eval_episodes must be positive")


def episode_satisfaction(record, th: SatisfactionThresholds) -> dict[str, bool]:
    e_v = float(record.e_v.mean())
    return {
        "flight": bool(record.goal_reached) and e_v <= th.max_mean_e_v,
        "formation": float(record.e_shape.mean()) <= th.max_mean_e_shape
        and float(record.size_error.mean()) <= th.max_mean_size_error,
        "obstacle": not record.collided,
        "action": float(record.e_net.mean()) <= th.max_mean_e_net,
    }


def satisfaction_from_records(records, th: SatisfactionThresholds) -> dict:
    if not records:
        raise ValueError("need at least one episode")
    flags = [episode_satisfaction(r, th) for r in records]
    out = {"sr": float(np.mean([all(f.values()) for f in flags]))}
    for obj in OBJECTIVES:
        out[obj] = float(np.mean([f[obj] for f in flags]))
    out["n_episodes"] = len(records)
    return out


def evaluate_satisfaction(
    policy, env_cfg: EnvConfig, thresholds: SatisfactionThresholds, n_episodes: int, seed: int = 0,
    reward_cfg=None, quad=None,
) -> dict:
    """SR and per-objective rates of a policy (deterministic actions) over ``n_episodes``."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    actor = policy if callable(policy) or hasattr(policy, "act_batch") else LearnedActor(policy, quad)
    records = run_episodes(actor, env_cfg, episode_seeds(seed, n_episodes), reward_cfg, quad)
    return satisfaction_from_records(records, thresholds)


def sample_weights(rng: np.random.Generator) -> WeightVector:
    """Uniform point on the 4-simplex (symmetric Dirichlet, unit concentration)."""
    w = rng.dirichlet(np.ones(4))
    w = w / w.sum()
    return WeightVector.from_array(w)


class Trainer:
    """Runs PPO updates for one policy and accumulates a metrics log."""

    def __init__(
        self,
        policy: AttentionPolicy,
        weights: WeightVector,
        ppo: PpoConfig,
        seed: int,
        reward_cfg: RewardConfig | None = None,
        quad: QuadrotorParams | None = None,
        optimizer: Adam | None = None,
    ):
        self.policy = policy
        self.weights = weights
        self.ppo = ppo
        self.seed = seed
        self.reward_cfg = reward_cfg or RewardConfig()
        self.quad = quad or QuadrotorParams()
        self.optimizer = optimizer or Adam(policy.parameters(), lr=ppo.lr)
        self.metrics: list[dict] = []

    def steps_per_update(self) -> int:
        return self.ppo.n_envs * self.ppo.rollout_len

    def n_updates(self, budget: int) -> int:
        return max(1, math.ceil(budget / self.steps_per_update()))

    def run_chunk(self, env_cfg: EnvConfig, period: int, chunk: int, first_update: int, n_updates: int, on_update=None):
        """Train ``n_updates`` updates on fresh environments seeded by (seed, period, chunk)."""
        seq = np.random.SeedSequence([self.seed, period, chunk])
        env_seed, sample_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
        vec = VecEnv(env_cfg, self.ppo.n_envs, env_seed, self.reward_cfg, self.quad)
        rng = np.random.default_rng(sample_seed)
        collector = RolloutCollector(self.policy, vec, self.weights, rng)
        for u in range(n_updates):
            buf = collector.collect(self.ppo.rollout_len)
            stats = ppo_update(buf, self.policy, self.optimizer, self.ppo, rng)
            update = first_update + u
            finished = collector.finished
            collector.finished = []
            record = {
                "event": "update",
                "period": period,
                "update": update,
                "env_steps": (update + 1) * self.steps_per_update(),
                "mean_reward": float(buf.rewards.mean()),
                **{f"r_{name}": float(buf.reward_vectors[..., i].mean()) for i, name in enumerate(
                    ("formation", "flight", "obstacle", "action"))},
                "episodes": len(finished),
                "episode_mean_e_v": float(np.mean([f["mean_e_v"] for f in finished])) if finished else None,
                "episode_collision_rate": float(np.mean([f["collided"] for f in finished])) if finished else None,
                **stats,
            }
            self.metrics.append(record)
            if on_update is not None:
                on_update(record)

    def train(self, env_cfg: EnvConfig, budget: int, period: int = 0, checkpoint_every: int = 0,
              start_update: int = 0, on_update=None, on_chunk_end=None):
        """Train for ``budget`` environment steps; chunks of ``checkpoint_every`` updates.

        ``start_update`` skips already-completed updates (resume). ``on_chunk_end``
        receives the index of the next update after each chunk.
        """
        total = self.n_updates(budget)
        chunk_len = checkpoint_every if checkpoint_every > 0 else total
        for chunk, first in enumerate(range(0, total, chunk_len)):
            count = min(chunk_len, total - first)
            if first + count <= start_update:
                continue
            if first < start_update:
                raise ValueError("resume point must lie on a chunk boundary")
            self.run_chunk(env_cfg, period, chunk, first, count, on_update)
            if on_chunk_end is not None:
                on_chunk_end(first + count)


def run_trial(
    weights: WeightVector,
    search: WeightSearchConfig,
    ppo: PpoConfig,
    policy_cfg: PolicyConfig,
    seed: int,
    reward_cfg: RewardConfig | None = None,
    quad: QuadrotorParams | None = None,
    base_env: EnvConfig | None = None,
):
    """Train one policy with fixed weights in the simplified scenario and measure SR."""
    env_cfg = replace(
        base_env or EnvConfig(), n_drones=search.n_drones, n_columns=search.n_columns, n_balls=search.n_balls
    )
    policy = AttentionPolicy(policy_cfg, seed=seed)
    trainer = Trainer(policy, weights, ppo, seed, reward_cfg, quad)
    trainer.train(env_cfg, search.trial_steps)
    sat = evaluate_satisfaction(
        LearnedActor(policy, quad), env_cfg, search.thresholds, search.eval_episodes, seed, reward_cfg, quad
    )
    return sat, policy, trainer


def train_stage1(
    search: WeightSearchConfig,
    ppo: PpoConfig,
    seed: int,
    policy_cfg: PolicyConfig = PolicyConfig(),
    reward_cfg: RewardConfig | None = None,
    quad: QuadrotorParams | None = None,
    base_env: EnvConfig | None = None,
) -> list[dict]:
    """Random weight search; results sorted by SR (descending, ties by trial id)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    results = []
    for trial in range(search.n_trials):
        w = sample_weights(rng)
        trial_seed = int(np.random.SeedSequence([seed, 2, trial]).generate_state(1)[0])
        sat, policy, _ = run_trial(w, search, ppo, policy_cfg, trial_seed, reward_cfg, quad, base_env)
        results.append({"trial": trial, "weights": w, "satisfaction": sat, "policy": policy, "seed": trial_seed})
    results.sort(key=lambda r: (-r["satisfaction"]["sr"], r["trial"]))
    return results


def train_stage2(
    weights: WeightVector,
    schedule: CurriculumSchedule,
    ppo: PpoConfig,
    policy: AttentionPolicy,
    seed: int,
    base_env: EnvConfig | None = None,
    reward_cfg: RewardConfig | None = None,
    quad: QuadrotorParams | None = None,
    eval_episodes: int = 10,
    thresholds: SatisfactionThresholds = SatisfactionThresholds(),
    trainer: Trainer | None = None,
    checkpoint_every: int = 0,
    on_update=None,
    on_chunk_end=None,
    on_period_end=None,
    start: tuple[int, int] = (0, 0),
) -> tuple[Trainer, list[dict]]:
    """Curriculum training; parameters carry across periods in order.

    ``start = (period, update)`` resumes mid-schedule. Returns the trainer and
    one evaluation summary per completed period.
    """
    base_env = base_env or EnvConfig()
    trainer = trainer or Trainer(policy, weights, ppo, seed, reward_cfg, quad)
    evals = []
    for period, spec in enumerate(schedule.periods):
        if period < start[0]:
            continue
        env_cfg = replace(base_env, n_columns=spec.n_columns, n_balls=spec.n_balls)
        trainer.train(
            env_cfg,
            spec.steps,
            period=period,
            checkpoint_every=checkpoint_every,
            start_update=start[1] if period == start[0] else 0,
            on_update=on_update,
            on_chunk_end=(lambda nxt, p=period: on_chunk_end(p, nxt)) if on_chunk_end else None,
        )
        summary = {"period": period, "n_columns": spec.n_columns, "n_balls": spec.n_balls}
        if eval_episodes > 0:
            summary.update(
                evaluate_satisfaction(
                    LearnedActor(policy, quad), env_cfg, thresholds, eval_episodes, seed, reward_cfg, quad
                )
            )
        evals.append(summary)
        if on_period_end is not None:
            on_period_end(period, summary)
    return trainer, evals
