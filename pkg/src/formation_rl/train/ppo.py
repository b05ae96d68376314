"""MAPPO with shared parameters: GAE, clipped surrogate update, rollout collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from formation_rl.env import VecEnv, denormalize_action
from formation_rl.nn.autodiff import minimum
from formation_rl.nn.optim import Adam
from formation_rl.reward import WeightVector, scalarize


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 64
    rollout_len: int = 128

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if min(self.epochs, self.minibatches, self.n_envs, self.rollout_len) < 1:
            raise ValueError("epochs, minibatches, n_envs and rollout_len must be positive")


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Advantages and returns for arrays with time on axis 0.

    ``dones[t]`` marks that the episode ended after step ``t``; the value of
    the following state is then not bootstrapped.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape or bootstrap.shape != rewards.shape[1:]:
        raise ValueError("rewards, values, dones and bootstrap must align")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(bootstrap)
    next_value = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBuffer:
    """Fixed-capacity storage indexed [step, env * agent]."""

    obs: dict
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    reward_vectors: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray
    filled: int = 0

    @classmethod
    def allocate(cls, steps: int, n_rows: int, obs_example: dict, action_dim: int):
        obs = {k: np.zeros((steps,) + v.shape, dtype=np.float64) for k, v in obs_example.items()}
        return cls(
            obs=obs,
            actions=np.zeros((steps, n_rows, action_dim)),
            logp=np.zeros((steps, n_rows)),
            values=np.zeros((steps, n_rows)),
            reward_vectors=np.zeros((steps, n_rows, 4)),
            rewards=np.zeros((steps, n_rows)),
            dones=np.zeros((steps, n_rows)),
            bootstrap=np.zeros(n_rows),
        )

    @property
    def capacity(self) -> int:
        return self.actions.shape[0]

    def add(self, obs, actions, logp, values, reward_vectors, rewards, dones):
        t = self.filled
        if t >= self.capacity:
            raise IndexError("rollout buffer is full")
        for k in self.obs:
            self.obs[k][t] = obs[k]
        self.actions[t] = actions
        self.logp[t] = logp
        self.values[t] = values
        self.reward_vectors[t] = reward_vectors
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.filled += 1

    def flat(self) -> dict:
        def fl(a):
            return a.reshape((a.shape[0] * a.shape[1],) + a.shape[2:])

        return {
            "obs": {k: fl(v) for k, v in self.obs.items()},
            "actions": fl(self.actions),
            "logp": fl(self.logp),
            "values": fl(self.values),
        }


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(buffer: RolloutBuffer, policy, optimizer: Adam, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over a full buffer. Returns update statistics."""
    if buffer.filled != buffer.capacity:
        raise ValueError("rollout buffer must be full before an update")
    adv, returns = compute_gae(
        buffer.rewards, buffer.values, buffer.dones, buffer.bootstrap, cfg.gamma, cfg.gae_lambda
    )
    data = buffer.flat()
    adv = normalize_advantages(adv.reshape(-1))
    returns = returns.reshape(-1)
    n = len(adv)
    batch = max(1, n // cfg.minibatches)

    stats = {
        "adv_mean": float(adv.mean()),
        "adv_std": float(adv.std()),
        "policy_loss": 0.0,
        "value_loss": 0.0,
        "entropy": 0.0,
        "approx_kl": 0.0,
        "clip_frac": 0.0,
        "grad_norm": 0.0,
        "nan_rejected": 0,
    }
    ratio_dev = []
    count = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for mb in range(cfg.minibatches):
            idx = perm[mb * batch : (mb + 1) * batch] if mb < cfg.minibatches - 1 else perm[mb * batch :]
            if len(idx) == 0:
                continue
            obs = {k: v[idx] for k, v in data["obs"].items()}
            logp, entropy, value = policy.evaluate(obs, data["actions"][idx])
            ratio = (logp - data["logp"][idx]).exp()
            a = adv[idx]
            surrogate = minimum(ratio * a, ratio.clip(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a)
            policy_loss = -surrogate.mean()
            err = value - returns[idx]
            value_loss = (err * err).mean()
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if epoch == 0:
                ratio_dev.append(float(np.max(np.abs(ratio.data - 1.0))))
            if not np.isfinite(loss.data):
                stats["nan_rejected"] += 1
                continue
            optimizer.zero_grad()
            loss.backward()
            stats["grad_norm"] += optimizer.clip_grad_norm(cfg.max_grad_norm)
            optimizer.step()
            if hasattr(policy, "clamp"):
                policy.clamp()
            stats["policy_loss"] += float(policy_loss.data)
            stats["value_loss"] += float(value_loss.data)
            stats["entropy"] += float(entropy.data)
            log_ratio = logp.data - data["logp"][idx]
            stats["approx_kl"] += float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio))
            stats["clip_frac"] += float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip_eps))
            count += 1
    for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac", "grad_norm"):
        stats[key] /= max(count, 1)
    stats["ratio_start_dev"] = ratio_dev[0] if ratio_dev else 0.0
    return stats


class RolloutCollector:
    """Steps a VecEnv with the current policy and fills rollout buffers.

    Also tracks finished-episode statistics (mean velocity error, goal/collision counts).
    """

    def __init__(self, policy, vec: VecEnv, weights: WeightVector, rng: np.random.Generator):
        self.policy = policy
        self.vec = vec
        self.weights = weights
        self.rng = rng
        n = vec.n_agents
        self._ev_sum = np.zeros(vec.n_envs)
        self._len = np.zeros(vec.n_envs, dtype=int)
        self.finished: list[dict] = []
        self._n = n

    def collect(self, steps: int) -> RolloutBuffer:
        vec, n = self.vec, self._n
        obs = vec.observations()
        buf = RolloutBuffer.allocate(steps, vec.n_envs * n, obs, 4)
        for _ in range(steps):
            actions, logp, values = self.policy.act(obs, self.rng)
            ctbr = denormalize_action(actions, vec.quad)
            rvec, dones, infos = vec.step(ctbr)
            scalar = scalarize(rvec, self.weights)
            buf.add(obs, actions, logp, values, rvec.reshape(-1, 4), scalar.reshape(-1), np.repeat(dones, n))
            for e, info in enumerate(infos):
                self._ev_sum[e] += info["e_v"].mean()
                self._len[e] += 1
                if dones[e]:
                    self.finished.append(
                        {
                            "length": int(self._len[e]),
                            "mean_e_v": float(self._ev_sum[e] / self._len[e]),
                            "goal": bool(info["goal_reached"]),
                            "collided": bool(info["collided"]),
                        }
                    )
                    self._ev_sum[e] = 0.0
                    self._len[e] = 0
            obs = vec.observations()
        _, _, buf.bootstrap = self.policy.act(obs, self.rng, deterministic=True)
        return buf
