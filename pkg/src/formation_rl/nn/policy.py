"""Attention-based observation encoder with Gaussian actor and value critic.

Every observation group (self, other drones, static distance grid, balls)
is embedded by its own MLP + layer norm into ``d_embed``-wide tokens.
Self-attention runs over all tokens (with a residual connection), then the
self token queries the remaining tokens through cross-attention. The feature
fed to both heads is ``concat(self token, cross-attention output)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from formation_rl.env import BALL_DIM, DRONE_DIM, SELF_DIM, STATIC_DIM
from formation_rl.nn.autodiff import Tensor, concat, no_grad, parameter
from formation_rl.nn.layers import (
    init_attention,
    init_layer_norm,
    init_mlp,
    layer_norm,
    mlp_forward,
    multihead_attention,
)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
ACTION_DIM = 4
GROUPS = {"self": SELF_DIM, "drones": DRONE_DIM, "static": STATIC_DIM, "dynamic": BALL_DIM}


@dataclass(frozen=True)
class PolicyConfig:
    d_embed: int = 64
    heads: int = 4
    hidden: int = 128
    log_std_init: float = -0.7


def gaussian_log_prob(x, mean, log_std):
    """Diagonal Gaussian log density summed over the last axis.

    Accepts Tensors (differentiable) or plain arrays.
    """
    if isinstance(mean, Tensor):
        z = (Tensor._lift(x) - mean) / log_std.exp()
        return (z * z * -0.5 - log_std).sum(axis=-1) - 0.5 * mean.shape[-1] * np.log(2 * np.pi)
    z = (x - mean) / np.exp(log_std)
    return (-0.5 * z * z - log_std).sum(axis=-1) - 0.5 * mean.shape[-1] * np.log(2 * np.pi)


class AttentionPolicy:
    """Parameter-shared actor-critic; ``params`` maps names to leaf tensors."""

    def __init__(self, config: PolicyConfig = PolicyConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d, hid = config.d_embed, config.hidden
        p: dict[str, Tensor] = {}
        for group, width in GROUPS.items():
            init_mlp(p, f"embed.{group}", rng, [width, hid, d])
            init_layer_norm(p, f"norm.{group}", d)
        init_attention(p, "self_attn", rng, d)
        init_attention(p, "cross_attn", rng, d)
        init_mlp(p, "actor", rng, [2 * d, hid, hid, ACTION_DIM], out_gain=0.01)
        p["actor.log_std"] = parameter(np.full(ACTION_DIM, config.log_std_init), "actor.log_std")
        init_mlp(p, "critic", rng, [2 * d, hid, hid, 1], out_gain=1.0)
        self.params = p

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def _embed(self, x, group: str) -> Tensor:
        return layer_norm(mlp_forward(Tensor(x), self.params, f"embed.{group}"), self.params, f"norm.{group}")

    def encode(self, obs: dict) -> Tensor:
        """Feature of width ``2 * d_embed`` per observation row."""
        b = obs["self"].shape[0]
        n_other = obs["drones"].shape[1]
        n_ball = obs["dynamic"].shape[1]
        d = self.config.d_embed
        tokens = [self._embed(obs["self"], "self").reshape(b, 1, d)]
        if n_other:
            tokens.append(self._embed(obs["drones"], "drones"))
        tokens.append(self._embed(obs["static"], "static").reshape(b, 1, d))
        if n_ball:
            tokens.append(self._embed(obs["dynamic"], "dynamic"))
        tokens = concat(tokens, axis=1)
        mask = np.concatenate([np.ones((b, 2 + n_other)), obs["mask"].reshape(b, n_ball)], axis=1) > 0

        h = tokens + multihead_attention(tokens, tokens, mask, self.params, "self_attn", self.config.heads)
        self_feat = h[:, 0:1, :]
        cross = multihead_attention(self_feat, h[:, 1:, :], mask[:, 1:], self.params, "cross_attn", self.config.heads)
        return concat([self_feat, cross], axis=-1).reshape(b, 2 * d)

    def actor_forward(self, f: Tensor) -> tuple[Tensor, Tensor]:
        return mlp_forward(f, self.params, "actor"), self.params["actor.log_std"]

    def critic_forward(self, f: Tensor) -> Tensor:
        v = mlp_forward(f, self.params, "critic")
        return v.reshape(v.shape[0])

    def evaluate(self, obs: dict, actions: np.ndarray):
        """Log-prob of pre-clip ``actions``, per-sample entropy, and value."""
        f = self.encode(obs)
        mean, log_std = self.actor_forward(f)
        logp = gaussian_log_prob(Tensor(actions), mean, log_std)
        entropy = (log_std + 0.5 * (1.0 + np.log(2 * np.pi))).sum()
        return logp, entropy, self.critic_forward(f)

    def act(self, obs: dict, rng: np.random.Generator | None = None, deterministic: bool = False):
        """Sample normalized actions (pre-clip), their log-probs, and values."""
        with no_grad():
            f = self.encode(obs)
            mean, log_std = self.actor_forward(f)
            value = self.critic_forward(f).data
        mean, log_std = mean.data, log_std.data
        if deterministic:
            actions = mean.copy()
        else:
            actions = mean + np.exp(log_std) * rng.normal(size=mean.shape)
        logp = gaussian_log_prob(actions, mean, log_std)
        return actions, logp, value

    def clamp(self):
        ls = self.params["actor.log_std"]
        np.clip(ls.data, LOG_STD_MIN, LOG_STD_MAX, out=ls.data)
