"""Policies that map observations to CTBR commands.

``HoverPolicy`` and ``TrackingController`` are scripted baselines used for
sanity checks; ``LearnedActor`` wraps an :class:`AttentionPolicy`.
"""

from __future__ import annotations

import numpy as np

from formation_rl.dynamics import GRAVITY, QuadrotorParams
from formation_rl.env import START, EnvState, denormalize_action


class HoverPolicy:
    def __init__(self, quad: QuadrotorParams | None = None):
        self.quad = quad or QuadrotorParams()

    def __call__(self, obs, state: EnvState) -> np.ndarray:
        return np.tile([self.quad.hover_thrust, 0.0, 0.0, 0.0], (state.n, 1))


def _rotation_matrices(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
        ],
        axis=1,
    )


class TrackingController:
    """Geometric position controller flying each drone along its formation slot.

    Each slot moves at the target velocity from the start formation, so the
    swarm crosses the goal in formation.
    """

    def __init__(self, quad: QuadrotorParams | None = None, kp: float = 4.0, kd: float = 3.0, k_att: float = 8.0):
        self.quad = quad or QuadrotorParams()
        self.kp, self.kd, self.k_att = kp, kd, k_att

    def __call__(self, obs, state: EnvState) -> np.ndarray:
        v_target = np.asarray(state.config.v_target)
        ref = START + state.offsets + v_target * state.time
        acc = self.kp * (ref - state.pos) + self.kd * (v_target - state.vel)
        acc[:, 2] += GRAVITY
        rot = _rotation_matrices(state.quat)
        thrust = self.quad.mass * np.einsum("ni,ni->n", acc, rot[:, :, 2])

        z_d = acc / np.linalg.norm(acc, axis=1, keepdims=True)
        y_d = np.cross(z_d, np.array([1.0, 0.0, 0.0]))
        y_d /= np.linalg.norm(y_d, axis=1, keepdims=True)
        x_d = np.cross(y_d, z_d)
        rot_d = np.stack([x_d, y_d, z_d], axis=2)
        err = 0.5 * (np.einsum("nji,njk->nik", rot_d, rot) - np.einsum("nji,njk->nik", rot, rot_d))
        e_r = np.stack([err[:, 2, 1], err[:, 0, 2], err[:, 1, 0]], axis=1)

        cmd = np.empty((state.n, 4))
        cmd[:, 0] = np.clip(thrust, 0.0, 0.9 * self.quad.max_thrust)
        cmd[:, 1:] = np.clip(-self.k_att * e_r, -np.pi, np.pi)
        return cmd


class LearnedActor:
    """Adapter from an actor-critic to the environment's CTBR interface.

    Stochastic mode draws noise from one generator per episode id, so results
    do not depend on how episodes are batched.
    """

    def __init__(self, policy, quad: QuadrotorParams | None = None, deterministic: bool = True, seed: int = 0):
        self.policy = policy
        self.quad = quad or QuadrotorParams()
        self.deterministic = deterministic
        self.seed = seed
        self._rngs: dict[int, np.random.Generator] = {}

    def _rng(self, episode: int) -> np.random.Generator:
        if episode not in self._rngs:
            self._rngs[episode] = np.random.default_rng([self.seed, episode])
        return self._rngs[episode]

    def act_batch(self, obs: dict, states, episode_ids) -> np.ndarray:
        mean, _, _ = self.policy.act(obs, deterministic=True)
        if not self.deterministic:
            std = np.exp(self.policy.params["actor.log_std"].data)
            rows = []
            for k, (st, e) in enumerate(zip(states, episode_ids)):
                block = mean[k * st.n : (k + 1) * st.n]
                rows.append(block + std * self._rng(e).normal(size=block.shape))
            mean = np.concatenate(rows)
        return denormalize_action(mean, self.quad)

    def __call__(self, obs, state: EnvState) -> np.ndarray:
        return self.act_batch(obs, [state], [0])
