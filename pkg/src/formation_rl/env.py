"""Multi-drone formation flight environment.

State is kept in plain arrays with a leading drone axis. ``reset`` and
``step`` work on one :class:`EnvState`; :class:`VecEnv` drives many of them
for rollout collection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from formation_rl import kernels, reward
from formation_rl.dynamics import (
    CONTROL_DT,
    PHYSICS_DT,
    SUBSTEPS,
    CtbrCommand,
    QuadrotorParams,
    body_axes,
    clip_ctbr,
    yaw_quaternion,
)
from formation_rl.world import (
    SENSE_CAP,
    Ball,
    CollisionReport,
    GridSpec,
    World,
    check_collisions,
    generate_columns,
    spawn_ball,
)

START = np.array([0.0, 0.0, 1.0])
HEADING_TARGET = np.array([1.0, 0.0, 0.0])
SELF_DIM = 25
DRONE_DIM = 7
STATIC_DIM = 9
BALL_DIM = 10
# 3x3 sensing grid around the drone, index = 3 * ix + iy
GRID_OFFSETS = np.array([(dx, dy, 0.0) for dx in (-0.5, 0.0, 0.5) for dy in (-0.5, 0.0, 0.5)])
TRAJECTORY_COLUMNS = [
    "t", "drone_id", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
    "c", "wr", "wp", "wy", "r_formation", "r_flight", "r_obstacle", "r_action", "collision_flag",
]  # fmt: skip


def default_formation(n: int, side: float = 1.0) -> np.ndarray:
    """Regular polygon offsets (centroid at zero) with the given side length."""
    if n == 1:
        return np.zeros((1, 3))
    if n == 2:
        return np.array([[0.0, side / 2, 0.0], [0.0, -side / 2, 0.0]])
    radius = side / (2.0 * np.sin(np.pi / n))
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n)], axis=1)


def identity_code(agent: int) -> np.ndarray:
    """One-hot for the first three agents, then the remaining 3-bit patterns."""
    codes = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)]
    if agent >= len(codes):
        raise ValueError("identifier encoding supports at most 7 drones")
    return np.array(codes[agent], dtype=np.float64)


@dataclass(frozen=True)
class EnvConfig:
    n_drones: int = 3
    n_columns: int = 0
    n_balls: int = 0
    v_target: tuple[float, float, float] = (1.0, 0.0, 0.0)
    formation_target: tuple[tuple[float, float, float], ...] | None = None
    episode_len: int = 750
    position_jitter: float = 0.05
    yaw_jitter: float = 0.1 * np.pi
    clip_actions: bool = False
    goal_x: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.n_drones < 1:
            raise ValueError("n_drones must be at least 1")
        if self.episode_len <= 0:
            raise ValueError("episode_len must be positive")
        if self.n_columns < 0 or self.n_balls < 0:
            raise ValueError("obstacle counts must be nonnegative")
        if self.position_jitter < 0 or self.yaw_jitter < 0:
            raise ValueError("jitter magnitudes must be nonnegative")
        if self.formation_target is not None and len(self.formation_target) != self.n_drones:
            raise ValueError("formation_target needs one offset per drone")

    def target_offsets(self) -> np.ndarray:
        if self.formation_target is None:
            return default_formation(self.n_drones)
        offsets = np.array(self.formation_target, dtype=np.float64).reshape(self.n_drones, 3)
        return offsets - offsets.mean(axis=0)


@dataclass
class Observation:
    self_obs: np.ndarray
    drones_obs: np.ndarray
    static_obs: np.ndarray
    dynamic_obs: np.ndarray
    dynamic_mask: np.ndarray

    def flat(self) -> np.ndarray:
        """Concatenation with only the visible ball slots."""
        balls = self.dynamic_obs[self.dynamic_mask.astype(bool)]
        return np.concatenate([self.self_obs, self.drones_obs.ravel(), self.static_obs, balls.ravel()])


@dataclass
class EnvState:
    config: EnvConfig
    reward_cfg: reward.RewardConfig
    quad: QuadrotorParams
    prm: np.ndarray
    offsets: np.ndarray
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    world: World
    rng: np.random.Generator
    step_count: int = 0
    slots: list = field(default_factory=list)
    respawn_step: list = field(default_factory=list)
    ball_log: list = field(default_factory=list)
    prev_action: np.ndarray | None = None
    prev_throttles: np.ndarray | None = None
    done: bool = False

    @property
    def time(self) -> float:
        return self.step_count * CONTROL_DT

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    def reference(self) -> np.ndarray:
        return START + np.asarray(self.config.v_target) * self.time


@dataclass
class StepResult:
    observations: dict
    reward_vectors: np.ndarray
    done: bool
    info: dict


def normalize_action(ctbr: np.ndarray, quad: QuadrotorParams) -> np.ndarray:
    """CTBR in physical units -> policy scale [-1, 1]^4."""
    out = np.empty_like(ctbr, dtype=np.float64)
    out[..., 0] = 2.0 * ctbr[..., 0] / (0.9 * quad.max_thrust) - 1.0
    out[..., 1:] = ctbr[..., 1:] / np.pi
    return out


def denormalize_action(a: np.ndarray, quad: QuadrotorParams) -> np.ndarray:
    """Policy scale -> CTBR; inputs are clipped to [-1, 1] first."""
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    out = np.empty_like(a)
    out[..., 0] = (a[..., 0] + 1.0) * 0.45 * quad.max_thrust
    out[..., 1:] = a[..., 1:] * np.pi
    return out


def _sample_in_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.uniform(size=(n, 1)) ** (1.0 / 3.0))


def _cooldown_steps(rng: np.random.Generator) -> int:
    return int(round(rng.uniform(1.0, 2.0) / CONTROL_DT))


def reset(
    config: EnvConfig,
    reward_cfg: reward.RewardConfig | None = None,
    quad: QuadrotorParams | None = None,
    seed: int | None = None,
) -> tuple[EnvState, dict]:
    reward_cfg = reward_cfg or reward.RewardConfig()
    quad = quad or QuadrotorParams()
    seed = config.seed if seed is None else seed
    layout_seq, jitter_seq, ball_seq = np.random.SeedSequence(seed).spawn(3)
    offsets = config.target_offsets()
    n = config.n_drones

    jitter_rng = np.random.default_rng(jitter_seq)
    for _ in range(10):
        pos = START + offsets + _sample_in_ball(jitter_rng, n, config.position_jitter)
        if n == 1:
            break
        dist = np.linalg.norm(pos[:, None] - pos[None], axis=2)
        if dist[np.triu_indices(n, 1)].min() >= 0.2:
            break
    else:
        raise ValueError("formation overlaps after 10 jitter resamples")
    yaws = jitter_rng.uniform(-config.yaw_jitter, config.yaw_jitter, size=n)
    quat = np.stack([yaw_quaternion(y) for y in yaws])

    world = World(
        columns=generate_columns(GridSpec(), config.n_columns, np.random.default_rng(layout_seq)),
        goal_x=config.goal_x,
        formation_target=offsets,
    )
    ball_rng = np.random.default_rng(ball_seq)
    hover = np.full((n, 4), quad.hover_thrust / quad.max_thrust)
    hover_cmd = np.tile([quad.hover_thrust, 0.0, 0.0, 0.0], (n, 1))
    state = EnvState(
        config=config,
        reward_cfg=reward_cfg,
        quad=quad,
        prm=quad.as_array(),
        offsets=offsets,
        pos=np.ascontiguousarray(pos),
        quat=np.ascontiguousarray(quat),
        vel=np.zeros((n, 3)),
        omega=np.zeros((n, 3)),
        world=world,
        rng=ball_rng,
        slots=[None] * config.n_balls,
        respawn_step=[_cooldown_steps(ball_rng) for _ in range(config.n_balls)],
        prev_action=normalize_action(hover_cmd, quad),
        prev_throttles=hover,
    )
    return state, build_observations(state)


def _visible_balls(state: EnvState, agent: int):
    """Active balls within sensing range of one drone, nearest first."""
    t = state.time
    rows = []
    for ball in state.world.balls:
        bp = ball.position(t)
        rel = bp - state.pos[agent]
        dist = float(np.linalg.norm(rel))
        if dist <= SENSE_CAP:
            bv = ball.velocity(t)
            rows.append(np.concatenate([[dist], rel, bv - state.vel[agent], bv]))
    # lexicographic order makes the result independent of ball list order
    rows.sort(key=lambda r: tuple(r))
    return rows


def build_observations(state: EnvState) -> dict:
    """Batched observations for every drone: arrays with a leading drone axis."""
    n = state.n
    k = state.config.n_balls
    h, u = body_axes(state.quat)
    v_rel = np.asarray(state.config.v_target) - state.vel
    ids = np.stack([identity_code(i) for i in range(n)])
    self_obs = np.concatenate([state.pos, state.quat, state.vel, state.omega, h, u, v_rel, ids], axis=1)

    drones = np.zeros((n, n - 1, DRONE_DIM))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        rel_p = state.pos[others] - state.pos[i]
        drones[i, :, 0] = np.linalg.norm(rel_p, axis=1)
        drones[i, :, 1:4] = rel_p
        drones[i, :, 4:7] = state.vel[others] - state.vel[i]

    centers, radii = state.world.column_arrays()
    points = (state.pos[:, None, :] + GRID_OFFSETS[None]).reshape(-1, 3)
    static = kernels.static_distance_batch(np.ascontiguousarray(points), centers, radii, SENSE_CAP).reshape(n, 9)

    dynamic = np.zeros((n, k, BALL_DIM))
    mask = np.zeros((n, k))
    if k:
        for i in range(n):
            rows = _visible_balls(state, i)[:k]
            for s, row in enumerate(rows):
                dynamic[i, s] = row
                mask[i, s] = 1.0
    return {"self": self_obs, "drones": drones, "static": static, "dynamic": dynamic, "mask": mask}


def build_observation(agent: int, state: EnvState) -> Observation:
    if not 0 <= agent < state.n:
        raise ValueError("agent index out of range")
    obs = build_observations(state)
    return Observation(
        obs["self"][agent], obs["drones"][agent], obs["static"][agent], obs["dynamic"][agent], obs["mask"][agent]
    )


def _advance_balls(state: EnvState):
    k = state.step_count
    t = state.time
    for s, ball in enumerate(state.slots):
        if ball is not None and ball.position(t)[2] <= ball.radius:
            state.ball_log[ball_index(state, ball)]["despawn_step"] = k
            state.slots[s] = None
            state.respawn_step[s] = k + _cooldown_steps(state.rng)
        if state.slots[s] is None and k >= state.respawn_step[s]:
            new = spawn_ball(state.world, state.pos, t, state.rng)
            state.slots[s] = new
            state.ball_log.append({"ball": new, "spawn_step": k, "despawn_step": None})
    state.world.balls = [b for b in state.slots if b is not None]


def ball_index(state: EnvState, ball: Ball) -> int:
    for i, entry in enumerate(state.ball_log):
        if entry["ball"] is ball:
            return i
    raise KeyError("ball not in log")


def obstacle_distances(state: EnvState) -> np.ndarray:
    """Surface distance to the closest sensed obstacle per drone; NaN if none in range."""
    centers, radii = state.world.column_arrays()
    static = kernels.static_distance_batch(state.pos, centers, radii, SENSE_CAP)
    d = np.where(static < SENSE_CAP, static, np.nan)
    t = state.time
    for ball in state.world.balls:
        center = np.linalg.norm(state.pos - ball.position(t), axis=1)
        surface = np.maximum(center - ball.radius, 0.0)
        seen = center <= SENSE_CAP
        d = np.where(seen, np.fmin(d, surface), d)
    return d


def step(state: EnvState, actions) -> StepResult:
    """Advance all drones by one control tick and score the transition."""
    if state.done:
        raise RuntimeError("episode finished; call reset")
    cfg = state.config
    if isinstance(actions, (list, tuple)) and actions and isinstance(actions[0], CtbrCommand):
        actions = np.stack([a.as_array() for a in actions])
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (state.n, 4):
        raise ValueError(f"expected actions of shape ({state.n}, 4), got {actions.shape}")
    cmd = clip_ctbr(actions, state.quad, narrow=False)
    if cfg.clip_actions:
        cmd = clip_ctbr(cmd, state.quad, narrow=True)
    cmd = np.ascontiguousarray(cmd)

    throttles = np.zeros((state.n, 4))
    kernels.control_step_batch(
        state.pos, state.quat, state.vel, state.omega, cmd, state.prm, SUBSTEPS, PHYSICS_DT, throttles
    )
    state.step_count += 1
    _advance_balls(state)

    rcfg = state.reward_cfg
    collisions = check_collisions(state.pos, state.world, state.time)
    a_norm = normalize_action(cmd, state.quad)
    h, _ = body_axes(state.quat)
    centroid = state.pos.mean(axis=0)
    p_ref = state.reference()
    v_target = np.asarray(cfg.v_target)

    rewards = np.zeros((state.n, 4))
    e_shape = e_shape_raw = size_err = 0.0
    if state.n >= 2:
        ferr = reward.formation_errors(state.pos, state.offsets, rcfg)
        e_shape = ferr["e_shape"]
        size_err = abs(ferr["size"] - rcfg.size_target)
        e_shape_raw = reward.laplacian_distance(state.pos, state.offsets, normalized=False)
        rewards[:, 0] = reward.formation_reward(state.pos, state.offsets, rcfg)
    rewards[:, 1] = reward.flight_reward(state.pos, state.vel, h, centroid, p_ref, START[2], v_target, HEADING_TARGET, rcfg)
    rewards[:, 2] = reward.obstacle_reward(obstacle_distances(state), rcfg)
    rewards[:, 3] = reward.action_reward(a_norm, state.prev_action, throttles, state.prev_throttles, rcfg)

    e_net = np.linalg.norm(a_norm - state.prev_action, axis=1) / 2.0
    state.prev_action = a_norm
    state.prev_throttles = throttles

    collided = bool(collisions.any.any())
    goal = bool(np.all(state.pos[:, 0] > cfg.goal_x))
    timeout = state.step_count >= cfg.episode_len
    state.done = collided or goal or timeout
    info = {
        "collisions": collisions,
        "collided": collided,
        "goal_reached": goal,
        "timeout": timeout,
        "e_v": np.linalg.norm(v_target - state.vel, axis=1),
        "e_shape": e_shape,
        "e_shape_unnormalized": e_shape_raw,
        "size_error": size_err,
        "e_net": e_net,
        "throttles": throttles,
        "ctbr": cmd,
    }
    return StepResult(build_observations(state), rewards, state.done, info)


@dataclass
class EpisodeRecord:
    times: np.ndarray
    positions: np.ndarray
    quats: np.ndarray
    velocities: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    collision: np.ndarray
    e_v: np.ndarray
    e_shape: np.ndarray
    e_shape_unnormalized: np.ndarray
    size_error: np.ndarray
    e_net: np.ndarray
    goal_reached: bool
    collided: bool
    world: World
    ball_log: list
    offsets: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for k in range(self.n_steps):
                for i in range(self.positions.shape[1]):
                    values = [
                        *self.positions[k, i], *self.quats[k, i], *self.velocities[k, i],
                        *self.actions[k, i], *self.rewards[k, i],
                    ]  # fmt: skip
                    writer.writerow([repr(float(self.times[k])), i, *(repr(float(v)) for v in values),
                                     int(self.collision[k, i])])

    def layout_dict(self) -> dict:
        """World layout plus every ball thrown during the episode."""
        out = self.world.layout_dict()
        out["formation_target"] = [[float(x) for x in row] for row in self.offsets]
        out["control_dt"] = CONTROL_DT
        out["balls"] = [
            {
                "spawn_pos": [float(x) for x in e["ball"].spawn_pos],
                "spawn_vel": [float(x) for x in e["ball"].spawn_vel],
                "spawn_time": float(e["ball"].spawn_time),
                "radius": float(e["ball"].radius),
                "spawn_step": e["spawn_step"],
                "despawn_step": e["despawn_step"],
            }
            for e in self.ball_log
        ]
        return out

    def balls_at(self, step: int) -> list[Ball]:
        return [
            e["ball"]
            for e in self.ball_log
            if e["spawn_step"] <= step and (e["despawn_step"] is None or e["despawn_step"] > step)
        ]


class EpisodeRecorder:
    """Accumulates per-step logs of one episode and freezes them into an EpisodeRecord."""

    def __init__(self):
        self.log = {k: [] for k in ("t", "p", "q", "v", "a", "r", "col", "ev", "es", "esu", "size", "enet")}
        self.last_info = None

    def add(self, state: EnvState, res: StepResult):
        info = res.info
        log = self.log
        log["t"].append(state.time)
        log["p"].append(state.pos.copy())
        log["q"].append(state.quat.copy())
        log["v"].append(state.vel.copy())
        log["a"].append(info["ctbr"])
        log["r"].append(res.reward_vectors)
        log["col"].append(info["collisions"].any)
        log["ev"].append(info["e_v"])
        log["es"].append(info["e_shape"])
        log["esu"].append(info["e_shape_unnormalized"])
        log["size"].append(info["size_error"])
        log["enet"].append(info["e_net"])
        self.last_info = info

    def finish(self, state: EnvState) -> EpisodeRecord:
        log = self.log
        return EpisodeRecord(
            times=np.array(log["t"]),
            positions=np.array(log["p"]),
            quats=np.array(log["q"]),
            velocities=np.array(log["v"]),
            actions=np.array(log["a"]),
            rewards=np.array(log["r"]),
            collision=np.array(log["col"]),
            e_v=np.array(log["ev"]),
            e_shape=np.array(log["es"]),
            e_shape_unnormalized=np.array(log["esu"]),
            size_error=np.array(log["size"]),
            e_net=np.array(log["enet"]),
            goal_reached=self.last_info["goal_reached"],
            collided=self.last_info["collided"],
            world=state.world,
            ball_log=state.ball_log,
            offsets=state.offsets,
        )


def run_episode(policy, config: EnvConfig, reward_cfg=None, quad=None, seed=None) -> EpisodeRecord:
    """Roll out ``policy(obs, state) -> CTBR array`` until the episode ends."""
    state, obs = reset(config, reward_cfg, quad, seed)
    recorder = EpisodeRecorder()
    while True:
        res = step(state, policy(obs, state))
        recorder.add(state, res)
        obs = res.observations
        if res.done:
            return recorder.finish(state)


def episode_seeds(base_seed: int, n: int) -> list[int]:
    """Deterministic per-episode seeds; episode i's seed does not depend on n."""
    return [int(np.random.SeedSequence([base_seed, i]).generate_state(1, np.uint64)[0] >> 1) for i in range(n)]


def run_episodes(policy, config: EnvConfig, seeds, reward_cfg=None, quad=None) -> list[EpisodeRecord]:
    """Run one episode per seed in lockstep.

    ``policy`` may provide ``act_batch(obs, states, episode_ids)`` for a single
    batched forward pass over all live episodes; otherwise it is called per state.
    """
    seeds = list(seeds)
    states, obs = [], []
    for s in seeds:
        st, ob = reset(config, reward_cfg, quad, seed=s)
        states.append(st)
        obs.append(ob)
    recorders = [EpisodeRecorder() for _ in seeds]
    records: list[EpisodeRecord | None] = [None] * len(seeds)
    live = list(range(len(seeds)))
    n = config.n_drones
    while live:
        if hasattr(policy, "act_batch"):
            actions = policy.act_batch(stack_observations([obs[i] for i in live]), [states[i] for i in live], live)
            per_env = {i: actions[k * n : (k + 1) * n] for k, i in enumerate(live)}
        else:
            per_env = {i: policy(obs[i], states[i]) for i in live}
        still = []
        for i in live:
            res = step(states[i], per_env[i])
            recorders[i].add(states[i], res)
            obs[i] = res.observations
            if res.done:
                records[i] = recorders[i].finish(states[i])
            else:
                still.append(i)
        live = still
    return records


def stack_observations(obs_list: list[dict]) -> dict:
    return {key: np.concatenate([o[key] for o in obs_list], axis=0) for key in obs_list[0]}


class VecEnv:
    """Independent environments stepped in lockstep, reset automatically when done.

    Each environment draws its episode seeds from its own child seed sequence,
    so the stream of episodes is a pure function of ``seed``.
    """

    def __init__(self, config: EnvConfig, n_envs: int, seed: int, reward_cfg=None, quad=None):
        self.config = config
        self.n_envs = n_envs
        self.reward_cfg = reward_cfg or reward.RewardConfig()
        self.quad = quad or QuadrotorParams()
        self._seeders = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_envs)]
        self.states: list[EnvState] = []
        self._obs: list[dict] = []
        for e in range(n_envs):
            st, ob = self._fresh(e)
            self.states.append(st)
            self._obs.append(ob)

    def _fresh(self, e: int):
        episode_seed = int(self._seeders[e].integers(2**63 - 1))
        return reset(self.config, self.reward_cfg, self.quad, seed=episode_seed)

    @property
    def n_agents(self) -> int:
        return self.config.n_drones

    def observations(self) -> dict:
        return stack_observations(self._obs)

    def step(self, actions: np.ndarray):
        """``actions``: CTBR array of shape (n_envs * n_drones, 4).

        Returns (rewards [E, N, 4], dones [E], infos list). Finished
        environments are reset and their new first observation is served.
        """
        n = self.n_agents
        rewards = np.zeros((self.n_envs, n, 4))
        dones = np.zeros(self.n_envs, dtype=bool)
        infos = []
        for e in range(self.n_envs):
            res = step(self.states[e], actions[e * n : (e + 1) * n])
            rewards[e] = res.reward_vectors
            dones[e] = res.done
            infos.append(res.info)
            if res.done:
                self.states[e], self._obs[e] = self._fresh(e)
            else:
                self._obs[e] = res.observations
        return rewards, dones, infos


def collision_report_from_record(record: EpisodeRecord, step_idx: int) -> CollisionReport:
    """Re-run collision geometry for one recorded step (offline audit)."""
    world = World(columns=record.world.columns, balls=record.balls_at(step_idx + 1), goal_x=record.world.goal_x)
    return check_collisions(record.positions[step_idx], world, record.times[step_idx])
