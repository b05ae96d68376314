import csv
from dataclasses import replace

import numpy as np
import pytest

from formation_rl.dynamics import QuadrotorParams, body_axes
from formation_rl.env import (
    BALL_DIM,
    DRONE_DIM,
    GRID_OFFSETS,
    SELF_DIM,
    START,
    TRAJECTORY_COLUMNS,
    EnvConfig,
    VecEnv,
    build_observation,
    build_observations,
    collision_report_from_record,
    default_formation,
    denormalize_action,
    episode_seeds,
    identity_code,
    normalize_action,
    reset,
    run_episode,
    run_episodes,
    step,
)
from formation_rl.policies import HoverPolicy, TrackingController
from formation_rl.world import SENSE_CAP, Column

QUAD = QuadrotorParams()


def brute_static(pos, columns):
    out = np.full(9, SENSE_CAP)
    for cell, (dx, dy, _) in enumerate(GRID_OFFSETS):
        for c in columns:
            d = np.hypot(pos[0] + dx - c.center_xy[0], pos[1] + dy - c.center_xy[1]) - c.radius
            out[cell] = min(out[cell], max(d, 0.0))
    return out


def test_default_formation_side_and_centroid():
    f = default_formation(3)
    np.testing.assert_allclose(f.mean(axis=0), 0.0, atol=1e-12)
    d = np.linalg.norm(f[:, None] - f[None], axis=2)[np.triu_indices(3, 1)]
    np.testing.assert_allclose(d, 1.0)


def test_identity_codes():
    np.testing.assert_array_equal(identity_code(1), [0, 1, 0])
    assert len({tuple(identity_code(i)) for i in range(7)}) == 7
    with pytest.raises(ValueError):
        identity_code(7)


def test_action_mapping_round_trip(rng):
    a = rng.uniform(-1, 1, (50, 4))
    np.testing.assert_allclose(normalize_action(denormalize_action(a, QUAD), QUAD), a, atol=1e-12)
    ctbr = denormalize_action(np.array([[5.0, -5.0, 0.5, 0.0]]), QUAD)
    assert ctbr[0, 0] == pytest.approx(0.9 * QUAD.max_thrust) and ctbr[0, 1] == pytest.approx(-np.pi)


def test_reset_jitter_and_determinism():
    cfg = EnvConfig(n_columns=10, n_balls=2)
    s1, o1 = reset(cfg, seed=5)
    s2, o2 = reset(cfg, seed=5)
    np.testing.assert_array_equal(s1.pos, s2.pos)
    for k in o1:
        np.testing.assert_array_equal(o1[k], o2[k])
    dev = np.linalg.norm(s1.pos - (START + s1.offsets), axis=1)
    assert np.all(dev <= cfg.position_jitter + 1e-12)
    h, _ = body_axes(s1.quat)
    assert np.all(np.abs(np.arctan2(h[:, 1], h[:, 0])) <= cfg.yaw_jitter + 1e-12)
    assert len(s1.world.columns) == 10
    s3, _ = reset(cfg, seed=6)
    assert not np.array_equal(s1.pos, s3.pos)


def test_reset_rejects_overlapping_formation():
    cfg = EnvConfig(n_drones=2, formation_target=((0, 0, 0), (0.05, 0, 0)))
    with pytest.raises(ValueError):
        reset(cfg, seed=0)


def test_observation_shapes():
    cfg = EnvConfig(n_drones=4, n_columns=5, n_balls=3)
    state, obs = reset(cfg, seed=1)
    assert obs["self"].shape == (4, SELF_DIM)
    assert obs["drones"].shape == (4, 3, DRONE_DIM)
    assert obs["static"].shape == (4, 9)
    assert obs["dynamic"].shape == (4, 3, BALL_DIM) and obs["mask"].shape == (4, 3)
    single = build_observation(2, state)
    np.testing.assert_array_equal(single.self_obs, obs["self"][2])
    assert single.flat().ndim == 1
    with pytest.raises(ValueError):
        build_observation(4, state)


def test_self_observation_layout():
    state, obs = reset(EnvConfig(), seed=3)
    s = obs["self"][1]
    np.testing.assert_array_equal(s[0:3], state.pos[1])
    np.testing.assert_array_equal(s[3:7], state.quat[1])
    np.testing.assert_allclose(s[19:22], np.array([1.0, 0, 0]) - state.vel[1])
    np.testing.assert_array_equal(s[22:25], [0, 1, 0])
    rel = state.pos[2] - state.pos[1]
    np.testing.assert_allclose(obs["drones"][1, 1, 1:4], rel)
    assert obs["drones"][1, 1, 0] == pytest.approx(np.linalg.norm(rel))


def test_static_observation_matches_brute_force():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        state, _ = reset(EnvConfig(n_columns=int(rng.integers(1, 30))), seed=seed)
        # move the swarm into the obstacle field
        state.pos[:] = rng.uniform([2, -2, 0.5], [10, 2, 1.5], (3, 3))
        obs = build_observations(state)
        for i in range(3):
            np.testing.assert_allclose(obs["static"][i], brute_static(state.pos[i], state.world.columns), atol=1e-12)


def test_static_observation_permutation_and_far_insertion():
    state, _ = reset(EnvConfig(n_columns=15), seed=9)
    state.pos[:] = [[4, 0, 1], [4.5, 0.5, 1], [5, -0.5, 1]]
    base = build_observations(state)["static"]
    state.world.columns = state.world.columns[::-1]
    np.testing.assert_array_equal(build_observations(state)["static"], base)
    state.world.columns = state.world.columns + [Column((40.0, 40.0))]
    np.testing.assert_array_equal(build_observations(state)["static"], base)


def test_ball_observation_sorted_and_masked():
    cfg = EnvConfig(n_balls=3)
    state, _ = reset(cfg, seed=2)
    for _ in range(400):
        res = step(state, HoverPolicy()(None, state))
        obs = res.observations
        for i in range(3):
            vis = obs["mask"][i].astype(bool)
            rows = obs["dynamic"][i][vis]
            assert np.all(rows[:, 0] <= SENSE_CAP)
            assert [tuple(r) for r in rows] == sorted(tuple(r) for r in rows)
            assert not obs["dynamic"][i][~vis].any()
            expected = sum(np.linalg.norm(b.position(state.time) - state.pos[i]) <= SENSE_CAP for b in state.world.balls)
            assert vis.sum() == expected
        if res.done:
            break


def test_balls_respawn_after_landing():
    state, _ = reset(EnvConfig(n_balls=1, episode_len=400), seed=4)
    while not state.done:
        step(state, HoverPolicy()(None, state))
    assert len(state.ball_log) >= 1
    first = state.ball_log[0]
    assert first["spawn_step"] >= 50
    if first["despawn_step"] is not None:
        ball = first["ball"]
        assert ball.position(first["despawn_step"] * 0.02)[2] <= ball.radius


def test_step_validates_and_terminates():
    state, _ = reset(EnvConfig(episode_len=3), seed=0)
    with pytest.raises(ValueError):
        step(state, np.zeros((2, 4)))
    for _ in range(3):
        res = step(state, HoverPolicy()(None, state))
    assert res.done and res.info["timeout"]
    with pytest.raises(RuntimeError):
        step(state, HoverPolicy()(None, state))


def test_free_fall_ends_in_ground_collision():
    state, _ = reset(EnvConfig(), seed=0)
    while not state.done:
        res = step(state, np.zeros((3, 4)))
    assert res.info["collided"] and res.info["collisions"].ground.all()


def test_reward_vector_shapes():
    state, _ = reset(EnvConfig(n_columns=5, n_balls=2), seed=0)
    res = step(state, HoverPolicy()(None, state))
    assert res.reward_vectors.shape == (3, 4) and np.all(np.isfinite(res.reward_vectors))


def test_tracking_controller_reaches_goal_in_formation():
    rec = run_episode(TrackingController(), EnvConfig(), seed=11)
    assert rec.goal_reached and not rec.collided
    assert rec.e_v.mean() < 0.3 and rec.e_shape.mean() < 0.05 and rec.size_error.mean() < 0.25
    assert rec.e_net.mean() < 0.2


def test_episode_csv_schema(tmp_path):
    rec = run_episode(HoverPolicy(), EnvConfig(episode_len=20), seed=1)
    path = tmp_path / "traj.csv"
    rec.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == TRAJECTORY_COLUMNS
    assert len(rows) - 1 == rec.n_steps * 3
    rec.to_csv(tmp_path / "again.csv")
    assert path.read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_offline_collision_audit_matches_flags():
    recs = run_episodes(HoverPolicy(), EnvConfig(n_columns=10, n_balls=3, episode_len=300), episode_seeds(0, 4))
    for rec in recs:
        for k in range(rec.n_steps):
            np.testing.assert_array_equal(collision_report_from_record(rec, k).any, rec.collision[k])


def test_batched_episodes_equal_single():
    cfg = EnvConfig(n_balls=2, episode_len=60)
    seeds = episode_seeds(3, 3)
    batch = run_episodes(TrackingController(), cfg, seeds)
    for s, rec in zip(seeds, batch):
        single = run_episode(TrackingController(), cfg, seed=s)
        np.testing.assert_array_equal(single.positions, rec.positions)


def test_episode_seeds_prefix_stable():
    assert episode_seeds(5, 3) == episode_seeds(5, 10)[:3]


def test_vec_env_autoreset():
    vec = VecEnv(EnvConfig(episode_len=5), 3, seed=0)
    hover = np.tile([QUAD.hover_thrust, 0, 0, 0], (9, 1))
    for k in range(5):
        _, dones, _ = vec.step(hover)
    assert dones.all()
    assert all(s.step_count == 0 for s in vec.states)
    assert vec.observations()["self"].shape == (9, SELF_DIM)


def test_clip_actions_narrows_range():
    state, _ = reset(EnvConfig(clip_actions=True), seed=0)
    res = step(state, np.tile([0.0, 3.0, 0, 0], (3, 1)))
    assert res.info["ctbr"][0, 0] == pytest.approx(0.4 * QUAD.max_thrust)
    assert res.info["ctbr"][0, 1] == pytest.approx(np.pi / 4)
