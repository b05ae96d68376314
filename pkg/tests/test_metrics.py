import numpy as np
import pytest

from formation_rl.env import EnvConfig, EpisodeRecord, default_formation
from formation_rl.metrics import (
    EvalReport,
    collision_free_rate,
    evaluate,
    formation_maintenance,
    sweep_eval,
    write_reports_csv,
    write_reports_json,
)
from formation_rl.policies import HoverPolicy, TrackingController
from formation_rl.reward import laplacian_distance
from formation_rl.world import World

TARGET = default_formation(3)


def make_record(positions, goal=True, collided=False):
    positions = np.asarray(positions, dtype=float)
    T, n = positions.shape[:2]
    col = np.zeros((T, n), bool)
    if collided:
        col[-1, 0] = True
    return EpisodeRecord(
        times=np.arange(1, T + 1) * 0.02,
        positions=positions,
        quats=np.tile([1.0, 0, 0, 0], (T, n, 1)),
        velocities=np.zeros((T, n, 3)),
        actions=np.zeros((T, n, 4)),
        rewards=np.zeros((T, n, 4)),
        collision=col,
        e_v=np.zeros((T, n)),
        e_shape=np.zeros(T),
        e_shape_unnormalized=np.array([laplacian_distance(p, TARGET) for p in positions]),
        size_error=np.zeros(T),
        e_net=np.zeros((T, n)),
        goal_reached=goal,
        collided=collided,
        world=World(),
        ball_log=[],
        offsets=TARGET,
    )


def rotation_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def test_cfr_counts():
    frozen = np.tile(TARGET, (5, 1, 1))
    ok = make_record(frozen)
    crash = make_record(frozen, goal=False, collided=True)
    late = make_record(frozen, goal=False)
    assert collision_free_rate([crash] * 4) == 0.0
    assert collision_free_rate([ok] * 4) == 1.0
    assert collision_free_rate([ok] * 89 + [crash] * 6 + [late] * 5) == pytest.approx(0.89)
    with pytest.raises(ValueError):
        collision_free_rate([])


def test_fm_frozen_and_rotating_targets():
    frozen = np.tile(TARGET + [0, 0, 1], (5, 1, 1))
    assert formation_maintenance([make_record(frozen)]) == pytest.approx(0.0, abs=1e-24)
    rotating = np.array([TARGET @ rotation_z(0.3 * k).T + [k, 0, 1] for k in range(10)])
    assert formation_maintenance([make_record(rotating)]) == pytest.approx(0.0, abs=1e-20)


def test_fm_skips_failed_and_reports_absence():
    bad = make_record(np.tile(2 * TARGET, (3, 1, 1)), goal=False)
    assert formation_maintenance([bad]) is None
    good = make_record(np.tile(2 * TARGET, (3, 1, 1)))
    assert formation_maintenance([bad, good]) == pytest.approx(laplacian_distance(2 * TARGET, TARGET))


def test_fm_invariant_under_global_rigid_motion(rng):
    traj = TARGET + rng.normal(scale=0.1, size=(20, 3, 3))
    R = rotation_z(1.1) @ np.array([[1, 0, 0], [0, np.cos(0.4), -np.sin(0.4)], [0, np.sin(0.4), np.cos(0.4)]])
    moved = traj @ R.T + np.array([3.0, -1.0, 2.0])
    a = formation_maintenance([make_record(traj)])
    b = formation_maintenance([make_record(moved)])
    assert b == pytest.approx(a, rel=1e-9)


def test_evaluate_scripted_policies():
    hover = evaluate(HoverPolicy(), EnvConfig(episode_len=60), n_episodes=2)
    assert hover.cfr == 0.0 and hover.fm is None
    track = evaluate(TrackingController(), EnvConfig(), n_episodes=2)
    assert track.cfr == 1.0 and track.fm < 0.05


def test_sweep_rows_equal_standalone_evaluation():
    base = EnvConfig(episode_len=40)
    rows = sweep_eval(TrackingController(), base, "columns", [5, 10], n_episodes=2, seed=4)
    assert [r.n_columns for r in rows] == [5, 10]
    single = evaluate(TrackingController(), EnvConfig(episode_len=40, n_columns=10), 2, 4, "columns=10")
    assert rows[1] == single
    with pytest.raises(ValueError):
        sweep_eval(TrackingController(), base, "walls", [1])
    with pytest.raises(ValueError):
        sweep_eval(TrackingController(), base, "balls", [])


def test_report_exports(tmp_path):
    r = EvalReport("x", 10, 2, 100, 0.5, None, 0.25, 0.5, 0.5, 0.5, 0.5)
    write_reports_csv(tmp_path / "r.csv", [r, r])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("scenario,n_columns,n_balls,n_episodes,cfr,fm,sr") and len(lines) == 3
    write_reports_json(tmp_path / "r.json", [r], {"axis": "columns"})
    assert '"fm": null' in (tmp_path / "r.json").read_text()
