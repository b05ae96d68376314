"""Obstacle worlds: zigzag column lattices, parabolic balls, distance and collision queries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from formation_rl import kernels
from formation_rl.dynamics import GRAVITY

GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])
COLUMN_RADIUS = 0.15
COLUMN_HEIGHT = 3.0
BALL_RADIUS = 0.15
DRONE_RADIUS = 0.10
DRONE_SEPARATION = 0.2
GROUND_Z = 0.05
SENSE_CAP = 2.0


@dataclass(frozen=True)
class GridSpec:
    cell_size: float = 0.5
    row_offset: float = 0.25
    x_range: tuple[float, float] = (2.0, 10.0)
    y_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if abs(self.row_offset - self.cell_size / 2) > 1e-12:
            raise ValueError("row_offset must equal half the cell size")

    def cell_centers(self) -> np.ndarray:
        """All lattice points inside the region, row by row."""
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        n_rows = int(np.floor((y1 - y0) / self.cell_size + 1e-9)) + 1
        points = []
        for j in range(n_rows):
            y = y0 + j * self.cell_size
            shift = (j % 2) * self.row_offset
            n_cols = int(np.floor((x1 - x0 - shift) / self.cell_size + 1e-9)) + 1
            for k in range(n_cols):
                points.append((x0 + k * self.cell_size + shift, y))
        return np.array(points, dtype=np.float64).reshape(-1, 2)

    def on_lattice(self, xy, tol: float = 1e-9) -> bool:
        x, y = xy
        j = (y - self.y_range[0]) / self.cell_size
        if abs(j - round(j)) > tol:
            return False
        k = (x - self.x_range[0] - (int(round(j)) % 2) * self.row_offset) / self.cell_size
        return abs(k - round(k)) <= tol


@dataclass(frozen=True)
class Column:
    center_xy: tuple[float, float]
    radius: float = COLUMN_RADIUS
    height: float = COLUMN_HEIGHT


@dataclass(frozen=True)
class Ball:
    spawn_pos: np.ndarray
    spawn_vel: np.ndarray
    spawn_time: float
    radius: float = BALL_RADIUS
    flight_time: float = 1.0

    def position(self, t: float) -> np.ndarray:
        tau = t - self.spawn_time
        return self.spawn_pos + self.spawn_vel * tau + 0.5 * GRAVITY_VEC * tau * tau

    def velocity(self, t: float) -> np.ndarray:
        return self.spawn_vel + GRAVITY_VEC * (t - self.spawn_time)


@dataclass
class World:
    columns: list[Column] = field(default_factory=list)
    balls: list[Ball] = field(default_factory=list)
    goal_x: float = 12.0
    formation_target: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    region: tuple[tuple[float, float], tuple[float, float]] = ((2.0, 10.0), (-2.0, 2.0))

    def column_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.columns:
            return np.zeros((0, 2)), np.zeros(0)
        centers = np.array([c.center_xy for c in self.columns], dtype=np.float64)
        radii = np.array([c.radius for c in self.columns], dtype=np.float64)
        return centers, radii

    def layout_dict(self) -> dict:
        return {
            "columns": [
                {"x": float(c.center_xy[0]), "y": float(c.center_xy[1]), "r": c.radius, "h": c.height}
                for c in self.columns
            ],
            "goal_x": self.goal_x,
            "region": {"x": list(self.region[0]), "y": list(self.region[1])},
        }

    def dump_layout(self, path):
        with open(path, "w") as fh:
            json.dump(self.layout_dict(), fh, indent=2)
            fh.write("\n")


def generate_columns(spec: GridSpec, count: int, rng_seed) -> list[Column]:
    centers = spec.cell_centers()
    if count < 0 or count > len(centers):
        raise ValueError(f"cannot place {count} columns on {len(centers)} cells")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(centers), size=count, replace=False)
    return [Column((float(centers[i, 0]), float(centers[i, 1]))) for i in chosen]


def solve_parabola(spawn, target, flight_time: float) -> np.ndarray:
    """Initial velocity carrying a ballistic point from ``spawn`` to ``target`` in ``flight_time``."""
    if not flight_time > 0:
        raise ValueError("flight_time must be positive")
    spawn = np.asarray(spawn, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return (target - spawn - 0.5 * GRAVITY_VEC * flight_time**2) / flight_time


def spawn_ball(world: World, drone_positions, t_now: float, rng_seed) -> Ball:
    """Throw a ball from ahead of the formation at one uniformly chosen drone."""
    positions = np.asarray(drone_positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) == 0:
        raise ValueError("need at least one drone to aim at")
    rng = np.random.default_rng(rng_seed)
    target = positions[rng.integers(len(positions))]
    centroid = positions.mean(axis=0)
    spawn = np.array(
        [
            centroid[0] + rng.uniform(2.0, 4.0),
            centroid[1] + rng.uniform(-1.0, 1.0),
            rng.uniform(1.5, 2.5),
        ]
    )
    flight_time = rng.uniform(0.8, 1.5)
    velocity = solve_parabola(spawn, target, flight_time)
    return Ball(spawn, velocity, float(t_now), BALL_RADIUS, float(flight_time))


def nearest_static_distance(p, world: World, cap: float = SENSE_CAP) -> float:
    centers, radii = world.column_arrays()
    point = np.asarray(p, dtype=np.float64).reshape(1, 3)
    return float(kernels.static_distance_batch(point, centers, radii, cap)[0])


@dataclass
class CollisionReport:
    column: np.ndarray
    ball: np.ndarray
    drone: np.ndarray
    ground: np.ndarray

    @property
    def any(self) -> np.ndarray:
        return self.column | self.ball | self.drone | self.ground


def check_collisions(drone_positions, world: World, t: float) -> CollisionReport:
    pos = np.asarray(drone_positions, dtype=np.float64).reshape(-1, 3)
    n = len(pos)
    column = np.zeros(n, dtype=bool)
    for col in world.columns:
        gap = np.hypot(pos[:, 0] - col.center_xy[0], pos[:, 1] - col.center_xy[1]) - col.radius
        column |= (gap < DRONE_RADIUS) & (pos[:, 2] < col.height)
    ball = np.zeros(n, dtype=bool)
    for b in world.balls:
        ball |= np.linalg.norm(pos - b.position(t), axis=1) < b.radius + DRONE_RADIUS
    drone = np.zeros(n, dtype=bool)
    if n > 1:
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
        np.fill_diagonal(dist, np.inf)
        drone = (dist < DRONE_SEPARATION).any(axis=1)
    ground = pos[:, 2] < GROUND_Z
    return CollisionReport(column, ball, drone, ground)
