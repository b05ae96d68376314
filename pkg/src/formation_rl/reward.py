"""Multi-objective reward: shaping functions, four reward components, linear scalarization.

The component functions accept numpy arrays with a leading drone axis so the
environment can score every drone in one call.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

COMPONENTS = ("formation", "flight", "obstacle", "action")


def shape_linear(e):
    return 1.0 - np.abs(e)


def shape_reciprocal(e):
    if np.any(np.asarray(e) < 0):
        raise ValueError("reciprocal shaping needs a nonnegative error")
    return 1.0 / (1.0 + e)


def shape_indicator(e, thres):
    """1 where ``e`` strictly exceeds ``thres``."""
    return np.where(np.asarray(e) > thres, 1.0, 0.0) if np.ndim(e) else float(e > thres)


@dataclass(frozen=True)
class RewardVector:
    formation: float
    flight: float
    obstacle: float
    action: float

    def as_array(self) -> np.ndarray:
        return np.array([self.formation, self.flight, self.obstacle, self.action])


@dataclass(frozen=True)
class WeightVector:
    w_formation: float = 0.25
    w_flight: float = 0.25
    w_obstacle: float = 0.25
    w_action: float = 0.25

    def __post_init__(self):
        w = self.as_array()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_formation, self.w_flight, self.w_obstacle, self.w_action])

    @classmethod
    def from_array(cls, w) -> "WeightVector":
        return cls(*(float(x) for x in w))


@dataclass(frozen=True)
class RewardConfig:
    alpha_heading: float = 0.2
    alpha_v: float = 0.5
    alpha_p: float = 0.5
    alpha_height: float = 0.2
    alpha_shape: float = 1.0
    alpha_size: float = 0.5
    alpha_dis: float = -5.0
    alpha_net: float = 0.3
    alpha_diff: float = 0.3
    alpha_throt: float = 0.2
    alpha_yaw: float = 0.2
    alpha_warn: float = 1.0
    alpha_hit: float = -10.0
    d_safe: float = 0.6
    d_warn: float = 0.3
    dis_min: float = 0.3
    size_target: float = 1.0

    def __post_init__(self):
        if not self.d_warn < self.d_safe:
            raise ValueError("d_warn must be smaller than d_safe")
        if not all(np.isfinite(v) for v in asdict(self).values()):
            raise ValueError("reward coefficients must be finite")


def laplacian(positions, normalized: bool = False) -> np.ndarray:
    pts = np.asarray(positions, dtype=np.float64)
    adj = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    deg = adj.sum(axis=1)
    lap = np.diag(deg) - adj
    if normalized:
        if np.any(deg <= 0):
            raise ValueError("normalized Laplacian undefined for zero-degree vertices")
        s = 1.0 / np.sqrt(deg)
        lap = lap * s[:, None] * s[None, :]
    return lap


def laplacian_distance(positions, target, normalized: bool = False) -> float:
    """Squared Frobenius distance between distance-weighted graph Laplacians."""
    positions = np.asarray(positions, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if positions.shape != target.shape or len(positions) < 2:
        raise ValueError("need two matching point sets with at least two points")
    diff = laplacian(positions, normalized) - laplacian(target, normalized)
    return float(np.sum(diff * diff))


def pairwise_extremes(positions) -> tuple[float, float]:
    """(smallest, largest) pairwise distance."""
    pts = np.asarray(positions, dtype=np.float64)
    iu = np.triu_indices(len(pts), k=1)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)[iu]
    return float(dist.min()), float(dist.max())


def formation_errors(positions, target, cfg: RewardConfig) -> dict:
    dis, size = pairwise_extremes(positions)
    return {
        "e_shape": laplacian_distance(positions, target, normalized=True),
        "e_size": (size - cfg.size_target) ** 2,
        "size": size,
        "dis": dis,
    }


def formation_reward(positions, target, cfg: RewardConfig) -> float:
    err = formation_errors(positions, target, cfg)
    penalty = shape_indicator(cfg.dis_min - err["dis"], 0.0)
    return (
        cfg.alpha_shape * shape_reciprocal(err["e_shape"])
        + cfg.alpha_size * shape_reciprocal(err["e_size"])
        + cfg.alpha_dis * penalty
    )


def flight_reward(p, v, h, centroid, p_ref, z_ref, v_target, h_target, cfg: RewardConfig):
    """Per-drone flight reward; ``p``, ``v``, ``h`` may carry a leading drone axis.

    Position tracking compares the swarm ``centroid`` to the virtual reference
    ``p_ref`` so that the formation remains free to rotate.
    """
    p, v, h = np.asarray(p), np.asarray(v), np.asarray(h)
    e_height = np.abs(p[..., 2] - z_ref)
    e_v = np.linalg.norm(np.asarray(v_target) - v, axis=-1)
    e_p = np.linalg.norm(np.asarray(p_ref) - np.asarray(centroid), axis=-1) * np.ones_like(e_v)
    e_heading = np.linalg.norm(h - np.asarray(h_target), axis=-1)
    return (
        cfg.alpha_heading * shape_linear(e_heading)
        + cfg.alpha_v * shape_linear(e_v)
        + cfg.alpha_p * shape_reciprocal(e_p)
        + cfg.alpha_height * shape_linear(e_height)
    )


def obstacle_reward(d_min, cfg: RewardConfig):
    """Proximity penalty; ``None`` or NaN entries mean no obstacle in range."""
    if d_min is None:
        return 0.0
    d = np.asarray(d_min, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("obstacle distance must be nonnegative")
    warn = cfg.alpha_warn * (d - cfg.d_safe) / (cfg.d_safe - cfg.d_warn)
    out = np.where(d > cfg.d_safe, 0.0, np.where(d > cfg.d_warn, warn, cfg.alpha_hit))
    out = np.where(np.isnan(d), 0.0, out)
    return float(out) if out.ndim == 0 else out


def action_reward(a_t, a_prev, throttles_t, throttles_prev, cfg: RewardConfig):
    """Smoothness reward from normalized actions in [-1, 1]^4 and rotor throttles."""
    a_t = np.asarray(a_t, dtype=np.float64)
    e_net = np.linalg.norm(a_t - np.asarray(a_prev), axis=-1) / 2.0
    e_diff = np.linalg.norm(np.asarray(throttles_t) - np.asarray(throttles_prev), axis=-1) / 2.0
    e_throt = np.sum(throttles_t, axis=-1) / 4.0
    e_yaw = np.abs(a_t[..., 3])
    return (
        cfg.alpha_net * shape_linear(e_net)
        + cfg.alpha_diff * shape_linear(e_diff)
        + cfg.alpha_throt * shape_linear(e_throt)
        + cfg.alpha_yaw * shape_linear(e_yaw)
    )


def scalarize(r, w: WeightVector):
    """Linear utility w^T R over the last axis; accepts RewardVector or arrays."""
    if not isinstance(w, WeightVector):
        w = WeightVector.from_array(w)
    vec = r.as_array() if isinstance(r, RewardVector) else np.asarray(r, dtype=np.float64)
    return vec @ w.as_array()
