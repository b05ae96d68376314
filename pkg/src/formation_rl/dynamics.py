"""Rigid-body quadrotor model driven by collective-thrust / body-rate commands.

Conventions: world frame is z-up, body x points forward, quaternions are
Hamilton ``(w, x, y, z)`` mapping body to world. Rotors sit on an X frame:
1 front-right, 2 rear-left, 3 front-left, 4 rear-right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from formation_rl import kernels

GRAVITY = 9.81
CONTROL_DT = 0.02
PHYSICS_DT = 0.005
SUBSTEPS = 4

# Per-rotor sign patterns for roll, pitch and yaw moments.
ROLL_SIGNS = np.array([-1.0, 1.0, 1.0, -1.0])
PITCH_SIGNS = np.array([-1.0, 1.0, -1.0, 1.0])
YAW_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.028
    inertia_diag: tuple[float, float, float] = (1.4e-5, 1.4e-5, 2.17e-5)
    arm_length: float = 0.046
    max_thrust: float = 0.56
    torque_to_thrust: float = 0.006
    rate_gains: tuple[float, float, float] = (0.004, 0.004, 0.002)
    drag_coeff: float = 1e-4

    def __post_init__(self):
        values = [self.mass, self.arm_length, self.max_thrust, self.torque_to_thrust, self.drag_coeff]
        values += list(self.inertia_diag) + list(self.rate_gains)
        if len(self.inertia_diag) != 3 or len(self.rate_gains) != 3:
            raise ValueError("inertia_diag and rate_gains need three components")
        if any(not np.isfinite(v) or v <= 0 for v in values):
            raise ValueError("quadrotor parameters must be finite and positive")
        if self.max_thrust <= self.mass * GRAVITY:
            raise ValueError("max_thrust must exceed mass * g for hover to be feasible")

    @property
    def hover_thrust(self) -> float:
        return self.mass * GRAVITY

    def as_array(self) -> np.ndarray:
        """Flat parameter vector in the layout the kernels expect."""
        return np.array(
            [
                self.mass,
                *self.inertia_diag,
                self.arm_length,
                self.max_thrust,
                self.torque_to_thrust,
                *self.rate_gains,
                self.drag_coeff,
                GRAVITY,
            ],
            dtype=np.float64,
        )


def _vec(x, n=3) -> np.ndarray:
    arr = np.array(x, dtype=np.float64).reshape(n)
    return arr


@dataclass
class QuadrotorState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = _vec(self.p)
        self.q = _vec(self.q, 4)
        self.v = _vec(self.v)
        self.omega = _vec(self.omega)

    def copy(self) -> "QuadrotorState":
        return QuadrotorState(self.p.copy(), self.q.copy(), self.v.copy(), self.omega.copy())

    def is_valid(self) -> bool:
        arrays = (self.p, self.q, self.v, self.omega)
        return all(np.all(np.isfinite(a)) for a in arrays) and abs(np.linalg.norm(self.q) - 1) < 1e-6


@dataclass(frozen=True)
class CtbrCommand:
    """Collective thrust in newtons plus (roll, pitch, yaw) body rates in rad/s."""

    c: float
    omega_cmd: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.c, *self.omega_cmd], dtype=np.float64)

    def validate(self, params: QuadrotorParams):
        if not 0.0 <= self.c <= 0.9 * params.max_thrust + 1e-12:
            raise ValueError(f"collective thrust {self.c} outside [0, 0.9*max_thrust]")
        if any(abs(w) > np.pi + 1e-12 for w in self.omega_cmd):
            raise ValueError(f"body rates {self.omega_cmd} outside [-pi, pi]")


def clip_ctbr(cmd: np.ndarray, params: QuadrotorParams, narrow: bool = False) -> np.ndarray:
    """Clip an ``(..., 4)`` array of CTBR commands to the full or narrowed range."""
    out = np.array(cmd, dtype=np.float64, copy=True)
    if narrow:
        lo, hi, rate = 0.4 * params.max_thrust, 0.9 * params.max_thrust, np.pi / 4
    else:
        lo, hi, rate = 0.0, 0.9 * params.max_thrust, np.pi
    out[..., 0] = np.clip(out[..., 0], lo, hi)
    out[..., 1:] = np.clip(out[..., 1:], -rate, rate)
    return out


def rate_pid_and_mix(state: QuadrotorState, cmd: CtbrCommand, params: QuadrotorParams) -> np.ndarray:
    """Rotor throttles in [0, 1] realizing the commanded thrust and rate-error torque."""
    cmd.validate(params)
    throttles = np.zeros((1, 4))
    kernels.mix_batch(state.omega.reshape(1, 3).copy(), cmd.as_array().reshape(1, 4), params.as_array(), throttles)
    return throttles[0]


def mixer_wrench(throttles: np.ndarray, params: QuadrotorParams) -> tuple[float, np.ndarray]:
    """Total thrust and body torque produced by a throttle vector."""
    forces = np.asarray(throttles, dtype=np.float64) * (params.max_thrust / 4.0)
    d = params.arm_length / np.sqrt(2.0)
    torque = np.array(
        [d * forces @ ROLL_SIGNS, d * forces @ PITCH_SIGNS, params.torque_to_thrust * forces @ YAW_SIGNS]
    )
    return float(forces.sum()), torque


def step_physics(
    state: QuadrotorState, throttles: np.ndarray, params: QuadrotorParams, dt: float = PHYSICS_DT
) -> QuadrotorState:
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    throttles = np.asarray(throttles, dtype=np.float64)
    if np.any(throttles < 0) or np.any(throttles > 1):
        raise ValueError("throttles must lie in [0, 1]")
    pos, quat = state.p.reshape(1, 3).copy(), state.q.reshape(1, 4).copy()
    vel, omega = state.v.reshape(1, 3).copy(), state.omega.reshape(1, 3).copy()
    kernels.physics_step_batch(pos, quat, vel, omega, throttles.reshape(1, 4).copy(), params.as_array(), dt)
    return QuadrotorState(pos[0], quat[0], vel[0], omega[0])


def control_step(state: QuadrotorState, cmd: CtbrCommand, params: QuadrotorParams) -> QuadrotorState:
    """Advance one 50 Hz control tick (four 5 ms substeps)."""
    cmd.validate(params)
    pos, quat = state.p.reshape(1, 3).copy(), state.q.reshape(1, 4).copy()
    vel, omega = state.v.reshape(1, 3).copy(), state.omega.reshape(1, 3).copy()
    throttles = np.zeros((1, 4))
    kernels.control_step_batch(
        pos, quat, vel, omega, cmd.as_array().reshape(1, 4), params.as_array(), SUBSTEPS, PHYSICS_DT, throttles
    )
    return QuadrotorState(pos[0], quat[0], vel[0], omega[0])


def rotate(q: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rotate vectors (..., 3) by unit quaternions (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    vec = np.asarray(vec, dtype=np.float64)
    t = 2.0 * np.cross(u, vec)
    return vec + w * t + np.cross(u, t)


def body_axes(q) -> tuple[np.ndarray, np.ndarray]:
    """World-frame heading (body x) and up (body z) vectors."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("body_axes requires a unit quaternion")
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    # first and third columns of the rotation matrix
    heading = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)], axis=-1)
    up = np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return heading, up


def yaw_quaternion(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])


def hover_command(params: QuadrotorParams) -> CtbrCommand:
    return CtbrCommand(params.hover_thrust, (0.0, 0.0, 0.0))
