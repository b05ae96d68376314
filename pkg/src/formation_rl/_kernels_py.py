"""Pure numpy implementation of the simulation kernels.

Every function mirrors one in ``_kernels.pyx`` and shares its in-place
calling convention, so :mod:`formation_rl.kernels` can swap them freely.

Parameter vector layout (``prm``)::

    0 mass, 1-3 inertia diag, 4 arm length, 5 max total thrust,
    6 torque-to-thrust, 7-9 rate gains, 10 linear drag, 11 gravity
"""

import numpy as np

_SQRT2 = np.sqrt(2.0)

# Mixer sign patterns; rows are orthogonal so the inverse is the transpose / 4.
# Rotors: 1 front-right, 2 rear-left, 3 front-left, 4 rear-right.
_ROLL = np.array([-1.0, 1.0, 1.0, -1.0])
_PITCH = np.array([-1.0, 1.0, -1.0, 1.0])
_YAW = np.array([-1.0, -1.0, 1.0, 1.0])


def mix_batch(omega, cmd, prm, throttles):
    """Body-rate P controller followed by the X mixer, writing ``throttles``."""
    d = prm[4] / _SQRT2
    k = prm[6]
    per_rotor = prm[5] / 4.0
    tau_x = prm[7] * (cmd[:, 1] - omega[:, 0])
    tau_y = prm[8] * (cmd[:, 2] - omega[:, 1])
    tau_z = prm[9] * (cmd[:, 3] - omega[:, 2])
    forces = (
        cmd[:, 0:1]
        + _ROLL * (tau_x / d)[:, None]
        + _PITCH * (tau_y / d)[:, None]
        + _YAW * (tau_z / k)[:, None]
    ) / 4.0
    np.clip(forces, 0.0, per_rotor, out=forces)
    throttles[...] = forces / per_rotor


def physics_step_batch(pos, quat, vel, omega, throttles, prm, dt):
    """One semi-implicit Euler step of the rigid-body equations, in place."""
    mass = prm[0]
    inertia = prm[1:4]
    d = prm[4] / _SQRT2
    forces = throttles * (prm[5] / 4.0)
    total = forces.sum(axis=1)
    torque = np.stack(
        [d * (forces @ _ROLL), d * (forces @ _PITCH), prm[6] * (forces @ _YAW)], axis=1
    )

    w, x, y, z = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    # third column of R(q) scaled by thrust
    thrust_dir = np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)],
        axis=1,
    )
    acc = thrust_dir * (total / mass)[:, None] - (prm[10] / mass) * vel
    acc[:, 2] -= prm[11]

    gyro = np.cross(omega, omega * inertia)
    omega_dot = (torque - gyro) / inertia

    vel += acc * dt
    pos += vel * dt
    omega += omega_dot * dt

    ox, oy, oz = omega[:, 0], omega[:, 1], omega[:, 2]
    qdot = 0.5 * np.stack(
        [
            -x * ox - y * oy - z * oz,
            w * ox + y * oz - z * oy,
            w * oy - x * oz + z * ox,
            w * oz + x * oy - y * ox,
        ],
        axis=1,
    )
    quat += qdot * dt
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)


def control_step_batch(pos, quat, vel, omega, cmd, prm, n_sub, dt, throttles):
    """Hold ``cmd`` for ``n_sub`` substeps, re-running the rate loop each substep."""
    for _ in range(n_sub):
        mix_batch(omega, cmd, prm, throttles)
        physics_step_batch(pos, quat, vel, omega, throttles, prm, dt)


def static_distance_batch(points, centers, radii, cap):
    """Horizontal surface distance from each point to the nearest column.

    Clamped to ``[0, cap]``; ``cap`` when there are no columns.
    """
    n = points.shape[0]
    if centers.shape[0] == 0:
        return np.full(n, cap)
    diff = points[:, None, :2] - centers[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2)) - radii[None, :]
    return np.clip(dist.min(axis=1), 0.0, cap)
