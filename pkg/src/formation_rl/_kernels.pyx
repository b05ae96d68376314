# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels. Same contracts as ``_kernels_py``."""

import numpy as np
from libc.math cimport sqrt

cdef double SQRT2 = 1.4142135623730951
cdef double ROLL[4]
cdef double PITCH[4]
cdef double YAW[4]
ROLL[:] = [-1.0, 1.0, 1.0, -1.0]
PITCH[:] = [-1.0, 1.0, -1.0, 1.0]
YAW[:] = [-1.0, -1.0, 1.0, 1.0]


cdef inline void _mix_one(double[:, ::1] omega, double[:, ::1] cmd, double[::1] prm,
                          double[:, ::1] throttles, Py_ssize_t i) nogil:
    cdef double d = prm[4] / SQRT2
    cdef double per_rotor = prm[5] / 4.0
    cdef double tx = prm[7] * (cmd[i, 1] - omega[i, 0]) / d
    cdef double ty = prm[8] * (cmd[i, 2] - omega[i, 1]) / d
    cdef double tz = prm[9] * (cmd[i, 3] - omega[i, 2]) / prm[6]
    cdef double f
    cdef int r
    for r in range(4):
        f = (cmd[i, 0] + ROLL[r] * tx + PITCH[r] * ty + YAW[r] * tz) / 4.0
        if f < 0.0:
            f = 0.0
        elif f > per_rotor:
            f = per_rotor
        throttles[i, r] = f / per_rotor


cdef inline void _physics_one(double[:, ::1] pos, double[:, ::1] quat, double[:, ::1] vel,
                              double[:, ::1] omega, double[:, ::1] throttles,
                              double[::1] prm, double dt, Py_ssize_t i) nogil:
    cdef double mass = prm[0]
    cdef double ixx = prm[1], iyy = prm[2], izz = prm[3]
    cdef double d = prm[4] / SQRT2
    cdef double per_rotor = prm[5] / 4.0
    cdef double total = 0.0, tx = 0.0, ty = 0.0, tz = 0.0, f
    cdef int r
    for r in range(4):
        f = throttles[i, r] * per_rotor
        total += f
        tx += ROLL[r] * f
        ty += PITCH[r] * f
        tz += YAW[r] * f
    tx *= d
    ty *= d
    tz *= prm[6]

    cdef double w = quat[i, 0], x = quat[i, 1], y = quat[i, 2], z = quat[i, 3]
    cdef double a = total / mass
    cdef double k = prm[10] / mass
    cdef double ax = 2.0 * (x * z + w * y) * a - k * vel[i, 0]
    cdef double ay = 2.0 * (y * z - w * x) * a - k * vel[i, 1]
    cdef double az = (1.0 - 2.0 * (x * x + y * y)) * a - k * vel[i, 2] - prm[11]

    cdef double ox = omega[i, 0], oy = omega[i, 1], oz = omega[i, 2]
    # omega x (I omega)
    cdef double gx = oy * izz * oz - oz * iyy * oy
    cdef double gy = oz * ixx * ox - ox * izz * oz
    cdef double gz = ox * iyy * oy - oy * ixx * ox

    vel[i, 0] += ax * dt
    vel[i, 1] += ay * dt
    vel[i, 2] += az * dt
    pos[i, 0] += vel[i, 0] * dt
    pos[i, 1] += vel[i, 1] * dt
    pos[i, 2] += vel[i, 2] * dt

    ox = ox + (tx - gx) / ixx * dt
    oy = oy + (ty - gy) / iyy * dt
    oz = oz + (tz - gz) / izz * dt
    omega[i, 0] = ox
    omega[i, 1] = oy
    omega[i, 2] = oz

    cdef double nw = w + 0.5 * (-x * ox - y * oy - z * oz) * dt
    cdef double nx = x + 0.5 * (w * ox + y * oz - z * oy) * dt
    cdef double ny = y + 0.5 * (w * oy - x * oz + z * ox) * dt
    cdef double nz = z + 0.5 * (w * oz + x * oy - y * ox) * dt
    cdef double n = sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
    quat[i, 0] = nw / n
    quat[i, 1] = nx / n
    quat[i, 2] = ny / n
    quat[i, 3] = nz / n


def mix_batch(double[:, ::1] omega, double[:, ::1] cmd, double[::1] prm,
              double[:, ::1] throttles):
    cdef Py_ssize_t i
    with nogil:
        for i in range(omega.shape[0]):
            _mix_one(omega, cmd, prm, throttles, i)


def physics_step_batch(double[:, ::1] pos, double[:, ::1] quat, double[:, ::1] vel,
                       double[:, ::1] omega, double[:, ::1] throttles,
                       double[::1] prm, double dt):
    cdef Py_ssize_t i
    with nogil:
        for i in range(pos.shape[0]):
            _physics_one(pos, quat, vel, omega, throttles, prm, dt, i)


def control_step_batch(double[:, ::1] pos, double[:, ::1] quat, double[:, ::1] vel,
                       double[:, ::1] omega, double[:, ::1] cmd, double[::1] prm,
                       int n_sub, double dt, double[:, ::1] throttles):
    cdef Py_ssize_t i
    cdef int s
    with nogil:
        for i in range(pos.shape[0]):
            for s in range(n_sub):
                _mix_one(omega, cmd, prm, throttles, i)
                _physics_one(pos, quat, vel, omega, throttles, prm, dt, i)


def static_distance_batch(double[:, ::1] points, double[:, ::1] centers,
                          double[::1] radii, double cap):
    cdef Py_ssize_t n = points.shape[0], m = centers.shape[0], i, j
    out = np.empty(n)
    cdef double[::1] res = out
    cdef double best, dx, dy, dist
    with nogil:
        for i in range(n):
            best = cap
            for j in range(m):
                dx = points[i, 0] - centers[j, 0]
                dy = points[i, 1] - centers[j, 1]
                dist = sqrt(dx * dx + dy * dy) - radii[j]
                if dist < best:
                    best = dist
            if best < 0.0:
                best = 0.0
            res[i] = best
    return out
