"""Random smooth camera trajectories for tests, demos and round-trip checks.

Clips are built from per-frame body-frame increments: each of the six
motion axes is either idle (exactly zero) or active with a fixed sign and a
magnitude that wobbles sinusoidally around a base value.  With the default
settings every active component stays well above the static thresholds,
so these clips survive action extraction without any component being
zeroed.
"""
from __future__ import annotations

import math

import numpy as np

from .trajectory import Trajectory, compose_euler_batch, matrix_to_quat, quat_to_matrix


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


def _wobble(rng, steps, base, depth):
    omega = rng.uniform(0.05, 0.4)
    phase = rng.uniform(0, 2 * math.pi)
    t = np.arange(steps)
    return base * (1.0 + depth * np.sin(omega * t + phase))


def random_increments(rng, steps, speed=(5.0, 12.5), turn_deg=(0.5, 3.0),
                      depth=0.3, p_active=0.6, active=None):
    """Per-frame body-frame translations and (yaw, pitch, roll) increments.

    ``active`` optionally fixes which of the six axes move, as a length-6
    boolean sequence ordered (forward, right, up, yaw, pitch, roll).
    """
    if active is None:
        active = rng.random(6) < p_active
        if not active.any():
            active[rng.integers(6)] = True
    active = np.asarray(active, dtype=bool)
    trans = np.zeros((steps, 3))
    rot = np.zeros((steps, 3))
    for axis in range(3):
        if active[axis]:
            sign = rng.choice([-1.0, 1.0])
            trans[:, axis] = sign * _wobble(rng, steps, rng.uniform(*speed), depth)
        if active[3 + axis]:
            sign = rng.choice([-1.0, 1.0])
            base = math.radians(rng.uniform(*turn_deg))
            rot[:, axis] = sign * _wobble(rng, steps, base, depth)
    return trans, rot


def integrate_increments(trans, rot, initial_position, initial_rotation):
    """Chain body-frame increments into world positions and rotations.

    ``R_{t+1} = dR_t @ R_t`` and ``P_{t+1} = P_t + R_t.T @ dP_t`` with
    ``dR_t`` the world-to-camera form of the Euler increment.
    """
    steps = len(trans)
    dR = compose_euler_batch(rot)
    R = np.empty((steps + 1, 3, 3))
    P = np.empty((steps + 1, 3))
    R[0] = initial_rotation
    P[0] = initial_position
    for t in range(steps):
        P[t + 1] = P[t] + R[t].T @ trans[t]
        R[t + 1] = dR[t] @ R[t]
    return P, R


def smooth_trajectory(rng, length, frame_rate=16.0, clip_id="synthetic", **kwargs):
    """A random smooth trajectory of ``length`` frames."""
    trans, rot = random_increments(rng, length - 1, **kwargs)
    P0 = rng.uniform(-500.0, 500.0, size=3)
    R0 = random_rotation(rng)
    P, R = integrate_increments(trans, rot, P0, R0)
    ts = np.arange(length) / frame_rate
    return Trajectory(P, matrix_to_quat(R), ts, frame_rate, clip_id)


def straight_line(length, step=10.0, frame_rate=16.0, rotation=None, start=None, clip_id="line"):
    """Constant-speed motion along the camera's forward axis."""
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    start = np.zeros(3) if start is None else np.asarray(start, dtype=float)
    forward_world = R.T @ np.array([1.0, 0.0, 0.0])
    P = start + np.arange(length)[:, None] * step * forward_world
    Rs = np.repeat(R[None], length, axis=0)
    return Trajectory(P, matrix_to_quat(Rs), np.arange(length) / frame_rate, frame_rate, clip_id)


def static_clip(length, frame_rate=16.0, position=None, rotation=None, clip_id="static"):
    P = np.zeros(3) if position is None else np.asarray(position, dtype=float)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    q = matrix_to_quat(R)
    return Trajectory(np.repeat(P[None], length, axis=0), np.repeat(q[None], length, axis=0),
                      np.arange(length) / frame_rate, frame_rate, clip_id)
