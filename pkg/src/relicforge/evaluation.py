"""Trajectory accuracy: Sim(3) Umeyama alignment and relative pose error."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RankError, ShapeError
from .trajectory import Trajectory, matrix_to_quat, rotation_angle


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual_rms: float

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class RpeReport:
    rpe_trans: float     # RMSE of per-step translation error / reference mean step
    rpe_rot: float       # mean per-step angular error, degrees
    scale: float = 1.0
    residual_rms: float = 0.0


def umeyama_sim3(source, target, with_scale=True):
    """Least-squares similarity ``target ~ s * R @ source + t`` (Umeyama, 1991)."""
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ShapeError(f"expected matching (N, 3) point sets, got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 3:
        raise RankError(f"need at least 3 point pairs, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise RankError("source points are collinear or coincident")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = np.mean(np.sum(xs ** 2, axis=1))
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    resid = dst - (s * src @ R.T + t)
    rms = math.sqrt(np.mean(np.sum(resid ** 2, axis=1)))
    return AlignmentResult(s, R, t, rms)


def transform_trajectory(traj, scale, rotation, translation):
    """Apply a world-frame similarity to every pose (orientations rotate, positions map)."""
    P = scale * traj.positions @ rotation.T + translation
    R = traj.rotations @ rotation.T
    return Trajectory(P, matrix_to_quat(R), traj.timestamps, traj.frame_rate, traj.clip_id)


def _camera_to_world(traj):
    n = len(traj)
    T = np.zeros((n, 4, 4))
    T[:, :3, :3] = np.swapaxes(traj.rotations, 1, 2)
    T[:, :3, 3] = traj.positions
    T[:, 3, 3] = 1.0
    return T


def _inv_se3(T):
    out = np.zeros_like(T)
    Rt = np.swapaxes(T[..., :3, :3], -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, T[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def relative_errors(reference, estimate):
    """Per-step error transforms ``(Tr_t^-1 Tr_t+1)^-1 (Te_t^-1 Te_t+1)``."""
    Tr, Te = _camera_to_world(reference), _camera_to_world(estimate)
    rel_r = _inv_se3(Tr[:-1]) @ Tr[1:]
    rel_e = _inv_se3(Te[:-1]) @ Te[1:]
    return _inv_se3(rel_r) @ rel_e


def rpe(reference, estimate, align=True):
    """Relative pose error at a one-frame step.

    With ``align`` the estimate is first mapped onto the reference by the
    Sim(3) fit of its positions.  Translational error is divided by the
    reference's mean step length, so the metric is unit-free.
    """
    if len(reference) != len(estimate):
        raise ShapeError(f"trajectory lengths differ: {len(reference)} vs {len(estimate)}")
    scale, resid = 1.0, 0.0
    if align:
        fit = umeyama_sim3(estimate.positions, reference.positions)
        estimate = transform_trajectory(estimate, fit.scale, fit.rotation, fit.translation)
        scale, resid = fit.scale, fit.residual_rms
    E = relative_errors(reference, estimate)
    steps = np.linalg.norm(np.diff(reference.positions, axis=0), axis=1)
    d_bar = steps.mean() if steps.mean() > 0 else 1.0
    trans = np.linalg.norm(E[:, :3, 3], axis=1)
    rpe_trans = math.sqrt(np.mean(trans ** 2)) / d_bar
    rpe_rot = math.degrees(float(np.mean(rotation_angle(E[:, :3, :3]))))
    return RpeReport(float(rpe_trans), rpe_rot, scale, resid)
