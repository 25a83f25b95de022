"""Camera poses, trajectories and the rigid-motion primitives built on them.

Rotations are world-to-camera (``x_cam = R @ (x_world - P)``) and stored as
unit quaternions ``[w, x, y, z]``; matrices are produced on demand.

Euler angles describe the *camera's* rotation (camera-to-world ``C = R.T``)
in intrinsic yaw -> pitch -> roll order.  Under the default ``ue_lh_zup``
convention (X forward, Y right, Z up, left-handed) positive yaw turns right,
positive pitch looks up and positive roll is clockwise seen from behind the
camera, i.e. ``C = Rz(yaw) @ Ry(-pitch) @ Rx(-roll)`` in plain matrix terms.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClipError, ParseError, PoseValidationError, ReflectionError

# sign applied to (yaw, pitch, roll) before building Rz @ Ry @ Rx
CONVENTIONS = {
    "ue_lh_zup": (1.0, -1.0, -1.0),
    "zyx_rh": (1.0, 1.0, 1.0),
}
DEFAULT_CONVENTION = "ue_lh_zup"

FORWARD, RIGHT, UP = 0, 1, 2

_UNIT_TOL = 2.0 ** -50
_NORM_TOL = 1e-6
_GIMBAL_TOL = 1e-10


def _convention_signs(convention):
    try:
        return CONVENTIONS[convention]
    except KeyError:
        raise ValueError(f"unknown rotation convention {convention!r}; "
                         f"expected one of {sorted(CONVENTIONS)}") from None


# --------------------------------------------------------------------------
# quaternion / matrix conversion (batched over leading axis)

def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R):
    """Shepperd's method (batched); returns quaternions with w >= 0."""
    R = np.asarray(R, dtype=float)
    m = R.reshape(-1, 3, 3)
    m00, m11, m22 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    tr = m00 + m11 + m22
    # pick the numerically largest of 4w^2, 4x^2, 4y^2, 4z^2
    case = np.argmax(np.stack([tr, m00, m11, m22], axis=1), axis=1)
    q = np.empty((len(m), 4))
    with np.errstate(invalid="ignore", divide="ignore"):
        diags = (1.0 + tr, 1.0 + m00 - m11 - m22, 1.0 - m00 + m11 - m22, 1.0 - m00 - m11 + m22)
        for k, diag in enumerate(diags):
            sel = case == k
            if not sel.any():
                continue
            mm = m[sel]
            s = 2.0 * np.sqrt(diag[sel])
            d21, d02, d10 = mm[:, 2, 1] - mm[:, 1, 2], mm[:, 0, 2] - mm[:, 2, 0], mm[:, 1, 0] - mm[:, 0, 1]
            a01, a02, a12 = mm[:, 0, 1] + mm[:, 1, 0], mm[:, 0, 2] + mm[:, 2, 0], mm[:, 1, 2] + mm[:, 2, 1]
            if k == 0:
                rows = (0.25 * s, d21 / s, d02 / s, d10 / s)
            elif k == 1:
                rows = (d21 / s, 0.25 * s, a01 / s, a02 / s)
            elif k == 2:
                rows = (d02 / s, a01 / s, 0.25 * s, a12 / s)
            else:
                rows = (d10 / s, a02 / s, a12 / s, 0.25 * s)
            q[sel] = np.stack(rows, axis=1)
    q[q[:, 0] < 0] *= -1.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(R.shape[:-2] + (4,))


def _unit_quat(q, record=None):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise PoseValidationError(f"quaternion must be 4 finite numbers, got {q!r}")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > _NORM_TOL:
        where = f" (frame {record})" if record is not None else ""
        raise PoseValidationError(f"rotation quaternion norm {n:.6g} is not unit{where}")
    # renormalise only when off by more than a few ulps so that
    # normalise(normalise(q)) == normalise(q) bit for bit
    if abs(n - 1.0) > _UNIT_TOL:
        q = q / n
    return q


def _unit_quats(Q):
    """Row-wise :func:`_unit_quat` for an ``(N, 4)`` array."""
    if not np.all(np.isfinite(Q)):
        bad = int(np.argmin(np.all(np.isfinite(Q), axis=1)))
        raise PoseValidationError(f"frame {bad}: non-finite quaternion")
    n = np.linalg.norm(Q, axis=1)
    off = np.abs(n - 1.0)
    if np.any(off > _NORM_TOL):
        bad = int(np.argmax(off))
        raise PoseValidationError(f"rotation quaternion norm {n[bad]:.6g} is not unit (frame {bad})")
    fix = off > _UNIT_TOL
    Q[fix] /= n[fix, None]
    return Q


# --------------------------------------------------------------------------
# Euler angles

@dataclass(frozen=True)
class EulerAngles:
    yaw: float
    pitch: float
    roll: float
    convention: str = DEFAULT_CONVENTION

    def as_array(self):
        return np.array([self.yaw, self.pitch, self.roll])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def compose_euler(yaw, pitch, roll, convention=DEFAULT_CONVENTION):
    """World-to-camera matrix of a camera rotated by (yaw, pitch, roll)."""
    sy, sp, sr = _convention_signs(convention)
    cam_to_world = _rz(sy * yaw) @ _ry(sp * pitch) @ _rx(sr * roll)
    return cam_to_world.T


def compose_euler_batch(angles, convention=DEFAULT_CONVENTION):
    """Vectorised :func:`compose_euler` over an ``(N, 3)`` array."""
    sy, sp, sr = _convention_signs(convention)
    angles = np.asarray(angles, dtype=float)
    y, p, r = sy * angles[:, 0], sp * angles[:, 1], sr * angles[:, 2]
    cy, syn = np.cos(y), np.sin(y)
    cp, spn = np.cos(p), np.sin(p)
    cr, srn = np.cos(r), np.sin(r)
    C = np.empty((len(angles), 3, 3))
    C[:, 0, 0] = cy * cp
    C[:, 0, 1] = cy * spn * srn - syn * cr
    C[:, 0, 2] = cy * spn * cr + syn * srn
    C[:, 1, 0] = syn * cp
    C[:, 1, 1] = syn * spn * srn + cy * cr
    C[:, 1, 2] = syn * spn * cr - cy * srn
    C[:, 2, 0] = -spn
    C[:, 2, 1] = cp * srn
    C[:, 2, 2] = cp * cr
    return np.swapaxes(C, 1, 2)


def _wrap_pi(a):
    # atan2 can return exactly -pi; the documented range is (-pi, pi]
    return np.where(a <= -math.pi, math.pi, a)


def euler_decompose_batch(R, convention=DEFAULT_CONVENTION, check=True):
    R = np.asarray(R, dtype=float)
    if check:
        dets = np.linalg.det(R)
        if np.any(dets <= 0):
            raise ReflectionError(f"rotation has non-positive determinant {dets.min():.6g}")
    sy, sp, sr = _convention_signs(convention)
    C = np.swapaxes(R, -1, -2)
    cos_p = np.hypot(C[..., 0, 0], C[..., 1, 0])
    pitch = np.arctan2(-C[..., 2, 0], cos_p)
    locked = cos_p < _GIMBAL_TOL
    yaw = np.where(locked, np.arctan2(-C[..., 0, 1], C[..., 1, 1]),
                   np.arctan2(C[..., 1, 0], C[..., 0, 0]))
    roll = np.where(locked, 0.0, np.arctan2(C[..., 2, 1], C[..., 2, 2]))
    out = np.stack([sy * _wrap_pi(yaw), sp * pitch, sr * _wrap_pi(roll)], axis=-1)
    out[..., 0] = _wrap_pi(out[..., 0])
    out[..., 2] = _wrap_pi(out[..., 2])
    return out + 0.0  # drop negative zeros


def euler_decompose(R, convention=DEFAULT_CONVENTION):
    """Split a world-to-camera rotation into yaw, pitch and roll (radians).

    At the gimbal singularity (|pitch| = pi/2) roll is pinned to zero and the
    remaining rotation is reported as yaw.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {R.shape}")
    y, p, r = euler_decompose_batch(R[None], convention)[0]
    return EulerAngles(float(y), float(p), float(r), convention)


def rotation_angle(R):
    """Geodesic angle of a rotation matrix (batched), accurate near zero."""
    R = np.asarray(R, dtype=float)
    skew = np.stack([R[..., 2, 1] - R[..., 1, 2],
                     R[..., 0, 2] - R[..., 2, 0],
                     R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    s = 0.5 * np.linalg.norm(skew, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


# --------------------------------------------------------------------------
# poses and trajectories

@dataclass(frozen=True, eq=False)
class CameraPose:
    position: np.ndarray
    quat: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise PoseValidationError(f"position must be 3 finite numbers, got {self.position!r}")
        if not math.isfinite(self.timestamp):
            raise PoseValidationError("timestamp must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quat", _unit_quat(self.quat))

    @classmethod
    def from_matrix(cls, position, R, timestamp=0.0):
        R = np.asarray(R, dtype=float)
        check_rotation(R)
        return cls(position, matrix_to_quat(R), timestamp)

    @classmethod
    def identity(cls, timestamp=0.0):
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), timestamp)

    @property
    def rotation(self):
        return quat_to_matrix(self.quat)

    def __repr__(self):
        return (f"CameraPose(position={self.position.tolist()}, "
                f"quat={self.quat.tolist()}, timestamp={self.timestamp})")


def check_rotation(R, tol=_NORM_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise PoseValidationError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise PoseValidationError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
    if np.linalg.det(R) <= 0:
        raise ReflectionError("rotation has non-positive determinant")


class Trajectory:
    """Ordered, timestamped camera poses for one clip.

    Stored column-wise (``positions`` (T, 3), ``quats`` (T, 4),
    ``timestamps`` (T,)); ``poses`` gives the per-frame :class:`CameraPose`
    view.
    """

    def __init__(self, positions, quats, timestamps, frame_rate, clip_id=""):
        positions = np.array(positions, dtype=float)
        quats = np.array(quats, dtype=float)
        timestamps = np.array(timestamps, dtype=float)
        n = len(positions)
        if n < 2:
            raise DegenerateClipError(f"trajectory needs at least 2 poses, got {n}")
        if positions.shape != (n, 3) or quats.shape != (n, 4) or timestamps.shape != (n,):
            raise PoseValidationError("positions, quats and timestamps must have matching lengths")
        if not (frame_rate > 0 and math.isfinite(frame_rate)):
            raise PoseValidationError(f"frame_rate must be positive, got {frame_rate}")
        if not np.all(np.isfinite(positions)) or not np.all(np.isfinite(timestamps)):
            raise PoseValidationError("non-finite position or timestamp")
        if np.any(np.diff(timestamps) <= 0):
            raise PoseValidationError("timestamps must be strictly increasing")
        quats = _unit_quats(quats)
        self.positions = positions
        self.quats = quats
        self.timestamps = timestamps
        self.frame_rate = float(frame_rate)
        self.clip_id = str(clip_id)

    @classmethod
    def from_poses(cls, poses, frame_rate, clip_id=""):
        poses = list(poses)
        return cls([p.position for p in poses], [p.quat for p in poses],
                   [p.timestamp for p in poses], frame_rate, clip_id)

    @classmethod
    def from_matrices(cls, positions, rotations, frame_rate, timestamps=None, clip_id=""):
        positions = np.asarray(positions, dtype=float)
        if timestamps is None:
            timestamps = np.arange(len(positions)) / frame_rate
        return cls(positions, matrix_to_quat(rotations), timestamps, frame_rate, clip_id)

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i):
        return CameraPose(self.positions[i], self.quats[i], float(self.timestamps[i]))

    @property
    def poses(self):
        return [self[i] for i in range(len(self))]

    @property
    def rotations(self):
        return quat_to_matrix(self.quats)

    @property
    def duration(self):
        return float(self.timestamps[-1] - self.timestamps[0]) + 1.0 / self.frame_rate

    def __repr__(self):
        return f"Trajectory(clip_id={self.clip_id!r}, frames={len(self)}, frame_rate={self.frame_rate})"


# --------------------------------------------------------------------------
# rigid motion

def relative_pose(a, b):
    """Camera-frame displacement and relative rotation from pose ``a`` to ``b``.

    Returns ``(R_a @ (P_b - P_a), R_b @ R_a.T)``.
    """
    Ra, Rb = a.rotation, b.rotation
    return Ra @ (b.position - a.position), Rb @ Ra.T


def relative_motion_batch(positions, rotations):
    """:func:`relative_pose` for every consecutive pair of a pose sequence."""
    dp_world = np.diff(positions, axis=0)
    dp_cam = np.einsum("tij,tj->ti", rotations[:-1], dp_world)
    dR = rotations[1:] @ np.swapaxes(rotations[:-1], 1, 2)
    return dp_cam, dR


def apply_relative(a, delta_translation, delta_rotation):
    """Inverse of :func:`relative_pose`: the pose reached from ``a``."""
    Ra = a.rotation
    return a.position + Ra.T @ delta_translation, delta_rotation @ Ra


# --------------------------------------------------------------------------
# annotation documents

def _load_document(raw):
    if isinstance(raw, dict):
        return raw
    if isinstance(raw, (bytes, bytearray)):
        raw = raw.decode("utf-8")
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a JSON document: {exc}") from None


def _parse_frame(i, rec, convention):
    if not isinstance(rec, dict):
        raise ParseError("frame must be an object", i)
    try:
        t = float(rec["t"])
        pos = [float(v) for v in rec["position"]]
        rot = rec["rotation"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or malformed field ({exc})", i) from None
    if len(pos) != 3:
        raise ParseError("position must have 3 components", i)
    if not isinstance(rot, dict):
        raise ParseError("rotation must be an object", i)
    if "quat" in rot:
        try:
            q = [float(v) for v in rot["quat"]]
        except (TypeError, ValueError):
            raise ParseError("quat must be 4 numbers", i) from None
        if len(q) != 4:
            raise ParseError("quat must be 4 numbers", i)
        try:
            q = _unit_quat(q, record=i)
        except PoseValidationError as exc:
            raise PoseValidationError(f"frame record {i}: {exc}") from None
    elif {"yaw", "pitch", "roll"} <= rot.keys():
        try:
            ang = [math.radians(float(rot[k])) for k in ("yaw", "pitch", "roll")]
        except (TypeError, ValueError):
            raise ParseError("yaw/pitch/roll must be numbers (degrees)", i) from None
        q = matrix_to_quat(compose_euler(*ang, convention=convention))
    else:
        raise ParseError("rotation needs 'quat' or 'yaw'/'pitch'/'roll'", i)
    return t, pos, q


def parse_annotation(raw):
    """Parse an annotation document (bytes, str or already-decoded dict)."""
    doc = _load_document(raw)
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    try:
        frame_rate = float(doc["frame_rate"])
        frames = doc["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or malformed top-level field ({exc})") from None
    if not isinstance(frames, list):
        raise ParseError("'frames' must be an array")
    convention = doc.get("convention", DEFAULT_CONVENTION)
    _convention_signs(convention)
    if len(frames) < 2:
        raise DegenerateClipError(f"clip has {len(frames)} frame(s); at least 2 required")
    parsed = [_parse_frame(i, rec, convention) for i, rec in enumerate(frames)]
    ts, pos, qs = zip(*parsed)
    return Trajectory(pos, qs, ts, frame_rate, clip_id=doc.get("clip_id", ""))


def trajectory_to_document(traj):
    doc = {"frame_rate": traj.frame_rate}
    if traj.clip_id:
        doc["clip_id"] = traj.clip_id
    doc["frames"] = [
        {"t": float(t), "position": [float(v) for v in p], "rotation": {"quat": [float(v) for v in q]}}
        for t, p, q in zip(traj.timestamps, traj.positions, traj.quats)
    ]
    return doc


def serialize_trajectory(traj):
    """Inverse of :func:`parse_annotation`; floats are written round-trip exact."""
    return json.dumps(trajectory_to_document(traj), separators=(",", ":")).encode("utf-8")


def load_trajectory(path):
    with open(path, "rb") as fh:
        return parse_annotation(fh.read())


def save_trajectory(traj, path):
    with open(path, "wb") as fh:
        fh.write(serialize_trajectory(traj))
