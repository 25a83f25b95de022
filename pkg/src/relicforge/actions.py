"""13-slot camera action labels: extraction from trajectories and integration back to poses.

Slot layout (all entries non-negative)::

    0 dolly_in   1 dolly_out    2 truck_left  3 truck_right
    4 pedestal_up 5 pedestal_down 6 tilt_up   7 tilt_down
    8 pan_left   9 pan_right   10 roll_cw    11 roll_ccw   12 static

Translational slots are displacement ratios (camera-frame displacement over
the clip's mean displacement); rotational slots are radians per frame.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ActionConflictError, ActionInvariantError, ParseError
from .trajectory import (
    DEFAULT_CONVENTION,
    Trajectory,
    compose_euler_batch,
    euler_decompose_batch,
    matrix_to_quat,
    relative_motion_batch,
)

SLOTS = (
    "dolly_in", "dolly_out", "truck_left", "truck_right",
    "pedestal_up", "pedestal_down", "tilt_up", "tilt_down",
    "pan_left", "pan_right", "roll_cw", "roll_ccw", "static",
)
SLOT_INDEX = {name: i for i, name in enumerate(SLOTS)}
STATIC = SLOT_INDEX["static"]
N_SLOTS = len(SLOTS)

# signed motion axes (forward, right, up, yaw, pitch, roll) -> (positive slot, negative slot)
SIGNED_AXES = (
    (SLOT_INDEX["dolly_in"], SLOT_INDEX["dolly_out"]),
    (SLOT_INDEX["truck_right"], SLOT_INDEX["truck_left"]),
    (SLOT_INDEX["pedestal_up"], SLOT_INDEX["pedestal_down"]),
    (SLOT_INDEX["pan_right"], SLOT_INDEX["pan_left"]),
    (SLOT_INDEX["tilt_up"], SLOT_INDEX["tilt_down"]),
    (SLOT_INDEX["roll_cw"], SLOT_INDEX["roll_ccw"]),
)
OPPOSING_PAIRS = tuple((SLOTS[p], SLOTS[n]) for p, n in SIGNED_AXES)
TRANSLATION_SLOTS = frozenset(SLOTS[i] for pair in SIGNED_AXES[:3] for i in pair)

DEFAULT_ANGULAR_STEP = math.radians(1.0)


@dataclass(frozen=True)
class StaticThresholds:
    """Magnitudes below which a component counts as no motion."""
    translation: float = 0.05              # normalised displacement units
    rotation: float = math.radians(0.1)    # radians per frame

    def __post_init__(self):
        if not (self.translation > 0 and self.rotation > 0):
            raise ValueError("static thresholds must be positive")


@dataclass
class ActionSequence:
    actions: np.ndarray          # (T, 13)
    mean_displacement: float
    source_frame_rate: float
    degenerate: bool = False

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float)
        if self.actions.ndim != 2 or self.actions.shape[1] != N_SLOTS or len(self.actions) < 2:
            raise ActionInvariantError(f"expected (T>=2, 13) actions, got {self.actions.shape}")
        if not self.mean_displacement > 0:
            raise ActionInvariantError("mean_displacement must be positive")

    def __len__(self):
        return len(self.actions)


def check_action_vector(a):
    """Raise :class:`ActionInvariantError` unless ``a`` is a valid 13-slot action."""
    a = np.asarray(a, dtype=float)
    if a.shape != (N_SLOTS,):
        raise ActionInvariantError(f"action vector must have 13 entries, got {a.shape}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ActionInvariantError("action entries must be finite and non-negative")
    for p, n in SIGNED_AXES:
        if a[p] > 0 and a[n] > 0:
            raise ActionInvariantError(f"both {SLOTS[p]} and {SLOTS[n]} are active")
    moving = np.any(a[:STATIC] > 0)
    if a[STATIC] not in (0.0, 1.0):
        raise ActionInvariantError("static slot must be 0 or 1")
    if a[STATIC] == 1.0 and moving:
        raise ActionInvariantError("static action carries motion")
    if a[STATIC] == 0.0 and not moving:
        raise ActionInvariantError("non-static action has no motion")


def signed_to_slots(signed):
    """(N, 6) signed motions -> (N, 13) slot vectors, static set where all are zero."""
    signed = np.asarray(signed, dtype=float)
    out = np.zeros((len(signed), N_SLOTS))
    for axis, (p, n) in enumerate(SIGNED_AXES):
        v = signed[:, axis]
        out[:, p] = np.where(v > 0, v, 0.0)
        out[:, n] = np.where(v < 0, -v, 0.0)
    out[:, STATIC] = np.where(np.any(signed != 0, axis=1), 0.0, 1.0)
    return out + 0.0


def check_actions(actions):
    """Vectorised :func:`check_action_vector` over a ``(T, 13)`` array."""
    a = np.asarray(actions, dtype=float)
    if a.ndim != 2 or a.shape[1] != N_SLOTS:
        raise ActionInvariantError(f"expected (T, 13) actions, got {a.shape}")
    moving = np.any(a[:, :STATIC] > 0, axis=1)
    bad = (np.any(a < 0, axis=1) | ~np.all(np.isfinite(a), axis=1)
           | ~np.isin(a[:, STATIC], (0.0, 1.0))
           | ((a[:, STATIC] == 1.0) & moving) | ((a[:, STATIC] == 0.0) & ~moving))
    for p, n in SIGNED_AXES:
        bad |= (a[:, p] > 0) & (a[:, n] > 0)
    if bad.any():
        row = int(np.argmax(bad))
        try:
            check_action_vector(a[row])
        except ActionInvariantError as exc:
            raise ActionInvariantError(f"frame {row}: {exc}") from None


def slots_to_signed(actions):
    actions = np.asarray(actions, dtype=float)
    check_actions(actions)
    return np.stack([actions[:, p] - actions[:, n] for p, n in SIGNED_AXES], axis=1)


def extract_actions(traj: Trajectory, thresholds=None, convention=DEFAULT_CONVENTION):
    """Per-frame action labels for a trajectory.

    Frame 0 is a prepended static action; frame ``k`` describes the motion
    from frame ``k-1`` to ``k``.  A clip with no translation at all falls
    back to ``mean_displacement = 1``; a clip with no motion at all is
    returned all-static with ``degenerate=True`` and a ``RuntimeWarning``.
    """
    thresholds = thresholds or StaticThresholds()
    R = traj.rotations
    dp_cam, dR = relative_motion_batch(traj.positions, R)
    mags = np.linalg.norm(dp_cam, axis=1)
    moving = mags > 0
    d_bar = float(mags[moving].mean()) if moving.any() else 1.0

    trans = dp_cam / d_bar
    rot = euler_decompose_batch(dR, convention)
    trans[np.abs(trans) < thresholds.translation] = 0.0
    rot[np.abs(rot) < thresholds.rotation] = 0.0
    slots = signed_to_slots(np.concatenate([trans, rot], axis=1))

    first = np.zeros((1, N_SLOTS))
    first[0, STATIC] = 1.0
    actions = np.concatenate([first, slots])
    degenerate = bool(np.all(actions[:, STATIC] == 1.0))
    if degenerate:
        warnings.warn(f"clip {traj.clip_id or '<unnamed>'} has no camera motion; "
                      "emitting all-static actions with mean displacement 1",
                      RuntimeWarning, stacklevel=2)
    return ActionSequence(actions, d_bar, traj.frame_rate, degenerate)


def integrate_poses(seq: ActionSequence, gamma, initial, convention=DEFAULT_CONVENTION):
    """Rebuild absolute poses from relative actions.

    ``R_k = dR_k @ R_{k-1}`` and ``P_k = P_{k-1} + R_{k-1}.T @ (gamma * d_k)``,
    where ``d_k`` is the signed translation of action ``k``; the first
    action is ignored (it is the prepended static frame).
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    signed = slots_to_signed(seq.actions)
    n = len(signed)
    dR = compose_euler_batch(signed[:, 3:], convention)
    P = np.empty((n, 3))
    R = np.empty((n, 3, 3))
    P[0] = initial.position
    R[0] = initial.rotation
    for k in range(1, n):
        P[k] = P[k - 1] + R[k - 1].T @ (gamma * signed[k, :3])
        R[k] = dR[k] @ R[k - 1]
    ts = initial.timestamp + np.arange(n) / seq.source_frame_rate
    return Trajectory(P, matrix_to_quat(R), ts, seq.source_frame_rate)


def multihot_from_keys(pressed, gamma=1.0, angular_step=DEFAULT_ANGULAR_STEP):
    """Action vector for a set of held keys (slot names)."""
    pressed = set(pressed)
    unknown = pressed - set(SLOTS[:STATIC])
    if unknown:
        raise ValueError(f"unknown action names: {sorted(unknown)}")
    for pair in OPPOSING_PAIRS:
        if pair[0] in pressed and pair[1] in pressed:
            raise ActionConflictError(pair)
    a = np.zeros(N_SLOTS)
    for name in pressed:
        a[SLOT_INDEX[name]] = gamma if name in TRANSLATION_SLOTS else angular_step
    if not pressed:
        a[STATIC] = 1.0
    return a


# --------------------------------------------------------------------------
# line-delimited action documents

def dumps_actions(seq: ActionSequence, gamma=None):
    header = {
        "mean_displacement": seq.mean_displacement,
        "gamma": seq.mean_displacement if gamma is None else float(gamma),
        "source_frame_rate": seq.source_frame_rate,
        "frames": len(seq),
        "degenerate": seq.degenerate,
    }
    lines = [json.dumps(header)]
    for k, a in enumerate(seq.actions):
        lines.append(json.dumps({"frame": k, "a": [float(v) for v in a], "static": bool(a[STATIC] == 1.0)}))
    return "\n".join(lines) + "\n"


def loads_actions(text):
    """Parse :func:`dumps_actions` output; returns ``(ActionSequence, gamma)``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty action document")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON line: {exc}") from None
    actions = []
    for i, rec in enumerate(rows):
        if rec.get("frame") != i or len(rec.get("a", ())) != N_SLOTS:
            raise ParseError("expected consecutive frames with 13 action values", i)
        actions.append(rec["a"])
    seq = ActionSequence(np.array(actions), float(header["mean_displacement"]),
                         float(header["source_frame_rate"]), bool(header.get("degenerate", False)))
    return seq, float(header.get("gamma", seq.mean_displacement))
