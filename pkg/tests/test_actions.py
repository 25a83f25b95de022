import math
import warnings

import numpy as np
import pytest

from relicforge.actions import (
    DEFAULT_ANGULAR_STEP,
    N_SLOTS,
    SLOT_INDEX,
    STATIC,
    ActionSequence,
    check_action_vector,
    dumps_actions,
    extract_actions,
    integrate_poses,
    loads_actions,
    multihot_from_keys,
)
from relicforge.errors import ActionConflictError, ActionInvariantError
from relicforge.synthetic import random_rotation, smooth_trajectory, static_clip, straight_line
from relicforge.trajectory import CameraPose, Trajectory, compose_euler, matrix_to_quat


def _static_vec():
    a = np.zeros(N_SLOTS)
    a[STATIC] = 1
    return a


def test_static_clip_is_degenerate():
    with pytest.warns(RuntimeWarning):
        seq = extract_actions(static_clip(10))
    assert len(seq) == 10
    assert seq.mean_displacement == 1.0
    assert seq.degenerate
    np.testing.assert_array_equal(seq.actions, np.tile(_static_vec(), (10, 1)))


def test_straight_line_is_unit_dolly():
    seq = extract_actions(straight_line(20, step=7.5))
    np.testing.assert_array_equal(seq.actions[0], _static_vec())
    expect = np.zeros(N_SLOTS)
    expect[SLOT_INDEX["dolly_in"]] = 1.0
    for a in seq.actions[1:]:
        np.testing.assert_array_equal(a, expect)
    assert seq.mean_displacement == pytest.approx(7.5, rel=1e-15)


def test_straight_line_with_rotated_camera():
    # same motion seen along the camera's own forward axis
    R = compose_euler(0.7, 0.2, -0.1)
    fwd = R.T @ np.array([1.0, 0.0, 0.0])
    P = np.outer(np.arange(12), 3.0 * fwd)
    traj = Trajectory.from_matrices(P, np.tile(R, (12, 1, 1)), 16)
    seq = extract_actions(traj)
    np.testing.assert_allclose(seq.actions[1:, SLOT_INDEX["dolly_in"]], 1.0, atol=1e-12)


@pytest.mark.parametrize("name,signed", [
    ("pan_right", (0.02, 0, 0)), ("pan_left", (-0.02, 0, 0)),
    ("tilt_up", (0, 0.02, 0)), ("tilt_down", (0, -0.02, 0)),
    ("roll_cw", (0, 0, 0.02)), ("roll_ccw", (0, 0, -0.02)),
])
def test_rotation_routing(name, signed):
    R = [np.eye(3)]
    for _ in range(5):
        R.append(compose_euler(*signed) @ R[-1])
    P = np.outer(np.arange(6), [1.0, 0, 0])
    seq = extract_actions(Trajectory.from_matrices(P, np.array(R), 16))
    np.testing.assert_allclose(seq.actions[1:, SLOT_INDEX[name]], 0.02, atol=1e-12)


@pytest.mark.parametrize("name,vec", [
    ("dolly_out", (-1, 0, 0)), ("truck_right", (0, 1, 0)), ("truck_left", (0, -1, 0)),
    ("pedestal_up", (0, 0, 1)), ("pedestal_down", (0, 0, -1)),
])
def test_translation_routing(name, vec):
    P = np.outer(np.arange(6), vec)
    seq = extract_actions(Trajectory.from_matrices(P, np.tile(np.eye(3), (6, 1, 1)), 16))
    np.testing.assert_allclose(seq.actions[1:, SLOT_INDEX[name]], 1.0, atol=1e-15)


def test_thresholds_zero_small_components():
    P = np.array([[0, 0, 0], [1, 0.01, 0], [2, 0.02, 0], [3, 0.03, 0.0]])
    seq = extract_actions(Trajectory.from_matrices(P, np.tile(np.eye(3), (4, 1, 1)), 16))
    assert np.all(seq.actions[1:, SLOT_INDEX["truck_right"]] == 0)


def test_pure_rotation_uses_fallback_displacement():
    R = [np.eye(3)]
    for _ in range(4):
        R.append(compose_euler(0.1, 0, 0) @ R[-1])
    seq = extract_actions(Trajectory.from_matrices(np.zeros((5, 3)), np.array(R), 16))
    assert seq.mean_displacement == 1.0 and not seq.degenerate


def _round_trip_error(traj):
    seq = extract_actions(traj)
    rec = integrate_poses(seq, seq.mean_displacement, traj[0])
    return max(np.abs(rec.positions - traj.positions).max(),
               np.abs(rec.rotations - traj.rotations).max())


def test_round_trip_forward_and_quarter_turn():
    n = 30
    yaw_step = (math.pi / 2) / (n - 1)
    R = [np.eye(3)]
    P = [np.zeros(3)]
    for _ in range(n - 1):
        P.append(P[-1] + R[-1].T @ np.array([10.0, 0, 0]))
        R.append(compose_euler(yaw_step, 0, 0) @ R[-1])
    traj = Trajectory.from_matrices(np.array(P), np.array(R), 16)
    assert _round_trip_error(traj) < 1e-9
    assert traj.rotations[-1] @ np.array([0, 1.0, 0]) == pytest.approx([1, 0, 0], abs=1e-12)


def test_round_trip_random_smooth(rng):
    for _ in range(50):
        traj = smooth_trajectory(rng, int(rng.integers(16, 128)))
        assert _round_trip_error(traj) < 1e-9


def test_scale_equivariance(rng):
    for _ in range(20):
        traj = smooth_trajectory(rng, 40)
        s = float(rng.uniform(0.01, 100))
        scaled = Trajectory(traj.positions * s, traj.quats, traj.timestamps, traj.frame_rate)
        a, b = extract_actions(traj), extract_actions(scaled)
        np.testing.assert_allclose(a.actions, b.actions, rtol=0, atol=1e-12)
        assert b.mean_displacement == pytest.approx(s * a.mean_displacement, rel=1e-12)


def test_emitted_vectors_satisfy_invariants(rng):
    for _ in range(20):
        seq = extract_actions(smooth_trajectory(rng, 64))
        for a in seq.actions:
            check_action_vector(a)


def test_integrate_all_static_keeps_initial(rng):
    start = CameraPose([1.0, -2.0, 3.0], matrix_to_quat(random_rotation(rng)))
    seq = ActionSequence(np.tile(_static_vec(), (6, 1)), 1.0, 16)
    rec = integrate_poses(seq, 2.0, start)
    for pose in rec.poses:
        np.testing.assert_array_equal(pose.position, start.position)
        np.testing.assert_allclose(pose.rotation, start.rotation, atol=1e-15)


def test_integrate_straight_line():
    d_bar = 2.5
    a = np.zeros(N_SLOTS)
    a[SLOT_INDEX["dolly_in"]] = 1.0
    n = 12
    seq = ActionSequence(np.vstack([_static_vec(), np.tile(a, (n, 1))]), d_bar, 16)
    rec = integrate_poses(seq, d_bar, CameraPose.identity())
    np.testing.assert_allclose(rec.positions[-1], [n * d_bar, 0, 0], atol=1e-12)
    np.testing.assert_allclose(rec.rotations, np.tile(np.eye(3), (n + 1, 1, 1)), atol=1e-15)


def test_integrate_rejects_pair_violation():
    bad = _static_vec()
    bad[STATIC] = 0
    bad[SLOT_INDEX["pan_left"]] = bad[SLOT_INDEX["pan_right"]] = 0.1
    seq = ActionSequence(np.vstack([_static_vec(), bad]), 1.0, 16)
    with pytest.raises(ActionInvariantError):
        integrate_poses(seq, 1.0, CameraPose.identity())


def test_integrate_rejects_bad_gamma():
    seq = ActionSequence(np.tile(_static_vec(), (3, 1)), 1.0, 16)
    with pytest.raises(ValueError):
        integrate_poses(seq, 0.0, CameraPose.identity())


def test_multihot():
    np.testing.assert_array_equal(multihot_from_keys(set()), _static_vec())
    a = multihot_from_keys({"dolly_in", "pan_left"})
    assert a[SLOT_INDEX["dolly_in"]] == 1.0
    assert a[SLOT_INDEX["pan_left"]] == DEFAULT_ANGULAR_STEP
    assert a[STATIC] == 0 and np.count_nonzero(a) == 2
    check_action_vector(a)
    with pytest.raises(ActionConflictError) as err:
        multihot_from_keys({"dolly_in", "dolly_out"})
    assert set(err.value.pair) == {"dolly_in", "dolly_out"}
    with pytest.raises(ValueError):
        multihot_from_keys({"jump"})


def test_jsonl_round_trip(rng):
    seq = extract_actions(smooth_trajectory(rng, 20))
    text = dumps_actions(seq, gamma=3.0)
    again, gamma = loads_actions(text)
    assert gamma == 3.0
    np.testing.assert_array_equal(again.actions, seq.actions)
    assert again.mean_displacement == seq.mean_displacement
    assert len(text.splitlines()) == len(seq) + 1


def test_degenerate_warning_names_clip():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        extract_actions(static_clip(5, clip_id="still"))
    assert any("still" in str(w.message) for w in caught)
