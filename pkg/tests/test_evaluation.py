import math

import numpy as np
import pytest

from relicforge.errors import RankError, ShapeError
from relicforge.evaluation import rpe, transform_trajectory, umeyama_sim3
from relicforge.synthetic import random_rotation, smooth_trajectory, straight_line
from relicforge.trajectory import Trajectory, compose_euler

# forward motion plus a yaw turn keeps every clip's positions non-collinear
CURVED = dict(active=[True, False, False, True, False, False])


def test_identity_alignment(rng):
    P = rng.normal(size=(20, 3))
    fit = umeyama_sim3(P, P)
    assert fit.scale == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(fit.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(fit.translation, 0, atol=1e-12)
    assert fit.residual_rms < 1e-12


def test_recovers_similarity(rng):
    for _ in range(200):
        P = rng.normal(scale=10, size=(int(rng.integers(3, 40)), 3))
        R = random_rotation(rng)
        s = float(rng.uniform(0.1, 10))
        t = rng.normal(scale=50, size=3)
        fit = umeyama_sim3(P, s * P @ R.T + t)
        assert abs(fit.scale - s) < 1e-9
        assert np.abs(fit.rotation - R).max() < 1e-9
        assert np.abs(fit.translation - t).max() < 1e-9
        assert fit.residual_rms < 1e-9
        assert np.linalg.det(fit.rotation) == pytest.approx(1, abs=1e-12)


def test_reflection_is_not_returned(rng):
    P = rng.normal(size=(30, 3))
    mirrored = P * np.array([1, 1, -1])
    fit = umeyama_sim3(P, mirrored)
    assert np.linalg.det(fit.rotation) == pytest.approx(1, abs=1e-12)
    assert fit.residual_rms > 1e-3


def test_noisy_residual_monte_carlo(rng):
    sigma = 1e-3
    for _ in range(100):
        P = rng.normal(scale=5, size=(60, 3))
        R = random_rotation(rng)
        Q = 1.5 * P @ R.T + rng.normal(size=3) + rng.normal(scale=sigma, size=P.shape)
        fit = umeyama_sim3(P, Q)
        assert 0.5 * sigma <= fit.residual_rms <= 2 * sigma


def test_degenerate_point_sets():
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(RankError):
        umeyama_sim3(line, line)
    with pytest.raises(RankError):
        umeyama_sim3(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        umeyama_sim3(np.zeros((4, 3)), np.zeros((5, 3)))


def test_rpe_identity(rng):
    traj = smooth_trajectory(rng, 40, **CURVED)
    rep = rpe(traj, traj)
    assert rep.rpe_trans < 1e-9 and rep.rpe_rot < 1e-6


def test_rpe_invariant_to_similarity(rng):
    for _ in range(20):
        ref = smooth_trajectory(rng, 50, **CURVED)
        est = smooth_trajectory(rng, 50, **CURVED)
        base = rpe(ref, est)
        moved = transform_trajectory(est, float(rng.uniform(0.2, 5)), random_rotation(rng),
                                     rng.normal(scale=100, size=3))
        again = rpe(ref, moved)
        assert abs(again.rpe_trans - base.rpe_trans) < 1e-9
        assert abs(again.rpe_rot - base.rpe_rot) < 1e-9
        same = rpe(ref, transform_trajectory(ref, 2.0, random_rotation(rng), np.ones(3)))
        assert same.rpe_trans < 1e-9 and same.rpe_rot < 1e-6


def test_rpe_trans_invariant_to_joint_scaling(rng):
    ref, est = smooth_trajectory(rng, 30), smooth_trajectory(rng, 30)
    a = rpe(ref, est, align=False)
    s = 7.0
    scale = lambda t: Trajectory(t.positions * s, t.quats, t.timestamps, t.frame_rate)  # noqa: E731
    b = rpe(scale(ref), scale(est), align=False)
    assert b.rpe_trans == pytest.approx(a.rpe_trans, abs=1e-9)
    assert b.rpe_rot == pytest.approx(a.rpe_rot, abs=1e-9)


@pytest.mark.parametrize("beta", [1e-3, 0.01, 0.2])
def test_constant_yaw_bias(beta):
    n = 25
    ref = straight_line(n, step=5.0)
    R = np.array([compose_euler(beta * t, 0, 0) for t in range(n)])
    est = Trajectory.from_matrices(ref.positions, R, ref.frame_rate)
    rep = rpe(ref, est, align=False)
    assert abs(rep.rpe_rot - math.degrees(beta)) < 1e-9


def test_length_mismatch(rng):
    with pytest.raises(ShapeError):
        rpe(smooth_trajectory(rng, 10), smooth_trajectory(rng, 11))
