import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpsar.core import (Pose3, PoseSeries, Rot3, batch_exp, batch_log, matrices_to_quats,
                        quats_to_matrices, right_jacobian, right_jacobian_inv, skew, so3_exp,
                        so3_log_matrix, wrap_angle)

vec3 = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def _rodrigues_oracle(w):
    """Rotation matrix from the axis-angle series sum_k [w]^k / k! (independent of Rodrigues)."""
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    out, term = np.eye(3), np.eye(3)
    for k in range(1, 40):
        term = term @ K / k
        out = out + term
    return out


def test_exp_zero_is_identity():
    assert np.array_equal(so3_exp([0, 0, 0]).matrix, np.eye(3))


def test_quarter_turn_about_z_maps_x_to_y():
    R = so3_exp([0, 0, math.pi / 2])
    assert np.allclose(R.rotate([1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_log_exp_roundtrip_at_norm_0_3():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w = rng.normal(size=3)
        w *= 0.3 / np.linalg.norm(w)
        assert np.max(np.abs(so3_exp(w).log() - w)) < 1e-12


@given(vec3)
def test_exp_matches_power_series(w):
    w = 3.0 * w
    assert np.allclose(so3_exp(w).matrix, _rodrigues_oracle(w), atol=1e-12)


def test_small_angle_branch():
    w = np.array([1e-10, -2e-10, 5e-11])
    assert np.allclose(so3_exp(w).matrix, np.eye(3) + skew(w), atol=1e-18)
    assert np.allclose(so3_exp(w).log(), w, rtol=1e-9, atol=0)


def test_skew_examples():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(skew([0, 0, 1]) @ [1, 0, 0], [0, 1, 0])
    rng = np.random.default_rng(2)
    for _ in range(100):
        v, w = rng.normal(size=(2, 3))
        assert np.max(np.abs(skew(v) @ w - np.cross(v, w))) < 1e-15


@settings(max_examples=200)
@given(vec3, vec3)
def test_rotation_invariants_after_composition(a, b):
    R = (Rot3.exp(3 * a) @ Rot3.exp(3 * b)).matrix
    assert np.max(np.abs(R @ R.T - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=200)
@given(vec3)
def test_log_exp_inside_pi(w):
    n = np.linalg.norm(w)
    if n > 0:
        w = w / n * min(n * 3.0, math.pi - 1e-3)
    assert np.allclose(Rot3.exp(w).log(), w, atol=1e-9)


def test_log_near_pi():
    w = np.array([0.0, 0.0, math.pi - 1e-7])
    assert np.allclose(so3_log_matrix(so3_exp(w).matrix), w, atol=1e-6)


def test_pose_inverse_and_associativity():
    rng = np.random.default_rng(3)
    for _ in range(50):
        T = [Pose3(Rot3.exp(rng.normal(size=3)), rng.normal(size=3)) for _ in range(3)]
        I = T[0] @ T[0].inverse()
        assert np.allclose(I.matrix, np.eye(4), atol=1e-9)
        lhs = ((T[0] @ T[1]) @ T[2]).matrix
        rhs = (T[0] @ (T[1] @ T[2])).matrix
        assert np.allclose(lhs, rhs, atol=1e-9)
        assert np.allclose(T[0].matrix @ T[1].matrix, (T[0] @ T[1]).matrix, atol=1e-12)


def test_right_jacobian_first_order():
    rng = np.random.default_rng(4)
    for _ in range(20):
        phi, d = rng.normal(size=3) * 0.5, rng.normal(size=3) * 1e-6
        lhs = so3_exp(phi + d).matrix
        rhs = so3_exp(phi).matrix @ so3_exp(right_jacobian(phi) @ d).matrix
        assert np.max(np.abs(lhs - rhs)) < 1e-11
        assert np.allclose(right_jacobian(phi) @ right_jacobian_inv(phi), np.eye(3), atol=1e-12)


def test_batch_functions_agree_with_scalar():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(30, 3))
    R = batch_exp(w)
    for k in range(30):
        assert np.allclose(R[k], so3_exp(w[k]).matrix, atol=1e-14)
    assert np.allclose(batch_log(R), np.array([so3_exp(x).log() for x in w]), atol=1e-12)
    assert np.allclose(quats_to_matrices(matrices_to_quats(R)), R, atol=1e-14)


def test_wrap_angle_range():
    a = np.linspace(-20, 20, 1001)
    w = wrap_angle(a)
    assert np.all(w > -math.pi - 1e-15) and np.all(w <= math.pi + 1e-15)
    assert np.allclose(np.cos(w), np.cos(a)) and np.allclose(np.sin(w), np.sin(a))
    assert wrap_angle(2 * math.pi - 0.1) == pytest.approx(-0.1)


def test_pose_series_interpolation_exact_at_samples_and_midpoint():
    t = np.array([0.0, 1.0, 2.0])
    q = matrices_to_quats(batch_exp(np.array([[0, 0, 0], [0, 0, 0.4], [0, 0, 0.8]])))
    ps = PoseSeries(t, np.array([[0, 0, 0], [1, 0, 0], [2, 2, 0]]), q)
    at = ps.interpolate(t)
    assert np.array_equal(at.quat, q) and np.array_equal(at.position, ps.position)
    mid = ps.interpolate([0.5])
    assert np.allclose(mid.position, [[0.5, 0, 0]])
    assert np.allclose(Rot3(mid.quat[0]).log(), [0, 0, 0.2], atol=1e-12)
    with pytest.raises(ValueError):
        ps.interpolate([2.5])
