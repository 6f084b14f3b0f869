import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cinearm.arm import (
    HomeOffsets,
    WRIST_MATRIX,
    apply_home_offsets,
    check_joint_limits,
    default_robot_model,
    fk_batch,
    forward_kinematics,
    jacobian,
    max_reach_estimate,
    record_home,
    unapply_home_offsets,
    verify_model,
    wrist_joint_to_motor,
    wrist_motor_to_joint,
)
from cinearm.geometry import quat_rotate

MODEL = default_robot_model()


def random_in_limits(rng, n=1):
    lo, hi = MODEL.joint_limits[:, 0], MODEL.joint_limits[:, 1]
    q = rng.uniform(lo, hi, size=(n, 6))
    return q[0] if n == 1 else q


# --- forward kinematics -------------------------------------------------------

def test_fk_upright_is_stacked_translation():
    ee, links = forward_kinematics(MODEL, np.zeros(6))
    np.testing.assert_allclose(ee.position, [0.0, 0.0, 0.94], atol=1e-12)
    np.testing.assert_allclose(ee.orientation, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert len(links) == 6


def test_fk_base_yaw_pi_mirrors_through_z():
    rng = np.random.default_rng(7)
    q = random_in_limits(rng)
    q[0] = 0.0
    p0 = forward_kinematics(MODEL, q)[0].position
    q[0] = np.pi
    p1 = forward_kinematics(MODEL, q)[0].position
    np.testing.assert_allclose(p1, [-p0[0], -p0[1], p0[2]], atol=1e-9)


def test_fk_base_yaw_equivariance():
    rng = np.random.default_rng(8)
    for _ in range(20):
        q = random_in_limits(rng)
        delta = rng.uniform(-1.0, 1.0)
        p0 = forward_kinematics(MODEL, q)[0].position
        q2 = q.copy()
        q2[0] = q[0] + delta
        p1 = forward_kinematics(MODEL, q2)[0].position
        c, s = np.cos(delta), np.sin(delta)
        Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        np.testing.assert_allclose(p1, Rz @ p0, atol=1e-9)


def test_fk_workspace_bound():
    # brute-force workspace bound: no sampled config exceeds the configured reach
    rng = np.random.default_rng(9)
    Q = random_in_limits(rng, n=100)
    _, _, _, cam_p = fk_batch(MODEL, Q)
    assert np.all(np.linalg.norm(cam_p, axis=1) <= MODEL.reach + 1e-6)


def test_fk_deterministic():
    q = np.array([0.4, -0.9, 1.2, 0.3, -0.6, 2.0])
    a = forward_kinematics(MODEL, q)[0]
    b = forward_kinematics(MODEL, q)[0]
    assert np.array_equal(a.position, b.position)
    assert np.array_equal(a.orientation, b.orientation)


def test_fk_rejects_non_finite():
    q = np.zeros(6)
    q[2] = np.nan
    with pytest.raises(ValueError):
        forward_kinematics(MODEL, q)


def test_fk_batch_matches_scalar():
    rng = np.random.default_rng(10)
    Q = random_in_limits(rng, n=25)
    link_R, link_p, cam_R, cam_p = fk_batch(MODEL, Q)
    for i in range(25):
        ee, links = forward_kinematics(MODEL, Q[i])
        np.testing.assert_allclose(cam_p[i], ee.position, atol=1e-12)
        for j in range(6):
            np.testing.assert_allclose(link_p[i, j], links[j].position, atol=1e-12)


# --- Jacobian ------------------------------------------------------------------

def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    eps = 1e-6
    for _ in range(100):
        q = random_in_limits(rng)
        J = jacobian(MODEL, q)
        for i in range(6):
            qp, qm = q.copy(), q.copy()
            qp[i] += eps
            qm[i] -= eps
            dp = (forward_kinematics(MODEL, qp)[0].position
                  - forward_kinematics(MODEL, qm)[0].position) / (2 * eps)
            np.testing.assert_allclose(J[:3, i], dp, atol=1e-5)


def test_jacobian_angular_columns_are_world_axes():
    rng = np.random.default_rng(12)
    q = random_in_limits(rng)
    J = jacobian(MODEL, q)
    # joint 1 axis is world z regardless of configuration
    np.testing.assert_allclose(J[3:, 0], [0, 0, 1], atol=1e-12)
    # angular columns are unit vectors
    np.testing.assert_allclose(np.linalg.norm(J[3:], axis=0), 1.0, atol=1e-12)


def test_jacobian_singular_at_stretch():
    J = jacobian(MODEL, np.zeros(6))
    sv = np.linalg.svd(J, compute_uv=False)
    assert sv[-1] < 1e-3 * sv[0]


# --- differential wrist ---------------------------------------------------------

def test_wrist_zero_maps_to_zero():
    assert wrist_motor_to_joint(0.0, 0.0) == (0.0, 0.0)


def test_wrist_common_mode_is_pitch():
    pitch, roll = wrist_motor_to_joint(0.4, 0.4)
    assert pitch == pytest.approx(0.4)
    assert roll == pytest.approx(0.0)


@settings(max_examples=200)
@given(
    m5=st.floats(-10, 10, allow_nan=False),
    m6=st.floats(-10, 10, allow_nan=False),
)
def test_wrist_round_trip(m5, m6):
    pitch, roll = wrist_motor_to_joint(m5, m6)
    b5, b6 = wrist_joint_to_motor(pitch, roll)
    assert abs(b5 - m5) < 1e-12
    assert abs(b6 - m6) < 1e-12


def test_wrist_matrix_determinant():
    assert np.linalg.det(WRIST_MATRIX) == pytest.approx(-0.5)


# --- homing ----------------------------------------------------------------------

def test_homing_upright_raw_gives_zero_config():
    raw_upright = np.array([0.11, -0.23, 0.05, 0.4, -0.1, 0.2])
    offsets = record_home(raw_upright)
    q, violations = apply_home_offsets(MODEL, raw_upright, offsets)
    np.testing.assert_allclose(q, 0.0, atol=1e-15)
    assert violations == []


def test_homing_zero_offsets_passthrough_on_arm_joints():
    raw = np.array([0.3, -0.2, 0.9, -1.0, 0.0, 0.0])
    q, _ = apply_home_offsets(MODEL, raw, HomeOffsets())
    np.testing.assert_allclose(q[:4], raw[:4], atol=1e-15)


def test_homing_round_trip():
    rng = np.random.default_rng(13)
    for _ in range(50):
        offsets = HomeOffsets(offsets=rng.normal(size=6))
        raw = rng.normal(size=6)
        q, _ = apply_home_offsets(MODEL, raw, offsets)
        back = unapply_home_offsets(MODEL, q, offsets)
        np.testing.assert_allclose(back, raw, atol=1e-12)


def test_homing_flags_out_of_limit():
    offsets = HomeOffsets()
    raw = np.zeros(6)
    raw[2] = 2.5  # beyond the 2.4 rad elbow limit
    q, violations = apply_home_offsets(MODEL, raw, offsets)
    assert violations == [(2, pytest.approx(0.1))]
    assert q[2] == pytest.approx(2.5)  # flagged, not clamped


# --- joint limits ------------------------------------------------------------------

def test_limits_exact_bound_is_ok():
    q = MODEL.joint_limits[:, 0].copy()
    assert check_joint_limits(MODEL, q) == []


def test_limits_excess_reported():
    q = np.zeros(6)
    q[3] = MODEL.joint_limits[3, 1] + 0.1
    violations = check_joint_limits(MODEL, q)
    assert len(violations) == 1
    assert violations[0][0] == 3
    assert violations[0][1] == pytest.approx(0.1)


def test_limits_fuzz_against_scalar_loop():
    rng = np.random.default_rng(14)
    for _ in range(200):
        q = rng.uniform(-4, 4, size=6)
        got = check_joint_limits(MODEL, q)
        expected = []
        for i in range(6):
            lo, hi = MODEL.joint_limits[i]
            if q[i] < lo:
                expected.append((i, lo - q[i]))
            elif q[i] > hi:
                expected.append((i, q[i] - hi))
        assert got == expected


# --- model invariants ----------------------------------------------------------------

def test_model_reach_invariant():
    verify_model(MODEL)
    assert abs(max_reach_estimate(MODEL) - MODEL.reach) <= 0.02 * MODEL.reach


def test_capsule_endpoints_shape():
    assert MODEL._cap_p0.shape == MODEL._cap_p1.shape
    assert len(MODEL._cap_r) == len(MODEL._cap_link)


def test_camera_mount_rides_last_link():
    rng = np.random.default_rng(15)
    q = random_in_limits(rng)
    ee, links = forward_kinematics(MODEL, q)
    mount = MODEL.camera_mount
    np.testing.assert_allclose(
        ee.position,
        links[5].position + quat_rotate(links[5].orientation, mount.pos),
        atol=1e-9,
    )
