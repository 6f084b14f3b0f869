import numpy as np
import pytest

from cinearm.arm import default_robot_model, forward_kinematics, Pose
from cinearm.control import solve_ik, IkParams
from cinearm.geometry import look_at_quat
from cinearm.metrics import (
    cartesian_jerk,
    framing_error,
    repeatability,
    srr,
    success,
    tracking_rmse,
    visual_alignment,
)
from cinearm.world import (
    CameraIntrinsics,
    FEAT_TARGET_U,
    FEAT_TARGET_V,
    FEAT_TARGET_VIS,
    FEATURE_DIM,
    ServoModel,
    SimState,
    default_scene,
    step,
)

MODEL = default_robot_model()
INTR = CameraIntrinsics()


# --- repeatability ---------------------------------------------------------------

def test_repeatability_identical_endpoints():
    pts = np.tile(np.array([[0.1, 0.2, 0.3]]), (5, 4, 1))
    mean_dev, max_dev = repeatability(pts)
    np.testing.assert_array_equal(mean_dev, np.zeros(4))
    np.testing.assert_array_equal(max_dev, np.zeros(4))


def test_repeatability_two_point_centroid():
    pts = np.zeros((2, 1, 3))
    pts[0, 0, 0] = -0.001
    pts[1, 0, 0] = 0.001
    mean_dev, _ = repeatability(pts)
    assert mean_dev[0] == pytest.approx(0.001)


def test_repeatability_matches_direct_recomputation():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 4, 3))
    mean_dev, max_dev = repeatability(pts)
    for w in range(4):
        centroid = pts[:, w].mean(axis=0)
        devs = np.linalg.norm(pts[:, w] - centroid, axis=1)
        assert mean_dev[w] == pytest.approx(devs.mean(), abs=1e-12)
        assert max_dev[w] == pytest.approx(devs.max(), abs=1e-12)


def test_repeatability_requires_two_runs():
    with pytest.raises(ValueError):
        repeatability(np.zeros((1, 4, 3)))


# --- tracking ---------------------------------------------------------------------

def test_tracking_zero_when_identical():
    t = np.linspace(0, 1, 100)
    path = np.column_stack([np.sin(t), np.cos(t), t])
    rmse, mx = tracking_rmse(t, path, t, path)
    assert rmse == pytest.approx(0.0, abs=1e-12)
    assert mx == pytest.approx(0.0, abs=1e-12)


def test_tracking_constant_offset():
    t = np.linspace(0, 1, 50)
    ref = np.column_stack([t, np.zeros(50), np.zeros(50)])
    ex = ref + np.array([0.0, 0.01, 0.0])
    rmse, mx = tracking_rmse(t, ref, t, ex)
    assert rmse == pytest.approx(0.01, abs=1e-12)
    assert mx == pytest.approx(0.01, abs=1e-12)


def test_tracking_rejects_disjoint_support():
    t1 = np.linspace(0, 1, 10)
    t2 = np.linspace(2, 3, 10)
    p = np.zeros((10, 3))
    with pytest.raises(ValueError):
        tracking_rmse(t1, p, t2, p)


def test_tracking_servo_lag_matches_analytic_model():
    # track a circle through the servo; RMSE should match the second-order
    # frequency-response prediction within 15%
    servo = ServoModel()
    w = servo.natural_frequency
    zeta = servo.damping_ratio
    radius, period = 0.5, 4.0
    omega = 2 * np.pi / period
    n = int(2 * period * servo.rate)
    t = np.arange(n) / servo.rate
    # per-joint sinusoid stands in for the Cartesian circle: joints are
    # independent second-order systems, so the lag math is exact per axis
    ref = np.zeros((n, 3))
    ref[:, 0] = radius * np.cos(omega * t)
    ref[:, 1] = radius * np.sin(omega * t)
    state = SimState.at_rest(np.array([radius, 0, 0, 0, 0, 0.0]))
    scene = default_scene(obstacle=False)
    qs = []
    for k in range(n):
        cmd = np.array([ref[k, 0], ref[k, 1], 0, 0, 0, 0.0])
        state = step(state, cmd, servo, MODEL, scene)
        qs.append(state.q[:2])
    qs = np.array(qs)
    exec_path = np.column_stack([qs, np.zeros(n)])
    # analytic: steady-state error magnitude |1 - H(jw)| * radius
    s = 1j * omega
    H = w**2 / (s**2 + 2 * zeta * w * s + w**2)
    predicted = abs(1 - H) * radius
    # skip the transient (first period)
    m = t > period
    rmse, _ = tracking_rmse(t[m], ref[m], t[m], exec_path[m])
    assert rmse == pytest.approx(predicted, rel=0.15)


# --- visual alignment ------------------------------------------------------------

def test_visual_alignment_identity():
    f = np.arange(1.0, FEATURE_DIM + 1)
    assert visual_alignment(f, f) == pytest.approx(1.0)


def test_visual_alignment_opposite():
    f = np.arange(1.0, FEATURE_DIM + 1)
    assert visual_alignment(f, -f) == pytest.approx(-1.0)


def test_visual_alignment_orthogonal():
    a = np.zeros(FEATURE_DIM)
    b = np.zeros(FEATURE_DIM)
    a[0] = 1.0
    b[1] = 1.0
    assert visual_alignment(a, b) == pytest.approx(0.0, abs=1e-12)


def test_visual_alignment_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=16), rng.normal(size=16)
    assert visual_alignment(a, b) == pytest.approx(visual_alignment(b, a), abs=1e-15)


def test_visual_alignment_rejects_zero():
    with pytest.raises(ValueError):
        visual_alignment(np.zeros(16), np.ones(16))


# --- success ------------------------------------------------------------------------

def test_success_collision_overrides():
    f = np.ones(16)
    assert success(collided=True, f_last=f, f_goal=f) is False


def test_success_above_threshold():
    g = np.ones(16)
    f = g + 0.01 * np.arange(16)  # cosine just under 1
    assert visual_alignment(f, g) > 0.86
    assert success(collided=False, f_last=f, f_goal=g) is True


def test_success_boundary_strict():
    # construct a pair with cosine exactly 0.85
    a = np.zeros(16)
    a[0] = 1.0
    b = np.zeros(16)
    b[0] = 0.85
    b[1] = np.sqrt(1 - 0.85**2)
    assert visual_alignment(a, b) == pytest.approx(0.85, abs=1e-12)
    assert success(collided=False, f_last=a, f_goal=b) is False


# --- jerk ----------------------------------------------------------------------------

def test_jerk_stationary_is_zero():
    joints = np.tile(np.array([0.3, 0.4, 0.5, 0.0, -0.2, 0.1]), (100, 1))
    assert cartesian_jerk(MODEL, joints, dt=0.005) == pytest.approx(0.0, abs=1e-9)


def test_jerk_requires_four_samples():
    with pytest.raises(ValueError):
        cartesian_jerk(MODEL, np.zeros((3, 6)), dt=0.005)


def test_jerk_cubic_path_analytic():
    # camera position follows p0 + c t^3 along a straight line with fixed
    # orientation: joint stream from the exact closed-form branch solver, so
    # the only error is discretization; mean jerk of a pure cubic is 6c
    from cinearm.control import _analytic_seeds
    from cinearm.geometry import quat_to_matrix

    c = 0.02
    dt = 0.005
    t = np.arange(300) * dt
    q0 = np.array([0.0, 0.6, 0.8, 0.0, 0.4, 0.0])
    ee = forward_kinematics(MODEL, q0)[0]
    R = quat_to_matrix(ee.orientation)
    direction = np.array([0.0, 1.0, 0.0])
    qs = [q0]
    for ti in t[1:]:
        pos = ee.position + c * ti**3 * direction
        seeds = _analytic_seeds(MODEL, pos, R)
        assert seeds, "cubic path left the analytic workspace"
        qs.append(min(seeds, key=lambda s: np.linalg.norm(s - qs[-1])))
    jerk = cartesian_jerk(MODEL, np.array(qs), dt)
    assert jerk == pytest.approx(6 * c, rel=0.10)


def test_jerk_time_dilation_scaling():
    rng = np.random.default_rng(2)
    # smooth random trajectory via cumulative low-pass noise
    n = 600
    raw = rng.normal(scale=1e-4, size=(n, 6))
    traj = np.cumsum(np.cumsum(raw, axis=0), axis=0) + np.array([0, 0.5, 0.7, 0, 0.3, 0])
    j1 = cartesian_jerk(MODEL, traj, dt=0.005)
    j2 = cartesian_jerk(MODEL, traj, dt=0.010)  # same samples, 2x slower
    assert j2 == pytest.approx(j1 / 8.0, rel=0.05)


def test_jerk_subsampling_stability():
    # smooth trajectory: subsampling by 2 changes mean jerk by < 20%
    t = np.linspace(0, 3, 600)
    qs = np.zeros((600, 6))
    qs[:, 0] = 0.3 * np.sin(t)
    qs[:, 1] = 0.5 + 0.1 * np.cos(t)
    qs[:, 2] = 0.8 + 0.05 * np.sin(2 * t)
    j_full = cartesian_jerk(MODEL, qs, dt=t[1] - t[0])
    j_half = cartesian_jerk(MODEL, qs[::2], dt=2 * (t[1] - t[0]))
    assert abs(j_half - j_full) / j_full < 0.20


# --- framing error -----------------------------------------------------------------

def test_framing_centered_target():
    f = np.zeros(16)
    f[FEAT_TARGET_VIS] = 1.0
    assert framing_error(f, INTR) == pytest.approx(0.0)


def test_framing_frame_edge_scaling():
    f = np.zeros(16)
    f[FEAT_TARGET_VIS] = 1.0
    f[FEAT_TARGET_U] = 1.0
    assert framing_error(f, INTR) == pytest.approx(320.0)


def test_framing_invisible_worst_case():
    f = np.zeros(16)
    assert framing_error(f, INTR) == pytest.approx(np.hypot(320, 240))


def test_framing_matches_direct_recomputation():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = np.zeros(16)
        f[FEAT_TARGET_VIS] = 1.0
        f[FEAT_TARGET_U] = rng.uniform(-1, 1)
        f[FEAT_TARGET_V] = rng.uniform(-1, 1)
        expected = np.hypot(f[FEAT_TARGET_U] * 320, f[FEAT_TARGET_V] * 240)
        assert framing_error(f, INTR) == pytest.approx(expected, abs=1e-12)


# --- SRR ------------------------------------------------------------------------------

def test_srr_always_centered():
    f = np.zeros((10, 16))
    f[:, FEAT_TARGET_VIS] = 1.0
    assert srr(f) == 1.0


def test_srr_never_visible():
    assert srr(np.zeros((10, 16))) == 0.0


def test_srr_half_in_half_out():
    f = np.zeros((10, 16))
    f[:, FEAT_TARGET_VIS] = 1.0
    f[5:, FEAT_TARGET_U] = 0.9  # outside the central half
    assert srr(f) == 0.5


def test_srr_agrees_with_framing_at_extremes():
    # SRR == 1 implies per-frame framing error within the central-region radius
    rng = np.random.default_rng(4)
    f = np.zeros((20, 16))
    f[:, FEAT_TARGET_VIS] = 1.0
    f[:, FEAT_TARGET_U] = rng.uniform(-0.5, 0.5, 20)
    f[:, FEAT_TARGET_V] = rng.uniform(-0.5, 0.5, 20)
    assert srr(f) == 1.0
    limit = np.hypot(0.5 * 320, 0.5 * 240)
    for row in f:
        assert framing_error(row, INTR) <= limit + 1e-9
