import numpy as np
import pytest

from cinearm.arm import default_robot_model, forward_kinematics
from cinearm.control import solve_ik
from cinearm.arm import Pose
from cinearm.geometry import look_at_quat, quat_to_matrix
from cinearm.world import (
    Box,
    CameraIntrinsics,
    FEAT_TARGET_DEPTH,
    FEAT_TARGET_U,
    FEAT_TARGET_V,
    FEAT_TARGET_VIS,
    FEATURE_DIM,
    Scene,
    ServoModel,
    SimState,
    SimWorld,
    capsule_box_distance,
    capsule_floor_distance,
    default_scene,
    goal_feature,
    in_collision,
    in_collision_batch,
    link_capsules,
    render_features,
    segment_box_distance,
    step,
)

MODEL = default_robot_model()
SCENE = default_scene(obstacle=True)
FREE = default_scene(obstacle=False)


def aim_at_target(eye, scene=SCENE):
    """Joint config with the camera at eye looking at the scene target."""
    pose = Pose(position=eye, orientation=look_at_quat(eye, scene.target_pos))
    res = solve_ik(MODEL, np.array([0.0, 0.7, 0.9, 0.0, 0.5, 0.0]), pose)
    assert res.converged, f"test rig could not reach {eye}"
    return res.q


# --- servo stepping ------------------------------------------------------------

def test_step_equilibrium():
    s0 = SimState.at_rest(np.array([0.1, 0.2, 0.3, 0.0, -0.2, 0.0]))
    s1 = step(s0, s0.q, ServoModel(), MODEL, FREE)
    np.testing.assert_array_equal(s1.q, s0.q)
    np.testing.assert_array_equal(s1.qdot, s0.qdot)
    assert s1.time == pytest.approx(0.005)


def test_step_critically_damped_settling_time():
    servo = ServoModel(natural_frequency=25.0, damping_ratio=1.0)
    s = SimState.at_rest(np.zeros(6))
    cmd = np.zeros(6)
    cmd[1] = 0.3
    settle = None
    for i in range(2000):
        s = step(s, cmd, servo, MODEL, FREE)
        if settle is None and abs(s.q[1] - 0.3) <= 0.02 * 0.3:
            settle = s.time
    # 2% settling time of a critically damped 2nd-order system is ~5.83/w
    assert settle == pytest.approx(5.83 / 25.0, rel=0.10)


def test_step_no_overshoot_when_critically_damped():
    servo = ServoModel()
    s = SimState.at_rest(np.zeros(6))
    cmd = np.zeros(6)
    cmd[2] = 0.5
    peak = 0.0
    for _ in range(1000):
        s = step(s, cmd, servo, MODEL, FREE)
        peak = max(peak, s.q[2])
    assert peak <= 0.5 + 1e-9


def test_step_saturates_at_joint_limit():
    servo = ServoModel()
    s = SimState.at_rest(np.zeros(6))
    cmd = np.zeros(6)
    cmd[2] = 4.0  # beyond the 2.4 rad limit
    for _ in range(2000):
        s = step(s, cmd, servo, MODEL, FREE)
    assert s.q[2] == pytest.approx(MODEL.joint_limits[2, 1])


def test_step_contraction_invariant():
    # (q - q_cmd) + qdot/w contracts exponentially for the critically damped servo
    servo = ServoModel()
    w = servo.natural_frequency
    s = SimState.at_rest(np.zeros(6))
    cmd = np.full(6, 0.4)
    prev = np.linalg.norm((s.q - cmd) + s.qdot / w)
    for _ in range(500):
        s = step(s, cmd, servo, MODEL, FREE)
        cur = np.linalg.norm((s.q - cmd) + s.qdot / w)
        assert cur <= prev + 1e-12
        prev = cur


def test_step_deterministic_with_seed():
    a = SimWorld(MODEL, FREE, ServoModel(actuation_noise_sigma=1e-3), seed=3)
    b = SimWorld(MODEL, FREE, ServoModel(actuation_noise_sigma=1e-3), seed=3)
    a.reset(np.zeros(6))
    b.reset(np.zeros(6))
    cmd = np.full(6, 0.2)
    for _ in range(100):
        sa = a.step(cmd)
        sb = b.step(cmd)
    assert np.array_equal(sa.q, sb.q)


def test_step_noise_requires_rng():
    s = SimState.at_rest(np.zeros(6))
    with pytest.raises(ValueError):
        step(s, np.zeros(6), ServoModel(actuation_noise_sigma=1e-3), MODEL, FREE, rng=None)


def test_collision_latches():
    # command the arm to sweep through the obstacle; once collided stays collided
    w = SimWorld(MODEL, SCENE)
    start = aim_at_target([0.12, 0.0, 0.45])
    w.reset(start)
    cmd = start.copy()
    cmd[1] += 1.2  # pitch the whole arm down through the box
    hit_at = None
    for i in range(600):
        st = w.step(cmd)
        if st.collided and hit_at is None:
            hit_at = i
    assert hit_at is not None
    # latched for the rest of the episode even after commanding back
    for _ in range(100):
        st = w.step(start)
    assert st.collided


# --- capsules ---------------------------------------------------------------------

def test_link_capsules_upright_axes_vertical():
    w0, w1, radii, _ = link_capsules(MODEL, np.zeros(6))
    axes = w1 - w0
    lateral = np.linalg.norm(axes[:, :2], axis=1)
    np.testing.assert_allclose(lateral, 0.0, atol=1e-12)


def test_link_capsules_rotate_with_base_yaw():
    rng = np.random.default_rng(0)
    q = rng.uniform(MODEL.joint_limits[:, 0], MODEL.joint_limits[:, 1])
    d = 0.7
    w0a, w1a, _, _ = link_capsules(MODEL, q)
    q2 = q.copy()
    q2[0] += d
    w0b, w1b, _, _ = link_capsules(MODEL, q2)
    c, s = np.cos(d), np.sin(d)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    np.testing.assert_allclose(w0b, w0a @ Rz.T, atol=1e-9)
    np.testing.assert_allclose(w1b, w1a @ Rz.T, atol=1e-9)


def test_link_capsules_match_fk_transform_oracle():
    rng = np.random.default_rng(1)
    q = rng.uniform(MODEL.joint_limits[:, 0], MODEL.joint_limits[:, 1])
    w0, w1, _, links = link_capsules(MODEL, q)
    _, link_poses = forward_kinematics(MODEL, q)
    k = 0
    for li, caps in enumerate(MODEL.link_capsules):
        for cap in caps:
            pose = link_poses[li].as_transform()
            np.testing.assert_allclose(w0[k], pose.apply(cap.p0), atol=1e-12)
            np.testing.assert_allclose(w1[k], pose.apply(cap.p1), atol=1e-12)
            k += 1


# --- capsule/box distance -------------------------------------------------------------

def test_capsule_box_distance_axis_aligned_closed_form():
    box = Box(center=[0, 0, 0], extents=[2.0, 2.0, 2.0])  # unit half-extents
    d = capsule_box_distance([-0.3, 0.0, 1.5], [0.4, 0.0, 1.5], radius=0.1, box=box)
    assert d == pytest.approx(0.4, abs=1e-9)


def test_capsule_box_distance_inside_is_negative():
    box = Box(center=[0, 0, 0], extents=[1.0, 1.0, 1.0])
    d = capsule_box_distance([-0.1, 0, 0], [0.1, 0, 0], radius=0.05, box=box)
    assert d < 0


def test_segment_box_distance_against_sampling_oracle():
    rng = np.random.default_rng(2)
    box = Box(center=[0.1, -0.2, 0.3], extents=[0.4, 0.7, 0.25])
    half = box.half

    def point_box(p):
        d = np.maximum(np.abs(p - box.center) - half, 0.0)
        return np.linalg.norm(d)

    worst = 0.0
    for _ in range(1000):
        p0 = rng.uniform(-1, 1, 3)
        p1 = rng.uniform(-1, 1, 3)
        got = float(segment_box_distance(p0, p1, box))
        ts = np.linspace(0, 1, 10_000)
        pts = p0 + ts[:, None] * (p1 - p0)
        d = np.maximum(np.abs(pts - box.center) - half, 0.0)
        oracle = np.min(np.linalg.norm(d, axis=1))
        worst = max(worst, abs(got - oracle))
    assert worst < 1e-3


def test_capsule_floor_distance():
    assert capsule_floor_distance([0, 0, 0.5], [0, 0, 0.8], 0.1) == pytest.approx(0.4)
    assert capsule_floor_distance([0, 0, 0.05], [0, 0, 0.5], 0.1) < 0


# --- collision queries ---------------------------------------------------------------

def test_in_collision_false_without_obstacle_fuzz():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(200):
        # configs with the arm held high stay clear of the floor
        q = rng.uniform(MODEL.joint_limits[:, 0], MODEL.joint_limits[:, 1])
        q[1] = rng.uniform(-0.5, 0.5)
        q[2] = rng.uniform(-0.5, 0.5)
        hits += in_collision(MODEL, q, FREE, margin=0.0)
    assert hits == 0


def test_in_collision_through_obstacle():
    # arm pitched down through the box region
    q = aim_at_target([0.12, 0.0, 0.45])
    q_hit = q.copy()
    q_hit[1] += 1.3
    assert in_collision(MODEL, q_hit, SCENE, margin=0.0)


def test_in_collision_margin_monotone():
    # grazing configuration: flags appear as the margin grows
    q = aim_at_target([0.16, 0.0, 0.42])
    margins = np.linspace(0.0, 0.5, 60)
    flags = [in_collision(MODEL, q, SCENE, margin=m) for m in margins]
    assert flags == sorted(flags)  # false..false,true..true
    assert flags[-1] is True


def test_in_collision_batch_matches_scalar():
    rng = np.random.default_rng(4)
    Q = rng.uniform(MODEL.joint_limits[:, 0], MODEL.joint_limits[:, 1], size=(50, 6))
    batch = in_collision_batch(MODEL, Q, SCENE, margin=0.02)
    scalar = np.array([in_collision(MODEL, q, SCENE, margin=0.02) for q in Q])
    np.testing.assert_array_equal(batch, scalar)


def test_in_collision_rejects_negative_margin():
    with pytest.raises(ValueError):
        in_collision(MODEL, np.zeros(6), SCENE, margin=-0.1)


# --- rendering ---------------------------------------------------------------------

def test_render_centered_target():
    q = aim_at_target([0.15, 0.1, 0.4])
    f = render_features(SCENE, MODEL, q)
    assert f[FEAT_TARGET_VIS] == 1.0
    assert abs(f[FEAT_TARGET_U]) < 1e-6
    assert abs(f[FEAT_TARGET_V]) < 1e-6
    assert f[FEAT_TARGET_DEPTH] > 0


def test_render_target_behind_camera():
    # camera at upright pose looks straight up; target is below/behind
    f = render_features(SCENE, MODEL, np.zeros(6))
    assert f[FEAT_TARGET_VIS] == 0.0
    assert f[FEAT_TARGET_U] == 0.0 and f[FEAT_TARGET_V] == 0.0


def test_render_pinhole_shift():
    q = aim_at_target([0.15, 0.0, 0.4])
    f0 = render_features(SCENE, MODEL, q)
    # shift the target laterally by 10% of the half-FOV extent at its depth
    _, _, _ = f0[FEAT_TARGET_U], f0[FEAT_TARGET_V], f0[FEAT_TARGET_DEPTH]
    ee = forward_kinematics(MODEL, q)[0]
    R = quat_to_matrix(ee.orientation)
    depth = f0[FEAT_TARGET_DEPTH]
    du = 0.1
    shift = R[:, 0] * du * depth * np.tan(SCENE.intrinsics.h_fov / 2)
    scene2 = Scene(
        target_pos=SCENE.target_pos + shift,
        target_radius=SCENE.target_radius,
        obstacle=SCENE.obstacle,
        obstacle_present=SCENE.obstacle_present,
        workspace=SCENE.workspace,
        fiducials=SCENE.fiducials,
        intrinsics=SCENE.intrinsics,
    )
    f1 = render_features(scene2, MODEL, q)
    assert f1[FEAT_TARGET_U] - f0[FEAT_TARGET_U] == pytest.approx(du, abs=1e-9)


def test_render_feature_continuity():
    q = aim_at_target([0.15, 0.05, 0.42])
    f0 = render_features(SCENE, MODEL, q)
    for eps in (1e-3, 1e-5, 1e-7):
        f1 = render_features(SCENE, MODEL, q + eps)
        if np.array_equal(
            np.sign(f0[[FEAT_TARGET_VIS]]), np.sign(f1[[FEAT_TARGET_VIS]])
        ):
            assert np.linalg.norm(f1 - f0) < 100 * eps + 1e-9


def test_render_deterministic():
    q = aim_at_target([0.14, -0.08, 0.43])
    assert np.array_equal(render_features(SCENE, MODEL, q), render_features(SCENE, MODEL, q))


def test_goal_feature_equals_render_at_goal():
    q = aim_at_target([0.2, 0.0, 0.38])
    np.testing.assert_array_equal(goal_feature(SCENE, MODEL, q), render_features(SCENE, MODEL, q))


def test_goal_features_differ_across_poses():
    fa = goal_feature(SCENE, MODEL, aim_at_target([0.2, 0.0, 0.38]))
    fb = goal_feature(SCENE, MODEL, aim_at_target([0.12, 0.1, 0.45]))
    assert not np.allclose(fa, fb)


def test_feature_shape_and_slots():
    q = aim_at_target([0.15, 0.0, 0.4])
    f = render_features(SCENE, MODEL, q)
    assert f.shape == (FEATURE_DIM,)
    assert set(np.unique(f[[FEAT_TARGET_VIS]])) <= {0.0, 1.0}
    assert np.all(np.isfinite(f))


def test_scene_rejects_target_outside_workspace():
    with pytest.raises(ValueError):
        Scene(
            target_pos=[5.0, 0.0, 0.1],
            target_radius=0.04,
            obstacle=SCENE.obstacle,
            obstacle_present=True,
            workspace=SCENE.workspace,
            fiducials=SCENE.fiducials,
        )
