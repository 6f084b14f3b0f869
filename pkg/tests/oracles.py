"""Independent re-check oracles shared by planner and acceptance tests.

These deliberately avoid the library's collision code path: distances come
from dense point sampling along capsule axes with the closed-form
point-to-box formula.
"""
import numpy as np

from cinearm.arm import forward_kinematics


def point_box_distance(p, center, half):
    d = np.maximum(np.abs(np.asarray(p) - center) - half, 0.0)
    return float(np.linalg.norm(d))


def min_capsule_clearance(model, scene, q, axis_step=0.002):
    """Smallest clearance (m) of any link capsule to obstacle box / floor.

    Floor check skips the base-column link (structurally mounted there).
    """
    _, links = forward_kinematics(model, q)
    worst = np.inf
    for li, caps in enumerate(model.link_capsules):
        pose = links[li].as_transform()
        for cap in caps:
            w0 = pose.apply(cap.p0)
            w1 = pose.apply(cap.p1)
            n = max(2, int(np.ceil(np.linalg.norm(w1 - w0) / axis_step)) + 1)
            pts = w0 + np.linspace(0, 1, n)[:, None] * (w1 - w0)
            if li > 0:
                worst = min(worst, float(np.min(pts[:, 2])) - cap.radius)
            if scene.obstacle_present:
                d = np.maximum(np.abs(pts - scene.obstacle.center) - scene.obstacle.half, 0.0)
                worst = min(worst, float(np.min(np.linalg.norm(d, axis=1))) - cap.radius)
    return worst


def dense_path_clearance(model, scene, waypoints, resolution=0.01):
    """Minimum clearance along a waypoint path, interpolated at resolution rad."""
    worst = np.inf
    waypoints = np.atleast_2d(waypoints)
    for qa, qb in zip(waypoints, waypoints[1:]):
        n = int(np.ceil(np.max(np.abs(qb - qa)) / resolution)) + 2
        for t in np.linspace(0.0, 1.0, n):
            worst = min(worst, min_capsule_clearance(model, scene, qa + t * (qb - qa)))
    if len(waypoints) == 1:
        worst = min_capsule_clearance(model, scene, waypoints[0])
    return worst
