"""Orbit parameterisation, derived poses, projection and residuals."""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from evorbit.errors import BehindCamera, DegenerateGeometry, ValidationError
from evorbit.geometry import axis_angle, look_at_rotation, normalize
from evorbit.orbit import CameraIntrinsics, Observations, OrbitParams, orbit_center, orbit_pose, reproject, residuals
from evorbit.orbit.model import camera_center, orbit_poses, point_line_distance, rms_reprojection, screw_line
from evorbit.sim import default_orbit, gt_observations, make_scene


def random_orbit(rng):
    n = normalize(rng.normal(size=3))
    u = normalize(np.cross(n, rng.normal(size=3)))
    R0 = Rotation.from_rotvec(rng.normal(scale=0.3, size=3)).as_matrix()
    return OrbitParams(rng.uniform(0.5, 5), rng.uniform(0.2, 3), R0, n, u, rng.normal(size=3) * 2)


def simple_orbit(f=1.0, R0=np.eye(3)):
    return OrbitParams(1.0, f, R0, [0, 0, 1], [1, 0, 0], [0, 0, 0])


def test_orbit_center_quarter_and_full_period():
    th = simple_orbit(f=2.0)
    assert np.allclose(orbit_center(0.0, th), [1, 0, 0])
    assert np.allclose(orbit_center(1 / (4 * th.f), th), [0, 1, 0], atol=1e-15)
    assert np.allclose(orbit_center(1 / th.f, th), orbit_center(0.0, th), atol=1e-12)


def test_pose_centre_matches_orbit_centre():
    rng = np.random.default_rng(0)
    for _ in range(50):
        th = random_orbit(rng)
        t = rng.uniform(-3, 3)
        R, tr = orbit_pose(t, th)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12) and np.linalg.det(R) > 0
        assert np.allclose(camera_center(R, tr), orbit_center(t, th), atol=1e-10)


def test_orbit_centre_on_optical_axis_with_identity_offset():
    rng = np.random.default_rng(1)
    for _ in range(100):
        th = random_orbit(rng)
        th.R0 = np.eye(3)
        R, tr = orbit_pose(rng.uniform(-3, 3), th)
        Xc = R @ th.c + tr
        assert abs(Xc[0]) < 1e-9 and abs(Xc[1]) < 1e-9 and Xc[2] > 0


def test_look_at_degenerate_direction():
    with pytest.raises(DegenerateGeometry):
        look_at_rotation(np.array([0.0, 1.0, 0.0]))
    th = simple_orbit()
    th.r = 0.0
    with pytest.raises(DegenerateGeometry):
        orbit_poses([0.0], th)


def test_pinhole_arithmetic():
    K = CameraIntrinsics(100, 100, 0, 0)
    th = default_orbit()
    R, t = orbit_pose(0.3, th)
    # a world point that lands at camera (0, 0, 5) and (1, 0, 5)
    for cam, uv in (([0, 0, 5.0], (0, 0)), ([1, 0, 5.0], (20, 0))):
        X = R.T @ (np.array(cam) - t)
        assert np.allclose(reproject(X, 0.3, th, K), uv, atol=1e-9)
    with pytest.raises(BehindCamera):
        reproject(R.T @ (np.array([1.0, 0, 0]) - t), 0.3, th, K)


def test_vector_round_trip_and_validation():
    th = random_orbit(np.random.default_rng(2))
    v = th.as_vector()
    assert v.shape == (14,)
    back = OrbitParams.from_vector(v)
    assert np.allclose(back.R0, th.R0) and np.allclose(back.c, th.c)
    th.validate()
    bad = th.copy()
    bad.u = bad.u + 0.01 * bad.n
    with pytest.raises(ValidationError):
        bad.validate()
    fixed = bad.normalized()
    fixed.validate()
    with pytest.raises(ValidationError):
        OrbitParams.from_vector(np.zeros(13))
    assert OrbitParams.from_dict(th.to_dict()).u == pytest.approx(th.u)


@pytest.fixture(scope="module")
def scene():
    return make_scene("random_blob", default_orbit(), duration=2.0, seed=3, n_points=30)


def test_self_consistent_observations_give_zero_residual(scene):
    obs = gt_observations(scene, 0.04, 0.0)
    r, behind = residuals(scene.orbit_gt, scene.landmarks, obs, scene.intrinsics)
    assert np.abs(r).max() < 1e-9
    assert not behind.any()


def test_residual_sign_convention(scene):
    obs = gt_observations(scene, 0.04, 0.0)
    obs.uv[0] += (1.0, -2.0)
    r, _ = residuals(scene.orbit_gt, scene.landmarks, obs, scene.intrinsics)
    assert np.allclose(r[0], [-1.0, 2.0], atol=1e-9)


def test_noisy_residual_rms_near_sigma(scene):
    obs = gt_observations(scene, 0.02, 0.5, seed=4)
    r, _ = residuals(scene.orbit_gt, scene.landmarks, obs, scene.intrinsics)
    assert abs(rms_reprojection(r) - 0.5) < 0.1


def test_behind_camera_is_capped_and_flagged(scene):
    obs = gt_observations(scene, 0.04, 0.0)
    X = scene.landmarks.copy()
    R, t = orbit_pose(obs.t[0], scene.orbit_gt)
    X[obs.point[0]] = R.T @ (np.array([0.0, 0.0, -1.0]) - t)
    r, behind = residuals(scene.orbit_gt, X, obs, scene.intrinsics, residual_cap=1e3)
    assert behind[0]
    assert np.allclose(r[0], [1e3, 0.0])


def test_residuals_are_scale_gauge_invariant(scene):
    obs = gt_observations(scene, 0.04, 0.5, seed=1)
    th = scene.orbit_gt
    r0, _ = residuals(th, scene.landmarks, obs, scene.intrinsics)
    for s in (0.1, 10.0):
        ts = OrbitParams(th.r * s, th.f, th.R0, th.n, th.u, th.c * s)
        rs, _ = residuals(ts, scene.landmarks * s, obs, scene.intrinsics)
        assert np.abs(rs - r0).max() < 1e-9


def test_screw_line_through_principal_point():
    K = CameraIntrinsics(300, 300, 160, 120, 320, 240)
    th = OrbitParams(4.0, 1.0, np.eye(3), [0, 0, 1], [1, 0, 0], [0, 0, 0])
    # with this offset the spin axis projects vertically
    th.R0 = axis_angle([0, 0, 1], np.pi / 2)
    p0, p1 = screw_line(th, K)
    assert abs(p0[0] - 160) < 1e-9 and abs(p1[0] - 160) < 1e-9
    assert abs(p0[1] - p1[1]) > 100
    th.R0 = axis_angle([0, 1, 0], np.pi)
    with pytest.raises(BehindCamera):
        screw_line(th, K)


def test_screw_line_contains_projected_axis(scene):
    th, K = scene.orbit_gt, scene.intrinsics
    p0, p1 = screw_line(th, K, t_ref=0.5)
    R, t = orbit_pose(0.5, th)
    pts = [K.K @ (R @ (th.c + s * th.n) + t) for s in np.linspace(-0.5, 0.5, 7)]
    uv = np.array([p[:2] / p[2] for p in pts])
    assert point_line_distance(uv, p0, p1).max() < 1e-6


def test_observations_select_and_from_tracks():
    from evorbit.tracking import FeatureTrack

    tracks = [FeatureTrack(0, [1, 2], [[1, 2], [3, 4]], 0.03), FeatureTrack(1, [2, 5], [[5, 6], [7, 8]], 0.03)]
    obs = Observations.from_tracks(tracks, t_offset=1.0)
    assert obs.point.tolist() == [0, 0, 1, 1]
    assert np.allclose(obs.t, [1.03, 1.06, 1.06, 1.15])
    obs.check_unique()
    sub = obs.select(obs.point == 1)
    assert len(sub) == 2
    dup = Observations([0, 0], [1, 1], [0.1, 0.1], [[0, 0], [0, 0]])
    with pytest.raises(ValidationError):
        dup.check_unique()
