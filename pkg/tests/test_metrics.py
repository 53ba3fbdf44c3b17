"""Track evaluation, purity, axis error, circle deviation and reconstruction comparison."""
import json

import numpy as np
import pytest

from evorbit.metrics import (MetricsReport, axis_error_deg, circle_deviation, compare_reconstructions,
                             evaluate_tracks, jsonable, purity_table, summarize_track_evals)
from evorbit.orbit import OrbitParams, PoseSet, Reconstruction, optimize
from evorbit.pipeline import initial_reconstruction
from evorbit.sim import default_orbit, gt_observations, make_scene, perturb_orbit
from evorbit.tracking import FeatureTrack

DT = 0.04


@pytest.fixture(scope="module")
def scene():
    return make_scene("random_blob", default_orbit(), duration=3.0, seed=21, n_points=20)


def obs_tracks(obs, dt=DT):
    return [FeatureTrack(int(p), obs.k[obs.point == p], obs.uv[obs.point == p], dt)
            for p in np.unique(obs.point)]


def test_noiseless_tracks_have_zero_rmse_and_full_age(scene):
    obs = gt_observations(scene, DT, 0.0)
    tracks = obs_tracks(obs)
    times = np.unique(obs.t)
    evals = evaluate_tracks(tracks, scene.poses(times), scene.intrinsics, t_offset=0.5 * DT)
    assert len(evals) == sum(len(tr) >= 2 for tr in tracks)
    for ev, tr in zip(evals, [t for t in tracks if len(t) >= 2]):
        assert not ev.degenerate
        for thr in (3.0, 5.0, 7.0):
            assert ev.rmse[thr] < 1e-6
            assert ev.feature_age[thr] == pytest.approx((tr.k.max() - tr.k.min()) * DT)
    summary = summarize_track_evals(evals)
    assert set(summary) == {"3", "5", "7"}
    assert summary["7"]["rmse_median"] < 1e-6


def test_single_sample_tracks_skipped(scene):
    obs = gt_observations(scene, DT, 0.0)
    tr = obs_tracks(obs)[0]
    single = FeatureTrack(99, tr.k[:1], tr.uv[:1], DT)
    evals = evaluate_tracks([single, tr], scene.poses(np.unique(obs.t)), scene.intrinsics, t_offset=0.5 * DT)
    assert [e.track_id for e in evals] == [tr.track_id]


def test_thresholds_drop_outlier_samples(scene):
    obs = gt_observations(scene, DT, 0.0)
    tr = max(obs_tracks(obs), key=len)
    uv = tr.uv.copy()
    uv[len(uv) // 2] += (4.0, 0.0)
    bad = FeatureTrack(0, tr.k, uv, DT)
    (ev,) = evaluate_tracks([bad], scene.poses(np.unique(obs.t)), scene.intrinsics, t_offset=0.5 * DT)
    assert ev.rmse[3.0] < ev.rmse[7.0]
    assert ev.rmse[7.0] > 0.1


def test_parallel_rays_flagged_degenerate():
    times = np.arange(1, 6) * DT
    poses = PoseSet(times, np.tile(np.eye(3), (5, 1, 1)), np.tile([0.0, 0.0, 5.0], (5, 1)))
    sc = make_scene("cube_corners")
    tr = FeatureTrack(0, np.arange(1, 6), np.tile([100.0, 80.0], (5, 1)), DT)
    (ev,) = evaluate_tracks([tr], poses, sc.intrinsics)
    assert ev.degenerate
    assert summarize_track_evals([ev])["7"]["tracks"] == 0


def test_purity_table():
    labels = np.array([0, 0, 0, 1, 1, -1, 2])
    tr_a = FeatureTrack(0, [1, 2], [[0, 0], [0, 0]], DT, events=[np.array([0, 1]), np.array([2, 3])])
    tr_b = FeatureTrack(1, [1, 2], [[0, 0], [0, 0]], DT, events=[np.array([4]), np.array([6])])
    lab, pur = purity_table([tr_a, tr_b], labels)
    assert lab.tolist() == [0, 1]
    assert pur.tolist() == [0.75, 0.5]


def test_axis_error_ignores_sign():
    th = default_orbit()
    flipped = OrbitParams(th.r, th.f, th.R0, -th.n, th.u, th.c)
    assert axis_error_deg(th, th) == pytest.approx(0.0, abs=1e-6)
    p = perturb_orbit(th, seed=1, angle_deg=0.0, f_rel=0.0, center_rel=0.0)
    assert axis_error_deg(p, th) < 1e-6
    assert axis_error_deg(flipped, th) < 180.0


def test_circle_deviation_of_orbit_poses_is_zero(scene):
    poses = scene.poses(np.arange(1, 50) * DT)
    assert circle_deviation(poses) < 1e-12
    jitter = PoseSet(poses.times, poses.R, poses.t + 0.01 * np.random.default_rng(0).normal(size=poses.t.shape))
    assert circle_deviation(jitter) > 1e-4


def test_compare_optimised_against_raw_poses(scene):
    obs = gt_observations(scene, DT, 0.3, seed=3)
    times = np.unique(obs.t)
    raw = scene.poses(times)
    rng = np.random.default_rng(1)
    # SfM-like poses: the true ones with centre noise
    C = raw.centers + 0.02 * rng.normal(size=raw.centers.shape)
    noisy = PoseSet(times, raw.R, -np.einsum("nij,nj->ni", raw.R, C))
    a = initial_reconstruction(noisy, scene.orbit_gt.f, obs, scene.intrinsics, len(scene.landmarks))
    b = optimize(a, obs)
    rep = compare_reconstructions(a, b, obs, scene)
    assert rep["b"]["circle_deviation"] < 1e-9
    assert rep["a"]["circle_deviation"] > rep["b"]["circle_deviation"]
    assert rep["b"]["rms_reprojection"] < 1.0
    assert rep["b"]["structure_rmse_rel"] < 0.05
    again = compare_reconstructions(a, b, obs, scene)
    assert json.dumps(jsonable(again), sort_keys=True) == json.dumps(jsonable(rep), sort_keys=True)
    no_corr = compare_reconstructions(a, b, obs, scene, correspondence={})
    assert "structure_rmse" not in no_corr["a"] and "axis_error_deg" in no_corr["a"]


def test_compare_identical_inputs(scene):
    obs = gt_observations(scene, DT, 0.0)
    rec = Reconstruction(scene.orbit_gt, scene.landmarks, scene.intrinsics, times=np.unique(obs.t))
    rep = compare_reconstructions(rec, rec, obs)
    assert rep["a"] == rep["b"]
    assert rep["a"]["rms_reprojection"] < 1e-9


def test_report_json_has_no_nan():
    d = MetricsReport().to_dict()
    text = json.dumps(d, allow_nan=False)
    assert json.loads(text)["f_estimate"] is None
    assert jsonable({"a": np.float32(1.5), "b": np.int64(2), "c": np.array([np.nan, 1.0]), "d": np.bool_(True)}) == {
        "a": 1.5, "b": 2, "c": [None, 1.0], "d": True}
