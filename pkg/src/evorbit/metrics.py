"""Evaluation: track quality, reconstruction comparison and the metrics report."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateGeometry, ValidationError
from .geometry import angle_between
from .orbit.init import PoseSet, fit_circle, fit_plane
from .orbit.model import CameraIntrinsics, Observations, OrbitParams, rms_reprojection
from .orbit.triangulate import triangulate_dlt

THRESHOLDS = (3.0, 5.0, 7.0)


def pose_lookup(poses: PoseSet, times, tol=1e-6):
    """Indices of ``poses`` matching each time in ``times`` (nearest within ``tol``)."""
    times = np.asarray(times, dtype=np.float64)
    order = np.argsort(poses.times)
    st = poses.times[order]
    j = np.clip(np.searchsorted(st, times), 1, max(len(st) - 1, 1))
    lo = np.clip(j - 1, 0, len(st) - 1)
    hi = np.clip(j, 0, len(st) - 1)
    pick = np.where(np.abs(st[lo] - times) <= np.abs(st[hi] - times), lo, hi)
    if len(st) == 0 or np.any(np.abs(st[pick] - times) > tol):
        raise ValidationError("no pose at some observation times")
    return order[pick]


def project_with_poses(poses: PoseSet, X, obs: Observations, K: CameraIntrinsics):
    idx = pose_lookup(poses, obs.t)
    Xc = np.einsum("nij,nj->ni", poses.R[idx], np.asarray(X)[obs.point]) + poses.t[idx]
    Z = np.where(Xc[:, 2] > 1e-9, Xc[:, 2], np.nan)
    return np.column_stack([K.fx * Xc[:, 0] / Z + K.cx, K.fy * Xc[:, 1] / Z + K.cy])


@dataclass
class TrackEval:
    track_id: int
    n_samples: int
    point: np.ndarray = None
    rmse: dict = field(default_factory=dict)  # threshold -> px (nan when nothing survives)
    feature_age: dict = field(default_factory=dict)  # threshold -> seconds
    rmse_all: float = float("nan")
    degenerate: bool = False


def evaluate_tracks(tracks, gt_poses: PoseSet, K: CameraIntrinsics, thresholds=THRESHOLDS,
                    t_offset=0.0):
    """Per-track reprojection RMSE and feature age under known poses.

    Each track is triangulated once by linear DLT over all its samples and
    reprojected into every sampled window. For each threshold, samples whose
    reprojection error exceeds it are dropped before the RMSE (root mean
    squared pixel distance) and the feature age (last minus first surviving
    sample time) are computed. Single-sample tracks are skipped; tracks whose
    rays are all parallel are returned with ``degenerate=True``.
    """
    out = []
    for tr in tracks:
        if len(tr) < 2:
            continue
        times = tr.k * tr.dt + t_offset
        idx = pose_lookup(gt_poses, times)
        R, t = gt_poses.R[idx], gt_poses.t[idx]
        ev = TrackEval(tr.track_id, len(tr))
        try:
            X = triangulate_dlt(R, t, tr.uv, K)
        except DegenerateGeometry:
            ev.degenerate = True
            out.append(ev)
            continue
        Xc = np.einsum("nij,j->ni", R, X) + t
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.column_stack([K.fx * Xc[:, 0] / Xc[:, 2] + K.cx, K.fy * Xc[:, 1] / Xc[:, 2] + K.cy])
        err = np.linalg.norm(uv - tr.uv, axis=1)
        err = np.where(Xc[:, 2] > 0, err, np.inf)
        ev.point = X
        finite = np.isfinite(err)
        ev.rmse_all = float(np.sqrt(np.mean(err[finite] ** 2))) if finite.any() else float("nan")
        for thr in thresholds:
            keep = err <= thr
            if keep.any():
                ev.rmse[thr] = float(np.sqrt(np.mean(err[keep] ** 2)))
                ev.feature_age[thr] = float(times[keep].max() - times[keep].min())
            else:
                ev.rmse[thr] = float("nan")
                ev.feature_age[thr] = 0.0
        out.append(ev)
    return out


def summarize_track_evals(evals, thresholds=THRESHOLDS):
    summary = {}
    for thr in thresholds:
        r = np.array([e.rmse.get(thr, np.nan) for e in evals if not e.degenerate], dtype=float)
        a = np.array([e.feature_age.get(thr, 0.0) for e in evals if not e.degenerate], dtype=float)
        r = r[np.isfinite(r)]
        summary[str(int(thr)) if float(thr).is_integer() else str(thr)] = {
            "tracks": int(len(r)),
            "rmse_median": float(np.median(r)) if len(r) else float("nan"),
            "rmse_mean": float(np.mean(r)) if len(r) else float("nan"),
            "rmse_std": float(np.std(r)) if len(r) else float("nan"),
            "feature_age_mean": float(np.mean(a)) if len(a) else float("nan"),
        }
    return summary


def track_purity(track, labels):
    """Majority ground-truth label among a track's events and its share."""
    ev = np.concatenate(track.events) if track.events else np.zeros(0, dtype=np.int64)
    if len(ev) == 0:
        return -1, 0.0
    lab = np.asarray(labels)[ev]
    vals, counts = np.unique(lab, return_counts=True)
    i = int(np.argmax(counts))
    return int(vals[i]), float(counts[i] / len(lab))


def purity_table(tracks, labels):
    """(majority label, purity) arrays over ``tracks``."""
    if not tracks:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    res = [track_purity(tr, labels) for tr in tracks]
    return np.array([r[0] for r in res], dtype=np.int64), np.array([r[1] for r in res])


def axis_error_deg(est: OrbitParams, gt: OrbitParams) -> float:
    """Angle between spin axes seen from the camera, ignoring axis sign.

    The camera-frame axis does not depend on the world gauge, so no
    alignment is needed.
    """
    a = np.degrees(angle_between(est.axis_in_camera, gt.axis_in_camera))
    return float(min(a, 180.0 - a))


def circle_deviation(poses: PoseSet) -> float:
    """RMS distance of the camera centres to their best-fit circle."""
    C = poses.centers
    if len(C) < 3:
        return float("nan")
    n, t_c = fit_plane(C)
    return fit_circle(C, n, t_c).rms_residual


def reconstruction_residuals(rec, obs: Observations):
    """Residuals under the reconstruction's own poses (raw if it has them)."""
    if getattr(rec, "raw_poses", None) is not None:
        return project_with_poses(rec.raw_poses, rec.landmarks, obs, rec.intrinsics) - obs.uv
    return rec.residuals(obs)


def structure_error(landmarks, gt_landmarks, correspondence=None, diameter=None):
    """Similarity-aligned structure RMSE (absolute, and relative to ``diameter``)."""
    from .sim import align_similarity

    L = np.asarray(landmarks)
    if correspondence is None:
        correspondence = {i: i for i in range(len(L))}
    pairs = {int(i): int(j) for i, j in dict(correspondence).items()
             if j >= 0 and np.all(np.isfinite(L[int(i)]))}
    al = align_similarity(L, gt_landmarks, pairs)
    rel = al.rmse / diameter if diameter else float("nan")
    return al.rmse, rel


def compare_reconstructions(a, b, obs: Observations, gt=None, correspondence=None):
    """RMS reprojection, circle deviation and (with a scene) structure error of two reconstructions."""
    report = {}
    for name, rec in (("a", a), ("b", b)):
        mask = rec.active[obs.point] if rec.active is not None else np.ones(len(obs), bool)
        sub = obs.select(mask)
        res = reconstruction_residuals(rec, sub)
        poses = rec.poses if len(rec.poses) else rec.camera_poses(np.unique(obs.t))
        entry = {"rms_reprojection": rms_reprojection(res[np.all(np.isfinite(res), axis=1)]),
                 "circle_deviation": circle_deviation(poses)}
        if gt is not None and correspondence != {}:
            try:
                rmse, rel = structure_error(rec.landmarks, gt.landmarks, correspondence, gt.diameter)
            except DegenerateGeometry:
                rmse, rel = float("nan"), float("nan")
            entry["structure_rmse"] = rmse
            entry["structure_rmse_rel"] = rel
        if gt is not None:
            entry["axis_error_deg"] = axis_error_deg(rec.orbit, gt.orbit_gt)
        report[name] = entry
    return report


@dataclass
class MetricsReport:
    f_estimate: float = float("nan")  # spin rate after refinement
    f_init: float = float("nan")  # spectral estimate
    f_gt: float = None
    f_rel_error: float = None
    axis_error_deg: float = None
    rms_reprojection_init: float = float("nan")
    rms_reprojection: float = float("nan")
    circle_deviation_init: float = float("nan")
    circle_deviation: float = float("nan")
    structure_rmse: float = None
    structure_rmse_rel: float = None
    n_events: int = 0
    n_corners: int = 0
    n_filtered: int = 0
    n_tracks: int = 0
    n_observations: int = 0
    purity_fraction: float = None  # share of tracks with >= 90% purity
    track_metrics: dict = field(default_factory=dict)
    feature_age: list = field(default_factory=list)
    optimizer: dict = field(default_factory=dict)
    incomplete: bool = False
    failed_stage: str = None

    def to_dict(self):
        return jsonable(asdict(self))


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x
