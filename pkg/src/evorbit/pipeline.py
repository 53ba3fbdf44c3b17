"""
End-to-end orchestration: events -> tracks -> initial orbit -> refined orbit.

All times are stream times. Track sample ``k`` sits at ``t_origin + k * dt``
where ``t_origin`` is the first event time; a constant offset between these
sample times and the true feature times is equivalent to a rotation of the
object about the spin axis, so it ends up in the phase vector ``u``.
"""
from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as eio
from .errors import EmptyStream, EvorbitError, StageError, ValidationError
from .events import EventStream, load_events, save_events
from .metrics import (MetricsReport, THRESHOLDS, axis_error_deg, circle_deviation, evaluate_tracks,
                      purity_table, structure_error, summarize_track_evals)
from .orbit.colmap import read_model
from .orbit.init import PoseSet, estimate_frequency, init_orbit
from .orbit.model import CameraIntrinsics, Observations, residuals, rms_reprojection, screw_line
from .orbit.optimize import OptimizerOptions, Reconstruction, optimize
from .orbit.triangulate import triangulate_landmarks
from .sim import (SimScene, default_intrinsics, event_config_from_spec, gt_events, gt_observations,
                  perturb_orbit, scene_from_spec)
from .tracking import TrackerConfig
from .tracking.clustering import cluster_corners, merge_clusters
from .tracking.density import density_filter
from .tracking.efast import detect_corners
from .tracking.tracks import extract_tracks, save_tracks

log = logging.getLogger(__name__)

INIT_SOURCES = ("colmap_model", "simulator_gt", "perturbed_gt")


@dataclass
class PipelineConfig:
    events: str = None  # event CSV
    output: str = "evorbit_out"
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    dt_f: float = 0.020  # frequency-analysis window, s
    intrinsics: object = None  # dict, JSON path, or None (model / scene / DAVIS346 default)
    init: str = "perturbed_gt"
    colmap_model: str = None  # directory with cameras.txt / images.txt / points3D.txt
    gt: str = None  # ground-truth sidecar JSON from `simulate`
    frequency_source: str = "fft"  # "fft" or "init" (rate taken from the init poses' source)
    observations: str = "tracks"  # "tracks" or "simulator" (noisy GT projections, needs gt)
    sigma_px: float = 0.0  # noise for simulator observations
    perturb: dict = field(default_factory=lambda: {"f_rel": 0.05, "angle_deg": 5.0, "center_rel": 0.05})
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    seed: int = 0
    backend: str = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("tracker"), dict):
            d["tracker"] = TrackerConfig(**d["tracker"])
        if isinstance(d.get("optimizer"), dict):
            d["optimizer"] = OptimizerOptions(**d["optimizer"])
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def validate(self, need_events=True):
        if self.init not in INIT_SOURCES:
            raise ValidationError(f"init must be one of {INIT_SOURCES}, got {self.init!r}")
        if self.frequency_source not in ("fft", "init"):
            raise ValidationError("frequency_source must be 'fft' or 'init'")
        if self.observations not in ("tracks", "simulator"):
            raise ValidationError("observations must be 'tracks' or 'simulator'")
        if self.dt_f <= 0:
            raise ValidationError("dt_f must be positive")
        if need_events and (self.events is None or not Path(self.events).exists()):
            raise ValidationError(f"event file not found: {self.events}")
        if self.init == "colmap_model":
            if self.colmap_model is None or not Path(self.colmap_model).is_dir():
                raise ValidationError(f"COLMAP model directory not found: {self.colmap_model}")
            if self.frequency_source == "init":
                raise ValidationError("a COLMAP model carries no spin rate; use frequency_source='fft'")
        needs_gt = self.init != "colmap_model" or self.observations == "simulator"
        if needs_gt and (self.gt is None or not Path(self.gt).exists()):
            raise ValidationError(f"ground-truth sidecar not found: {self.gt}")
        if isinstance(self.intrinsics, str) and not Path(self.intrinsics).exists():
            raise ValidationError(f"intrinsics file not found: {self.intrinsics}")


def load_config(path, overrides=None) -> PipelineConfig:
    d = eio.read_json(path) if path else {}
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_dict(d)


@contextlib.contextmanager
def stage(name, state=None):
    """Run a block as a named stage; failures become ``StageError``."""
    if state is not None:
        state["stage"] = name
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (EvorbitError, ValueError, ArithmeticError, IndexError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# ---- simulation -------------------------------------------------------------

def simulate(spec, out_dir, seed=None):
    """Write ``events.csv`` and ``gt.json`` for a scene spec dict."""
    spec = dict(spec)
    if seed is not None:
        spec["seed"] = int(seed)
    scene = scene_from_spec(spec)
    stream = gt_events(scene, event_config_from_spec(spec))
    out = eio.ensure_dir(out_dir)
    save_events(stream, out / "events.csv")
    eio.save_gt_sidecar(out / "gt.json", scene, labels=stream.meta["landmark"])
    return out / "events.csv", out / "gt.json"


# ---- stage helpers ------------------------------------------------------------

def track_stream(stream: EventStream, cfg: TrackerConfig, t_origin=None, backend=None, state=None):
    """Corner detection through windowed track extraction, one stage each."""
    if t_origin is None:
        t_origin = float(stream.t[0])
    with stage("detect_corners", state):
        corners = detect_corners(stream, backend=backend)
    with stage("density_filter", state):
        filtered = density_filter(corners, stream, cfg.lam, cfg.time_scale, backend=backend)
    with stage("cluster_corners", state):
        clusters = cluster_corners(filtered, stream, cfg.min_pts, cfg.eps, cfg.time_scale, cfg.n_sigma,
                                   cfg.max_chunk)
    with stage("merge_clusters", state):
        merged = merge_clusters(clusters, cfg.phi, cfg.n_sigma)
    with stage("extract_tracks", state):
        duration = float(stream.t[-1]) - t_origin
        tracks = extract_tracks(merged, cfg.dt, duration, t_origin) if merged else []
        if not tracks:
            raise EmptyStream("no feature tracks were extracted")
    counts = {"n_corners": int(len(corners)), "n_filtered": int(len(filtered.index)),
              "n_clusters": len(clusters), "n_merged": len(merged)}
    return tracks, counts


def resolve_intrinsics(spec, fallback: CameraIntrinsics = None) -> CameraIntrinsics:
    if isinstance(spec, CameraIntrinsics):
        return spec
    if isinstance(spec, dict):
        return CameraIntrinsics.from_dict(spec)
    if isinstance(spec, (str, Path)):
        return CameraIntrinsics.from_dict(eio.read_json(spec))
    return fallback if fallback is not None else default_intrinsics()


def init_poses(cfg: PipelineConfig, times, scene: SimScene = None, dt=None, t_origin=0.0):
    """Camera poses from the configured source, plus the source's own spin rate (or None)."""
    if cfg.init == "colmap_model":
        model = read_model(cfg.colmap_model)
        return model.poses(dt, t_origin), None, model.intrinsics
    orbit = scene.orbit_gt if cfg.init == "simulator_gt" else perturb_orbit(scene.orbit_gt, cfg.seed, **cfg.perturb)
    return PoseSet.from_orbit(times, orbit), orbit.f, None


def initial_reconstruction(poses: PoseSet, f_init, obs: Observations, K: CameraIntrinsics, n_points):
    orbit = init_orbit(poses, f_init)
    X0 = triangulate_landmarks(orbit, K, obs, n_points)
    return Reconstruction(orbit, X0, K, times=np.unique(obs.t), raw_poses=poses)


def track_correspondence(tracks, labels, min_purity=0.5):
    """Track index -> majority GT landmark (tracks below ``min_purity`` dropped)."""
    lab, pur = purity_table(tracks, labels)
    return {i: int(l) for i, (l, p) in enumerate(zip(lab, pur)) if l >= 0 and p >= min_purity}


# ---- full run -----------------------------------------------------------------

def run_pipeline(cfg: PipelineConfig, write=True):
    """Run every stage; returns (Reconstruction, MetricsReport).

    Outputs (when ``write``): reconstruction.json, init.json, landmarks.ply,
    tracks.csv, metrics.json, spectrum.csv, residual_histogram.csv,
    screw_line.csv. On a stage failure metrics.json is still written with
    ``incomplete`` set and the failing stage named, then ``StageError`` is
    raised.
    """
    cfg.validate()
    out = eio.ensure_dir(cfg.output) if write else None
    report = MetricsReport()
    state = {"stage": None}
    try:
        rec = _run(cfg, report, out, state)
    except StageError as exc:
        report.incomplete = True
        report.failed_stage = exc.stage
        if write:
            eio.write_json(out / "metrics.json", report.to_dict())
        raise
    if write:
        eio.write_json(out / "metrics.json", report.to_dict())
    return rec, report


def _run(cfg, report, out, state):
    with stage("load_events", state):
        stream = load_events(cfg.events)
        if len(stream) == 0:
            raise EmptyStream(f"no events in {cfg.events}")
    report.n_events = len(stream)
    t_origin = float(stream.t[0])

    scene, labels = None, None
    if cfg.gt is not None:
        with stage("load_gt", state):
            scene, labels = eio.load_gt_sidecar(cfg.gt)
            if labels is not None and len(labels) != len(stream):
                log.warning("GT labels do not match the event count; ignoring them")
                labels = None
            report.f_gt = float(scene.orbit_gt.f)

    dt = cfg.tracker.dt
    tracks = []
    if cfg.observations == "tracks":
        tracks, counts = track_stream(stream, cfg.tracker, t_origin, cfg.backend, state)
        report.n_corners, report.n_filtered = counts["n_corners"], counts["n_filtered"]
        report.n_tracks = len(tracks)
        if out is not None:
            save_tracks(tracks, out / "tracks.csv")
        obs = Observations.from_tracks(tracks, t_offset=t_origin)
        n_points = len(tracks)
    else:
        with stage("observations", state):
            obs = gt_observations(scene, dt, cfg.sigma_px, seed=cfg.seed)
            n_points = len(scene.landmarks)
    report.n_observations = len(obs)

    with stage("estimate_frequency", state):
        freq = estimate_frequency(stream, cfg.dt_f, t_origin)
        report.f_init = freq.f_init
        if out is not None:
            eio.save_spectrum(out / "spectrum.csv", freq.freqs, freq.power)

    with stage("init_orbit", state):
        times = np.unique(obs.t)
        poses, f_source, K_model = init_poses(cfg, times, scene, dt, t_origin)
        K = resolve_intrinsics(cfg.intrinsics, K_model or (scene.intrinsics if scene is not None else None))
        f0 = f_source if cfg.frequency_source == "init" else freq.f_init
        if not (f0 and np.isfinite(f0) and f0 > 0):
            raise ValidationError("no usable spin-rate estimate")
        init = initial_reconstruction(poses, f0, obs, K, n_points)
        report.circle_deviation_init = circle_deviation(poses)
        r0 = residuals(init.orbit, init.landmarks, obs.select(init.active[obs.point]), K)[0]
        report.rms_reprojection_init = rms_reprojection(r0)
        if out is not None:
            eio.save_reconstruction(init, out / "init.json")

    with stage("optimize", state):
        rec = optimize(init, obs, cfg.optimizer)
    report.f_estimate = float(rec.orbit.f)
    report.rms_reprojection = rec.rms_reprojection
    report.circle_deviation = circle_deviation(rec.poses)
    report.optimizer = {"converged": rec.converged, "iterations": rec.iterations, "cost": rec.cost,
                        "initial_cost": rec.initial_cost, "active_landmarks": int(rec.active.sum()),
                        "stages": len(rec.stage_histories)}

    with stage("metrics", state):
        _ground_truth_metrics(report, rec, scene, labels, tracks, obs, t_origin)

    if out is not None:
        with stage("write_outputs", state):
            eio.save_reconstruction(rec, out / "reconstruction.json")
            eio.save_ply(out / "landmarks.ply", rec.landmarks[rec.active])
            res = residuals(rec.orbit, rec.landmarks, obs.select(rec.active[obs.point]), rec.intrinsics)[0]
            eio.save_residual_histogram(out / "residual_histogram.csv", res)
            try:
                p0, p1 = screw_line(rec.orbit, rec.intrinsics, t_ref=float(obs.t.min()))
                eio.save_screw_line(out / "screw_line.csv", p0, p1)
            except EvorbitError as exc:
                log.warning("screw line not written: %s", exc)
    return rec


def _ground_truth_metrics(report, rec, scene, labels, tracks, obs, t_origin):
    if scene is None:
        return
    gt = scene.orbit_gt
    report.f_rel_error = abs(rec.orbit.f - gt.f) / gt.f
    report.axis_error_deg = axis_error_deg(rec.orbit, gt)
    if tracks:
        if labels is not None:
            _, pur = purity_table(tracks, labels)
            report.purity_fraction = float(np.mean(pur >= 0.9))
            corr = track_correspondence(tracks, labels)
        else:
            corr = None
        times = np.unique(np.concatenate([tr.k for tr in tracks])) * tracks[0].dt + t_origin
        evals = evaluate_tracks(tracks, scene.poses(times), scene.intrinsics, THRESHOLDS, t_offset=t_origin)
        report.track_metrics = summarize_track_evals(evals)
        report.feature_age = [e.feature_age.get(7.0, 0.0) for e in evals]
    else:
        corr = {i: i for i in range(len(rec.landmarks))}
    if corr:
        corr = {i: j for i, j in corr.items() if rec.active[i]}
        if len(corr) >= 3:
            try:
                report.structure_rmse, report.structure_rmse_rel = structure_error(
                    rec.landmarks, scene.landmarks, corr, scene.diameter)
            except EvorbitError as exc:
                log.warning("structure error not computed: %s", exc)


def config_json(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, default=str)
