"""Command-line interface: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 success, 2 invalid input or configuration, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as eio
from .errors import EvorbitError, StageError, ValidationError
from .events import load_events
from .metrics import THRESHOLDS, jsonable, compare_reconstructions, evaluate_tracks, summarize_track_evals
from .orbit.init import estimate_frequency
from .orbit.model import Observations, residuals, screw_line
from .orbit.optimize import optimize
from .pipeline import (PipelineConfig, init_poses, initial_reconstruction, load_config, resolve_intrinsics,
                       run_pipeline, simulate, stage, track_stream)
from .tracking.tracks import load_tracks, save_tracks

log = logging.getLogger("evorbit")

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3


def _dump(obj, path=None):
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    print(text)


def _config(args, **overrides) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for name in ("lam", "min_pts", "eps", "phi", "n_sigma", "dt", "time_scale"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg.tracker, name, v)
    cfg.tracker.__post_init__()
    return cfg


def _tracks_meta(tracks_path):
    meta = Path(tracks_path).with_name("tracks_meta.json")
    return eio.read_json(meta) if meta.exists() else {}


def _load_track_obs(path, t_origin=None):
    meta = _tracks_meta(path)
    tracks = load_tracks(path, dt=meta.get("dt"))
    if not tracks:
        raise ValidationError(f"no tracks in {path}")
    if t_origin is None:
        t_origin = float(meta.get("t_origin", 0.0))
    return tracks, Observations.from_tracks(tracks, t_offset=t_origin), t_origin


# ---- subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    spec = eio.read_json(args.scene) if args.scene else {}
    for key in ("preset", "n_points", "duration"):
        v = getattr(args, key)
        if v is not None:
            spec[key] = v
    if args.f is not None:
        spec.setdefault("orbit", {})["f"] = args.f
    if args.rate is not None:
        spec.setdefault("events", {})["events_per_landmark_per_second"] = args.rate
    ev, gt = simulate(spec, args.out, seed=args.seed)
    _dump({"events": str(ev), "gt": str(gt)})


def cmd_track(args):
    cfg = _config(args, events=args.events, output=args.out)
    with stage("load_events"):
        stream = load_events(cfg.events)
        if len(stream) == 0:
            raise StageError("load_events", ValidationError("empty event stream"))
    t_origin = float(stream.t[0])
    tracks, counts = track_stream(stream, cfg.tracker, t_origin, cfg.backend)
    out = eio.ensure_dir(cfg.output)
    save_tracks(tracks, out / "tracks.csv")
    meta = {"t_origin": t_origin, "dt": cfg.tracker.dt, "n_tracks": len(tracks), "n_events": len(stream), **counts}
    eio.write_json(out / "tracks_meta.json", meta)
    _dump(meta)


def cmd_init(args):
    cfg = _config(args, events=args.events, init=args.init, gt=args.gt, colmap_model=args.colmap,
                  output=args.out, frequency_source=args.frequency_source)
    cfg.validate()
    tracks, obs, t_origin = _load_track_obs(args.tracks, args.t_origin)
    scene = eio.load_gt_sidecar(cfg.gt)[0] if cfg.gt else None
    with stage("estimate_frequency"):
        stream = load_events(cfg.events)
        freq = estimate_frequency(stream, cfg.dt_f, float(stream.t[0]) if len(stream) else 0.0)
    with stage("init_orbit"):
        poses, f_source, K_model = init_poses(cfg, np.unique(obs.t), scene, cfg.tracker.dt, t_origin)
        K = resolve_intrinsics(cfg.intrinsics, K_model or (scene.intrinsics if scene else None))
        f0 = f_source if cfg.frequency_source == "init" else freq.f_init
        if not (f0 and np.isfinite(f0)):
            raise ValidationError("no usable spin-rate estimate")
        init = initial_reconstruction(poses, f0, obs, K, len(tracks))
    out = eio.ensure_dir(cfg.output)
    eio.save_reconstruction(init, out / "init.json")
    eio.save_spectrum(out / "spectrum.csv", freq.freqs, freq.power)
    _dump({"f_init": freq.f_init, "f_used": f0, "orbit": init.orbit.to_dict()})


def cmd_solve(args):
    cfg = _config(args, output=args.out)
    init = eio.load_reconstruction(args.init)
    _, obs, _ = _load_track_obs(args.tracks, args.t_origin)
    with stage("optimize"):
        rec = optimize(init, obs, cfg.optimizer)
    out = eio.ensure_dir(cfg.output)
    eio.save_reconstruction(rec, out / "reconstruction.json")
    eio.save_ply(out / "landmarks.ply", rec.landmarks[rec.active])
    res = residuals(rec.orbit, rec.landmarks, obs.select(rec.active[obs.point]), rec.intrinsics)[0]
    eio.save_residual_histogram(out / "residual_histogram.csv", res)
    try:
        p0, p1 = screw_line(rec.orbit, rec.intrinsics, t_ref=float(obs.t.min()))
        eio.save_screw_line(out / "screw_line.csv", p0, p1)
    except EvorbitError as exc:
        log.warning("screw line not written: %s", exc)
    _dump({"f": rec.orbit.f, "rms_reprojection": rec.rms_reprojection, "converged": rec.converged,
           "iterations": rec.iterations})


def cmd_run(args):
    cfg = _config(args, events=args.events, gt=args.gt, colmap_model=args.colmap, init=args.init,
                  output=args.out, observations=args.observations, sigma_px=args.sigma_px,
                  frequency_source=args.frequency_source)
    _, report = run_pipeline(cfg)
    d = report.to_dict()
    d.pop("feature_age", None)
    _dump(d)


def cmd_eval_tracks(args):
    tracks, _, t_origin = _load_track_obs(args.tracks, args.t_origin)
    scene, _ = eio.load_gt_sidecar(args.gt)
    times = np.unique(np.concatenate([tr.k for tr in tracks])) * tracks[0].dt + t_origin
    evals = evaluate_tracks(tracks, scene.poses(times), scene.intrinsics, THRESHOLDS, t_offset=t_origin)
    summary = summarize_track_evals(evals)
    summary["per_track"] = [{"track_id": e.track_id, "samples": e.n_samples, "degenerate": e.degenerate,
                             "rmse": {str(int(k)): v for k, v in e.rmse.items()},
                             "feature_age": {str(int(k)): v for k, v in e.feature_age.items()}}
                            for e in evals]
    _dump(summary, args.out)


def cmd_compare(args):
    a = eio.load_reconstruction(args.a)
    b = eio.load_reconstruction(args.b)
    _, obs, _ = _load_track_obs(args.tracks, args.t_origin)
    scene = eio.load_gt_sidecar(args.gt)[0] if args.gt else None
    corr = None
    if scene is not None and len(a.landmarks) != len(scene.landmarks):
        log.warning("landmarks do not correspond to the scene; structure error skipped")
        corr = {}
    report = compare_reconstructions(a, b, obs, scene, corr)
    _dump(report, args.out)


# ---- parser --------------------------------------------------------------------

def _tracker_flags(p):
    g = p.add_argument_group("tracker")
    g.add_argument("--lam", type=float)
    g.add_argument("--min-pts", dest="min_pts", type=int)
    g.add_argument("--eps", type=float)
    g.add_argument("--phi", type=float)
    g.add_argument("--n-sigma", dest="n_sigma", type=int)
    g.add_argument("--dt", type=float, help="track window in seconds")
    g.add_argument("--time-scale", dest="time_scale", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="evorbit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file with PipelineConfig fields")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "write a synthetic event stream and its ground truth")
    p.add_argument("--scene", help="scene spec JSON")
    p.add_argument("--preset", choices=("cube_corners", "ring", "random_blob"))
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--f", type=float, help="spin rate in Hz")
    p.add_argument("--rate", type=float, help="events per landmark per second")
    p.add_argument("--out", required=True)

    p = add("track", cmd_track, "event stream -> feature tracks")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    _tracker_flags(p)

    init_choices = ("colmap_model", "simulator_gt", "perturbed_gt")
    p = add("init", cmd_init, "tracks + poses -> initial orbit and landmarks")
    p.add_argument("--events", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--init", choices=init_choices)
    p.add_argument("--gt")
    p.add_argument("--colmap")
    p.add_argument("--frequency-source", dest="frequency_source", choices=("fft", "init"))
    p.add_argument("--t-origin", dest="t_origin", type=float)
    p.add_argument("--out", required=True)

    p = add("solve", cmd_solve, "refine an initial reconstruction")
    p.add_argument("--init", required=True, help="init.json")
    p.add_argument("--tracks", required=True)
    p.add_argument("--t-origin", dest="t_origin", type=float)
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "all stages")
    p.add_argument("--events")
    p.add_argument("--gt")
    p.add_argument("--colmap")
    p.add_argument("--init", choices=init_choices)
    p.add_argument("--observations", choices=("tracks", "simulator"))
    p.add_argument("--sigma-px", dest="sigma_px", type=float)
    p.add_argument("--frequency-source", dest="frequency_source", choices=("fft", "init"))
    p.add_argument("--out")
    _tracker_flags(p)

    p = add("eval-tracks", cmd_eval_tracks, "track reprojection RMSE and feature age under GT poses")
    p.add_argument("--tracks", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--t-origin", dest="t_origin", type=float)
    p.add_argument("--out")

    p = add("compare", cmd_compare, "compare two reconstructions")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--gt")
    p.add_argument("--t-origin", dest="t_origin", type=float)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValidationError, FileNotFoundError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EvorbitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
