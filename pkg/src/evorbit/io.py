"""On-disk formats: reconstruction JSON, ASCII PLY, GT sidecar, metrics and plot CSVs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import quat_from_matrix
from .orbit.model import CameraIntrinsics, OrbitParams
from .orbit.optimize import Reconstruction


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def reconstruction_to_dict(rec: Reconstruction):
    L = [[_num(v) for v in row] for row in rec.landmarks]
    return {
        "orbit": rec.orbit.to_dict(),
        "intrinsics": rec.intrinsics.to_dict(),
        "landmarks": L,
        "active": [bool(a) for a in rec.active],
        "times": [float(t) for t in rec.times],
        "rms_reprojection": _num(rec.rms_reprojection),
        "converged": bool(rec.converged),
        "iterations": int(rec.iterations),
        "cost": _num(rec.cost),
        "initial_cost": _num(rec.initial_cost),
        "cost_history": [_num(c) for c in rec.cost_history],
    }


def reconstruction_from_dict(d) -> Reconstruction:
    L = np.array([[np.nan if v is None else v for v in row] for row in d["landmarks"]], dtype=float)
    return Reconstruction(
        OrbitParams.from_dict(d["orbit"]), L.reshape(-1, 3), CameraIntrinsics.from_dict(d["intrinsics"]),
        times=np.array(d.get("times", []), dtype=float),
        active=np.array(d["active"], dtype=bool) if "active" in d else None,
        rms_reprojection=float("nan") if d.get("rms_reprojection") is None else d["rms_reprojection"],
        converged=bool(d.get("converged", False)), iterations=int(d.get("iterations", 0)),
        cost=float("nan") if d.get("cost") is None else d["cost"],
        initial_cost=float("nan") if d.get("initial_cost") is None else d["initial_cost"],
        cost_history=[float("nan") if c is None else c for c in d.get("cost_history", [])])


def save_reconstruction(rec: Reconstruction, path):
    write_json(path, reconstruction_to_dict(rec))


def load_reconstruction(path) -> Reconstruction:
    return reconstruction_from_dict(read_json(path))


def save_ply(path, points):
    """ASCII PLY point cloud; non-finite rows are skipped."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    P = P[np.all(np.isfinite(P), axis=1)]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(P)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for x, y, z in P:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_ply(path):
    with open(path, encoding="ascii") as fh:
        if fh.readline().strip() != "ply":
            raise ValidationError("not a PLY file")
        n = None
        for line in fh:
            s = line.strip()
            if s.startswith("format") and "ascii" not in s:
                raise ValidationError("only ASCII PLY is supported")
            if s.startswith("element vertex"):
                n = int(s.split()[2])
            if s == "end_header":
                break
        if n is None:
            raise ValidationError("PLY header has no vertex element")
        rows = [fh.readline().split()[:3] for _ in range(n)]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def save_gt_sidecar(path, scene, times=None, labels=None):
    """Scene geometry, poses at ``times`` and per-event landmark labels."""
    from .sim import scene_to_dict

    d = scene_to_dict(scene)
    if times is not None:
        P = scene.poses(times)
        d["poses"] = [{"t": float(t), "q": quat_from_matrix(R).tolist(), "translation": tr.tolist()}
                      for t, R, tr in zip(P.times, P.R, P.t)]
    if labels is not None:
        d["event_landmark"] = np.asarray(labels).astype(int).tolist()
    write_json(path, d)


def load_gt_sidecar(path):
    """(scene, event labels or None)."""
    from .sim import scene_from_dict

    d = read_json(path)
    labels = np.array(d["event_landmark"], dtype=np.int64) if "event_landmark" in d else None
    return scene_from_dict(d), labels


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def save_spectrum(path, freqs, power):
    write_csv(path, ["frequency_hz", "power"], zip(np.asarray(freqs, float), np.asarray(power, float)))


def save_residual_histogram(path, residuals, bins=50):
    """Histogram of per-observation reprojection error norms."""
    e = np.linalg.norm(np.asarray(residuals, float).reshape(-1, 2), axis=1)
    e = e[np.isfinite(e)]
    hi = float(e.max()) if len(e) and e.max() > 0 else 1.0
    counts, edges = np.histogram(e, bins=bins, range=(0.0, hi))
    write_csv(path, ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts.tolist()))


def save_screw_line(path, p0, p1):
    write_csv(path, ["u", "v"], [(float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1]))])


def ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
