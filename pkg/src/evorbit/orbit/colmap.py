"""
Reader (and a small writer) for COLMAP text models.

Only the fields needed for orbit initialisation are used: pinhole
intrinsics, per-image world-to-camera poses and the 3D points with their
track elements. Image names carry the track window index, e.g.
``win_000123.png`` is window 123.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..geometry import matrix_from_quat, quat_from_matrix
from .init import PoseSet
from .model import CameraIntrinsics, Observations

log = logging.getLogger(__name__)

_WINDOW = re.compile(r"win_(\d+)")


@dataclass
class ColmapImage:
    image_id: int
    q: np.ndarray  # qw qx qy qz
    t: np.ndarray
    camera_id: int
    name: str
    xy: np.ndarray = None  # (N, 2) keypoints
    point3d: np.ndarray = None  # (N,) point ids, -1 when unmatched

    @property
    def R(self):
        return matrix_from_quat(self.q)

    @property
    def window(self) -> int:
        m = _WINDOW.search(self.name)
        if m is None:
            raise ValidationError(f"image name {self.name!r} carries no window index")
        return int(m.group(1))


@dataclass
class ColmapModel:
    cameras: dict
    images: list
    points: dict = field(default_factory=dict)  # id -> (xyz, [(image_id, point2d_idx)])

    @property
    def intrinsics(self) -> CameraIntrinsics:
        if len(self.cameras) != 1:
            log.warning("model has %d cameras; using the first", len(self.cameras))
        return self.cameras[sorted(self.cameras)[0]]

    def poses(self, dt, t_offset=0.0) -> PoseSet:
        """Poses sorted by window, at times ``window * dt + t_offset``."""
        imgs = sorted(self.images, key=lambda im: im.window)
        k = np.array([im.window for im in imgs])
        if len(np.unique(k)) != len(k):
            raise ValidationError("two images share a window index")
        return PoseSet(k * dt + t_offset, np.array([im.R for im in imgs]), np.array([im.t for im in imgs]))

    def landmarks(self):
        """(ids, xyz) of the 3D points, sorted by id."""
        ids = np.array(sorted(self.points), dtype=np.int64)
        xyz = np.array([self.points[i][0] for i in ids]).reshape(-1, 3)
        return ids, xyz

    def observations(self, dt, t_offset=0.0) -> Observations:
        """Track elements as observations; ``point`` indexes :meth:`landmarks` order."""
        ids, _ = self.landmarks()
        row = {int(pid): r for r, pid in enumerate(ids)}
        by_id = {im.image_id: im for im in self.images}
        pts, ks, uvs = [], [], []
        for pid in ids:
            for img_id, p2d in self.points[pid][1]:
                im = by_id.get(img_id)
                if im is None or im.xy is None or p2d >= len(im.xy):
                    continue
                pts.append(row[int(pid)])
                ks.append(im.window)
                uvs.append(im.xy[p2d])
        k = np.array(ks, dtype=np.int64)
        return Observations(np.array(pts, dtype=np.int64), k, k * dt + t_offset,
                            np.array(uvs, dtype=np.float64).reshape(-1, 2))


def _data_lines(path):
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if s.startswith("#"):
                continue
            yield s


def read_cameras(path):
    cams = {}
    for line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        cid, model, w, h = int(parts[0]), parts[1], int(parts[2]), int(parts[3])
        p = [float(v) for v in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = p[:4]
        elif model in ("SIMPLE_PINHOLE", "SIMPLE_RADIAL", "RADIAL"):
            if model != "SIMPLE_PINHOLE":
                log.warning("camera %d: ignoring %s distortion terms", cid, model)
            fx = fy = p[0]
            cx, cy = p[1], p[2]
        else:
            raise ValidationError(f"unsupported camera model {model}")
        cams[cid] = CameraIntrinsics(fx, fy, cx, cy, w, h)
    return cams


def read_images(path):
    images = []
    lines = list(_data_lines(path))
    i = 0
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        parts = lines[i].split()
        if len(parts) < 10:
            raise ValidationError(f"malformed image line: {lines[i]!r}")
        img = ColmapImage(int(parts[0]), np.array([float(v) for v in parts[1:5]]),
                          np.array([float(v) for v in parts[5:8]]), int(parts[8]), " ".join(parts[9:]))
        pts = lines[i + 1].split() if i + 1 < len(lines) else []
        vals = np.array([float(v) for v in pts]).reshape(-1, 3) if pts else np.zeros((0, 3))
        img.xy = vals[:, :2]
        img.point3d = vals[:, 2].astype(np.int64)
        images.append(img)
        i += 2
    return images


def read_points3d(path):
    points = {}
    for line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        pid = int(parts[0])
        xyz = np.array([float(v) for v in parts[1:4]])
        track = [(int(a), int(b)) for a, b in zip(parts[8::2], parts[9::2])]
        points[pid] = (xyz, track)
    return points


def read_model(directory) -> ColmapModel:
    d = Path(directory)
    for name in ("cameras.txt", "images.txt"):
        if not (d / name).exists():
            raise FileNotFoundError(d / name)
    points = read_points3d(d / "points3D.txt") if (d / "points3D.txt").exists() else {}
    return ColmapModel(read_cameras(d / "cameras.txt"), read_images(d / "images.txt"), points)


def _f(v):
    return repr(float(v))


def write_model(directory, K: CameraIntrinsics, poses: PoseSet, windows, landmarks=None, obs: Observations = None):
    """Write a text model; used to build fixtures from simulated scenes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "cameras.txt", "w") as fh:
        fh.write("# Camera list\n")
        fh.write(f"1 PINHOLE {K.width} {K.height} {_f(K.fx)} {_f(K.fy)} {_f(K.cx)} {_f(K.cy)}\n")
    img_of_window = {int(k): i + 1 for i, k in enumerate(windows)}
    per_image = {i + 1: [] for i in range(len(windows))}
    tracks = {}
    if obs is not None:
        for m in range(len(obs)):
            img = img_of_window.get(int(obs.k[m]))
            if img is None:
                continue
            per_image[img].append((obs.uv[m], int(obs.point[m])))
            tracks.setdefault(int(obs.point[m]), []).append((img, len(per_image[img]) - 1))
    with open(d / "images.txt", "w") as fh:
        fh.write("# Image list with two lines of data per image\n")
        for i, k in enumerate(windows):
            q = quat_from_matrix(poses.R[i])
            t = poses.t[i]
            fh.write(f"{i + 1} {' '.join(_f(v) for v in q)} {' '.join(_f(v) for v in t)} "
                     f"1 win_{int(k):06d}.png\n")
            fh.write(" ".join(f"{_f(uv[0])} {_f(uv[1])} {pid}" for uv, pid in per_image[i + 1]) + "\n")
    with open(d / "points3D.txt", "w") as fh:
        fh.write("# 3D point list\n")
        if landmarks is not None:
            for pid, X in enumerate(np.asarray(landmarks)):
                if not np.all(np.isfinite(X)):
                    continue
                elems = " ".join(f"{a} {b}" for a, b in tracks.get(pid, []))
                fh.write(f"{pid} {_f(X[0])} {_f(X[1])} {_f(X[2])} 128 128 128 0.0 {elems}\n")
