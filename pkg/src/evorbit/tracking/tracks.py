"""Windowed feature tracks from clusters, plus the track CSV format."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FeatureTrack:
    track_id: int
    k: np.ndarray  # window indices, strictly increasing
    uv: np.ndarray  # (K, 2) mean pixel position per window
    dt: float
    source_cluster: int = -1
    count: np.ndarray = None  # events averaged per window
    events: list = field(default_factory=list, repr=False)  # stream indices per window

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        if self.count is None:
            self.count = np.ones(len(self.k), dtype=np.int64)

    def __len__(self):
        return len(self.k)

    @property
    def t(self) -> np.ndarray:
        return self.k * self.dt


def num_windows(duration, dt):
    # tolerate float noise such as 3.0 / 0.03 = 99.99999999999999
    return int(math.floor(duration / dt + 1e-9)) - 1


def window_index(t, dt, t_origin=0.0):
    """Window k such that t - t_origin lies in (k dt, (k+1) dt]."""
    rel = (np.asarray(t, dtype=np.float64) - t_origin) / dt
    return np.ceil(rel - 1e-9).astype(np.int64) - 1


def extract_tracks(clusters, dt=0.030, duration=None, t_origin=0.0, min_windows=2):
    """Average each cluster's events inside windows ``k = 1 .. K``.

    ``K = floor(duration / dt) - 1``. Clusters sampled in fewer than
    ``min_windows`` windows are dropped.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if duration is None:
        if not clusters:
            return []
        duration = max(c.t[-1] for c in clusters) - t_origin
    K = num_windows(duration, dt)
    if K < 1:
        raise ValueError(f"duration {duration} s holds no complete window of {dt} s")
    tracks = []
    for c in clusters:
        k = window_index(c.t, dt, t_origin)
        valid = (k >= 1) & (k <= K)
        if not valid.any():
            continue
        kv = k[valid]
        xs, ys, idx = c.x[valid], c.y[valid], c.index[valid]
        wins, inv, counts = np.unique(kv, return_inverse=True, return_counts=True)
        if len(wins) < min_windows:
            continue
        u = np.bincount(inv, weights=xs) / counts
        v = np.bincount(inv, weights=ys) / counts
        events = [idx[inv == w] for w in range(len(wins))]
        tracks.append(FeatureTrack(len(tracks), wins, np.column_stack([u, v]), dt,
                                   source_cluster=c.id, count=counts, events=events))
    return tracks


def save_tracks(tracks, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "k", "t", "u", "v"])
        for tr in tracks:
            for k, (u, v) in zip(tr.k, tr.uv):
                w.writerow([tr.track_id, int(k), repr(float(k * tr.dt)), repr(float(u)), repr(float(v))])


def load_tracks(path, dt=None):
    """Read a track CSV. ``dt`` is recovered from ``t / k`` when not given."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            tid = int(row["track_id"])
            rows.setdefault(tid, []).append((int(row["k"]), float(row["t"]), float(row["u"]), float(row["v"])))
    tracks = []
    for tid in sorted(rows):
        arr = sorted(rows[tid])
        k = np.array([a[0] for a in arr])
        t = np.array([a[1] for a in arr])
        step = dt
        if step is None:
            nz = k != 0
            step = float(np.median(t[nz] / k[nz])) if nz.any() else 1.0
        tracks.append(FeatureTrack(tid, k, [(a[2], a[3]) for a in arr], step))
    return tracks
