"""
Neighbourhood density score of corner events and the per-polarity mean filter.

The score of corner ``i`` is the number of same-polarity events of the full
stream within distance ``lam`` of it in (x, y, t * time_scale) space, the
corner itself excluded, divided by ``lam``.
"""
from dataclasses import dataclass

import numpy as np

from .. import _accel
from .._accel import njit
from ..events import EventStream


@dataclass
class CornerEvents:
    """Corner events that survived the density filter.

    ``index`` points into the source stream; ``density`` is the score of each.
    """
    index: np.ndarray
    density: np.ndarray
    mean_density: dict

    def __len__(self):
        return len(self.index)


@njit(cache=True)
def _neighbour_counts_kernel(idx, t, x, y, p, lam, time_scale):
    n = t.shape[0]
    lam2 = lam * lam
    counts = np.zeros(idx.shape[0], dtype=np.int64)
    for j in range(idx.shape[0]):
        i = idx[j]
        ti = t[i]
        xi = x[i]
        yi = y[i]
        pi = p[i]
        c = 0
        k = i - 1
        while k >= 0:
            dt = (ti - t[k]) * time_scale
            if dt > lam:
                break
            if p[k] == pi:
                dx = x[k] - xi
                dy = y[k] - yi
                if dx * dx + dy * dy + dt * dt <= lam2:
                    c += 1
            k -= 1
        k = i + 1
        while k < n:
            dt = (t[k] - ti) * time_scale
            if dt > lam:
                break
            if p[k] == pi:
                dx = x[k] - xi
                dy = y[k] - yi
                if dx * dx + dy * dy + dt * dt <= lam2:
                    c += 1
            k += 1
        counts[j] = c
    return counts


def neighbour_counts_numba(idx, stream, lam, time_scale):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if len(idx) == 0:
        return np.zeros(0, dtype=np.int64)
    return _neighbour_counts_kernel(idx, stream.t, stream.x.astype(np.float64),
                                    stream.y.astype(np.float64), stream.p,
                                    float(lam), float(time_scale))


def neighbour_counts_numpy(idx, stream, lam, time_scale):
    idx = np.asarray(idx, dtype=np.int64)
    # widened so the exact distance test below decides boundary cases
    half = lam / time_scale * (1 + 1e-9) + 1e-12
    lo = np.searchsorted(stream.t, stream.t[idx] - half, side="left")
    hi = np.searchsorted(stream.t, stream.t[idx] + half, side="right")
    counts = np.zeros(len(idx), dtype=np.int64)
    lam2 = lam * lam
    for j, i in enumerate(idx):
        s = slice(lo[j], hi[j])
        dt = (stream.t[s] - stream.t[i]) * time_scale
        dx = stream.x[s] - float(stream.x[i])
        dy = stream.y[s] - float(stream.y[i])
        hit = (stream.p[s] == stream.p[i]) & (dx * dx + dy * dy + dt * dt <= lam2)
        # the corner itself always matches
        counts[j] = int(hit.sum()) - 1
    return counts


def density_scores(corners, stream: EventStream, lam=7.0, time_scale=1000.0, backend=None):
    if lam <= 0:
        raise ValueError("lam must be positive")
    backend = backend or _accel.backend_name()
    fn = neighbour_counts_numba if backend == "numba" else neighbour_counts_numpy
    return fn(corners, stream, lam, time_scale) / float(lam)


def density_filter(corners, stream: EventStream, lam=7.0, time_scale=1000.0, backend=None) -> CornerEvents:
    """Keep corners whose score reaches the mean score of their polarity.

    Single pass: the means are computed once over all input corners.
    """
    corners = np.asarray(corners, dtype=np.int64)
    if len(corners) == 0:
        return CornerEvents(corners, np.zeros(0), {})
    d = density_scores(corners, stream, lam, time_scale, backend)
    pol = stream.p[corners]
    keep = np.zeros(len(corners), dtype=bool)
    means = {}
    for sign in (1, -1):
        sel = pol == sign
        if not sel.any():
            continue
        mu = float(d[sel].mean())
        means[sign] = mu
        keep |= sel & (d >= mu)
    return CornerEvents(corners[keep], d[keep], means)
