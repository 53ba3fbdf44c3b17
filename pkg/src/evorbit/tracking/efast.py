"""
eFAST corner events on the Surface of Active Events.

An event is a corner when, on its own polarity's SAE, the 16-pixel circle of
radius 3 holds a contiguous arc of 3-6 pixels and the 20-pixel circle of
radius 4 holds a contiguous arc of 4-8 pixels whose timestamps are all
strictly newer than every other pixel on the same circle. Events closer than
4 px to the sensor border are never corners.
"""
import numpy as np

from .. import _accel
from .._accel import njit
from ..events import EventStream, SAE

# (dx, dy) offsets, walked in order around each circle
CIRCLE3 = np.array([
    [0, 3], [1, 3], [2, 2], [3, 1], [3, 0], [3, -1], [2, -2], [1, -3],
    [0, -3], [-1, -3], [-2, -2], [-3, -1], [-3, 0], [-3, 1], [-2, 2], [-1, 3],
], dtype=np.int64)
CIRCLE4 = np.array([
    [0, 4], [1, 4], [2, 3], [3, 2], [4, 1], [4, 0], [4, -1], [3, -2],
    [2, -3], [1, -4], [0, -4], [-1, -4], [-2, -3], [-3, -2], [-4, -1], [-4, 0],
    [-4, 1], [-3, 2], [-2, 3], [-1, 4],
], dtype=np.int64)
ARC3 = (3, 6)
ARC4 = (4, 8)
BORDER = 4


@njit(cache=True)
def _has_arc(vals, lmin, lmax):
    n = vals.shape[0]
    for start in range(n):
        for length in range(lmin, lmax + 1):
            arc_min = np.inf
            for j in range(length):
                v = vals[(start + j) % n]
                if v < arc_min:
                    arc_min = v
            ok = True
            for j in range(length, n):
                if vals[(start + j) % n] >= arc_min:
                    ok = False
                    break
            if ok:
                return True
    return False


@njit(cache=True)
def _efast_kernel(t, x, y, p, width, height, c3, c4):
    n = t.shape[0]
    sae = np.full((2, height, width), -np.inf)
    out = np.zeros(n, dtype=np.bool_)
    v3 = np.empty(c3.shape[0])
    v4 = np.empty(c4.shape[0])
    for i in range(n):
        ch = 1 if p[i] > 0 else 0
        xi = x[i]
        yi = y[i]
        sae[ch, yi, xi] = t[i]
        if xi < 4 or xi >= width - 4 or yi < 4 or yi >= height - 4:
            continue
        for k in range(c3.shape[0]):
            v3[k] = sae[ch, yi + c3[k, 1], xi + c3[k, 0]]
        if not _has_arc(v3, 3, 6):
            continue
        for k in range(c4.shape[0]):
            v4[k] = sae[ch, yi + c4[k, 1], xi + c4[k, 0]]
        out[i] = _has_arc(v4, 4, 8)
    return out


def _arc_masks(n, lmin, lmax):
    masks = []
    for start in range(n):
        for length in range(lmin, lmax + 1):
            m = np.zeros(n, dtype=bool)
            m[(start + np.arange(length)) % n] = True
            masks.append(m)
    return np.array(masks)


_MASKS3 = _arc_masks(16, *ARC3)
_MASKS4 = _arc_masks(20, *ARC4)


def _has_arc_numpy(vals, masks):
    arc_min = np.where(masks, vals, np.inf).min(axis=1)
    rest_max = np.where(masks, -np.inf, vals).max(axis=1)
    return bool(np.any(arc_min > rest_max))


def efast_numpy(stream: EventStream) -> np.ndarray:
    """Reference path: replay through an :class:`SAE`, one event at a time."""
    sae = SAE(stream.width, stream.height)
    out = np.zeros(len(stream), dtype=bool)
    w, h = stream.width, stream.height
    for i in range(len(stream)):
        t, x, y, p = float(stream.t[i]), int(stream.x[i]), int(stream.y[i]), int(stream.p[i])
        sae.update((t, x, y, p))
        if x < BORDER or x >= w - BORDER or y < BORDER or y >= h - BORDER:
            continue
        grid = sae.grid[SAE.channel(p)]
        v3 = grid[y + CIRCLE3[:, 1], x + CIRCLE3[:, 0]]
        if not _has_arc_numpy(v3, _MASKS3):
            continue
        v4 = grid[y + CIRCLE4[:, 1], x + CIRCLE4[:, 0]]
        out[i] = _has_arc_numpy(v4, _MASKS4)
    return out


def efast_numba(stream: EventStream) -> np.ndarray:
    if len(stream) == 0:
        return np.zeros(0, dtype=bool)
    return _efast_kernel(stream.t, stream.x, stream.y, stream.p,
                         stream.width, stream.height, CIRCLE3, CIRCLE4)


def corner_mask(stream: EventStream, backend=None) -> np.ndarray:
    backend = backend or _accel.backend_name()
    if backend == "numba":
        return efast_numba(stream)
    return efast_numpy(stream)


def detect_corners(stream: EventStream, backend=None) -> np.ndarray:
    """Indices (into ``stream``) of the events classified as corners, in time order."""
    return np.flatnonzero(corner_mask(stream, backend))
