"""
Initial orbit parameters from camera centres and from the event stream.

Camera centres (from an imported SfM model or from the simulator) are fitted
with a plane and then a circle; the spin rate comes from the dominant
frequency of the windowed mean event x-coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateGeometry, EmptyStream, ValidationError
from ..geometry import Z_AXIS, look_at_rotation, nearest_rotation, normalize, rodrigues_align
from ..tracking.tracks import num_windows, window_index
from .model import OrbitParams, camera_center


@dataclass
class PoseSet:
    """World-to-camera poses: camera point = R @ X + t."""
    times: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(-1, 3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1, 3)
        if not (len(self.times) == len(self.R) == len(self.t)):
            raise ValidationError("pose arrays differ in length")

    def __len__(self):
        return len(self.times)

    @property
    def centers(self):
        return camera_center(self.R, self.t)

    def check(self, tol=1e-9):
        err = np.abs(np.einsum("nji,njk->nik", self.R, self.R) - np.eye(3)).max(initial=0.0)
        if err > tol or np.any(np.linalg.det(self.R) < 0):
            raise ValidationError("pose rotations must be orthonormal with det +1")

    @classmethod
    def from_orbit(cls, times, theta: OrbitParams):
        from .model import orbit_poses

        R, t = orbit_poses(times, theta)
        return cls(times, R, t)


@dataclass
class CircleFit:
    n: np.ndarray
    c: np.ndarray
    r: float
    u: np.ndarray
    rms_residual: float


def _orient_ccw(n, pts):
    """Flip ``n`` so consecutive points turn counter-clockwise about it."""
    rel = pts - pts.mean(axis=0)
    turn = np.sum(np.cross(rel[:-1], rel[1:]), axis=0) @ n
    return -n if turn < 0 else n


def fit_plane(centers):
    """Least-squares plane through ordered camera centres.

    Fits z = a x + b y + d on the mean-centred points and returns the unit
    normal of (a, b, -1), oriented so the centres run counter-clockwise
    about it, plus the centroid. Falls back to the smallest principal
    direction when z is not a function of (x, y).
    """
    P = np.asarray(centers, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 3 or len(P) < 3:
        raise DegenerateGeometry("need at least 3 camera centres")
    t_c = P.mean(axis=0)
    T = P - t_c
    scale = np.abs(T).max()
    if scale == 0:
        raise DegenerateGeometry("camera centres coincide")
    sv_all = np.linalg.svd(T / scale, compute_uv=False)
    if sv_all[1] < 1e-9:
        raise DegenerateGeometry("camera centres are collinear")
    A = np.column_stack([T[:, 0], T[:, 1], np.ones(len(T))])
    sv = np.linalg.svd(A[:, :2] / scale, compute_uv=False)
    if sv[1] > 1e-8 * sv[0]:
        (a, b, _), *_ = np.linalg.lstsq(A, T[:, 2], rcond=None)
        n = normalize(np.array([a, b, -1.0]))
    else:
        n = np.linalg.svd(T, full_matrices=False)[2][2]
    return _orient_ccw(n, P), t_c


def fit_plane_tls(centers):
    """Total-least-squares normal (smallest principal direction)."""
    P = np.asarray(centers, dtype=np.float64)
    t_c = P.mean(axis=0)
    return np.linalg.svd(P - t_c, full_matrices=False)[2][2], t_c


def fit_circle(centers, n, t_c) -> CircleFit:
    """Algebraic circle fit in the plane through ``t_c`` with normal ``n``."""
    P = np.asarray(centers, dtype=np.float64)
    n = normalize(n)
    Rnz = rodrigues_align(n, Z_AXIS)
    Q = (P - t_c) @ Rnz.T
    xy = Q[:, :2]
    A = np.column_stack([xy, np.ones(len(xy))])
    scale = np.abs(xy).max(initial=0.0)
    if scale == 0 or np.linalg.svd(A[:, :2] / scale, compute_uv=False)[1] < 1e-9:
        raise DegenerateGeometry("centres are collinear in the fitted plane")
    theta, *_ = np.linalg.lstsq(A, np.sum(xy * xy, axis=1), rcond=None)
    a, b = theta[0] / 2.0, theta[1] / 2.0
    rad2 = theta[2] + a * a + b * b
    if not np.isfinite(rad2) or rad2 <= 0:
        raise DegenerateGeometry("circle fit gave a non-positive squared radius")
    r = float(np.sqrt(rad2))
    c = Rnz.T @ np.array([a, b, 0.0]) + t_c
    d0 = P[0] - c
    d0 = d0 - (d0 @ n) * n
    if np.linalg.norm(d0) < 1e-12:
        raise DegenerateGeometry("first centre coincides with the circle centre")
    u = normalize(d0)
    rel = P - c
    h = rel @ n
    rho = np.linalg.norm(rel - np.outer(h, n), axis=1)
    rms = float(np.sqrt(np.mean((rho - r) ** 2 + h ** 2)))
    return CircleFit(n, c, r, u, rms)


@dataclass
class FrequencyEstimate:
    f_init: float
    freqs: np.ndarray
    power: np.ndarray
    dominant: bool = True
    series: np.ndarray = None

    @property
    def spectrum(self):
        return list(zip(self.freqs.tolist(), self.power.tolist()))


def _refine_peak(spec, k):
    """Parabolic interpolation of the magnitude peak at bin ``k``, in bins."""
    if 1 <= k - 1 and k + 1 < len(spec):
        y0, y1, y2 = np.abs(spec[k - 1]), np.abs(spec[k]), np.abs(spec[k + 1])
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            return float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))
    return 0.0


def dominant_frequency(series, dt, max_harmonic=3, harmonic_ratio=0.02, noise_factor=20.0) -> FrequencyEstimate:
    """Peak of the power spectrum of a uniformly sampled series.

    The mean is removed first and the peak bin is refined with a parabola
    through it and its two neighbours.

    Objects that look alike after half a turn put most of the power at twice
    the spin rate. When ``max_harmonic > 1`` the peak is therefore taken as
    the m-th harmonic of a lower fundamental if the bin near ``peak / m``
    (m <= max_harmonic, at least 2 bins from DC) holds more than
    ``harmonic_ratio`` of the peak power and ``noise_factor`` times the
    median power. ``max_harmonic=1`` returns the plain highest peak.
    """
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 8:
        raise ValidationError("need at least 8 samples for a frequency estimate")
    x = x - x.mean()
    spec = np.fft.rfft(x)
    power = np.abs(spec) ** 2
    freqs = np.fft.rfftfreq(len(x), dt)
    mag = np.abs(spec[1:])
    noise_floor = 1e-9 * (np.abs(series).max() + 1.0) * len(x)
    if mag.size == 0 or mag.max() <= noise_floor:
        return FrequencyEstimate(float("nan"), freqs, power, dominant=False, series=x)
    k = int(np.argmax(power[1:])) + 1
    kpeak = k
    noise = np.median(power[1:])
    for m in range(max_harmonic, 1, -1):
        centre = int(round(kpeak / m))
        lo, hi = max(centre - 1, 2), min(centre + 1, kpeak - 1)
        if lo > hi:
            continue
        j = lo + int(np.argmax(power[lo:hi + 1]))
        if power[j] >= harmonic_ratio * power[kpeak] and power[j] >= noise_factor * noise:
            k = j
            break
    df = freqs[1] - freqs[0]
    return FrequencyEstimate(float(freqs[k] + _refine_peak(spec, k) * df), freqs, power, series=x)


def windowed_mean_x(stream, dt_f, t_origin=None):
    """Mean event x in windows ``(f dt_f, (f+1) dt_f]``, f = 1 .. F.

    Empty windows repeat the previous value (leading empty windows take the
    first non-empty one).
    """
    if t_origin is None:
        t_origin = float(stream.t[0]) if len(stream) else 0.0
    F = num_windows(stream.t[-1] - t_origin, dt_f) if len(stream) else 0
    if F < 1:
        raise EmptyStream("stream shorter than two frequency windows")
    k = window_index(stream.t, dt_f, t_origin)
    sel = (k >= 1) & (k <= F)
    counts = np.bincount(k[sel] - 1, minlength=F)
    sums = np.bincount(k[sel] - 1, weights=stream.x[sel].astype(np.float64), minlength=F)
    if counts.sum() == 0:
        raise EmptyStream("no events inside the frequency windows")
    means = np.full(F, np.nan)
    has = counts > 0
    means[has] = sums[has] / counts[has]
    first = np.flatnonzero(has)[0]
    means[:first] = means[first]
    for i in range(first + 1, F):
        if not has[i]:
            means[i] = means[i - 1]
    return means


def estimate_frequency(stream, dt_f=0.020, t_origin=None, max_harmonic=3) -> FrequencyEstimate:
    """Spin rate from the spectrum of the windowed mean event x-coordinate."""
    if len(stream) == 0:
        raise EmptyStream("empty event stream")
    series = windowed_mean_x(stream, dt_f, t_origin)
    if len(series) < 8:
        raise ValidationError("need at least 8 frequency windows")
    return dominant_frequency(series, dt_f, max_harmonic=max_harmonic)


def _look_at_orbit():
    return look_at_rotation(-np.array([1.0, 0.0, 0.0]))


def init_orbit(poses: PoseSet, f_init: float) -> OrbitParams:
    """Orbit parameters from general camera poses and a spin-rate guess.

    ``u`` is rotated back from the first camera by ``2 pi f t_1`` so that it
    marks the phase at t = 0. ``R0`` is the chordal mean of the per-camera
    rotation left after removing the orbit frame at each camera's measured
    phase.
    """
    if len(poses) < 3:
        raise ValidationError("init_orbit needs at least 3 poses")
    if not f_init > 0:
        raise ValidationError("f_init must be positive")
    C = poses.centers
    n, t_c = fit_plane(C)
    fit = fit_circle(C, n, t_c)
    v1 = np.cross(n, fit.u)
    a1 = 2.0 * np.pi * f_init * poses.times[0]
    u = np.cos(a1) * fit.u - np.sin(a1) * v1
    theta = OrbitParams(fit.r, f_init, np.eye(3), n, u, fit.c).normalized()

    F = theta.frame
    rel = (C - theta.c) @ F.T
    phase = np.arctan2(rel[:, 1], rel[:, 0])
    L = _look_at_orbit()
    acc = np.zeros((3, 3))
    for Rk, ph in zip(poses.R, phase):
        c, s = np.cos(ph), np.sin(ph)
        Rz = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        acc += Rk @ (L @ Rz @ F).T
    theta.R0 = nearest_rotation(acc)
    return theta
