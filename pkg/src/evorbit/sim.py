"""
Synthetic spinning-object scenes.

A static camera watching an object spin is modelled as a camera orbiting a
static object. Landmarks carry an outward normal; a landmark is visible when
it is in front of the camera, projects inside the sensor and faces the
camera (back-face test), which reproduces periodic self-occlusion.

Events are feature-centric: each visible landmark emits events at a fixed
rate around its projected pixel (uniform in a small disc plus Gaussian
jitter), with alternating polarity. Uniform background noise is added on top.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateGeometry
from .events import EventStream
from .geometry import axis_angle, normalize, rodrigues_align
from .orbit.init import PoseSet
from .orbit.model import CameraIntrinsics, Observations, OrbitParams, orbit_poses
from .tracking.tracks import num_windows

PRESETS = ("cube_corners", "ring", "random_blob")


def default_intrinsics():
    """DAVIS346-like pinhole camera."""
    return CameraIntrinsics(fx=320.0, fy=320.0, cx=173.0, cy=130.0, width=346, height=260)


def default_orbit(f=1.5, distance=4.0, elevation_deg=30.0, axis=(0.15, -0.25, 1.0),
                  phase_deg=20.0, roll_deg=10.0):
    """Orbit that keeps an object at the world origin on the optical axis.

    The camera circles the spin axis (through the origin) at ``distance``
    from the origin, ``elevation_deg`` above the object's equatorial plane.
    """
    n = normalize(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = normalize(ref - (ref @ n) * n)
    u = axis_angle(n, np.deg2rad(phase_deg)) @ u
    el = np.deg2rad(elevation_deg)
    r = distance * np.cos(el)
    c = distance * np.sin(el) * n
    theta = OrbitParams(r, f, np.eye(3), n, u, c)
    # direction of the origin in the R0 = I camera frame is constant in time
    R, t = orbit_poses([0.0], theta)
    q = R[0] @ np.zeros(3) + t[0]
    R0 = axis_angle([0, 0, 1], np.deg2rad(roll_deg)) @ rodrigues_align(q, [0.0, 0.0, 1.0])
    theta.R0 = R0
    return theta


@dataclass
class SimScene:
    orbit_gt: OrbitParams
    landmarks: np.ndarray
    normals: np.ndarray
    intrinsics: CameraIntrinsics
    duration: float
    seed: int
    preset: str = "random_blob"
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def diameter(self) -> float:
        d = self.landmarks[:, None, :] - self.landmarks[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())

    def poses(self, times) -> PoseSet:
        return PoseSet.from_orbit(times, self.orbit_gt)


@dataclass
class SimEventConfig:
    events_per_landmark_per_second: float = 8000.0
    pixel_jitter: float = 0.5
    timestamp_jitter: float = 0.0
    background_noise_rate: float = 2000.0
    feature_radius: float = 2.5
    polarity_model: str = "alternating"
    rate_model: str = "motion"  # "constant", or "motion": rate follows image speed
    base_rate_fraction: float = 0.5  # motion model: share of the rate that ignores speed

    def __post_init__(self):
        for name in ("events_per_landmark_per_second", "pixel_jitter", "timestamp_jitter",
                     "background_noise_rate", "feature_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.base_rate_fraction <= 1.0:
            raise ValueError("base_rate_fraction must lie in [0, 1]")
        if self.polarity_model != "alternating":
            raise ValueError("only the alternating polarity model is supported")
        if self.rate_model not in ("constant", "motion"):
            raise ValueError("rate_model must be 'constant' or 'motion'")


def make_scene(preset="random_blob", orbit_gt: OrbitParams = None, duration=4.0, seed=0,
               n_points=50, size=1.0, intrinsics=None, center=(0.0, 0.0, 0.0)) -> SimScene:
    """Landmark cloud with outward normals around ``center``.

    cube_corners: 8 points (+-a, +-a, +-a) with a = size / sqrt(3);
    ring: ``n_points`` equally spaced on a circle of radius ``size``;
    random_blob: ``n_points`` uniform on a sphere of radius ``size``.
    """
    orbit_gt = orbit_gt if orbit_gt is not None else default_orbit()
    orbit_gt.validate()
    center = np.asarray(center, dtype=np.float64)
    if preset == "cube_corners":
        a = size / np.sqrt(3.0)
        pts = np.array([[sx, sy, sz] for sx in (-a, a) for sy in (-a, a) for sz in (-a, a)])
    elif preset == "ring":
        ang = 2 * np.pi * np.arange(n_points) / n_points
        pts = size * np.column_stack([np.cos(ang), np.zeros(n_points), np.sin(ang)])
    elif preset == "random_blob":
        rng = np.random.default_rng([seed, 0])
        pts = size * normalize(rng.normal(size=(n_points, 3)))
    else:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    normals = normalize(pts)
    return SimScene(orbit_gt.copy(), pts + center, normals, intrinsics or default_intrinsics(),
                    float(duration), int(seed), preset, center)


def visibility(scene: SimScene, times, points=None):
    """Visibility mask (len(times), n_points) and projected pixels."""
    R, t = orbit_poses(times, scene.orbit_gt)
    X = scene.landmarks if points is None else scene.landmarks[points]
    N = scene.normals if points is None else scene.normals[points]
    Xc = np.einsum("tij,pj->tpi", R, X) + t[:, None, :]
    K = scene.intrinsics
    Z = Xc[..., 2]
    safeZ = np.where(Z > 1e-9, Z, 1.0)
    uv = np.stack([K.fx * Xc[..., 0] / safeZ + K.cx, K.fy * Xc[..., 1] / safeZ + K.cy], axis=-1)
    C = -np.einsum("tji,tj->ti", R, t)
    view = X[None, :, :] - C[:, None, :]
    facing = np.einsum("tpi,pi->tp", view, N) < 0
    inside = (uv[..., 0] >= 0) & (uv[..., 0] < K.width) & (uv[..., 1] >= 0) & (uv[..., 1] < K.height)
    return (Z > 1e-9) & inside & facing, uv


def window_times(duration, dt):
    """Indices k = 1..K and midpoints (k + 1/2) dt of the track windows."""
    K = num_windows(duration, dt)
    k = np.arange(1, K + 1)
    return k, (k + 0.5) * dt


def gt_observations(scene: SimScene, dt=0.030, sigma_px=0.0, seed=None) -> Observations:
    """Visible landmark projections at window midpoints, plus Gaussian noise.

    ``point`` indexes the scene landmarks, so ``landmark_gt == point``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k, times = window_times(scene.duration, dt)
    vis, uv = visibility(scene, times)
    ti, pi = np.nonzero(vis)
    order = np.lexsort((ti, pi))
    ti, pi = ti[order], pi[order]
    meas = uv[ti, pi]
    if sigma_px > 0:
        rng = np.random.default_rng([scene.seed if seed is None else seed, 1])
        meas = meas + rng.normal(scale=sigma_px, size=meas.shape)
    return Observations(pi, k[ti], times[ti], meas, landmark_gt=pi.copy(),
                        meta={"dt": dt, "sigma_px": sigma_px})


def gt_events(scene: SimScene, cfg: SimEventConfig = None) -> EventStream:
    """Synthetic event stream; ``meta["landmark"]`` labels each event (-1 = noise)."""
    cfg = cfg or SimEventConfig()
    K = scene.intrinsics
    rng = np.random.default_rng([scene.seed, 2])
    T = scene.duration
    cols = []
    grid = np.arange(0.0, T + 1e-3, 1e-3)
    for p in range(len(scene.landmarks)):
        peak = 1.0
        if cfg.rate_model == "motion":
            weight = _motion_weight(scene, grid, p, cfg.base_rate_fraction)
            peak = weight.max(initial=0.0)
        n_ev = rng.poisson(cfg.events_per_landmark_per_second * T * peak)
        if n_ev == 0:
            continue
        ts = np.sort(rng.uniform(0.0, T, n_ev))
        keep = rng.uniform(size=n_ev) * peak < np.interp(ts, grid, weight) if cfg.rate_model == "motion" else True
        vis, uv = visibility(scene, ts, points=[p])
        vis, uv = vis[:, 0] & keep, uv[:, 0]
        ts, uv = ts[vis], uv[vis]
        m = len(ts)
        if m == 0:
            continue
        rad = cfg.feature_radius * np.sqrt(rng.uniform(size=m))
        ang = rng.uniform(0, 2 * np.pi, m)
        xy = uv + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        xy += rng.normal(scale=cfg.pixel_jitter, size=xy.shape) if cfg.pixel_jitter > 0 else 0.0
        if cfg.timestamp_jitter > 0:
            ts = np.clip(ts + rng.normal(scale=cfg.timestamp_jitter, size=m), 0.0, None)
        pol = np.where(np.arange(m) % 2 == 0, 1, -1)
        cols.append((ts, xy[:, 0], xy[:, 1], pol, np.full(m, p)))
    n_bg = rng.poisson(cfg.background_noise_rate * T)
    if n_bg:
        cols.append((rng.uniform(0.0, T, n_bg), rng.integers(0, K.width, n_bg).astype(float),
                     rng.integers(0, K.height, n_bg).astype(float),
                     rng.choice([-1, 1], n_bg), np.full(n_bg, -1)))
    if not cols:
        s = EventStream.empty(K.width, K.height)
        s.meta["landmark"] = np.zeros(0, dtype=np.int64)
        return s
    t, x, y, pol, lab = (np.concatenate(c) for c in zip(*cols))
    x = np.rint(x).astype(np.int64)
    y = np.rint(y).astype(np.int64)
    ok = (x >= 0) & (x < K.width) & (y >= 0) & (y < K.height)
    t, x, y, pol, lab = t[ok], x[ok], y[ok], pol[ok], lab[ok]
    order = np.argsort(t, kind="stable")
    stream = EventStream(t[order], x[order], y[order], pol[order], K.width, K.height,
                         {"resorted": False, "landmark": lab[order].astype(np.int64)})
    return stream


def _motion_weight(scene, grid, p, base):
    """Relative emission rate on ``grid``: ``base + (1 - base) * speed / mean speed``.

    Brightness-change sensors fire in proportion to how fast an edge moves,
    so fast-moving features produce proportionally more events.
    """
    vis, uv = visibility(scene, grid, points=[p])
    vis, uv = vis[:, 0], uv[:, 0]
    speed = np.zeros(len(grid))
    speed[1:] = np.linalg.norm(np.diff(uv, axis=0), axis=1) / np.diff(grid)
    both = vis.copy()
    both[1:] &= vis[:-1]
    speed[~both] = 0.0
    if not both.any() or speed[both].mean() <= 0:
        return np.where(vis, 1.0, 0.0)
    w = base + (1.0 - base) * speed / speed[both].mean()
    return np.where(vis, w, 0.0)


@dataclass
class Similarity:
    scale: float
    R: np.ndarray
    t: np.ndarray
    rmse: float

    def apply(self, X):
        return self.scale * np.asarray(X) @ self.R.T + self.t


def align_similarity(estimated, gt, correspondence=None) -> Similarity:
    """Least-squares similarity taking ``estimated`` onto ``gt`` (Umeyama).

    ``correspondence`` maps estimated index -> gt index (dict or (M, 2)
    array); by default rows correspond one to one.
    """
    A = np.asarray(estimated, dtype=np.float64)
    B = np.asarray(gt, dtype=np.float64)
    if correspondence is not None:
        pairs = np.array(list(correspondence.items()) if isinstance(correspondence, dict)
                         else correspondence, dtype=np.int64).reshape(-1, 2)
        A, B = A[pairs[:, 0]], B[pairs[:, 1]]
    if len(A) != len(B):
        raise ValueError("point sets differ in length")
    if len(A) < 3:
        raise DegenerateGeometry("need at least 3 correspondences")
    mu_a, mu_b = A.mean(0), B.mean(0)
    Ac, Bc = A - mu_a, B - mu_b
    var_a = np.mean(np.sum(Ac * Ac, axis=1))
    sv = np.linalg.svd(Ac, compute_uv=False)
    if var_a == 0 or sv[1] < 1e-9 * sv[0]:
        raise DegenerateGeometry("correspondences are collinear")
    cov = Bc.T @ Ac / len(A)
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / var_a)
    t = mu_b - s * R @ mu_a
    err = s * A @ R.T + t - B
    return Similarity(s, R, t, float(np.sqrt(np.mean(np.sum(err * err, axis=1)))))


def scene_to_dict(scene: SimScene):
    return {"orbit": scene.orbit_gt.to_dict(), "preset": scene.preset, "duration": scene.duration,
            "seed": scene.seed, "intrinsics": scene.intrinsics.to_dict(),
            "landmarks": scene.landmarks.tolist(), "normals": scene.normals.tolist(),
            "center": np.asarray(scene.center).tolist()}


def scene_from_dict(d) -> SimScene:
    return SimScene(OrbitParams.from_dict(d["orbit"]), np.array(d["landmarks"]), np.array(d["normals"]),
                    CameraIntrinsics.from_dict(d["intrinsics"]), float(d["duration"]), int(d["seed"]),
                    d.get("preset", "random_blob"), np.array(d.get("center", [0.0, 0.0, 0.0])))


def scene_from_spec(spec) -> SimScene:
    """Build a scene from a JSON scene-spec dict.

    ``orbit`` holds either full parameters (r, f, R0_quat, n, u, c) or
    ``default_orbit`` keywords (f, distance, elevation_deg, ...).
    """
    o = dict(spec.get("orbit", {}))
    if "r" in o and "n" in o:
        orbit = OrbitParams.from_dict(o)
    else:
        orbit = default_orbit(**o)
    intr = spec.get("intrinsics")
    return make_scene(spec.get("preset", "random_blob"), orbit, spec.get("duration", 4.0),
                      spec.get("seed", 0), spec.get("n_points", 50), spec.get("size", 1.0),
                      CameraIntrinsics.from_dict(intr) if intr else None)


def event_config_from_spec(spec) -> SimEventConfig:
    return SimEventConfig(**spec.get("events", {}))


def event_config_to_dict(cfg: SimEventConfig):
    return asdict(cfg)


def _random_unit_perp(rng, n=None):
    v = normalize(rng.normal(size=3))
    if n is not None:
        v = normalize(v - (v @ n) * n)
    return v


def perturb_orbit(theta: OrbitParams, seed=0, f_rel=0.05, angle_deg=5.0, center_rel=0.05) -> OrbitParams:
    """GT orbit with a fixed-size perturbation in random directions.

    The spin rate is scaled by 1 +- ``f_rel``, the (u, v, n) frame is tilted
    by ``angle_deg`` about an in-plane axis (so n moves by exactly that
    angle), R0 is rotated by ``angle_deg`` about a random axis and c moves by
    ``center_rel * r``.
    """
    rng = np.random.default_rng([seed, 3])
    sign = rng.choice([-1.0, 1.0])
    f = theta.f * (1.0 + sign * f_rel)
    a = np.deg2rad(angle_deg)
    tilt = axis_angle(_random_unit_perp(rng, theta.n), a)
    F = theta.frame @ tilt.T
    R0 = axis_angle(_random_unit_perp(rng), a) @ theta.R0
    c = theta.c + center_rel * theta.r * _random_unit_perp(rng)
    return OrbitParams(theta.r, f, R0, F[2], F[0], c).normalized()
