"""
Circular-motion camera model.

The camera centre moves on a circle of radius ``r`` about centre ``c`` in
the plane normal to ``n``; ``u`` fixes the angular position at t = 0 and the
rate is ``f`` Hz. Orientation is built in three steps: an orbit frame that
turns with the camera, a look-at rotation pointing the optical axis at
``c``, and a constant offset ``R0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BehindCamera, DegenerateGeometry, ValidationError
from ..geometry import look_at_rotation, nearest_rotation, normalize, so3_exp, so3_log

Z_EPS = 1e-6


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 346
    height: int = 260

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d.get("width", 346)), int(d.get("height", 260)))


@dataclass
class OrbitParams:
    r: float
    f: float
    R0: np.ndarray
    n: np.ndarray
    u: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.r = float(self.r)
        self.f = float(self.f)
        self.R0 = np.asarray(self.R0, dtype=np.float64).reshape(3, 3)
        self.n = np.asarray(self.n, dtype=np.float64).reshape(3)
        self.u = np.asarray(self.u, dtype=np.float64).reshape(3)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(3)

    @property
    def v(self):
        return np.cross(self.n, self.u)

    @property
    def frame(self):
        """Rotation with rows (u, v, n): world -> orbit-plane coordinates."""
        return np.stack([self.u, self.v, self.n])

    def with_frame(self, F) -> "OrbitParams":
        F = nearest_rotation(F)
        return OrbitParams(self.r, self.f, self.R0.copy(), F[2].copy(), F[0].copy(), self.c.copy())

    def normalized(self) -> "OrbitParams":
        """Restore |n| = |u| = 1 and n . u = 0 (u is re-orthogonalised)."""
        n = normalize(self.n)
        u = normalize(self.u - (self.u @ n) * n)
        return OrbitParams(self.r, self.f, nearest_rotation(self.R0), n, u, self.c.copy())

    def copy(self) -> "OrbitParams":
        return OrbitParams(self.r, self.f, self.R0.copy(), self.n.copy(), self.u.copy(), self.c.copy())

    def as_vector(self) -> np.ndarray:
        """The 14 stored numbers: r, f, R0 (rotation vector), n, u, c."""
        return np.concatenate([[self.r, self.f], so3_log(self.R0), self.n, self.u, self.c])

    @classmethod
    def from_vector(cls, vec) -> "OrbitParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (14,):
            raise ValidationError("orbit vector must have 14 entries")
        return cls(vec[0], vec[1], so3_exp(vec[2:5]), vec[5:8], vec[8:11], vec[11:14])

    def validate(self, tol=1e-9):
        if not (self.r > 0 and self.f > 0):
            raise ValidationError("orbit needs r > 0 and f > 0")
        if abs(np.linalg.norm(self.n) - 1) > tol or abs(np.linalg.norm(self.u) - 1) > tol:
            raise ValidationError("n and u must be unit vectors")
        if abs(self.n @ self.u) > tol:
            raise ValidationError("u must be orthogonal to n")
        if np.linalg.norm(self.R0.T @ self.R0 - np.eye(3)) > tol or np.linalg.det(self.R0) < 0:
            raise ValidationError("R0 must be a rotation")

    @property
    def axis_in_camera(self):
        """Spin axis expressed in the camera frame; the same at every t."""
        return self.R0 @ look_at_rotation(-np.array([1.0, 0.0, 0.0])) @ np.array([0.0, 0.0, 1.0])

    def to_dict(self):
        from ..geometry import quat_from_matrix

        return {"r": self.r, "f": self.f, "R0_quat": quat_from_matrix(self.R0).tolist(),
                "n": self.n.tolist(), "u": self.u.tolist(), "c": self.c.tolist()}

    @classmethod
    def from_dict(cls, d):
        from ..geometry import matrix_from_quat

        if "R0_quat" in d:
            R0 = matrix_from_quat(d["R0_quat"])
        else:
            R0 = np.asarray(d["R0"], dtype=np.float64)
        return cls(d["r"], d["f"], R0, d["n"], d["u"], d["c"])


def orbit_center(tau, theta: OrbitParams):
    """Camera centre(s) at time(s) ``tau``; shape (3,) or (len(tau), 3)."""
    tau = np.asarray(tau, dtype=np.float64)
    a = 2.0 * np.pi * theta.f * tau
    out = (theta.r * np.cos(a)[..., None] * theta.u
           + theta.r * np.sin(a)[..., None] * theta.v + theta.c)
    return out


def orbit_poses(times, theta: OrbitParams):
    """World-to-camera (R, t) for each time; camera point = R @ X + t.

    Shapes (N, 3, 3) and (N, 3).
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    a = 2.0 * np.pi * theta.f * times
    ca, sa = np.cos(a), np.sin(a)
    # orbit frame: in-plane rotation by -a after the (u, v, n) frame change
    Rz = np.zeros((len(times), 3, 3))
    Rz[:, 0, 0] = ca
    Rz[:, 0, 1] = sa
    Rz[:, 1, 0] = -sa
    Rz[:, 1, 1] = ca
    Rz[:, 2, 2] = 1.0
    A = Rz @ theta.frame
    C = orbit_center(times, theta)
    d = np.einsum("nij,nj->ni", A, theta.c - C)
    if np.any(np.linalg.norm(d, axis=1) < 1e-12):
        raise DegenerateGeometry("camera centre coincides with the orbit centre")
    L = look_at_rotation(d)
    R = theta.R0 @ L @ A
    t = -np.einsum("nij,nj->ni", R, C)
    return R, t


def orbit_pose(t_k, theta: OrbitParams):
    R, t = orbit_poses([t_k], theta)
    return R[0], t[0]


def camera_center(R, t):
    return -np.einsum("...ji,...j->...i", R, t)


def project(Xc, K: CameraIntrinsics):
    Z = Xc[..., 2]
    return np.stack([K.fx * Xc[..., 0] / Z + K.cx, K.fy * Xc[..., 1] / Z + K.cy], axis=-1)


def reproject(X, t_k, theta: OrbitParams, K: CameraIntrinsics, z_eps=Z_EPS):
    """Pixel (u, v) of world point ``X`` seen at time ``t_k``."""
    R, t = orbit_pose(t_k, theta)
    Xc = R @ np.asarray(X, dtype=np.float64) + t
    if Xc[2] <= z_eps:
        raise BehindCamera(f"point at camera depth {Xc[2]:.3g}")
    return project(Xc, K)


def pose_project(R, t, X, K: CameraIntrinsics, z_eps=Z_EPS):
    """Project with an explicit pose; raises BehindCamera like :func:`reproject`."""
    Xc = R @ np.asarray(X, dtype=np.float64) + t
    if Xc[2] <= z_eps:
        raise BehindCamera(f"point at camera depth {Xc[2]:.3g}")
    return project(Xc, K)


@dataclass
class Observations:
    """Measured pixels of landmarks; one row per (point, window)."""
    point: np.ndarray
    k: np.ndarray
    t: np.ndarray
    uv: np.ndarray
    landmark_gt: np.ndarray = None  # optional ground-truth association
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.int64)
        self.k = np.asarray(self.k, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        if self.landmark_gt is not None:
            self.landmark_gt = np.asarray(self.landmark_gt, dtype=np.int64)

    def __len__(self):
        return len(self.point)

    def check_unique(self):
        keys = self.point * (int(self.k.max(initial=0)) + 1) + self.k
        if len(np.unique(keys)) != len(keys):
            raise ValidationError("duplicate (point, window) observations")

    def select(self, mask) -> "Observations":
        lg = None if self.landmark_gt is None else self.landmark_gt[mask]
        return Observations(self.point[mask], self.k[mask], self.t[mask], self.uv[mask], lg, dict(self.meta))

    @classmethod
    def from_tracks(cls, tracks, t_offset=0.0):
        """One point per track; sample time is ``k * dt + t_offset``."""
        pts, ks, ts, uvs = [], [], [], []
        for p, tr in enumerate(tracks):
            pts.append(np.full(len(tr), p))
            ks.append(tr.k)
            ts.append(tr.k * tr.dt + t_offset)
            uvs.append(tr.uv)
        if not pts:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, 2)))
        return cls(np.concatenate(pts), np.concatenate(ks), np.concatenate(ts), np.concatenate(uvs))


def predict(theta: OrbitParams, landmarks, obs: Observations, K: CameraIntrinsics, z_eps=Z_EPS):
    """Predicted pixels and a behind-camera flag for every observation."""
    times, inv = np.unique(obs.t, return_inverse=True)
    R, t = orbit_poses(times, theta)
    X = np.asarray(landmarks, dtype=np.float64)[obs.point]
    Xc = np.einsum("nij,nj->ni", R[inv], X) + t[inv]
    behind = Xc[:, 2] <= z_eps
    Z = np.where(behind, 1.0, Xc[:, 2])
    uv = np.column_stack([K.fx * Xc[:, 0] / Z + K.cx, K.fy * Xc[:, 1] / Z + K.cy])
    return uv, behind


def residuals(theta: OrbitParams, landmarks, obs: Observations, K: CameraIntrinsics,
              residual_cap=1e3, z_eps=Z_EPS):
    """Predicted minus measured pixels, shape (M, 2), and the behind-camera flags.

    Observations behind the camera get the constant residual (cap, 0).
    """
    uv, behind = predict(theta, landmarks, obs, K, z_eps)
    r = uv - obs.uv
    if behind.any():
        r[behind] = (residual_cap, 0.0)
    return r, behind


def rms_reprojection(res) -> float:
    """Per-coordinate RMS of an (M, 2) residual array."""
    res = np.asarray(res)
    if res.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(res * res)))


def screw_line(theta: OrbitParams, K: CameraIntrinsics, t_ref=0.0, z_eps=Z_EPS):
    """Image of the spin axis through ``c`` at ``t_ref``.

    Returns two image points: the axis line clipped to the sensor borders
    when it crosses the image, otherwise the projections of ``c`` and a
    second axis point.
    """
    R, t = orbit_pose(t_ref, theta)
    zc = R[2] @ theta.c + t[2]
    zn = R[2] @ theta.n
    if zc <= z_eps:
        raise BehindCamera("orbit centre is behind the camera")
    # second axis point still in front of the camera
    step = theta.r
    if zn < 0:
        step = min(step, 0.5 * (zc - z_eps) / -zn)
    p0 = pose_project(R, t, theta.c, K)
    p1 = pose_project(R, t, theta.c + step * theta.n, K)
    clipped = clip_line(p0, p1, K.width, K.height)
    return clipped if clipped is not None else (p0, p1)


def clip_line(p0, p1, width, height):
    """Intersections of the infinite line p0-p1 with the image rectangle."""
    p0 = np.asarray(p0, float)
    d = np.asarray(p1, float) - p0
    if np.linalg.norm(d) < 1e-12:
        return None
    hits = []
    for axis, bound in ((0, 0.0), (0, width - 1.0), (1, 0.0), (1, height - 1.0)):
        if abs(d[axis]) < 1e-15:
            continue
        s = (bound - p0[axis]) / d[axis]
        q = p0 + s * d
        other = 1 - axis
        lim = (width - 1.0) if other == 0 else (height - 1.0)
        if -1e-9 <= q[other] <= lim + 1e-9:
            hits.append((s, q))
    if len(hits) < 2:
        return None
    hits.sort(key=lambda h: h[0])
    return hits[0][1], hits[-1][1]


def point_line_distance(pts, a, b):
    pts = np.atleast_2d(pts)
    d = normalize(np.asarray(b, float) - np.asarray(a, float))
    rel = pts - a
    return np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])
