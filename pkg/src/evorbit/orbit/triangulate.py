"""Landmark triangulation under known (or orbit-derived) poses."""
import numpy as np

from ..errors import DegenerateGeometry
from ..geometry import normalize
from .model import CameraIntrinsics, OrbitParams, Observations, camera_center, orbit_poses


def bearing_rays(R, t, uv, K: CameraIntrinsics):
    """Camera centres and unit world-frame ray directions for pixels ``uv``."""
    xn = np.column_stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(uv))])
    d = np.einsum("nji,nj->ni", R, xn)
    return camera_center(R, t), normalize(d)


def midpoint(c1, d1, c2, d2):
    """Midpoint of the shortest segment between two rays."""
    w = c1 - c2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ w, d2 @ w
    den = a * c - b * b
    if den < 1e-15:
        raise DegenerateGeometry("rays are parallel")
    s = (b * e - c * d) / den
    q = (a * e - b * d) / den
    return 0.5 * (c1 + s * d1 + c2 + q * d2)


def triangulate_dlt(R, t, uv, K: CameraIntrinsics):
    """Linear (DLT) triangulation of one point from all its views."""
    P = K.K @ np.concatenate([R, t[:, :, None]], axis=2)
    A = np.concatenate([uv[:, :1] * P[:, 2] - P[:, 0], uv[:, 1:] * P[:, 2] - P[:, 1]])
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < 1e-12 or (len(s) >= 2 and s[-2] < 1e-12):
        raise DegenerateGeometry("DLT triangulation is degenerate")
    return X[:3] / X[3]


def refine_point(X, R, t, uv, K: CameraIntrinsics, iters=15):
    """Gauss-Newton on the reprojection error of a single point."""
    lam = 1e-6

    def res(P):
        Xc = np.einsum("nij,j->ni", R, P) + t
        return (np.column_stack([K.fx * Xc[:, 0] / Xc[:, 2] + K.cx,
                                 K.fy * Xc[:, 1] / Xc[:, 2] + K.cy]) - uv).ravel(), Xc

    r, Xc = res(X)
    cost = r @ r
    for _ in range(iters):
        Z = Xc[:, 2]
        if np.any(Z <= 1e-9):
            break
        # analytic pinhole Jacobian d(uv)/dX = d(uv)/dXc @ R
        J1 = np.stack([K.fx / Z, np.zeros_like(Z), -K.fx * Xc[:, 0] / Z ** 2], axis=1)
        J2 = np.stack([np.zeros_like(Z), K.fy / Z, -K.fy * Xc[:, 1] / Z ** 2], axis=1)
        J = np.stack([np.einsum("nk,nkj->nj", J1, R), np.einsum("nk,nkj->nj", J2, R)], axis=1).reshape(-1, 3)
        H = J.T @ J
        g = J.T @ r
        while True:
            try:
                step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            except np.linalg.LinAlgError:
                return X
            Xn = X + step
            rn, Xcn = res(Xn)
            cn = rn @ rn
            if np.isfinite(cn) and cn < cost and np.all(Xcn[:, 2] > 0):
                X, r, Xc, cost = Xn, rn, Xcn, cn
                lam = max(lam * 0.1, 1e-12)
                break
            lam *= 10
            if lam > 1e8:
                return X
        if np.linalg.norm(step) < 1e-12 * (1 + np.linalg.norm(X)):
            break
    return X


def triangulate_landmarks(theta: OrbitParams, K: CameraIntrinsics, obs: Observations,
                          n_points=None, points=None, min_angle=1e-3, refine=True):
    """Triangulate points from orbit-derived poses.

    For each point the pair of views with the widest ray angle seeds a
    midpoint estimate, which is then refined over all its observations.
    Returns an (n_points, 3) array with NaN rows where triangulation failed.
    """
    if n_points is None:
        n_points = int(obs.point.max()) + 1 if len(obs) else 0
    X = np.full((n_points, 3), np.nan)
    if len(obs) == 0:
        return X
    times, inv = np.unique(obs.t, return_inverse=True)
    R_all, t_all = orbit_poses(times, theta)
    R_obs, t_obs = R_all[inv], t_all[inv]
    C, D = bearing_rays(R_obs, t_obs, obs.uv, K)
    order = np.argsort(obs.point, kind="stable")
    bounds = np.searchsorted(obs.point[order], np.arange(n_points + 1))
    wanted = range(n_points) if points is None else points
    for p in wanted:
        rows = order[bounds[p]:bounds[p + 1]]
        if len(rows) < 2:
            continue
        cosm = D[rows] @ D[rows].T
        i, j = np.unravel_index(np.argmin(cosm), cosm.shape)
        if np.arccos(np.clip(cosm[i, j], -1, 1)) < min_angle:
            continue
        try:
            x0 = midpoint(C[rows[i]], D[rows[i]], C[rows[j]], D[rows[j]])
        except DegenerateGeometry:
            continue
        if refine:
            x0 = refine_point(x0, R_obs[rows], t_obs[rows], obs.uv[rows], K)
        X[p] = x0
    return X
