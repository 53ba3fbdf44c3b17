"""Rotation utilities shared by the orbit model, initialisation and simulator."""
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry

Z_AXIS = np.array([0.0, 0.0, 1.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w):
    return Rotation.from_rotvec(np.asarray(w, dtype=np.float64)).as_matrix()


def so3_log(R):
    return Rotation.from_matrix(R).as_rotvec()


def axis_angle(axis, angle):
    return so3_exp(normalize(axis) * angle)


def nearest_rotation(M):
    """Project a 3x3 matrix onto SO(3) (Frobenius-nearest)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rodrigues_align(a, b):
    """Rotation about a x b by the angle between a and b (maps a onto b)."""
    a = normalize(a)
    b = normalize(b)
    k = np.cross(a, b)
    s = np.linalg.norm(k)
    c = float(np.clip(a @ b, -1.0, 1.0))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return axis_angle(perp, np.pi)
    K = skew(k / s)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def look_at_rotation(d, up=Y_AXIS):
    """Rows (x, y, z) of a camera frame whose optical axis is ``d``.

    Batched over leading dimensions of ``d``.
    """
    d = normalize(d)
    a = np.cross(d, np.broadcast_to(up, d.shape))
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < 1e-12):
        raise DegenerateGeometry("look-at direction is parallel to the up vector")
    a = a / na
    b = np.cross(d, a)
    return np.stack([a, b, d], axis=-2)


def angle_between(a, b):
    a = normalize(a)
    b = normalize(b)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b))


def rotation_angle(R):
    return float(np.linalg.norm(so3_log(R)))


def quat_from_matrix(R):
    """Unit quaternion (qw, qx, qy, qz)."""
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def matrix_from_quat(q):
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()
