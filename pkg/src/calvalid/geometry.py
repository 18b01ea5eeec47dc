"""Pinhole camera with polynomial radial distortion.

Projection composes a rigid transform, pinhole division, radial
distortion about the principal point and the affine intrinsic map::

    x_cam = R @ X + t
    y     = x_cam[:2] / x_cam[2]
    y'    = y * (1 + k1 r^2 + k2 r^4 + k3 r^6),   r^2 = |y|^2
    u, v  = f_x * y'_x + c_x,  f_y * y'_y + c_y
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, NonFinite, NonPositiveDepth

ROTATION_TOL = 1e-9


def skew(v):
    """Cross-product matrix ``[v]x`` such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_rotvec(rotvec):
    """Rodrigues formula; ``rotvec`` is axis * angle in radians."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if angle < 1e-12:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * K + b * K @ K


def rotvec_from_rotation(R):
    """Inverse of :func:`rotation_from_rotvec` (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        return 0.5 * w
    if np.pi - angle < 1e-5:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * angle
    return w * (angle / (2.0 * np.sin(angle)))


def rotation_rotvec_derivatives(rotvec):
    """Partial derivatives ``dR/dv_i`` of the Rodrigues map, shape (3, 3, 3).

    Uses the closed form of Gallego and Yezzi,
    ``dR/dv_i = (v_i [v]x + [v x (I - R) e_i]x) R / |v|^2``.
    """
    v = np.asarray(rotvec, dtype=float)
    theta2 = float(v @ v)
    if theta2 < 1e-20:
        return np.stack([skew(e) for e in np.eye(3)])
    R = rotation_from_rotvec(v)
    I_R = np.eye(3) - R
    V = skew(v)
    return np.stack(
        [(v[i] * V + skew(np.cross(v, I_R[:, i]))) @ R / theta2 for i in range(3)]
    )


def rotation_xyz(rx, ry, rz):
    """Rotation ``Rz @ Ry @ Rx`` from angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics ``(f_x, f_y, c_x, c_y, theta)`` plus pose ``(R, t)``.

    ``theta`` always has three entries; with ``distortion_order == 1`` the
    last two must be exactly zero.
    """

    f_x: float
    f_y: float
    c_x: float
    c_y: float
    theta: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    distortion_order: int = 3

    def __post_init__(self):
        theta = np.zeros(3)
        given = np.asarray(self.theta, dtype=float).ravel()
        if given.size > 3:
            raise ValueError("theta has at most three coefficients")
        theta[: given.size] = given
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        for name, value in (("theta", theta), ("R", R), ("t", t)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "f_x", float(self.f_x))
        object.__setattr__(self, "f_y", float(self.f_y))
        object.__setattr__(self, "c_x", float(self.c_x))
        object.__setattr__(self, "c_y", float(self.c_y))
        object.__setattr__(self, "distortion_order", int(self.distortion_order))
        self.check()

    def check(self, rotation_tol=ROTATION_TOL):
        if self.distortion_order not in (1, 3):
            raise ValueError(f"distortion_order must be 1 or 3, got {self.distortion_order}")
        if not (self.f_x > 0 and self.f_y > 0):
            raise ValueError("focal lengths must be positive")
        if self.distortion_order == 1 and (self.theta[1] != 0.0 or self.theta[2] != 0.0):
            raise ValueError("distortion_order=1 requires theta[1] == theta[2] == 0")
        values = np.concatenate([[self.f_x, self.f_y, self.c_x, self.c_y], self.theta,
                                 self.R.ravel(), self.t])
        if not np.all(np.isfinite(values)):
            raise ValueError("camera parameters must be finite")
        if rotation_error(self.R) > rotation_tol or np.linalg.det(self.R) <= 0:
            raise ValueError("R must be orthonormal with det(R) = +1")

    @property
    def K(self):
        return np.array([[self.f_x, 0.0, self.c_x], [0.0, self.f_y, self.c_y], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def replace(self, **changes):
        fields = dict(f_x=self.f_x, f_y=self.f_y, c_x=self.c_x, c_y=self.c_y, theta=self.theta,
                      R=self.R, t=self.t, distortion_order=self.distortion_order)
        fields.update(changes)
        return CameraModel(**fields)


def rotation_error(R):
    """Frobenius norm of ``R^T R - I``."""
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


@dataclass(frozen=True)
class Correspondence:
    x2d: np.ndarray
    X3d: np.ndarray
    inlier: bool = True

    def __post_init__(self):
        x2d = np.asarray(self.x2d, dtype=float).reshape(2)
        X3d = np.asarray(self.X3d, dtype=float).reshape(3)
        if not (np.all(np.isfinite(x2d)) and np.all(np.isfinite(X3d))):
            raise NonFinite("correspondence coordinates must be finite")
        x2d.setflags(write=False)
        X3d.setflags(write=False)
        object.__setattr__(self, "x2d", x2d)
        object.__setattr__(self, "X3d", X3d)
        object.__setattr__(self, "inlier", bool(self.inlier))


@dataclass(frozen=True)
class ResidualSet:
    """Reprojection residuals of the inlier correspondences.

    ``index`` maps each row back to its position in the input list.
    """

    eps: np.ndarray
    index: np.ndarray

    @property
    def count(self):
        return int(self.eps.shape[0])


def distort(y, theta, order=3):
    """Apply the radial polynomial to normalized point(s) ``y`` (shape (..., 2))."""
    if order not in (1, 3):
        raise ValueError(f"order must be 1 or 3, got {order}")
    y = np.asarray(y, dtype=float)
    k = np.zeros(3)
    th = np.asarray(theta, dtype=float).ravel()
    k[: min(order, th.size)] = th[: min(order, th.size)]
    r2 = np.sum(y * y, axis=-1, keepdims=True)
    return y * (1.0 + r2 * (k[0] + r2 * (k[1] + r2 * k[2])))


def to_camera(model, X):
    X = np.asarray(X, dtype=float)
    return X @ model.R.T + model.t


def pinhole(Xc):
    return Xc[..., :2] / Xc[..., 2:3]


def project_points(model, X):
    """Vectorized :func:`project` for an (N, 3) array; returns (N, 2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xc = to_camera(model, X)
    bad = np.flatnonzero(~(Xc[:, 2] > 0))
    if bad.size:
        i = int(bad[0])
        raise NonPositiveDepth(f"point {i} has camera depth {Xc[i, 2]:.6g}", index=i,
                               depth=float(Xc[i, 2]))
    yd = distort(pinhole(Xc), model.theta, model.distortion_order)
    return np.column_stack([model.f_x * yd[:, 0] + model.c_x, model.f_y * yd[:, 1] + model.c_y])


def project(model, X):
    """Project one world point to pixel coordinates."""
    return project_points(model, np.asarray(X, dtype=float).reshape(1, 3))[0]


def stack_correspondences(corrs):
    """Split a correspondence list into ``(x2d (N,2), X3d (N,3), inlier (N,))`` arrays."""
    if len(corrs) == 0:
        return np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0, dtype=bool)
    x2d = np.array([c.x2d for c in corrs], dtype=float)
    X3d = np.array([c.X3d for c in corrs], dtype=float)
    inlier = np.array([c.inlier for c in corrs], dtype=bool)
    return x2d, X3d, inlier


def residuals(model, corrs):
    """Observed minus projected position for every inlier, in input order."""
    x2d, X3d, inlier = stack_correspondences(corrs)
    index = np.flatnonzero(inlier)
    if index.size == 0:
        raise EmptyInput("no inlier correspondences")
    try:
        proj = project_points(model, X3d[index])
    except NonPositiveDepth as exc:
        i = int(index[exc.index])
        raise NonPositiveDepth(f"correspondence {i} projects behind the camera", index=i,
                               depth=exc.depth) from None
    eps = x2d[index] - proj
    eps.setflags(write=False)
    return ResidualSet(eps=eps, index=index)
