"""Synthetic checkerboard correspondence sets.

A planar grid of saddle points is viewed by a distorted camera at a
sequence of decreasing distances, so later sets reach further into the
distorted image border. Each set gets:

* 2D detections: exact projections plus isotropic Gaussian noise;
* 3D points: the grid points rotated about the camera center by small
  random pan/tilt angles (range is preserved, the point stays on its
  sphere), tilt noise being ``tilt_ratio`` times the pan noise;
* the per-point image-space scales of that lidar noise, usable directly
  as the regressors of :func:`calvalid.noise.fit_noise`.

Sets are generated independently from ``SeedSequence(seed, spawn_key=(i,))``
so any subset can be produced in any order with identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigInvalid
from .geometry import CameraModel, Correspondence, project_points, rotation_from_rotvec, rotation_xyz

DEFAULT_THETA = (-0.0684, 0.0100, 0.0006)
RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(seed, spawn_key=(set_index,))"


@dataclass(frozen=True)
class SimConfig:
    f: float = 800.0
    theta: tuple = DEFAULT_THETA
    grid: int = 15
    image_size: tuple = (1600, 1600)
    sigma_d: float = 0.03
    # pan-direction lidar noise as arc length on the range sphere (world units);
    # None: chosen so the farthest set sees `lidar_px` pixels of horizontal noise
    sigma_3d: float | None = None
    lidar_px: float = 0.1
    tilt_ratio: float = 0.1
    rot_range_deg: float = 15.0
    n_sets: int = 56
    far_fill: float = 0.25
    near_fill: float = 0.9
    square: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        self.check()

    def check(self):
        if self.grid < 2:
            raise ConfigInvalid("grid must be >= 2")
        if len(self.theta) != 3:
            raise ConfigInvalid("theta needs three coefficients")
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigInvalid("image_size must be two positive integers")
        if not self.f > 0:
            raise ConfigInvalid("f must be positive")
        for name in ("sigma_d", "lidar_px", "tilt_ratio", "rot_range_deg"):
            if not getattr(self, name) >= 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        if self.sigma_3d is not None and not self.sigma_3d >= 0:
            raise ConfigInvalid("sigma_3d must be >= 0")
        if self.n_sets < 1:
            raise ConfigInvalid("n_sets must be >= 1")
        if not (0 < self.far_fill <= self.near_fill < 1.5):
            raise ConfigInvalid("need 0 < far_fill <= near_fill")
        if not self.square > 0:
            raise ConfigInvalid("square must be positive")

    def to_dict(self):
        d = asdict(self)
        d["theta"] = list(self.theta)
        d["image_size"] = list(self.image_size)
        return d


@dataclass(frozen=True)
class SimSet:
    """One simulated view.

    ``scales`` is a (K, 2) array of ``(a_x, a_y)`` aligned with ``corrs``;
    ``X_true``/``x_true`` hold the noise-free 3D points and projections.
    """

    index: int
    corrs: list
    truth: CameraModel
    scales: np.ndarray
    coverage: float
    distance: float
    sigma_3d: float
    X_true: np.ndarray = field(repr=False)
    x_true: np.ndarray = field(repr=False)


# -- coverage ---------------------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points):
    """Monotone-chain hull, counter-clockwise, without repeated endpoint."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def coverage(points):
    """Area of the convex hull of 2D points (0 for fewer than 3 non-collinear points)."""
    hull = convex_hull(points)
    if len(hull) < 3:
        return 0.0
    h = np.asarray(hull)
    x, y = h[:, 0], h[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


# -- scene construction -------------------------------------------------------

def grid_points(cfg):
    """Saddle points of the pattern on the plane z = 0, centered at the origin."""
    half = (cfg.grid - 1) / 2.0
    ticks = (np.arange(cfg.grid) - half) * cfg.square
    gx, gy = np.meshgrid(ticks, ticks)
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])


def _camera(cfg, R, distance):
    w, h = cfg.image_size
    return CameraModel(f_x=cfg.f, f_y=cfg.f, c_x=w / 2.0, c_y=h / 2.0, theta=cfg.theta, R=R,
                       t=(0.0, 0.0, distance), distortion_order=3)


def fill_fraction(cfg, distance):
    """Hull area of the fronto-parallel pattern at ``distance`` over the image area."""
    proj = project_points(_camera(cfg, np.eye(3), distance), grid_points(cfg))
    w, h = cfg.image_size
    return coverage(proj) / (w * h)


def distance_for_fill(cfg, fill):
    half = (cfg.grid - 1) / 2.0 * cfg.square
    return brentq(lambda d: fill_fraction(cfg, d) - fill, 0.05 * half, 1e4 * half, xtol=1e-12)


def distance_schedule(cfg):
    """Geometric sequence of pattern distances from far to near."""
    far = distance_for_fill(cfg, cfg.far_fill)
    near = distance_for_fill(cfg, cfg.near_fill)
    return np.geomspace(far, near, cfg.n_sets)


def resolve_sigma_3d(cfg, schedule=None):
    if cfg.sigma_3d is not None:
        return float(cfg.sigma_3d)
    far = (distance_schedule(cfg) if schedule is None else schedule)[0]
    return cfg.lidar_px * far / cfg.f


def _rotate_about(center, axes, angles, X):
    out = np.empty_like(X)
    for k, (axis, ang, p) in enumerate(zip(axes, angles, X)):
        out[k] = center + rotation_from_rotvec(axis * ang) @ (p - center)
    return out


def pan_tilt_axes(truth, X):
    """Pan axis (camera vertical) and per-point tilt axes, in world coordinates."""
    up = truth.R[1]
    v = X - truth.center
    tilt = np.cross(up, v)
    tilt /= np.linalg.norm(tilt, axis=1, keepdims=True)
    return up, tilt


def perturb_on_sphere(truth, X, pan, tilt):
    """Rotate points about the camera center: pan about the camera vertical, then tilt.

    ``pan`` and ``tilt`` are angles in radians, one per point.
    """
    up, tilt_axes = pan_tilt_axes(truth, X)
    C = truth.center
    X_pan = _rotate_about(C, np.repeat(up[None], len(X), axis=0), pan, X)
    return _rotate_about(C, tilt_axes, tilt, X_pan)


def sphere_scales(truth, X, tilt_ratio, h=1e-6):
    """Image-space std per unit of pan arc-length noise, for x and y separately.

    Central differences of the projection under small pan and tilt
    rotations give the pixel displacement per unit arc length; the tilt
    part is attenuated by ``tilt_ratio`` and the two contributions are
    added in quadrature per image axis.
    """
    rho = np.linalg.norm(X - truth.center, axis=1)
    zeros = np.zeros(len(X))
    hs = np.full(len(X), h)
    d_pan = (project_points(truth, perturb_on_sphere(truth, X, hs, zeros))
             - project_points(truth, perturb_on_sphere(truth, X, -hs, zeros))) / (2 * h)
    d_tilt = (project_points(truth, perturb_on_sphere(truth, X, zeros, hs))
              - project_points(truth, perturb_on_sphere(truth, X, zeros, -hs))) / (2 * h)
    d_pan /= rho[:, None]
    d_tilt /= rho[:, None]
    return np.sqrt(d_pan**2 + (tilt_ratio * d_tilt) ** 2)


def set_rng(seed, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def gen_set(cfg, index, distance, sigma_3d):
    rng = set_rng(cfg.seed, index)
    rot = np.deg2rad(cfg.rot_range_deg)
    R = rotation_xyz(*rng.uniform(-rot, rot, size=3))
    truth = _camera(cfg, R, distance)
    X = grid_points(cfg)
    n = len(X)
    det_noise = rng.normal(0.0, 1.0, size=(n, 2)) * cfg.sigma_d
    ang_noise = rng.normal(0.0, 1.0, size=(n, 2))

    x_true = project_points(truth, X)
    w, h = cfg.image_size
    visible = ((x_true[:, 0] >= 0) & (x_true[:, 0] <= w) & (x_true[:, 1] >= 0)
               & (x_true[:, 1] <= h))
    X, x_true = X[visible], x_true[visible]
    det_noise, ang_noise = det_noise[visible], ang_noise[visible]

    rho = np.linalg.norm(X - truth.center, axis=1)
    pan = ang_noise[:, 0] * sigma_3d / rho
    tilt = ang_noise[:, 1] * cfg.tilt_ratio * sigma_3d / rho
    X_obs = perturb_on_sphere(truth, X, pan, tilt) if sigma_3d > 0 else X.copy()
    x_obs = x_true + det_noise

    corrs = [Correspondence(x2d=p, X3d=P, inlier=True) for p, P in zip(x_obs, X_obs)]
    scales = sphere_scales(truth, X, cfg.tilt_ratio)
    return SimSet(index=index, corrs=corrs, truth=truth, scales=scales,
                  coverage=coverage(x_obs), distance=float(distance), sigma_3d=float(sigma_3d),
                  X_true=X, x_true=x_true)


def gen_sets(cfg=None, indices=None):
    """Generate the configured correspondence sets (or only ``indices``)."""
    cfg = cfg or SimConfig()
    schedule = distance_schedule(cfg)
    sigma_3d = resolve_sigma_3d(cfg, schedule)
    if indices is None:
        indices = range(cfg.n_sets)
    return [gen_set(cfg, i, schedule[i], sigma_3d) for i in indices]


# -- polynomial example -----------------------------------------------------

def gen_poly_example(n, noise_sigma, hypothesis="true_model", seed=0):
    """Samples of ``y = x + noise`` and residuals against a line or ``x + 0.5 x^5``.

    Returns ``(xs, ys, residuals)``.
    """
    if n < 10:
        raise ConfigInvalid("n must be >= 10")
    if not noise_sigma >= 0:
        raise ConfigInvalid("noise_sigma must be >= 0")
    if hypothesis not in ("true_model", "bad_model"):
        raise ConfigInvalid(f"unknown hypothesis {hypothesis!r}")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, size=n)
    ys = xs + rng.normal(0.0, 1.0, size=n) * noise_sigma
    pred = xs if hypothesis == "true_model" else xs + 0.5 * xs**5
    return xs, ys, ys - pred
