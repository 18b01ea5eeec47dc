"""Per-correspondence residual noise model.

Each residual component is modelled as zero-mean Gaussian with variance
``sigma_d2 + a**2 * sigma_l2``: an isotropic detector term plus a lidar
term whose image-space scale ``a`` (separately for x and y) follows from
how the projection reacts to small pan/tilt rotations of the 3D point.
The two variances are fitted by robust regression on squared residuals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate, stats

from .errors import AlignmentError, ConfigInvalid, InsufficientData, NonFinite
from .geometry import ResidualSet, project_points, rotation_from_rotvec

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
DEFAULT_DELTA = 1e-3


class LidarScales(NamedTuple):
    a_x: float
    a_y: float


@dataclass(frozen=True)
class IRLSConfig:
    """Controls for :func:`fit_noise`.

    ``init_sigma`` sets the initial weights ``1/p(eps_k | sigma)`` with
    ``p`` the isotropic 2D normal density; ``None`` starts from unit
    weights. With ``robust=False`` only that first weighted solve is run.
    """

    max_iter: int = 100
    tol: float = 1e-8
    huber_delta: float = 1.345
    init_sigma: float | None = 5.0
    robust: bool = True
    floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigInvalid("max_iter must be >= 1")
        if not self.tol > 0:
            raise ConfigInvalid("tol must be positive")
        if not self.huber_delta > 0:
            raise ConfigInvalid("huber_delta must be positive")
        if self.init_sigma is not None and not self.init_sigma > 0:
            raise ConfigInvalid("init_sigma must be positive")
        if not self.floor > 0:
            raise ConfigInvalid("floor must be positive")


@dataclass(frozen=True)
class NoiseFit:
    sigma_d2: float
    sigma_l2: float
    per_point_sigma: np.ndarray  # (K, 2), columns x and y
    scales: np.ndarray  # (K, 2) a_x, a_y used for the fit
    iterations: int
    converged: bool
    degenerate: bool = False

    @property
    def predicted_std(self):
        return float(np.mean(self.per_point_sigma))


@dataclass(frozen=True)
class StandardizedResiduals:
    values: np.ndarray  # x0, y0, x1, y1, ...

    def __len__(self):
        return int(self.values.size)


# -- lidar geometry ---------------------------------------------------------

def _axis_rotation(axis, angle):
    return rotation_from_rotvec(np.asarray(axis, dtype=float) * angle)


def _tilt_axes(v, up):
    """Unit tilt axis (orthogonal to ``up`` and the ray ``v``) per row of ``v``."""
    h = np.cross(up, v)
    norm = np.linalg.norm(h, axis=1)
    small = norm < 1e-12 * np.maximum(np.linalg.norm(v, axis=1), 1.0)
    if np.any(small):
        # ray parallel to the pan axis: any horizontal direction will do
        fallback = np.cross(up, [1.0, 0.0, 0.0])
        if np.linalg.norm(fallback) < 1e-12:
            fallback = np.cross(up, [0.0, 0.0, 1.0])
        h[small] = fallback
        norm[small] = np.linalg.norm(fallback)
    return h / norm[:, None]


def lidar_scales_array(model, X, delta=DEFAULT_DELTA, origin=(0.0, 0.0, 0.0),
                       up=(0.0, 1.0, 0.0), tilt_weight=1.0):
    """(N, 2) array of ``(a_x, a_y)`` for world points ``X`` (N, 3).

    ``a_x`` is the image displacement when the point is panned by
    ``delta`` radians about ``up`` through ``origin`` (the lidar center),
    ``a_y`` the displacement for a tilt of ``delta`` about the horizontal
    axis orthogonal to the ray, times ``tilt_weight``. Both are divided by
    ``delta`` so the result is in pixels per radian.
    """
    if not delta > 0:
        raise ConfigInvalid("delta must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    origin = np.asarray(origin, dtype=float)
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    v = X - origin
    X_pan = origin + v @ _axis_rotation(up, delta).T
    axes = _tilt_axes(v, up)
    X_tilt = np.array([origin + _axis_rotation(h, delta) @ vi for h, vi in zip(axes, v)])
    p0 = project_points(model, X)
    pp = project_points(model, X_pan)
    pt = project_points(model, X_tilt)
    a_x = np.linalg.norm(pp - p0, axis=1) / delta
    a_y = tilt_weight * np.linalg.norm(pt - p0, axis=1) / delta
    return np.column_stack([a_x, a_y])


def lidar_scales(model, X, delta=DEFAULT_DELTA, origin=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                 tilt_weight=1.0):
    a = lidar_scales_array(model, np.asarray(X, dtype=float).reshape(1, 3), delta=delta,
                           origin=origin, up=up, tilt_weight=tilt_weight)[0]
    return LidarScales(float(a[0]), float(a[1]))


# -- regression -------------------------------------------------------------

def _huber(u, delta):
    au = np.abs(u)
    return np.where(au <= delta, 1.0, delta / np.maximum(au, 1e-300))


@lru_cache(maxsize=None)
def consistency_factor(delta):
    """``E[w s] / E[w]`` for ``s ~ chi2(1)`` and Huber weights on ``(s - 1)/sqrt(2)``.

    Dividing the squared residuals by this factor makes the weighted
    variance estimate unbiased under Gaussian noise.
    """
    s0 = 1.0 + np.sqrt(2.0) * delta
    pdf = stats.chi2(1).pdf
    c = np.sqrt(2.0) * delta
    lower_w = stats.chi2(1).cdf(s0)
    lower_ws = stats.chi2(3).cdf(s0)  # E[s; s <= s0] for chi2(1)
    upper_w = integrate.quad(lambda s: c / (s - 1.0) * pdf(s), s0, np.inf)[0]
    upper_ws = integrate.quad(lambda s: c * s / (s - 1.0) * pdf(s), s0, np.inf)[0]
    return (lower_ws + upper_ws) / (lower_w + upper_w)


def _solve_clamped(A, b, w, floor):
    """Weighted least squares for ``(sigma_d2, sigma_l2)`` with positivity."""
    sw = np.sqrt(w)
    beta = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)[0]
    wsum = np.sum(w)
    a2 = A[:, 1]
    if beta[1] < 0:
        beta = np.array([max(np.sum(w * b) / wsum, floor), 0.0])
    elif beta[0] < floor:
        denom = np.sum(w * a2 * a2)
        sl = np.sum(w * a2 * (b - floor)) / denom if denom > 0 else 0.0
        beta = np.array([floor, max(sl, 0.0)])
    return beta


def _as_eps(eps):
    if isinstance(eps, ResidualSet):
        return np.asarray(eps.eps, dtype=float)
    return np.atleast_2d(np.asarray(eps, dtype=float))


def _as_scales(scales):
    return np.atleast_2d(np.asarray(scales, dtype=float))


def fit_noise(eps, scales, cfg=None):
    """Robustly regress detector and lidar variances from residuals.

    Parameters
    ----------
    eps : ResidualSet or array_like, shape (K, 2)
        Reprojection residuals.
    scales : sequence of LidarScales or array_like, shape (K, 2)
        ``(a_x, a_y)`` per residual.
    cfg : IRLSConfig, optional

    Returns
    -------
    NoiseFit

    Notes
    -----
    Rows of the system are ``eps_x**2 = sigma_d2 + a_x**2 sigma_l2`` and the
    same for y. After the initial weighted solve, rows are re-weighted
    with Huber weights on ``(eps**2 - mu) / (sqrt(2) mu)``, the regression
    residual divided by its Gaussian standard deviation, times the
    inverse row variance ``1 / mu**2``.
    """
    cfg = cfg or IRLSConfig()
    E = _as_eps(eps)
    a = _as_scales(scales)
    if E.ndim != 2 or E.shape[1] != 2:
        raise AlignmentError(f"residuals must have shape (K, 2), got {E.shape}")
    if a.shape != E.shape:
        raise AlignmentError(f"scales shape {a.shape} does not match residuals {E.shape}")
    K = E.shape[0]
    if K < 2:
        raise InsufficientData(f"need at least 2 correspondences, got {K}")
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(a))):
        raise NonFinite("residuals and scales must be finite")
    if np.any(a < 0):
        raise ConfigInvalid("lidar scales must be non-negative")

    b = (E * E).ravel()
    a2 = (a * a).ravel()
    A = np.column_stack([np.ones_like(a2), a2])

    degenerate = np.ptp(a2) <= 1e-12 * max(1.0, float(np.max(a2)))
    if degenerate:
        log.warning("lidar scales are constant; design is rank deficient, fitting sigma_l2 = 0")
        A = A.copy()
        A[:, 1] = 0.0

    if cfg.init_sigma is None:
        w = np.ones_like(b)
    else:
        # 1 / N(eps_k; 0, s^2 I), normalized by its largest value
        q = np.sum(E * E, axis=1) / (2.0 * cfg.init_sigma**2)
        w = np.repeat(np.exp(q - q.max()), 2)

    beta = _solve_clamped(A, b, w, cfg.floor)
    iterations = 1
    converged = not cfg.robust
    if cfg.robust:
        kappa = consistency_factor(cfg.huber_delta)
        target = b / kappa
        while iterations < cfg.max_iter:
            mu = A @ beta
            u = (b - mu) / (np.sqrt(2.0) * mu)
            w = _huber(u, cfg.huber_delta) / (mu * mu)
            new = _solve_clamped(A, target, w, cfg.floor)
            iterations += 1
            change = np.linalg.norm(new - beta) / max(np.linalg.norm(beta), cfg.floor)
            beta = new
            if change < cfg.tol:
                converged = True
                break

    sigma_d2, sigma_l2 = float(beta[0]), float(beta[1])
    per_point = np.sqrt(sigma_d2 + a * a * sigma_l2)
    per_point.setflags(write=False)
    a = a.copy()
    a.setflags(write=False)
    return NoiseFit(sigma_d2=sigma_d2, sigma_l2=sigma_l2, per_point_sigma=per_point, scales=a,
                    iterations=iterations, converged=converged, degenerate=bool(degenerate))


def standardize(eps, fit):
    """Divide each residual component by its predicted standard deviation."""
    E = _as_eps(eps)
    sigma = np.asarray(fit.per_point_sigma, dtype=float)
    if E.shape != sigma.shape:
        raise AlignmentError(f"residuals {E.shape} and fit {sigma.shape} are not aligned")
    values = (E / sigma).ravel()
    values.setflags(write=False)
    return StandardizedResiduals(values=values)
