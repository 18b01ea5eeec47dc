"""Model acquisition: Levenberg-Marquardt refinement and model files.

Externally estimated models (any xPnP solver) enter through
:func:`load_model`; :func:`fit_model` refines ``(f, theta, R, t)`` on
reprojection error with the principal point held at the image center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, InsufficientData, NonConvergence, ParseError
from .geometry import (
    CameraModel,
    Correspondence,
    pinhole,
    project_points,
    rotation_error,
    rotation_from_rotvec,
    rotation_rotvec_derivatives,
    rotvec_from_rotation,
    stack_correspondences,
)

MIN_CORRESPONDENCES = 6
ROTATION_FILE_TOL = 1e-6
LOSSES = ("linear", "cauchy")
MODEL_FIELDS = ("f_x", "f_y", "c_x", "c_y", "theta", "R", "t", "distortion_order")


@dataclass(frozen=True)
class FitConfig:
    distortion_order: int = 3
    max_iter: int = 200
    tol: float = 1e-12
    inlier_threshold: float = 3.0
    image_size: tuple = (1600, 1600)
    lambda0: float = 1e-3
    # "linear" is plain least squares; "cauchy" downweights a correspondence
    # by 1 / (1 + |eps|^2 / loss_scale^2), like a robust xPnP estimator
    loss: str = "linear"
    loss_scale: float = 0.1
    irls_max_iter: int = 100

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.distortion_order not in (1, 3):
            raise ConfigInvalid("distortion_order must be 1 or 3")
        if self.loss not in LOSSES:
            raise ConfigInvalid(f"loss must be one of {sorted(LOSSES)}")
        if not self.loss_scale > 0:
            raise ConfigInvalid("loss_scale must be positive")
        if not self.tol > 0:
            raise ConfigInvalid("tol must be positive")
        if self.max_iter < 1:
            raise ConfigInvalid("max_iter must be >= 1")
        if not self.inlier_threshold > 0:
            raise ConfigInvalid("inlier_threshold must be positive")

    @property
    def principal_point(self):
        return self.image_size[0] / 2.0, self.image_size[1] / 2.0


# -- parameterization -------------------------------------------------------

def pack(model, order):
    """Parameter vector ``[f, theta[:order], rotvec, t]`` (``f`` is ``f_x``)."""
    return np.concatenate([[model.f_x], model.theta[:order], rotvec_from_rotation(model.R),
                           model.t])


def unpack(p, order, c_x, c_y):
    theta = np.zeros(3)
    theta[:order] = p[1:1 + order]
    rv = p[1 + order:4 + order]
    return CameraModel(f_x=p[0], f_y=p[0], c_x=c_x, c_y=c_y, theta=theta,
                       R=rotation_from_rotvec(rv), t=p[4 + order:7 + order],
                       distortion_order=order)


def projection_and_jacobian(p, X, order, c_x, c_y):
    """Projections (N, 2) and their derivatives (N, 2, P) w.r.t. the packed parameters."""
    f = p[0]
    k = np.zeros(3)
    k[:order] = p[1:1 + order]
    rv = p[1 + order:4 + order]
    t = p[4 + order:7 + order]
    R = rotation_from_rotvec(rv)
    Xc = X @ R.T + t
    z = Xc[:, 2]
    y = pinhole(Xc)
    x_, y_ = y[:, 0], y[:, 1]
    r2 = x_ * x_ + y_ * y_
    D = 1.0 + r2 * (k[0] + r2 * (k[1] + r2 * k[2]))
    dD = k[0] + r2 * (2.0 * k[1] + 3.0 * r2 * k[2])
    yd = y * D[:, None]
    proj = f * yd + np.array([c_x, c_y])

    n = X.shape[0]
    P = 7 + order
    J = np.empty((n, 2, P))
    J[:, :, 0] = yd
    for j in range(order):
        J[:, :, 1 + j] = f * y * (r2 ** (j + 1))[:, None]
    # d(distorted)/d(normalized), then d(normalized)/d(camera point)
    Jd = np.empty((n, 2, 2))
    Jd[:, 0, 0] = D + 2.0 * x_ * x_ * dD
    Jd[:, 0, 1] = 2.0 * x_ * y_ * dD
    Jd[:, 1, 0] = Jd[:, 0, 1]
    Jd[:, 1, 1] = D + 2.0 * y_ * y_ * dD
    Jp = np.zeros((n, 2, 3))
    Jp[:, 0, 0] = 1.0 / z
    Jp[:, 1, 1] = 1.0 / z
    Jp[:, 0, 2] = -x_ / z
    Jp[:, 1, 2] = -y_ / z
    M = f * np.einsum("nij,njk->nik", Jd, Jp)
    dR = rotation_rotvec_derivatives(rv)
    for i in range(3):
        J[:, :, 1 + order + i] = np.einsum("nij,nj->ni", M, X @ dR[i].T)
    J[:, :, 4 + order:] = M
    return proj, J


def numeric_jacobian(p, X, order, c_x, c_y, rel_step=1e-6):
    """Central finite differences of the projection, same layout as the analytic one."""
    p = np.asarray(p, dtype=float)
    J = np.empty((X.shape[0], 2, p.size))
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1e-2)
        hi, lo = p.copy(), p.copy()
        hi[i] += h
        lo[i] -= h
        J[:, :, i] = (projection_and_jacobian(hi, X, order, c_x, c_y)[0]
                      - projection_and_jacobian(lo, X, order, c_x, c_y)[0]) / (2 * h)
    return J


# -- Levenberg-Marquardt ----------------------------------------------------

@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)  # cost after every accepted step


def levenberg_marquardt(residual_jac, p0, max_iter=200, tol=1e-12, lambda0=1e-3,
                        lambda_max=1e12):
    """Minimize ``0.5 |r(p)|^2`` with Marquardt-scaled damping.

    ``residual_jac(p)`` returns ``(r, J)``. The damping factor is divided
    by 10 after an accepted step and multiplied by 10 after a rejected
    one. Convergence: relative cost decrease, relative step or scaled
    gradient below ``tol``, or damping beyond ``lambda_max`` (no
    descent representable at machine precision).
    """
    p = np.asarray(p0, dtype=float).copy()
    r, J = residual_jac(p)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lambda0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-12 * max(np.max(np.diag(H)), 1e-300))
        if cost == 0.0 or np.max(np.abs(g) / np.sqrt(diag)) <= tol * math.sqrt(2.0 * cost):
            return LMResult(p, cost, it - 1, True, history)
        while True:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                p_new = p + step
                r_new, J_new = residual_jac(p_new)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            lam *= 10.0
            if lam > lambda_max:
                return LMResult(p, cost, it, True, history)
        small_step = np.linalg.norm(step) <= tol * (np.linalg.norm(p) + tol)
        small_gain = cost - cost_new <= tol * cost
        p, r, J, cost = p_new, r_new, J_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if small_step or small_gain:
            return LMResult(p, cost, it, True, history)
    return LMResult(p, cost, max_iter, False, history)


# -- fitting ----------------------------------------------------------------

def initial_model(x2d, X3d, cfg):
    """Coarse near-frontal guess: identity rotation, depth from point spreads."""
    c_x, c_y = cfg.principal_point
    f0 = math.hypot(*cfg.image_size)
    c2 = x2d.mean(axis=0)
    c3 = X3d.mean(axis=0)
    spread2 = np.sqrt(np.mean(np.sum((x2d - c2) ** 2, axis=1)))
    spread3 = np.sqrt(np.mean(np.sum((X3d[:, :2] - c3[:2]) ** 2, axis=1)))
    depth = f0 * spread3 / max(spread2, 1e-9)
    ray = np.array([(c2[0] - c_x) / f0, (c2[1] - c_y) / f0, 1.0])
    t0 = depth * ray - c3
    return CameraModel(f_x=f0, f_y=f0, c_x=c_x, c_y=c_y, theta=np.zeros(3), R=np.eye(3), t=t0,
                       distortion_order=cfg.distortion_order)


def _refine(x2d, X3d, model, order, cfg, weights=None):
    c_x, c_y = model.c_x, model.c_y
    target = x2d.ravel()
    sw = None if weights is None else np.repeat(np.sqrt(weights), 2)

    def residual_jac(p):
        proj, J = projection_and_jacobian(p, X3d, order, c_x, c_y)
        r, J = target - proj.ravel(), -J.reshape(-1, J.shape[2])
        if sw is not None:
            r, J = r * sw, J * sw[:, None]
        return r, J

    res = levenberg_marquardt(residual_jac, pack(model.replace(theta=_trim(model.theta, order),
                                                               distortion_order=order), order),
                              max_iter=cfg.max_iter, tol=cfg.tol, lambda0=cfg.lambda0)
    return unpack(res.x, order, c_x, c_y), res


def _robust_refine(x2d, X3d, model, cfg):
    """Cauchy M-estimate by iteratively reweighted LM solves."""
    order = cfg.distortion_order
    res = None
    for _ in range(cfg.irls_max_iter):
        s = np.sum((x2d - project_points(model, X3d)) ** 2, axis=1) / cfg.loss_scale**2
        weights = 1.0 / (1.0 + s)
        new, res = _refine(x2d, X3d, model, order, cfg, weights)
        p_old, p_new = pack(model, order), pack(new, order)
        model = new
        if not res.converged:
            break
        if np.linalg.norm(p_new - p_old) <= 1e-10 * np.linalg.norm(p_old):
            break
    return model, res


def _trim(theta, order):
    out = np.zeros(3)
    out[:order] = np.asarray(theta)[:order]
    return out


def refine(corrs, cfg=None, init=None):
    """Fit a camera model to the inlier correspondences; returns ``(model, LMResult)``."""
    cfg = cfg or FitConfig()
    x2d, X3d, inlier = stack_correspondences(corrs)
    x2d, X3d = x2d[inlier], X3d[inlier]
    if len(x2d) < MIN_CORRESPONDENCES:
        raise InsufficientData(f"need at least {MIN_CORRESPONDENCES} inlier correspondences, "
                               f"got {len(x2d)}")
    if init is None:
        # pinhole first; distortion is only identifiable once the pose is close
        start = initial_model(x2d, X3d, cfg)
        start, _ = _refine(x2d, X3d, start.replace(distortion_order=1), 1, cfg)
    else:
        start = init
    model, res = _refine(x2d, X3d, start, cfg.distortion_order, cfg)
    if res.converged and cfg.loss == "cauchy":
        model, res = _robust_refine(x2d, X3d, model, cfg)
    if not res.converged:
        raise NonConvergence(f"Levenberg-Marquardt did not converge in {cfg.max_iter} "
                             f"iterations (cost {res.cost:.6g})")
    return model, res


def fit_model(corrs, cfg=None, init=None):
    """Least-squares camera model for ``corrs`` (see :func:`refine`)."""
    return refine(corrs, cfg, init)[0]


def flag_inliers(model, corrs, threshold=3.0, min_scale=1e-6):
    """Re-flag every correspondence by its residual norm.

    The robust scale is the per-axis standard deviation implied by the
    median residual norm of a 2D isotropic Gaussian,
    ``median |eps| / sqrt(2 ln 2)``, floored at ``min_scale`` pixels.
    """
    x2d, X3d, _ = stack_correspondences(corrs)
    norms = np.linalg.norm(x2d - project_points(model, X3d), axis=1)
    scale = max(float(np.median(norms)) / math.sqrt(2.0 * math.log(2.0)), min_scale)
    keep = norms <= threshold * scale
    return [Correspondence(c.x2d, c.X3d, bool(k)) for c, k in zip(corrs, keep)]


# -- model files ------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def model_to_json(model):
    theta = ", ".join(_fmt(v) for v in model.theta)
    R = ", ".join(_fmt(v) for v in model.R.ravel())
    t = ", ".join(_fmt(v) for v in model.t)
    return (
        "{\n"
        f'  "f_x": {_fmt(model.f_x)},\n'
        f'  "f_y": {_fmt(model.f_y)},\n'
        f'  "c_x": {_fmt(model.c_x)},\n'
        f'  "c_y": {_fmt(model.c_y)},\n'
        f'  "theta": [{theta}],\n'
        f'  "R": [{R}],\n'
        f'  "t": [{t}],\n'
        f'  "distortion_order": {model.distortion_order}\n'
        "}\n"
    )


def save_model(model, path):
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def _numbers(d, name, count, path):
    value = d[name]
    if count is None:
        value = [value]
    if not isinstance(value, list) or (count is not None and len(value) != count):
        raise ParseError(f"expected {count} numbers", reason="InvalidField", path=path,
                         field=name)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"non-numeric or non-finite value {v!r}", reason="InvalidField",
                             path=path, field=name)
        out.append(float(v))
    return out if count is not None else out[0]


def model_from_dict(d, path=None):
    if not isinstance(d, dict):
        raise ParseError("model must be a JSON object", reason="InvalidJSON", path=path)
    for name in MODEL_FIELDS:
        if name not in d:
            raise ParseError("missing field", reason="MissingField", path=path, field=name)
    order = d["distortion_order"]
    if order not in (1, 3) or isinstance(order, bool):
        raise ParseError(f"distortion_order must be 1 or 3, got {order!r}",
                         reason="InvalidField", path=path, field="distortion_order")
    theta = _numbers(d, "theta", 3, path)
    if order == 1 and (theta[1] != 0.0 or theta[2] != 0.0):
        raise ParseError("distortion_order 1 requires theta[1] = theta[2] = 0",
                         reason="DistortionOrderMismatch", path=path, field="theta")
    R = np.array(_numbers(d, "R", 9, path)).reshape(3, 3)
    err = rotation_error(R)
    if err > ROTATION_FILE_TOL or np.linalg.det(R) <= 0:
        raise ParseError(f"R is not a proper rotation (|R^T R - I| = {err:.3g})",
                         reason="InvalidRotation", path=path, field="R")
    if err > 1e-12:
        # project onto SO(3); within file tolerance this is a rounding repair
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
    f_x, f_y = _numbers(d, "f_x", None, path), _numbers(d, "f_y", None, path)
    for name, v in (("f_x", f_x), ("f_y", f_y)):
        if not v > 0:
            raise ParseError("focal length must be positive", reason="InvalidField", path=path,
                             field=name)
    return CameraModel(f_x=f_x, f_y=f_y, c_x=_numbers(d, "c_x", None, path),
                       c_y=_numbers(d, "c_y", None, path), theta=theta, R=R,
                       t=_numbers(d, "t", 3, path), distortion_order=order)


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(exc), reason="IOError", path=str(path)) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, reason="InvalidJSON", path=str(path), line=exc.lineno) from None
    return model_from_dict(d, path=str(path))
