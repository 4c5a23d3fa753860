"""Iterated error-state Kalman update with point-to-plane residuals.

Each frame point p_I (IMU frame at the window end) is placed in the world by
the current iterate, matched to a plane fitted to its nearest map points, and
contributes the scalar residual z = u . (R p_I + p - q). Its Jacobian row is
[-u^T R skew(p_I), u^T, 0_{1x12}] under the right rotation perturbation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ERR_DIM, POS, ROT, NavState, Pose, boxminus, boxplus, right_jacobian, skew
from .regmap import RegistrationMap, fit_plane, fit_planes_batch


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class EskfConfig:
    knn_k: int = 5
    search_radius: float = 1.0
    plane_threshold: float = 0.1
    outlier_gate: float = 0.5
    meas_std: float = 0.02
    min_valid_points: int = 50
    max_iterations: int = 5
    convergence_eps: float = 1e-3
    max_points: int = 600
    rematch: bool = True

    def __post_init__(self):
        if self.knn_k < 3:
            raise ValueError("knn_k must be at least 3")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class Measurement:
    z: float
    H: np.ndarray
    r: float


@dataclass
class UpdateReport:
    iterations: int = 0
    converged: bool = False
    final_dx_norm: float = 0.0
    valid_points: int = 0
    rejected_points: int = 0
    degraded: bool = False
    residual_rms: list = field(default_factory=list)


def measurement_row(p_body: np.ndarray, x: NavState, normal: np.ndarray, anchor: np.ndarray):
    p_world = x.rot.apply(p_body) + x.pos
    z = float(normal @ (p_world - anchor))
    H = np.zeros(ERR_DIM)
    H[ROT] = -normal @ x.rot.matrix @ skew(p_body)
    H[POS] = normal
    return z, H


def residual_jacobian(point_lidar, x: NavState, extrinsic: Pose, rmap: RegistrationMap,
                      cfg: EskfConfig = EskfConfig(), weight: float = 1.0) -> Measurement | None:
    """Point-to-plane measurement for one LiDAR point, or None when unusable."""
    if not len(rmap):
        raise ValueError("registration map is empty")
    p_body = extrinsic.apply(np.asarray(point_lidar, dtype=float))
    p_world = x.rot.apply(p_body) + x.pos
    nbrs = rmap.knn(p_world, cfg.knn_k, cfg.search_radius)
    if len(nbrs) < cfg.knn_k:
        return None
    plane = fit_plane(nbrs, cfg.plane_threshold)
    if not plane.valid:
        return None
    z, H = measurement_row(p_body, x, plane.normal, plane.anchor)
    if abs(z) > cfg.outlier_gate:
        return None
    return Measurement(z, H, cfg.meas_std ** 2 / weight ** 2)


def match_planes(rmap: RegistrationMap, p_world: np.ndarray, cfg: EskfConfig):
    """Plane (normal, anchor) per point; ``ok`` marks points with a valid plane."""
    n = len(p_world)
    normals = np.zeros((n, 3))
    anchors = np.zeros((n, 3))
    ok = np.zeros(n, dtype=bool)
    if not n or not len(rmap):
        return normals, anchors, ok
    nbrs, dist = rmap.knn_batch(p_world, cfg.knn_k, cfg.search_radius)
    full = np.all(np.isfinite(dist), axis=1)
    if full.any():
        nr, an, valid, _ = fit_planes_batch(nbrs[full], cfg.plane_threshold)
        idx = np.flatnonzero(full)
        normals[idx], anchors[idx], ok[idx] = nr, an, valid
    return normals, anchors, ok


def stacked_measurements(p_body: np.ndarray, x: NavState, normals: np.ndarray, anchors: np.ndarray):
    """Vectorized residuals z (N,) and Jacobian rows H (N, 18)."""
    R = x.rot.matrix
    p_world = p_body @ R.T + x.pos
    z = np.einsum("ni,ni->n", normals, p_world - anchors)
    H = np.zeros((len(p_body), ERR_DIM))
    # -u^T R skew(p) as a row is p x (R^T u)
    H[:, ROT] = np.cross(p_body, normals @ R)
    H[:, POS] = normals
    return z, H


def kalman_gain(P: np.ndarray, H: np.ndarray, r: np.ndarray) -> np.ndarray:
    """K = P H^T (H P H^T + R)^-1."""
    S = H @ P @ H.T + np.diag(r)
    return np.linalg.solve(S, H @ P).T


def kalman_gain_information(P: np.ndarray, H: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Same gain through (H^T R^-1 H + P^-1)^-1 H^T R^-1."""
    HtRinv = H.T / r
    S = HtRinv @ H + np.linalg.inv(P)
    return np.linalg.solve(S, HtRinv)


def posterior_covariance(P: np.ndarray, K: np.ndarray, H: np.ndarray, tol: float = -1e-8) -> np.ndarray:
    P_post = (np.eye(P.shape[0]) - K @ H) @ P
    P_post = 0.5 * (P_post + P_post.T)
    if np.linalg.eigvalsh(P_post).min() < tol * max(1.0, np.abs(P).max()):
        raise NumericalFailure("posterior covariance lost positive semi-definiteness")
    return P_post


def iterated_update(x_prior: NavState, P: np.ndarray, p_body: np.ndarray, weights: np.ndarray,
                    rmap: RegistrationMap, cfg: EskfConfig = EskfConfig()):
    """Iterated update of ``x_prior`` from body-frame points at the update time.

    Planes are matched at the prior and, with ``cfg.rematch``, again at every
    later iterate; residuals and Jacobians are rebuilt each time. Returns ``(state, covariance, UpdateReport)``; when too
    few points survive matching the prior is returned unchanged.
    """
    p_body = np.asarray(p_body, dtype=float).reshape(-1, 3)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    report = UpdateReport()
    n = len(p_body)
    if n and len(rmap):
        normals, anchors, ok = match_planes(rmap, x_prior.rot.apply(p_body) + x_prior.pos, cfg)
        z0, _ = stacked_measurements(p_body, x_prior, normals, anchors)
        ok &= np.abs(z0) <= cfg.outlier_gate
    else:
        ok = np.zeros(n, dtype=bool)
    report.valid_points = int(ok.sum())
    report.rejected_points = n - report.valid_points
    if report.valid_points < cfg.min_valid_points:
        report.degraded = True
        return x_prior, P, report

    pb, nr, an = p_body[ok], normals[ok], anchors[ok]
    r = cfg.meas_std ** 2 / weights[ok] ** 2
    P_inv = np.linalg.inv(P)
    x = x_prior
    I = np.eye(ERR_DIM)
    for j in range(cfg.max_iterations):
        if j and cfg.rematch:
            nr2, an2, ok2 = match_planes(rmap, x.rot.apply(p_body) + x.pos, cfg)
            z2, _ = stacked_measurements(p_body, x, nr2, an2)
            ok2 &= np.abs(z2) <= cfg.outlier_gate
            # keep the previous association if the new one is too thin
            if ok2.sum() >= cfg.min_valid_points:
                pb, nr, an = p_body[ok2], nr2[ok2], an2[ok2]
                r = cfg.meas_std ** 2 / weights[ok2] ** 2
                report.valid_points = int(ok2.sum())
                report.rejected_points = n - report.valid_points
        z, H = stacked_measurements(pb, x, nr, an)
        report.residual_rms.append(float(np.sqrt(np.mean(z * z))))
        HtRinv = H.T / r
        S = HtRinv @ H + P_inv
        KH = np.linalg.solve(S, HtRinv @ H)
        Kz = np.linalg.solve(S, HtRinv @ z)
        e = boxminus(x, x_prior)
        A = np.eye(ERR_DIM)
        A[ROT, ROT] = right_jacobian(e[ROT])
        dx = -Kz - (I - KH) @ np.linalg.solve(A, e)
        x = boxplus(x, dx)
        report.iterations = j + 1
        report.final_dx_norm = float(np.linalg.norm(dx))
        if report.final_dx_norm < cfg.convergence_eps:
            report.converged = True
            break
    P_post = (I - KH) @ P
    P_post = 0.5 * (P_post + P_post.T)
    return x, P_post, report
