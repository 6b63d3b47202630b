"""Motion transfer, sweep undistortion, and Generalized-ICP localization.

Per window the camera's rotation estimate is transferred to the LiDAR
frame, the in-motion sweep is undistorted to the window center by
fractional screw interpolation, and the result is registered against the
dense static cloud to recover the sensor pose relative to the static
capture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DivergedRegistration, InsufficientPoints, TimestampOutOfWindow
from .geometry import (
    PointCloudFrame,
    RigidTransform,
    se3_exp,
    se3_log,
    skew,
    so3_exp,
)

DEFAULT_MIN_POINTS = 300


@dataclass
class WindowPose:
    """Per-window motion and localization outputs.

    ``window_motion`` is the LiDAR's rigid motion across the window
    interval; ``pose_to_static`` maps window-frame coordinates into the
    static-capture frame. ``fitness`` is the mean squared point-to-plane
    registration residual in m^2.
    """

    t_center: float
    omega: np.ndarray
    window_motion: RigidTransform
    pose_to_static: RigidTransform
    fitness: float

    def __post_init__(self):
        if self.fitness < 0:
            raise ValueError("fitness must be non-negative")


def lidar_motion_from_camera(
    omega: np.ndarray,
    dt: float,
    extrinsic: RigidTransform,
    mode: str = "conjugate",
) -> RigidTransform:
    """Transfer a camera rotation rate over ``dt`` seconds to the LiDAR frame.

    ``conjugate`` (default) changes frames properly: E * R * E^-1. The
    ``literal`` mode composes E * R without the trailing inverse, kept
    selectable for comparison.
    """
    cam_motion = RigidTransform(so3_exp(np.asarray(omega, dtype=float) * dt), np.zeros(3))
    if mode == "conjugate":
        return extrinsic.compose(cam_motion).compose(extrinsic.inverse())
    if mode == "literal":
        return extrinsic.compose(cam_motion)
    raise ValueError(f"unknown motion transfer mode: {mode!r}")


def undistort_sweep(
    sweep: PointCloudFrame,
    window_motion: RigidTransform,
    t_center: float,
    half_width: float,
) -> PointCloudFrame:
    """Re-express every sweep point at the window center time.

    Each point moves by the fractional window motion at
    alpha = (t - t_center) / (2 * half_width), interpolated along the
    motion's constant-velocity screw (exactly invertible).
    """
    t = sweep.timestamps
    lo, hi = t_center - half_width - 1e-9, t_center + half_width + 1e-9
    if len(sweep) and (t.min() < lo or t.max() > hi):
        raise TimestampOutOfWindow(
            f"sweep timestamps span [{t.min():.6f}, {t.max():.6f}] outside window"
        )
    if len(sweep) == 0:
        return PointCloudFrame(sweep.positions.copy(), sweep.reflectivity.copy(), t.copy())

    alpha = (t - t_center) / (2.0 * half_width)
    xi = se3_log(window_motion)
    moved = _apply_fractional_screw(sweep.positions, xi, alpha)
    return PointCloudFrame(moved, sweep.reflectivity.copy(), np.full_like(t, t_center))


def _apply_fractional_screw(points: np.ndarray, xi: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Apply Exp(alpha_i * xi) to each point, vectorized over points."""
    rho, theta = xi[:3], xi[3:]
    angle = float(np.linalg.norm(theta))
    if angle < 1e-12:
        return points + alpha[:, None] * rho

    k = theta / angle
    a = alpha * angle
    c, s = np.cos(a), np.sin(a)

    kxp = np.cross(k, points)
    kdp = points @ k
    rotated = c[:, None] * points + s[:, None] * kxp + ((1.0 - c) * kdp)[:, None] * k

    # Translation of Exp(alpha*xi): V(alpha*theta) @ (alpha*rho), with the
    # V-matrix terms resolved against the fixed axis k.
    kxr = np.cross(k, rho)
    kxxr = np.cross(k, kxr)
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(np.abs(a) > 1e-9, (1.0 - c) / a, a / 2.0)
        c2 = np.where(np.abs(a) > 1e-9, (a - s) / a, a * a / 6.0)
    trans = alpha[:, None] * rho + (alpha * c1)[:, None] * kxr + (alpha * c2)[:, None] * kxxr
    return rotated + trans


def voxel_downsample(cloud: PointCloudFrame, voxel: float) -> PointCloudFrame:
    """Average points (and reflectivity) per occupied voxel."""
    if voxel <= 0:
        return cloud
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    n_vox = counts.size
    pos = np.zeros((n_vox, 3))
    for d in range(3):
        pos[:, d] = np.bincount(inverse, weights=cloud.positions[:, d], minlength=n_vox)
    pos /= counts[:, None]
    refl = np.bincount(inverse, weights=cloud.reflectivity, minlength=n_vox) / counts
    ts = np.bincount(inverse, weights=cloud.timestamps, minlength=n_vox) / counts
    return PointCloudFrame(pos, refl, ts)


def _local_surface_models(points: np.ndarray, k: int, eps: float, curve_ratio: float = 0.2):
    """Per-point regularized covariances and surface normals from k-NN.

    Covariance eigenvalues are replaced by (eps, 1, 1), flattening each
    neighborhood into a disc; the normal is the smallest-eigenvalue
    direction. Neighborhoods sampled along a scan curve (middle
    eigenvalue collapsed relative to the largest) cannot orient a surface
    disc, so they fall back to an isotropic point-like covariance.
    """
    tree = cKDTree(points)
    k_eff = min(k + 1, points.shape[0])
    _, idx = tree.query(points, k=k_eff)
    neigh = points[idx]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / max(k_eff - 1, 1)
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    flat = np.array([eps, 1.0, 1.0])
    regularized = np.einsum("nij,j,nkj->nik", v, flat, v)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(w[:, 2] > 1e-18, w[:, 1] / w[:, 2], 0.0)
    degenerate = ratio < curve_ratio
    if np.any(degenerate):
        regularized[degenerate] = eps * np.eye(3)
    return tree, regularized, normals


@dataclass
class PreparedTarget:
    """Static cloud with its spatial index and surface models, built once.

    ``interior`` flags points well inside the covered surface; matches to
    coverage-boundary points drag registration tangentially (a source
    point just past the boundary always matches the rim) and are skipped.
    """

    points: np.ndarray
    tree: cKDTree
    covariances: np.ndarray
    normals: np.ndarray
    interior: np.ndarray


def prepare_target(
    cloud: PointCloudFrame,
    voxel: float = 0.0,
    k_neighbors: int = 20,
    cov_eps: float = 1e-3,
) -> PreparedTarget:
    if voxel > 0:
        cloud = voxel_downsample(cloud, voxel)
    if len(cloud) < DEFAULT_MIN_POINTS:
        raise InsufficientPoints(f"target cloud has {len(cloud)} points")
    tree, covs, normals = _local_surface_models(cloud.positions, k_neighbors, cov_eps)
    interior = _interior_mask(cloud.positions, tree, normals)
    return PreparedTarget(cloud.positions, tree, covs, normals, interior)


def _interior_mask(points, tree, normals, offset_ratio: float = 0.35) -> np.ndarray:
    """True where a point's in-plane neighborhood is balanced on all sides.

    Boundary points have their neighbors piled on one side; the local
    centroid offset (projected in-plane, relative to the neighborhood
    scale) exposes them without assuming any absolute point spacing.
    """
    k = min(24, points.shape[0])
    dists, idx = tree.query(points, k=k)
    centroid = points[idx].mean(axis=1) - points
    in_plane = centroid - np.einsum("ni,ni->n", centroid, normals)[:, None] * normals
    offset = np.linalg.norm(in_plane, axis=1)
    scale = np.maximum(dists.mean(axis=1), 1e-12)
    return offset < offset_ratio * scale


@dataclass
class GicpResult:
    """``objective_trace`` holds the adopted incumbents' objective values,
    one entry per outer iteration that improved on the best so far."""

    transform: RigidTransform
    fitness: float
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    matched_fraction: float = 0.0

    def __iter__(self):
        # Allows `transform, fitness = gicp_register(...)`.
        return iter((self.transform, self.fitness))


def gicp_register(
    source: PointCloudFrame,
    target: PointCloudFrame | PreparedTarget,
    init: RigidTransform | None = None,
    k_neighbors: int = 20,
    cov_eps: float = 1e-3,
    max_iterations: int = 50,
    max_corr_dist: float = 1.0,
    reject_fitness: float = 0.01,
    min_points: int = DEFAULT_MIN_POINTS,
    min_matched_fraction: float = 0.3,
) -> GicpResult:
    """Plane-to-plane GICP between two clouds.

    Minimizes a robustified Mahalanobis residual under per-point disc
    covariances by damped Gauss-Newton with nearest-neighbor
    re-association each iteration; the pose with the best objective seen
    is returned. Fitness is the mean squared point-to-plane residual
    (m^2) at that pose.
    """
    if len(source) < min_points:
        raise InsufficientPoints(f"source cloud has {len(source)} points (min {min_points})")
    if isinstance(target, PreparedTarget):
        prepared = target
    else:
        if len(target) < min_points:
            raise InsufficientPoints(f"target cloud has {len(target)} points (min {min_points})")
        tree, covs, normals = _local_surface_models(target.positions, k_neighbors, cov_eps)
        interior = _interior_mask(target.positions, tree, normals)
        prepared = PreparedTarget(target.positions, tree, covs, normals, interior)

    src_pts = source.positions
    _, src_covs, _ = _local_surface_models(src_pts, k_neighbors, cov_eps)

    T = init if init is not None else RigidTransform.identity()
    trace: list[float] = []
    matched_fraction = 0.0
    lam = 1e-4
    huber_scale = None
    best_objective = np.inf
    best_T = T
    stall = 0

    def robust(res, w_mats, scale):
        """Huber cost on the Mahalanobis residual norm, plus IRLS weights.

        Sweep points covering regions the static capture never saw match
        a wrong surface far away; the smooth downweighting bounds their
        influence without discarding the coherent large residuals that
        carry the convergence signal.
        """
        m2 = np.einsum("ni,nij,nj->n", res, w_mats, res)
        r = np.sqrt(np.maximum(m2, 1e-30))
        w = np.where(r <= scale, 1.0, scale / r)
        cost = np.where(r <= scale, 0.5 * m2, scale * (r - 0.5 * scale))
        return float(cost.mean()), w

    for iteration in range(max_iterations):
        moved = T.apply(src_pts)
        dist, nn = prepared.tree.query(moved, distance_upper_bound=max_corr_dist)
        matched = np.isfinite(dist)
        matched &= prepared.interior[np.where(matched, nn, 0)]
        matched_fraction = float(matched.mean())
        if matched.sum() < 6 or matched_fraction < min_matched_fraction:
            raise DivergedRegistration(
                f"only {matched.sum()} correspondences within {max_corr_dist} m"
            )
        s = src_pts[matched]
        moved_s = moved[matched]
        t_idx = nn[matched]
        tgt = prepared.points[t_idx]

        R = T.rotation
        combined = prepared.covariances[t_idx] + R @ src_covs[matched] @ R.T
        weights = np.linalg.inv(combined)
        residual = tgt - moved_s

        if huber_scale is None:
            m2 = np.einsum("ni,nij,nj->n", residual, weights, residual)
            huber_scale = max(2.5 * float(np.median(np.sqrt(m2))), 1e-9)

        objective, huber_w = robust(residual, weights, huber_scale)
        if objective < best_objective - 1e-15:
            best_objective = objective
            best_T = T
            trace.append(objective)
            stall = 0
        else:
            stall += 1
            if stall >= 4:
                break

        # d(residual)/d[dtheta, dtrans] for the right-perturbed pose.
        J = np.empty((matched.sum(), 3, 6))
        J[:, :, :3] = R @ skew_batch(s)
        J[:, :, 3:] = -R[None, :, :]
        weighted = weights * huber_w[:, None, None]
        H = np.einsum("nai,nab,nbj->ij", J, weighted, J)
        g = np.einsum("nai,nab,nb->i", J, weighted, residual)

        def fixed_assoc_objective(T_cand):
            res = tgt - T_cand.apply(s)
            comb = prepared.covariances[t_idx] + T_cand.rotation @ src_covs[matched] @ T_cand.rotation.T
            return robust(res, np.linalg.inv(comb), huber_scale)[0]

        # Levenberg damping keeps the step bounded along the sliding
        # directions a sparse sweep leaves unconstrained on planar scenes.
        ridge = np.diag(H) + 1e-3 * np.trace(H) / 6.0
        accepted = False
        step = np.zeros(6)
        for _ in range(10):
            step = np.linalg.solve(H + lam * np.diag(ridge), -g)
            T_new = _compose_step(T, step)
            if fixed_assoc_objective(T_new) <= objective:
                accepted = True
                lam = max(lam * 0.3, 1e-7)
                break
            lam *= 8.0
        if not accepted:
            break
        T = T_new
        if np.linalg.norm(step) < 1e-10:
            break
    T = best_T

    moved = T.apply(src_pts)
    dist, nn = prepared.tree.query(moved, distance_upper_bound=max_corr_dist)
    matched = np.isfinite(dist)
    matched &= prepared.interior[np.where(matched, nn, 0)]
    if np.any(matched):
        # Fitness reflects the aligned surfaces, not the no-overlap tail.
        med = float(np.median(dist[matched]))
        matched &= dist <= max(4.0 * med, 0.05)
    if not np.any(matched):
        raise DivergedRegistration("no correspondences at the final pose")
    res = prepared.points[nn[matched]] - moved[matched]
    plane = np.einsum("ni,ni->n", res, prepared.normals[nn[matched]])
    fitness = float(np.mean(plane**2))
    if fitness > reject_fitness:
        raise DivergedRegistration(
            f"fitness {fitness:.3e} m^2 exceeds threshold {reject_fitness:.3e}"
        )
    return GicpResult(
        transform=T,
        fitness=fitness,
        objective_trace=trace,
        iterations=iteration + 1,
        matched_fraction=matched_fraction,
    )


def skew_batch(points: np.ndarray) -> np.ndarray:
    """(N, 3, 3) cross-product matrices."""
    n = points.shape[0]
    out = np.zeros((n, 3, 3))
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    out[:, 0, 1] = -z
    out[:, 0, 2] = y
    out[:, 1, 0] = z
    out[:, 1, 2] = -x
    out[:, 2, 0] = -y
    out[:, 2, 1] = x
    return out


def _compose_step(T: RigidTransform, step: np.ndarray) -> RigidTransform:
    """Right-multiply T by the local perturbation (exp(dtheta), dtrans)."""
    dR = so3_exp(step[:3])
    return T.compose(RigidTransform(dR, step[3:]))


def localize_window(
    sweep: PointCloudFrame,
    omega: np.ndarray,
    extrinsic: RigidTransform,
    target: PreparedTarget,
    t_center: float,
    half_width: float,
    prev_pose: WindowPose | None = None,
    motion_mode: str = "conjugate",
    max_corr_dist: float = 0.08,
    source_voxel: float = 0.03,
    **gicp_kwargs,
) -> WindowPose:
    """Chain motion transfer, undistortion, and registration for one window.

    Registration starts from the previous window's pose advanced by the
    rotation rate over the inter-window gap (identity when there is no
    previous window). With that prediction the true correspondences stay
    within a few centimeters, so a much tighter correspondence cap than
    the generic register default is used: sweep points viewing terrain
    the static capture never covered must not participate at all.
    """
    omega = np.asarray(omega, dtype=float)
    window_motion = lidar_motion_from_camera(omega, 2.0 * half_width, extrinsic, motion_mode)
    undistorted = undistort_sweep(sweep, window_motion, t_center, half_width)
    if source_voxel > 0:
        undistorted = voxel_downsample(undistorted, source_voxel)
    if prev_pose is not None:
        gap = t_center - prev_pose.t_center
        omega_mid = 0.5 * (prev_pose.omega + omega)
        advance = lidar_motion_from_camera(omega_mid, gap, extrinsic, motion_mode)
        init = prev_pose.pose_to_static.compose(advance)
    else:
        init = RigidTransform.identity()
    result = gicp_register(
        undistorted, target, init=init, max_corr_dist=max_corr_dist, **gicp_kwargs
    )
    return WindowPose(
        t_center=t_center,
        omega=omega,
        window_motion=window_motion,
        pose_to_static=result.transform,
        fitness=result.fitness,
    )
