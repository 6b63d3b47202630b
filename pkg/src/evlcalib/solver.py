"""Extrinsic estimation from edge-point-to-event correspondences.

Projected 3D edge points are associated with the nearest event pixels of
each window's sharp (motion-compensated) event image; the signed distance
of the projection to the local event line (its mass center and minor
principal direction) is the residual. The camera-to-LiDAR transform is
found by robust Levenberg-Marquardt over a 6-dof local parameterization,
re-associating after every optimizer round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyIndex, NonPositiveDepth, TooFewCorrespondences
from .geometry import CameraIntrinsics, RigidTransform, so3_exp, so3_log
from .registration import WindowPose, skew_batch


class EventPixelIndex:
    """2D nearest-neighbor index over event pixels above a magnitude floor."""

    def __init__(self, image: np.ndarray, min_abs: float = 1.0):
        rows, cols = np.nonzero(np.abs(image) >= min_abs)
        if rows.size == 0:
            raise EmptyIndex(f"no event pixel reaches |value| >= {min_abs}")
        self.coords = np.stack([cols, rows], axis=1).astype(float)
        self.tree = cKDTree(self.coords)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def query(self, points: np.ndarray, m: int):
        """(distances (N, m), pixel coordinates (N, m, 2)) of m nearest pixels."""
        points = np.atleast_2d(points)
        m_eff = min(m, len(self))
        dist, idx = self.tree.query(points, k=m_eff)
        if m_eff == 1:
            dist, idx = dist[:, None], idx[:, None]
        return dist, self.coords[idx]


@dataclass
class EdgeCorrespondence:
    """One projected edge point with its local event-line association."""

    point_lidar: np.ndarray
    projection: np.ndarray
    center: np.ndarray
    normal: np.ndarray
    window_index: int
    weight: float = 1.0


@dataclass
class CalibrationResult:
    extrinsic: RigidTransform
    final_cost: float
    iterations: int
    per_window_residuals: list
    converged: bool
    cost_trace: list = field(default_factory=list)
    n_correspondences: int = 0


@dataclass
class SolverParams:
    m_neighbors: int = 20
    max_assoc_radius: float = 20.0
    degeneracy_ratio: float = 0.5
    huber_scale: float = 2.0
    # Early rounds run with a widened robust scale (annealed down to
    # huber_scale) so far-off initializations still feel the pull of
    # their true edges instead of locking onto whichever line is nearest;
    # the association gate tightens alongside, ending at the final radius
    # where only points on their own line participate.
    anneal_start_scale: float = 16.0
    anneal_factor: float = 0.5
    final_assoc_radius: float = 5.0
    max_outer: int = 50
    max_inner: int = 15
    min_correspondences: int = 100
    sample_per_window: int = 2000
    step_tol: float = 1e-8
    seed: int = 0


def _line_fit(neighbors: np.ndarray):
    """Mass centers and minor principal directions of (N, m, 2) pixel sets.

    Returns (centers (N,2), normals (N,2), ratio (N,)) where ratio is
    lambda_min / lambda_max of the scatter (NaN when degenerate).
    """
    centers = neighbors.mean(axis=1)
    d = neighbors - centers[:, None, :]
    sxx = np.einsum("nm,nm->n", d[:, :, 0], d[:, :, 0])
    syy = np.einsum("nm,nm->n", d[:, :, 1], d[:, :, 1])
    sxy = np.einsum("nm,nm->n", d[:, :, 0], d[:, :, 1])
    tr = sxx + syy
    det = np.sqrt(np.maximum((sxx - syy) ** 2 / 4.0 + sxy**2, 0.0))
    lmax = tr / 2.0 + det
    lmin = tr / 2.0 - det
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(lmax > 1e-12, np.maximum(lmin, 0.0) / lmax, np.nan)

    # Eigenvector of the smaller eigenvalue of [[sxx, sxy], [sxy, syy]].
    nx = np.where(np.abs(sxy) > 1e-12, lmin - syy, np.where(sxx <= syy, 1.0, 0.0))
    ny = np.where(np.abs(sxy) > 1e-12, sxy, np.where(sxx <= syy, 0.0, 1.0))
    norm = np.hypot(nx, ny)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.stack([nx / norm, ny / norm], axis=1)
    normals[norm < 1e-12] = np.nan
    return centers, normals, ratio


def _project_with_jacobian(points_cam: np.ndarray, intr: CameraIntrinsics, want_jacobian=True):
    """Pixels and d(pixel)/d(camera point) for points with z > 0."""
    z = points_cam[:, 2]
    x = points_cam[:, 0] / z
    y = points_cam[:, 1] / z
    k1, k2, p1, p2, k3 = intr.distortion
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    uv = np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=1)
    if not want_jacobian:
        return uv, None

    dr = k1 + 2.0 * k2 * r2 + 3.0 * k3 * r2 * r2
    dxd_dx = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x
    dxd_dy = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    dyd_dx = dxd_dy
    dyd_dy = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x

    n = points_cam.shape[0]
    J = np.empty((n, 2, 3))
    inv_z = 1.0 / z
    # Chain rule through (x, y) = (px/pz, py/pz).
    J[:, 0, 0] = intr.fx * dxd_dx * inv_z
    J[:, 0, 1] = intr.fx * dxd_dy * inv_z
    J[:, 0, 2] = -intr.fx * (dxd_dx * x + dxd_dy * y) * inv_z
    J[:, 1, 0] = intr.fy * dyd_dx * inv_z
    J[:, 1, 1] = intr.fy * dyd_dy * inv_z
    J[:, 1, 2] = -intr.fy * (dyd_dx * x + dyd_dy * y) * inv_z
    return uv, J


def build_correspondence(
    point_lidar: np.ndarray,
    pose: WindowPose,
    extrinsic: RigidTransform,
    intr: CameraIntrinsics,
    index: EventPixelIndex,
    m: int = 20,
    max_assoc_radius: float = 20.0,
    degeneracy_ratio: float = 0.5,
    window_index: int = 0,
) -> EdgeCorrespondence | None:
    """Associate one edge point with its local event line, or reject (None)."""
    if m < 3:
        raise ValueError("m must be at least 3")
    point_lidar = np.asarray(point_lidar, dtype=float)
    q = pose.pose_to_static.inverse().apply(point_lidar)
    p_cam = extrinsic.inverse().apply(q)
    if p_cam[2] <= 0.0:
        raise NonPositiveDepth("edge point projects behind the camera")
    uv, _ = _project_with_jacobian(p_cam[None, :], intr, want_jacobian=False)
    dist, neigh = index.query(uv, m)
    if dist[0, -1] > max_assoc_radius:
        return None
    centers, normals, ratio = _line_fit(neigh)
    if np.isnan(ratio[0]) or np.isnan(normals[0, 0]) or ratio[0] > degeneracy_ratio:
        return None
    return EdgeCorrespondence(
        point_lidar=point_lidar,
        projection=uv[0],
        center=centers[0],
        normal=normals[0],
        window_index=window_index,
    )


def point_to_edge_distance(corr: EdgeCorrespondence) -> float:
    """Signed distance of the projection to its event line."""
    return float(np.dot(corr.normal, corr.projection - corr.center))


@dataclass
class _Associations:
    """Batch correspondences: window-frame points and event-line geometry."""

    points_window: np.ndarray  # (N, 3) edge points in their window's frame
    centers: np.ndarray  # (N, 2)
    normals: np.ndarray  # (N, 2)
    window_ids: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.points_window.shape[0]


def _associate(
    points_window_all: list[np.ndarray],
    indices: list[EventPixelIndex],
    extrinsic: RigidTransform,
    intr: CameraIntrinsics,
    params: SolverParams,
    reject_radius: bool = True,
    radius: float | None = None,
) -> _Associations:
    radius = params.max_assoc_radius if radius is None else radius
    pts_out, ctr_out, nrm_out, win_out = [], [], [], []
    R_inv = extrinsic.inverse()
    for w, (pts_w, index) in enumerate(zip(points_window_all, indices)):
        if index is None or pts_w.shape[0] == 0:
            continue
        p_cam = R_inv.apply(pts_w)
        front = p_cam[:, 2] > 0.0
        if not np.any(front):
            continue
        uv, _ = _project_with_jacobian(p_cam[front], intr, want_jacobian=False)
        dist, neigh = index.query(uv, params.m_neighbors)
        centers, normals, ratio = _line_fit(neigh)
        ok = ~np.isnan(ratio) & ~np.isnan(normals[:, 0]) & (ratio <= params.degeneracy_ratio)
        if reject_radius:
            ok &= dist[:, -1] <= radius
        if not np.any(ok):
            continue
        src = pts_w[front][ok]
        pts_out.append(src)
        ctr_out.append(centers[ok])
        nrm_out.append(normals[ok])
        win_out.append(np.full(src.shape[0], w, dtype=np.intp))
    if not pts_out:
        return _Associations(np.empty((0, 3)), np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=np.intp))
    return _Associations(
        np.concatenate(pts_out),
        np.concatenate(ctr_out),
        np.concatenate(nrm_out),
        np.concatenate(win_out),
    )


def _residuals(assoc: _Associations, extrinsic: RigidTransform, intr: CameraIntrinsics, want_jacobian: bool):
    """Signed point-to-edge residuals (and d residual / d local 6-vector).

    The local parameterization right-multiplies the extrinsic:
    T(delta) = T * (exp(delta_theta), delta_t).
    """
    p_cam = extrinsic.inverse().apply(assoc.points_window)
    valid = p_cam[:, 2] > 1e-9
    uv, J_proj = _project_with_jacobian(p_cam[valid], intr, want_jacobian)
    d = np.einsum("ni,ni->n", assoc.normals[valid], uv - assoc.centers[valid])
    if not want_jacobian:
        return d, None, valid
    # d p_cam / d delta = [ [p_cam]x , -I ].
    Jp = np.concatenate([skew_batch(p_cam[valid]), -np.broadcast_to(np.eye(3), (valid.sum(), 3, 3))], axis=2)
    J_uv = np.einsum("nij,njk->nik", J_proj, Jp)
    J = np.einsum("ni,nik->nk", assoc.normals[valid], J_uv)
    return d, J, valid


def _huber_cost(d: np.ndarray, scale: float) -> float:
    a = np.abs(d)
    quad = a <= scale
    return float(np.sum(0.5 * d[quad] ** 2) + np.sum(scale * (a[~quad] - 0.5 * scale)))


def _huber_weights(d: np.ndarray, scale: float) -> np.ndarray:
    a = np.abs(d)
    w = np.ones_like(d)
    far = a > scale
    w[far] = scale / a[far]
    return w


def solve_extrinsics(
    edge_points: np.ndarray,
    window_poses: list[WindowPose],
    event_images: list[np.ndarray],
    intr: CameraIntrinsics,
    init: RigidTransform,
    params: SolverParams | None = None,
    event_min_abs: float = 1.5,
) -> CalibrationResult:
    """Minimize the robust sum of point-to-edge distances over the extrinsic.

    Alternates nearest-event association with Levenberg-Marquardt steps;
    the per-round cost sequence is kept non-increasing (a worsening round
    reverts to the best pose and stops).
    """
    params = params or SolverParams()
    if not window_poses:
        raise TooFewCorrespondences("no valid windows")
    edge_points = np.asarray(edge_points, dtype=float)

    rng = np.random.default_rng(params.seed)
    points_window_all = []
    indices = []
    for pose, image in zip(window_poses, event_images):
        pts = edge_points
        if pts.shape[0] > params.sample_per_window:
            sel = rng.choice(pts.shape[0], params.sample_per_window, replace=False)
            pts = pts[sel]
        points_window_all.append(pose.pose_to_static.inverse().apply(pts))
        try:
            indices.append(EventPixelIndex(image, event_min_abs))
        except EmptyIndex:
            indices.append(None)
    if all(ix is None for ix in indices):
        raise TooFewCorrespondences("every window's event image is empty")

    # Two starts: the raw initialization and a coarse chamfer alignment.
    # The chamfer's wide basin rescues far-off starts but its optimum is
    # cruder than the point-to-line one, so both tracks are refined and
    # the better final cost wins.
    starts = [init]
    chamfer = _chamfer_align(points_window_all, event_images, intr, init, event_min_abs)
    if np.linalg.norm(_relative_step(init, chamfer)) > 1e-6:
        starts.append(chamfer)

    best = None
    for start in starts:
        track = _refine(points_window_all, indices, start, intr, params)
        if best is None or track[1] < best[1]:
            best = track
    best_T, prev_cost, cost_trace, converged, outer = best

    final_assoc = _associate(
        points_window_all, indices, best_T, intr, params, radius=params.final_assoc_radius
    )
    d, _, valid = _residuals(final_assoc, best_T, intr, want_jacobian=False)
    win_ids = final_assoc.window_ids[valid]
    per_window = []
    for w in range(len(window_poses)):
        sel = win_ids == w
        per_window.append(float(np.mean(np.abs(d[sel]))) if np.any(sel) else float("nan"))
    final_cost = _huber_cost(d, params.huber_scale)

    return CalibrationResult(
        extrinsic=best_T,
        final_cost=final_cost,
        iterations=outer + 1,
        per_window_residuals=per_window,
        converged=converged,
        cost_trace=cost_trace,
        n_correspondences=len(final_assoc),
    )


def _refine(points_window_all, indices, init, intr, params):
    """Annealed alternating association/optimization from one start."""
    T = init
    best_T = T
    cost_trace: list[float] = []
    prev_cost = np.inf
    converged = False
    outer = 0
    scale = max(params.anneal_start_scale, params.huber_scale)

    for outer in range(params.max_outer):
        # As the robust scale tightens, so does the association gate: the
        # final rounds only listen to points sitting near their own line.
        radius = float(np.clip(2.5 * scale, params.final_assoc_radius, params.max_assoc_radius))
        assoc = _associate(points_window_all, indices, T, intr, params, radius=radius)
        if outer == 0 and len(assoc) < params.min_correspondences:
            raise TooFewCorrespondences(
                f"{len(assoc)} correspondences at the initial pose "
                f"(minimum {params.min_correspondences})"
            )
        if len(assoc) < 6:
            break

        T_round, _ = _lm_rounds(assoc, T, intr, params, scale)
        annealing = scale > params.huber_scale
        scale = max(scale * params.anneal_factor, params.huber_scale)
        # Track progress on the final-configuration objective so the
        # recorded trace is comparable across rounds.
        final_assoc = _associate(
            points_window_all, indices, T_round, intr, params,
            radius=params.final_assoc_radius,
        )
        d_round, _, _ = _residuals(final_assoc, T_round, intr, want_jacobian=False)
        cost_round = _huber_cost(d_round, params.huber_scale) if d_round.size else np.inf
        if not annealing and cost_round >= prev_cost - 1e-12:
            # Re-association stopped improving: keep the best pose.
            if cost_round < prev_cost:
                best_T = T_round
                cost_trace.append(cost_round)
            converged = True
            break
        step_norm = np.linalg.norm(_relative_step(T, T_round))
        if cost_round < prev_cost:
            cost_trace.append(cost_round)
            prev_cost = cost_round
            best_T = T_round
        T = T_round
        if not annealing and step_norm < params.step_tol:
            converged = True
            break
    return best_T, prev_cost, cost_trace, converged, outer


def _relative_step(T_old: RigidTransform, T_new: RigidTransform) -> np.ndarray:
    delta = T_old.inverse().compose(T_new)
    return np.concatenate([so3_log(delta.rotation), delta.translation])


def _chamfer_align(
    points_window_all: list[np.ndarray],
    event_images: list[np.ndarray],
    intr: CameraIntrinsics,
    init: RigidTransform,
    event_min_abs: float,
    iterations: int = 30,
) -> RigidTransform:
    """Coarse pre-alignment on the distance transform of the event pixels.

    The chamfer cost (distance of each projection to the nearest event
    pixel) has a much wider basin than point-to-line residuals, so the
    subsequent alternating refinement starts close enough to associate
    the correct edges.
    """
    dts, gxs, gys = [], [], []
    for image in event_images:
        mask = np.abs(image) >= event_min_abs
        if not np.any(mask):
            dts.append(None), gxs.append(None), gys.append(None)
            continue
        dt = ndimage.distance_transform_edt(~mask)
        gy, gx = np.gradient(dt)
        dts.append(dt), gxs.append(gx), gys.append(gy)

    h_img, w_img = intr.height, intr.width

    def residuals(T, want_jacobian):
        rs, Js = [], []
        inv = T.inverse()
        for pts_w, dt, gx, gy in zip(points_window_all, dts, gxs, gys):
            if dt is None or pts_w.shape[0] == 0:
                continue
            p_cam = inv.apply(pts_w)
            front = p_cam[:, 2] > 1e-9
            uv, J_proj = _project_with_jacobian(p_cam[front], intr, want_jacobian)
            inside = (
                (uv[:, 0] >= 1) & (uv[:, 0] <= w_img - 2)
                & (uv[:, 1] >= 1) & (uv[:, 1] <= h_img - 2)
            )
            if not np.any(inside):
                continue
            u, v = uv[inside, 0], uv[inside, 1]
            i0 = u.astype(np.intp)
            j0 = v.astype(np.intp)
            r = _bilinear(dt, u, v, i0, j0)
            rs.append(r)
            if want_jacobian:
                g = np.stack([_bilinear(gx, u, v, i0, j0), _bilinear(gy, u, v, i0, j0)], axis=1)
                Jp = np.concatenate(
                    [skew_batch(p_cam[front][inside]), -np.broadcast_to(np.eye(3), (inside.sum(), 3, 3))],
                    axis=2,
                )
                J_uv = np.einsum("nij,njk->nik", J_proj[inside], Jp)
                Js.append(np.einsum("ni,nik->nk", g, J_uv))
        if not rs:
            return np.empty(0), np.empty((0, 6))
        return np.concatenate(rs), (np.concatenate(Js) if want_jacobian else None)

    T = init
    lam = 1e-3
    r, J = residuals(T, True)
    if r.size < 6:
        return init
    cost = float(np.mean(r**2))
    for _ in range(iterations):
        H = J.T @ J / r.size
        g = J.T @ r / r.size
        try:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            break
        T_new = T.compose(RigidTransform(so3_exp(step[:3]), step[3:]))
        r_new, J_new = residuals(T_new, True)
        if r_new.size < 6:
            break
        cost_new = float(np.mean(r_new**2))
        if cost_new < cost:
            T, r, J, cost = T_new, r_new, J_new, cost_new
            lam = max(lam * 0.3, 1e-9)
            if np.linalg.norm(step) < 1e-10:
                break
        else:
            lam *= 5.0
            if lam > 1e7:
                break
    return T


def _bilinear(field: np.ndarray, u: np.ndarray, v: np.ndarray, i0: np.ndarray, j0: np.ndarray) -> np.ndarray:
    fu = u - i0
    fv = v - j0
    return (
        field[j0, i0] * (1 - fu) * (1 - fv)
        + field[j0, i0 + 1] * fu * (1 - fv)
        + field[j0 + 1, i0] * (1 - fu) * fv
        + field[j0 + 1, i0 + 1] * fu * fv
    )


def _lm_rounds(assoc: _Associations, T: RigidTransform, intr: CameraIntrinsics,
               params: SolverParams, scale: float | None = None):
    """Levenberg-Marquardt on fixed associations; returns (pose, cost)."""
    scale = params.huber_scale if scale is None else scale
    lam = 1e-4
    d, J, _ = _residuals(assoc, T, intr, want_jacobian=True)
    cost = _huber_cost(d, scale)
    for _ in range(params.max_inner):
        w = _huber_weights(d, scale)
        Jw = J * w[:, None]
        H = J.T @ Jw
        g = Jw.T @ d
        try:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            break
        T_new = T.compose(RigidTransform(so3_exp(step[:3]), step[3:]))
        d_new, J_new, _ = _residuals(assoc, T_new, intr, want_jacobian=True)
        cost_new = _huber_cost(d_new, scale)
        if cost_new < cost:
            T, d, J, cost = T_new, d_new, J_new, cost_new
            lam = max(lam * 0.3, 1e-9)
            if np.linalg.norm(step) < params.step_tol:
                break
        else:
            lam *= 4.0
            if lam > 1e6:
                break
    return T, cost


def evaluate_reprojection(
    edge_points: np.ndarray,
    window_poses: list[WindowPose],
    event_images: list[np.ndarray],
    intr: CameraIntrinsics,
    extrinsic: RigidTransform,
    m: int = 20,
    event_min_abs: float = 1.5,
    degeneracy_ratio: float = 1.0 - 1e-9,
):
    """Reprojection errors |d| of every edge point against every window.

    Association always uses the nearest m event pixels (no radius cut).
    Returns (ppre, per-point errors, top50_ppre): the mean error, the raw
    error list, and the mean of the smallest half.
    """
    params = SolverParams(
        m_neighbors=m,
        degeneracy_ratio=degeneracy_ratio,
        sample_per_window=np.iinfo(np.int64).max,
    )
    edge_points = np.asarray(edge_points, dtype=float)
    points_window_all = []
    indices = []
    for pose, image in zip(window_poses, event_images):
        points_window_all.append(pose.pose_to_static.inverse().apply(edge_points))
        try:
            indices.append(EventPixelIndex(image, event_min_abs))
        except EmptyIndex:
            indices.append(None)
    assoc = _associate(points_window_all, indices, extrinsic, intr, params, reject_radius=False)
    if len(assoc) == 0:
        return float("nan"), np.empty(0), float("nan")
    d, _, _ = _residuals(assoc, extrinsic, intr, want_jacobian=False)
    re = np.abs(d)
    half = max(1, re.size // 2)
    top50 = float(np.mean(np.partition(re, half - 1)[:half]))
    return float(re.mean()), re, top50
