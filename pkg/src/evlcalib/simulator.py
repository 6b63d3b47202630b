"""Synthetic scenes, LiDAR scans, and event streams with known ground truth.

Scenes are textured polygonal planes. The rig rotates about the event
camera's center; the LiDAR shares the boresight. Everything is seeded and
bit-reproducible, so the generators serve as the oracle for the whole
pipeline: LiDAR returns carry reflectivity (optionally with the
divergence-angle occlusion artifact), and events follow the standard
per-pixel log-intensity threshold-crossing model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .contrast_max import EventArray
from .geometry import (
    CameraIntrinsics,
    PointCloudFrame,
    RigidTransform,
    euler_zyx_to_rotation,
    pixels_to_rays,
    so3_exp,
    so3_log,
)

NOMINAL_EULER_ZYX = (0.0, np.pi / 2.0, np.pi / 2.0)


def nominal_extrinsic() -> RigidTransform:
    """The rig's nominal camera-to-LiDAR transform."""
    return RigidTransform(euler_zyx_to_rotation(*NOMINAL_EULER_ZYX), np.zeros(3))


def default_camera() -> CameraIntrinsics:
    """A 346x260 event camera with a ~70 degree lens, no distortion."""
    return CameraIntrinsics(fx=250.0, fy=250.0, cx=172.5, cy=129.5, width=346, height=260)


def so3_exp_batch(rotvecs: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues formula over (N, 3) rotation vectors."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    angles = np.linalg.norm(rotvecs, axis=1)
    out = np.broadcast_to(np.eye(3), (rotvecs.shape[0], 3, 3)).copy()
    big = angles >= 1e-12
    if np.any(big):
        k = rotvecs[big] / angles[big, None]
        a = angles[big]
        K = np.zeros((k.shape[0], 3, 3))
        K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
        K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
        K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
        s = np.sin(a)[:, None, None]
        c = (1.0 - np.cos(a))[:, None, None]
        out[big] = np.eye(3) + s * K + c * np.einsum("nij,njk->nik", K, K)
    return out


@dataclass
class Texture:
    """Piecewise-constant reflectivity over a plane's (u, v) coordinates.

    ``values`` is a cell grid indexed modulo its shape; ``stripes`` vary
    along u only; ``uniform`` ignores position.
    """

    kind: str
    cell_size: float
    values: np.ndarray

    def reflectivity_at(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.kind == "uniform":
            return np.full_like(np.asarray(u, dtype=float), float(vals.ravel()[0]))
        iu = np.floor(np.asarray(u) / self.cell_size).astype(np.int64) % vals.shape[1]
        if self.kind == "stripes":
            return vals[0, iu]
        iv = np.floor(np.asarray(v) / self.cell_size).astype(np.int64) % vals.shape[0]
        return vals[iv, iu]


@dataclass
class ScenePlane:
    """A textured rectangle: origin, unit normal, in-plane axes, extents."""

    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    u_extent: tuple
    v_extent: tuple
    texture: Texture

    def boundary_samples(self, spacing: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        """Points along the rectangle border and their outward in-plane dirs."""
        pts, outward = [], []
        (u0, u1), (v0, v1) = self.u_extent, self.v_extent
        for fixed, axis_fixed, lo, hi, axis_run, sign in (
            (u0, self.u_axis, v0, v1, self.v_axis, -1.0),
            (u1, self.u_axis, v0, v1, self.v_axis, 1.0),
            (v0, self.v_axis, u0, u1, self.u_axis, -1.0),
            (v1, self.v_axis, u0, u1, self.u_axis, 1.0),
        ):
            n = max(2, int(np.ceil((hi - lo) / spacing)))
            run = np.linspace(lo, hi, n)
            pts.append(self.origin + fixed * axis_fixed + run[:, None] * axis_run)
            outward.append(np.tile(sign * axis_fixed, (n, 1)))
        return np.concatenate(pts), np.concatenate(outward)


@dataclass
class SyntheticScene:
    """A set of textured planes plus the seed that generated them."""

    planes: list
    rng_seed: int

    def raycast(self, origins: np.ndarray, dirs: np.ndarray):
        """First intersections of rays with the scene.

        ``origins`` may be a single point or one per ray. Returns
        (distance, reflectivity, plane index, hit mask); misses hold inf
        distance and plane index -1.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n = dirs.shape[0]
        origins = np.asarray(origins, dtype=float)
        if origins.ndim == 1:
            origins = np.broadcast_to(origins, (n, 3))
        best_t = np.full(n, np.inf)
        best_plane = np.full(n, -1, dtype=np.intp)
        best_refl = np.zeros(n)
        for i, plane in enumerate(self.planes):
            denom = dirs @ plane.normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((plane.origin - origins) @ plane.normal) / denom
            ok = (np.abs(denom) > 1e-12) & (t > 1e-6) & (t < best_t)
            if not np.any(ok):
                continue
            hit = origins[ok] + t[ok, None] * dirs[ok]
            rel = hit - plane.origin
            u = rel @ plane.u_axis
            v = rel @ plane.v_axis
            inside = (
                (u >= plane.u_extent[0]) & (u <= plane.u_extent[1])
                & (v >= plane.v_extent[0]) & (v <= plane.v_extent[1])
            )
            sel = np.nonzero(ok)[0][inside]
            if sel.size == 0:
                continue
            best_t[sel] = t[sel]
            best_plane[sel] = i
            best_refl[sel] = plane.texture.reflectivity_at(u[inside], v[inside])
        return best_t, best_refl, best_plane, np.isfinite(best_t)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.planes:
            for arr in (p.origin, p.normal, p.u_axis, p.v_axis,
                        np.asarray(p.u_extent), np.asarray(p.v_extent),
                        np.atleast_1d(p.texture.cell_size), np.asarray(p.texture.values)):
                h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()


def _orthonormal_basis(forward: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(up, f)) > 0.95:
        up = np.array([0.0, 1.0, 0.0])
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    return f, r, d


def _checker_values(rng: np.random.Generator, shape: tuple, lo=0.25, hi=0.70, jitter=0.08) -> np.ndarray:
    """Alternating two-level cells with per-cell jitter (contrast guaranteed)."""
    iv, iu = np.indices(shape)
    base = np.where((iv + iu) % 2 == 0, lo, hi)
    vals = base + rng.uniform(-jitter, jitter, size=shape)
    return np.clip(vals, 0.05, 0.95)


def generate_scene(
    seed: int,
    n_planes: int = 4,
    texture_cells: float = 0.45,
    boresight: np.ndarray | None = None,
) -> SyntheticScene:
    """Deterministic scene: textured back wall, angled panels, an occluder.

    Planes sit 2-8 m from the origin along ``boresight`` (default: the
    nominal rig's camera axis) with non-parallel orientations, so both
    geometric and reflectivity edges exist.
    """
    if n_planes < 2:
        raise ValueError("need at least two planes")
    rng = np.random.default_rng(seed)
    if boresight is None:
        boresight = nominal_extrinsic().rotation @ np.array([0.0, 0.0, 1.0])
    f, r, d = _orthonormal_basis(boresight)

    planes: list[ScenePlane] = []

    # Large textured back wall, slightly tilted.
    wall_dist = 3.5 + rng.uniform(-0.3, 0.3)
    tilt = so3_exp(rng.uniform(-0.06, 0.06, 3))
    wall_n = tilt @ (-f)
    wall_u = tilt @ r
    wall_v = tilt @ d
    planes.append(
        ScenePlane(
            origin=f * wall_dist,
            normal=wall_n,
            u_axis=wall_u,
            v_axis=wall_v,
            u_extent=(-6.0, 6.0),
            v_extent=(-5.0, 5.0),
            texture=Texture("checker", texture_cells, _checker_values(rng, (24, 28))),
        )
    )

    # Textured floor: its normal spans the remaining axis, so registration
    # of sparse sweeps is observable in all six degrees of freedom.
    if n_planes >= 2:
        f_tilt = so3_exp(rng.uniform(-0.05, 0.05, 3))
        planes.append(
            ScenePlane(
                origin=f * 4.0 + d * (1.7 + rng.uniform(-0.1, 0.1)),
                normal=f_tilt @ (-d),
                u_axis=f_tilt @ r,
                v_axis=f_tilt @ f,
                u_extent=(-6.0, 6.0),
                v_extent=(-3.4, 3.4),
                texture=Texture("checker", texture_cells * 1.2, _checker_values(rng, (12, 24))),
            )
        )

    # Angled side wall: its normal pins the remaining translation axis
    # with a long lever arm, at an angle the scanner still samples well.
    if n_planes >= 3:
        yaw = so3_exp(d * rng.uniform(1.0, 1.12))
        side_n = yaw @ (-f)
        side_u = yaw @ r
        side_v = yaw @ d
        stripe_vals = _checker_values(rng, (1, 16), lo=0.2, hi=0.75)
        planes.append(
            ScenePlane(
                origin=f * 2.9 + r * (2.1 + rng.uniform(-0.15, 0.15)),
                normal=side_n,
                u_axis=side_u,
                v_axis=side_v,
                u_extent=(-2.6, 2.6),
                v_extent=(-3.2, 3.2),
                texture=Texture("stripes", texture_cells * 0.8, stripe_vals),
            )
        )

    # Uniform occluder panel in front of the wall (silhouette = depth edge).
    if n_planes >= 4:
        occ_tilt = so3_exp(rng.uniform(-0.08, 0.08, 3))
        planes.append(
            ScenePlane(
                origin=f * (2.2 + rng.uniform(-0.1, 0.1)) + r * rng.uniform(-0.5, 0.0) + d * rng.uniform(-0.3, 0.3),
                normal=occ_tilt @ (-f),
                u_axis=occ_tilt @ r,
                v_axis=occ_tilt @ d,
                u_extent=(-0.55, 0.55),
                v_extent=(-0.45, 0.45),
                texture=Texture("uniform", 1.0, np.array([[0.55]])),
            )
        )

    # Opposite-side angled wall, then extra checker panels for richer scenes.
    if n_planes >= 5:
        yaw = so3_exp(d * rng.uniform(-1.12, -1.0))
        left_n = yaw @ (-f)
        planes.append(
            ScenePlane(
                origin=f * 2.9 + r * (-2.1 + rng.uniform(-0.15, 0.15)),
                normal=left_n,
                u_axis=yaw @ r,
                v_axis=yaw @ d,
                u_extent=(-2.6, 2.6),
                v_extent=(-3.2, 3.2),
                texture=Texture("checker", texture_cells * 0.9, _checker_values(rng, (14, 12))),
            )
        )

    for k in range(n_planes - 5):
        rot = so3_exp(np.concatenate([rng.uniform(-0.25, 0.25, 2), rng.uniform(-0.5, 0.5, 1)]))
        dist = rng.uniform(2.4, 3.0)
        offset = r * rng.uniform(1.0, 1.6) * (1 if k % 2 else -1) + d * rng.uniform(-1.2, 1.2)
        planes.append(
            ScenePlane(
                origin=f * dist + offset,
                normal=rot @ (-f),
                u_axis=rot @ r,
                v_axis=rot @ d,
                u_extent=(-0.8, 0.8),
                v_extent=(-0.8, 0.8),
                texture=Texture("checker", texture_cells * 0.9, _checker_values(rng, (8, 8))),
            )
        )

    return SyntheticScene(planes=planes, rng_seed=seed)


@dataclass
class Trajectory:
    """Camera-local rotation samples relative to the start pose."""

    times: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        self._deltas = None

    def _segment_deltas(self) -> np.ndarray:
        if self._deltas is None:
            rel = np.einsum("nji,njk->nik", self.rotations[:-1], self.rotations[1:])
            self._deltas = np.stack([so3_log(R) for R in rel])
        return self._deltas

    def rotation_at(self, t) -> np.ndarray:
        """Interpolated rotation(s) at time(s) t; clamped at the ends."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t_arr, side="right") - 1, 0, len(self.times) - 2)
        t0 = self.times[idx]
        t1 = self.times[idx + 1]
        frac = np.clip((t_arr - t0) / (t1 - t0), 0.0, 1.0)
        steps = so3_exp_batch(frac[:, None] * self._segment_deltas()[idx])
        out = np.einsum("nij,njk->nik", self.rotations[idx], steps)
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out


def rotational_trajectory(omega_fn, t_start: float, t_end: float, dt: float) -> Trajectory:
    """Integrate a camera-frame angular velocity into rotation samples."""
    times = [t_start]
    rotations = [np.eye(3)]
    t = t_start
    while t < t_end - 1e-12:
        step = min(dt, t_end - t)
        w = np.asarray(omega_fn(t + step / 2.0), dtype=float)
        rotations.append(rotations[-1] @ so3_exp(w * step))
        t += step
        times.append(t)
    return Trajectory(np.asarray(times), np.asarray(rotations))


@dataclass
class GroundTruth:
    """Everything a test needs to check the pipeline against."""

    extrinsic_true: RigidTransform
    trajectory: Trajectory
    window_centers: np.ndarray
    omega_per_window: np.ndarray

    def camera_pose(self, t: float) -> RigidTransform:
        R_traj = self.trajectory.rotation_at(float(t))
        return RigidTransform(
            self.extrinsic_true.rotation @ R_traj, self.extrinsic_true.translation
        )

    def lidar_pose(self, t: float) -> RigidTransform:
        """World (= static LiDAR frame) pose of the LiDAR at time t."""
        return self.camera_pose(t).compose(self.extrinsic_true.inverse())


@dataclass
class ScanPattern:
    """Angular scan trajectory inside the sensor's field of view.

    The rosette spins fast while its radius sweeps slowly (filling the
    image over a long static capture) with a fast small wobble so that
    even a tens-of-milliseconds slice covers a two-dimensional band
    rather than a thin ring.
    """

    kind: str = "rosette"
    fov_h_deg: float = 70.4
    fov_v_deg: float = 77.2
    radial_hz: float = 1.283
    spin_hz: float = 97.31
    wobble_amp: float = 0.08
    wobble_hz: float = 83.7
    raster_rows: int = 200

    def angles(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-timestamp (alpha, beta) director angles in radians."""
        half_h = np.radians(self.fov_h_deg) / 2.0
        half_v = np.radians(self.fov_v_deg) / 2.0
        if self.kind == "rosette":
            tri = 2.0 * np.abs(self.radial_hz * t - np.floor(self.radial_hz * t + 0.5))
            rho = np.sqrt(tri)
            if self.wobble_amp > 0:
                rho = rho + self.wobble_amp * np.sin(2.0 * np.pi * self.wobble_hz * t)
                rho = np.clip(rho, 0.0, 1.0)
            phi = 2.0 * np.pi * self.spin_hz * t
            return half_h * rho * np.cos(phi), half_v * rho * np.sin(phi)
        if self.kind == "raster":
            row_period = 1.0 / (self.radial_hz * self.raster_rows)
            row = np.floor(t / row_period).astype(np.int64) % self.raster_rows
            frac = (t / row_period) % 1.0
            alpha = half_h * (2.0 * np.where(row % 2 == 0, frac, 1.0 - frac) - 1.0)
            beta = half_v * (2.0 * row / (self.raster_rows - 1) - 1.0)
            return alpha, beta
        raise ValueError(f"unknown scan pattern: {self.kind!r}")


@dataclass
class LidarNoise:
    sigma_range: float = 0.02
    sigma_reflectivity: float = 0.01

    @classmethod
    def zero(cls) -> "LidarNoise":
        return cls(0.0, 0.0)


DIVERGENCE_HALF_ANGLE_DEG = 0.15


def _discontinuity_directions(scene: SyntheticScene, origin: np.ndarray) -> np.ndarray:
    """Unit directions toward visible depth-discontinuity boundary points."""
    half = np.radians(DIVERGENCE_HALF_ANGLE_DEG)
    dirs_out = []
    for plane in scene.planes:
        pts, outward = plane.boundary_samples()
        rel = pts - origin
        dist = np.linalg.norm(rel, axis=1)
        dirs = rel / dist[:, None]
        # The boundary sample must itself be visible from the origin.
        t_hit, _, _, hit = scene.raycast(origin, dirs)
        visible = hit & (np.abs(t_hit - dist) < 0.02)
        if not np.any(visible):
            continue
        dirs_v = dirs[visible]
        dist_v = dist[visible]
        out_v = outward[visible]
        # Probe just beyond the border: a discontinuity needs the far side
        # to be much deeper (or empty).
        perp = out_v - (np.einsum("ni,ni->n", out_v, dirs_v))[:, None] * dirs_v
        norms = np.linalg.norm(perp, axis=1)
        good = norms > 1e-9
        probe = dirs_v[good] + np.tan(6.0 * half) * perp[good] / norms[good, None]
        probe /= np.linalg.norm(probe, axis=1)[:, None]
        t_probe, _, _, hit_probe = scene.raycast(origin, probe)
        disc = ~hit_probe | (t_probe > dist_v[good] + 0.3)
        dirs_out.append(dirs_v[good][disc])
    if not dirs_out:
        return np.empty((0, 3))
    return np.concatenate(dirs_out)


def _apply_divergence_artifact(
    reflectivity: np.ndarray, dirs_world: np.ndarray, disc_dirs: np.ndarray
) -> np.ndarray:
    """Scale reflectivity by the beam-energy fraction on the hit surface.

    A Gaussian beam (sigma = half the divergence angle) straddling a depth
    discontinuity loses the energy falling on the other surface; returns
    dimmed toward 50% right at the boundary.
    """
    if disc_dirs.shape[0] == 0:
        return reflectivity
    from scipy.special import erf

    half = np.radians(DIVERGENCE_HALF_ANGLE_DEG)
    sigma = half / 2.0
    cutoff = 3.0 * sigma
    tree = cKDTree(disc_dirs)
    chord, _ = tree.query(dirs_world, distance_upper_bound=2.0 * np.sin(cutoff / 2.0))
    near = np.isfinite(chord)
    if not np.any(near):
        return reflectivity
    angle = 2.0 * np.arcsin(np.clip(chord[near] / 2.0, 0.0, 1.0))
    fraction = 0.5 + 0.5 * erf(angle / (sigma * np.sqrt(2.0)))
    out = reflectivity.copy()
    out[near] *= fraction
    return out


def _scan(
    scene: SyntheticScene,
    origins: np.ndarray,
    rotations: np.ndarray,
    times: np.ndarray,
    pattern: ScanPattern,
    scan_rotation: np.ndarray,
    artifact: bool,
    noise: LidarNoise,
    rng: np.random.Generator,
) -> PointCloudFrame:
    """Cast pattern rays from per-timestamp sensor poses; report sensor-frame points."""
    alpha, beta = pattern.angles(times)
    dirs_sensor = np.stack([np.tan(alpha), np.tan(beta), np.ones_like(alpha)], axis=1)
    dirs_sensor /= np.linalg.norm(dirs_sensor, axis=1)[:, None]
    dirs_sensor = dirs_sensor @ scan_rotation.T

    if rotations.ndim == 2:
        dirs_world = dirs_sensor @ rotations.T
        origins_w = origins
    else:
        dirs_world = np.einsum("nij,nj->ni", rotations, dirs_sensor)
        origins_w = origins

    t_hit, refl, _, hit = scene.raycast(origins_w, dirs_world)
    if artifact and np.any(hit):
        origin0 = origins_w if origins_w.ndim == 1 else origins_w.mean(axis=0)
        disc = _discontinuity_directions(scene, origin0)
        refl = np.where(hit, _apply_divergence_artifact(refl, dirs_world, disc), refl)

    rng_range = rng.normal(0.0, noise.sigma_range, t_hit.shape) if noise.sigma_range > 0 else 0.0
    rng_refl = rng.normal(0.0, noise.sigma_reflectivity, t_hit.shape) if noise.sigma_reflectivity > 0 else 0.0
    ranges = t_hit + rng_range
    positions = dirs_sensor[hit] * ranges[hit, None]
    return PointCloudFrame(
        positions,
        np.clip(refl[hit] + (rng_refl[hit] if noise.sigma_reflectivity > 0 else 0.0), 0.0, 1.0),
        times[hit],
    )


def simulate_lidar(
    scene: SyntheticScene,
    pose: RigidTransform,
    pattern: ScanPattern | None = None,
    duration: float = 2.0,
    rate: float = 120_000.0,
    artifact: bool = False,
    noise: LidarNoise | None = None,
    seed: int = 0,
    t_start: float = 0.0,
    scan_rotation: np.ndarray | None = None,
) -> PointCloudFrame:
    """Scan from a fixed pose; points are in the sensor frame with timestamps."""
    pattern = pattern or ScanPattern()
    noise = noise if noise is not None else LidarNoise()
    rng = np.random.default_rng(seed)
    n = max(1, int(round(duration * rate)))
    times = t_start + (np.arange(n) + 0.5) / rate
    if scan_rotation is None:
        scan_rotation = nominal_extrinsic().rotation
    return _scan(
        scene, pose.translation, pose.rotation, times, pattern,
        scan_rotation, artifact, noise, rng,
    )


def simulate_events(
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    extrinsic_true: RigidTransform,
    trajectory: Trajectory,
    contrast_thresh: float = 0.2,
    sigma_t: float = 1e-4,
    noise_rate: float = 0.0,
    noise_span: tuple | None = None,
    seed: int = 0,
    ambient: float = 0.03,
) -> EventArray:
    """Threshold-crossing event stream for a camera rotating about its center.

    Renders scene reflectivity along the trajectory samples and emits an
    event whenever a pixel's log intensity moves a full threshold away
    from its last event level; crossing times are interpolated within the
    frame step and jittered by ``sigma_t``.
    """
    if len(trajectory.times) < 2:
        raise ValueError("trajectory must span at least two samples")
    rng = np.random.default_rng(seed)
    width, height = intr.width, intr.height
    uu, vv = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    rays = pixels_to_rays(np.stack([uu.ravel(), vv.ravel()], axis=1), intr)
    rays /= np.linalg.norm(rays, axis=1)[:, None]
    center = extrinsic_true.translation
    R_base = extrinsic_true.rotation

    xs, ys, ts, ps = [], [], [], []
    log_ref = log_prev = None
    t_prev = None
    pix_x = (np.arange(width * height) % width).astype(np.float64)
    pix_y = (np.arange(width * height) // width).astype(np.float64)

    for t_now, R_traj in zip(trajectory.times, trajectory.rotations):
        dirs = rays @ (R_base @ R_traj).T
        _, refl, _, hit = scene.raycast(center, dirs)
        intensity = np.where(hit, refl, ambient)
        log_now = np.log(intensity + 1e-6)
        if log_ref is None:
            log_ref = log_now.copy()
            log_prev, t_prev = log_now, float(t_now)
            continue

        delta = log_now - log_ref
        n_cross = np.floor(np.abs(delta) / contrast_thresh).astype(np.int64)
        fired = np.nonzero(n_cross > 0)[0]
        if fired.size:
            counts = n_cross[fired]
            sign = np.sign(delta[fired])
            rep = np.repeat(fired, counts)
            rep_sign = np.repeat(sign, counts)
            # The scene's intensity changes are steps: the whole burst
            # happened at one unknown instant inside the frame interval.
            # Sample that instant (deterministic comb timing would bias
            # downstream velocity estimates).
            frac = np.repeat(rng.uniform(0.0, 1.0, fired.size), counts)
            t_events = t_prev + frac * (float(t_now) - t_prev)
            if sigma_t > 0:
                t_events = t_events + rng.normal(0.0, sigma_t, t_events.shape)
            xs.append(pix_x[rep])
            ys.append(pix_y[rep])
            ts.append(t_events)
            ps.append(rep_sign.astype(np.int8))
            log_ref[fired] += counts * sign * contrast_thresh

        log_prev, t_prev = log_now, float(t_now)

    if noise_rate > 0:
        span = noise_span or (float(trajectory.times[0]), float(trajectory.times[-1]))
        lam = noise_rate * width * height * (span[1] - span[0])
        n_noise = rng.poisson(lam)
        xs.append(rng.integers(0, width, n_noise).astype(np.float64))
        ys.append(rng.integers(0, height, n_noise).astype(np.float64))
        ts.append(rng.uniform(span[0], span[1], n_noise))
        ps.append(rng.choice(np.array([-1, 1], dtype=np.int8), n_noise))

    if not xs:
        return EventArray.empty()
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    order = np.argsort(t, kind="stable")
    return EventArray(x[order], y[order], t[order], p[order])


@dataclass
class SimConfig:
    """Desk-scale dataset: a short static capture then rotational motion."""

    seed: int = 42
    static_duration: float = 2.0
    motion_duration: float = 3.0
    window_spacing: float = 0.1
    window_half_width: float = 0.015
    sweep_half_width: float = 0.05
    lidar_rate: float = 120_000.0
    artifact: bool = True
    lidar_noise: LidarNoise = field(default_factory=LidarNoise)
    sigma_t: float = 1e-4
    event_noise_rate: float = 0.2
    contrast_thresh: float = 0.2
    render_dt: float = 0.0025
    omega_amplitude: tuple = (0.50, 0.60, 0.35)
    omega_frequency: tuple = (0.45, 0.30, 0.55)
    omega_phase: tuple = (0.9, 2.1, 4.4)
    n_planes: int = 4
    texture_cells: float = 0.45
    pattern: ScanPattern = field(default_factory=ScanPattern)

    def omega_fn(self, t: float) -> np.ndarray:
        """Camera-frame angular velocity during the motion phase."""
        rel = t - self.static_duration
        amp = np.asarray(self.omega_amplitude)
        freq = np.asarray(self.omega_frequency)
        phase = np.asarray(self.omega_phase)
        return amp * np.sin(2.0 * np.pi * freq * rel + phase)


@dataclass
class Dataset:
    """One simulated calibration session plus its ground truth."""

    static_cloud: PointCloudFrame
    sweeps: list
    events: EventArray
    ground_truth: GroundTruth
    intrinsics: CameraIntrinsics
    config: SimConfig


def generate_dataset(
    scene: SyntheticScene | None = None,
    extrinsic_true: RigidTransform | None = None,
    config: SimConfig | None = None,
    intrinsics: CameraIntrinsics | None = None,
) -> Dataset:
    """Produce the static cloud, per-window sweeps, events, and ground truth."""
    cfg = config or SimConfig()
    T_true = extrinsic_true if extrinsic_true is not None else nominal_extrinsic()
    intr = intrinsics or default_camera()
    boresight = T_true.rotation @ np.array([0.0, 0.0, 1.0])
    if scene is None:
        scene = generate_scene(cfg.seed, cfg.n_planes, cfg.texture_cells, boresight)
    rng = np.random.default_rng(cfg.seed)

    t_motion_start = cfg.static_duration
    t_end = cfg.static_duration + cfg.motion_duration
    trajectory = rotational_trajectory(cfg.omega_fn, t_motion_start, t_end, cfg.render_dt)

    static_cloud = simulate_lidar(
        scene,
        RigidTransform.identity(),
        pattern=cfg.pattern,
        duration=cfg.static_duration,
        rate=cfg.lidar_rate,
        artifact=cfg.artifact,
        noise=cfg.lidar_noise,
        seed=int(rng.integers(2**31)),
        t_start=0.0,
        scan_rotation=T_true.rotation,
    )

    margin = max(cfg.window_half_width, cfg.sweep_half_width)
    first = t_motion_start + max(cfg.window_spacing / 2.0, margin)
    centers = np.arange(first, t_end - margin + 1e-9, cfg.window_spacing)

    sweeps = []
    n_per = max(1, int(round(2.0 * cfg.sweep_half_width * cfg.lidar_rate)))
    for c in centers:
        times = c - cfg.sweep_half_width + (np.arange(n_per) + 0.5) * (
            2.0 * cfg.sweep_half_width / n_per
        )
        R_traj = trajectory.rotation_at(times)
        # LiDAR pose: rotation about the camera center transferred through
        # the true extrinsic.
        R_wl = np.einsum("ij,njk,lk->nil", T_true.rotation, R_traj, T_true.rotation)
        origins = T_true.translation[None, :] - np.einsum("nij,j->ni", R_wl, T_true.translation)
        sweeps.append(
            _scan(
                scene, origins, R_wl, times, cfg.pattern, T_true.rotation,
                False, cfg.lidar_noise, np.random.default_rng(int(rng.integers(2**31))),
            )
        )

    events = simulate_events(
        scene, intr, T_true, trajectory,
        contrast_thresh=cfg.contrast_thresh,
        sigma_t=cfg.sigma_t,
        noise_rate=cfg.event_noise_rate,
        noise_span=(0.0, t_end),
        seed=int(rng.integers(2**31)),
    )

    omega_true = np.stack([cfg.omega_fn(c) for c in centers]) if centers.size else np.empty((0, 3))
    gt = GroundTruth(
        extrinsic_true=T_true,
        trajectory=trajectory,
        window_centers=centers,
        omega_per_window=omega_true,
    )
    return Dataset(static_cloud, sweeps, events, gt, intr, cfg)
