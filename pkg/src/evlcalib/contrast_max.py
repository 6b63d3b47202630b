"""Angular-velocity estimation from event windows by contrast maximization.

Events in a short window are warped under a pure-rotation model to the
window center; the rotation rate that maximizes the variance (contrast)
of the warped event image is the window's angular velocity. Warping acts
on undistorted calibrated coordinates, where the rotational model is
exact; distortion is removed per event before warping and reapplied when
splatting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from . import _kernels
from .errors import TooFewEvents
from .geometry import CameraIntrinsics, pixels_to_rays

DEFAULT_MIN_EVENTS = 500


@dataclass
class EventArray:
    """Column store of events: pixel coordinates, timestamps, polarities."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        self.p = np.asarray(self.p, dtype=np.int8).ravel()
        n = self.x.size
        if not (self.y.size == self.t.size == self.p.size == n):
            raise ValueError("event columns must have equal length")
        if n and not np.all(np.abs(self.p) == 1):
            raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return self.x.size

    @classmethod
    def empty(cls) -> "EventArray":
        z = np.empty(0)
        return cls(z, z, z, np.empty(0, dtype=np.int8))

    def slice_time(self, t0: float, t1: float) -> "EventArray":
        """Events with t in [t0, t1]; requires time-sorted storage."""
        i0 = int(np.searchsorted(self.t, t0, side="left"))
        i1 = int(np.searchsorted(self.t, t1, side="right"))
        return EventArray(self.x[i0:i1], self.y[i0:i1], self.t[i0:i1], self.p[i0:i1])


@dataclass
class EventWindow:
    """Events inside the closed interval [t_center - half_width, t_center + half_width]."""

    t_center: float
    half_width: float
    events: EventArray

    def __post_init__(self):
        if len(self.events):
            lo = self.t_center - self.half_width - 1e-12
            hi = self.t_center + self.half_width + 1e-12
            if self.events.t.min() < lo or self.events.t.max() > hi:
                raise ValueError("event timestamps fall outside the window interval")

    def __len__(self) -> int:
        return len(self.events)


def slice_windows(
    events: EventArray, centers: np.ndarray, half_width: float
) -> list[EventWindow]:
    """Cut one window per center out of a time-sorted event stream."""
    return [
        EventWindow(float(c), half_width, events.slice_time(c - half_width, c + half_width))
        for c in np.asarray(centers, dtype=float)
    ]


def accumulate_events(window: EventWindow, width: int, height: int) -> np.ndarray:
    """Polarity-signed event image by bilinear splatting at raw pixels."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    ev = window.events
    return _kernels.bilinear_splat(ev.x, ev.y, ev.p.astype(np.float64), width, height)


def _calibrated_coords(window: EventWindow, intr: CameraIntrinsics):
    """Per-event undistorted normalized coordinates and center offsets."""
    ev = window.events
    rays = pixels_to_rays(np.stack([ev.x, ev.y], axis=1), intr)
    dt = ev.t - window.t_center
    return rays[:, 0].copy(), rays[:, 1].copy(), dt, ev.p.astype(np.float64)


def warp_events(window: EventWindow, omega: np.ndarray, intr: CameraIntrinsics) -> EventArray:
    """Warp each event to the window center under rotation rate ``omega``.

    Polarities and timestamps are preserved; events rotating behind the
    image plane are dropped.
    """
    ev = window.events
    if len(ev) == 0:
        return EventArray.empty()
    xc, yc, dt, _ = _calibrated_coords(window, intr)
    u, v, valid = _kernels.rotate_project(
        xc, yc, dt, np.asarray(omega, dtype=float),
        intr.fx, intr.fy, intr.cx, intr.cy, intr.distortion,
    )
    return EventArray(u[valid], v[valid], ev.t[valid], ev.p[valid])


def warped_image(
    window: EventWindow, omega: np.ndarray, intr: CameraIntrinsics
) -> np.ndarray:
    """Accumulated image of the window's events after warping to t_center."""
    if len(window.events) == 0:
        return np.zeros((intr.height, intr.width))
    xc, yc, dt, pol = _calibrated_coords(window, intr)
    return _kernels.warp_splat(
        xc, yc, dt, pol, np.asarray(omega, dtype=float),
        intr.fx, intr.fy, intr.cx, intr.cy, intr.distortion,
        intr.width, intr.height,
    )


def variance_objective(
    window: EventWindow, omega: np.ndarray, intr: CameraIntrinsics
) -> float:
    """Variance of the warped event image over the full image domain."""
    if len(window.events) == 0:
        return 0.0
    return float(np.var(warped_image(window, omega, intr)))


@dataclass
class OmegaEstimate:
    """Result of a per-window angular velocity estimation."""

    omega: np.ndarray
    objective: float
    converged: bool
    n_evaluations: int = 0
    objective_trace: list = field(default_factory=list)


def estimate_omega(
    window: EventWindow,
    intr: CameraIntrinsics,
    init: np.ndarray | None = None,
    min_events: int = DEFAULT_MIN_EVENTS,
    grid_radius: float = 1.0,
    grid_step: float = 0.25,
    blur_sigma: float = 1.0,
    max_iterations: int = 200,
    pixel_dither: float = 0.5,
    max_events: int = 25_000,
) -> OmegaEstimate:
    """Maximize warped-image variance over the rotation rate.

    A coarse grid seeds a Nelder-Mead refinement on a Gaussian-blurred
    variance (the blur smooths the splatting quantization); the returned
    objective is the unblurred variance. When ``init`` is given the grid
    is skipped and the output never scores below it.

    Inside the search objective each event is dithered uniformly within
    its pixel footprint (deterministically, fixed across evaluations).
    Raw events sit exactly on integer pixels, which makes the unwarped
    image spuriously sharp; the dither removes that zero-rate spike.
    """
    if len(window.events) < min_events:
        raise TooFewEvents(
            f"window at t={window.t_center:.4f}s has {len(window.events)} events "
            f"(minimum {min_events})"
        )
    ev = window.events
    d_rng = np.random.default_rng(len(ev) * 2654435761 % (2**31))
    if len(ev) > max_events:
        keep = np.sort(d_rng.choice(len(ev), max_events, replace=False))
        ev = EventArray(ev.x[keep], ev.y[keep], ev.t[keep], ev.p[keep])
    if pixel_dither > 0:
        px = ev.x + d_rng.uniform(-pixel_dither, pixel_dither, len(ev))
        py = ev.y + d_rng.uniform(-pixel_dither, pixel_dither, len(ev))
        rays = pixels_to_rays(np.stack([px, py], axis=1), intr)
        xc, yc = rays[:, 0].copy(), rays[:, 1].copy()
        dt = ev.t - window.t_center
        pol = ev.p.astype(np.float64)
    else:
        sub = EventWindow(window.t_center, window.half_width, ev)
        xc, yc, dt, pol = _calibrated_coords(sub, intr)
    evaluations = 0
    trace: list[float] = []

    def smoothed_negative(w: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        img = _kernels.warp_splat(
            xc, yc, dt, pol, w, intr.fx, intr.fy, intr.cx, intr.cy,
            intr.distortion, intr.width, intr.height,
        )
        if blur_sigma > 0:
            img = ndimage.gaussian_filter(img, blur_sigma)
        value = float(np.var(img))
        trace.append(value if not trace else max(trace[-1], value))
        return -value

    if init is not None:
        start = np.asarray(init, dtype=float)
    else:
        axis = np.arange(-grid_radius, grid_radius + grid_step / 2, grid_step)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        scores = [smoothed_negative(w) for w in grid]
        start = grid[int(np.argmin(scores))]

    # Coarse simplex to find the basin, then a tight restart to polish
    # (the smoothed landscape still carries splatting ripples).
    best_x = start
    converged = False
    for scale in (0.05, 0.008):
        result = minimize(
            smoothed_negative,
            best_x,
            method="Nelder-Mead",
            options={
                "maxiter": max_iterations,
                "xatol": 1e-6,
                "fatol": 1e-12,
                "initial_simplex": _initial_simplex(best_x, scale),
            },
        )
        converged = bool(result.success)
        if smoothed_negative(result.x) <= smoothed_negative(best_x):
            best_x = np.asarray(result.x, dtype=float)

    omega = best_x
    if init is not None:
        # Contract: never score below the caller's initial guess.
        start_arr = np.asarray(init, dtype=float)
        if variance_objective(window, omega, intr) < variance_objective(window, start_arr, intr):
            omega = start_arr
    return OmegaEstimate(
        omega=omega,
        objective=variance_objective(window, omega, intr),
        converged=converged,
        n_evaluations=evaluations,
        objective_trace=trace,
    )


def _initial_simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    simplex = np.tile(x0, (4, 1))
    for k in range(3):
        simplex[k + 1, k] += scale
    return simplex


def save_event_image_png(image: np.ndarray, path) -> None:
    """Debug dump: positive polarity red, negative blue, on white."""
    from PIL import Image

    peak = np.abs(image).max() or 1.0
    norm = np.clip(image / peak, -1.0, 1.0)
    rgb = np.full((*image.shape, 3), 255, dtype=np.uint8)
    pos, neg = norm > 0, norm < 0
    fade_pos = (255 * (1.0 - norm[pos])).astype(np.uint8)
    fade_neg = (255 * (1.0 + norm[neg])).astype(np.uint8)
    rgb[pos, 1] = fade_pos
    rgb[pos, 2] = fade_pos
    rgb[neg, 0] = fade_neg
    rgb[neg, 1] = fade_neg
    Image.fromarray(rgb, mode="RGB").save(str(path))
