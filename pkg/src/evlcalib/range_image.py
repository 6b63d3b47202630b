"""Projection of the dense static cloud onto a virtual imaging plane.

The virtual plane is a pinhole camera (z forward) placed at the LiDAR
origin; callers transform the cloud into that frame before projecting.
Per-pixel source-point indices are kept so 2D detections can later be
lifted back to the original 3D points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyProjection
from .geometry import CameraIntrinsics, PointCloudFrame, project_pinhole

DEFAULT_FOV_H_DEG = 70.4
DEFAULT_FOV_V_DEG = 77.2
DEFAULT_PIXEL_PITCH_DEG = 0.2


def virtual_plane_intrinsics(
    fov_h_deg: float = DEFAULT_FOV_H_DEG,
    fov_v_deg: float = DEFAULT_FOV_V_DEG,
    pixel_pitch_deg: float = DEFAULT_PIXEL_PITCH_DEG,
) -> CameraIntrinsics:
    """Intrinsics of the virtual LiDAR imaging plane (no distortion)."""
    width = int(round(fov_h_deg / pixel_pitch_deg))
    height = int(round(fov_v_deg / pixel_pitch_deg))
    fx = (width / 2.0) / np.tan(np.radians(fov_h_deg) / 2.0)
    fy = (height / 2.0) / np.tan(np.radians(fov_v_deg) / 2.0)
    return CameraIntrinsics(
        fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
    )


@dataclass
class RangeImage:
    """Aligned per-pixel depth and reflectivity with source-point indices.

    Empty pixels hold NaN. ``filled`` marks pixels synthesized by
    :func:`median_fill`; those have no source points.
    """

    depth: np.ndarray
    reflectivity: np.ndarray
    filled: np.ndarray
    pixel_offsets: np.ndarray
    pixel_indices: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.depth)

    def points_at(self, row: int, col: int) -> np.ndarray:
        """Source cloud indices contributing to a pixel (empty if filled)."""
        flat = row * self.width + col
        return self.pixel_indices[self.pixel_offsets[flat] : self.pixel_offsets[flat + 1]]


def project_cloud(
    cloud: PointCloudFrame,
    virt: CameraIntrinsics,
    depth_merge_tol: float = 0.1,
) -> RangeImage:
    """Project a cloud (already in the virtual camera frame) to a RangeImage.

    Pixels take the minimum depth among their points and that point's
    reflectivity; every point within ``depth_merge_tol`` of the winning
    depth is recorded in the pixel's source list.
    """
    if len(cloud) == 0:
        raise EmptyProjection("cannot project an empty cloud")
    width, height = virt.width, virt.height

    pts = cloud.positions
    in_front = pts[:, 2] > 0.0
    idx = np.nonzero(in_front)[0]
    if idx.size == 0:
        raise EmptyProjection("no point has positive depth in the virtual frame")
    uv = project_pinhole(pts[idx], virt)
    cols = np.round(uv[:, 0]).astype(np.intp)
    rows = np.round(uv[:, 1]).astype(np.intp)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    idx = idx[inside]
    if idx.size == 0:
        raise EmptyProjection("no point lands inside the virtual image")
    cols, rows = cols[inside], rows[inside]

    flat = rows * width + cols
    depths = pts[idx, 2]
    # Sort by (pixel, depth, original index): the head of each pixel group
    # is the winner; the index key makes exact-depth ties deterministic.
    order = np.lexsort((idx, depths, flat))
    flat_s, depth_s, idx_s = flat[order], depths[order], idx[order]

    group_start = np.ones(flat_s.size, dtype=bool)
    group_start[1:] = flat_s[1:] != flat_s[:-1]
    starts = np.nonzero(group_start)[0]
    win_pix = flat_s[starts]
    win_depth = depth_s[starts]
    win_idx = idx_s[starts]

    depth_img = np.full((height, width), np.nan)
    refl_img = np.full((height, width), np.nan)
    depth_img.ravel()[win_pix] = win_depth
    refl_img.ravel()[win_pix] = cloud.reflectivity[win_idx]

    # Membership: depth within tolerance of its pixel's winner.
    group_id = np.cumsum(group_start) - 1
    member = depth_s <= win_depth[group_id] + depth_merge_tol
    mem_pix = flat_s[member]
    mem_idx = idx_s[member]
    counts = np.bincount(mem_pix, minlength=width * height)
    offsets = np.zeros(width * height + 1, dtype=np.intp)
    np.cumsum(counts, out=offsets[1:])

    return RangeImage(
        depth=depth_img,
        reflectivity=refl_img,
        filled=np.zeros((height, width), dtype=bool),
        pixel_offsets=offsets,
        pixel_indices=mem_idx.astype(np.intp),
    )


def median_fill(img: RangeImage, kernel: int = 5, max_passes: int = 2) -> RangeImage:
    """Fill small holes with the median of their non-empty neighbors.

    A hole is filled only when at least kernel^2 / 2 window pixels are
    non-empty; depth and reflectivity take their medians independently.
    Non-empty pixels are never modified.
    """
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 3")
    depth = img.depth.copy()
    refl = img.reflectivity.copy()
    filled = img.filled.copy()

    for _ in range(max_passes):
        valid = ~np.isnan(depth)
        hole = ~valid
        if not np.any(hole):
            break
        dwin = _windows(depth, kernel)
        rwin = _windows(refl, kernel)
        count = np.sum(~np.isnan(dwin), axis=2)
        target = hole & (2 * count >= kernel * kernel)
        if not np.any(target):
            break
        rows, cols = np.nonzero(target)
        depth[rows, cols] = np.nanmedian(dwin[rows, cols], axis=1)
        refl[rows, cols] = np.nanmedian(rwin[rows, cols], axis=1)
        filled[rows, cols] = True

    return RangeImage(
        depth=depth,
        reflectivity=refl,
        filled=filled,
        pixel_offsets=img.pixel_offsets,
        pixel_indices=img.pixel_indices,
    )


def _windows(image: np.ndarray, kernel: int) -> np.ndarray:
    """(H, W, kernel^2) view of each pixel's padded neighborhood."""
    pad = kernel // 2
    padded = np.pad(image, pad, mode="constant", constant_values=np.nan)
    win = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel))
    return win.reshape(image.shape[0], image.shape[1], kernel * kernel)


def save_range_image_png(image: np.ndarray, path) -> None:
    """Debug dump of a scalar image as 16-bit grayscale PNG."""
    from PIL import Image

    finite = np.isfinite(image)
    out = np.zeros(image.shape, dtype=np.uint16)
    if np.any(finite):
        lo = float(image[finite].min())
        hi = float(image[finite].max())
        span = hi - lo if hi > lo else 1.0
        out[finite] = ((image[finite] - lo) / span * 65535.0).astype(np.uint16)
    Image.fromarray(out, mode="I;16").save(str(path))
