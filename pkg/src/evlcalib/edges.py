"""Edge detection on range images and lifting of 2D edges to 3D.

Reflectivity edges near geometric (depth) edges are suppressed: beam
divergence makes first-echo reflectivity unreliable around occlusion
boundaries, while depth stays trustworthy there.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .errors import NoLiftablePixels
from .geometry import PointCloudFrame
from .range_image import RangeImage


class EdgeLabel(IntEnum):
    NONE = 0
    GEOMETRIC = 1
    REFLECTIVITY = 2


@dataclass
class EdgeMap2D:
    """Per-pixel edge labels on the virtual imaging plane."""

    labels: np.ndarray

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def mask(self, label: EdgeLabel) -> np.ndarray:
        return self.labels == int(label)


@dataclass
class Edge3D:
    """3D edge points lifted from labeled pixels (LiDAR frame at capture)."""

    positions: np.ndarray
    labels: np.ndarray
    source_pixels: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]


def fill_nearest_valid(field: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels with their nearest valid pixel's value."""
    if np.all(valid):
        return field
    if not np.any(valid):
        return np.zeros_like(field)
    ind = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
    return field[tuple(ind)]


def sobel_gradients(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel derivatives normalized to central-difference scale (gx, gy)."""
    gx = ndimage.sobel(field, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(field, axis=0, mode="nearest") / 8.0
    return gx, gy


def canny(
    field: np.ndarray,
    low_thresh: float,
    high_thresh: float,
    sigma: float = 1.0,
    valid_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Canny edge detection: smooth, Sobel, NMS, hysteresis.

    Invalid pixels (where ``valid_mask`` is False) borrow the nearest valid
    value so gradients stay meaningful up to the data boundary.
    """
    if not (0.0 < low_thresh < high_thresh):
        raise ValueError("thresholds must satisfy 0 < low < high")
    field = np.asarray(field, dtype=float)
    if valid_mask is not None:
        field = fill_nearest_valid(field, valid_mask)
    smoothed = ndimage.gaussian_filter(field, sigma, mode="nearest") if sigma > 0 else field
    gx, gy = sobel_gradients(smoothed)
    mag = np.hypot(gx, gy)

    thinned = _non_maximum_suppression(mag, gx, gy)

    strong = thinned >= high_thresh
    weak = thinned >= low_thresh
    if not np.any(strong):
        return np.zeros_like(strong)
    return ndimage.binary_dilation(strong, structure=np.ones((3, 3), bool), iterations=0, mask=weak)


def _non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their quantized gradient direction.

    Ties along the direction keep exactly one pixel (strict test on one
    side, non-strict on the other) so an ideal step yields a 1-px line.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")

    angle = np.arctan2(gy, gx)
    # Quantize direction to 4 bins; opposite directions are equivalent.
    sector = np.round(angle / (np.pi / 4.0)).astype(int) % 4

    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    rows, cols = np.mgrid[0:h, 0:w]
    for s, (dr, dc) in offsets.items():
        sel = sector == s
        r, c = rows[sel] + 1, cols[sel] + 1
        fwd = padded[r + dr, c + dc]
        bwd = padded[r - dr, c - dc]
        m = padded[r, c]
        keep[sel] = (m > fwd) & (m >= bwd)
    return np.where(keep, mag, 0.0)


def percentile_thresholds(
    field: np.ndarray,
    sigma: float,
    valid_mask: np.ndarray | None = None,
    high_percentile: float = 90.0,
    low_ratio: float = 0.4,
    floor: float = 0.0,
) -> tuple[float, float]:
    """Gradient-magnitude thresholds as a percentile of the valid pixels.

    ``floor`` is an absolute lower bound on the high threshold; it keeps
    the percentile rule from locking onto the sensor noise floor in
    images whose true edges cover little area (depth, typically).
    """
    field = np.asarray(field, dtype=float)
    if valid_mask is not None:
        field = fill_nearest_valid(field, valid_mask)
    smoothed = ndimage.gaussian_filter(field, sigma, mode="nearest") if sigma > 0 else field
    gx, gy = sobel_gradients(smoothed)
    mag = np.hypot(gx, gy)
    if valid_mask is not None:
        mag = mag[valid_mask]
    high = max(float(np.percentile(mag, high_percentile)), floor)
    if high <= 0.0:
        high = 1e-12
    return low_ratio * high, high


def suppress_spurious(
    refl_edges: np.ndarray, depth_edges: np.ndarray, patch: int = 5
) -> np.ndarray:
    """Drop reflectivity edges with any depth edge in their patch window."""
    if refl_edges.shape != depth_edges.shape:
        raise ValueError("masks must share a shape")
    if patch < 1 or patch % 2 == 0:
        raise ValueError("patch must be odd")
    if not np.any(depth_edges):
        return refl_edges.copy()
    near_depth = ndimage.binary_dilation(depth_edges, structure=np.ones((patch, patch), bool))
    return refl_edges & ~near_depth


def classify_and_merge(depth_edges: np.ndarray, refl_edges_filtered: np.ndarray) -> EdgeMap2D:
    """Label depth edges GEOMETRIC and surviving reflectivity edges REFLECTIVITY.

    A pixel present in both masks is GEOMETRIC.
    """
    if depth_edges.shape != refl_edges_filtered.shape:
        raise ValueError("masks must share a shape")
    labels = np.zeros(depth_edges.shape, dtype=np.uint8)
    labels[refl_edges_filtered] = int(EdgeLabel.REFLECTIVITY)
    labels[depth_edges] = int(EdgeLabel.GEOMETRIC)
    return EdgeMap2D(labels)


def lift_to_3d(edges: EdgeMap2D, img: RangeImage, cloud: PointCloudFrame) -> Edge3D:
    """Lift labeled pixels to 3D as the centroid of their source points.

    Pixels synthesized by median fill have no source points and are
    skipped, so no 3D edge is hallucinated.
    """
    rows, cols = np.nonzero(edges.labels)
    positions, labels, pixels = [], [], []
    for r, c in zip(rows, cols):
        idx = img.points_at(r, c)
        if idx.size == 0:
            continue
        positions.append(cloud.positions[idx].mean(axis=0))
        labels.append(edges.labels[r, c])
        pixels.append((c, r))
    if not positions:
        raise NoLiftablePixels("no labeled pixel has source cloud points")
    return Edge3D(
        positions=np.asarray(positions, dtype=float),
        labels=np.asarray(labels, dtype=np.uint8),
        source_pixels=np.asarray(pixels, dtype=np.intp),
    )


@dataclass
class EdgeExtractionParams:
    """Tunables for the end-to-end edge extraction stage.

    The gradient floors are in the image's own units per pixel (log-depth
    for the geometric channel, reflectivity for the other) and stop the
    percentile thresholds from chasing sensor noise on edge-poor images.
    """

    sigma: float = 1.0
    high_percentile: float = 90.0
    low_ratio: float = 0.4
    suppress_patch: int = 5
    log_depth: bool = True
    depth_gradient_floor: float = 0.05
    reflectivity_gradient_floor: float = 0.02


def extract_edges(
    img: RangeImage,
    cloud: PointCloudFrame,
    params: EdgeExtractionParams | None = None,
) -> tuple[EdgeMap2D, Edge3D, dict]:
    """Full edge stage: Canny on depth and reflectivity, suppress, lift.

    ``cloud`` must be the cloud that was projected (same point indexing),
    in its original sensor frame; lifted positions come from it.
    Geometric edges are detected on log-depth so near and far depth steps
    produce comparable gradients.
    """
    p = params or EdgeExtractionParams()
    valid = img.valid
    depth_field = np.log(np.maximum(img.depth, 1e-6)) if p.log_depth else img.depth
    refl_field = img.reflectivity

    masks = {}
    floors = {"depth": p.depth_gradient_floor, "reflectivity": p.reflectivity_gradient_floor}
    for name, field in (("depth", depth_field), ("reflectivity", refl_field)):
        low, high = percentile_thresholds(
            field, p.sigma, valid, p.high_percentile, p.low_ratio, floors[name]
        )
        masks[name] = canny(field, low, high, p.sigma, valid) & valid

    refl_kept = suppress_spurious(masks["reflectivity"], masks["depth"], p.suppress_patch)
    edge_map = classify_and_merge(masks["depth"], refl_kept)
    edge_cloud = lift_to_3d(edge_map, img, cloud)
    debug = {"depth_edges": masks["depth"], "reflectivity_edges": masks["reflectivity"]}
    return edge_map, edge_cloud, debug


def save_edge_map_png(edge_map: EdgeMap2D, path) -> None:
    """Debug dump: geometric edges purple, reflectivity edges blue."""
    from PIL import Image

    rgb = np.zeros((*edge_map.labels.shape, 3), dtype=np.uint8)
    rgb[edge_map.mask(EdgeLabel.GEOMETRIC)] = (160, 32, 240)
    rgb[edge_map.mask(EdgeLabel.REFLECTIVITY)] = (40, 90, 255)
    Image.fromarray(rgb, mode="RGB").save(str(path))
