"""Target-free extrinsic calibration of an event camera / LiDAR pair.

The pipeline matches geometric and reflectivity edges extracted from a
dense LiDAR point cloud against motion-triggered events, estimates the
rig's per-window angular velocity by contrast maximization, localizes
in-motion sweeps against the static cloud, and solves the camera-to-LiDAR
rigid transform by minimizing point-to-edge reprojection error.
"""

from ._kernels import BACKEND as kernel_backend
from .geometry import (
    CameraIntrinsics,
    Event,
    PointCloudFrame,
    RigidTransform,
    euler_zyx_to_rotation,
    project_pinhole,
    so3_exp,
    transform_point,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "Event",
    "PointCloudFrame",
    "RigidTransform",
    "euler_zyx_to_rotation",
    "kernel_backend",
    "project_pinhole",
    "so3_exp",
    "transform_point",
    "__version__",
]
