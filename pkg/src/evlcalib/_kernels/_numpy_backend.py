"""Vectorized NumPy implementation of the event warp/splat kernels.

Semantics must stay in lockstep with ``_warp_cy.pyx``: the parity tests
compare both backends element-wise.
"""

import numpy as np

_MIN_Z = 1e-12


def rotate_project(xc, yc, dt, omega, fx, fy, cx, cy, dist):
    """Rotate unit-plane rays by exp(skew(omega) * dt) and project to pixels.

    ``xc, yc`` are undistorted normalized coordinates per event, ``dt`` the
    per-event time offset from the window center. Returns ``(u, v, valid)``
    where invalid entries (warped behind the image plane) hold NaN.
    """
    xc = np.asarray(xc, dtype=np.float64)
    yc = np.asarray(yc, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    wx, wy, wz = (float(w) for w in omega)
    norm = np.sqrt(wx * wx + wy * wy + wz * wz)

    if norm < 1e-15:
        rx, ry, rz = xc, yc, np.ones_like(xc)
    else:
        kx, ky, kz = wx / norm, wy / norm, wz / norm
        theta = norm * dt
        c = np.cos(theta)
        s = np.sin(theta)
        kdotr = kx * xc + ky * yc + kz
        crx = ky - kz * yc
        cry = kz * xc - kx
        crz = kx * yc - ky * xc
        m = 1.0 - c
        rx = c * xc + s * crx + m * kdotr * kx
        ry = c * yc + s * cry + m * kdotr * ky
        rz = c + s * crz + m * kdotr * kz

    valid = rz > _MIN_Z
    with np.errstate(divide="ignore", invalid="ignore"):
        x = rx / rz
        y = ry / rz

    k1, k2, p1, p2, k3 = dist
    if k1 != 0.0 or k2 != 0.0 or p1 != 0.0 or p2 != 0.0 or k3 != 0.0:
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x, y = xd, yd

    u = fx * x + cx
    v = fy * y + cy
    u = np.where(valid, u, np.nan)
    v = np.where(valid, v, np.nan)
    return u, v, valid


def bilinear_splat(u, v, pol, width, height):
    """Accumulate signed polarities into an image by bilinear splatting.

    Events with u outside [0, width-1] or v outside [0, height-1] (or with
    NaN coordinates) are dropped entirely, so the image sum equals the
    polarity sum of the surviving events.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    pol = np.asarray(pol, dtype=np.float64)
    img = np.zeros((height, width), dtype=np.float64)

    with np.errstate(invalid="ignore"):
        keep = (u >= 0.0) & (u <= width - 1.0) & (v >= 0.0) & (v <= height - 1.0)
    if not np.any(keep):
        return img
    u, v, pol = u[keep], v[keep], pol[keep]

    i0 = np.floor(u).astype(np.intp)
    j0 = np.floor(v).astype(np.intp)
    fu = u - i0
    fv = v - j0
    i1 = np.minimum(i0 + 1, width - 1)
    j1 = np.minimum(j0 + 1, height - 1)

    np.add.at(img, (j0, i0), pol * (1.0 - fu) * (1.0 - fv))
    np.add.at(img, (j0, i1), pol * fu * (1.0 - fv))
    np.add.at(img, (j1, i0), pol * (1.0 - fu) * fv)
    np.add.at(img, (j1, i1), pol * fu * fv)
    return img


def warp_splat(xc, yc, dt, pol, omega, fx, fy, cx, cy, dist, width, height):
    """Fused rotate_project + bilinear_splat."""
    u, v, _ = rotate_project(xc, yc, dt, omega, fx, fy, cx, cy, dist)
    return bilinear_splat(u, v, pol, width, height)
