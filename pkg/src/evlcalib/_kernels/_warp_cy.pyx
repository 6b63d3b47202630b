# cython: language_level=3
"""Compiled event warp/splat kernels (hot path of contrast maximization).

Must stay semantically identical to ``_numpy_backend``; the parity tests
compare both backends element-wise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, floor, NAN

cnp.import_array()

DEF MIN_Z = 1e-12


def rotate_project(xc, yc, dt, omega, double fx, double fy,
                   double cx, double cy, dist):
    cdef double[::1] x_in = np.ascontiguousarray(xc, dtype=np.float64)
    cdef double[::1] y_in = np.ascontiguousarray(yc, dtype=np.float64)
    cdef double[::1] dt_in = np.ascontiguousarray(dt, dtype=np.float64)
    cdef Py_ssize_t n = x_in.shape[0]

    u_arr = np.empty(n, dtype=np.float64)
    v_arr = np.empty(n, dtype=np.float64)
    valid_arr = np.empty(n, dtype=np.bool_)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef cnp.uint8_t[::1] valid = valid_arr.view(np.uint8)

    cdef double wx = omega[0], wy = omega[1], wz = omega[2]
    cdef double k1 = dist[0], k2 = dist[1], p1 = dist[2], p2 = dist[3], k3 = dist[4]
    cdef bint distorted = (k1 != 0.0 or k2 != 0.0 or p1 != 0.0 or
                           p2 != 0.0 or k3 != 0.0)
    cdef double norm = sqrt(wx * wx + wy * wy + wz * wz)
    cdef bint rotate = norm >= 1e-15
    cdef double kx = 0.0, ky = 0.0, kz = 0.0
    if rotate:
        kx = wx / norm
        ky = wy / norm
        kz = wz / norm

    cdef Py_ssize_t i
    cdef double xi, yi, theta, c, s, m, kdotr, crx, cry, crz
    cdef double rx, ry, rz, x, y, r2, radial, xd, yd

    for i in range(n):
        xi = x_in[i]
        yi = y_in[i]
        if rotate:
            theta = norm * dt_in[i]
            c = cos(theta)
            s = sin(theta)
            m = 1.0 - c
            kdotr = kx * xi + ky * yi + kz
            crx = ky - kz * yi
            cry = kz * xi - kx
            crz = kx * yi - ky * xi
            rx = c * xi + s * crx + m * kdotr * kx
            ry = c * yi + s * cry + m * kdotr * ky
            rz = c + s * crz + m * kdotr * kz
        else:
            rx = xi
            ry = yi
            rz = 1.0

        if rz <= MIN_Z:
            valid[i] = 0
            u[i] = NAN
            v[i] = NAN
            continue
        valid[i] = 1
        x = rx / rz
        y = ry / rz
        if distorted:
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            x = xd
            y = yd
        u[i] = fx * x + cx
        v[i] = fy * y + cy

    return u_arr, v_arr, valid_arr


def bilinear_splat(u, v, pol, int width, int height):
    cdef double[::1] u_in = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] v_in = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] p_in = np.ascontiguousarray(pol, dtype=np.float64)
    img_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img = img_arr
    _splat(u_in, v_in, p_in, img, width, height)
    return img_arr


cdef inline void _splat(double[::1] u, double[::1] v, double[::1] pol,
                        double[:, ::1] img, int width, int height) noexcept:
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double ui, vi, fu, fv, p
    cdef Py_ssize_t i0, j0, i1, j1
    for i in range(n):
        ui = u[i]
        vi = v[i]
        # NaN fails every comparison, so invalid events fall through.
        if not (ui >= 0.0 and ui <= width - 1.0 and vi >= 0.0 and vi <= height - 1.0):
            continue
        p = pol[i]
        i0 = <Py_ssize_t>floor(ui)
        j0 = <Py_ssize_t>floor(vi)
        fu = ui - i0
        fv = vi - j0
        i1 = i0 + 1
        j1 = j0 + 1
        if i1 > width - 1:
            i1 = width - 1
        if j1 > height - 1:
            j1 = height - 1
        img[j0, i0] += p * (1.0 - fu) * (1.0 - fv)
        img[j0, i1] += p * fu * (1.0 - fv)
        img[j1, i0] += p * (1.0 - fu) * fv
        img[j1, i1] += p * fu * fv


def warp_splat(xc, yc, dt, pol, omega, double fx, double fy, double cx,
               double cy, dist, int width, int height):
    cdef double[::1] x_in = np.ascontiguousarray(xc, dtype=np.float64)
    cdef double[::1] y_in = np.ascontiguousarray(yc, dtype=np.float64)
    cdef double[::1] dt_in = np.ascontiguousarray(dt, dtype=np.float64)
    cdef double[::1] p_in = np.ascontiguousarray(pol, dtype=np.float64)
    cdef Py_ssize_t n = x_in.shape[0]

    img_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img = img_arr

    cdef double wx = omega[0], wy = omega[1], wz = omega[2]
    cdef double k1 = dist[0], k2 = dist[1], p1 = dist[2], p2 = dist[3], k3 = dist[4]
    cdef bint distorted = (k1 != 0.0 or k2 != 0.0 or p1 != 0.0 or
                           p2 != 0.0 or k3 != 0.0)
    cdef double norm = sqrt(wx * wx + wy * wy + wz * wz)
    cdef bint rotate = norm >= 1e-15
    cdef double kx = 0.0, ky = 0.0, kz = 0.0
    if rotate:
        kx = wx / norm
        ky = wy / norm
        kz = wz / norm

    cdef Py_ssize_t i, i0, j0, i1, j1
    cdef double xi, yi, theta, c, s, m, kdotr, crx, cry, crz
    cdef double rx, ry, rz, x, y, r2, radial, xd, yd, ui, vi, fu, fv, p

    for i in range(n):
        xi = x_in[i]
        yi = y_in[i]
        if rotate:
            theta = norm * dt_in[i]
            c = cos(theta)
            s = sin(theta)
            m = 1.0 - c
            kdotr = kx * xi + ky * yi + kz
            crx = ky - kz * yi
            cry = kz * xi - kx
            crz = kx * yi - ky * xi
            rx = c * xi + s * crx + m * kdotr * kx
            ry = c * yi + s * cry + m * kdotr * ky
            rz = c + s * crz + m * kdotr * kz
        else:
            rx = xi
            ry = yi
            rz = 1.0

        if rz <= MIN_Z:
            continue
        x = rx / rz
        y = ry / rz
        if distorted:
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            x = xd
            y = yd
        ui = fx * x + cx
        vi = fy * y + cy

        if not (ui >= 0.0 and ui <= width - 1.0 and vi >= 0.0 and vi <= height - 1.0):
            continue
        p = p_in[i]
        i0 = <Py_ssize_t>floor(ui)
        j0 = <Py_ssize_t>floor(vi)
        fu = ui - i0
        fv = vi - j0
        i1 = i0 + 1
        j1 = j0 + 1
        if i1 > width - 1:
            i1 = width - 1
        if j1 > height - 1:
            j1 = height - 1
        img[j0, i0] += p * (1.0 - fu) * (1.0 - fv)
        img[j0, i1] += p * fu * (1.0 - fv)
        img[j1, i0] += p * (1.0 - fu) * fv
        img[j1, i1] += p * fu * fv

    return img_arr
