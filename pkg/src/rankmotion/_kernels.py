"""Compiled per-voxel loops for the hot paths.

All loops run sequentially in index order, so results do not depend on the
thread count of the caller.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pull_back(arrays, disp, inv_spacing):
    """Trilinear samples of each of ``arrays`` at ``index + disp * inv_spacing``.

    ``arrays`` is ``(k, nx, ny, nz)``, ``disp`` is ``(3, nx, ny, nz)`` in mm.
    Sample positions are clamped to the grid.
    """
    k, nx, ny, nz = arrays.shape
    out = np.empty_like(arrays)
    for i in range(nx):
        for j in range(ny):
            for l in range(nz):
                px = min(max(i + disp[0, i, j, l] * inv_spacing[0], 0.0), nx - 1.0)
                py = min(max(j + disp[1, i, j, l] * inv_spacing[1], 0.0), ny - 1.0)
                pz = min(max(l + disp[2, i, j, l] * inv_spacing[2], 0.0), nz - 1.0)
                x0 = min(int(px), nx - 2)
                y0 = min(int(py), ny - 2)
                z0 = min(int(pz), nz - 2)
                fx = px - x0
                fy = py - y0
                fz = pz - z0
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                for c in range(k):
                    a = arrays[c]
                    out[c, i, j, l] = (
                        gx * (gy * (gz * a[x0, y0, z0] + fz * a[x0, y0, z0 + 1])
                              + fy * (gz * a[x0, y0 + 1, z0] + fz * a[x0, y0 + 1, z0 + 1]))
                        + fx * (gy * (gz * a[x0 + 1, y0, z0] + fz * a[x0 + 1, y0, z0 + 1])
                                + fy * (gz * a[x0 + 1, y0 + 1, z0] + fz * a[x0 + 1, y0 + 1, z0 + 1])))
    return out


@njit(cache=True, nogil=True, inline="always")
def _dx(a, i, j, l, n, h):
    # central inside, one-sided at the faces (matches np.gradient edge_order=1)
    if i == 0:
        return (a[1, j, l] - a[0, j, l]) / h
    if i == n - 1:
        return (a[n - 1, j, l] - a[n - 2, j, l]) / h
    return (a[i + 1, j, l] - a[i - 1, j, l]) / (2.0 * h)


@njit(cache=True, nogil=True, inline="always")
def _dy(a, i, j, l, n, h):
    if j == 0:
        return (a[i, 1, l] - a[i, 0, l]) / h
    if j == n - 1:
        return (a[i, n - 1, l] - a[i, n - 2, l]) / h
    return (a[i, j + 1, l] - a[i, j - 1, l]) / (2.0 * h)


@njit(cache=True, nogil=True, inline="always")
def _dz(a, i, j, l, n, h):
    if l == 0:
        return (a[i, j, 1] - a[i, j, 0]) / h
    if l == n - 1:
        return (a[i, j, n - 1] - a[i, j, n - 2]) / h
    return (a[i, j, l + 1] - a[i, j, l - 1]) / (2.0 * h)


@njit(cache=True, nogil=True)
def gradient(a, spacing):
    nx, ny, nz = a.shape
    hx, hy, hz = spacing[0], spacing[1], spacing[2]
    out = np.empty((3, nx, ny, nz))
    for i in range(nx):
        for j in range(ny):
            for l in range(nz):
                out[0, i, j, l] = _dx(a, i, j, l, nx, hx)
                out[1, i, j, l] = _dy(a, i, j, l, ny, hy)
                out[2, i, j, l] = _dz(a, i, j, l, nz, hz)
    return out


@njit(cache=True, nogil=True)
def jacobian_det(u, spacing):
    _, nx, ny, nz = u.shape
    hx, hy, hz = spacing[0], spacing[1], spacing[2]
    ux, uy, uz = u[0], u[1], u[2]
    out = np.empty((nx, ny, nz))
    for i in range(nx):
        for j in range(ny):
            for l in range(nz):
                a00 = 1.0 + _dx(ux, i, j, l, nx, hx)
                a01 = _dy(ux, i, j, l, ny, hy)
                a02 = _dz(ux, i, j, l, nz, hz)
                a10 = _dx(uy, i, j, l, nx, hx)
                a11 = 1.0 + _dy(uy, i, j, l, ny, hy)
                a12 = _dz(uy, i, j, l, nz, hz)
                a20 = _dx(uz, i, j, l, nx, hx)
                a21 = _dy(uz, i, j, l, ny, hy)
                a22 = 1.0 + _dz(uz, i, j, l, nz, hz)
                out[i, j, l] = (a00 * (a11 * a22 - a12 * a21)
                                - a01 * (a10 * a22 - a12 * a20)
                                + a02 * (a10 * a21 - a11 * a20))
    return out


@njit(cache=True, nogil=True)
def gram(rows, slab):
    """``rows @ rows.T`` from per-slab partial sums combined in order."""
    m, n = rows.shape
    out = np.zeros((m, m))
    for start in range(0, n, slab):
        stop = min(start + slab, n)
        for a in range(m):
            ra = rows[a]
            for b in range(a, m):
                rb = rows[b]
                # four interleaved accumulators, fixed combination order
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                s3 = 0.0
                t = start
                while t + 3 < stop:
                    s0 += ra[t] * rb[t]
                    s1 += ra[t + 1] * rb[t + 1]
                    s2 += ra[t + 2] * rb[t + 2]
                    s3 += ra[t + 3] * rb[t + 3]
                    t += 4
                while t < stop:
                    s0 += ra[t] * rb[t]
                    t += 1
                out[a, b] += (s0 + s1) + (s2 + s3)
    for a in range(m):
        for b in range(a):
            out[a, b] = out[b, a]
    return out
