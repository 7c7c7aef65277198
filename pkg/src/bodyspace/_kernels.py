"""Optional numba kernels for the sampling hot path.

The numpy implementations in `tape` stay authoritative; these kernels
compute the same values in the same accumulation order (fastmath stays off)
so results are bit-identical, just without the large broadcast temporaries.
Import failure anywhere here simply disables the fast path.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def trilinear_channel_fwd(grid_ch, pts, bmin, extent, fill):
    """Sample one channel at pts [N, 3]; grid_ch is [X, Y, Z] contiguous.

    Returns (vals [N], inside [N] uint8)."""
    nx, ny, nz = grid_ch.shape
    n = pts.shape[0]
    vals = np.empty(n, dtype=grid_ch.dtype)
    inside = np.empty(n, dtype=np.uint8)
    for i in range(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        if (px < bmin[0] or px > bmin[0] + extent[0]
                or py < bmin[1] or py > bmin[1] + extent[1]
                or pz < bmin[2] or pz > bmin[2] + extent[2]):
            vals[i] = fill
            inside[i] = 0
            continue
        inside[i] = 1
        ux = (px - bmin[0]) / extent[0] * (nx - 1)
        uy = (py - bmin[1]) / extent[1] * (ny - 1)
        uz = (pz - bmin[2]) / extent[2] * (nz - 1)
        ix = min(max(int(ux), 0), nx - 2)
        iy = min(max(int(uy), 0), ny - 2)
        iz = min(max(int(uz), 0), nz - 2)
        fx = ux - ix
        fy = uy - iy
        fz = uz - iz
        acc = 0.0
        for bx in range(2):
            wx = fx if bx == 1 else 1.0 - fx
            for by in range(2):
                wy = fy if by == 1 else 1.0 - fy
                for bz in range(2):
                    wz = fz if bz == 1 else 1.0 - fz
                    acc += grid_ch[ix + bx, iy + by, iz + bz] * (wx * wy * wz)
        vals[i] = acc
    return vals, inside


@njit(cache=True)
def trilinear_channel_bwd(grid_ch, pts, bmin, extent, gout, want_grid, want_pts):
    """Gradients of the forward sample: (ggrid [X, Y, Z], gpts [N, 3])."""
    nx, ny, nz = grid_ch.shape
    n = pts.shape[0]
    ggrid = np.zeros_like(grid_ch)
    gpts = np.zeros((n, 3), dtype=grid_ch.dtype)
    sx = (nx - 1) / extent[0]
    sy = (ny - 1) / extent[1]
    sz = (nz - 1) / extent[2]
    for i in range(n):
        g = gout[i]
        if g == 0.0:
            continue
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        if (px < bmin[0] or px > bmin[0] + extent[0]
                or py < bmin[1] or py > bmin[1] + extent[1]
                or pz < bmin[2] or pz > bmin[2] + extent[2]):
            continue
        ux = (px - bmin[0]) * sx
        uy = (py - bmin[1]) * sy
        uz = (pz - bmin[2]) * sz
        ix = min(max(int(ux), 0), nx - 2)
        iy = min(max(int(uy), 0), ny - 2)
        iz = min(max(int(uz), 0), nz - 2)
        fx = ux - ix
        fy = uy - iy
        fz = uz - iz
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for bx in range(2):
            wx = fx if bx == 1 else 1.0 - fx
            dx = 1.0 if bx == 1 else -1.0
            for by in range(2):
                wy = fy if by == 1 else 1.0 - fy
                dy = 1.0 if by == 1 else -1.0
                for bz in range(2):
                    wz = fz if bz == 1 else 1.0 - fz
                    dz = 1.0 if bz == 1 else -1.0
                    corner = grid_ch[ix + bx, iy + by, iz + bz]
                    if want_grid:
                        ggrid[ix + bx, iy + by, iz + bz] += g * (wx * wy * wz)
                    if want_pts:
                        gx += g * corner * dx * wy * wz
                        gy += g * corner * wx * dy * wz
                        gz += g * corner * wx * wy * dz
        if want_pts:
            gpts[i, 0] = gx * sx
            gpts[i, 1] = gy * sy
            gpts[i, 2] = gz * sz
    return ggrid, gpts
