"""numba kernels for isotropic splat compositing.

Splats arrive projected, sorted front to back and packed one per row of a
(n, 9) array with the columns named below: pixel center, squared cutoff
radius (3 pixel radii), Gaussian exponent scale 0.5/s^2, opacity, camera
depth and color. The footprint is truncated, so compositing a splat that
does not reach a pixel is an exact no-op; this is what lets the tiled and
the full-list compositors agree bit for bit.
"""

import numba
import numpy as np
from numba import njit, prange

# omp first: thread-safe when views are rendered from a worker pool, and it
# skips probing an outdated TBB
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

TILE = 16
T_STOP = 1e-4
CUTOFF2 = 9.0  # (3 sigma)^2
U, V, CUT, INV, OP, Z, R, G, B = range(9)
NFIELDS = 9


def pack(u, v, s, z, op, col) -> np.ndarray:
    P = np.empty((len(u), NFIELDS))
    P[:, U] = u
    P[:, V] = v
    P[:, CUT] = CUTOFF2 * (s * s)
    P[:, INV] = 0.5 / (s * s)
    P[:, OP] = op
    P[:, Z] = z
    P[:, R:B + 1] = col
    return P


@njit(cache=True, nogil=True)
def bin_tiles(P, width, height, tile):
    """CSR tile lists: splat indices overlapping each tile, in input order."""
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    n = P.shape[0]
    x0 = np.empty(n, np.int64)
    x1 = np.empty(n, np.int64)
    y0 = np.empty(n, np.int64)
    y1 = np.empty(n, np.int64)
    counts = np.zeros(ntx * nty, np.int64)
    for k in range(n):
        # one pixel of slack keeps the bounds conservative under round-off
        r = np.sqrt(P[k, CUT]) + 1.0
        x0[k] = max(int(np.floor((P[k, U] - r) / tile)), 0)
        x1[k] = min(int(np.floor((P[k, U] + r) / tile)), ntx - 1)
        y0[k] = max(int(np.floor((P[k, V] - r) / tile)), 0)
        y1[k] = min(int(np.floor((P[k, V] + r) / tile)), nty - 1)
        for ty in range(y0[k], y1[k] + 1):
            for tx in range(x0[k], x1[k] + 1):
                counts[ty * ntx + tx] += 1
    offsets = np.zeros(ntx * nty + 1, np.int64)
    for i in range(ntx * nty):
        offsets[i + 1] = offsets[i] + counts[i]
    fill = offsets[:-1].copy()
    items = np.empty(offsets[-1], np.int64)
    for k in range(n):
        for ty in range(y0[k], y1[k] + 1):
            for tx in range(x0[k], x1[k] + 1):
                t = ty * ntx + tx
                items[fill[t]] = k
                fill[t] += 1
    return offsets, items


@njit(cache=True, inline="always")
def _row_gather(py, P, idx, rows, rk):
    """Copy the splats of ``idx`` that can reach pixel row ``py`` into ``rows``.

    Dropping a splat with dy^2 > cut is exact: d^2 = dx^2 + dy^2 is then
    above the cutoff as well, so the splat would be skipped anyway.
    """
    n = 0
    for j in range(idx.shape[0]):
        k = idx[j]
        dy = py - P[k, V]
        if dy * dy > P[k, CUT]:
            continue
        for f in range(NFIELDS):
            rows[n, f] = P[k, f]
        rk[n] = k
        n += 1
    return n


@njit(cache=True, inline="always")
def _composite_pixel(px, py, rows, n, out):
    """Composite ``rows[:n]`` at one pixel: color, silhouette, depth sum into out[0:5]."""
    T = 1.0
    c0 = 0.0
    c1 = 0.0
    c2 = 0.0
    S = 0.0
    Zs = 0.0
    for j in range(n):
        dx = px - rows[j, U]
        dy = py - rows[j, V]
        d2 = dx * dx + dy * dy
        if d2 > rows[j, CUT]:
            continue
        a = rows[j, OP] * np.exp(-d2 * rows[j, INV])
        w = a * T
        c0 += rows[j, R] * w
        c1 += rows[j, G] * w
        c2 += rows[j, B] * w
        S += w
        Zs += rows[j, Z] * w
        T = T * (1.0 - a)
        if T < T_STOP:
            break
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = S
    out[4] = Zs


@njit(cache=True, nogil=True, parallel=True)
def forward_tiled(P, width, height, tile, offsets, items):
    color = np.zeros((height, width, 3))
    zsum = np.zeros((height, width))
    sil = np.zeros((height, width))
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t % ntx
        idx = items[offsets[t]:offsets[t + 1]]
        rows = np.empty((idx.shape[0], NFIELDS))
        rk = np.empty(idx.shape[0], np.int64)
        out = np.zeros(5)
        for py in range(ty * tile, min((ty + 1) * tile, height)):
            n = _row_gather(float(py), P, idx, rows, rk)
            for px in range(tx * tile, min((tx + 1) * tile, width)):
                _composite_pixel(float(px), float(py), rows, n, out)
                color[py, px, 0] = out[0]
                color[py, px, 1] = out[1]
                color[py, px, 2] = out[2]
                sil[py, px] = out[3]
                zsum[py, px] = out[4]
    return color, zsum, sil


@njit(cache=True, nogil=True)
def forward_naive(P, width, height):
    """Reference compositor: every pixel walks the full sorted splat list."""
    color = np.zeros((height, width, 3))
    zsum = np.zeros((height, width))
    sil = np.zeros((height, width))
    out = np.zeros(5)
    n = P.shape[0]
    for py in range(height):
        for px in range(width):
            _composite_pixel(float(px), float(py), P, n, out)
            color[py, px, 0] = out[0]
            color[py, px, 1] = out[1]
            color[py, px, 2] = out[2]
            sil[py, px] = out[3]
            zsum[py, px] = out[4]
    return color, zsum, sil


@njit(cache=True, nogil=True)
def backward_tiled(P, width, height, tile, offsets, items, g_color, g_zsum, g_sil):
    """Gradients of a scalar loss w.r.t. per-splat color (n, 3) and opacity (n,).

    ``g_color``, ``g_zsum`` and ``g_sil`` are the loss gradients w.r.t. the
    composited color, the unnormalized depth sum and the silhouette. Uses
    back-to-front suffix sums, so no division by (1 - alpha) is needed.
    Runs serially over tiles to keep the accumulation order fixed.
    """
    n_splats = P.shape[0]
    grad_col = np.zeros((n_splats, 3))
    grad_op = np.zeros(n_splats)
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for t in range(ntx * nty):
        ty = t // ntx
        tx = t % ntx
        idx = items[offsets[t]:offsets[t + 1]]
        m = idx.shape[0]
        rows = np.empty((m, NFIELDS))
        rk = np.empty(m, np.int64)
        jbuf = np.empty(m, np.int64)
        abuf = np.empty(m)
        gbuf = np.empty(m)
        tbuf = np.empty(m)
        for py in range(ty * tile, min((ty + 1) * tile, height)):
            n = _row_gather(float(py), P, idx, rows, rk)
            fy = float(py)
            for px in range(tx * tile, min((tx + 1) * tile, width)):
                fx = float(px)
                # forward replay, recording the contributing splats
                T = 1.0
                cnt = 0
                for j in range(n):
                    dx = fx - rows[j, U]
                    dy = fy - rows[j, V]
                    d2 = dx * dx + dy * dy
                    if d2 > rows[j, CUT]:
                        continue
                    g = np.exp(-d2 * rows[j, INV])
                    a = rows[j, OP] * g
                    jbuf[cnt] = j
                    abuf[cnt] = a
                    gbuf[cnt] = g
                    tbuf[cnt] = T
                    cnt += 1
                    T = T * (1.0 - a)
                    if T < T_STOP:
                        break
                gc0 = g_color[py, px, 0]
                gc1 = g_color[py, px, 1]
                gc2 = g_color[py, px, 2]
                gz = g_zsum[py, px]
                gs = g_sil[py, px]
                b0 = 0.0
                b1 = 0.0
                b2 = 0.0
                bz = 0.0
                bs = 0.0
                for i in range(cnt - 1, -1, -1):
                    j = jbuf[i]
                    k = rk[j]
                    a = abuf[i]
                    Ti = tbuf[i]
                    w = a * Ti
                    cr = rows[j, R]
                    cg = rows[j, G]
                    cb = rows[j, B]
                    zk = rows[j, Z]
                    grad_col[k, 0] += gc0 * w
                    grad_col[k, 1] += gc1 * w
                    grad_col[k, 2] += gc2 * w
                    ga = Ti * (gc0 * (cr - b0) + gc1 * (cg - b1) + gc2 * (cb - b2)
                               + gz * (zk - bz) + gs * (1.0 - bs))
                    grad_op[k] += ga * gbuf[i]
                    b0 = cr * a + (1.0 - a) * b0
                    b1 = cg * a + (1.0 - a) * b1
                    b2 = cb * a + (1.0 - a) * b2
                    bz = zk * a + (1.0 - a) * bz
                    bs = a + (1.0 - a) * bs
    return grad_col, grad_op
