# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pixel kernels. Behaviour must match `_kernels_py` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor

cnp.import_array()

GAUSSIAN_TRUNCATE = 4.0

DEF GAUSS_TRUNC = 4.0


def warp_affine_bilinear(src, inv_m, int out_h, int out_w):
    """Inverse-mapping bilinear warp; see `_kernels_py.warp_affine_bilinear`."""
    src_arr = np.ascontiguousarray(src, dtype=np.float32)
    squeeze = src_arr.ndim == 2
    if squeeze:
        src_arr = src_arr[:, :, None]
    m = np.asarray(inv_m, dtype=np.float64).ravel()

    cdef float[:, :, ::1] s = src_arr
    cdef double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5]
    cdef int h = s.shape[0], w = s.shape[1], nc = s.shape[2]
    out_arr = np.zeros((out_h, out_w, nc), dtype=np.float32)
    cdef float[:, :, ::1] o = out_arr
    cdef int x, y, ch, x0, y0, x1, y1
    cdef double sx, sy, fx, fy, w00, w01, w10, w11, acc
    cdef bint in00, in01, in10, in11

    for y in range(out_h):
        for x in range(out_w):
            sx = a * x + b * y + c
            sy = d * x + e * y + f
            x0 = <int>floor(sx)
            y0 = <int>floor(sy)
            fx = sx - x0
            fy = sy - y0
            x1 = x0 + 1
            y1 = y0 + 1
            in00 = 0 <= x0 < w and 0 <= y0 < h
            in01 = 0 <= x1 < w and 0 <= y0 < h
            in10 = 0 <= x0 < w and 0 <= y1 < h
            in11 = 0 <= x1 < w and 0 <= y1 < h
            if not (in00 or in01 or in10 or in11):
                continue
            w00 = (1.0 - fx) * (1.0 - fy)
            w01 = fx * (1.0 - fy)
            w10 = (1.0 - fx) * fy
            w11 = fx * fy
            for ch in range(nc):
                acc = 0.0
                if in00:
                    acc += w00 * s[y0, x0, ch]
                if in01:
                    acc += w01 * s[y0, x1, ch]
                if in10:
                    acc += w10 * s[y1, x0, ch]
                if in11:
                    acc += w11 * s[y1, x1, ch]
                o[y, x, ch] = <float>acc

    return out_arr[:, :, 0] if squeeze else out_arr


def render_gaussian_heatmaps(points, visible, int height, int width, double sigma):
    """Truncated Gaussian peaks; see `_kernels_py.render_gaussian_heatmaps`."""
    pts = np.asarray(points, dtype=np.float64)
    vis = np.asarray(visible).astype(np.uint8)
    cdef double[:, ::1] p = np.ascontiguousarray(pts)
    cdef unsigned char[::1] v = np.ascontiguousarray(vis)
    cdef int k = p.shape[0]
    out_arr = np.zeros((k, height, width), dtype=np.float32)
    cdef float[:, :, ::1] o = out_arr
    cdef int i, x, y, x0, x1, y0, y1
    cdef double px, py, radius = GAUSS_TRUNC * sigma
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma), dx, dy

    for i in range(k):
        if not v[i]:
            continue
        px = p[i, 0]
        py = p[i, 1]
        x0 = <int>ceil(px - radius)
        x1 = <int>floor(px + radius)
        y0 = <int>ceil(py - radius)
        y1 = <int>floor(py + radius)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        for y in range(y0, y1 + 1):
            dy = y - py
            for x in range(x0, x1 + 1):
                dx = x - px
                o[i, y, x] = <float>exp(-(dy * dy + dx * dx) * inv2s2)
    return out_arr


def decode_peaks(maps):
    """Argmax + quarter-offset decode; see `_kernels_py.decode_peaks`."""
    arr = np.ascontiguousarray(maps, dtype=np.float32)
    cdef float[:, :, ::1] m = arr
    cdef int k = m.shape[0], h = m.shape[1], w = m.shape[2]
    coords_arr = np.zeros((k, 2), dtype=np.float64)
    maxvals_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] coords = coords_arr
    cdef double[::1] maxvals = maxvals_arr
    cdef int ch, i, j, bi, bj
    cdef float best, val
    cdef double ox, oy

    for ch in range(k):
        best = m[ch, 0, 0]
        bi = 0
        bj = 0
        for i in range(h):
            for j in range(w):
                val = m[ch, i, j]
                if val > best:
                    best = val
                    bi = i
                    bj = j
        maxvals[ch] = best
        ox = 0.0
        oy = 0.0
        if 0 < bj < w - 1:
            if m[ch, bi, bj + 1] > m[ch, bi, bj - 1]:
                ox = 0.25
            elif m[ch, bi, bj + 1] < m[ch, bi, bj - 1]:
                ox = -0.25
        if 0 < bi < h - 1:
            if m[ch, bi + 1, bj] > m[ch, bi - 1, bj]:
                oy = 0.25
            elif m[ch, bi + 1, bj] < m[ch, bi - 1, bj]:
                oy = -0.25
        coords[ch, 0] = bj + 0.5 + ox
        coords[ch, 1] = bi + 0.5 + oy
    return coords_arr, maxvals_arr


cdef inline double _iou_xywh(double ax, double ay, double aw, double ah,
                             double bx, double by, double bw, double bh) nogil:
    cdef double ix = min(ax + aw, bx + bw) - max(ax, bx)
    cdef double iy = min(ay + ah, by + bh) - max(ay, by)
    if ix < 0.0:
        ix = 0.0
    if iy < 0.0:
        iy = 0.0
    cdef double inter = ix * iy
    cdef double union_ = aw * ah + bw * bh - inter
    if union_ <= 0.0:
        return 0.0
    return inter / union_


def nms_keep(boxes, scores, double iou_threshold):
    """Greedy NMS; see `_kernels_py.nms_keep`."""
    b_arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s_arr = np.asarray(scores, dtype=np.float64).ravel()
    order_arr = np.argsort(-s_arr, kind="stable").astype(np.int64)
    cdef double[:, ::1] b = np.ascontiguousarray(b_arr)
    cdef long long[::1] order = np.ascontiguousarray(order_arr)
    cdef int n = b.shape[0]
    kept_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] kept = kept_arr
    cdef int nkept = 0, oi, ki
    cdef long long idx
    cdef bint suppressed

    for oi in range(n):
        idx = order[oi]
        suppressed = False
        for ki in range(nkept):
            if _iou_xywh(b[idx, 0], b[idx, 1], b[idx, 2], b[idx, 3],
                         b[kept[ki], 0], b[kept[ki], 1], b[kept[ki], 2], b[kept[ki], 3]) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept[nkept] = idx
            nkept += 1
    return kept_arr[:nkept].copy()


def laplacian_variance(gray):
    """Variance of the 4-neighbor Laplacian; see `_kernels_py`."""
    g_arr = np.ascontiguousarray(gray, dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef int h = g.shape[0], w = g.shape[1]
    if h < 3 or w < 3:
        return 0.0
    cdef double total = 0.0, total2 = 0.0, lap
    cdef long long n = <long long>(h - 2) * (w - 2)
    cdef int i, j
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            lap = g[i - 1, j] + g[i + 1, j] + g[i, j - 1] + g[i, j + 1] - 4.0 * g[i, j]
            total += lap
            total2 += lap * lap
    cdef double mean = total / n
    return total2 / n - mean * mean
