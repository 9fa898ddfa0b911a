"""Pure-numpy implementations of the hot pixel kernels.

Mirror of the compiled `_kernels_c` extension; `chickface.kernels` picks
whichever is available. Both backends must stay behaviourally identical —
`tests/test_kernels.py` asserts parity.
"""

from __future__ import annotations

import numpy as np

GAUSSIAN_TRUNCATE = 4.0  # window half-width in sigmas; outside is exactly 0


def warp_affine_bilinear(src: np.ndarray, inv_m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Warp `src` with the inverse-mapping 2x3 affine `inv_m` (output -> source).

    Bilinear sampling, zero (black) fill outside the source. `src` is float32
    (H, W) or (H, W, C); returns float32 (out_h, out_w[, C]).
    """
    src = np.ascontiguousarray(src, dtype=np.float32)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    h, w = src.shape[:2]
    a, b, c, d, e, f = (float(v) for v in np.asarray(inv_m, dtype=np.float64).ravel())

    ys, xs = np.meshgrid(np.arange(out_h, dtype=np.float64), np.arange(out_w, dtype=np.float64), indexing="ij")
    sx = a * xs + b * ys + c
    sy = d * xs + e * ys + f

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((out_h, out_w, src.shape[2]), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            vals = src[yi.clip(0, h - 1), xi.clip(0, w - 1), :].astype(np.float64)
            out += np.where(ok[..., None], wgt[..., None] * vals, 0.0)

    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def render_gaussian_heatmaps(points: np.ndarray, visible: np.ndarray, height: int, width: int, sigma: float) -> np.ndarray:
    """Unnormalized Gaussian peaks on a (K, height, width) grid.

    `points` are continuous cell coordinates (x, y); channel k is all-zero
    when visible[k] is falsy. Values beyond GAUSSIAN_TRUNCATE sigmas are
    exactly zero so both backends agree bit-for-bit.
    """
    points = np.asarray(points, dtype=np.float64)
    visible = np.asarray(visible).astype(bool)
    k = points.shape[0]
    out = np.zeros((k, height, width), dtype=np.float32)
    radius = GAUSSIAN_TRUNCATE * sigma
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for i in range(k):
        if not visible[i]:
            continue
        px, py = points[i]
        x0 = max(0, int(np.ceil(px - radius)))
        x1 = min(width - 1, int(np.floor(px + radius)))
        y0 = max(0, int(np.ceil(py - radius)))
        y1 = min(height - 1, int(np.floor(py + radius)))
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - px
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - py
        g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) * inv2s2)
        out[i, y0 : y1 + 1, x0 : x1 + 1] = g.astype(np.float32)
    return out


def decode_peaks(maps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel argmax with quarter-cell offset toward the larger neighbor.

    Returns (coords (K, 2) float64 in continuous cell coordinates including
    the +0.5 cell-center shift, maxvals (K,) float64). Offsets apply only
    when both neighbors exist and differ; row-major first argmax on ties.
    """
    maps = np.asarray(maps, dtype=np.float32)
    k, h, w = maps.shape
    coords = np.zeros((k, 2), dtype=np.float64)
    maxvals = np.zeros(k, dtype=np.float64)
    for ch in range(k):
        flat = int(np.argmax(maps[ch]))
        i, j = divmod(flat, w)
        maxvals[ch] = float(maps[ch, i, j])
        ox = oy = 0.0
        if 0 < j < w - 1:
            right, left = float(maps[ch, i, j + 1]), float(maps[ch, i, j - 1])
            if right > left:
                ox = 0.25
            elif right < left:
                ox = -0.25
        if 0 < i < h - 1:
            down, up = float(maps[ch, i + 1, j]), float(maps[ch, i - 1, j])
            if down > up:
                oy = 0.25
            elif down < up:
                oy = -0.25
        coords[ch, 0] = j + 0.5 + ox
        coords[ch, 1] = i + 0.5 + oy
    return coords, maxvals


def nms_keep(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy NMS. `boxes` are (N, 4) as (x, y, w, h).

    Returns indices of kept boxes ordered by descending score (stable on
    ties). A candidate is suppressed only when IoU with a kept box is
    strictly greater than the threshold.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for idx in order:
        x, y, w, h = boxes[idx]
        suppressed = False
        for kidx in kept:
            if _iou_xywh(x, y, w, h, *boxes[kidx]) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(int(idx))
    return np.asarray(kept, dtype=np.int64)


def _iou_xywh(ax, ay, aw, ah, bx, by, bw, bh) -> float:
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def laplacian_variance(gray: np.ndarray) -> float:
    """Population variance of the 4-neighbor Laplacian over the interior."""
    g = np.asarray(gray, dtype=np.float64)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return 0.0
    lap = g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * g[1:-1, 1:-1]
    return float(lap.var())
