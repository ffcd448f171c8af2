"""Pure-numpy implementations of the hot per-pixel kernels.

This is the fallback backend used when the compiled extension is not
available (or is disabled via CROWDVISION_PURE_KERNELS=1).  Both backends
expose the same functions with identical semantics; parity is enforced by
tests/test_kernels.py.
"""
from __future__ import annotations

from collections import deque

import numpy as np

NAME = "pure"


def median_filter(img: np.ndarray, radius: int) -> np.ndarray:
    """Windowed median with replicated borders over a (2r+1)^2 window."""
    if radius == 0:
        return img.copy()
    h, w = img.shape
    k = 2 * radius + 1
    padded = np.pad(img, radius, mode="edge")
    windows = np.empty((k * k, h, w), dtype=img.dtype)
    i = 0
    for dy in range(k):
        for dx in range(k):
            windows[i] = padded[dy : dy + h, dx : dx + w]
            i += 1
    return np.median(windows, axis=0)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion by the (2r+1)x(2r+1) square; out-of-bounds is background."""
    h, w = mask.shape
    k = 2 * radius + 1
    padded = np.pad(mask.astype(bool), radius, mode="constant", constant_values=False)
    out = np.ones((h, w), dtype=bool)
    for dy in range(k):
        for dx in range(k):
            out &= padded[dy : dy + h, dx : dx + w]
    return out.astype(np.uint8)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by the (2r+1)x(2r+1) square; out-of-bounds is background."""
    h, w = mask.shape
    k = 2 * radius + 1
    padded = np.pad(mask.astype(bool), radius, mode="constant", constant_values=False)
    out = np.zeros((h, w), dtype=bool)
    for dy in range(k):
        for dx in range(k):
            out |= padded[dy : dy + h, dx : dx + w]
    return out.astype(np.uint8)


def label_components(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Label connected regions of set pixels.

    Labels are assigned in row-major order of each region's first pixel,
    starting at 1.  Returns (labels, count).
    """
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if connectivity == 8:
        offsets = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    else:
        offsets = ((-1, 0), (0, -1), (0, 1), (1, 0))
    bits = mask.astype(bool)
    count = 0
    for sy in range(h):
        for sx in range(w):
            if not bits[sy, sx] or labels[sy, sx]:
                continue
            count += 1
            queue = deque([(sy, sx)])
            labels[sy, sx] = count
            while queue:
                y, x = queue.popleft()
                for dy, dx in offsets:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = count
                        queue.append((ny, nx))
    return labels, count


def _neighbor_avg(a: np.ndarray) -> np.ndarray:
    # 1/6 cardinal + 1/12 diagonal weighting, borders replicated
    p = np.pad(a, 1, mode="edge")
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 6.0 + (
        p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    ) / 12.0


def hs_solve(
    ix: np.ndarray,
    iy: np.ndarray,
    it: np.ndarray,
    alpha: float,
    iterations: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobi relaxation of the Horn-Schunck update from zero flow.

    Stops early when the mean per-pixel update magnitude drops below tol
    (tol <= 0 disables the early stop).
    """
    h, w = ix.shape
    u = np.zeros((h, w), dtype=np.float64)
    v = np.zeros((h, w), dtype=np.float64)
    denom = alpha * alpha + ix * ix + iy * iy
    n = float(h * w)
    for _ in range(iterations):
        ubar = _neighbor_avg(u)
        vbar = _neighbor_avg(v)
        t = (ix * ubar + iy * vbar + it) / denom
        un = ubar - ix * t
        vn = vbar - iy * t
        if tol > 0.0:
            delta = float(np.sum(np.hypot(un - u, vn - v))) / n
            u, v = un, vn
            if delta < tol:
                break
        else:
            u, v = un, vn
    return u, v


def gmm_update(
    means: np.ndarray,
    variances: np.ndarray,
    weights: np.ndarray,
    frame: np.ndarray,
    learning_rate: float,
    match_sigma: float,
    background_ratio: float,
    variance_floor: float,
    initial_variance: float,
    initial_weight: float,
) -> np.ndarray:
    """One adaptive-mixture background update; arrays are (h, w, K), updated in place.

    Components are kept sorted by weight/stddev descending.  Returns the
    foreground mask as uint8.
    """
    lr = learning_rate
    x = frame[..., None]
    std = np.sqrt(variances)
    matchable = (np.abs(x - means) <= match_sigma * std) & (weights > 0.0)
    matched = matchable.any(axis=-1)
    first = matchable.argmax(axis=-1)

    onehot = np.zeros(weights.shape, dtype=bool)
    np.put_along_axis(onehot, first[..., None], matched[..., None], axis=-1)
    weakest = weights.argmin(axis=-1)
    replace = np.zeros(weights.shape, dtype=bool)
    np.put_along_axis(replace, weakest[..., None], (~matched)[..., None], axis=-1)

    w_new = np.where(
        matched[..., None], (1.0 - lr) * weights + lr * onehot, np.where(replace, initial_weight, weights)
    )
    m_new = np.where(onehot, (1.0 - lr) * means + lr * x, np.where(replace, x, means))
    v_new = np.where(
        onehot,
        (1.0 - lr) * variances + lr * (x - m_new) ** 2,
        np.where(replace, initial_variance, variances),
    )
    v_new = np.maximum(v_new, variance_floor)
    w_new = w_new / w_new.sum(axis=-1, keepdims=True)

    order = np.argsort(-w_new / np.sqrt(v_new), axis=-1, kind="stable")
    np.copyto(weights, np.take_along_axis(w_new, order, axis=-1))
    np.copyto(means, np.take_along_axis(m_new, order, axis=-1))
    np.copyto(variances, np.take_along_axis(v_new, order, axis=-1))

    # first B sorted components with cumulative weight above the ratio are background
    b_count = (np.cumsum(weights, axis=-1) > background_ratio).argmax(axis=-1) + 1
    position = np.argsort(order, axis=-1, kind="stable")
    matched_pos = np.take_along_axis(position, first[..., None], axis=-1)[..., 0]
    background = matched & (matched_pos < b_count)
    return (~background).astype(np.uint8)


def advect_step(
    u: np.ndarray, v: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One explicit-Euler step: move points by bilinearly sampled flow, clamped to bounds."""
    h, w = u.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    du = (u[y0, x0] * (1.0 - fx) + u[y0, x1] * fx) * (1.0 - fy) + (
        u[y1, x0] * (1.0 - fx) + u[y1, x1] * fx
    ) * fy
    dv = (v[y0, x0] * (1.0 - fx) + v[y0, x1] * fx) * (1.0 - fy) + (
        v[y1, x0] * (1.0 - fx) + v[y1, x1] * fx
    ) * fy
    nx = np.clip(xs + du, 0.0, w - 1.0)
    ny = np.clip(ys + dv, 0.0, h - 1.0)
    return nx, ny


def lcss_length(
    ax: np.ndarray,
    ay: np.ndarray,
    bx: np.ndarray,
    by: np.ndarray,
    eps: float,
    delta: int,
) -> int:
    """Longest common subsequence length; points match within eps in both
    coordinates and within delta in index offset."""
    n = len(ax)
    m = len(bx)
    prev = np.zeros(m + 1, dtype=np.int64)
    idx = np.arange(m)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        match = (np.abs(ax[i] - bx) <= eps) & (np.abs(ay[i] - by) <= eps) & (np.abs(idx - i) <= delta)
        cand = np.maximum(prev[1:], np.where(match, prev[:-1] + 1, 0))
        cur[1:] = np.maximum.accumulate(cand)
        prev, cur = cur, prev
    return int(prev[m])
