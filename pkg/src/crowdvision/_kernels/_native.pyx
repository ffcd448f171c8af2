# Compiled implementations of the hot per-pixel kernels.
# Semantics must match _kernels/pure.py exactly; see tests/test_kernels.py.

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

NAME = "native"


def median_filter(double[:, :] img, int radius):
    cdef int h = img.shape[0]
    cdef int w = img.shape[1]
    cdef int k = 2 * radius + 1
    cdef int win = k * k
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef double[::1] buf = np.empty(win, dtype=np.float64)
    cdef int y, x, dy, dx, yy, xx, i, j
    cdef double val
    if radius == 0:
        out_arr[:, :] = img
        return out_arr
    for y in range(h):
        for x in range(w):
            i = 0
            for dy in range(-radius, radius + 1):
                yy = y + dy
                if yy < 0:
                    yy = 0
                elif yy >= h:
                    yy = h - 1
                for dx in range(-radius, radius + 1):
                    xx = x + dx
                    if xx < 0:
                        xx = 0
                    elif xx >= w:
                        xx = w - 1
                    buf[i] = img[yy, xx]
                    i += 1
            # insertion sort; window is small
            for i in range(1, win):
                val = buf[i]
                j = i - 1
                while j >= 0 and buf[j] > val:
                    buf[j + 1] = buf[j]
                    j -= 1
                buf[j + 1] = val
            out[y, x] = buf[win // 2]
    return out_arr


def erode(cnp.uint8_t[:, :] mask, int radius):
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] out = out_arr
    cdef int y, x, dy, dx, yy, xx
    cdef bint keep
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            keep = True
            for dy in range(-radius, radius + 1):
                yy = y + dy
                for dx in range(-radius, radius + 1):
                    xx = x + dx
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or not mask[yy, xx]:
                        keep = False
                        break
                if not keep:
                    break
            if keep:
                out[y, x] = 1
    return out_arr


def dilate(cnp.uint8_t[:, :] mask, int radius):
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] out = out_arr
    cdef int y, x, dy, dx, yy, xx
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy in range(-radius, radius + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-radius, radius + 1):
                    xx = x + dx
                    if 0 <= xx < w:
                        out[yy, xx] = 1
    return out_arr


def label_components(cnp.uint8_t[:, :] mask, int connectivity):
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, :] labels = labels_arr
    cdef cnp.int64_t[::1] queue = np.empty(h * w, dtype=np.int64)
    cdef int noff
    cdef int[8] doy
    cdef int[8] dox
    if connectivity == 8:
        noff = 8
        doy[0] = -1; dox[0] = -1
        doy[1] = -1; dox[1] = 0
        doy[2] = -1; dox[2] = 1
        doy[3] = 0; dox[3] = -1
        doy[4] = 0; dox[4] = 1
        doy[5] = 1; dox[5] = -1
        doy[6] = 1; dox[6] = 0
        doy[7] = 1; dox[7] = 1
    else:
        noff = 4
        doy[0] = -1; dox[0] = 0
        doy[1] = 0; dox[1] = -1
        doy[2] = 0; dox[2] = 1
        doy[3] = 1; dox[3] = 0
    cdef int count = 0
    cdef int sy, sx, y, x, ny, nx, i
    cdef Py_ssize_t head, tail
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx]:
                continue
            count += 1
            labels[sy, sx] = count
            head = 0
            tail = 0
            queue[tail] = sy * w + sx
            tail += 1
            while head < tail:
                y = <int>(queue[head] // w)
                x = <int>(queue[head] % w)
                head += 1
                for i in range(noff):
                    ny = y + doy[i]
                    nx = x + dox[i]
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = count
                        queue[tail] = ny * w + nx
                        tail += 1
    return labels_arr, count


cdef inline double _avg_at(double[:, :] a, int y, int x, int h, int w):
    cdef int yu = y - 1 if y > 0 else 0
    cdef int yd = y + 1 if y < h - 1 else h - 1
    cdef int xl = x - 1 if x > 0 else 0
    cdef int xr = x + 1 if x < w - 1 else w - 1
    return (a[yu, x] + a[yd, x] + a[y, xl] + a[y, xr]) / 6.0 + (
        a[yu, xl] + a[yu, xr] + a[yd, xl] + a[yd, xr]
    ) / 12.0


def hs_solve(double[:, :] ix, double[:, :] iy, double[:, :] it,
             double alpha, int iterations, double tol):
    cdef int h = ix.shape[0]
    cdef int w = ix.shape[1]
    u_arr = np.zeros((h, w), dtype=np.float64)
    v_arr = np.zeros((h, w), dtype=np.float64)
    un_arr = np.zeros((h, w), dtype=np.float64)
    vn_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :] u = u_arr
    cdef double[:, :] v = v_arr
    cdef double[:, :] un = un_arr
    cdef double[:, :] vn = vn_arr
    cdef double[:, :] tmp
    cdef int y, x, k
    cdef double ubar, vbar, t, denom, acc, du, dv
    cdef double n = <double>(h * w)
    cdef bint swapped = False
    for k in range(iterations):
        acc = 0.0
        for y in range(h):
            for x in range(w):
                ubar = _avg_at(u, y, x, h, w)
                vbar = _avg_at(v, y, x, h, w)
                denom = alpha * alpha + ix[y, x] * ix[y, x] + iy[y, x] * iy[y, x]
                t = (ix[y, x] * ubar + iy[y, x] * vbar + it[y, x]) / denom
                un[y, x] = ubar - ix[y, x] * t
                vn[y, x] = vbar - iy[y, x] * t
                if tol > 0.0:
                    du = un[y, x] - u[y, x]
                    dv = vn[y, x] - v[y, x]
                    acc += sqrt(du * du + dv * dv)
        tmp = u; u = un; un = tmp
        tmp = v; v = vn; vn = tmp
        swapped = not swapped
        if tol > 0.0 and acc / n < tol:
            break
    if swapped:
        return un_arr, vn_arr
    return u_arr, v_arr


def gmm_update(double[:, :, :] means, double[:, :, :] variances, double[:, :, :] weights,
               double[:, :] frame, double learning_rate, double match_sigma,
               double background_ratio, double variance_floor,
               double initial_variance, double initial_weight):
    cdef int h = means.shape[0]
    cdef int w = means.shape[1]
    cdef int K = means.shape[2]
    fg_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] fg = fg_arr
    cdef double lr = learning_rate
    cdef int y, x, k, j, matched, weakest, pos, b
    cdef double xv, total, cum, val_w, val_m, val_v, ratio_j
    cdef double[8] wloc
    cdef double[8] mloc
    cdef double[8] vloc
    cdef double[8] ratio
    cdef int[8] order
    cdef int oi
    for y in range(h):
        for x in range(w):
            xv = frame[y, x]
            matched = -1
            for k in range(K):
                if weights[y, x, k] > 0.0 and fabs(xv - means[y, x, k]) <= match_sigma * sqrt(variances[y, x, k]):
                    matched = k
                    break
            if matched >= 0:
                for k in range(K):
                    weights[y, x, k] = (1.0 - lr) * weights[y, x, k] + (lr if k == matched else 0.0)
                means[y, x, matched] = (1.0 - lr) * means[y, x, matched] + lr * xv
                variances[y, x, matched] = (1.0 - lr) * variances[y, x, matched] + lr * (
                    xv - means[y, x, matched]
                ) * (xv - means[y, x, matched])
            else:
                weakest = 0
                for k in range(1, K):
                    if weights[y, x, k] < weights[y, x, weakest]:
                        weakest = k
                weights[y, x, weakest] = initial_weight
                means[y, x, weakest] = xv
                variances[y, x, weakest] = initial_variance
            total = 0.0
            for k in range(K):
                if variances[y, x, k] < variance_floor:
                    variances[y, x, k] = variance_floor
                total += weights[y, x, k]
            for k in range(K):
                weights[y, x, k] = weights[y, x, k] / total
            # stable insertion sort by weight/stddev descending
            for k in range(K):
                wloc[k] = weights[y, x, k]
                mloc[k] = means[y, x, k]
                vloc[k] = variances[y, x, k]
                ratio[k] = wloc[k] / sqrt(vloc[k])
                order[k] = k
            for k in range(1, K):
                val_w = wloc[k]
                val_m = mloc[k]
                val_v = vloc[k]
                ratio_j = ratio[k]
                oi = order[k]
                j = k - 1
                while j >= 0 and ratio[j] < ratio_j:
                    wloc[j + 1] = wloc[j]
                    mloc[j + 1] = mloc[j]
                    vloc[j + 1] = vloc[j]
                    ratio[j + 1] = ratio[j]
                    order[j + 1] = order[j]
                    j -= 1
                wloc[j + 1] = val_w
                mloc[j + 1] = val_m
                vloc[j + 1] = val_v
                ratio[j + 1] = ratio_j
                order[j + 1] = oi
            pos = -1
            for k in range(K):
                weights[y, x, k] = wloc[k]
                means[y, x, k] = mloc[k]
                variances[y, x, k] = vloc[k]
                if matched >= 0 and order[k] == matched:
                    pos = k
            cum = 0.0
            b = K
            for k in range(K):
                cum += wloc[k]
                if cum > background_ratio:
                    b = k + 1
                    break
            if matched < 0 or pos >= b:
                fg[y, x] = 1
    return fg_arr


def advect_step(double[:, :] u, double[:, :] v, double[::1] xs, double[::1] ys):
    cdef int h = u.shape[0]
    cdef int w = u.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    nx_arr = np.empty(n, dtype=np.float64)
    ny_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] nx = nx_arr
    cdef double[::1] ny = ny_arr
    cdef Py_ssize_t i
    cdef double x, y, fx, fy, du, dv
    cdef int x0, y0, x1, y1
    for i in range(n):
        x = xs[i]
        if x < 0.0:
            x = 0.0
        elif x > w - 1.0:
            x = w - 1.0
        y = ys[i]
        if y < 0.0:
            y = 0.0
        elif y > h - 1.0:
            y = h - 1.0
        x0 = <int>floor(x)
        if x0 > w - 2:
            x0 = w - 2
        if x0 < 0:
            x0 = 0
        y0 = <int>floor(y)
        if y0 > h - 2:
            y0 = h - 2
        if y0 < 0:
            y0 = 0
        x1 = x0 + 1 if x0 + 1 < w else w - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fx = x - x0
        fy = y - y0
        du = (u[y0, x0] * (1.0 - fx) + u[y0, x1] * fx) * (1.0 - fy) + (
            u[y1, x0] * (1.0 - fx) + u[y1, x1] * fx
        ) * fy
        dv = (v[y0, x0] * (1.0 - fx) + v[y0, x1] * fx) * (1.0 - fy) + (
            v[y1, x0] * (1.0 - fx) + v[y1, x1] * fx
        ) * fy
        x = xs[i] + du
        y = ys[i] + dv
        if x < 0.0:
            x = 0.0
        elif x > w - 1.0:
            x = w - 1.0
        if y < 0.0:
            y = 0.0
        elif y > h - 1.0:
            y = h - 1.0
        nx[i] = x
        ny[i] = y
    return nx_arr, ny_arr


def lcss_length(double[::1] ax, double[::1] ay, double[::1] bx, double[::1] by,
                double eps, int delta):
    cdef Py_ssize_t n = ax.shape[0]
    cdef Py_ssize_t m = bx.shape[0]
    prev_arr = np.zeros(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_arr
    cdef cnp.int64_t[::1] cur = cur_arr
    cdef cnp.int64_t[::1] tmp
    cdef Py_ssize_t i, j
    cdef cnp.int64_t cand
    cdef bint match
    for i in range(n):
        for j in range(1, m + 1):
            match = (
                fabs(ax[i] - bx[j - 1]) <= eps
                and fabs(ay[i] - by[j - 1]) <= eps
                and (j - 1 - i if j - 1 >= i else i - (j - 1)) <= delta
            )
            cand = prev[j]
            if match and prev[j - 1] + 1 > cand:
                cand = prev[j - 1] + 1
            if cur[j - 1] > cand:
                cand = cur[j - 1]
            cur[j] = cand
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
