# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic programs for the TSP lab.

Both routines must return exactly what the numpy versions in
``_pykernels`` return: same additions in the same order, strict ``<``
when scanning candidates in ascending index order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


def held_karp(const double[:, ::1] dist):
    """Optimal closed tour starting at city 0 -> (length, order)."""
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t m = n - 1
    cdef Py_ssize_t full = (1 << m) - 1
    cdef Py_ssize_t mask, prev, j, k, best_k
    cdef double best, c
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dp_arr = np.full((full + 1, m), INFINITY)
    cdef cnp.ndarray[cnp.int8_t, ndim=2] par_arr = np.full((full + 1, m), -1, dtype=np.int8)
    cdef double[:, ::1] dp = dp_arr
    cdef cnp.int8_t[:, ::1] parent = par_arr
    with nogil:
        for j in range(m):
            dp[1 << j, j] = dist[0, j + 1]
        for mask in range(1, full + 1):
            if (mask & (mask - 1)) == 0:
                continue
            for j in range(m):
                if not (mask >> j) & 1:
                    continue
                prev = mask ^ (1 << j)
                best = INFINITY
                best_k = -1
                for k in range(m):
                    if (prev >> k) & 1:
                        c = dp[prev, k] + dist[k + 1, j + 1]
                        if c < best:
                            best = c
                            best_k = k
                dp[mask, j] = best
                parent[mask, j] = <cnp.int8_t>best_k
        best = INFINITY
        best_k = -1
        for j in range(m):
            c = dp[full, j] + dist[j + 1, 0]
            if c < best:
                best = c
                best_k = j
    order = np.empty(n, dtype=np.int64)
    order[0] = 0
    mask = full
    j = best_k
    k = n - 1
    while j >= 0:
        order[k] = j + 1
        prev = parent[mask, j]
        mask ^= 1 << j
        j = prev
        k -= 1
    return best, order


def matching(const double[:, ::1] dist):
    """Minimum-weight perfect matching of an even node set -> (cost, pairs)."""
    cdef Py_ssize_t k = dist.shape[0]
    cdef Py_ssize_t full = (1 << k) - 1
    cdef Py_ssize_t mask, i, j, rest, best_j
    cdef double best, c
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f_arr = np.full(full + 1, INFINITY)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] ch_arr = np.full(full + 1, -1, dtype=np.int8)
    cdef double[::1] f = f_arr
    cdef cnp.int8_t[::1] choice = ch_arr
    with nogil:
        f[0] = 0.0
        for mask in range(1, full + 1):
            i = 0
            while not (mask >> i) & 1:
                i += 1
            best = INFINITY
            best_j = -1
            for j in range(i + 1, k):
                if (mask >> j) & 1:
                    rest = mask ^ (1 << i) ^ (1 << j)
                    c = dist[i, j] + f[rest]
                    if c < best:
                        best = c
                        best_j = j
            f[mask] = best
            choice[mask] = <cnp.int8_t>best_j
    pairs = []
    mask = full
    while mask:
        i = 0
        while not (mask >> i) & 1:
            i += 1
        j = choice[mask]
        pairs.append((i, j))
        mask ^= (1 << i) | (1 << j)
    return f[full], pairs


def closed_tour_length(const double[:, ::1] points, const long long[::1] order):
    """Sum of Euclidean edge lengths around the cycle, in tour order."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t t, a, b
    cdef double total = 0.0, dx, dy
    with nogil:
        for t in range(n):
            a = order[t]
            b = order[(t + 1) % n]
            dx = points[a, 0] - points[b, 0]
            dy = points[a, 1] - points[b, 1]
            total += sqrt(dx * dx + dy * dy)
    return total


cdef extern from *:
    """
    #include <math.h>
    /* Fused relu -> batch-norm over rows of a (rows, ch) C-contiguous block.
       restrict is what lets gcc vectorise the per-channel loops. */
    #define RELU_BN_KERNELS(T, SFX)                                                   \
    static void relu_bn_fwd_##SFX(const T *restrict x, long rows, long ch,          \
                                  const T *restrict gamma, const T *restrict beta,  \
                                  double eps, double *restrict mean,                \
                                  double *restrict var, double *restrict scale,     \
                                  double *restrict shift, T *restrict out) {        \
        for (long c = 0; c < ch; c++) { mean[c] = 0.0; var[c] = 0.0; }              \
        for (long r = 0; r < rows; r++) {                                           \
            const T *restrict xp = x + r * ch;                                      \
            for (long c = 0; c < ch; c++) {                                         \
                T v = xp[c] > 0 ? xp[c] : 0;                                        \
                mean[c] += v;                                                       \
            }                                                                       \
        }                                                                           \
        for (long c = 0; c < ch; c++) mean[c] /= rows;                              \
        for (long r = 0; r < rows; r++) {                                           \
            const T *restrict xp = x + r * ch;                                      \
            for (long c = 0; c < ch; c++) {                                         \
                double v = (double)(xp[c] > 0 ? xp[c] : 0) - mean[c];               \
                var[c] += v * v;                                                    \
            }                                                                       \
        }                                                                           \
        for (long c = 0; c < ch; c++) {                                             \
            var[c] /= rows;                                                         \
            double inv = 1.0 / sqrt(var[c] + eps);                                  \
            scale[c] = gamma[c] * inv;                                              \
            shift[c] = beta[c] - mean[c] * gamma[c] * inv;                          \
        }                                                                           \
        for (long r = 0; r < rows; r++) {                                           \
            const T *restrict xp = x + r * ch;                                      \
            T *restrict op = out + r * ch;                                          \
            for (long c = 0; c < ch; c++) {                                         \
                T v = xp[c] > 0 ? xp[c] : 0;                                        \
                op[c] = (T)(v * scale[c] + shift[c]);                               \
            }                                                                       \
        }                                                                           \
    }                                                                               \
    static void relu_bn_bwd_##SFX(const T *restrict x, const T *restrict g,         \
                                  long rows, long ch, const T *restrict gamma,      \
                                  const double *restrict mean,                      \
                                  const double *restrict var, double eps,           \
                                  double *restrict gg, double *restrict gb,         \
                                  double *restrict inv, double *restrict k0,        \
                                  double *restrict k1, double *restrict k2,         \
                                  T *restrict gx) {                                 \
        for (long c = 0; c < ch; c++) {                                             \
            gg[c] = 0.0; gb[c] = 0.0; inv[c] = 1.0 / sqrt(var[c] + eps);            \
        }                                                                           \
        for (long r = 0; r < rows; r++) {                                           \
            const T *restrict xp = x + r * ch;                                      \
            const T *restrict gp = g + r * ch;                                      \
            for (long c = 0; c < ch; c++) {                                         \
                double xhat = ((double)(xp[c] > 0 ? xp[c] : 0) - mean[c]) * inv[c]; \
                gb[c] += gp[c];                                                     \
                gg[c] += gp[c] * xhat;                                              \
            }                                                                       \
        }                                                                           \
        for (long c = 0; c < ch; c++) {                                             \
            k0[c] = gamma[c] * inv[c];                                              \
            k1[c] = gb[c] / rows;                                                   \
            k2[c] = gg[c] / rows;                                                   \
        }                                                                           \
        for (long r = 0; r < rows; r++) {                                           \
            const T *restrict xp = x + r * ch;                                      \
            const T *restrict gp = g + r * ch;                                      \
            T *restrict op = gx + r * ch;                                           \
            for (long c = 0; c < ch; c++) {                                         \
                double xhat = ((double)(xp[c] > 0 ? xp[c] : 0) - mean[c]) * inv[c]; \
                double d = k0[c] * (gp[c] - k1[c] - xhat * k2[c]);                  \
                op[c] = xp[c] > 0 ? (T)d : (T)0;                                    \
            }                                                                       \
        }                                                                           \
    }
    RELU_BN_KERNELS(float, f32)
    RELU_BN_KERNELS(double, f64)
    """
    void relu_bn_fwd_f32(const float *x, long rows, long ch, const float *gamma, const float *beta,
                         double eps, double *mean, double *var, double *scale, double *shift, float *out) nogil
    void relu_bn_fwd_f64(const double *x, long rows, long ch, const double *gamma, const double *beta,
                         double eps, double *mean, double *var, double *scale, double *shift, double *out) nogil
    void relu_bn_bwd_f32(const float *x, const float *g, long rows, long ch, const float *gamma,
                         const double *mean, const double *var, double eps, double *gg, double *gb,
                         double *inv, double *k0, double *k1, double *k2, float *gx) nogil
    void relu_bn_bwd_f64(const double *x, const double *g, long rows, long ch, const double *gamma,
                         const double *mean, const double *var, double eps, double *gg, double *gb,
                         double *inv, double *k0, double *k1, double *k2, double *gx) nogil


ctypedef fused real:
    float
    double


def relu_bn_forward(const real[:, ::1] x, const real[::1] gamma, const real[::1] beta,
                    double eps, real[:, ::1] out):
    """Training-mode batch norm of relu(x) over rows -> (mean, var) per channel."""
    cdef Py_ssize_t rows = x.shape[0], ch = x.shape[1]
    mean_arr = np.empty(ch)
    var_arr = np.empty(ch)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double[::1] scale = np.empty(ch)
    cdef double[::1] shift = np.empty(ch)
    if rows == 0 or ch == 0:
        raise ValueError("relu_bn_forward: empty input")
    with nogil:
        if real is float:
            relu_bn_fwd_f32(&x[0, 0], rows, ch, &gamma[0], &beta[0], eps, &mean[0], &var[0],
                            &scale[0], &shift[0], &out[0, 0])
        else:
            relu_bn_fwd_f64(&x[0, 0], rows, ch, &gamma[0], &beta[0], eps, &mean[0], &var[0],
                            &scale[0], &shift[0], &out[0, 0])
    return mean_arr, var_arr


def relu_bn_backward(const real[:, ::1] x, const real[:, ::1] g, const real[::1] gamma,
                     const double[::1] mean, const double[::1] var, double eps, real[:, ::1] gx):
    """Gradients of relu_bn_forward -> (d gamma, d beta); d x written into ``gx``."""
    cdef Py_ssize_t rows = x.shape[0], ch = x.shape[1]
    gg_arr = np.empty(ch)
    gb_arr = np.empty(ch)
    cdef double[::1] gg = gg_arr
    cdef double[::1] gb = gb_arr
    cdef double[::1] inv = np.empty(ch)
    cdef double[::1] k0 = np.empty(ch)
    cdef double[::1] k1 = np.empty(ch)
    cdef double[::1] k2 = np.empty(ch)
    if rows == 0 or ch == 0:
        raise ValueError("relu_bn_backward: empty input")
    with nogil:
        if real is float:
            relu_bn_bwd_f32(&x[0, 0], &g[0, 0], rows, ch, &gamma[0], &mean[0], &var[0], eps,
                            &gg[0], &gb[0], &inv[0], &k0[0], &k1[0], &k2[0], &gx[0, 0])
        else:
            relu_bn_bwd_f64(&x[0, 0], &g[0, 0], rows, ch, &gamma[0], &mean[0], &var[0], eps,
                            &gg[0], &gb[0], &inv[0], &k0[0], &k1[0], &k2[0], &gx[0, 0])
    return gg_arr, gb_arr
