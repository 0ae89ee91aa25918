# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: DTW dynamic programs and HMM recursions.

Every function here has a drop-in twin in ``_kernels_py`` with identical
signatures and semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, INFINITY

cnp.import_array()


cdef inline double _local_cost(const double[:, ::1] a, const double[:, ::1] b,
                               Py_ssize_t i, Py_ssize_t j, Py_ssize_t d) nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t k
    for k in range(d):
        diff = a[i, k] - b[j, k]
        acc += diff * diff
    return sqrt(acc)


cdef inline double _min3(double x, double y, double z) nogil:
    if y < x:
        x = y
    if z < x:
        x = z
    return x


def dtw_distance(a, b):
    """Accumulated cost of the optimal full-band alignment of ``a`` and ``b``."""
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t la = av.shape[0], lb = bv.shape[0], d = av.shape[1]
    if bv.shape[1] != d:
        raise ValueError("sequences must share their feature dimension")
    if la == 0 or lb == 0:
        raise ValueError("sequences must be non-empty")
    cdef double[::1] prev = np.empty(lb, dtype=np.float64)
    cdef double[::1] cur = np.empty(lb, dtype=np.float64)
    cdef double[::1] tmp
    cdef Py_ssize_t i, j
    with nogil:
        prev[0] = _local_cost(av, bv, 0, 0, d)
        for j in range(1, lb):
            prev[j] = prev[j - 1] + _local_cost(av, bv, 0, j, d)
        for i in range(1, la):
            cur[0] = prev[0] + _local_cost(av, bv, i, 0, d)
            for j in range(1, lb):
                cur[j] = _local_cost(av, bv, i, j, d) + _min3(prev[j - 1], prev[j], cur[j - 1])
            tmp = prev
            prev = cur
            cur = tmp
    return float(prev[lb - 1])


def dtw_path(a, b):
    """Optimal alignment path and its cost.

    Returns ``(path, cost)`` where ``path`` is an ``(L, 2)`` int array of
    index pairs from ``(0, 0)`` to ``(la - 1, lb - 1)``. Backtracking prefers
    the diagonal, then the ``a``-advance, then the ``b``-advance step.
    """
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t la = av.shape[0], lb = bv.shape[0], d = av.shape[1]
    if bv.shape[1] != d:
        raise ValueError("sequences must share their feature dimension")
    if la == 0 or lb == 0:
        raise ValueError("sequences must be non-empty")
    acc_np = np.empty((la, lb), dtype=np.float64)
    cdef double[:, ::1] acc = acc_np
    cdef Py_ssize_t i, j, n
    cdef double diag, up, left
    with nogil:
        acc[0, 0] = _local_cost(av, bv, 0, 0, d)
        for j in range(1, lb):
            acc[0, j] = acc[0, j - 1] + _local_cost(av, bv, 0, j, d)
        for i in range(1, la):
            acc[i, 0] = acc[i - 1, 0] + _local_cost(av, bv, i, 0, d)
            for j in range(1, lb):
                acc[i, j] = _local_cost(av, bv, i, j, d) + _min3(
                    acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    path_np = np.empty((la + lb - 1, 2), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] path = path_np
    i = la - 1
    j = lb - 1
    n = 0
    with nogil:
        while True:
            path[n, 0] = i
            path[n, 1] = j
            n += 1
            if i == 0 and j == 0:
                break
            if i == 0:
                j -= 1
            elif j == 0:
                i -= 1
            else:
                diag = acc[i - 1, j - 1]
                up = acc[i - 1, j]
                left = acc[i, j - 1]
                if diag <= up and diag <= left:
                    i -= 1
                    j -= 1
                elif up <= left:
                    i -= 1
                else:
                    j -= 1
    return path_np[:n][::-1].copy(), float(acc[la - 1, lb - 1])


def forward_backward(log_emission, transmat, startprob):
    """Scaled forward-backward pass.

    Returns ``(gamma, xi_sum, loglik)``; ``gamma`` is ``(T, N)`` with rows
    summing to one, ``xi_sum`` is the ``(N, N)`` expected transition count.
    ``loglik`` is ``-inf`` when the sequence has zero probability under the
    model, in which case ``gamma`` and ``xi_sum`` are meaningless.
    """
    logb_np = np.ascontiguousarray(log_emission, dtype=np.float64)
    cdef const double[:, ::1] A = np.ascontiguousarray(transmat, dtype=np.float64)
    cdef const double[::1] pi = np.ascontiguousarray(startprob, dtype=np.float64)
    cdef Py_ssize_t T = logb_np.shape[0], N = logb_np.shape[1]
    shift_np = logb_np.max(axis=1)
    cdef const double[::1] shift = shift_np
    b_np = np.exp(logb_np - shift_np[:, None])
    cdef const double[:, ::1] B = b_np
    alpha_np = np.zeros((T, N), dtype=np.float64)
    beta_np = np.zeros((T, N), dtype=np.float64)
    scale_np = np.zeros(T, dtype=np.float64)
    xi_np = np.zeros((N, N), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np
    cdef double[::1] scale = scale_np
    cdef double[:, ::1] xi = xi_np
    cdef Py_ssize_t t, i, j
    cdef double s, acc, w
    cdef bint zero = False
    if not np.all(np.isfinite(shift_np)):
        return alpha_np, xi_np, -np.inf
    with nogil:
        s = 0.0
        for i in range(N):
            alpha[0, i] = pi[i] * B[0, i]
            s += alpha[0, i]
        scale[0] = s
        if s <= 0.0:
            zero = True
        else:
            for i in range(N):
                alpha[0, i] /= s
            for t in range(1, T):
                s = 0.0
                for j in range(N):
                    acc = 0.0
                    for i in range(N):
                        acc += alpha[t - 1, i] * A[i, j]
                    alpha[t, j] = acc * B[t, j]
                    s += alpha[t, j]
                scale[t] = s
                if s <= 0.0:
                    zero = True
                    break
                for j in range(N):
                    alpha[t, j] /= s
    if zero:
        return alpha_np, xi_np, -np.inf
    with nogil:
        for i in range(N):
            beta[T - 1, i] = 1.0
        for t in range(T - 2, -1, -1):
            for i in range(N):
                acc = 0.0
                for j in range(N):
                    acc += A[i, j] * B[t + 1, j] * beta[t + 1, j]
                beta[t, i] = acc / scale[t + 1]
        for t in range(T - 1):
            for i in range(N):
                if alpha[t, i] == 0.0:
                    continue
                w = alpha[t, i] / scale[t + 1]
                for j in range(N):
                    xi[i, j] += w * A[i, j] * B[t + 1, j] * beta[t + 1, j]
    gamma = alpha_np * beta_np
    gamma /= gamma.sum(axis=1, keepdims=True)
    loglik = float(np.log(scale_np).sum() + shift_np.sum())
    return gamma, xi_np, loglik


def viterbi(log_emission, log_transmat, log_startprob):
    """Most probable state path in log space; ties go to the lower state index."""
    cdef const double[:, ::1] logb = np.ascontiguousarray(log_emission, dtype=np.float64)
    cdef const double[:, ::1] logA = np.ascontiguousarray(log_transmat, dtype=np.float64)
    cdef const double[::1] logpi = np.ascontiguousarray(log_startprob, dtype=np.float64)
    cdef Py_ssize_t T = logb.shape[0], N = logb.shape[1]
    delta_np = np.empty((T, N), dtype=np.float64)
    psi_np = np.zeros((T, N), dtype=np.intp)
    path_np = np.empty(T, dtype=np.intp)
    cdef double[:, ::1] delta = delta_np
    cdef Py_ssize_t[:, ::1] psi = psi_np
    cdef Py_ssize_t[::1] path = path_np
    cdef Py_ssize_t t, i, j, best_i
    cdef double best, cand
    with nogil:
        for i in range(N):
            delta[0, i] = logpi[i] + logb[0, i]
        for t in range(1, T):
            for j in range(N):
                best = -INFINITY
                best_i = 0
                for i in range(N):
                    cand = delta[t - 1, i] + logA[i, j]
                    if cand > best:
                        best = cand
                        best_i = i
                delta[t, j] = best + logb[t, j]
                psi[t, j] = best_i
        best = -INFINITY
        best_i = 0
        for i in range(N):
            if delta[T - 1, i] > best:
                best = delta[T - 1, i]
                best_i = i
        path[T - 1] = best_i
        for t in range(T - 1, 0, -1):
            path[t - 1] = psi[t, path[t]]
    return path_np, float(best)
