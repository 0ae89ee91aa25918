"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built or when ``LCPATTERN_PURE_PYTHON`` is set.
Semantics (tie-breaking included) match the compiled twins exactly.
"""

from __future__ import annotations

import numpy as np


def _check_pair(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sequences must share their feature dimension")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sequences must be non-empty")
    return a, b


def _accumulated(a, b):
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    la, lb = cost.shape
    acc = np.full((la + 1, lb + 1), np.inf)
    acc[0, 0] = 0.0
    # anti-diagonal sweep: every cell on diagonal s depends only on s-1 and s-2
    for s in range(2, la + lb + 1):
        i = np.arange(max(1, s - lb), min(la, s - 1) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return acc[1:, 1:]


def dtw_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(_accumulated(a, b)[-1, -1])


def dtw_path(a, b):
    a, b = _check_pair(a, b)
    acc = _accumulated(a, b)
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return np.array(path[::-1], dtype=np.intp), float(acc[-1, -1])


def forward_backward(log_emission, transmat, startprob):
    logb = np.asarray(log_emission, dtype=np.float64)
    A = np.asarray(transmat, dtype=np.float64)
    pi = np.asarray(startprob, dtype=np.float64)
    T, N = logb.shape
    alpha = np.zeros((T, N))
    xi = np.zeros((N, N))
    shift = logb.max(axis=1)
    if not np.all(np.isfinite(shift)):
        return alpha, xi, -np.inf
    B = np.exp(logb - shift[:, None])
    scale = np.zeros(T)

    alpha[0] = pi * B[0]
    scale[0] = alpha[0].sum()
    if scale[0] <= 0.0:
        return alpha, xi, -np.inf
    alpha[0] /= scale[0]
    for t in range(1, T):
        alpha[t] = (alpha[t - 1] @ A) * B[t]
        scale[t] = alpha[t].sum()
        if scale[t] <= 0.0:
            return alpha, xi, -np.inf
        alpha[t] /= scale[t]

    beta = np.zeros((T, N))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (B[t + 1] * beta[t + 1]) / scale[t + 1]

    for t in range(T - 1):
        xi += np.outer(alpha[t] / scale[t + 1], B[t + 1] * beta[t + 1]) * A

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, xi, float(np.log(scale).sum() + shift.sum())


def viterbi(log_emission, log_transmat, log_startprob):
    logb = np.asarray(log_emission, dtype=np.float64)
    logA = np.asarray(log_transmat, dtype=np.float64)
    T, N = logb.shape
    delta = logb[0] + np.asarray(log_startprob, dtype=np.float64)
    psi = np.zeros((T, N), dtype=np.intp)
    for t in range(1, T):
        cand = delta[:, None] + logA
        # argmax returns the first maximum, i.e. the lowest state index
        psi[t] = cand.argmax(axis=0)
        delta = cand[psi[t], np.arange(N)] + logb[t]
    path = np.empty(T, dtype=np.intp)
    path[-1] = int(delta.argmax())
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path, float(delta[path[-1]])
