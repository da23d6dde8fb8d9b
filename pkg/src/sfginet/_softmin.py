"""Compiled log-sum-exp reductions for batched Sinkhorn updates."""

import numpy as np
from numba import njit


@njit(cache=True)
def softmin_rows(h, lw, C, eps, soft):
    """out[b, i] = -eps * log sum_j exp(lw[b, j] + h[b, j]/eps - C[b, i, j]/eps).

    The normalized exponentials are written to ``soft`` when it is non-empty.
    """
    B, n, m = C.shape
    out = np.empty((B, n))
    keep = soft.shape[0] > 0
    inv = 1.0 / eps
    row = np.empty(m)
    for b in range(B):
        for i in range(n):
            top = -np.inf
            for j in range(m):
                x = lw[b, j] + (h[b, j] - C[b, i, j]) * inv
                row[j] = x
                if x > top:
                    top = x
            if top == -np.inf:
                out[b, i] = np.inf
                continue
            s = 0.0
            for j in range(m):
                e = np.exp(row[j] - top)
                row[j] = e
                s += e
            out[b, i] = -eps * (top + np.log(s))
            if keep:
                for j in range(m):
                    soft[b, i, j] = row[j] / s
    return out


@njit(cache=True)
def softmin_cols(h, lw, C, eps, soft):
    """out[b, j] = -eps * log sum_i exp(lw[b, i] + h[b, i]/eps - C[b, i, j]/eps)."""
    B, n, m = C.shape
    out = np.empty((B, m))
    keep = soft.shape[0] > 0
    inv = 1.0 / eps
    top = np.empty(m)
    acc = np.empty(m)
    for b in range(B):
        top[:] = -np.inf
        for i in range(n):
            base = lw[b, i] + h[b, i] * inv
            for j in range(m):
                x = base - C[b, i, j] * inv
                if x > top[j]:
                    top[j] = x
        acc[:] = 0.0
        for i in range(n):
            base = lw[b, i] + h[b, i] * inv
            if base == -np.inf:
                if keep:
                    for j in range(m):
                        soft[b, i, j] = 0.0
                continue
            for j in range(m):
                e = np.exp(base - C[b, i, j] * inv - top[j])
                acc[j] += e
                if keep:
                    soft[b, i, j] = e
        for j in range(m):
            out[b, j] = -eps * (top[j] + np.log(acc[j]))
        if keep:
            for i in range(n):
                for j in range(m):
                    soft[b, i, j] /= acc[j]
    return out
