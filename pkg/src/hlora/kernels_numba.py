"""Numba-compiled hot kernels: Jacobi SVD sweeps and fused SGD steps.

Same arithmetic as ``kernels_numpy``, written as explicit loops so the
compiler can fuse them. No fastmath: results must stay deterministic
and bit-stable across calls. Importing this module requires numba;
``backend`` guards the import.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def jacobi_sweeps(a, v, tol, max_sweeps):
    m, n = a.shape
    if n <= 1:
        return 0
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    aip = a[i, p]
                    aiq = a[i, q]
                    alpha += aip * aip
                    beta += aiq * aiq
                    gamma += aip * aiq
                if abs(gamma) <= tol * math.sqrt(alpha * beta) + 1e-290:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    sgn = 1.0 if zeta >= 0.0 else -1.0
                    t = sgn / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(m):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = cs * aip - sn * aiq
                    a[i, q] = sn * aip + cs * aiq
                nv = v.shape[0]
                for i in range(nv):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = cs * vip - sn * viq
                    v[i, q] = sn * vip + cs * viq
        if not rotated:
            return sweep + 1
    return -1


@njit(cache=True)
def _mm(a, b):
    # (m x k) @ (k x n)
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for l in range(k):
            ail = a[i, l]
            for j in range(n):
                out[i, j] += ail * b[l, j]
    return out


@njit(cache=True)
def _mm_bt(a, b):
    # (m x k) @ (n x k).T
    m, k = a.shape
    n = b.shape[0]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[j, l]
            out[i, j] = acc
    return out


@njit(cache=True)
def _mm_at(a, b):
    # (m x k).T @ (m x n)
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((k, n))
    for i in range(m):
        for l in range(k):
            ail = a[i, l]
            for j in range(n):
                out[l, j] += ail * b[i, j]
    return out


@njit(cache=True)
def _softmax_ce(logits, labels):
    n, c = logits.shape
    grad = np.empty((n, c))
    loss = 0.0
    for i in range(n):
        shift = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > shift:
                shift = logits[i, j]
        z = 0.0
        for j in range(c):
            e = math.exp(logits[i, j] - shift)
            grad[i, j] = e
            z += e
        lse = shift + math.log(z)
        loss += lse - logits[i, labels[i]]
        for j in range(c):
            grad[i, j] /= z
        grad[i, labels[i]] -= 1.0
        for j in range(c):
            grad[i, j] /= n
    return loss / n, grad


@njit(cache=True)
def sgd_step_one_layer(x, y, w0, b, a, lr):
    w = w0 + _mm(b, a)
    logits = _mm_bt(x, w)
    loss, g = _softmax_ce(logits, y)
    dw = _mm_at(g, x)
    db = _mm_bt(dw, a)
    da = _mm_at(b, dw)
    d, r = b.shape
    k = a.shape[1]
    for i in range(d):
        for j in range(r):
            b[i, j] -= lr * db[i, j]
    for i in range(r):
        for j in range(k):
            a[i, j] -= lr * da[i, j]
    return loss


@njit(cache=True)
def sgd_step_two_layer(x, y, w0_1, b1, a1, w0_2, b2, a2, lr):
    w1 = w0_1 + _mm(b1, a1)
    w2 = w0_2 + _mm(b2, a2)
    z1 = _mm_bt(x, w1)
    n, hdim = z1.shape
    h = np.empty((n, hdim))
    for i in range(n):
        for j in range(hdim):
            h[i, j] = z1[i, j] if z1[i, j] > 0.0 else 0.0
    logits = _mm_bt(h, w2)
    loss, g = _softmax_ce(logits, y)
    dw2 = _mm_at(g, h)
    dh = _mm(g, w2)
    dz1 = np.empty((n, hdim))
    for i in range(n):
        for j in range(hdim):
            dz1[i, j] = dh[i, j] if z1[i, j] > 0.0 else 0.0
    dw1 = _mm_at(dz1, x)
    db1 = _mm_bt(dw1, a1)
    da1 = _mm_at(b1, dw1)
    db2 = _mm_bt(dw2, a2)
    da2 = _mm_at(b2, dw2)
    for i in range(b1.shape[0]):
        for j in range(b1.shape[1]):
            b1[i, j] -= lr * db1[i, j]
    for i in range(a1.shape[0]):
        for j in range(a1.shape[1]):
            a1[i, j] -= lr * da1[i, j]
    for i in range(b2.shape[0]):
        for j in range(b2.shape[1]):
            b2[i, j] -= lr * db2[i, j]
    for i in range(a2.shape[0]):
        for j in range(a2.shape[1]):
            a2[i, j] -= lr * da2[i, j]
    return loss
