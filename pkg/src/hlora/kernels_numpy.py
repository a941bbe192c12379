"""Pure-numpy implementations of the hot kernels.

These are the fallback twins of the compiled kernels in
``kernels_numba``; both sides perform the same arithmetic in the same
order, so results agree to rounding noise. Selected via
``HLORA_BACKEND=numpy`` or automatically when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def jacobi_sweeps(a, v, tol, max_sweeps):
    """Cyclic one-sided Jacobi orthogonalization of the columns of ``a``.

    Rotates column pairs of ``a`` (in place) until every pair satisfies
    |a_p . a_q| <= tol * |a_p| |a_q|, accumulating the same rotations in
    ``v`` (which must start as the identity), so that on return
    ``a_original = a @ v.T``. Returns the number of sweeps consumed, or
    -1 if the cap was reached before a rotation-free sweep.
    """
    n = a.shape[1]
    if n <= 1:
        return 0
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = a[:, p]
                aq = a[:, q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if abs(gamma) <= tol * np.sqrt(alpha * beta) + 1e-290:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    sgn = 1.0 if zeta >= 0.0 else -1.0
                    t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                new_p = cs * ap - sn * aq
                new_q = sn * ap + cs * aq
                a[:, p] = new_p
                a[:, q] = new_q
                vp = v[:, p]
                vq = v[:, q]
                new_vp = cs * vp - sn * vq
                new_vq = sn * vp + cs * vq
                v[:, p] = new_vp
                v[:, q] = new_vq
        if not rotated:
            return sweep + 1
    return -1


def _softmax_ce(logits, labels):
    """Mean cross-entropy and d(loss)/d(logits) for integer labels."""
    n = logits.shape[0]
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    z = ex.sum(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(z[:, 0])
    rows = np.arange(n)
    loss = float(np.mean(lse - logits[rows, labels]))
    grad = ex / z
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def sgd_step_one_layer(x, y, w0, b, a, lr):
    """One SGD step of a linear classifier with a low-rank update.

    Effective weight is ``w0 + b @ a``; only ``b`` and ``a`` move (in
    place). Returns the pre-update mean batch loss.
    """
    w = w0 + b @ a
    logits = x @ w.T
    loss, g = _softmax_ce(logits, y)
    dw = g.T @ x
    db = dw @ a.T
    da = b.T @ dw
    b -= lr * db
    a -= lr * da
    return loss


def sgd_step_two_layer(x, y, w0_1, b1, a1, w0_2, b2, a2, lr):
    """One SGD step of a rectifier MLP with low-rank updates per layer."""
    w1 = w0_1 + b1 @ a1
    w2 = w0_2 + b2 @ a2
    z1 = x @ w1.T
    h = np.maximum(z1, 0.0)
    logits = h @ w2.T
    loss, g = _softmax_ce(logits, y)
    dw2 = g.T @ h
    dh = g @ w2
    dz1 = np.where(z1 > 0.0, dh, 0.0)
    dw1 = dz1.T @ x
    db1 = dw1 @ a1.T
    da1 = b1.T @ dw1
    db2 = dw2 @ a2.T
    da2 = b2.T @ dw2
    b1 -= lr * db1
    a1 -= lr * da1
    b2 -= lr * db2
    a2 -= lr * da2
    return loss
