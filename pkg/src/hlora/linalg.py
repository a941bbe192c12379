"""Dense float64 matrix operations: products, Frobenius norms, a
deterministic singular value decomposition, weighted sums, and seeded
Gaussian matrices.

A "matrix" throughout the package is a 2-D C-contiguous float64 numpy
array with finite entries. Operations here validate their inputs,
never mutate them, and return fresh arrays, so values are safe to
share between threads.

The SVD is a cyclic one-sided Jacobi orthogonalization (hot loop in
the kernel backends) followed by deterministic post-processing: a
descending stable sort of the singular values, orthonormal completion
of null-space columns, and a sign convention that makes the factors a
pure function of the input: in each left singular vector the entry of
largest magnitude (lowest index on ties) is nonnegative, with the
matching right singular vector negated to compensate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .rng import SeededRng

Matrix = np.ndarray

_JACOBI_TOL = 1e-13
DEFAULT_MAX_SWEEPS = 64


class SvdConvergenceError(RuntimeError):
    """Raised when the Jacobi iteration hits its sweep cap before converging."""


def as_matrix(m, name: str = "matrix") -> Matrix:
    """Validate and return ``m`` as a finite 2-D float64 array."""
    out = np.asarray(m, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def _check_finite(out: Matrix, op: str) -> Matrix:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite entries")
    return out


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``u @ diag(singular_values) @ vt`` of a d x k matrix.

    ``u`` is d x p, ``vt`` is p x k with p = min(d, k);
    ``singular_values`` are nonnegative and descending.
    """

    u: Matrix
    singular_values: np.ndarray
    vt: Matrix

    def reconstruct(self) -> Matrix:
        return (self.u * self.singular_values) @ self.vt


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with shape validation."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: left is {a.shape[0]}x{a.shape[1]}, "
            f"right is {b.shape[0]}x{b.shape[1]}"
        )
    return _check_finite(a @ b, "matmul")


def frobenius_norm(m: Matrix) -> float:
    """Square root of the sum of squared entries."""
    m = as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))


def weighted_sum(matrices, weights) -> Matrix:
    """Entrywise sum of ``weights[i] * matrices[i]``.

    All matrices must share one shape; weights must be nonnegative,
    finite, and as many as the matrices.
    """
    mats = [as_matrix(m, f"matrices[{i}]") for i, m in enumerate(matrices)]
    w = np.asarray(weights, dtype=np.float64)
    if not mats:
        raise ValueError("weighted_sum requires at least one matrix")
    if w.ndim != 1 or len(w) != len(mats):
        raise ValueError(f"got {len(mats)} matrices but {w.size} weights")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    shape = mats[0].shape
    for i, m in enumerate(mats):
        if m.shape != shape:
            raise ValueError(f"matrices[{i}] has shape {m.shape}, expected {shape}")
    out = np.zeros(shape)
    for wi, mi in zip(w, mats):
        out += wi * mi
    return _check_finite(out, "weighted_sum")


def random_gaussian(rng: SeededRng, rows: int, cols: int, std: float) -> Matrix:
    """Matrix of i.i.d. normal(0, std^2) entries, a pure function of ``rng``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    if not (std > 0):
        raise ValueError(f"std must be positive, got {std}")
    return rng.generator().standard_normal((rows, cols)) * std


def svd(m: Matrix, *, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SvdResult:
    """Deterministic thin SVD via one-sided Jacobi.

    Raises :class:`SvdConvergenceError` if the column pairs are not
    orthogonal to working precision after ``max_sweeps`` sweeps; never
    returns an unconverged factorization.
    """
    m = as_matrix(m)
    d, k = m.shape
    transposed = d < k
    work = np.array(m.T if transposed else m, dtype=np.float64, order="C", copy=True)
    cols = work.shape[1]
    rot = np.eye(cols)
    sweeps = backend.get_impl().jacobi_sweeps(work, rot, _JACOBI_TOL, int(max_sweeps))
    if sweeps < 0:
        raise SvdConvergenceError(
            f"one-sided Jacobi SVD did not converge within {max_sweeps} sweeps "
            f"for a {d}x{k} matrix"
        )

    norms = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    left = work[:, order]
    right_t = rot[:, order].T.copy()

    cutoff = s[0] * 1e-14 if s[0] > 0 else 0.0
    u = np.empty_like(left)
    missing = []
    for j in range(cols):
        if s[j] > cutoff:
            u[:, j] = left[:, j] / s[j]
        else:
            missing.append(j)
    if missing:
        _complete_orthonormal(u, missing)

    if transposed:
        u_final, vt_final = right_t.T.copy(), u.T.copy()
    else:
        u_final, vt_final = u, right_t

    for j in range(u_final.shape[1]):
        col = u_final[:, j]
        pivot = int(np.argmax(np.abs(col)))
        if col[pivot] < 0.0:
            u_final[:, j] = -col
            vt_final[j, :] = -vt_final[j, :]

    return SvdResult(
        u=_readonly(u_final),
        singular_values=_readonly(s),
        vt=_readonly(vt_final),
    )


def _complete_orthonormal(u: np.ndarray, missing: list):
    """Fill the listed columns of ``u`` with an orthonormal extension.

    Used for null-space directions where the Jacobi columns carry no
    signal. Candidates are canonical basis vectors; the one with the
    largest residual after projecting out the existing columns wins
    (deterministic: strict comparison keeps the lowest index on ties).
    """
    d = u.shape[0]
    missing_set = set(missing)
    filled = [c for c in range(u.shape[1]) if c not in missing_set]
    for j in missing:
        best_norm = -1.0
        best = None
        for e in range(d):
            cand = np.zeros(d)
            cand[e] = 1.0
            for c in filled:
                cand -= (u[:, c] @ cand) * u[:, c]
            norm = float(np.sqrt(cand @ cand))
            if norm > best_norm:
                best_norm = norm
                best = cand
        if best is None or best_norm <= 0.0:
            raise SvdConvergenceError("orthonormal completion failed")
        # second projection pass for numerical hygiene
        for c in filled:
            best -= (u[:, c] @ best) * u[:, c]
        u[:, j] = best / np.sqrt(best @ best)
        filled.append(j)


def truncate(result: SvdResult, r: int):
    """First ``r`` columns of u, values of sigma, and rows of vt."""
    p = len(result.singular_values)
    if not (1 <= r <= p):
        raise ValueError(f"truncation rank must be in [1, {p}], got {r}")
    return (
        result.u[:, :r].copy(),
        result.singular_values[:r].copy(),
        result.vt[:r, :].copy(),
    )
