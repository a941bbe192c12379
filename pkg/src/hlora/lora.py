"""Low-rank adapter pairs: initialization, merging, and the rank-r
factorization of a dense update.

An adapter constrains a d x k weight update to the product ``b @ a``
of a d x r and an r x k factor. ``decompose`` inverts ``merge`` in the
best-approximation sense: it truncates the SVD of a dense update at
rank r, keeping the left singular vectors as ``b`` and folding the
entire singular spectrum into ``a``, so ``merge(decompose(w, r))`` is
the closest rank-r matrix to ``w`` in Frobenius norm.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import Matrix, as_matrix
from .rng import SeededRng


@dataclass(frozen=True)
class LoraAdapter:
    """Immutable (b, a) factor pair; rank is the inner dimension."""

    b: Matrix
    a: Matrix

    def __post_init__(self):
        b = as_matrix(self.b, "adapter factor b")
        a = as_matrix(self.a, "adapter factor a")
        if b.shape[1] != a.shape[0]:
            raise ValueError(
                f"factor ranks disagree: b is {b.shape[0]}x{b.shape[1]}, a is {a.shape[0]}x{a.shape[1]}"
            )
        d, k = b.shape[0], a.shape[1]
        rank = b.shape[1]
        if rank > min(d, k):
            raise ValueError(f"rank {rank} exceeds min(d, k) = {min(d, k)} for a {d}x{k} update")
        if rank > min(d, k) / 2:
            warnings.warn(
                "adapter rank exceeds half of min(d, k); the update is barely low-rank",
                stacklevel=2,
            )
        object.__setattr__(self, "b", linalg._readonly(b.copy()))
        object.__setattr__(self, "a", linalg._readonly(a.copy()))

    @property
    def rank(self) -> int:
        return self.b.shape[1]

    @property
    def shape(self) -> tuple:
        """Shape (d, k) of the merged update."""
        return (self.b.shape[0], self.a.shape[1])


def init_adapter(rng: SeededRng, d: int, k: int, rank: int, init_std: float = 0.02) -> LoraAdapter:
    """Fresh adapter: b all zeros, a Gaussian, so the merged update is zero."""
    if not (1 <= rank <= min(d, k)):
        raise ValueError(f"rank must be in [1, {min(d, k)}] for a {d}x{k} update, got {rank}")
    b = np.zeros((d, rank))
    a = linalg.random_gaussian(rng, rank, k, init_std)
    return LoraAdapter(b=b, a=a)


def merge(adapter: LoraAdapter) -> Matrix:
    """The dense update ``b @ a``."""
    return linalg.matmul(adapter.b, adapter.a)


def decompose(w: Matrix, rank: int) -> LoraAdapter:
    """Best rank-r factorization of ``w``: b = U_r, a = diag(sigma_r) @ Vt_r."""
    w = as_matrix(w, "update")
    p = min(w.shape)
    if not (1 <= rank <= p):
        raise ValueError(f"rank must be in [1, {p}] for a {w.shape[0]}x{w.shape[1]} update, got {rank}")
    u_r, s_r, vt_r = linalg.truncate(linalg.svd(w), rank)
    return LoraAdapter(b=u_r, a=s_r[:, None] * vt_r)


def approximation_error(w: Matrix, adapter: LoraAdapter) -> float:
    """Frobenius distance between ``w`` and the adapter's merged update."""
    w = as_matrix(w, "update")
    if adapter.shape != w.shape:
        raise ValueError(f"adapter produces a {adapter.shape} update but w is {w.shape}")
    return linalg.frobenius_norm(w - merge(adapter))
