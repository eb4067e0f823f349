"""Ensemble container and the elementary ensemble algebra.

An ensemble is stored as a dense ``(m, N)`` array whose columns are the
members, so that right-multiplication by an ``N x N`` matrix is a plain
matrix product.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFiniteState, SizeError


class Ensemble:
    """Immutable collection of ``N >= 2`` state vectors of dimension ``m``.

    Parameters
    ----------
    values : array_like, shape (m, N)
        Column ``n`` is member ``n``.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim != 2:
            raise DimensionMismatch(f"ensemble must be 2-D (m, N), got shape {arr.shape}")
        if arr.shape[1] < 2:
            raise SizeError(f"ensemble needs N >= 2 members, got {arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteState("ensemble contains non-finite entries")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def from_members(cls, members) -> "Ensemble":
        """Build from a sequence of length-``m`` vectors."""
        return cls(np.column_stack([np.asarray(v, dtype=float) for v in members]))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def m(self) -> int:
        return self._values.shape[0]

    @property
    def N(self) -> int:
        return self._values.shape[1]

    def member(self, n: int) -> np.ndarray:
        return self._values[:, n]

    def __len__(self):
        return self.N

    def __repr__(self):
        return f"Ensemble(m={self.m}, N={self.N})"


def _values(V) -> np.ndarray:
    return V.values if isinstance(V, Ensemble) else np.asarray(V, dtype=float)


def mean(V) -> np.ndarray:
    """Ensemble mean ``(1/N) sum_n v_n``."""
    return _values(V).mean(axis=1)


def deviations(V) -> Ensemble:
    """Deviations ``v_n - mean(V)``; the columns sum to zero."""
    X = _values(V)
    return Ensemble(X - X.mean(axis=1, keepdims=True))


def covariance(V) -> np.ndarray:
    """Unbiased ensemble covariance ``dV dV^T / (N - 1)`` as an ``m x m`` array."""
    X = _values(V)
    N = X.shape[1]
    if N < 2:
        raise SizeError(f"covariance needs N >= 2 members, got {N}")
    dX = X - X.mean(axis=1, keepdims=True)
    C = dX @ dX.T / (N - 1)
    return 0.5 * (C + C.T)


def l2_norm(V) -> float:
    """Root mean squared member norm ``((1/N) sum_n |v_n|^2)^(1/2)``."""
    X = _values(V)
    return float(np.sqrt(np.sum(X * X) / X.shape[1]))


def gram(U, V) -> np.ndarray:
    """Matrix of pairwise inner products ``[<u_i, v_j>]``."""
    A, B = _values(U), _values(V)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"state dimensions differ: {A.shape[0]} vs {B.shape[0]}")
    return A.T @ B


def apply_matrix(V, T) -> Ensemble:
    """Right-multiply: member ``n`` of the result is ``sum_k v_k T[k, n]``."""
    X = _values(V)
    T = np.asarray(T, dtype=float)
    N = X.shape[1]
    if T.shape != (N, N):
        raise DimensionMismatch(f"expected {N}x{N} matrix, got {T.shape}")
    return Ensemble(X @ T)


def from_mean_and_deviations(vbar, dV) -> Ensemble:
    """Reassemble ``vbar 1 + dV``."""
    return Ensemble(np.asarray(vbar, dtype=float)[:, None] + _values(dV))
