"""Discrete calculus on regular grids with unit spacing.

Scalar fields are float64 arrays whose trailing ``rank`` axes are the grid.
Vector fields carry one extra axis of length ``rank`` just before the grid
axes, so a stack of per-label flows has shape ``(labels, rank, *dims)``.
Any leading axes are treated as a batch.

The gradient uses forward differences that vanish on the far face of each
axis; ``divergence`` is its exact negative adjoint, which corresponds to
zero normal flux through the domain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class NegativeCap(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"grid rank must be 1 to 3, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"grid extents must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def zeros(self, *lead: int) -> np.ndarray:
        return np.zeros(tuple(lead) + self.dims)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.dims, float(value))

    def vector_zeros(self, *lead: int) -> np.ndarray:
        return np.zeros(tuple(lead) + (self.rank,) + self.dims)

    def check(self, values, what: str = "field") -> np.ndarray:
        """Coerce ``values`` to a float64 scalar field on this grid."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.dims:
            raise ValueError(f"{what} has shape {arr.shape}, expected {self.dims}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{what} contains non-finite values")
        return arr


def _axis(ndim: int, rank: int, d: int) -> int:
    return ndim - rank + d


def gradient(u: np.ndarray, rank: Optional[int] = None) -> np.ndarray:
    """Forward differences of ``u`` over its trailing ``rank`` axes.

    Returns an array of shape ``(*batch, rank, *dims)``; component ``d`` is
    ``u[x + e_d] - u[x]`` and zero on the last slice along axis ``d``.
    """
    u = np.asarray(u, dtype=np.float64)
    rank = u.ndim if rank is None else rank
    batch = u.shape[: u.ndim - rank]
    out = np.zeros(batch + (rank,) + u.shape[u.ndim - rank:])
    for d in range(rank):
        ax = _axis(u.ndim, rank, d)
        n = u.shape[ax]
        if n < 2:
            continue
        comp = out[(Ellipsis, d) + (slice(None),) * rank]
        dst = [slice(None)] * u.ndim
        dst[ax] = slice(0, n - 1)
        comp[tuple(dst)] = np.diff(u, axis=ax)
    return out


def divergence(q: np.ndarray, rank: Optional[int] = None) -> np.ndarray:
    """Backward differences of ``q``, the negative adjoint of :func:`gradient`.

    ``q`` has shape ``(*batch, rank, *dims)``. Along each axis the first
    entry is ``q[0]``, interior entries are ``q[i] - q[i-1]`` and the last
    is ``-q[n-2]``, so ``<gradient(u), q> == -<u, divergence(q)>``.
    """
    q = np.asarray(q, dtype=np.float64)
    rank = q.ndim - 1 if rank is None else rank
    grid_shape = q.shape[q.ndim - rank:]
    batch = q.shape[: q.ndim - rank - 1]
    out = np.zeros(batch + grid_shape)
    ndim = out.ndim
    for d in range(rank):
        ax = _axis(ndim, rank, d)
        n = out.shape[ax]
        if n < 2:
            continue
        comp = q[(Ellipsis, d) + (slice(None),) * rank]

        def sl(a, b):
            s = [slice(None)] * ndim
            s[ax] = slice(a, b)
            return tuple(s)

        out[sl(0, 1)] += comp[sl(0, 1)]
        out[sl(1, n - 1)] += comp[sl(1, n - 1)] - comp[sl(0, n - 2)]
        out[sl(n - 1, n)] -= comp[sl(n - 2, n - 1)]
    return out


def norm(q: np.ndarray, rank: Optional[int] = None) -> np.ndarray:
    """Per-voxel Euclidean length of a vector field.

    Components are accumulated in a fixed order so the result does not
    depend on how the field is batched.
    """
    q = np.asarray(q, dtype=np.float64)
    rank = q.ndim - 1 if rank is None else rank
    comp_axis = q.ndim - rank - 1
    sq = np.zeros(q.shape[:comp_axis] + q.shape[comp_axis + 1:])
    for d in range(q.shape[comp_axis]):
        c = np.take(q, d, axis=comp_axis)
        sq += c * c
    return np.sqrt(sq)


def project_ball(q: np.ndarray, cap: np.ndarray, rank: Optional[int] = None) -> np.ndarray:
    """Scale each vector of ``q`` back onto the ball of radius ``cap``.

    Vectors already inside the ball are returned unchanged.
    """
    q = np.asarray(q, dtype=np.float64)
    cap = np.asarray(cap, dtype=np.float64)
    if np.any(cap < 0):
        raise NegativeCap("projection radius must be non-negative")
    rank = q.ndim - 1 if rank is None else rank
    mag = norm(q, rank)
    outside = mag > cap
    scale = np.ones_like(mag)
    np.divide(cap, mag, out=scale, where=outside)
    comp_axis = q.ndim - rank - 1
    return q * np.expand_dims(scale, comp_axis)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)))

