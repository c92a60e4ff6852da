"""Exhaustive search over discrete labelings of tiny problems.

Discrete labelings assign one leaf id per voxel. They are scored with the
same energy function and discretization as the relaxed solver output, so
a comparison between the two measures optimization quality only.
"""

from __future__ import annotations

import numpy as np

from .problem import GeometryMismatch, GhmfProblem, energy_terms, primal_energy

DEFAULT_CAP = 2_000_000
_CHUNK = 8192


class TooLarge(ValueError):
    def __init__(self, needed: int, cap: int):
        super().__init__(f"exhaustive search needs {needed} evaluations, cap is {cap}")
        self.needed = needed
        self.cap = cap


def _membership(problem: GhmfProblem) -> np.ndarray:
    """``M[n, k] = 1`` when the k-th leaf lies in the subtree of label n."""
    h = problem.hierarchy
    leaves = h.leaves
    col = {leaf: k for k, leaf in enumerate(leaves)}
    m = np.zeros((len(h), len(leaves)))
    for leaf in leaves:
        node = leaf
        while node is not None:
            m[node, col[leaf]] = 1.0
            node = h.parent(node)
    return m


def indicator_labeling(problem: GhmfProblem, label_map: np.ndarray) -> np.ndarray:
    """Full 0/1 labeling for a per-voxel leaf id map; branches are unions."""
    h = problem.hierarchy
    label_map = np.asarray(label_map)
    if label_map.shape != problem.geometry.dims:
        raise GeometryMismatch(f"label map has shape {label_map.shape}, expected {problem.geometry.dims}")
    leaves = h.leaves
    bad = ~np.isin(label_map, leaves)
    if np.any(bad):
        raise ValueError(f"label map contains non-leaf ids {sorted(set(label_map[bad].tolist()))}")
    onehot = np.stack([(label_map == leaf).astype(np.float64) for leaf in leaves])
    return np.tensordot(_membership(problem), onehot, axes=1)


def discrete_energy(problem: GhmfProblem, label_map: np.ndarray) -> float:
    return primal_energy(problem, indicator_labeling(problem, label_map))


def brute_force_min(problem: GhmfProblem, cap: int = DEFAULT_CAP) -> tuple[np.ndarray, float]:
    """Minimize the discrete energy by enumerating every leaf assignment.

    Labelings are visited in lexicographic order of the row-major voxel
    sequence of leaf indices, and the first minimizer wins ties.
    """
    leaves = np.array(problem.hierarchy.leaves)
    k = len(leaves)
    dims = problem.geometry.dims
    x = problem.geometry.size
    needed = k ** x
    if needed > cap:
        raise TooLarge(needed, cap)
    member = _membership(problem)
    weights = k ** np.arange(x - 1, -1, -1, dtype=np.int64)

    best_idx, best_e = -1, np.inf
    for start in range(0, needed, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, needed), dtype=np.int64)
        digits = (idx[:, None] // weights[None, :]) % k  # (batch, voxels)
        onehot = (digits[:, None, :] == np.arange(k)[None, :, None]).astype(np.float64)
        u = np.einsum("nk,bkx->bnx", member, onehot).reshape((len(idx), len(member)) + dims)
        data, tv = energy_terms(problem, u)
        e = data + tv
        j = int(np.argmin(e))
        if e[j] < best_e:
            best_e, best_idx = float(e[j]), int(idx[j])

    digits = (best_idx // weights) % k
    label_map = leaves[digits].reshape(dims)
    return label_map, discrete_energy(problem, label_map)
