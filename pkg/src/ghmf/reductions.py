"""Rewriting Potts and Ishikawa models as hierarchical problems, and moving
data terms down to the leaves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .fields import GridGeometry, gradient, norm
from .hierarchy import ROOT, build_hierarchy, preorder
from .problem import GeometryMismatch, GhmfProblem


class TooFewLabels(ValueError):
    pass


class InvalidLevels(ValueError):
    pass


class MapMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PottsSpec:
    labels: tuple[str, ...]
    geometry: GridGeometry
    data: tuple[np.ndarray, ...]
    smooth: np.ndarray


@dataclass(frozen=True)
class IshikawaSpec:
    """Levels ``0..N``; level 0 is everywhere on, so its data term is a constant
    and its smoothness term is unused."""

    geometry: GridGeometry
    data: tuple[Optional[np.ndarray], ...]
    smooth: tuple[np.ndarray, ...]

    @property
    def levels(self) -> int:
        return len(self.data) - 1


@dataclass(frozen=True)
class ReconstructionMap:
    """Label ids of the level nodes ``L_0..L_N`` and dummy leaves ``B_1..B_N``."""

    level_ids: tuple[int, ...]
    dummy_ids: tuple[int, ...]
    names: tuple[str, ...]

    @property
    def levels(self) -> int:
        return len(self.level_ids) - 1


def from_potts(spec: PottsSpec) -> GhmfProblem:
    if len(spec.labels) < 2:
        raise TooFewLabels(f"a Potts model needs at least 2 labels, got {len(spec.labels)}")
    if len(spec.data) != len(spec.labels):
        raise ValueError("one data term per Potts label is required")
    if ROOT in spec.labels:
        raise ValueError(f"{ROOT!r} is reserved for the source node")
    h = build_hierarchy([(name, ROOT) for name in spec.labels])
    data = dict(zip(spec.labels, spec.data))
    smooth = {name: spec.smooth for name in spec.labels}
    return GhmfProblem.from_terms(h, spec.geometry, data=data, smooth=smooth)


def ishikawa_names(levels: int) -> tuple[list[str], list[str]]:
    return [f"L{i}" for i in range(levels + 1)], [f"B{i}" for i in range(1, levels + 1)]


def from_ishikawa(spec: IshikawaSpec) -> tuple[GhmfProblem, ReconstructionMap]:
    """Chain hierarchy where level ``i`` splits into level ``i+1`` and dummy ``B_{i+1}``.

    Dummy leaves carry no data and no smoothness. Level data terms are
    copied unchanged (including onto branches); :func:`pushdown_data`
    normalizes them before solving.
    """
    n = spec.levels
    if n < 1 or len(spec.smooth) != n + 1:
        raise InvalidLevels(f"need levels 0..N with N >= 1 and matching smoothness terms, got N={n}")
    level_names, dummy_names = ishikawa_names(n)
    edges = [(level_names[0], None)]
    for i in range(n):
        edges.append((level_names[i + 1], level_names[i]))
        edges.append((dummy_names[i], level_names[i]))
    h = build_hierarchy(edges)
    data = {level_names[i]: d for i, d in enumerate(spec.data) if d is not None}
    smooth = {level_names[i]: s for i, s in enumerate(spec.smooth) if i > 0}
    problem = GhmfProblem.from_terms(h, spec.geometry, data=data, smooth=smooth)
    rmap = ReconstructionMap(
        tuple(h.id(x) for x in level_names),
        tuple(h.id(x) for x in dummy_names),
        tuple(h.names),
    )
    return problem, rmap


def reconstruct_ishikawa(u: np.ndarray, rmap: ReconstructionMap) -> dict[int, np.ndarray]:
    """Per-level labelings ``{i: u_{L_i}}`` for ``i = 1..N`` from a full labeling.

    The deepest level is copied, then each shallower level is the level
    below plus that level's dummy leaf.
    """
    n = rmap.levels
    if u.shape[0] != len(rmap.names):
        raise MapMismatch(f"labeling has {u.shape[0]} labels, map expects {len(rmap.names)}")
    out = {n: np.array(u[rmap.level_ids[n]], dtype=np.float64)}
    for i in range(n - 1, 0, -1):
        out[i] = out[i + 1] + u[rmap.dummy_ids[i]]
    return dict(sorted(out.items()))


def ishikawa_energy(spec: IshikawaSpec, levels: Mapping[int, np.ndarray]) -> float:
    """Ishikawa objective for per-level labelings ``u_{L_1..L_N}`` (``u_{L_0}`` is one)."""
    total = 0.0
    if spec.data[0] is not None:
        total += float(np.sum(spec.data[0]))
    for i in range(1, spec.levels + 1):
        u = np.asarray(levels[i], dtype=np.float64)
        if spec.data[i] is not None:
            total += float(np.sum(spec.data[i] * u))
        total += float(np.sum(spec.smooth[i] * norm(gradient(u))))
    return total


def pushdown_data(problem: GhmfProblem) -> tuple[GhmfProblem, np.ndarray]:
    """Push branch data terms onto the leaves and shift them non-negative.

    Walking parents before children, each branch's data term is added to
    every child and cleared. Then, per voxel, the smallest leaf term is
    subtracted from every leaf so that the minimum is exactly zero. The
    per-voxel shift is returned; for any labeling that satisfies the tree
    constraints the original energy equals the new energy plus its sum.
    """
    h = problem.hierarchy
    dims = problem.geometry.dims
    for d in problem.data_terms:
        if d is not None and d.shape != dims:
            raise GeometryMismatch("data term does not match the problem grid")
    data = [None if d is None else d.copy() for d in problem.data_terms]
    for label in preorder(h):
        if h.is_leaf(label) or data[label] is None:
            continue
        for c in h.children(label):
            data[c] = data[label].copy() if data[c] is None else data[c] + data[label]
        data[label] = None
    leaves = h.leaves
    stack = np.stack([np.zeros(dims) if data[i] is None else data[i] for i in leaves])
    offset = stack.min(axis=0)
    new = [None] * len(h)
    for k, label in enumerate(leaves):
        if data[label] is not None or np.any(offset != 0):
            new[label] = stack[k] - offset
    pushed = problem.with_data(new, problem.energy_offset + float(np.sum(offset)))
    return pushed, offset
