"""Augmented-Lagrangian continuous max-flow over a label hierarchy.

Each pass updates, in order: the spatial flows ``q_L`` of every non-root
label (one projected gradient step), the sink flows ``p_L`` bottom-up from
the leaves to the source, and the labelings ``u_L``, which are the
multipliers of the flow conservation constraint
``G_L = div q_L + p_L - p_parent(L) = 0``.

Array layout: ``u`` and ``p`` are ``(labels, *dims)``, ``q`` is
``(labels, rank, *dims)``. The root row of ``u`` is one and the root row of
``q`` stays zero.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import divergence, gradient, norm, project_ball
from .hierarchy import Hierarchy, postorder
from .problem import GhmfProblem, normalize, primal_energy

log = logging.getLogger(__name__)


class InvalidProblem(ValueError):
    pass


class UnnormalizedProblem(InvalidProblem):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverParams:
    c: float = 1.0
    tau: float = 0.1
    max_iters: int = 2000
    tolerance: float = 1e-7
    workers: int = 1
    debug_invariants: bool = False
    # consecutive passes below tolerance before declaring convergence
    settle: int = 5

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.settle < 1:
            raise ValueError(f"settle must be at least 1, got {self.settle}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")


@dataclass
class SolverState:
    problem: GhmfProblem
    params: SolverParams
    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iteration: int = 0
    residual: float = float("inf")
    _pool: Optional[ThreadPoolExecutor] = field(default=None, repr=False)

    def __post_init__(self):
        h = self.problem.hierarchy
        self.hierarchy: Hierarchy = h
        self.rank = self.problem.geometry.rank
        self.labels = np.array(h.non_root, dtype=int)
        self.parents = np.array([h.parent(i) for i in h.non_root], dtype=int)
        self.leaf_ids = np.array(h.leaves, dtype=int)
        self.leaf_parents = np.array([h.parent(i) for i in h.leaves], dtype=int)
        self.branch_order = [i for i in postorder(h) if i != h.root and not h.is_leaf(i)]
        self.D = self.problem.data_stack()
        self.S = self.problem.smooth_stack()

    def chunks(self, ids: np.ndarray) -> list[np.ndarray]:
        k = min(self.params.workers, len(ids))
        return [c for c in np.array_split(ids, max(k, 1)) if len(c)]

    def map(self, fn, ids: np.ndarray) -> None:
        parts = self.chunks(ids)
        if len(parts) == 1 or self._pool is None:
            for part in parts:
                fn(part)
        else:
            list(self._pool.map(fn, parts))


@dataclass(frozen=True)
class Solution:
    hierarchy: Hierarchy
    labeling: np.ndarray
    energy: float
    dual_value: float
    gap: float
    iterations: int
    converged: bool
    residual: float
    flow_residual: float

    def leaf(self, name: str) -> np.ndarray:
        return self.labeling[self.hierarchy.id(name)]


def _check_solvable(problem: GhmfProblem) -> None:
    h = problem.hierarchy
    if not h.children(h.root):
        raise InvalidProblem("the hierarchy has no labels below the root")


def initialize(problem: GhmfProblem, params: Optional[SolverParams] = None) -> SolverState:
    """Optimal state for the problem with all smoothness terms dropped.

    Every sink flow is the per-voxel minimum of the leaf data terms; each
    leaf attaining that minimum gets an equal share of the labeling and
    branches sum their children. Spatial flows start at zero.
    """
    params = params or SolverParams()
    if not problem.is_normalized:
        raise UnnormalizedProblem("initialize needs leaf-only, non-negative data terms; call normalize first")
    _check_solvable(problem)
    h = problem.hierarchy
    geom = problem.geometry
    n = len(h)
    leaves = h.leaves
    D = np.stack([problem.data(i) for i in leaves])
    dmin = D.min(axis=0)
    at_min = D == dmin
    count = at_min.sum(axis=0)

    u = geom.zeros(n)
    for k, label in enumerate(leaves):
        u[label] = np.where(at_min[k], 1.0 / count, 0.0)
    for label in postorder(h):
        if not h.is_leaf(label):
            acc = np.zeros(geom.dims)
            for c in h.children(label):
                acc = acc + u[c]
            u[label] = acc
    u[h.root] = 1.0
    p = np.broadcast_to(dmin, (n,) + geom.dims).copy()
    q = geom.vector_zeros(n)
    return SolverState(problem, params, u, p, q, residual=float("inf"))


def update_spatial_flows(s: SolverState) -> None:
    """One projected ascent step on ``q_L`` for every non-root label."""
    c, tau, rank = s.params.c, s.params.tau, s.rank
    parent_of = dict(zip(s.labels.tolist(), s.parents.tolist()))

    def step(ids: np.ndarray) -> None:
        par = np.array([parent_of[i] for i in ids])
        q = s.q[ids]
        g = divergence(q, rank) + s.p[ids] - s.p[par] - s.u[ids] / c
        s.q[ids] = project_ball(q + tau * gradient(g, rank), s.S[ids], rank)

    s.map(step, s.labels)
    if s.params.debug_invariants:
        excess = norm(s.q[s.labels], rank) - s.S[s.labels]
        if np.any(excess > 1e-12 * (1.0 + s.S[s.labels])):
            raise InvariantViolation(f"spatial flow exceeds its capacity by {excess.max():.3g}")


def update_sink_flows(s: SolverState) -> None:
    """Maximize over the sink flows, children before parents.

    Leaves are capped by their data term; branches and the source take the
    unconstrained maximizer, averaging the demand from above with what
    their children pass up.
    """
    c = s.params.c
    rank = s.rank
    h = s.hierarchy
    div_q = divergence(s.q, rank)
    p, u = s.p, s.u

    def leaves(ids: np.ndarray) -> None:
        k = np.searchsorted(s.leaf_ids, ids)
        par = s.leaf_parents[k]
        p[ids] = np.minimum(s.D[ids], p[par] - div_q[ids] + u[ids] / c)

    s.map(leaves, s.leaf_ids)

    for label in s.branch_order:
        acc = p[h.parent(label)] - div_q[label] + u[label] / c
        for ch in h.children(label):
            acc = acc + p[ch] + div_q[ch] - u[ch] / c
        p[label] = acc / (len(h.children(label)) + 1)

    root = h.root
    acc = np.full(s.problem.geometry.dims, 1.0 / c)
    for ch in h.children(root):
        acc = acc + p[ch] + div_q[ch] - u[ch] / c
    p[root] = acc / len(h.children(root))

    if s.params.debug_invariants:
        over = p[s.leaf_ids] - s.D[s.leaf_ids]
        if np.any(over > 0):
            raise InvariantViolation(f"leaf sink flow exceeds its data term by {over.max():.3g}")


def update_labels(s: SolverState) -> np.ndarray:
    """Multiplier step ``u_L -= c * G_L``; returns the applied change."""
    c = s.params.c
    div_q = divergence(s.q, s.rank)
    parent_of = dict(zip(s.labels.tolist(), s.parents.tolist()))
    delta = np.zeros_like(s.u)

    def step(ids: np.ndarray) -> None:
        par = np.array([parent_of[i] for i in ids])
        d = -c * (div_q[ids] - s.p[par] + s.p[ids])
        s.u[ids] = s.u[ids] + d
        delta[ids] = d

    s.map(step, s.labels)
    return delta[s.labels]


def iterate(s: SolverState) -> float:
    """One full pass; returns the mean absolute labeling change."""
    update_spatial_flows(s)
    update_sink_flows(s)
    delta = update_labels(s)
    s.iteration += 1
    s.residual = float(np.mean(np.abs(delta))) if delta.size else 0.0
    return s.residual


def flow_residual(s: SolverState) -> float:
    """Largest violation of flow conservation over non-root labels."""
    if not len(s.labels):
        return 0.0
    g = divergence(s.q[s.labels], s.rank) + s.p[s.labels] - s.p[s.parents]
    return float(np.max(np.abs(g)))


def dual_value(s: SolverState) -> float:
    """Total source flow of the (normalized) problem held by the state."""
    return float(np.sum(s.p[s.hierarchy.root]))


def export_labeling(s: SolverState) -> np.ndarray:
    u = np.clip(s.u, 0.0, 1.0)
    u[s.hierarchy.root] = 1.0
    return u


def threshold(sol_or_labeling, hierarchy: Optional[Hierarchy] = None) -> np.ndarray:
    """Per-voxel leaf id with the largest labeling; ties go to the lowest id."""
    if isinstance(sol_or_labeling, Solution):
        u, h = sol_or_labeling.labeling, sol_or_labeling.hierarchy
    else:
        u, h = np.asarray(sol_or_labeling), hierarchy
        if h is None:
            raise TypeError("a hierarchy is required to threshold a bare labeling")
    leaves = np.array(h.leaves)
    return leaves[np.argmax(u[leaves], axis=0)]


Progress = Callable[[SolverState, float, float], None]


def solve(
    problem: GhmfProblem,
    params: Optional[SolverParams] = None,
    progress: Optional[Progress] = None,
    report_every: int = 100,
) -> Solution:
    """Run the max-flow iteration to convergence or ``max_iters``.

    Energies and the dual value refer to ``problem`` as given; if it had
    to be normalized, the normalization constant is added back to the
    dual value. The reported energy is evaluated on the clamped leaf
    labelings with branches summed from them, so it can be recomputed from
    the leaf fields alone. Running out of iterations is reported through
    ``converged=False``, not an exception.

    ``progress(state, energy, gap)`` is called every ``report_every``
    iterations.
    """
    params = params or SolverParams()
    _check_solvable(problem)
    work = problem if problem.is_normalized else normalize(problem)
    shift = work.energy_offset - problem.energy_offset

    def summarize(s: SolverState) -> tuple[np.ndarray, float, float]:
        u = export_labeling(s)
        leaves = {i: u[i] for i in s.hierarchy.leaves}
        energy = primal_energy(problem, leaves)
        dual = dual_value(s) + shift
        return u, energy, dual

    state = initialize(work, params)
    pool = ThreadPoolExecutor(params.workers) if params.workers > 1 else None
    state._pool = pool
    converged = False
    quiet = 0
    try:
        for _ in range(params.max_iters):
            r = iterate(state)
            if progress is not None and state.iteration % report_every == 0:
                _, e, d = summarize(state)
                progress(state, e, e - d)
            # the labeling change can dip to zero for a single pass while
            # the flows are still far from a saddle point
            quiet = quiet + 1 if r < params.tolerance else 0
            if quiet >= params.settle:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
        state._pool = None

    u, energy, dual = summarize(state)
    log.debug("solve finished after %d iterations, residual %.3g", state.iteration, state.residual)
    return Solution(
        hierarchy=problem.hierarchy,
        labeling=u,
        energy=energy,
        dual_value=dual,
        gap=energy - dual,
        iterations=state.iteration,
        converged=converged,
        residual=state.residual,
        flow_residual=flow_residual(state),
    )
