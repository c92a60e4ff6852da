"""Hierarchical continuous max-flow segmentation."""

from .fields import GridGeometry, divergence, gradient, project_ball
from .hierarchy import ROOT, Hierarchy, build_hierarchy, postorder, preorder, validate
from .oracle import brute_force_min, discrete_energy
from .problem import GhmfProblem, normalize, primal_energy
from .reductions import (
    IshikawaSpec,
    PottsSpec,
    from_ishikawa,
    from_potts,
    pushdown_data,
    reconstruct_ishikawa,
)
from .solver import Solution, SolverParams, initialize, iterate, solve, threshold

__all__ = [
    "ROOT",
    "GhmfProblem",
    "GridGeometry",
    "Hierarchy",
    "IshikawaSpec",
    "PottsSpec",
    "Solution",
    "SolverParams",
    "brute_force_min",
    "build_hierarchy",
    "discrete_energy",
    "divergence",
    "from_ishikawa",
    "from_potts",
    "gradient",
    "initialize",
    "iterate",
    "normalize",
    "postorder",
    "preorder",
    "primal_energy",
    "project_ball",
    "pushdown_data",
    "reconstruct_ishikawa",
    "solve",
    "threshold",
    "validate",
]
