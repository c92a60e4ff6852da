import numpy as np
import pytest

from ghmf.hierarchy import build_hierarchy
from ghmf.problem import GhmfProblem

FIG1_EDGES = [("C", "ROOT"), ("T", "ROOT"), ("B", "C"), ("M", "C"), ("Sc", "C")]


def fig1_hierarchy():
    return build_hierarchy(FIG1_EDGES)


def phantom_problem(seed=3):
    """8x8 cardiac phantom: bright blood pool disk inside a myocardium ring
    (brighter scar on one side) on a dark thorax."""
    h = fig1_hierarchy()
    yy, xx = np.mgrid[0:8, 0:8]
    r = np.hypot(yy - 3.5, xx - 3.5)
    img = np.where(r < 1.6, 1.0, np.where(r < 2.8, 0.5, 0.1))
    img[(r >= 1.6) & (r < 2.8) & (xx > 4)] = 0.8
    img = img + np.random.default_rng(seed).normal(0, 0.05, img.shape)
    means = {"T": 0.1, "B": 1.0, "M": 0.5, "Sc": 0.8}
    data = {k: np.abs(img - v) for k, v in means.items()}
    smooth = {"C": 0.1, "T": 0.05, "B": 0.05, "M": 0.05, "Sc": 0.05}
    return GhmfProblem.from_terms(h, (8, 8), data=data, smooth=smooth)


def flat_problem(rng, names, dims, smooth, low=0.0, high=1.0):
    h = build_hierarchy([(n, "ROOT") for n in names])
    data = {n: rng.uniform(low, high, dims) for n in names}
    return GhmfProblem.from_terms(h, dims, data=data, smooth={n: smooth for n in names})


def random_leaf_labeling(rng, problem):
    """Random point of the leaf simplex at every voxel, keyed by leaf id."""
    leaves = problem.hierarchy.leaves
    w = rng.exponential(size=(len(leaves),) + problem.geometry.dims)
    w /= w.sum(axis=0)
    return {leaf: w[k] for k, leaf in enumerate(leaves)}


@pytest.fixture
def fig1():
    return fig1_hierarchy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
