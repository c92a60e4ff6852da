import numpy as np
import pytest

from conftest import flat_problem, phantom_problem
from ghmf.hierarchy import build_hierarchy
from ghmf.problem import GhmfProblem, primal_energy
from ghmf.solver import (
    InvalidProblem,
    InvariantViolation,
    SolverParams,
    SolverState,
    UnnormalizedProblem,
    initialize,
    iterate,
    solve,
    threshold,
    update_labels,
    update_sink_flows,
    update_spatial_flows,
)


def div1d(q):
    n = len(q)
    out = [0.0] * n
    for i in range(n):
        right = q[i] if i < n - 1 else 0.0
        left = q[i - 1] if i > 0 else 0.0
        out[i] = right - left
    return out


def grad1d(g):
    return [g[i + 1] - g[i] for i in range(len(g) - 1)] + [0.0]


def manual_state(problem, params, u, p, q):
    return SolverState(problem, params, np.array(u, float), np.array(p, float), np.array(q, float))


# --- initialization ---------------------------------------------------------

def test_initialize_unique_minimum():
    h = build_hierarchy([("A", "ROOT"), ("B", "ROOT")])
    p = GhmfProblem.from_terms(h, (2,), data={"A": [0.0, 2.0], "B": [1.0, 0.5]})
    s = initialize(p)
    np.testing.assert_array_equal(s.u[h.id("A")], [1, 0])
    np.testing.assert_array_equal(s.u[h.id("B")], [0, 1])
    np.testing.assert_array_equal(s.p, [[0.0, 0.5]] * 3)
    assert not np.any(s.q)


def test_initialize_tie_splits():
    h = build_hierarchy([("A", "ROOT"), ("B", "ROOT")])
    s = initialize(GhmfProblem.from_terms(h, (1,), data={"A": 0.0, "B": 0.0}))
    assert s.u[h.id("A")][0] == 0.5 and s.u[h.id("B")][0] == 0.5


def test_initialize_branch_sum(fig1):
    p = GhmfProblem.from_terms(fig1, (1,), data={"T": 0.7, "B": 0.0, "M": 0.0, "Sc": 0.3})
    s = initialize(p)
    assert s.u[fig1.id("C")][0] == 1.0
    assert s.u[fig1.id("B")][0] == 0.5 and s.u[fig1.id("T")][0] == 0.0


def test_initialize_rejects_unnormalized(fig1):
    p = GhmfProblem.from_terms(fig1, (2,), data={"C": 1.0})
    with pytest.raises(UnnormalizedProblem):
        initialize(p)
    p = GhmfProblem.from_terms(fig1, (2,), data={"T": -1.0})
    with pytest.raises(UnnormalizedProblem):
        initialize(p)


def test_root_only_problem_rejected():
    h = build_hierarchy([("ROOT", None)])
    p = GhmfProblem.from_terms(h, (2,))
    with pytest.raises(InvalidProblem):
        solve(p)


# --- single-step transcripts against scalar loops ----------------------------

def test_spatial_flow_step_transcript():
    h = build_hierarchy([("A", "ROOT"), ("B", "ROOT")])
    S = {"A": [0.3, 0.05, 1.0], "B": [0.2, 0.2, 0.2]}
    prob = GhmfProblem.from_terms(h, (3,), data={"A": [0.1, 0.0, 0.4], "B": [0.0, 0.3, 0.2]}, smooth=S)
    params = SolverParams(c=0.3, tau=0.2)
    u = [[1, 1, 1], [0.9, 0.2, 0.4], [0.1, 0.8, 0.6]]
    p = [[0.5, 0.1, 0.3], [0.2, 0.4, -0.1], [0.0, 0.7, 0.25]]
    q = [[[0, 0, 0]], [[0.1, -0.02, 0.0]], [[-0.1, 0.15, 0.0]]]
    s = manual_state(prob, params, u, p, q)
    update_spatial_flows(s)
    for name in ("A", "B"):
        L = h.id(name)
        d = div1d(q[L][0])
        g = [d[x] + p[L][x] - p[h.root][x] - u[L][x] / params.c for x in range(3)]
        step = grad1d(g)
        new = [q[L][0][x] + params.tau * step[x] for x in range(3)]
        new = [max(-S[name][x], min(S[name][x], v)) for x, v in enumerate(new)]
        np.testing.assert_allclose(s.q[L, 0], new, rtol=0, atol=1e-14)
    assert not np.any(s.q[h.root])


def test_sink_flow_step_transcript(fig1):
    D = {"T": [0.2, 0.0], "B": [0.0, 0.6], "M": [0.4, 0.1], "Sc": [0.1, 0.3]}
    prob = GhmfProblem.from_terms(fig1, (2,), data=D, smooth={n: 1.0 for n in fig1.names})
    params = SolverParams(c=0.5, tau=0.1)
    rng = np.random.default_rng(7)
    u = rng.uniform(0, 1, (6, 2))
    u[fig1.root] = 1
    p = rng.uniform(0, 0.5, (6, 2))
    q = rng.uniform(-0.3, 0.3, (6, 1, 2))
    q[fig1.root] = 0
    q[:, 0, -1] = 0
    s = manual_state(prob, params, u, p, q)
    update_sink_flows(s)

    c = params.c
    dq = {i: div1d(list(q[i, 0])) for i in range(6)}
    R, C = fig1.id("ROOT"), fig1.id("C")
    for x in range(2):
        ref = {i: p[i, x] for i in range(6)}
        for name in ("B", "M", "Sc"):
            L = fig1.id(name)
            ref[L] = min(D[name][x], ref[C] - dq[L][x] + u[L, x] / c)
        L = fig1.id("T")
        ref[L] = min(D["T"][x], ref[R] - dq[L][x] + u[L, x] / c)
        acc = ref[R] - dq[C][x] + u[C, x] / c
        for name in ("B", "M", "Sc"):
            L = fig1.id(name)
            acc += ref[L] + dq[L][x] - u[L, x] / c
        ref[C] = acc / 4
        acc = 1 / c
        for L in (C, fig1.id("T")):
            acc += ref[L] + dq[L][x] - u[L, x] / c
        ref[R] = acc / 2
        for i in range(6):
            assert s.p[i, x] == pytest.approx(ref[i], abs=1e-14)


def test_label_update_example():
    h = build_hierarchy([("A", "ROOT"), ("B", "ROOT")])
    prob = GhmfProblem.from_terms(h, (1,), data={"A": 0.0, "B": 0.0})
    s = manual_state(prob, SolverParams(c=0.25), [[1.0], [0.8], [0.2]], [[0.5], [0.4], [0.6]], np.zeros((3, 1, 1)))
    delta = update_labels(s)
    # G_A = 0.4 - 0.5 = -0.1 -> u_A = 0.8 + 0.025
    assert s.u[h.id("A")][0] == pytest.approx(0.825, abs=1e-15)
    assert s.u[h.id("B")][0] == pytest.approx(0.2 - 0.025, abs=1e-15)
    np.testing.assert_allclose(np.abs(delta), 0.025)


# --- properties --------------------------------------------------------------

def test_zero_smoothness_fixed_point(rng):
    p = flat_problem(rng, ["A", "B", "C"], (4, 3), 0.0)
    s = initialize(p)
    u0, p0 = s.u.copy(), s.p.copy()
    for _ in range(5):
        assert iterate(s) <= 1e-12
    assert not np.any(s.q)
    np.testing.assert_allclose(s.u, u0, atol=1e-12)
    np.testing.assert_allclose(s.p[p.hierarchy.leaves], p0[p.hierarchy.leaves], atol=1e-12)


def test_debug_invariants_run_clean():
    sol = solve(phantom_problem(), SolverParams(max_iters=50, debug_invariants=True))
    assert sol.iterations == 50


def test_debug_invariants_detect_overflow(monkeypatch):
    h = build_hierarchy([("A", "ROOT"), ("B", "ROOT")])
    prob = GhmfProblem.from_terms(h, (3,), data={"A": [0.0, 1.0, 0.0], "B": [1.0, 0.0, 1.0]}, smooth={"A": 0.01, "B": 0.01})
    s = initialize(prob, SolverParams(debug_invariants=True))
    monkeypatch.setattr("ghmf.solver.project_ball", lambda q, cap, rank=None: q)
    with pytest.raises(InvariantViolation):
        update_spatial_flows(s)


def test_threshold_ties_lowest_id(fig1):
    u = np.zeros((6, 2))
    u[fig1.id("B")] = [0.4, 0.2]
    u[fig1.id("M")] = [0.4, 0.5]
    assert list(threshold(u, fig1)) == [fig1.id("B"), fig1.id("M")]
    with pytest.raises(TypeError):
        threshold(u)


def test_non_convergence_is_reported():
    sol = solve(phantom_problem(), SolverParams(max_iters=3))
    assert not sol.converged and sol.iterations == 3
    assert np.isfinite(sol.energy)


def test_unnormalized_input_energy_is_original(rng, fig1):
    data = {n: rng.normal(size=(3,)) for n in fig1.names}
    p = GhmfProblem.from_terms(fig1, (3,), data=data, smooth={n: 0.1 for n in fig1.names})
    sol = solve(p)
    assert sol.converged
    leaves = {i: sol.labeling[i] for i in fig1.leaves}
    assert sol.energy == pytest.approx(primal_energy(p, leaves), abs=1e-12)
    assert sol.gap >= -1e-6 and sol.gap <= 1e-4


def test_phantom_recovers_structure():
    p = phantom_problem()
    sol = solve(p)
    assert sol.converged
    lab = threshold(sol)
    h = p.hierarchy
    assert lab[3, 3] == h.id("B") and lab[0, 0] == h.id("T")
    leaves = sol.labeling[list(h.leaves)].sum(axis=0)
    assert np.all(np.abs(leaves - 1) <= 1e-3)


def test_workers_are_deterministic():
    p = phantom_problem()
    a = solve(p, SolverParams(max_iters=200))
    b = solve(p, SolverParams(max_iters=200, workers=3))
    np.testing.assert_array_equal(a.labeling, b.labeling)
    assert a.energy == b.energy and a.dual_value == b.dual_value


def test_params_validation():
    for kw in ({"c": 0}, {"tau": -1}, {"max_iters": 0}, {"tolerance": 0}, {"workers": 0}):
        with pytest.raises(ValueError):
            SolverParams(**kw)


def test_progress_callback():
    seen = []
    solve(phantom_problem(), SolverParams(max_iters=20), progress=lambda s, e, g: seen.append(s.iteration), report_every=5)
    assert seen == [5, 10, 15, 20]
