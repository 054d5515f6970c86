"""Tests for the interior-point QP solver and branch-and-bound layer."""

import numpy as np
import pytest

from ilpc.qp import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    MiqpBudget,
    MiqpInfeasibleError,
    QpProblem,
    solve_miqp,
    solve_qp,
)

from oracles import (
    active_set_oracle,
    miqp_enumeration,
    random_miqp_builder,
    random_qp,
)


def test_unconstrained_quadratic():
    s = solve_qp(QpProblem(H=np.eye(3), g=np.zeros(3)))
    assert s.status == OPTIMAL
    np.testing.assert_allclose(s.primal, np.zeros(3), atol=1e-8)


def test_single_bound_by_hand():
    # min 1/2 (x-2)^2  s.t.  x <= 1   ->   x* = 1, multiplier 1
    s = solve_qp(QpProblem(H=[[1.0]], g=[-2.0], A_in=[[1.0]], b_in=[1.0]))
    assert s.status == OPTIMAL
    assert s.primal[0] == pytest.approx(1.0, abs=1e-7)
    assert s.dual_in[0] == pytest.approx(1.0, abs=1e-6)


def test_equality_projection():
    s = solve_qp(QpProblem(H=np.eye(2), g=np.zeros(2),
                           A_eq=[[1.0, 1.0]], b_eq=[1.0]))
    assert s.status == OPTIMAL
    np.testing.assert_allclose(s.primal, [0.5, 0.5], atol=1e-8)


def test_infeasible_certificate():
    s = solve_qp(QpProblem(H=[[1.0]], g=[0.0],
                           A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0]))
    assert s.status == INFEASIBLE
    assert s.res_primal >= 1.9      # elastic optimum = total gap of 2


def test_lp_case():
    # pure LP (H = 0): min x on [0, 1]
    s = solve_qp(QpProblem(H=[[0.0]], g=[1.0],
                           A_in=[[1.0], [-1.0]], b_in=[1.0, 0.0]))
    assert s.status == OPTIMAL
    assert s.primal[0] == pytest.approx(0.0, abs=1e-7)


def test_certified_residuals_replay():
    rng = np.random.default_rng(6)
    for seed in range(30):
        p = random_qp(seed + 4000)
        s = solve_qp(p)
        if s.status != OPTIMAL:
            continue
        # recompute the certificate independently of the solver
        r = p.H @ s.primal + p.g
        if p.A_eq is not None:
            r = r + p.A_eq.T @ s.dual_eq
            assert np.max(np.abs(p.A_eq @ s.primal - p.b_eq)) <= 1e-8
        if p.A_in is not None:
            r = r + p.A_in.T @ s.dual_in
            slack = p.b_in - p.A_in @ s.primal
            assert np.min(slack) >= -1e-8
            assert np.min(s.dual_in) >= 0.0
            assert np.max(np.abs(slack * s.dual_in)) <= 1e-8
        assert np.max(np.abs(r)) <= 1e-8


def test_matches_active_set_oracle():
    hits, miss = 0, 0
    for seed in range(200):
        p = random_qp(seed)
        s = solve_qp(p)
        want = active_set_oracle(p)
        if want is None:
            assert s.status in (INFEASIBLE, MAX_ITER)
            miss += 1
            continue
        assert s.status == OPTIMAL, f"seed {seed}: {s.status}"
        assert s.objective == pytest.approx(want[1], abs=1e-6)
        np.testing.assert_allclose(s.primal, want[0], atol=1e-5)
        hits += 1
    assert hits > 150 and miss > 5       # both paths exercised


def test_determinism():
    p1 = random_qp(77)
    p2 = random_qp(77)
    a, b = solve_qp(p1), solve_qp(p2)
    np.testing.assert_array_equal(a.primal, b.primal)
    np.testing.assert_array_equal(a.dual_in, b.dual_in)
    assert a.iterations == b.iterations


def test_warm_start_agrees():
    p = random_qp(123)
    base = solve_qp(p)
    p2 = random_qp(123)
    p2.warm_start = base.primal + 0.01
    again = solve_qp(p2)
    assert again.status == OPTIMAL
    assert again.objective == pytest.approx(base.objective, abs=1e-7)


def test_indefinite_rejected():
    with pytest.raises(ValueError, match="indefinite"):
        QpProblem(H=[[-1.0]], g=[0.0])


def test_symmetrization():
    p = QpProblem(H=[[1.0, 0.4], [0.0, 1.0]], g=[0.0, 0.0])
    np.testing.assert_allclose(p.H, [[1.0, 0.2], [0.2, 1.0]])


def test_max_iter_does_not_misreport_feasible():
    # starved of iterations the solver must not claim infeasibility
    p = random_qp(5)
    s = solve_qp(p, max_iter=2)
    assert s.status in (OPTIMAL, MAX_ITER)


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

def test_miqp_no_binaries_is_single_solve():
    def builder(fixed):
        assert fixed == {}
        return QpProblem(H=np.eye(2), g=[-1.0, 0.0]), np.zeros(0, dtype=int)
    res = solve_miqp(builder, 0)
    assert res.proven_optimal
    np.testing.assert_allclose(res.solution.primal, [1.0, 0.0], atol=1e-7)


def test_miqp_two_binary_toy():
    builder, n_bin = random_miqp_builder(42, n_bin=2)
    res = solve_miqp(builder, n_bin)
    want = miqp_enumeration(builder, n_bin)
    assert res.proven_optimal
    assert res.objective == pytest.approx(want[0], abs=1e-6)
    np.testing.assert_array_equal(res.assignment, want[1])


def test_miqp_matches_enumeration_battery():
    for seed in range(40):
        builder, n_bin = random_miqp_builder(seed)
        res = solve_miqp(builder, n_bin)
        want = miqp_enumeration(builder, n_bin)
        assert want is not None
        assert res.proven_optimal, f"seed {seed}"
        assert res.objective == pytest.approx(want[0], abs=1e-6), f"seed {seed}"


def test_miqp_incumbent_heuristic_never_beats_answer():
    for seed in (3, 11, 29):
        builder, n_bin = random_miqp_builder(seed)
        heur = [np.zeros(n_bin, dtype=int), np.ones(n_bin, dtype=int)]
        res = solve_miqp(builder, n_bin, incumbent_heuristic=heur)
        for a in heur:
            prob, _ = builder(dict(enumerate(a)))
            s = solve_qp(prob)
            if s.status == OPTIMAL:
                assert res.objective <= s.objective + 1e-9


def test_miqp_bound_validity_on_toys():
    # the root relaxation bound must under-estimate every completion
    for seed in (1, 13, 27):
        builder, n_bin = random_miqp_builder(seed)
        prob, _ = builder({})
        root = solve_qp(prob)
        want = miqp_enumeration(builder, n_bin)
        assert root.objective <= want[0] + 1e-8


def test_miqp_budget_exhaustion_returns_incumbent():
    builder, n_bin = random_miqp_builder(8, n_bin=4)
    res = solve_miqp(builder, n_bin, budget=MiqpBudget(node_limit=2))
    want = miqp_enumeration(builder, n_bin)
    # still feasible and bounded below by the reported lower bound
    assert res.objective >= want[0] - 1e-9
    assert res.lower_bound <= res.objective + 1e-9


def test_miqp_infeasible_root_raises():
    def builder(fixed):
        rows = [[1.0], [-1.0]]
        rhs = [-1.0, -1.0]
        return QpProblem(H=[[1.0]], g=[0.0], A_in=rows, b_in=rhs), np.zeros(0, int)
    with pytest.raises(MiqpInfeasibleError):
        solve_miqp(builder, 0)


def test_miqp_determinism():
    builder, n_bin = random_miqp_builder(19)
    r1 = solve_miqp(builder, n_bin)
    r2 = solve_miqp(builder, n_bin)
    np.testing.assert_array_equal(r1.assignment, r2.assignment)
    assert r1.objective == r2.objective
    assert r1.nodes == r2.nodes
