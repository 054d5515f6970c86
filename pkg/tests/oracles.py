"""Independent reference implementations used to cross-check the solvers.

Deliberately brute-force and solver-free: the QP oracle enumerates active
sets, the MIQP oracle enumerates binary assignments, and the random
instance generators guarantee a known feasible point by construction.
"""

import itertools

import numpy as np

from ilpc.qp import OPTIMAL, QpProblem, solve_qp


def active_set_oracle(p: QpProblem, feas_tol: float = 1e-7):
    """Globally solve a small convex QP by enumerating active sets.

    For every subset of inequalities, solve the equality-constrained KKT
    system and keep candidates that are primal feasible with nonnegative
    multipliers on the chosen subset; the cheapest candidate is the
    optimum.  Returns (x, objective) or None when no candidate exists
    (infeasible problem, for strictly convex H).
    """
    n = p.n
    m_in = 0 if p.A_in is None else p.A_in.shape[0]
    n_eq = 0 if p.A_eq is None else p.A_eq.shape[0]
    best = None
    for r in range(m_in + 1):
        for S in itertools.combinations(range(m_in), r):
            blocks, rhs_b = [], []
            if n_eq:
                blocks.append(p.A_eq)
                rhs_b.append(p.b_eq)
            if S:
                blocks.append(p.A_in[list(S)])
                rhs_b.append(p.b_in[list(S)])
            A = np.vstack(blocks) if blocks else np.zeros((0, n))
            b = np.concatenate(rhs_b) if rhs_b else np.zeros(0)
            mm = A.shape[0]
            M = np.zeros((n + mm, n + mm))
            M[:n, :n] = p.H
            M[:n, n:] = A.T
            M[n:, :n] = A
            rhs = np.concatenate([-p.g, b])
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            if np.linalg.norm(M @ sol - rhs, np.inf) > feas_tol:
                continue                        # inconsistent KKT system
            x, mult = sol[:n], sol[n:]
            if m_in and np.max(p.A_in @ x - p.b_in) > feas_tol:
                continue
            if np.any(mult[n_eq:] < -feas_tol):
                continue
            obj = p.objective(x)
            if best is None or obj < best[1]:
                best = (x, obj)
    return best


def random_qp(seed: int) -> QpProblem:
    """Random strictly convex QP, feasible by construction ~90% of the time
    (the rest get a deliberately contradictory row pair)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    m_in = int(rng.integers(0, 5))
    m_eq = int(rng.integers(0, min(n, 3))) if rng.random() < 0.4 else 0
    M = rng.standard_normal((n, n))
    H = M.T @ M + 0.1 * np.eye(n)
    g = rng.standard_normal(n)
    x_hat = rng.standard_normal(n)
    A_in = b_in = A_eq = b_eq = None
    if m_in:
        A_in = rng.standard_normal((m_in, n))
        b_in = A_in @ x_hat + rng.uniform(0.1, 1.0, m_in)
    if m_eq:
        A_eq = rng.standard_normal((m_eq, n))
        b_eq = A_eq @ x_hat
    if rng.random() < 0.1:
        a = rng.standard_normal(n)
        extra = np.vstack([a, -a])
        rhs = np.array([a @ x_hat - 1.0, -(a @ x_hat) - 1.0])
        A_in = extra if A_in is None else np.vstack([A_in, extra])
        b_in = rhs if b_in is None else np.concatenate([b_in, rhs])
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)


def random_miqp_builder(seed: int, n_bin: int = None):
    """Random toy MIQP over [continuous x, binaries a].

    Returns (builder, n_bin) where builder(fixed) produces the node
    relaxation: free binaries get [0,1] bounds, fixed ones equality pins.
    Coupling rows are satisfiable at x=0 for every binary assignment, so
    all completions are feasible.
    """
    rng = np.random.default_rng(seed)
    n_c = int(rng.integers(1, 4))
    if n_bin is None:
        n_bin = int(rng.integers(1, 5))
    n = n_c + n_bin
    M = rng.standard_normal((n, n))
    H = M.T @ M + 0.2 * np.eye(n)
    g = rng.standard_normal(n)
    m_c = int(rng.integers(0, 3))
    A_c = rng.standard_normal((m_c, n)) if m_c else np.zeros((0, n))
    b_c = (np.sum(np.maximum(A_c[:, n_c:], 0.0), axis=1)
           + rng.uniform(0.1, 1.0, m_c)) if m_c else np.zeros(0)

    def builder(fixed):
        rows, rhs = [A_c], [b_c]
        eq_rows, eq_rhs = [], []
        for j in range(n_bin):
            e = np.zeros(n)
            e[n_c + j] = 1.0
            if j in fixed:
                eq_rows.append(e)
                eq_rhs.append(float(fixed[j]))
            else:
                rows.append(np.vstack([e, -e]))
                rhs.append(np.array([1.0, 0.0]))
        A_in = np.vstack(rows)
        b_in = np.concatenate(rhs)
        A_eq = np.vstack(eq_rows) if eq_rows else None
        b_eq = np.array(eq_rhs) if eq_rows else None
        prob = QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)
        return prob, np.arange(n_c, n)

    return builder, n_bin


def miqp_enumeration(builder, n_bin):
    """Exhaustive binary enumeration; returns (best objective, assignment)."""
    best = None
    for bits in itertools.product((0, 1), repeat=n_bin):
        prob, _ = builder(dict(enumerate(bits)))
        sol = solve_qp(prob)
        if sol.status == OPTIMAL and (best is None or sol.objective < best[0]):
            best = (sol.objective, np.array(bits, dtype=int))
    return best
