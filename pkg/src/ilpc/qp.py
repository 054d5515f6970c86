"""Dense convex QP solver and branch-and-bound MIQP layer.

The solver is a primal-dual interior-point method with Mehrotra's
predictor-corrector on the dense reduced KKT system

    [ H + A_in' (Lam/S) A_in + eps I    A_eq' ] [dx]   [rhs_x]
    [ A_eq                             -eps I ] [dy] = [rhs_y]

factorized with an LU decomposition; eps is a tiny static regularization
(retried one decade larger on factorization failure).  Solutions are
certified: status "optimal" means the stationarity, primal-feasibility,
and complementarity residuals — recomputed from the returned vectors, not
from solver internals — are each below the tolerance in the infinity
norm.

Infeasibility is decided by an elastic phase-1 problem (minimize the
total constraint elastics, which is always feasible): a clearly positive
elastic optimum certifies primal infeasibility, otherwise the original
failure is reported as "max_iter" and left to the caller.

The MIQP layer is best-first branch-and-bound over binary variables whose
node relaxations are built by a caller-supplied function; see solve_miqp.

Problem sizes here stay in the low hundreds of variables, so everything
is dense on purpose.
"""

from __future__ import annotations

import heapq
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg


def _lu_factor(M):
    # near-optimal barriers make the KKT matrix ill-conditioned by design;
    # accuracy is policed by the recomputed residuals, not by scipy's heuristic
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        return scipy.linalg.lu_factor(M)

__all__ = [
    "QpProblem",
    "QpSolution",
    "MiqpNode",
    "MiqpResult",
    "MiqpBudget",
    "solve_qp",
    "solve_miqp",
    "condense",
    "dump_problem",
    "OPTIMAL",
    "INFEASIBLE",
    "MAX_ITER",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QpProblem:
    """min 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  A_in x <= b_in.

    H is symmetrized on construction; an indefiniteness below -1e-9 in the
    smallest eigenvalue is rejected, anything above is clamped to PSD by
    ignoring it (the solver's regularization absorbs it).
    """

    H: np.ndarray
    g: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    warm_start: Optional[np.ndarray] = None
    # internal constructions that reuse an already-validated H skip the
    # eigenvalue check; the public default keeps it
    validate: bool = True

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.H = 0.5 * (self.H + self.H.T)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H and g dimensions disagree")
        if self.validate:
            lam_min = float(scipy.linalg.eigvalsh(
                self.H, subset_by_index=[0, 0])[0]) if n else 0.0
            if lam_min < -1e-9:
                raise ValueError(
                    f"H is indefinite (min eigenvalue {lam_min:.2e})")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.A_eq.shape != (self.b_eq.shape[0], n):
                raise ValueError("equality constraint dimensions disagree")
        if self.A_in is not None:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.b_in = np.asarray(self.b_in, dtype=float).ravel()
            if self.A_in.shape != (self.b_in.shape[0], n):
                raise ValueError("inequality constraint dimensions disagree")
        if self.warm_start is not None:
            self.warm_start = np.asarray(self.warm_start, dtype=float).ravel()
            if self.warm_start.shape[0] != n:
                raise ValueError("warm start has wrong length")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    primal: np.ndarray
    dual_eq: np.ndarray
    dual_in: np.ndarray
    status: str
    objective: float
    res_stationarity: float
    res_primal: float
    res_complementarity: float
    iterations: int = 0


def _residuals(p: QpProblem, x, y, lam) -> Tuple[float, float, float]:
    """KKT residuals recomputed from scratch (the certification basis)."""
    r_stat = p.H @ x + p.g
    r_pri = 0.0
    r_comp = 0.0
    if p.A_eq is not None:
        r_stat = r_stat + p.A_eq.T @ y
        r_pri = max(r_pri, float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    if p.A_in is not None:
        r_stat = r_stat + p.A_in.T @ lam
        slack = p.b_in - p.A_in @ x
        r_pri = max(r_pri, float(np.max(np.maximum(-slack, 0.0), initial=0.0)))
        r_comp = float(np.max(np.abs(lam * slack), initial=0.0))
    return float(np.max(np.abs(r_stat), initial=0.0)), r_pri, r_comp


def _solve_kkt_direct(p: QpProblem, tol: float) -> QpSolution:
    """No inequalities: one saddle-point solve settles the problem."""
    n = p.n
    m = 0 if p.A_eq is None else p.A_eq.shape[0]
    for eps in (1e-9, 1e-8, 1e-7):
        M = np.zeros((n + m, n + m))
        M[:n, :n] = p.H + eps * np.eye(n)
        rhs = np.concatenate([-p.g, p.b_eq if m else np.zeros(0)])
        if m:
            M[:n, n:] = p.A_eq.T
            M[n:, :n] = p.A_eq
            M[n:, n:] = -eps * np.eye(m)
        try:
            fac = _lu_factor(M)
            sol = scipy.linalg.lu_solve(fac, rhs)
            # refine against the unregularized KKT operator to undo eps
            for _ in range(3):
                x, y = sol[:n], sol[n:]
                resid = np.concatenate([
                    p.H @ x + p.g + (p.A_eq.T @ y if m else 0.0),
                    (p.A_eq @ x - p.b_eq) if m else np.zeros(0)])
                if np.max(np.abs(resid), initial=0.0) < 1e-14:
                    break
                sol = sol - scipy.linalg.lu_solve(fac, resid)
        except (scipy.linalg.LinAlgError, ValueError):
            continue
        x, y = sol[:n], sol[n:]
        rs, rp, rc = _residuals(p, x, y, np.zeros(0))
        status = OPTIMAL if max(rs, rp, rc) <= tol else MAX_ITER
        return QpSolution(x, y, np.zeros(0), status, p.objective(x), rs, rp, rc, 1)
    return QpSolution(np.zeros(n), np.zeros(m), np.zeros(0), MAX_ITER,
                      np.inf, np.inf, np.inf, np.inf, 1)


_WARM_FLOOR = 1e-2       # slack floor for warm-started interior points
_WARM_MU = 1e-2          # target initial complementarity per row


def _ipm(p: QpProblem, tol: float, max_iter: int) -> QpSolution:
    """Mehrotra predictor-corrector with static regularization."""
    n = p.n
    A_in, b_in = p.A_in, p.b_in
    m_in = A_in.shape[0]
    has_eq = p.A_eq is not None
    A_eq = p.A_eq if has_eq else np.zeros((0, n))
    b_eq = p.b_eq if has_eq else np.zeros(0)
    m_eq = A_eq.shape[0]

    x = p.warm_start.copy() if p.warm_start is not None else np.zeros(n)
    y = np.zeros(m_eq)
    if p.warm_start is not None:
        # a warm start is typically near-feasible: keep its slack geometry
        # instead of flooring every row at 1.0, and pair each slack with a
        # multiplier that puts the initial complementarity near-uniformly
        # at a small mu, so the barrier path has little distance to cover
        s = np.maximum(b_in - A_in @ x, _WARM_FLOOR)
        lam = np.clip(_WARM_MU / s, 1e-6, 1e3)
    else:
        s = np.maximum(1.0, b_in - A_in @ x)
        lam = np.ones(m_in)

    best = None
    it = 0
    for it in range(1, max_iter + 1):
        rs, rp, rc = _residuals(p, x, y, lam)
        if best is None or max(rs, rp, rc) < best[0]:
            best = (max(rs, rp, rc), x.copy(), y.copy(), lam.copy(), rs, rp, rc)
        if rs <= tol and rp <= tol and rc <= tol:
            return QpSolution(x, y, lam, OPTIMAL, p.objective(x), rs, rp, rc, it)

        r_d = p.H @ x + p.g + A_eq.T @ y + A_in.T @ lam
        r_pe = A_eq @ x - b_eq
        r_pi = A_in @ x + s - b_in
        s_safe = np.maximum(s, 1e-16)
        d = np.minimum(lam / s_safe, 1e16)

        fac = None
        for eps in (1e-9, 1e-8, 1e-7):
            M = np.zeros((n + m_eq, n + m_eq))
            M[:n, :n] = p.H + A_in.T @ (d[:, None] * A_in) + eps * np.eye(n)
            if m_eq:
                M[:n, n:] = A_eq.T
                M[n:, :n] = A_eq
                M[n:, n:] = -eps * np.eye(m_eq)
            try:
                fac = _lu_factor(M)
            except (scipy.linalg.LinAlgError, ValueError):
                continue
            if np.all(np.isfinite(fac[0])):
                break
            fac = None
        if fac is None:
            break

        def newton(r_comp):
            # eliminate ds and dlam, solve for (dx, dy), back-substitute
            tmp = (lam * r_pi - r_comp) / s_safe
            rhs = np.concatenate([-r_d - A_in.T @ tmp, -r_pe])
            if not np.all(np.isfinite(rhs)):
                return None
            sol = scipy.linalg.lu_solve(fac, rhs)
            # one refinement pass against the saddle system without the
            # +-eps shifts (restores attainable residuals below eps*|dy|)
            r_true = M @ sol - rhs
            r_true[:n] -= eps * sol[:n]
            r_true[n:] += eps * sol[n:]
            if np.all(np.isfinite(r_true)):
                sol = sol - scipy.linalg.lu_solve(fac, r_true)
            dx, dy = sol[:n], sol[n:]
            ds = -r_pi - A_in @ dx
            dlam = -(r_comp + lam * ds) / s_safe
            if not (np.all(np.isfinite(ds)) and np.all(np.isfinite(dlam))):
                return None
            return dx, dy, ds, dlam

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        mu = float(s @ lam) / m_in
        with np.errstate(over="ignore", invalid="ignore"):
            # predictor
            aff = newton(lam * s)
            if aff is None:
                break
            dx_a, dy_a, ds_a, dl_a = aff
            a_p = max_step(s, ds_a)
            a_d = max_step(lam, dl_a)
            mu_aff = float((s + a_p * ds_a) @ (lam + a_d * dl_a)) / m_in
            sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0
            # corrector
            step = newton(lam * s + ds_a * dl_a - sigma * mu)
            if step is None:
                break
            dx, dy, ds, dlam = step
        a_p = min(1.0, 0.995 * max_step(s, ds))
        a_d = min(1.0, 0.995 * max_step(lam, dlam))
        x += a_p * dx
        s += a_p * ds
        y += a_d * dy
        lam += a_d * dlam
        if (not np.all(np.isfinite(x))
                or np.linalg.norm(x, np.inf) > 1e13
                or np.linalg.norm(lam, np.inf) > 1e13):
            break

    _, x, y, lam, rs, rp, rc = best
    return QpSolution(x, y, lam, MAX_ITER, p.objective(x), rs, rp, rc, it)


def _phase1(p: QpProblem, tol: float, max_iter: int) -> Tuple[float, bool]:
    """Minimum total elastic violation and whether that value is certified;
    a certified positive optimum proves infeasibility."""
    n = p.n
    m_in = 0 if p.A_in is None else p.A_in.shape[0]
    m_eq = 0 if p.A_eq is None else p.A_eq.shape[0]
    N = n + m_in + 2 * m_eq
    g = np.concatenate([np.zeros(n), np.ones(m_in + 2 * m_eq)])
    rows, rhs = [], []
    if m_in:
        R = np.zeros((m_in, N))
        R[:, :n] = p.A_in
        R[:, n:n + m_in] = -np.eye(m_in)
        rows.append(R)
        rhs.append(p.b_in)
    E = np.zeros((m_in + 2 * m_eq, N))
    E[:, n:] = -np.eye(m_in + 2 * m_eq)
    rows.append(E)
    rhs.append(np.zeros(m_in + 2 * m_eq))
    A_eq = b_eq = None
    if m_eq:
        A_eq = np.zeros((m_eq, N))
        A_eq[:, :n] = p.A_eq
        A_eq[:, n + m_in:n + m_in + m_eq] = np.eye(m_eq)
        A_eq[:, n + m_in + m_eq:] = -np.eye(m_eq)
        b_eq = p.b_eq
    aux = QpProblem(H=np.zeros((N, N)), g=g, A_eq=A_eq, b_eq=b_eq,
                    A_in=np.vstack(rows), b_in=np.concatenate(rhs))
    sol = _ipm(aux, max(tol, 1e-9), max(max_iter, 100))
    return max(sol.objective, 0.0), sol.status == OPTIMAL


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 100,
             certify: bool = True) -> QpSolution:
    """Solve a convex QP with a certified optimality contract.

    Returns status "optimal" only when the recomputed KKT residuals all
    pass ``tol``; "infeasible" when an elastic phase-1 proves the
    constraints inconsistent; "max_iter" otherwise (caller may retry with
    a looser tolerance).  ``certify=False`` skips the phase-1 on failure
    (the expensive part), leaving the verdict at "max_iter"; callers that
    only prune on failure, like branch-and-bound nodes, use that.
    """
    if p.A_in is None or p.A_in.shape[0] == 0:
        if p.n == 0:
            return QpSolution(np.zeros(0), np.zeros(0), np.zeros(0), OPTIMAL,
                              0.0, 0.0, 0.0, 0.0, 0)
        return _solve_kkt_direct(p, tol)
    sol = _ipm(p, tol, max_iter)
    if sol.status == OPTIMAL or not certify:
        return sol
    gap, certified = _phase1(p, tol, max_iter)
    if certified and gap > 1e-6:
        sol.status = INFEASIBLE
        sol.res_primal = gap
    return sol


def condense(p: QpProblem, lift: np.ndarray,
             shift: Optional[np.ndarray] = None,
             drop_tol: float = 1e-9) -> Tuple[QpProblem, float]:
    """Re-parameterize the primal as x = lift @ y + shift.

    Returns the problem over y plus an objective offset, so that
    ``p.objective(lift @ y + shift) == reduced.objective(y) + offset``.
    Equality rows the re-parameterization satisfies identically (their
    transformed coefficients vanish) are dropped; a vanishing row whose
    right-hand side does not also vanish means the lift contradicts the
    constraints, which raises.  Inequality rows are kept one-for-one, so
    inequality duals transfer unchanged.

    The point of the exercise: eliminating variables that equality
    constraints fully determine (states under dynamics, say) shrinks the
    KKT system the interior-point method factorizes, which is the whole
    solve cost at these sizes.
    """
    lift = np.asarray(lift, dtype=float)
    if lift.ndim != 2 or lift.shape[0] != p.n:
        raise ValueError("lift must be (n, n_reduced)")
    c = np.zeros(p.n) if shift is None else \
        np.asarray(shift, dtype=float).ravel()
    if c.shape[0] != p.n:
        raise ValueError("shift has wrong length")
    Hc = p.H @ c
    H_r = lift.T @ (p.H @ lift)
    g_r = lift.T @ (p.g + Hc)
    offset = float(0.5 * c @ Hc + p.g @ c)
    A_eq_r = b_eq_r = None
    if p.A_eq is not None:
        A = p.A_eq @ lift
        b = p.b_eq - p.A_eq @ c
        keep = np.max(np.abs(A), axis=1) > drop_tol
        dropped_bad = ~keep & (np.abs(b) > 1e-7)
        if np.any(dropped_bad):
            raise ValueError(
                f"lift contradicts {int(np.sum(dropped_bad))} equality rows")
        A_eq_r, b_eq_r = A[keep], b[keep]
    A_in_r = b_in_r = None
    if p.A_in is not None:
        A_in_r = p.A_in @ lift
        b_in_r = p.b_in - p.A_in @ c
    red = QpProblem(H=H_r, g=g_r, A_eq=A_eq_r, b_eq=b_eq_r,
                    A_in=A_in_r, b_in=b_in_r, validate=False)
    return red, offset


def dump_problem(p: QpProblem, path) -> None:
    """Plain-text dump (dimensions header + dense blocks) for offline digging."""
    m_eq = 0 if p.A_eq is None else p.A_eq.shape[0]
    m_in = 0 if p.A_in is None else p.A_in.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# qp n={p.n} m_eq={m_eq} m_in={m_in}\n")
        for name, block in (("H", p.H), ("g", p.g), ("A_eq", p.A_eq),
                            ("b_eq", p.b_eq), ("A_in", p.A_in), ("b_in", p.b_in)):
            if block is None:
                continue
            fh.write(f"# {name}\n")
            np.savetxt(fh, np.atleast_2d(block), fmt="%.17g")


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

@dataclass
class MiqpBudget:
    node_limit: int = 2000
    time_limit: Optional[float] = None   # seconds, wall clock
    # absolute objective gap at which a node is considered closed; the
    # default matches the float noise floor so small problems are solved
    # exactly, larger callers widen it to stop churning on ties
    gap_tol: float = 1e-9


@dataclass
class MiqpNode:
    fixed: Dict[int, int]
    bound: float
    solution: QpSolution


@dataclass
class MiqpResult:
    assignment: np.ndarray
    solution: QpSolution
    objective: float
    lower_bound: float
    nodes: int
    proven_optimal: bool

    @property
    def gap(self) -> float:
        return max(self.objective - self.lower_bound, 0.0)


class MiqpInfeasibleError(RuntimeError):
    """No feasible binary completion exists (or was found in budget)."""


def _solve_relax(builder, fixed, warm, tol, max_iter, certify=True):
    prob, alpha_idx = builder(fixed)
    if warm is not None and prob.warm_start is None:
        prob.warm_start = warm
    sol = solve_qp(prob, tol=tol, max_iter=max_iter, certify=False)
    if sol.status == MAX_ITER:
        # retry progressively looser before giving up on the node
        for loose in (1e-7, 1e-6):
            if loose <= tol:
                continue
            sol = solve_qp(prob, tol=loose, max_iter=max_iter, certify=False)
            if sol.status != MAX_ITER:
                break
    if sol.status == MAX_ITER and certify:
        # one certificate after the whole ladder, not one per attempt
        gap, certified = _phase1(prob, tol, max_iter)
        if certified and gap > 1e-6:
            sol.status = INFEASIBLE
            sol.res_primal = gap
    return prob, np.asarray(alpha_idx, dtype=int), sol


def solve_miqp(relaxation_builder: Callable,
               n_bin: int,
               incumbent_heuristic: Optional[Iterable[Sequence[int]]] = None,
               budget: Optional[MiqpBudget] = None,
               tol: float = 1e-8,
               max_iter: int = 100,
               final_tol: Optional[float] = None,
               certify_nodes: bool = True,
               root_warm: Optional[np.ndarray] = None,
               dive_bias: Optional[np.ndarray] = None) -> MiqpResult:
    """Best-first branch-and-bound over n_bin binary variables.

    ``relaxation_builder(fixed)`` maps a partial assignment {index: 0|1}
    to (QpProblem, alpha_indices), where alpha_indices locates the binary
    variables inside the primal vector; unfixed binaries must be relaxed
    to [0, 1] so every node bound under-estimates its completions.

    ``incumbent_heuristic`` is an ordered collection of full assignments
    to try as starting incumbents (each evaluated by a fully-fixed solve).
    After those, a guided dive from the root relaxation supplies a strong
    incumbent: selectors the relaxation has nearly decided are pinned in
    batches, genuinely fractional ones one at a time, warm-starting each
    solve from its parent.  Dive solves count against the node budget.
    ``dive_bias`` (a full 0/1 assignment) steers ambiguous dive decisions
    toward that pattern, which keeps successive solves of slowly-changing
    problems from flipping between near-tied completions; a selector is
    pinned against the bias only when the relaxation clearly disagrees.

    ``final_tol`` (default: ``tol``) is used for the clean re-solve of the
    winning assignment, so node relaxations can run loose while the
    returned solution is still tight.  ``certify_nodes=False`` skips the
    phase-1 infeasibility certificate at child and incumbent solves (they
    are pruned on any failure either way); the root and the final
    re-solve always get the full treatment.

    ``budget.gap_tol`` is the indifference width throughout: a new
    incumbent must beat the current one by more than it, and the search
    stops once no open node can.  If the node budget is not exhausted the
    returned incumbent is optimal to within ``gap_tol``; otherwise the
    result carries the remaining gap.  Since heuristic assignments are
    evaluated before the dive and the frontier, a caller can hand the
    previous solve's assignment to ``incumbent_heuristic`` and widen
    ``gap_tol`` to keep near-tied answers from churning between calls.
    """
    budget = budget or MiqpBudget()
    gap_tol = max(budget.gap_tol, 1e-12)
    t0 = time.monotonic()

    def out_of_time():
        return (budget.time_limit is not None
                and time.monotonic() - t0 > budget.time_limit)

    def out_of_budget(nodes):
        return nodes >= budget.node_limit or out_of_time()

    def fixed_solve(assignment, tl=tol, cert=certify_nodes
                    ) -> Optional[Tuple[float, QpSolution]]:
        fixed = {j: int(round(assignment[j])) for j in range(n_bin)}
        _, _, sol = _solve_relax(relaxation_builder, fixed, None, tl, max_iter,
                                 certify=cert)
        if sol.status != OPTIMAL:
            return None
        return sol.objective, sol

    if n_bin == 0:
        _, _, sol = _solve_relax(relaxation_builder, {}, root_warm, tol, max_iter)
        if sol.status != OPTIMAL:
            raise MiqpInfeasibleError(f"root relaxation status {sol.status}")
        return MiqpResult(np.zeros(0, dtype=int), sol, sol.objective,
                          sol.objective, 1, True)

    _, alpha_idx, root = _solve_relax(relaxation_builder, {}, root_warm, tol,
                                      max_iter)
    nodes = 1
    if root.status == INFEASIBLE:
        raise MiqpInfeasibleError("root relaxation is infeasible")
    if root.status != OPTIMAL:
        raise MiqpInfeasibleError("root relaxation did not certify "
                                  f"(status {root.status})")

    incumbent_obj = np.inf
    incumbent: Optional[Tuple[np.ndarray, QpSolution]] = None
    candidates: List[np.ndarray] = []
    for a in (incumbent_heuristic or []):
        candidates.append(np.asarray(a, dtype=float).round().astype(int))
    for a in candidates:
        got = fixed_solve(a)
        nodes += 1
        if got is not None and got[0] < incumbent_obj - gap_tol:
            incumbent_obj, incumbent = got[0], (a.copy(), got[1])

    # guided dive: from the root relaxation, repeatedly pin the most
    # fractional selector to its nearest value and re-solve warm.  A dozen
    # cheap solves usually land within ~1% of the optimum even when the
    # frontier bound is still far away, so truncated searches return a
    # near-optimal plan instead of whatever rounding produced.
    # the dive runs to completion regardless of the node cap (it is bounded
    # by ~2 n_bin solves and carries most of the solution quality); the cap
    # throttles the best-first frontier that follows
    cur = root
    dive_fixed: Dict[int, int] = {}
    while not out_of_time():
        alpha = cur.primal[alpha_idx]
        frac = np.abs(alpha - np.round(alpha))
        if dive_fixed:
            frac[list(dive_fixed)] = -1.0          # exclude already-pinned
        jmax = int(np.argmax(frac))
        if frac[jmax] <= 1e-6:
            a = np.clip(np.round(alpha), 0, 1).astype(int)
            for jj, vv in dive_fixed.items():
                a[jj] = vv
            if cur.objective < incumbent_obj - gap_tol:
                incumbent_obj, incumbent = cur.objective, (a, cur)
            break

        def pinned(js):
            trial = dict(dive_fixed)
            for j in js:
                val = int(round(float(np.clip(alpha[j], 0.0, 1.0))))
                if dive_bias is not None \
                        and abs(alpha[j] - dive_bias[j]) < 0.75:
                    # ambiguous relaxation values follow the bias pattern;
                    # only a clear contradiction overrides it
                    val = int(dive_bias[j])
                trial[j] = val
            return trial

        # pin every selector the relaxation has almost decided in one go;
        # only a genuinely fractional one is worth a solve of its own
        near = np.flatnonzero((frac > 1e-6) & (frac <= 0.25))
        batch = [int(j) for j in near] or [jmax]
        trial = pinned(batch)
        _, _, sol = _solve_relax(relaxation_builder, trial, cur.primal, tol,
                                 max_iter, certify=False)
        nodes += 1
        if sol.status != OPTIMAL and len(batch) > 1:
            trial = pinned([jmax])     # batch too greedy: single step instead
            _, _, sol = _solve_relax(relaxation_builder, trial, cur.primal,
                                     tol, max_iter, certify=False)
            nodes += 1
        if sol.status != OPTIMAL:
            j = batch[0] if len(batch) == 1 else jmax
            trial = dict(dive_fixed)
            trial[j] = 1 - pinned([j])[j]
            _, _, sol = _solve_relax(relaxation_builder, trial, cur.primal,
                                     tol, max_iter, certify=False)
            nodes += 1
            if sol.status != OPTIMAL:
                break                  # both directions failed: abandon dive
        dive_fixed, cur = trial, sol

    counter = 0
    heap: List[Tuple[float, int, MiqpNode]] = []
    heapq.heappush(heap, (root.objective, counter,
                          MiqpNode({}, root.objective, root)))
    proven = False
    lower = root.objective
    while heap:
        bound, _, node = heapq.heappop(heap)
        lower = bound
        if bound >= incumbent_obj - gap_tol:
            proven = True        # best-first: nothing cheaper remains
            break
        alpha = node.solution.primal[alpha_idx]
        frac = np.abs(alpha - np.round(alpha))
        frac[list(node.fixed)] = 0.0
        j = int(np.argmax(frac))          # argmax takes the lowest index on ties
        if frac[j] <= 1e-6:
            a = np.clip(np.round(alpha), 0, 1).astype(int)
            for jj, vv in node.fixed.items():
                a[jj] = vv
            if node.bound < incumbent_obj - gap_tol:
                incumbent_obj, incumbent = node.bound, (a, node.solution)
            continue
        if out_of_budget(nodes):
            break
        for val in (0, 1):
            fixed = dict(node.fixed)
            fixed[j] = val
            _, _, sol = _solve_relax(relaxation_builder, fixed,
                                     node.solution.primal, tol, max_iter,
                                     certify=certify_nodes)
            nodes += 1
            if sol.status != OPTIMAL:
                continue                     # infeasible or failed child: prune
            if sol.objective < incumbent_obj - gap_tol:
                counter += 1
                heapq.heappush(heap, (sol.objective, counter,
                                      MiqpNode(fixed, sol.objective, sol)))
    else:
        proven = True
        lower = incumbent_obj

    if incumbent is None:
        raise MiqpInfeasibleError("no feasible binary completion found")

    assignment, _ = incumbent
    # clean re-solve of the winner for tight residuals and returned duals
    got = fixed_solve(assignment, tl=final_tol if final_tol is not None else tol,
                      cert=True)
    if got is None:
        raise AssertionError("incumbent assignment failed its re-solve")
    objective, final = got
    return MiqpResult(assignment, final, objective,
                      objective if proven else min(lower, objective),
                      nodes, proven)
