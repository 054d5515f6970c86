"""Per-step re-planning over the remaining horizon.

At every time step of a trial the applied input comes from a convex
tracking problem solved from the measured state: nominal states z and
inputs v over the remaining steps, slack xi against the iteration plan's
committed reference states, and tube radii eta seeded at the measured
nominal gap.  The disturbance reference d_ref, its certified radii rho,
and the iteration plan's inputs v_plan (anchor of the input-deviation
term) are frozen data from the iteration-level solve:

    min  sum_t ||z(t) - r(tau+t)||_Q^2  +  c1 sum_t xi(t)
         + sum_t ||v(t) - v_plan(tau+t)||_P^2

Variable layout of the flattened QP, with S = T - tau remaining state
samples (offsets in `mpc_layout`):

    z (S*n_x) | v ((S-1)*n_u) | xi (S-1) | eta (S)

Equality rows, in order: dynamics t = 0..S-2, radius recursion
t = 0..S-2.  Inequality rows: initial-gap pairs +/-(z(0)-x) <= eta(0)
per coordinate, xi bound pairs per (t, coordinate), tightened stage
rows, tightened terminal rows, tube-nesting pairs (when an enclosing
tube is supplied).  eta(0) uses the inequality form: the optimizer
pushes it down since larger radii only tighten constraints.

The nesting rows +/-(z(t) - nest_z(t)) <= nest_eta(t) - eta(t) force
the planned tube inside an enclosing one (the iteration plan's tube at
the first step, the previous step's shifted tube afterwards).  Without
them, re-planning may optimally jump the nominal trajectory and leave
earlier tubes behind, which voids the containment the radii are meant
to certify; with them, containment in every active tube is a chained
consequence of the single-step error bound.  The plan and shift
witnesses satisfy the nesting rows by construction, so re-planning
never loses feasibility or the per-step cost decrease.

Solutions are polished the same way the iteration-level ones are: z is
rebuilt through the exact dynamics from z(0), xi and eta(0) sit exactly
on their bounds, eta is re-propagated, and the objective is recomputed
from the polished variables, so constraint replays are exact to machine
precision except the tightened rows, which inherit the QP tolerance.

`build_mpc` and `mpc_layout` document the reference encoding; the
solver works on the equivalent problem over (z(0), v, xi, eta) with z
eliminated through the dynamics (`qp.condense`), which roughly halves
the KKT system this problem solves 29 times per trial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .model import quadratic_cost
from .qp import MAX_ITER, OPTIMAL, QpProblem, condense, solve_qp

__all__ = [
    "MpcInputs",
    "MpcSolution",
    "MpcInfeasibleError",
    "mpc_layout",
    "build_mpc",
    "solve_mpc",
    "exactify_mpc",
    "plan_candidate",
    "shift_candidate",
    "replay_mpc",
]


class MpcInfeasibleError(RuntimeError):
    """The per-step problem failed to solve.  With a consistent iteration
    plan this contradicts the recursive-feasibility guarantee, so it is
    treated as a fatal configuration / numerical fault."""


@dataclass
class MpcInputs:
    """Frozen data of one per-step solve at time tau.

    The reference arrays keep full-horizon shape; slicing to the
    remaining window happens inside the assembly, indexed by tau + t.
    """

    sys: object                     # LtvSystem
    cset: object                    # ConstraintSet
    gains: object                   # TighteningGains
    tube: object                    # TubeParams (m_bar, m, w_bar used)
    tau: int
    x_meas: np.ndarray              # measured state at tau
    r: np.ndarray                   # (T, n_x) tracking reference
    x_ref: np.ndarray               # (T, n_x) committed reference states
    d_ref: np.ndarray               # (T-1, n_x) frozen disturbance reference
    rho: np.ndarray                 # (T-1,) frozen radii
    v_plan: np.ndarray              # (T-1, n_u) iteration plan inputs
    Q: np.ndarray
    P: np.ndarray
    c1: float
    nest_z: Optional[np.ndarray] = None    # (S, n_x) enclosing tube centers
    nest_eta: Optional[np.ndarray] = None  # (S,) enclosing tube radii

    def __post_init__(self):
        sys = self.sys
        T, n_x, n_u = sys.T, sys.n_x, sys.n_u
        self.tau = int(self.tau)
        self.x_meas = np.asarray(self.x_meas, dtype=float).reshape(n_x)
        self.r = np.asarray(self.r, dtype=float)
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.d_ref = np.asarray(self.d_ref, dtype=float).reshape(T - 1, n_x)
        self.rho = np.asarray(self.rho, dtype=float).reshape(T - 1)
        self.v_plan = np.asarray(self.v_plan, dtype=float).reshape(T - 1, n_u)
        self.Q = np.asarray(self.Q, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if not 0 <= self.tau <= T - 2:
            raise ValueError(f"tau must be in [0, {T - 2}]")
        if self.r.shape != (T, n_x) or self.x_ref.shape != (T, n_x):
            raise ValueError("r and x_ref must be (T, n_x)")
        if np.any(self.rho < 0):
            raise ValueError("rho must be nonnegative")
        if (self.nest_z is None) != (self.nest_eta is None):
            raise ValueError("nest_z and nest_eta must be given together")
        if self.nest_z is not None:
            S = T - self.tau
            self.nest_z = np.asarray(self.nest_z, dtype=float).reshape(S, n_x)
            self.nest_eta = np.asarray(self.nest_eta, dtype=float).reshape(S)

    @property
    def S(self) -> int:
        """Remaining state samples tau..T-1."""
        return self.sys.T - self.tau


@dataclass
class MpcSolution:
    tau: int
    z: np.ndarray                   # (S, n_x)
    v: np.ndarray                   # (S-1, n_u)
    xi: np.ndarray                  # (S-1,)
    eta: np.ndarray                 # (S,)
    J: float
    info: Dict = field(default_factory=dict)

    @property
    def z0(self) -> np.ndarray:
        return self.z[0]

    @property
    def v0(self) -> np.ndarray:
        return self.v[0]


def mpc_layout(S: int, n_x: int, n_u: int) -> Dict[str, int]:
    off = {}
    off["z"] = 0
    off["v"] = off["z"] + S * n_x
    off["xi"] = off["v"] + (S - 1) * n_u
    off["eta"] = off["xi"] + (S - 1)
    off["n"] = off["eta"] + S
    return off


def _assemble(inp: MpcInputs) -> Tuple[QpProblem, float]:
    sys, tau = inp.sys, inp.tau
    S, n_x, n_u = inp.S, sys.n_x, sys.n_u
    off = mpc_layout(S, n_x, n_u)
    n = off["n"]

    H = np.zeros((n, n))
    g = np.zeros(n)
    twoQ, twoP = 2.0 * inp.Q, 2.0 * inp.P
    const = 0.0
    for t in range(S):
        i = off["z"] + t * n_x
        H[i:i + n_x, i:i + n_x] = twoQ
        g[i:i + n_x] = -twoQ @ inp.r[tau + t]
        const += float(inp.r[tau + t] @ inp.Q @ inp.r[tau + t])
    for t in range(S - 1):
        i = off["v"] + t * n_u
        H[i:i + n_u, i:i + n_u] = twoP
        g[i:i + n_u] = -twoP @ inp.v_plan[tau + t]
        const += float(inp.v_plan[tau + t] @ inp.P @ inp.v_plan[tau + t])
    g[off["xi"]:off["xi"] + S - 1] = inp.c1

    def zi(t):
        return off["z"] + t * n_x

    def vi(t):
        return off["v"] + t * n_u

    eq_rows, eq_rhs = [], []
    for t in range(S - 1):
        A, B = sys.A[tau + t], sys.B[tau + t]
        for i in range(n_x):
            row = np.zeros(n)
            row[zi(t + 1) + i] = 1.0
            row[zi(t):zi(t) + n_x] = -A[i]
            row[vi(t):vi(t) + n_u] = -B[i]
            eq_rows.append(row)
            eq_rhs.append(inp.d_ref[tau + t][i])
    for t in range(S - 1):
        row = np.zeros(n)
        row[off["eta"] + t + 1] = 1.0
        row[off["eta"] + t] = -inp.tube.m_bar[tau + t]
        row[off["xi"] + t] = -inp.tube.m[tau + t]
        eq_rows.append(row)
        eq_rhs.append(inp.rho[tau + t] + inp.tube.w_bar)

    in_rows, in_rhs = [], []
    # initial nominal gap: +/-(z(0) - x_meas) <= eta(0)
    for i in range(n_x):
        for sgn in (1.0, -1.0):
            row = np.zeros(n)
            row[zi(0) + i] = sgn
            row[off["eta"]] = -1.0
            in_rows.append(row)
            in_rhs.append(sgn * inp.x_meas[i])
    # xi bounds against the committed reference states
    for t in range(S - 1):
        for i in range(n_x):
            for sgn in (1.0, -1.0):
                row = np.zeros(n)
                row[zi(t) + i] = sgn
                row[off["xi"] + t] = -1.0
                in_rows.append(row)
                in_rhs.append(sgn * inp.x_ref[tau + t][i])
    # tightened stage rows
    for t in range(S - 1):
        psi = inp.gains.psi[tau + t]
        for i in range(inp.cset.n_h):
            row = np.zeros(n)
            row[zi(t):zi(t) + n_x] = inp.cset.H_x[i]
            row[vi(t):vi(t) + n_u] = inp.cset.H_u[i]
            row[off["eta"] + t] = psi[i]
            in_rows.append(row)
            in_rhs.append(inp.cset.h[i])
    # tightened terminal rows
    for i in range(inp.cset.n_hT):
        row = np.zeros(n)
        row[zi(S - 1):zi(S - 1) + n_x] = inp.cset.H_xT[i]
        row[off["eta"] + S - 1] = inp.gains.psi_T[i]
        in_rows.append(row)
        in_rhs.append(inp.cset.h_T[i])
    # tube nesting: +/-(z(t) - nest_z(t)) + eta(t) <= nest_eta(t)
    if inp.nest_z is not None:
        for t in range(S):
            for i in range(n_x):
                for sgn in (1.0, -1.0):
                    row = np.zeros(n)
                    row[zi(t) + i] = sgn
                    row[off["eta"] + t] = 1.0
                    in_rows.append(row)
                    in_rhs.append(inp.nest_eta[t] + sgn * inp.nest_z[t][i])

    prob = QpProblem(H=H, g=g, A_eq=np.array(eq_rows), b_eq=np.array(eq_rhs),
                     A_in=np.array(in_rows), b_in=np.array(in_rhs))
    return prob, const


def build_mpc(inp: MpcInputs) -> QpProblem:
    """The per-step QP for the given inputs."""
    prob, _ = _assemble(inp)
    return prob


def _mpc_lift(inp: MpcInputs) -> Tuple[np.ndarray, np.ndarray]:
    """Affine map (z0, v, xi, eta) -> full layout, rolling z through the
    frozen dynamics; used to hand the solver the smaller problem."""
    sys, tau = inp.sys, inp.tau
    S, n_x, n_u = inp.S, sys.n_x, sys.n_u
    off = mpc_layout(S, n_x, n_u)
    n_v = (S - 1) * n_u
    nr = n_x + n_v + (S - 1) + S
    L = np.zeros((off["n"], nr))
    c = np.zeros(off["n"])
    Zm = np.eye(n_x)
    Vm = np.zeros((n_x, n_v))
    cc = np.zeros(n_x)
    for t in range(S):
        base = off["z"] + t * n_x
        L[base:base + n_x, :n_x] = Zm
        L[base:base + n_x, n_x:n_x + n_v] = Vm
        c[base:base + n_x] = cc
        if t < S - 1:
            A = sys.A[tau + t]
            cc = A @ cc + inp.d_ref[tau + t]
            Vm = A @ Vm
            Vm[:, t * n_u:(t + 1) * n_u] += sys.B[tau + t]
            Zm = A @ Zm
    L[off["v"]:off["v"] + n_v, n_x:n_x + n_v] = np.eye(n_v)
    L[off["xi"]:off["xi"] + S - 1,
      n_x + n_v:n_x + n_v + S - 1] = np.eye(S - 1)
    L[off["eta"]:off["eta"] + S, n_x + n_v + S - 1:] = np.eye(S)
    return L, c


def exactify_mpc(inp: MpcInputs, z0: np.ndarray, v: np.ndarray,
                 info: Optional[Dict] = None) -> MpcSolution:
    """Rebuild a full solution from its free coordinates (z(0), v) via
    the exact recursions, with xi and eta(0) on their tight bounds."""
    sys, tau = inp.sys, inp.tau
    S, n_x = inp.S, sys.n_x
    z0 = np.asarray(z0, dtype=float).reshape(n_x)
    v = np.asarray(v, dtype=float).reshape(S - 1, sys.n_u)

    z = np.empty((S, n_x))
    z[0] = z0
    for t in range(S - 1):
        z[t + 1] = sys.A[tau + t] @ z[t] + sys.B[tau + t] @ v[t] \
            + inp.d_ref[tau + t]
    xi = np.array([np.linalg.norm(z[t] - inp.x_ref[tau + t], np.inf)
                   for t in range(S - 1)])
    eta = np.empty(S)
    eta[0] = float(np.linalg.norm(z0 - inp.x_meas, np.inf))
    for t in range(S - 1):
        eta[t + 1] = (inp.tube.m_bar[tau + t] * eta[t]
                      + inp.tube.m[tau + t] * xi[t]
                      + inp.rho[tau + t] + inp.tube.w_bar)
    J = (quadratic_cost(z, inp.r[tau:], inp.Q)
         + inp.c1 * float(np.sum(xi))
         + quadratic_cost(v, inp.v_plan[tau:], inp.P))
    return MpcSolution(tau=tau, z=z, v=v, xi=xi, eta=eta, J=J,
                       info=dict(info or {}))


def plan_candidate(inp: MpcInputs, plan) -> MpcSolution:
    """Feasibility witness at tau = 0: adopt the iteration plan verbatim.

    Its objective equals the plan's minus the radius terms (the input
    deviation vanishes), and its radii never exceed the plan's because
    the measured start lies within the plan's initial ball.
    """
    if inp.tau != 0:
        raise ValueError("the plan candidate only applies at tau = 0")
    return exactify_mpc(inp, plan.z[0], plan.v, info={"kind": "plan_candidate"})


def shift_candidate(prev: MpcSolution, inp_next: MpcInputs) -> MpcSolution:
    """Feasibility witness at tau + 1: drop the executed first stage.

    The shifted plan replays the previous dynamics exactly, so its
    states, inputs and slacks are the previous tails; only the radii are
    re-seeded at the newly measured gap, which the tube property keeps
    below the previous eta(1), and hence below the previous tail radii.
    """
    if inp_next.tau != prev.tau + 1:
        raise ValueError("candidate must shift by exactly one step")
    if prev.z.shape[0] < 2:
        raise ValueError("previous solution has no tail to shift")
    return exactify_mpc(inp_next, prev.z[1], prev.v[1:],
                        info={"kind": "shift_candidate"})


def replay_mpc(inp: MpcInputs, sol: MpcSolution) -> Dict[str, float]:
    """Independent re-evaluation of every constraint group.

    Returns per-group residuals (equalities: max |lhs - rhs|;
    inequalities: max positive part) plus their overall max.
    """
    sys, tau = inp.sys, inp.tau
    S = inp.S
    out = {}
    out["dynamics"] = max(
        float(np.max(np.abs(sol.z[t + 1] - sys.A[tau + t] @ sol.z[t]
                            - sys.B[tau + t] @ sol.v[t]
                            - inp.d_ref[tau + t])))
        for t in range(S - 1))
    out["eta_recursion"] = max(
        abs(float(sol.eta[t + 1] - inp.tube.m_bar[tau + t] * sol.eta[t]
                  - inp.tube.m[tau + t] * sol.xi[t]
                  - inp.rho[tau + t] - inp.tube.w_bar))
        for t in range(S - 1))
    out["init_gap"] = max(
        float(np.linalg.norm(sol.z[0] - inp.x_meas, np.inf) - sol.eta[0]), 0.0)
    out["xi_bound"] = max(
        max(float(np.linalg.norm(sol.z[t] - inp.x_ref[tau + t], np.inf)
                  - sol.xi[t]), 0.0)
        for t in range(S - 1))
    worst = 0.0
    for t in range(S - 1):
        resid = (inp.cset.H_x @ sol.z[t] + inp.cset.H_u @ sol.v[t]
                 + inp.gains.psi[tau + t] * sol.eta[t] - inp.cset.h)
        worst = max(worst, float(np.max(resid)))
    out["stage"] = max(worst, 0.0)
    resid = (inp.cset.H_xT @ sol.z[S - 1]
             + inp.gains.psi_T * sol.eta[S - 1] - inp.cset.h_T)
    out["terminal"] = max(float(np.max(resid)), 0.0)
    if inp.nest_z is not None:
        out["nesting"] = max(
            max(float(np.linalg.norm(sol.z[t] - inp.nest_z[t], np.inf)
                      + sol.eta[t] - inp.nest_eta[t]), 0.0)
            for t in range(S))
    out["max"] = max(out.values())
    return out


def solve_mpc(inp: MpcInputs, candidate: Optional[MpcSolution] = None,
              tol: float = 1e-8) -> MpcSolution:
    """Solve the per-step problem and return the polished solution.

    ``candidate`` (plan or shift witness) caps the returned objective:
    if the QP fails, or lands above the candidate, the candidate is
    returned instead — after an independent feasibility replay, so an
    invalid witness is never substituted.

    When nesting anchors are present, the nesting rows are tightened by
    a margin of 100 * tol inside the solver, and a polished solution with
    any positive nesting residual is discarded in favor of the candidate.
    Together these keep the realized tube chain strictly inside every
    enclosing tube in floating point, not just up to solver tolerance —
    the containment the chain certifies is checked with no slack at all.
    """
    prob, const = _assemble(inp)
    lift, cshift = _mpc_lift(inp)
    red, red_off = condense(prob, lift, cshift)
    const += red_off
    if inp.nest_z is not None:
        n_nest = 2 * inp.S * inp.sys.n_x
        red.b_in[-n_nest:] -= 100.0 * tol
    if candidate is not None:
        red.warm_start = np.concatenate([
            candidate.z[0], candidate.v.ravel(), candidate.xi, candidate.eta])
    # no certification here: on failure the candidate decides the outcome
    qsol = solve_qp(red, tol=tol, certify=False)
    if qsol.status == MAX_ITER:
        for loose in (1e-7, 1e-6):
            qsol = solve_qp(red, tol=loose, certify=False)
            if qsol.status != MAX_ITER:
                break

    def fall_back() -> Optional[MpcSolution]:
        if candidate is None:
            return None
        rep = replay_mpc(inp, candidate)
        if rep["max"] > 1e-7 or rep.get("nesting", 0.0) > 0.0:
            return None
        return MpcSolution(tau=candidate.tau, z=candidate.z, v=candidate.v,
                           xi=candidate.xi, eta=candidate.eta, J=candidate.J,
                           info=dict(candidate.info, kind="candidate_fallback"))

    if qsol.status != OPTIMAL:
        fb = fall_back()
        if fb is not None:
            return fb
        raise MpcInfeasibleError(
            f"per-step problem at tau={inp.tau} failed ({qsol.status}); "
            "no valid candidate to fall back on")

    n_x, n_u = inp.sys.n_x, inp.sys.n_u
    sol = exactify_mpc(
        inp, qsol.primal[:n_x],
        qsol.primal[n_x:n_x + (inp.S - 1) * n_u],
        info={"kind": "qp", "qp_objective": qsol.objective + const,
              "iterations": qsol.iterations})
    gap = abs(sol.J - (qsol.objective + const))
    if gap > 1e-6:
        raise AssertionError(f"objective replay gap {gap:.2e} at tau={inp.tau}")
    if inp.nest_z is not None \
            and replay_mpc(inp, sol).get("nesting", 0.0) > 0.0:
        fb = fall_back()
        if fb is not None:
            return fb
        raise MpcInfeasibleError(
            f"per-step solution at tau={inp.tau} escapes its enclosing tube "
            "and no candidate is available")
    if candidate is not None and sol.J > candidate.J + 1e-9:
        fb = fall_back()
        if fb is not None:
            return fb
    return sol
