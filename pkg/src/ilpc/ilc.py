"""Iteration-level planning problem.

Between trials the scheme plans, in one shot, the nominal trajectory for
the next trial: nominal states z and inputs v, a disturbance reference
d_ref with certified error radius rho, the tube radii eta, and per-step
selectors alpha that choose, for every time step, whether the disturbance
reference is anchored at the previously visited state (alpha = 1, fresh
tight measurement box) or kept at the previous reference state (alpha =
0, accumulated box).  The objective trades tracking error against the
information-quality terms:

    min  ||z - r||_Q^2  +  c1 ||xi||_1  +  sum_t c2(t) rho(t),

with c2(t) = c1 / m(t).  With binary alpha this is a mixed-integer QP,
solved by branch-and-bound over the alpha in [0, 1] node relaxations; the
relaxed variant keeps alpha fractional (sound for affine disturbances).

Variable layout of the flattened QP (offsets in `ilc_layout`):

    z (T*n_x) | v ((T-1)*n_u) | xi (T-1) | rho (T-1) | eta (T) |
    d_ref ((T-1)*n_x) | x_ref ((T-1)*n_x) | alpha (T-1)

Equality rows, in order: initial state z(0); initial radius eta(0);
dynamics t = 0..T-2; eta recursion t = 0..T-2; x_ref selector link
t = 0..T-2; pins for fixed alphas.  Inequality rows: xi bounds (+/- pairs
per coordinate), rho robustness pairs per coordinate, tightened stage
rows, tightened terminal rows, [0, 1] bounds for free alphas.  xi, rho
and eta need no explicit sign constraints: the paired rows force
2 xi >= 0 and 2 rho >= box width >= 0, and the eta recursion keeps eta
nonnegative from eta(0) = r0.

Returned solutions are "polished": alpha is exact, x_ref/z/eta are
rebuilt through the exact equality recursions, and xi/rho sit exactly on
their tight bounds — so replaying every constraint group is exact to
machine precision except the tightened rows, which inherit the QP
tolerance.

`build_ilc` and `ilc_layout` document the reference encoding above.
`solve_ilc` does not hand that problem to the solver verbatim: d_ref and
x_ref are fully determined by (z, v) and alpha through their defining
equalities, so it solves over the eliminated parameterization

    z | v | xi | rho | eta | alpha

obtained by `qp.condense`, which drops a third of the variables and half
the equality rows from every branch-and-bound node.  The two problems
have the same feasible set and optimal value; only the solver-facing
coordinates differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .model import quadratic_cost
from .qp import (
    MAX_ITER,
    OPTIMAL,
    MiqpBudget,
    MiqpInfeasibleError,
    QpProblem,
    condense,
    solve_miqp,
    solve_qp,
)
from .setmem import Box, rho_bound
from .tube import TighteningGains, TubeParams, propagate_eta

__all__ = [
    "IlcInputs",
    "IlcSolution",
    "IlcInfeasibleError",
    "ilc_layout",
    "build_ilc",
    "solve_ilc",
    "exactify",
    "fallback_candidate",
    "replay",
]


class IlcInfeasibleError(RuntimeError):
    """The planning problem could not be solved (should not happen when a
    valid fallback candidate exists)."""


@dataclass
class IlcInputs:
    """Frozen data of one planning instance."""

    sys: object                     # LtvSystem
    cset: object                    # ConstraintSet
    gains: TighteningGains
    tube: TubeParams
    r: np.ndarray                   # (T, n_x) reference
    d_boxes: List[Box]              # estimates at x_prev(t), length T-1
    d_ref_boxes: List[Box]          # estimates at x_ref_prev(t), length T-1
    x_prev: np.ndarray              # (T, n_x)
    x_ref_prev: np.ndarray          # (T, n_x)
    Q: np.ndarray
    c1: float
    c2: np.ndarray                  # length T-1
    x_bar: np.ndarray
    affine_f: bool = False

    def __post_init__(self):
        T, n_x = self.sys.T, self.sys.n_x
        self.r = np.asarray(self.r, dtype=float)
        self.x_prev = np.asarray(self.x_prev, dtype=float)
        self.x_ref_prev = np.asarray(self.x_ref_prev, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.c2 = np.asarray(self.c2, dtype=float)
        self.x_bar = np.asarray(self.x_bar, dtype=float)
        if self.r.shape != (T, n_x) or self.x_prev.shape != (T, n_x) \
                or self.x_ref_prev.shape != (T, n_x):
            raise ValueError("r, x_prev, x_ref_prev must be (T, n_x)")
        if len(self.d_boxes) != T - 1 or len(self.d_ref_boxes) != T - 1:
            raise ValueError("need T-1 boxes of each kind")
        if any(b.is_empty for b in self.d_boxes + self.d_ref_boxes):
            raise ValueError("estimate boxes must be non-empty")
        if self.c2.shape != (T - 1,):
            raise ValueError("c2 must have T-1 entries")


@dataclass
class IlcSolution:
    z: np.ndarray                   # (T, n_x)
    v: np.ndarray                   # (T-1, n_u)
    xi: np.ndarray                  # (T-1,)
    rho: np.ndarray                 # (T-1,)
    eta: np.ndarray                 # (T,)
    d_ref: np.ndarray               # (T-1, n_x)
    x_ref: np.ndarray               # (T, n_x); last row is bookkeeping pad
    alpha: np.ndarray               # (T-1,)
    J: float
    info: Dict = field(default_factory=dict)


def ilc_layout(T: int, n_x: int, n_u: int) -> Dict[str, int]:
    off = {}
    off["z"] = 0
    off["v"] = off["z"] + T * n_x
    off["xi"] = off["v"] + (T - 1) * n_u
    off["rho"] = off["xi"] + (T - 1)
    off["eta"] = off["rho"] + (T - 1)
    off["d_ref"] = off["eta"] + T
    off["x_ref"] = off["d_ref"] + (T - 1) * n_x
    off["alpha"] = off["x_ref"] + (T - 1) * n_x
    off["n"] = off["alpha"] + (T - 1)
    return off


def _assemble_core(inp: IlcInputs):
    """Everything that does not depend on the alpha fixing."""
    sys = inp.sys
    T, n_x, n_u = sys.T, sys.n_x, sys.n_u
    off = ilc_layout(T, n_x, n_u)
    n = off["n"]

    H = np.zeros((n, n))
    g = np.zeros(n)
    twoQ = 2.0 * inp.Q
    for t in range(T):
        i = off["z"] + t * n_x
        H[i:i + n_x, i:i + n_x] = twoQ
        g[i:i + n_x] = -twoQ @ inp.r[t]
    g[off["xi"]:off["xi"] + T - 1] = inp.c1
    g[off["rho"]:off["rho"] + T - 1] = inp.c2
    const = sum(float(inp.r[t] @ inp.Q @ inp.r[t]) for t in range(T))

    eq_rows, eq_rhs = [], []

    def zi(t):
        return off["z"] + t * n_x

    def vi(t):
        return off["v"] + t * n_u

    def dri(t):
        return off["d_ref"] + t * n_x

    def xri(t):
        return off["x_ref"] + t * n_x

    # initial nominal state and initial radius
    for i in range(n_x):
        row = np.zeros(n)
        row[zi(0) + i] = 1.0
        eq_rows.append(row)
        eq_rhs.append(inp.x_bar[i])
    row = np.zeros(n)
    row[off["eta"]] = 1.0
    eq_rows.append(row)
    eq_rhs.append(inp.tube.eta0)

    # nominal dynamics
    for t in range(T - 1):
        A, B = sys.A[t], sys.B[t]
        for i in range(n_x):
            row = np.zeros(n)
            row[zi(t + 1) + i] = 1.0
            row[zi(t):zi(t) + n_x] = -A[i]
            row[vi(t):vi(t) + n_u] = -B[i]
            row[dri(t) + i] = -1.0
            eq_rows.append(row)
            eq_rhs.append(0.0)

    # radius recursion
    for t in range(T - 1):
        row = np.zeros(n)
        row[off["eta"] + t + 1] = 1.0
        row[off["eta"] + t] = -inp.tube.m_bar[t]
        row[off["xi"] + t] = -inp.tube.m[t]
        row[off["rho"] + t] = -1.0
        eq_rows.append(row)
        eq_rhs.append(inp.tube.w_bar)

    # reference-state selector link
    for t in range(T - 1):
        gap = inp.x_prev[t] - inp.x_ref_prev[t]
        for i in range(n_x):
            row = np.zeros(n)
            row[xri(t) + i] = 1.0
            row[off["alpha"] + t] = -gap[i]
            eq_rows.append(row)
            eq_rhs.append(inp.x_ref_prev[t][i])

    in_rows, in_rhs = [], []

    # xi bounds per coordinate
    for t in range(T - 1):
        for i in range(n_x):
            for sgn in (1.0, -1.0):
                row = np.zeros(n)
                row[zi(t) + i] = sgn
                row[xri(t) + i] = -sgn
                row[off["xi"] + t] = -1.0
                in_rows.append(row)
                in_rhs.append(0.0)

    # rho robustness pairs against the alpha-blended box corners
    for t in range(T - 1):
        b1, b2 = inp.d_boxes[t], inp.d_ref_boxes[t]
        for i in range(n_x):
            row = np.zeros(n)
            row[dri(t) + i] = 1.0
            row[off["alpha"] + t] = -(b1.lower[i] - b2.lower[i])
            row[off["rho"] + t] = -1.0
            in_rows.append(row)
            in_rhs.append(b2.lower[i])
            row = np.zeros(n)
            row[dri(t) + i] = -1.0
            row[off["alpha"] + t] = b1.upper[i] - b2.upper[i]
            row[off["rho"] + t] = -1.0
            in_rows.append(row)
            in_rhs.append(-b2.upper[i])

    # tightened stage rows
    n_h = inp.cset.n_h
    for t in range(T - 1):
        psi = inp.gains.psi[t]
        for i in range(n_h):
            row = np.zeros(n)
            row[zi(t):zi(t) + n_x] = inp.cset.H_x[i]
            row[vi(t):vi(t) + n_u] = inp.cset.H_u[i]
            row[off["eta"] + t] = psi[i]
            in_rows.append(row)
            in_rhs.append(inp.cset.h[i])

    # tightened terminal rows
    for i in range(inp.cset.n_hT):
        row = np.zeros(n)
        row[zi(T - 1):zi(T - 1) + n_x] = inp.cset.H_xT[i]
        row[off["eta"] + T - 1] = inp.gains.psi_T[i]
        in_rows.append(row)
        in_rhs.append(inp.cset.h_T[i])

    return H, g, const, eq_rows, eq_rhs, in_rows, in_rhs, off


def build_ilc(inp: IlcInputs, alpha_fixed: Optional[Dict[int, int]] = None
              ) -> Tuple[QpProblem, np.ndarray]:
    """Full QP for one alpha fixing (empty dict = all relaxed to [0,1])."""
    H, g, _, eq_rows, eq_rhs, in_rows, in_rhs, off = _assemble_core(inp)
    prob, idx = _finish_build(inp, alpha_fixed or {}, H, g,
                              eq_rows, eq_rhs, in_rows, in_rhs, off)
    return prob, idx


def _finish_build(inp, alpha_fixed, H, g, eq_rows, eq_rhs, in_rows, in_rhs, off):
    T = inp.sys.T
    n = off["n"]
    eq_rows, eq_rhs = list(eq_rows), list(eq_rhs)
    in_rows, in_rhs = list(in_rows), list(in_rhs)
    for t in sorted(alpha_fixed):
        row = np.zeros(n)
        row[off["alpha"] + t] = 1.0
        eq_rows.append(row)
        eq_rhs.append(float(alpha_fixed[t]))
    for t in range(T - 1):
        if t in alpha_fixed:
            continue
        row = np.zeros(n)
        row[off["alpha"] + t] = 1.0
        in_rows.append(row)
        in_rhs.append(1.0)
        row = np.zeros(n)
        row[off["alpha"] + t] = -1.0
        in_rows.append(row)
        in_rhs.append(0.0)
    prob = QpProblem(H=H, g=g, A_eq=np.array(eq_rows), b_eq=np.array(eq_rhs),
                     A_in=np.array(in_rows), b_in=np.array(in_rhs))
    return prob, np.arange(off["alpha"], off["alpha"] + T - 1)


def _reduced_layout(T: int, n_x: int, n_u: int) -> Dict[str, int]:
    off = {}
    off["z"] = 0
    off["v"] = off["z"] + T * n_x
    off["xi"] = off["v"] + (T - 1) * n_u
    off["rho"] = off["xi"] + (T - 1)
    off["eta"] = off["rho"] + (T - 1)
    off["alpha"] = off["eta"] + T
    off["n"] = off["alpha"] + (T - 1)
    return off


def _ilc_lift(inp: IlcInputs) -> Tuple[np.ndarray, np.ndarray, Dict[str, int]]:
    """Affine map from the eliminated coordinates back to the full layout:
    d_ref from the dynamics, x_ref from the selector link."""
    sys = inp.sys
    T, n_x, n_u = sys.T, sys.n_x, sys.n_u
    off = ilc_layout(T, n_x, n_u)
    roff = _reduced_layout(T, n_x, n_u)
    L = np.zeros((off["n"], roff["n"]))
    c = np.zeros(off["n"])
    for name, width in (("z", T * n_x), ("v", (T - 1) * n_u), ("xi", T - 1),
                        ("rho", T - 1), ("eta", T), ("alpha", T - 1)):
        L[off[name]:off[name] + width,
          roff[name]:roff[name] + width] = np.eye(width)
    for t in range(T - 1):
        base = off["d_ref"] + t * n_x
        rz = roff["z"] + t * n_x
        rz1 = roff["z"] + (t + 1) * n_x
        rv = roff["v"] + t * n_u
        L[base:base + n_x, rz1:rz1 + n_x] = np.eye(n_x)
        L[base:base + n_x, rz:rz + n_x] = -sys.A[t]
        L[base:base + n_x, rv:rv + n_u] = -sys.B[t]
    for t in range(T - 1):
        base = off["x_ref"] + t * n_x
        c[base:base + n_x] = inp.x_ref_prev[t]
        L[base:base + n_x, roff["alpha"] + t] = inp.x_prev[t] - inp.x_ref_prev[t]
    return L, c, roff


def exactify(inp: IlcInputs, alpha: np.ndarray, v: np.ndarray,
             d_ref: np.ndarray, rho: Optional[np.ndarray] = None,
             info: Optional[Dict] = None) -> IlcSolution:
    """Rebuild a full solution from its free coordinates via the exact
    equality recursions (tight xi, tight rho unless given)."""
    sys = inp.sys
    T, n_x = sys.T, sys.n_x
    alpha = np.asarray(alpha, dtype=float).ravel()
    v = np.asarray(v, dtype=float).reshape(T - 1, sys.n_u)
    d_ref = np.asarray(d_ref, dtype=float).reshape(T - 1, n_x)

    x_ref = np.empty((T, n_x))
    for t in range(T - 1):
        x_ref[t] = alpha[t] * inp.x_prev[t] + (1.0 - alpha[t]) * inp.x_ref_prev[t]
    x_ref[T - 1] = inp.x_prev[T - 1]

    z = np.empty((T, n_x))
    z[0] = inp.x_bar
    for t in range(T - 1):
        z[t + 1] = sys.A[t] @ z[t] + sys.B[t] @ v[t] + d_ref[t]

    xi = np.array([np.linalg.norm(z[t] - x_ref[t], np.inf) for t in range(T - 1)])
    if rho is None:
        rho = np.array([rho_bound(d_ref[t], inp.d_boxes[t], inp.d_ref_boxes[t],
                                  float(np.clip(alpha[t], 0.0, 1.0)))
                        for t in range(T - 1)])
    else:
        rho = np.asarray(rho, dtype=float).ravel()
    eta = propagate_eta(inp.tube, xi, rho)
    J = (quadratic_cost(z, inp.r, inp.Q) + inp.c1 * float(np.sum(xi))
         + float(inp.c2 @ rho))
    return IlcSolution(z=z, v=v, xi=xi, rho=rho, eta=eta, d_ref=d_ref,
                       x_ref=x_ref, alpha=alpha, J=J, info=dict(info or {}))


def fallback_candidate(inp: IlcInputs,
                       prev: Optional[IlcSolution] = None,
                       seed_traj: Optional[Tuple[np.ndarray, np.ndarray,
                                                 np.ndarray]] = None
                       ) -> IlcSolution:
    """Feasibility witness for the planning problem.

    First planned iteration (``seed_traj`` = (x0, u0, d_bar0)): adopt the
    measured seed trial verbatim — nominal trajectory x0, inputs u0,
    disturbance reference d_bar0 with radius w_bar, all selectors 1.
    Later iterations: copy the previous plan with all selectors 0 and rho
    copied unchanged, which is feasible against the shrunken boxes and
    costs exactly the previous objective.
    """
    if prev is not None:
        sol = IlcSolution(
            z=prev.z.copy(), v=prev.v.copy(), xi=prev.xi.copy(),
            rho=prev.rho.copy(), eta=prev.eta.copy(), d_ref=prev.d_ref.copy(),
            x_ref=prev.x_ref.copy(), alpha=np.zeros(inp.sys.T - 1),
            J=prev.J, info={"kind": "copy_alpha0"})
        return sol
    if seed_traj is None:
        raise ValueError("need either a previous solution or the seed trial")
    x0, u0, d_bar0 = seed_traj
    sol = exactify(inp, np.ones(inp.sys.T - 1), u0, d_bar0,
                   info={"kind": "seed_alpha1"})
    return sol


def replay(inp: IlcInputs, sol: IlcSolution) -> Dict[str, float]:
    """Independent re-evaluation of every constraint group.

    Returns per-group residuals (equalities: max |lhs - rhs|; inequalities:
    max positive part) plus their overall max under key "max".
    """
    sys = inp.sys
    T, n_x = sys.T, sys.n_x
    out = {}
    out["init"] = max(float(np.max(np.abs(sol.z[0] - inp.x_bar))),
                      abs(float(sol.eta[0]) - inp.tube.eta0))
    out["dynamics"] = max(
        float(np.max(np.abs(sol.z[t + 1] - sys.A[t] @ sol.z[t]
                            - sys.B[t] @ sol.v[t] - sol.d_ref[t])))
        for t in range(T - 1))
    out["eta_recursion"] = max(
        abs(float(sol.eta[t + 1] - inp.tube.m_bar[t] * sol.eta[t]
                  - inp.tube.m[t] * sol.xi[t] - sol.rho[t] - inp.tube.w_bar))
        for t in range(T - 1))
    out["x_ref_link"] = max(
        float(np.max(np.abs(sol.x_ref[t] - sol.alpha[t] * inp.x_prev[t]
                            - (1.0 - sol.alpha[t]) * inp.x_ref_prev[t])))
        for t in range(T - 1))
    out["xi_bound"] = max(
        max(float(np.linalg.norm(sol.z[t] - sol.x_ref[t], np.inf))
            - float(sol.xi[t]), 0.0)
        for t in range(T - 1))
    worst = 0.0
    for t in range(T - 1):
        b1, b2 = inp.d_boxes[t], inp.d_ref_boxes[t]
        a = sol.alpha[t]
        low = a * b1.lower + (1.0 - a) * b2.lower
        up = a * b1.upper + (1.0 - a) * b2.upper
        worst = max(worst,
                    float(np.max(sol.d_ref[t] - low)) - float(sol.rho[t]),
                    float(np.max(up - sol.d_ref[t])) - float(sol.rho[t]))
    out["rho_bound"] = max(worst, 0.0)
    out["stage"] = max(
        float(np.max(inp.cset.H_x @ sol.z[t] + inp.cset.H_u @ sol.v[t]
                     + inp.gains.psi[t] * sol.eta[t] - inp.cset.h))
        for t in range(T - 1))
    out["stage"] = max(out["stage"], 0.0)
    out["terminal"] = max(float(np.max(
        inp.cset.H_xT @ sol.z[T - 1] + inp.gains.psi_T * sol.eta[T - 1]
        - inp.cset.h_T)), 0.0)
    out["alpha_range"] = max(float(np.max(sol.alpha - 1.0)),
                             float(np.max(-sol.alpha)), 0.0)
    out["max"] = max(out.values())
    return out


def solve_ilc(inp: IlcInputs,
              mode: str = "binary",
              budget: Optional[MiqpBudget] = None,
              candidate: Optional[IlcSolution] = None,
              prev_alpha: Optional[np.ndarray] = None,
              tol: float = 1e-9,
              node_tol: Optional[float] = None,
              allow_relaxed_nonaffine: bool = False) -> IlcSolution:
    """Solve the planning problem in binary or relaxed mode.

    ``candidate`` (from fallback_candidate) serves as incumbent seed and
    as a hard safety net: the returned objective never exceeds the
    candidate's.  ``prev_alpha`` is tried first as an incumbent.
    ``tol`` governs the returned solution (relaxed solve / final binary
    re-solve); branch-and-bound node relaxations run at the looser
    ``node_tol`` (default 1e-7).
    """
    if mode not in ("binary", "relaxed"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "relaxed" and not inp.affine_f and not allow_relaxed_nonaffine:
        raise ValueError(
            "relaxed mode certifies the tube only for affine disturbances; "
            "pass allow_relaxed_nonaffine=True to override")
    T = inp.sys.T

    n_x, n_u = inp.sys.n_x, inp.sys.n_u
    H, g, const, eq_rows, eq_rhs, in_rows, in_rhs, off = _assemble_core(inp)
    full, _ = _finish_build(inp, {}, H, g, eq_rows, eq_rhs,
                            in_rows, in_rhs, off)
    lift, shift, roff = _ilc_lift(inp)
    red, red_off = condense(full, lift, shift)
    const += red_off
    a0 = roff["alpha"]
    # the alpha range rows sit at the end of the inequality block, two per
    # step; a node that pins alpha(t) swaps them for an equality pin
    m_base = red.A_in.shape[0] - 2 * (T - 1)

    def builder(fixed):
        if not fixed:
            prob = QpProblem(H=red.H, g=red.g, A_eq=red.A_eq, b_eq=red.b_eq,
                             A_in=red.A_in, b_in=red.b_in, validate=False)
            return prob, np.arange(a0, a0 + T - 1)
        pins = np.zeros((len(fixed), roff["n"]))
        pin_rhs = np.zeros(len(fixed))
        keep = np.ones(red.A_in.shape[0], dtype=bool)
        for i, t in enumerate(sorted(fixed)):
            pins[i, a0 + t] = 1.0
            pin_rhs[i] = float(fixed[t])
            keep[m_base + 2 * t] = False
            keep[m_base + 2 * t + 1] = False
        prob = QpProblem(H=red.H, g=red.g,
                         A_eq=np.vstack([red.A_eq, pins]),
                         b_eq=np.concatenate([red.b_eq, pin_rhs]),
                         A_in=red.A_in[keep], b_in=red.b_in[keep],
                         validate=False)
        return prob, np.arange(a0, a0 + T - 1)

    def unpack(primal, assignment=None, info=None):
        alpha = (np.asarray(assignment, dtype=float) if assignment is not None
                 else np.clip(primal[a0:a0 + T - 1], 0.0, 1.0))
        z = primal[roff["z"]:roff["z"] + T * n_x].reshape(T, n_x)
        v = primal[roff["v"]:roff["v"] + (T - 1) * n_u].reshape(T - 1, n_u)
        d_ref = np.array([z[t + 1] - inp.sys.A[t] @ z[t] - inp.sys.B[t] @ v[t]
                          for t in range(T - 1)])
        return exactify(inp, alpha, v, d_ref, info=info)

    sol = None
    try:
        if mode == "relaxed":
            prob, _ = builder({})
            qsol = solve_qp(prob, tol=tol, certify=False)
            if qsol.status == MAX_ITER:
                for loose in (1e-8, 1e-7, 1e-6):
                    qsol = solve_qp(prob, tol=loose, certify=False)
                    if qsol.status != MAX_ITER:
                        break
            if qsol.status != OPTIMAL:
                raise IlcInfeasibleError(f"relaxed solve failed: {qsol.status}")
            sol = unpack(qsol.primal, info={"kind": "relaxed",
                                            "qp_objective": qsol.objective + const})
            gap = abs(sol.J - (qsol.objective + const))
            if gap > 1e-6:
                raise AssertionError(f"objective replay gap {gap:.2e}")
        else:
            heur, seen = [], set()
            maybe = [prev_alpha]
            if prev_alpha is None and candidate is not None:
                maybe.append(candidate.alpha)
            for a in maybe:
                if a is None:
                    continue
                key = tuple(int(round(x)) for x in np.asarray(a).ravel())
                if key not in seen:
                    seen.add(key)
                    heur.append(np.array(key, dtype=int))
            root_warm = None
            if candidate is not None:
                # the always-feasible fallback is a valid interior warm point
                # of the root relaxation in the reduced coordinates
                root_warm = np.concatenate([
                    candidate.z.ravel(), candidate.v.ravel(), candidate.xi,
                    candidate.rho, candidate.eta, candidate.alpha])
            res = solve_miqp(builder, T - 1, incumbent_heuristic=heur,
                             budget=budget or MiqpBudget(),
                             tol=node_tol if node_tol is not None else 1e-7,
                             final_tol=tol, max_iter=60,
                             certify_nodes=False, root_warm=root_warm,
                             dive_bias=(None if prev_alpha is None else
                                        np.round(prev_alpha).astype(int)))
            sol = unpack(res.solution.primal, assignment=res.assignment,
                         info={"kind": "binary", "nodes": res.nodes,
                               "proven_optimal": res.proven_optimal,
                               "lower_bound": res.lower_bound + const,
                               "qp_objective": res.objective + const})
            gap = abs(sol.J - (res.objective + const))
            if gap > 1e-6:
                raise AssertionError(f"objective replay gap {gap:.2e}")
    except (MiqpInfeasibleError, IlcInfeasibleError):
        if candidate is None:
            raise
        sol = None

    # safety net: a verified-feasible candidate caps the returned objective
    if candidate is not None and (sol is None or sol.J > candidate.J + 1e-9):
        resid = replay(inp, candidate)["max"]
        if resid <= 1e-7:
            return IlcSolution(
                z=candidate.z, v=candidate.v, xi=candidate.xi,
                rho=candidate.rho, eta=candidate.eta, d_ref=candidate.d_ref,
                x_ref=candidate.x_ref, alpha=candidate.alpha, J=candidate.J,
                info=dict(candidate.info, kind="candidate_fallback"))
        if sol is None:
            raise IlcInfeasibleError(
                f"planning problem unsolved; candidate violates constraints "
                f"by {resid:.3e}")
    if sol is None:
        raise IlcInfeasibleError("planning problem unsolved and no candidate")
    return sol
