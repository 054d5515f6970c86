"""Plant, constraints, and scenario handling for the ILPC simulator.

The controlled system is a discrete-time uncertain plant

    x(t+1) = A(t) x(t) + B(t) u(t) + f(x(t), t) + w(t),

where f is an unknown state-dependent disturbance with a known Lipschitz
bound m(t) and w is bounded noise (infinity-norm ball of radius w_bar).
The controller steers a nominal model

    z(t+1) = A(t) z(t) + B(t) v(t) + d_ref(t)

and applies the ancillary feedback u = v + K(t) (x - z).

Everything in this module is plain data plus pure functions.  Learning,
tube propagation, and the optimization layers live in `setmem`, `tube`,
`ilc`, and `mpc`; the closed loop is orchestrated by `loop`.

Conventions
-----------
A trajectory over one trial has T state samples x(0..T-1) and T-1 input
samples u(0..T-2).  Per-step quantities (inputs, disturbances, noise)
therefore have T-1 rows; per-state quantities have T rows.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

__all__ = [
    "LtvSystem",
    "ConstraintSet",
    "DisturbanceModel",
    "Scenario",
    "step_true",
    "nominal_step",
    "ancillary_input",
    "check_constraints",
    "sample_noise",
    "sample_initial_state",
    "build_reference",
    "quadratic_cost",
    "box_constraints",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_scenario",
    "builtin_scenario",
    "estimate_lipschitz",
]


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class LtvSystem:
    """Linear time-varying dynamics data plus uncertainty radii.

    Attributes
    ----------
    T : number of state samples per trial (T-1 input steps).
    A, B, K : per-time matrices, lists of length T.  Stepping only uses
        indices 0..T-2; index T-1 is kept so every per-time list has a
        uniform length.  K is the ancillary feedback gain (n_u x n_x).
    m : per-time Lipschitz bounds on the unknown disturbance, length T.
    w_bar : noise radius (infinity norm).
    r0 : radius of the initial-state ball around x_bar.
    x_bar : nominal initial state (n_x,).
    """

    T: int
    A: list
    B: list
    K: list
    m: np.ndarray
    w_bar: float
    r0: float
    x_bar: np.ndarray

    def __post_init__(self):
        self.A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A]
        self.B = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.B]
        self.K = [np.atleast_2d(np.asarray(k, dtype=float)) for k in self.K]
        self.m = np.asarray(self.m, dtype=float)
        self.x_bar = np.asarray(self.x_bar, dtype=float)
        if not (len(self.A) == len(self.B) == len(self.K) == self.T):
            raise ValueError("A, B, K must each have T entries")
        if self.m.shape != (self.T,):
            raise ValueError("m must have T entries")
        n_x, n_u = self.n_x, self.n_u
        for t in range(self.T):
            if self.A[t].shape != (n_x, n_x):
                raise ValueError(f"A({t}) has shape {self.A[t].shape}")
            if self.B[t].shape != (n_x, n_u):
                raise ValueError(f"B({t}) has shape {self.B[t].shape}")
            if self.K[t].shape != (n_u, n_x):
                raise ValueError(f"K({t}) has shape {self.K[t].shape}")
        if np.any(self.m <= 0.0):
            raise ValueError("m(t) must be > 0 for every t (c2 = c1/m must be finite)")
        if self.w_bar < 0.0 or self.r0 < 0.0:
            raise ValueError("w_bar and r0 must be nonnegative")

    @property
    def n_x(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.B[0].shape[1]

    def a_cl(self, t: int) -> np.ndarray:
        """Closed-loop matrix A(t) + B(t) K(t) of the ancillary loop."""
        return self.A[t] + self.B[t] @ self.K[t]

    def m_bar(self, t: int) -> float:
        """Tube contraction coefficient m_bar(t) = ||A(t)+B(t)K(t)||_inf + m(t)."""
        return float(np.linalg.norm(self.a_cl(t), np.inf) + self.m[t])


@dataclass
class ConstraintSet:
    """Polytopic stage and terminal constraints.

    Stage: H_x x + H_u u <= h for every step t = 0..T-2.
    Terminal: H_xT x <= h_T at the final state t = T-1.
    """

    H_x: np.ndarray
    H_u: np.ndarray
    h: np.ndarray
    H_xT: np.ndarray
    h_T: np.ndarray

    def __post_init__(self):
        self.H_x = np.atleast_2d(np.asarray(self.H_x, dtype=float))
        self.H_u = np.atleast_2d(np.asarray(self.H_u, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        self.H_xT = np.atleast_2d(np.asarray(self.H_xT, dtype=float))
        self.h_T = np.asarray(self.h_T, dtype=float).ravel()
        if not (self.H_x.shape[0] == self.H_u.shape[0] == self.h.shape[0]):
            raise ValueError("stage row counts of H_x, H_u, h disagree")
        if self.H_xT.shape[0] != self.h_T.shape[0]:
            raise ValueError("terminal row counts of H_xT, h_T disagree")

    @property
    def n_h(self) -> int:
        return self.h.shape[0]

    @property
    def n_hT(self) -> int:
        return self.h_T.shape[0]


def box_constraints(n_x: int, n_u: int, x_max: float, u_max: float) -> ConstraintSet:
    """Symmetric box constraints ||x||_inf <= x_max, ||u||_inf <= u_max.

    Row order: (+x_0, -x_0, +x_1, -x_1, ..., +u_0, -u_0, ...); the terminal
    set repeats the state rows.
    """
    rows_x = []
    for i in range(n_x):
        e = np.zeros(n_x)
        e[i] = 1.0
        rows_x.extend([e, -e])
    rows_u = []
    for j in range(n_u):
        e = np.zeros(n_u)
        e[j] = 1.0
        rows_u.extend([e, -e])
    H_x = np.vstack([np.array(rows_x), np.zeros((2 * n_u, n_x))])
    H_u = np.vstack([np.zeros((2 * n_x, n_u)), np.array(rows_u)])
    h = np.concatenate([np.full(2 * n_x, x_max), np.full(2 * n_u, u_max)])
    return ConstraintSet(H_x=H_x, H_u=H_u, h=h,
                         H_xT=np.array(rows_x), h_T=np.full(2 * n_x, x_max))


@dataclass
class DisturbanceModel:
    """Evaluator of the unknown state-dependent disturbance f(x, t).

    Kinds
    -----
    ``zero``            f = 0.
    ``quadratic_diag``  f_i(x, t) = coeff * x_i^2 + d_table[t, i]  (non-affine).
    ``affine``          f(x, t) = D x + d_table[t]  (enables the relaxed
                        alpha in [0, 1] mode of the iteration-level problem).
    """

    kind: str
    coeff: float = 0.0
    d_table: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("zero", "quadratic_diag", "affine"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.d_table is not None:
            self.d_table = np.atleast_2d(np.asarray(self.d_table, dtype=float))
        if self.D is not None:
            self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if self.kind == "affine" and self.D is None:
            raise ValueError("affine disturbance requires D")

    @property
    def affine(self) -> bool:
        return self.kind in ("zero", "affine")

    def _d_of_t(self, t: int, n_x: int) -> np.ndarray:
        if self.d_table is None:
            return np.zeros(n_x)
        return self.d_table[t]

    def f(self, x: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "quadratic_diag":
            return self.coeff * x ** 2 + self._d_of_t(t, x.shape[0])
        return self.D @ x + self._d_of_t(t, x.shape[0])


@dataclass
class Scenario:
    """Complete description of one simulation study.

    K0 may be given directly or left None with ``k0_poles`` set, in which
    case the run layer resolves it by pole placement before the first
    rollout.
    """

    sys: LtvSystem
    cset: ConstraintSet
    dist: DisturbanceModel
    u_bar: np.ndarray                 # (T-1, n_u) reference input
    Q: np.ndarray
    P: np.ndarray
    c1: float
    K0: Optional[np.ndarray] = None
    k0_poles: Optional[np.ndarray] = None
    seed: int = 0
    iterations: int = 50
    name: str = "scenario"
    r_table: Optional[np.ndarray] = None   # optional shipped reference samples
    enforce_assumption4: bool = True
    K_infnorm_expected: Optional[float] = None
    # fraction of the placed K0 gain applied in the seed-trial feedback;
    # detuning keeps the un-learned rollout inside the worst-case input
    # budget of the baseline tightening (full gain can demand corrections
    # the tightened input rows cannot accommodate)
    initial_feedback_scale: float = 1.0

    def __post_init__(self):
        self.u_bar = np.atleast_2d(np.asarray(self.u_bar, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.K0 is not None:
            self.K0 = np.atleast_2d(np.asarray(self.K0, dtype=float))
        if self.k0_poles is not None:
            self.k0_poles = np.asarray(self.k0_poles, dtype=float)
        if self.r_table is not None:
            self.r_table = np.atleast_2d(np.asarray(self.r_table, dtype=float))
        T, n_x, n_u = self.sys.T, self.sys.n_x, self.sys.n_u
        if self.u_bar.shape != (T - 1, n_u):
            raise ValueError(f"u_bar must be (T-1, n_u) = ({T-1}, {n_u})")
        if self.Q.shape != (n_x, n_x) or not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric (n_x, n_x)")
        if np.any(np.linalg.eigvalsh(self.Q) <= 0.0):
            raise ValueError("Q must be positive definite")
        if self.P.shape != (n_u, n_u):
            raise ValueError("P must be (n_u, n_u)")
        if self.c1 <= 0.0:
            raise ValueError("c1 must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def c2(self, t: int) -> float:
        """Estimation-radius cost weight c2(t) = c1 / m(t)."""
        return self.c1 / float(self.sys.m[t])


# ---------------------------------------------------------------------------
# dynamics and sampling operations
# ---------------------------------------------------------------------------

def step_true(sys: LtvSystem, dist: DisturbanceModel, x: np.ndarray,
              u: np.ndarray, w: np.ndarray, t: int) -> np.ndarray:
    """True plant step A(t)x + B(t)u + f(x,t) + w."""
    if not 0 <= t < sys.T - 1:
        raise IndexError(f"step index {t} outside horizon [0, {sys.T - 2}]")
    return sys.A[t] @ x + sys.B[t] @ np.atleast_1d(u) + dist.f(x, t) + w


def nominal_step(sys: LtvSystem, z: np.ndarray, v: np.ndarray,
                 d_ref: np.ndarray, t: int) -> np.ndarray:
    """Nominal model step A(t)z + B(t)v + d_ref."""
    if not 0 <= t < sys.T - 1:
        raise IndexError(f"step index {t} outside horizon [0, {sys.T - 2}]")
    return sys.A[t] @ z + sys.B[t] @ np.atleast_1d(v) + d_ref


def ancillary_input(v: np.ndarray, K_t: np.ndarray, x: np.ndarray,
                    z: np.ndarray) -> np.ndarray:
    """Applied input u = v + K(t)(x - z)."""
    return np.atleast_1d(v) + np.atleast_2d(K_t) @ (x - z)


def check_constraints(cset: ConstraintSet, x: np.ndarray,
                      u: Optional[np.ndarray] = None,
                      terminal: bool = False):
    """Membership test in the stage (or terminal) polytope.

    Returns (ok, margin) where margin = max row residual H x + H u - h;
    nonpositive margin means satisfied.
    """
    if terminal:
        resid = cset.H_xT @ x - cset.h_T
    else:
        uu = np.zeros(cset.H_u.shape[1]) if u is None else np.atleast_1d(u)
        resid = cset.H_x @ x + cset.H_u @ uu - cset.h
    margin = float(np.max(resid))
    return margin <= 0.0, margin


def sample_noise(rng: np.random.Generator, w_bar: float, n_x: int) -> np.ndarray:
    """One noise vector, coordinates i.i.d. uniform on [-w_bar, w_bar]."""
    if w_bar < 0:
        raise ValueError("w_bar must be nonnegative")
    if w_bar == 0.0:
        return np.zeros(n_x)
    return rng.uniform(-w_bar, w_bar, size=n_x)


def sample_initial_state(rng: np.random.Generator, sys: LtvSystem) -> np.ndarray:
    """Trial initial state x(0) = x_bar + uniform draw in the r0 inf-ball."""
    if sys.r0 == 0.0:
        return sys.x_bar.copy()
    return sys.x_bar + rng.uniform(-sys.r0, sys.r0, size=sys.n_x)


def build_reference(scenario: Scenario) -> np.ndarray:
    """Reference trajectory r: disturbance- and noise-free rollout of u_bar.

    r(0) = x_bar and r(t+1) = A(t) r(t) + B(t) u_bar(t); shape (T, n_x).
    """
    sys = scenario.sys
    r = np.zeros((sys.T, sys.n_x))
    r[0] = sys.x_bar
    for t in range(sys.T - 1):
        r[t + 1] = sys.A[t] @ r[t] + sys.B[t] @ scenario.u_bar[t]
    return r


def quadratic_cost(traj: np.ndarray, ref: np.ndarray, Q: np.ndarray) -> float:
    """Sum over rows of (traj - ref)^T Q (traj - ref)."""
    e = np.atleast_2d(traj) - np.atleast_2d(ref)
    return float(np.einsum("ti,ij,tj->", e, Q, e))


# ---------------------------------------------------------------------------
# scenario (de)serialization
# ---------------------------------------------------------------------------

def _expand_matrix_list(entry, T: int, what: str) -> list:
    """Accept a single matrix (time-invariant) or a list of T matrices."""
    arr = np.asarray(entry, dtype=float)
    if arr.ndim <= 2:
        return [np.atleast_2d(arr)] * T
    if arr.shape[0] != T:
        raise ValueError(f"{what}: need 1 or T matrices, got {arr.shape[0]}")
    return [np.atleast_2d(a) for a in arr]


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a Scenario from a plain-dict configuration (the JSON schema).

    See README for the schema.  Matrices are row-major nested lists; a
    single matrix for A/B/K means time-invariant and is expanded to T
    copies.  ``constraints`` is either a box shorthand
    {"x_max": ..., "u_max": ...} or explicit H_x/H_u/h/H_xT/h_T arrays.
    """
    T = int(cfg["T"])
    A = _expand_matrix_list(cfg["A"], T, "A")
    B = _expand_matrix_list(cfg["B"], T, "B")
    K = _expand_matrix_list(cfg["K"], T, "K")
    m_entry = np.asarray(cfg["m"], dtype=float)
    m = np.full(T, float(m_entry)) if m_entry.ndim == 0 else m_entry
    sys = LtvSystem(T=T, A=A, B=B, K=K, m=m, w_bar=float(cfg["w_bar"]),
                    r0=float(cfg["r0"]), x_bar=np.asarray(cfg["x_bar"], dtype=float))

    ccfg = cfg["constraints"]
    if "x_max" in ccfg:
        cset = box_constraints(sys.n_x, sys.n_u, float(ccfg["x_max"]),
                               float(ccfg["u_max"]))
    else:
        cset = ConstraintSet(H_x=ccfg["H_x"], H_u=ccfg["H_u"], h=ccfg["h"],
                             H_xT=ccfg["H_xT"], h_T=ccfg["h_T"])

    dcfg = cfg.get("disturbance", {"kind": "zero"})
    dist = DisturbanceModel(
        kind=dcfg["kind"],
        coeff=float(dcfg.get("coeff", 0.0)),
        d_table=dcfg.get("d_table"),
        D=dcfg.get("D"),
    )

    n_x, n_u = sys.n_x, sys.n_u
    Q = cfg.get("Q", "identity")
    Q = np.eye(n_x) if isinstance(Q, str) else np.asarray(Q, dtype=float)
    P = cfg.get("P", 0.0)
    P = float(P) * np.eye(n_u) if np.isscalar(P) else np.asarray(P, dtype=float)

    scen = Scenario(
        sys=sys, cset=cset, dist=dist,
        u_bar=np.asarray(cfg["u_bar"], dtype=float).reshape(T - 1, n_u),
        Q=Q, P=P, c1=float(cfg["c1"]),
        K0=cfg.get("K0"), k0_poles=cfg.get("k0_poles"),
        seed=int(cfg.get("seed", 0)), iterations=int(cfg.get("iterations", 50)),
        name=str(cfg.get("name", "scenario")),
        r_table=cfg.get("r_table"),
        enforce_assumption4=bool(cfg.get("enforce_assumption4", True)),
        K_infnorm_expected=cfg.get("K_infnorm_expected"),
        initial_feedback_scale=float(cfg.get("initial_feedback_scale", 1.0)),
    )
    _validate_loaded(scen)
    return scen


def _validate_loaded(scen: Scenario) -> None:
    """Post-load sanity checks: gain norm pin and Lipschitz sample check."""
    if scen.K_infnorm_expected is not None:
        got = max(np.linalg.norm(scen.sys.a_cl(t), np.inf)
                  for t in range(scen.sys.T - 1))
        if abs(got - scen.K_infnorm_expected) > 1e-3:
            raise ValueError(
                f"||A+BK||_inf = {got:.6f} differs from the expected "
                f"{scen.K_infnorm_expected} by more than 1e-3")
    lip = estimate_lipschitz(scen)
    worst = float(np.max(scen.sys.m[:-1]))
    if lip > worst + 1e-12:
        warnings.warn(
            f"sampled Lipschitz constant {lip:.4f} of the disturbance model "
            f"exceeds the configured bound m = {worst:.4f}; the learning "
            "guarantees assume m is a true bound", RuntimeWarning)


def estimate_lipschitz(scen: Scenario, samples: int = 200) -> float:
    """Sampled estimate of sup ||f(x)-f(y)||_inf / ||x-y||_inf over the state box.

    Deterministic (fixed probe RNG); used only for the load-time warning.
    """
    sys, dist = scen.sys, scen.dist
    if dist.kind == "zero":
        return 0.0
    # bound the probe box by the largest state-row bound when available
    hx = scen.cset.h[np.any(scen.cset.H_x != 0.0, axis=1)]
    x_scale = float(np.min(hx)) if hx.size else 1.0
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(samples):
        t = int(rng.integers(0, sys.T - 1))
        x = rng.uniform(-x_scale, x_scale, size=sys.n_x)
        y = rng.uniform(-x_scale, x_scale, size=sys.n_x)
        den = np.linalg.norm(x - y, np.inf)
        if den < 1e-12:
            continue
        num = np.linalg.norm(dist.f(x, t) - dist.f(y, t), np.inf)
        worst = max(worst, num / den)
    return worst


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def scenario_to_dict(scen: Scenario) -> dict:
    """Inverse of scenario_from_dict (always writes expanded per-time lists)."""
    sys = scen.sys
    cfg = {
        "name": scen.name,
        "T": sys.T,
        "A": [a.tolist() for a in sys.A],
        "B": [b.tolist() for b in sys.B],
        "K": [k.tolist() for k in sys.K],
        "m": sys.m.tolist(),
        "w_bar": sys.w_bar,
        "r0": sys.r0,
        "x_bar": sys.x_bar.tolist(),
        "constraints": {
            "H_x": scen.cset.H_x.tolist(), "H_u": scen.cset.H_u.tolist(),
            "h": scen.cset.h.tolist(), "H_xT": scen.cset.H_xT.tolist(),
            "h_T": scen.cset.h_T.tolist(),
        },
        "disturbance": {
            "kind": scen.dist.kind,
            "coeff": scen.dist.coeff,
            "d_table": _jsonable(scen.dist.d_table),
            "D": _jsonable(scen.dist.D),
        },
        "u_bar": scen.u_bar.tolist(),
        "Q": scen.Q.tolist(),
        "P": scen.P.tolist(),
        "c1": scen.c1,
        "K0": _jsonable(scen.K0),
        "k0_poles": _jsonable(scen.k0_poles),
        "seed": scen.seed,
        "iterations": scen.iterations,
        "r_table": _jsonable(scen.r_table),
        "enforce_assumption4": scen.enforce_assumption4,
        "K_infnorm_expected": scen.K_infnorm_expected,
        "initial_feedback_scale": scen.initial_feedback_scale,
    }
    return cfg


def load_scenario(path) -> Scenario:
    """Load a scenario from a JSON file path."""
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def builtin_scenario(name: str = "batch_process") -> Scenario:
    """Load one of the scenario files shipped inside the package."""
    ref = resources.files("ilpc").joinpath("scenarios", f"{name}.json")
    with ref.open("r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
