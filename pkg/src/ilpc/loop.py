"""Closed-loop execution across learning trials.

Drives the full scheme end to end: the seed trial rolled under a detuned
placed feedback, then per trial the fixed sequence measure -> rebuild
estimate boxes -> refine reference boxes -> iteration-level plan ->
re-target reference boxes -> per-step re-planning with plant actuation.
Two comparison modes reuse the same plumbing: ``ilc_open_loop`` applies
the iteration plan through the ancillary law without per-step solves,
``mpc_known`` skips learning entirely and re-plans every step against a
frozen disturbance reference.

Every iteration log keeps enough data to regenerate the trial exactly
(initial state, applied inputs, noise draws) plus the residuals of the
runtime guarantees: tube containments, true-constraint margins,
candidate feasibility replays, per-step cost descent, and estimate-set
soundness against the scenario's true disturbance map.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ilc import (
    IlcInputs,
    IlcSolution,
    fallback_candidate,
    replay,
    solve_ilc,
)
from .model import (
    Scenario,
    ancillary_input,
    build_reference,
    check_constraints,
    quadratic_cost,
    sample_initial_state,
    sample_noise,
    step_true,
)
from .mpc import (
    MpcInputs,
    MpcSolution,
    plan_candidate,
    replay_mpc,
    shift_candidate,
    solve_mpc,
)
from .qp import MiqpBudget
from .setmem import DisturbanceHistory, measure_disturbance
from .tube import (
    assumption4_eta,
    check_initial_trajectory,
    tightening_gains,
    tube_params_from,
)

__all__ = [
    "ConfigurationError",
    "SeedTrial",
    "RunConfig",
    "MpcStepLog",
    "IterationLog",
    "RunResult",
    "place_poles_2x1",
    "generate_initial_trajectory",
    "run_iteration",
    "run",
    "run_sweep",
]

MODES = ("ilpc", "ilc_open_loop", "mpc_known")


class ConfigurationError(ValueError):
    """The scenario or run configuration cannot produce a valid run."""


# ---------------------------------------------------------------------------
# seed trial
# ---------------------------------------------------------------------------

def place_poles_2x1(A, B, poles) -> np.ndarray:
    """State-feedback gain K0 with eig(A + B K0) at the requested poles,
    for a 2-state single-input pair, via Ackermann's formula."""
    A = np.asarray(A, dtype=float).reshape(2, 2)
    B = np.asarray(B, dtype=float).reshape(2, 1)
    ctrb = np.hstack([B, A @ B])
    if np.linalg.matrix_rank(ctrb) < 2:
        raise ValueError("(A, B) pair is not controllable")
    p1, p2 = (complex(p) for p in poles)
    s, prod = p1 + p2, p1 * p2
    if abs(s.imag) > 1e-12 or abs(prod.imag) > 1e-12:
        raise ValueError("pole pair must be real or a conjugate pair")
    phi = A @ A - s.real * A + prod.real * np.eye(2)
    sel = np.linalg.solve(ctrb.T, np.array([0.0, 1.0]))   # last row of inv(ctrb)
    K0 = -(sel @ phi).reshape(1, 2)
    got = np.sort_complex(np.linalg.eigvals(A + B @ K0))
    want = np.sort_complex(np.array([p1, p2]))
    if float(np.max(np.abs(got - want))) > 1e-8:
        raise ValueError(f"pole placement failed: got {got}, wanted {want}")
    return K0


def _input_caps(cset, gains, eta_seq) -> Tuple[np.ndarray, np.ndarray]:
    """Per-step input box implied by the input-only stage rows after
    baseline tightening; +/-inf where no row bounds a coordinate."""
    T1 = len(eta_seq) - 1
    n_u = cset.H_u.shape[1]
    lo = np.full((T1, n_u), -np.inf)
    up = np.full((T1, n_u), np.inf)
    pure = [i for i in range(cset.n_h)
            if not np.any(cset.H_x[i]) and np.count_nonzero(cset.H_u[i]) == 1]
    for t in range(T1):
        for i in pure:
            j = int(np.nonzero(cset.H_u[i])[0][0])
            coef = float(cset.H_u[i, j])
            bound = (float(cset.h[i]) - float(gains.psi[t][i]) * eta_seq[t]) / coef
            if coef > 0:
                up[t, j] = min(up[t, j], bound)
            else:
                lo[t, j] = max(lo[t, j], bound)
    return lo, up


@dataclass
class SeedTrial:
    """One rollout of the true plant under the detuned placed feedback."""

    x: np.ndarray                 # (T, n_x)
    u: np.ndarray                 # (T-1, n_u)
    w: np.ndarray                 # (T-1, n_x)
    d_bar: np.ndarray             # (T-1, n_x) measured disturbances
    K0: np.ndarray
    ok: bool                      # baseline-tightened feasibility verdict
    worst: Optional[Tuple[int, int, float]]
    J_cl: float                   # closed-loop tracking cost


def generate_initial_trajectory(scenario: Scenario,
                                rng: Optional[np.random.Generator] = None
                                ) -> SeedTrial:
    """Roll the plant once from x_bar under the scaled placed feedback.

    The applied input is u(t) = clip(scale * K0 (x(t) - r(t)), caps(t))
    where the caps are the input-only constraint rows tightened by the
    baseline radius sequence — full gain can demand corrections that no
    feasible first plan could reproduce, so the scenario supplies a
    detuning scale and the clip keeps the rollout inside the worst-case
    input budget.  The feasibility verdict of the whole trajectory is
    attached; a failed verdict is fatal when the scenario demands one.
    """
    sys, cset, dist = scenario.sys, scenario.cset, scenario.dist
    T, n_x, n_u = sys.T, sys.n_x, sys.n_u
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    r = build_reference(scenario)
    if scenario.K0 is not None:
        K0 = np.atleast_2d(np.asarray(scenario.K0, dtype=float))
        if K0.shape != (n_u, n_x):
            raise ConfigurationError(f"K0 must be ({n_u}, {n_x})")
    elif scenario.k0_poles is not None:
        if n_x != 2 or n_u != 1:
            raise ConfigurationError(
                "pole placement covers 2-state single-input systems only; "
                "supply K0 directly")
        K0 = place_poles_2x1(sys.A[0], sys.B[0], scenario.k0_poles)
    else:
        raise ConfigurationError("scenario must supply K0 or k0_poles")

    params = tube_params_from(sys)
    gains = tightening_gains(cset, sys.K)
    lo, up = _input_caps(cset, gains, assumption4_eta(params))
    scale = float(scenario.initial_feedback_scale)

    x = np.empty((T, n_x))
    u = np.empty((T - 1, n_u))
    w = np.empty((T - 1, n_x))
    x[0] = sys.x_bar
    for t in range(T - 1):
        raw = scale * (K0 @ (x[t] - r[t]))
        u[t] = np.clip(raw, lo[t], up[t])
        w[t] = sample_noise(rng, sys.w_bar, n_x)
        x[t + 1] = step_true(sys, dist, x[t], u[t], w[t], t)
    d_bar = np.array([measure_disturbance(x[t + 1], x[t], u[t], sys, t)
                      for t in range(T - 1)])

    ok, worst = check_initial_trajectory(x, u, cset, gains, params)
    if not ok:
        t, i, resid = worst
        msg = (f"seed trial violates the baseline-tightened constraints "
               f"(step {t}, row {i}, residual {resid:.4g}); the learning "
               "guarantees need a feasible seed")
        if scenario.enforce_assumption4:
            raise ConfigurationError(msg)
        warnings.warn(msg, RuntimeWarning)
    return SeedTrial(x=x, u=u, w=w, d_bar=d_bar, K0=K0, ok=ok, worst=worst,
                     J_cl=quadratic_cost(x, r, scenario.Q))


# ---------------------------------------------------------------------------
# run configuration and logs
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    mode: str = "ilpc"
    iterations: Optional[int] = None      # default: scenario.iterations
    seed: Optional[int] = None            # default: scenario.seed
    ilc_solver: str = "binary"            # binary | relaxed
    miqp_nodes: int = 12
    miqp_time_limit: Optional[float] = 60.0   # seconds per planning solve
    miqp_gap: float = 1e-3                # objective indifference width
    qp_tol: float = 1e-10
    node_tol: float = 1e-6
    mpc_tol: float = 1e-7                 # per-step solves; margin covers drift
    allow_relaxed_nonaffine: bool = False
    early_stop_epsilon: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.ilc_solver not in ("binary", "relaxed"):
            raise ValueError("ilc_solver must be 'binary' or 'relaxed'")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class MpcStepLog:
    tau: int
    J: float
    eta0: float
    v0: np.ndarray
    u_applied: np.ndarray


@dataclass
class IterationLog:
    """One completed trial: raw data, plan, per-step summaries, costs,
    and the runtime check residuals of this iteration."""

    k: int
    x: np.ndarray                  # (T, n_x) visited states
    u: np.ndarray                  # (T-1, n_u) applied inputs
    w: np.ndarray                  # (T-1, n_x) noise draws
    d_bar: np.ndarray              # (T-1, n_x) measured disturbances
    ilc: Optional[IlcSolution]
    mpc_steps: List[MpcStepLog]
    J_cl: float                    # closed-loop tracking cost
    J_nom: float                   # nominal tracking cost
    J_ilc: Optional[float]
    z_nom: np.ndarray              # (T, n_x) nominal trajectory behind J_nom
    eta: np.ndarray                # (T,) tube radii attached to z_nom
    checks: Dict[str, float]
    events: List[str]


@dataclass
class RunResult:
    scenario_name: str
    mode: str
    seed: int
    r: np.ndarray
    seed_trial: SeedTrial
    logs: List[IterationLog]
    checks: Dict[str, float]
    elapsed: float


@dataclass
class RunState:
    """Mutable state threaded through run_iteration calls."""

    scenario: Scenario
    config: RunConfig
    rng: np.random.Generator
    r: np.ndarray
    tube: object
    gains: object
    c2: np.ndarray
    hist: DisturbanceHistory
    prev_x: np.ndarray
    prev_u: np.ndarray
    prev_d_bar: np.ndarray
    prev_sol: Optional[IlcSolution] = None
    frozen: Optional[Dict[str, np.ndarray]] = None
    logs: List[IterationLog] = field(default_factory=list)


def _bump(checks: Dict[str, float], key: str, value: float) -> None:
    checks[key] = max(checks.get(key, -np.inf), float(value))


def _box_excess(box, point: np.ndarray) -> float:
    """How far the point sticks out of the box (0 inside)."""
    return float(max(np.max(box.lower - point), np.max(point - box.upper), 0.0))


# ---------------------------------------------------------------------------
# one iteration
# ---------------------------------------------------------------------------

def run_iteration(state: RunState, k: int) -> IterationLog:
    """Execute trial k: measurement bookkeeping for trial k-1, estimate
    refreshes, the planning solve, reference-set re-targeting, then the
    per-step loop with plant actuation.  Mode variants skip the parts
    they compare against."""
    if state.config.mode == "mpc_known":
        return _iteration_mpc_known(state, k)

    scen, cfg = state.scenario, state.config
    sys, cset, dist = scen.sys, scen.cset, scen.dist
    T, n_x, n_u = sys.T, sys.n_x, sys.n_u
    events: List[str] = []
    checks: Dict[str, float] = {}

    # -- measure trial k-1 and refresh the estimates
    events.append("measure")
    state.hist.append_iteration(state.prev_x, state.prev_d_bar)
    events.append("d_boxes")
    state.hist.refresh_d_boxes()
    _bump(checks, "set_d_containment",
          max(_box_excess(state.hist.d_boxes[t], dist.f(state.prev_x[t], t))
              for t in range(T - 1)))
    events.append("d_ref_boxes")
    before = list(state.hist.d_ref_boxes)
    state.hist.refresh_ref_boxes()
    ref = state.hist.x_ref[-1]
    _bump(checks, "set_ref_shrink",
          max(max(float(np.max(before[t].lower - state.hist.d_ref_boxes[t].lower)),
                  float(np.max(state.hist.d_ref_boxes[t].upper - before[t].upper)),
                  0.0)
              for t in range(T - 1)))
    _bump(checks, "set_ref_containment",
          max(_box_excess(state.hist.d_ref_boxes[t], dist.f(ref[t], t))
              for t in range(T - 1)))

    # -- iteration-level plan
    inp = IlcInputs(sys=sys, cset=cset, gains=state.gains, tube=state.tube,
                    r=state.r, d_boxes=state.hist.d_boxes,
                    d_ref_boxes=state.hist.d_ref_boxes,
                    x_prev=state.prev_x, x_ref_prev=state.hist.x_ref[-1],
                    Q=scen.Q, c1=scen.c1, c2=state.c2, x_bar=sys.x_bar,
                    affine_f=dist.affine)
    if k == 1:
        candidate = fallback_candidate(
            inp, seed_traj=(state.prev_x, state.prev_u, state.prev_d_bar))
    else:
        candidate = fallback_candidate(inp, prev=state.prev_sol)
    _bump(checks, "ilc_candidate_replay", replay(inp, candidate)["max"])
    events.append("ilc_solve")
    sol = solve_ilc(
        inp, mode=cfg.ilc_solver,
        budget=MiqpBudget(node_limit=cfg.miqp_nodes,
                          time_limit=cfg.miqp_time_limit,
                          gap_tol=cfg.miqp_gap),
        candidate=candidate,
        prev_alpha=None if state.prev_sol is None else state.prev_sol.alpha,
        tol=cfg.qp_tol, node_tol=cfg.node_tol,
        allow_relaxed_nonaffine=cfg.allow_relaxed_nonaffine)
    _bump(checks, "ilc_replay", replay(inp, sol)["max"])

    # -- commit the new reference, then check the blended boxes still
    #    carry the true disturbance at the committed states
    events.append("advance_sets")
    state.hist.advance_reference_sets(sol.alpha, sol.x_ref)
    _bump(checks, "set_blend_containment",
          max(_box_excess(state.hist.d_ref_boxes[t],
                          dist.f(state.hist.x_ref[-1][t], t))
              for t in range(T - 1)))

    # -- trial rollout
    x = np.empty((T, n_x))
    u = np.empty((T - 1, n_u))
    w = np.empty((T - 1, n_x))
    x[0] = sample_initial_state(state.rng, sys)
    mpc_steps: List[MpcStepLog] = []
    mpc_sols: List[MpcSolution] = []

    if cfg.mode == "ilpc":
        prev_step: Optional[MpcSolution] = None
        for tau in range(T - 1):
            events.append(f"mpc:{tau}")
            # nest each step's tube in the iteration plan's tube (tau=0)
            # or the previous step's shifted tube, so the true state stays
            # inside every tube it was ever promised to stay in
            if tau == 0:
                nest_z, nest_eta = sol.z, sol.eta
            else:
                nest_z, nest_eta = prev_step.z[1:], prev_step.eta[1:]
            inp_tau = MpcInputs(sys=sys, cset=cset, gains=state.gains,
                                tube=state.tube, tau=tau, x_meas=x[tau],
                                r=state.r, x_ref=sol.x_ref, d_ref=sol.d_ref,
                                rho=sol.rho, v_plan=sol.v, Q=scen.Q, P=scen.P,
                                c1=scen.c1, nest_z=nest_z, nest_eta=nest_eta)
            if tau == 0:
                cand = plan_candidate(inp_tau, sol)
            else:
                cand = shift_candidate(prev_step, inp_tau)
            _bump(checks, "mpc_candidate_replay", replay_mpc(inp_tau, cand)["max"])
            step_sol = solve_mpc(inp_tau, candidate=cand, tol=cfg.mpc_tol)
            if tau == 0:
                _bump(checks, "prop5_link",
                      step_sol.J - (sol.J - float(state.c2 @ sol.rho)))
            else:
                e_z = prev_step.z[0] - state.r[tau - 1]
                e_v = prev_step.v[0] - sol.v[tau - 1]
                drop = (float(e_z @ scen.Q @ e_z) + float(e_v @ scen.P @ e_v)
                        + scen.c1 * float(prev_step.xi[0]))
                _bump(checks, "prop5_step", step_sol.J - (prev_step.J - drop))
            u[tau] = ancillary_input(step_sol.v[0], sys.K[tau], x[tau],
                                     step_sol.z[0]).ravel()
            w[tau] = sample_noise(state.rng, sys.w_bar, n_x)
            x[tau + 1] = step_true(sys, dist, x[tau], u[tau], w[tau], tau)
            mpc_steps.append(MpcStepLog(tau=tau, J=step_sol.J,
                                        eta0=float(step_sol.eta[0]),
                                        v0=step_sol.v[0].copy(),
                                        u_applied=u[tau].copy()))
            mpc_sols.append(step_sol)
            prev_step = step_sol
        _bump(checks, "tube_mpc",
              max(float(np.max(np.max(np.abs(x[s.tau:] - s.z), axis=1) - s.eta))
                  for s in mpc_sols))
    else:                                   # ilc_open_loop
        events.append("rollout")
        for tau in range(T - 1):
            u[tau] = ancillary_input(sol.v[tau], sys.K[tau], x[tau],
                                     sol.z[tau]).ravel()
            w[tau] = sample_noise(state.rng, sys.w_bar, n_x)
            x[tau + 1] = step_true(sys, dist, x[tau], u[tau], w[tau], tau)

    _bump(checks, "tube_ilc",
          float(np.max(np.max(np.abs(x - sol.z), axis=1) - sol.eta)))
    _bump(checks, "constraint_margin", _true_margins(cset, x, u))
    _bump(checks, "z_tracking", float(np.max(np.abs(sol.z - state.r))))

    d_bar = np.array([measure_disturbance(x[t + 1], x[t], u[t], sys, t)
                      for t in range(T - 1)])
    if mpc_sols:
        # the nominal trajectory the plant was actually steered toward:
        # the first plan point of each per-step solve plus the last plan's
        # one-step-ahead point
        z_nom = np.vstack([np.array([s.z[0] for s in mpc_sols]),
                           mpc_sols[-1].z[1][None, :]])
        eta_nom = np.append(np.array([s.eta[0] for s in mpc_sols]),
                            mpc_sols[-1].eta[1])
    else:
        z_nom, eta_nom = sol.z, sol.eta
    log = IterationLog(
        k=k, x=x, u=u, w=w, d_bar=d_bar, ilc=sol, mpc_steps=mpc_steps,
        J_cl=quadratic_cost(x, state.r, scen.Q),
        J_nom=quadratic_cost(z_nom, state.r, scen.Q),
        J_ilc=sol.J, z_nom=z_nom, eta=eta_nom, checks=checks, events=events)
    state.prev_x, state.prev_u, state.prev_d_bar = x, u, d_bar
    state.prev_sol = sol
    state.logs.append(log)
    return log


def _true_margins(cset, x: np.ndarray, u: np.ndarray) -> float:
    worst = -np.inf
    for t in range(x.shape[0] - 1):
        worst = max(worst, check_constraints(cset, x[t], u[t])[1])
    return max(worst, check_constraints(cset, x[-1], terminal=True)[1])


def _iteration_mpc_known(state: RunState, k: int) -> IterationLog:
    """Baseline without learning: every step re-plans against the frozen
    disturbance reference of the first controlled trial (the seed data
    bootstraps trial 1), with constant radii at the noise bound."""
    scen, cfg = state.scenario, state.config
    sys, cset, dist = scen.sys, scen.cset, scen.dist
    T, n_x, n_u = sys.T, sys.n_x, sys.n_u
    events = ["measure"]
    checks: Dict[str, float] = {}

    if k <= 2:
        # k=1 freezes the seed data; k=2 replaces it with trial 1's
        # measurement, which then stays frozen for good
        state.frozen = {"x_ref": state.prev_x, "v_plan": state.prev_u,
                        "d_ref": state.prev_d_bar}
    froz = state.frozen
    rho = np.full(T - 1, sys.w_bar)

    x = np.empty((T, n_x))
    u = np.empty((T - 1, n_u))
    w = np.empty((T - 1, n_x))
    x[0] = sample_initial_state(state.rng, sys)
    mpc_steps: List[MpcStepLog] = []
    mpc_sols: List[MpcSolution] = []
    prev_step: Optional[MpcSolution] = None
    for tau in range(T - 1):
        events.append(f"mpc:{tau}")
        inp_tau = MpcInputs(sys=sys, cset=cset, gains=state.gains,
                            tube=state.tube, tau=tau, x_meas=x[tau],
                            r=state.r, x_ref=froz["x_ref"],
                            d_ref=froz["d_ref"], rho=rho,
                            v_plan=froz["v_plan"], Q=scen.Q, P=scen.P,
                            c1=scen.c1)
        cand = None
        if prev_step is not None:
            cand = shift_candidate(prev_step, inp_tau)
        step_sol = solve_mpc(inp_tau, candidate=cand, tol=cfg.mpc_tol)
        u[tau] = ancillary_input(step_sol.v[0], sys.K[tau], x[tau],
                                 step_sol.z[0]).ravel()
        w[tau] = sample_noise(state.rng, sys.w_bar, n_x)
        x[tau + 1] = step_true(sys, dist, x[tau], u[tau], w[tau], tau)
        mpc_steps.append(MpcStepLog(tau=tau, J=step_sol.J,
                                    eta0=float(step_sol.eta[0]),
                                    v0=step_sol.v[0].copy(),
                                    u_applied=u[tau].copy()))
        mpc_sols.append(step_sol)
        prev_step = step_sol

    z_nom = np.empty((T, n_x))
    eta = np.empty(T)
    for s in mpc_sols:
        z_nom[s.tau] = s.z[0]
        eta[s.tau] = s.eta[0]
    z_nom[T - 1] = mpc_sols[-1].z[1]
    eta[T - 1] = mpc_sols[-1].eta[1]
    _bump(checks, "constraint_margin", _true_margins(cset, x, u))

    d_bar = np.array([measure_disturbance(x[t + 1], x[t], u[t], sys, t)
                      for t in range(T - 1)])
    log = IterationLog(
        k=k, x=x, u=u, w=w, d_bar=d_bar, ilc=None, mpc_steps=mpc_steps,
        J_cl=quadratic_cost(x, state.r, scen.Q),
        J_nom=quadratic_cost(z_nom, state.r, scen.Q),
        J_ilc=None, z_nom=z_nom, eta=eta, checks=checks, events=events)
    state.prev_x, state.prev_u, state.prev_d_bar = x, u, d_bar
    state.logs.append(log)
    return log


# ---------------------------------------------------------------------------
# full runs and seed sweeps
# ---------------------------------------------------------------------------

def run(config: RunConfig, scenario: Scenario) -> RunResult:
    """Seed trial plus `iterations` learning trials in the given mode."""
    t0 = time.monotonic()
    sys = scenario.sys
    iterations = (config.iterations if config.iterations is not None
                  else scenario.iterations)
    seed = config.seed if config.seed is not None else scenario.seed
    rng = np.random.default_rng(seed)

    seed_trial = generate_initial_trajectory(scenario, rng)
    state = RunState(
        scenario=scenario, config=config, rng=rng,
        r=build_reference(scenario),
        tube=tube_params_from(sys),
        gains=tightening_gains(scenario.cset, sys.K),
        c2=np.array([scenario.c2(t) for t in range(sys.T - 1)]),
        hist=DisturbanceHistory(T=sys.T, n_x=sys.n_x, m=sys.m,
                                w_bar=sys.w_bar),
        prev_x=seed_trial.x, prev_u=seed_trial.u, prev_d_bar=seed_trial.d_bar)

    streak = 0
    for k in range(1, iterations + 1):
        log = run_iteration(state, k)
        if config.early_stop_epsilon is not None and k >= 2 \
                and log.J_ilc is not None and state.logs[-2].J_ilc is not None:
            if abs(log.J_ilc - state.logs[-2].J_ilc) < config.early_stop_epsilon:
                streak += 1
                if streak >= 5:
                    break
            else:
                streak = 0

    checks = _aggregate_checks(scenario, seed_trial, state.logs)
    return RunResult(scenario_name=scenario.name, mode=config.mode, seed=seed,
                     r=state.r, seed_trial=seed_trial, logs=state.logs,
                     checks=checks, elapsed=time.monotonic() - t0)


def _aggregate_checks(scenario: Scenario, seed_trial: SeedTrial,
                      logs: List[IterationLog]) -> Dict[str, float]:
    agg: Dict[str, float] = {}
    for log in logs:
        for key, val in log.checks.items():
            agg[key] = max(agg.get(key, -np.inf), val)
    J = [log.J_ilc for log in logs if log.J_ilc is not None]
    if len(J) >= 2:
        agg["jilc_max_increase"] = max(J[t + 1] - J[t]
                                       for t in range(len(J) - 1))
    if J:
        sys = scenario.sys
        bound = (seed_trial.J_cl
                 + scenario.c1 * (sys.T - 1) * sys.w_bar
                 + sum(scenario.c2(t) * sys.w_bar for t in range(sys.T - 1)))
        agg["jilc1_bound_resid"] = J[0] - bound
    agg["assumption4_ok"] = float(seed_trial.ok)
    return agg


def _sweep_worker(args):
    config, scenario, seed = args
    return run(replace(config, seed=seed), scenario)


def run_sweep(config: RunConfig, scenario: Scenario, seeds,
              max_workers: Optional[int] = None) -> List[RunResult]:
    """Independent runs over seeds, fanned out across processes.

    Worker count: explicit argument, else the ILPC_THREADS environment
    variable, else the CPU count.  Results keep the seed order.
    """
    seeds = list(seeds)
    if max_workers is None:
        env = os.environ.get("ILPC_THREADS")
        max_workers = int(env) if env else (os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, len(seeds)))
    if max_workers == 1:
        return [_sweep_worker((config, scenario, s)) for s in seeds]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_sweep_worker,
                             [(config, scenario, s) for s in seeds]))
