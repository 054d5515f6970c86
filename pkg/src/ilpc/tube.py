"""Worst-case error tubes and constraint tightening.

The tracking error e(t) = x(t) - z(t) under the ancillary feedback obeys

    ||e(t+1)||_inf <= m_bar(t) ||e(t)||_inf + m(t) xi(t) + rho(t) + w_bar,

with m_bar(t) = ||A(t)+B(t)K(t)||_inf + m(t), xi(t) the nominal-to-
reference distance ||z(t) - x_ref(t)||_inf, and rho(t) the certified
disturbance-estimate radius.  The recursion's solution eta(t) is the tube
radius: x(t) is guaranteed inside z(t) +- eta(t).

Feasibility of the true trajectory then reduces to nominal feasibility in
a polytope shrunk row-wise by psi_i * eta(t), where psi_i is the sup of
row i of [H_x + H_u K(t)] over the unit ball — for the infinity norm,
simply the l1 norm of the row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

__all__ = [
    "TubeParams",
    "TighteningGains",
    "tube_params_from",
    "propagate_eta",
    "tightening_gains",
    "tighten_rows",
    "assumption4_eta",
    "check_initial_trajectory",
]


@dataclass
class TubeParams:
    """Coefficients of the error-radius recursion."""

    m_bar: np.ndarray       # length T
    m: np.ndarray           # length T
    w_bar: float
    eta0: float             # initial radius (= r0 of the scenario)

    def __post_init__(self):
        self.m_bar = np.asarray(self.m_bar, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.m_bar.shape != self.m.shape:
            raise ValueError("m_bar and m must have equal length")
        if np.any(self.m <= 0) or np.any(self.m_bar < self.m):
            raise ValueError("need m_bar(t) >= m(t) > 0")
        if self.w_bar < 0 or self.eta0 < 0:
            raise ValueError("w_bar and eta0 must be nonnegative")

    @property
    def T(self) -> int:
        return self.m_bar.shape[0]


def tube_params_from(sys, eta0: Optional[float] = None) -> TubeParams:
    """Assemble TubeParams from an LtvSystem (eta0 defaults to r0)."""
    m_bar = np.array([sys.m_bar(t) for t in range(sys.T)])
    return TubeParams(m_bar=m_bar, m=sys.m.copy(), w_bar=sys.w_bar,
                      eta0=sys.r0 if eta0 is None else eta0)


@dataclass
class TighteningGains:
    """Row-wise tightening gains: psi[t] has n_h entries for each stage
    t = 0..T-2, psi_T has n_hT entries for the terminal constraint."""

    psi: List[np.ndarray]
    psi_T: np.ndarray

    def __post_init__(self):
        self.psi = [np.asarray(p, dtype=float) for p in self.psi]
        self.psi_T = np.asarray(self.psi_T, dtype=float)
        if any(np.any(p < 0) for p in self.psi) or np.any(self.psi_T < 0):
            raise ValueError("tightening gains must be nonnegative")


def propagate_eta(params: TubeParams, xi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Roll the radius recursion; returns eta of length len(xi)+1.

    eta(0) = eta0, eta(t+1) = m_bar(t) eta(t) + m(t) xi(t) + rho(t) + w_bar.
    """
    xi = np.asarray(xi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if xi.shape != rho.shape:
        raise ValueError("xi and rho must have equal length")
    if np.any(xi < 0) or np.any(rho < 0):
        raise ValueError("xi and rho must be nonnegative")
    n = xi.shape[0]
    if n > params.T - 1:
        raise ValueError("more steps than tube coefficients")
    eta = np.zeros(n + 1)
    eta[0] = params.eta0
    for t in range(n):
        eta[t + 1] = (params.m_bar[t] * eta[t] + params.m[t] * xi[t]
                      + rho[t] + params.w_bar)
    return eta


def tightening_gains(cset, K: List[np.ndarray]) -> TighteningGains:
    """Dual-norm tightening gains for every stage and the terminal set.

    For the infinity norm, sup over the unit ball of a row h.v is the l1
    norm of h; row i of the stage map is [H_x + H_u K(t)]_i.
    """
    psi = [np.sum(np.abs(cset.H_x + cset.H_u @ np.atleast_2d(K_t)), axis=1)
           for K_t in K]
    psi_T = np.sum(np.abs(cset.H_xT), axis=1)
    return TighteningGains(psi=psi, psi_T=psi_T)


def tighten_rows(h: np.ndarray, psi: np.ndarray, eta: float) -> np.ndarray:
    """Shrunk right-hand side h - psi * eta."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return np.asarray(h, dtype=float) - np.asarray(psi, dtype=float) * eta


def assumption4_eta(params: TubeParams) -> np.ndarray:
    """Baseline radius sequence for validating an initial trajectory:
    eta0(0) = w_bar, eta0(t+1) = m_bar(t) eta0(t) + 2 w_bar."""
    eta = np.zeros(params.T)
    eta[0] = params.w_bar
    for t in range(params.T - 1):
        eta[t + 1] = params.m_bar[t] * eta[t] + 2.0 * params.w_bar
    return eta


def check_initial_trajectory(x0: np.ndarray, u0: np.ndarray, cset,
                             gains: TighteningGains, params: TubeParams
                             ) -> Tuple[bool, Optional[Tuple[int, int, float]]]:
    """Does the seed trajectory satisfy the baseline-tightened constraints?

    Returns (ok, detail); on failure detail = (t, row, residual) of the
    worst violated tightened row (t = T-1 marks the terminal set).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    T = params.T
    if x0.shape[0] != T or u0.shape[0] != T - 1:
        raise ValueError("trajectory lengths must be T and T-1")
    eta = assumption4_eta(params)
    worst = None
    for t in range(T - 1):
        resid = (cset.H_x @ x0[t] + cset.H_u @ u0[t]
                 - tighten_rows(cset.h, gains.psi[t], eta[t]))
        i = int(np.argmax(resid))
        if resid[i] > 0 and (worst is None or resid[i] > worst[2]):
            worst = (t, i, float(resid[i]))
    resid = cset.H_xT @ x0[T - 1] - tighten_rows(cset.h_T, gains.psi_T, eta[T - 1])
    i = int(np.argmax(resid))
    if resid[i] > 0 and (worst is None or resid[i] > worst[2]):
        worst = (T - 1, i, float(resid[i]))
    return worst is None, worst
