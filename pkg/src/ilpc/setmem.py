"""Set-membership learning of the unknown disturbance.

Each trial produces noisy point measurements

    d_bar_j(t) = x_j(t+1) - A(t) x_j(t) - B(t) u_j(t) = f(x_j(t), t) + w_j(t),

so f(x_j(t), t) lies in the box d_bar_j(t) +- w_bar.  Lipschitz continuity
transports that knowledge to any query state x:

    f(x, t)  in  intersect_j [ d_bar_j(t) +- (w_bar + m(t) ||x_j(t) - x||_inf) ].

All sets here are axis-aligned boxes: with infinity-norm balls every
primitive (ball, Minkowski inflation, intersection, convex blend) maps
boxes to boxes, so the calculus is exact — no vertex growth, no
over-approximation.

Two families of boxes are maintained per time step t:

``D``     estimate of f at the previously *visited* state x_{k-1}(t),
          rebuilt from scratch each iteration because the query moves;
``Dref``  estimate of f at the *chosen reference* state x_ref(t), grown
          incrementally (one new intersection term per iteration) and
          re-targeted after each planning solve via the alpha selector.

An empty intersection contradicts the bounded-noise / Lipschitz model and
raises SetMembershipError rather than limping on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

__all__ = [
    "Box",
    "SetMembershipError",
    "DisturbanceHistory",
    "measure_disturbance",
    "raw_set",
    "inflate",
    "intersect",
    "blend",
    "estimate_set",
    "rho_bound",
    "box_rows",
]


class SetMembershipError(RuntimeError):
    """Raised when the measurement boxes have empty intersection."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lower, upper].  Emptiness is explicit: a box with
    lower > upper in some coordinate is the Empty value (kept as data so the
    offending coordinate remains reportable)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper dimension mismatch")

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, point: np.ndarray, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def copy(self) -> "Box":
        return Box(self.lower.copy(), self.upper.copy())


def measure_disturbance(x_next, x, u, sys, t: int) -> np.ndarray:
    """Point measurement d_bar = x(t+1) - A(t)x(t) - B(t)u(t) = f(x,t) + w."""
    return (np.asarray(x_next, dtype=float)
            - sys.A[t] @ np.asarray(x, dtype=float)
            - sys.B[t] @ np.atleast_1d(u))


def raw_set(d_bar, w_bar: float) -> Box:
    """Noise-inflated measurement box d_bar +- w_bar (degenerate when w_bar=0)."""
    if w_bar < 0:
        raise ValueError("w_bar must be nonnegative")
    d = np.asarray(d_bar, dtype=float)
    return Box(d - w_bar, d + w_bar)


def inflate(b: Box, radius: float) -> Box:
    """Minkowski sum with the inf-ball of the given radius."""
    if radius < 0:
        raise ValueError("inflation radius must be nonnegative")
    return Box(b.lower - radius, b.upper + radius)


def intersect(a: Box, b: Box) -> Box:
    """Coordinate-wise intersection; may return an empty box."""
    return Box(np.maximum(a.lower, b.lower), np.minimum(a.upper, b.upper))


def blend(a: Box, b: Box, alpha: float) -> Box:
    """Convex combination alpha*a + (1-alpha)*b (element-wise interval blend).

    alpha=1 gives a copy of ``a``, alpha=0 a copy of ``b``.  For affine f
    the blend soundly bounds f at the blended query state.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return Box(alpha * a.lower + (1.0 - alpha) * b.lower,
               alpha * a.upper + (1.0 - alpha) * b.upper)


def _term(d_bar_j, x_j, query_state, m_t: float, w_bar: float) -> Box:
    radius = m_t * float(np.linalg.norm(np.asarray(x_j) - np.asarray(query_state),
                                        np.inf))
    return inflate(raw_set(d_bar_j, w_bar), radius)


@dataclass
class DisturbanceHistory:
    """Measurement archive plus the current per-time box estimates.

    ``x[j]`` are the visited states of trial j (T rows), ``d_bar[j]`` the
    measured disturbances (T-1 rows).  ``x_ref[j]`` is the reference state
    trajectory the planner committed to for trial j; x_ref[0] is the
    initial trajectory itself.  ``d_boxes``/``d_ref_boxes`` hold the
    current D and Dref estimates (T-1 boxes each).
    """

    T: int
    n_x: int
    m: np.ndarray                 # per-time Lipschitz bounds, length T
    w_bar: float
    x: List[np.ndarray] = field(default_factory=list)
    d_bar: List[np.ndarray] = field(default_factory=list)
    x_ref: List[np.ndarray] = field(default_factory=list)
    d_boxes: List[Box] = field(default_factory=list)
    d_ref_boxes: List[Box] = field(default_factory=list)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)

    @property
    def n_iterations(self) -> int:
        return len(self.x)

    def append_iteration(self, x_traj: np.ndarray, d_bar_traj: np.ndarray) -> int:
        """Record one completed trial; returns its index j."""
        x_traj = np.asarray(x_traj, dtype=float)
        d_bar_traj = np.asarray(d_bar_traj, dtype=float)
        if x_traj.shape != (self.T, self.n_x):
            raise ValueError(f"x trajectory must be ({self.T}, {self.n_x})")
        if d_bar_traj.shape != (self.T - 1, self.n_x):
            raise ValueError(f"d_bar trajectory must be ({self.T - 1}, {self.n_x})")
        self.x.append(x_traj)
        self.d_bar.append(d_bar_traj)
        if not self.x_ref:
            # trial 0 is the initial trajectory: its own states are the
            # reference states, making Dref_{0|-1} the raw measurement box
            self.x_ref.append(x_traj)
            self.d_ref_boxes = [raw_set(d_bar_traj[t], self.w_bar)
                                for t in range(self.T - 1)]
        return len(self.x) - 1

    # -- estimate refreshes run once per iteration, after append ----------

    def refresh_d_boxes(self) -> None:
        """Rebuild D(t) from scratch at the latest visited states (the query
        state moved, so the incremental form does not apply)."""
        n = self.n_iterations - 1
        query = self.x[n]
        self.d_boxes = [
            estimate_set(self, n, n, t, query[t], float(self.m[t]))
            for t in range(self.T - 1)
        ]

    def refresh_ref_boxes(self) -> None:
        """One incremental intersection step: fold the newest measurement
        into Dref(t) at the committed reference states."""
        n = self.n_iterations - 1
        if len(self.x_ref) <= n:
            raise ValueError("no committed reference trajectory for this trial")
        ref = self.x_ref[n]
        out = []
        for t in range(self.T - 1):
            box = intersect(self.d_ref_boxes[t],
                            _term(self.d_bar[n][t], self.x[n][t], ref[t],
                                  float(self.m[t]), self.w_bar))
            if box.is_empty:
                raise SetMembershipError(
                    f"set-membership contradiction at t={t}: measurement of "
                    f"trial {n} cuts Dref empty (check m and w_bar)")
            out.append(box)
        self.d_ref_boxes = out

    def advance_reference_sets(self, alpha: np.ndarray,
                               x_ref_new: np.ndarray) -> None:
        """Re-target Dref after a planning solve.

        Per time step: alpha=1 adopts D (reference moves to the visited
        state), alpha=0 keeps Dref; fractional alpha takes the interval
        blend, matching x_ref_new = alpha*x + (1-alpha)*x_ref_old.
        """
        alpha = np.asarray(alpha, dtype=float).ravel()
        if alpha.shape != (self.T - 1,):
            raise ValueError(f"alpha must have {self.T - 1} entries")
        if not self.d_boxes:
            raise ValueError("refresh_d_boxes must run before advancing")
        self.d_ref_boxes = [blend(self.d_boxes[t], self.d_ref_boxes[t], alpha[t])
                            for t in range(self.T - 1)]
        self.x_ref.append(np.asarray(x_ref_new, dtype=float))


def estimate_set(hist: DisturbanceHistory, k: int, n: int, t: int,
                 query_state, m_t: float) -> Box:
    """Box guaranteed to contain f(query_state, t) given trials 0..n.

    Built by successive intersection of the inflated measurement boxes
    (the incremental one-term-at-a-time form; identical to intersecting
    all terms at once).
    """
    if k > n:
        raise ValueError("need k <= n (no data beyond trial n)")
    if n >= hist.n_iterations:
        raise ValueError(f"history only covers trials 0..{hist.n_iterations - 1}")
    box = _term(hist.d_bar[0][t], hist.x[0][t], query_state, m_t, hist.w_bar)
    for j in range(1, n + 1):
        box = intersect(box, _term(hist.d_bar[j][t], hist.x[j][t], query_state,
                                   m_t, hist.w_bar))
        if box.is_empty:
            raise SetMembershipError(
                f"set-membership contradiction at t={t}: trial {j} "
                f"measurement is inconsistent with earlier data "
                f"(check m and w_bar)")
    return box


def rho_bound(d_ref, box1: Box, box2: Optional[Box] = None,
              alpha: float = 1.0) -> float:
    """Exact sup of ||d_ref - alpha*d1 - (1-alpha)*d2||_inf over the boxes.

    The blended point alpha*d1 + (1-alpha)*d2 ranges over the blended box,
    so the sup is attained at its bounds coordinate-wise.
    """
    if box2 is None:
        box2 = box1
    if box1.is_empty or box2.is_empty:
        raise ValueError("rho_bound needs non-empty boxes")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    d = np.asarray(d_ref, dtype=float)
    low = alpha * box1.lower + (1.0 - alpha) * box2.lower
    up = alpha * box1.upper + (1.0 - alpha) * box2.upper
    return float(np.max(np.maximum(np.abs(d - low), np.abs(d - up))))


def box_rows(boxes: List[Box], k: int, kind: str):
    """Flatten boxes into (k, t, coord, lower, upper, kind) log rows."""
    for t, b in enumerate(boxes):
        for i in range(b.lower.shape[0]):
            yield (k, t, i, float(b.lower[i]), float(b.upper[i]), kind)
