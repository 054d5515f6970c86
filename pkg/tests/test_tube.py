"""Tests for tube propagation and constraint tightening."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilpc.model import box_constraints, builtin_scenario
from ilpc.tube import (
    TubeParams,
    assumption4_eta,
    check_initial_trajectory,
    propagate_eta,
    tighten_rows,
    tightening_gains,
    tube_params_from,
)


@pytest.fixture(scope="module")
def params():
    with pytest.warns(RuntimeWarning):
        scen = builtin_scenario()
    return tube_params_from(scen.sys)


def test_eta_zero_case():
    p = TubeParams(m_bar=np.full(5, 0.9), m=np.full(5, 0.1), w_bar=0.0, eta0=0.0)
    eta = propagate_eta(p, np.zeros(4), np.zeros(4))
    np.testing.assert_array_equal(eta, np.zeros(5))


def test_eta_one_step_scenario_value(params):
    eta = propagate_eta(params, np.array([0.0]), np.array([0.06]))
    assert eta[0] == pytest.approx(0.06)
    assert eta[1] == pytest.approx(0.16557, abs=1e-4)
    assert eta[1] == pytest.approx(params.m_bar[0] * 0.06 + 0.06 + 0.06, abs=1e-15)


def test_eta_monotone_in_inputs(params):
    T = params.T
    rng = np.random.default_rng(2)
    xi = rng.uniform(0, 0.5, T - 1)
    rho = rng.uniform(0, 0.5, T - 1)
    base = propagate_eta(params, xi, rho)
    for t in (0, 10, 28):
        for which in ("xi", "rho"):
            xi2, rho2 = xi.copy(), rho.copy()
            (xi2 if which == "xi" else rho2)[t] += 0.1
            more = propagate_eta(params, xi2, rho2)
            assert np.all(more >= base - 1e-12)
            assert more[t + 1] > base[t + 1]


def test_eta_rejects_negative(params):
    with pytest.raises(ValueError):
        propagate_eta(params, np.array([-0.1]), np.array([0.0]))


def test_gains_unit_row():
    cset = box_constraints(2, 1, 1.0, 1.0)
    g = tightening_gains(cset, [np.zeros((1, 2))])
    # state rows are +-e_i -> l1 norm 1; input rows get |K| = 0 here
    np.testing.assert_allclose(g.psi[0][:4], np.ones(4))
    np.testing.assert_allclose(g.psi[0][4:], np.zeros(2))
    np.testing.assert_allclose(g.psi_T, np.ones(4))


def test_gains_mixed_row():
    class C:
        H_x = np.array([[1.0, -2.0]])
        H_u = np.array([[3.0]])
        H_xT = np.array([[1.0, 0.0]])
    g = tightening_gains(C, [np.zeros((1, 2))])
    assert g.psi[0][0] == pytest.approx(3.0)


def test_gains_scenario_input_rows(params):
    with pytest.warns(RuntimeWarning):
        scen = builtin_scenario()
    g = tightening_gains(scen.cset, scen.sys.K)
    # input rows tighten by the l1 norm of K
    want = abs(-0.9075) + abs(-0.5029)
    np.testing.assert_allclose(g.psi[0][4:], [want, want])
    np.testing.assert_allclose(g.psi[0][:4], np.ones(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_gains_match_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n_h, n_x, n_u = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 3)
    class C:
        H_x = rng.standard_normal((n_h, n_x))
        H_u = rng.standard_normal((n_h, n_u))
        H_xT = rng.standard_normal((2, n_x))
    K = rng.standard_normal((n_u, n_x))
    g = tightening_gains(C, [K])
    rows = C.H_x + C.H_u @ K
    # sup over the unit inf-ball is attained at a sign vertex
    verts = np.array(np.meshgrid(*[[-1.0, 1.0]] * n_x)).reshape(n_x, -1)
    brute = np.max(rows @ verts, axis=1)
    np.testing.assert_allclose(g.psi[0], brute, atol=1e-10)
    np.testing.assert_allclose(g.psi_T, np.max(C.H_xT @ verts, axis=1), atol=1e-10)


def test_tighten_rows():
    h = np.array([1.75, 1.75])
    psi = np.ones(2)
    np.testing.assert_array_equal(tighten_rows(h, psi, 0.0), h)
    np.testing.assert_allclose(tighten_rows(h, psi, 0.16557), [1.58443, 1.58443])
    a = tighten_rows(h, psi, 0.1)
    b = tighten_rows(h, psi, 0.2)
    assert np.all(b <= a)
    with pytest.raises(ValueError):
        tighten_rows(h, psi, -0.1)


def test_assumption4_eta_scenario_values(params):
    eta = assumption4_eta(params)
    assert eta[0] == pytest.approx(0.06)
    assert eta[1] == pytest.approx(0.16557, abs=1e-4)
    assert eta[2] == pytest.approx(0.24575, abs=1e-4)
    # recursion converges toward 2*w_bar / (1 - m_bar)
    assert eta[-1] == pytest.approx(0.12 / (1 - params.m_bar[0]), abs=1e-3)


def test_check_initial_trajectory_zero_noise():
    cset = box_constraints(2, 1, 1.0, 1.0)
    p = TubeParams(m_bar=np.full(3, 0.9), m=np.full(3, 0.1), w_bar=0.0, eta0=0.0)
    g = tightening_gains(cset, [np.zeros((1, 2))] * 3)
    x0 = np.array([[0.9, -0.9], [1.0, 1.0], [-1.0, 0.5]])
    u0 = np.array([[1.0], [-1.0]])
    ok, detail = check_initial_trajectory(x0, u0, cset, g, p)
    assert ok and detail is None


def test_check_initial_trajectory_grazing_fails():
    cset = box_constraints(2, 1, 1.0, 1.0)
    p = TubeParams(m_bar=np.full(3, 0.9), m=np.full(3, 0.1), w_bar=0.05, eta0=0.05)
    g = tightening_gains(cset, [np.zeros((1, 2))] * 3)
    x0 = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])   # grazes at t=1
    u0 = np.zeros((2, 1))
    ok, detail = check_initial_trajectory(x0, u0, cset, g, p)
    assert not ok
    t, row, resid = detail
    assert t == 1 and row == 0 and resid > 0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.5))
def test_lemma3_soundness(seed, eta):
    """Tightened nominal feasibility + tube membership => true feasibility."""
    rng = np.random.default_rng(seed)
    n_x, n_u = 2, 1
    H_x = rng.standard_normal((3, n_x))
    H_u = rng.standard_normal((3, n_u))
    K = rng.standard_normal((n_u, n_x))
    psi = np.sum(np.abs(H_x + H_u @ K), axis=1)
    z = rng.standard_normal(n_x)
    v = rng.standard_normal(n_u)
    # rhs chosen so (z, v) sits exactly on the tightened boundary
    h = H_x @ z + H_u @ v + psi * eta
    # worst-case true states on the tube boundary: sign vertices
    for sgn in ([1, 1], [1, -1], [-1, 1], [-1, -1]):
        x = z + eta * np.array(sgn, dtype=float)
        u = v + K @ (x - z)
        assert np.all(H_x @ x + H_u @ u <= h + 1e-9)
