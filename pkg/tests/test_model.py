"""Tests for the plant / scenario layer."""

import json

import numpy as np
import pytest

from ilpc.model import (
    ConstraintSet,
    DisturbanceModel,
    LtvSystem,
    ancillary_input,
    box_constraints,
    build_reference,
    builtin_scenario,
    check_constraints,
    estimate_lipschitz,
    nominal_step,
    quadratic_cost,
    sample_initial_state,
    sample_noise,
    scenario_from_dict,
    scenario_to_dict,
    step_true,
)


@pytest.fixture(scope="module")
def scen():
    with pytest.warns(RuntimeWarning, match="Lipschitz"):
        return builtin_scenario()


def make_sys(A, B, K=None, T=2, m=0.2, w_bar=0.0, r0=0.0, x_bar=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n_x, n_u = A.shape[0], B.shape[1]
    K = np.zeros((n_u, n_x)) if K is None else np.atleast_2d(K)
    x_bar = np.zeros(n_x) if x_bar is None else x_bar
    return LtvSystem(T=T, A=[A] * T, B=[B] * T, K=[K] * T,
                     m=np.full(T, m), w_bar=w_bar, r0=r0, x_bar=x_bar)


def test_step_true_identity_dynamics():
    sys = make_sys(np.eye(2), np.zeros((2, 1)))
    dist = DisturbanceModel(kind="zero")
    x = np.array([1.0, 2.0])
    out = step_true(sys, dist, x, np.zeros(1), np.zeros(2), 0)
    np.testing.assert_array_equal(out, x)


def test_step_true_picks_up_first_disturbance_sample(scen):
    # f(0, 0) equals the additive component d(0)
    out = step_true(scen.sys, scen.dist, np.zeros(2), np.zeros(1), np.zeros(2), 0)
    np.testing.assert_allclose(out, [0.2478, -0.16564], atol=1e-12)


def test_step_true_clean_step_equals_second_reference_sample(scen):
    out = step_true(scen.sys, DisturbanceModel(kind="zero"),
                    np.array([-0.5, 0.5]), np.array([-0.1]), np.zeros(2), 0)
    np.testing.assert_allclose(out, [-0.2774, 0.38712], atol=1e-12)


def test_nominal_step_trivial():
    sys = make_sys(np.eye(2), np.zeros((2, 1)))
    out = nominal_step(sys, np.array([3.0, 4.0]), np.zeros(1), np.zeros(2), 0)
    np.testing.assert_array_equal(out, [3.0, 4.0])


def test_nominal_step_matches_plain_matvec():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    sys = make_sys(A, B)
    z, v, d = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(3)
    want = np.array([sum(A[i, j] * z[j] for j in range(3)) +
                     sum(B[i, j] * v[j] for j in range(2)) + d[i]
                     for i in range(3)])
    np.testing.assert_allclose(nominal_step(sys, z, v, d, 0), want, atol=1e-12)


def test_true_and_nominal_agree_when_clean():
    rng = np.random.default_rng(3)
    sys = make_sys(rng.standard_normal((2, 2)), rng.standard_normal((2, 1)))
    x, u = rng.standard_normal(2), rng.standard_normal(1)
    a = step_true(sys, DisturbanceModel(kind="zero"), x, u, np.zeros(2), 0)
    b = nominal_step(sys, x, u, np.zeros(2), 0)
    np.testing.assert_array_equal(a, b)


def test_step_index_out_of_horizon():
    sys = make_sys(np.eye(2), np.zeros((2, 1)), T=3)
    with pytest.raises(IndexError):
        step_true(sys, DisturbanceModel(kind="zero"), np.zeros(2), np.zeros(1),
                  np.zeros(2), 2)
    with pytest.raises(IndexError):
        nominal_step(sys, np.zeros(2), np.zeros(1), np.zeros(2), -1)


def test_ancillary_input_zero_error_returns_v():
    v = np.array([0.3])
    out = ancillary_input(v, np.array([[1.0, 2.0]]), np.ones(2), np.ones(2))
    np.testing.assert_array_equal(out, v)


def test_ancillary_input_scalar_case():
    out = ancillary_input(np.array([0.2]), np.array([[-0.9075, -0.5029]]),
                          np.array([0.1, -0.1]), np.zeros(2))
    np.testing.assert_allclose(out, [0.15954], atol=1e-12)


def test_check_constraints_box():
    cset = box_constraints(2, 1, 1.75, 0.85)
    ok, margin = check_constraints(cset, np.zeros(2), np.zeros(1))
    assert ok and margin == pytest.approx(-0.85)
    ok, _ = check_constraints(cset, np.array([1.76, 0.0]), np.zeros(1))
    assert not ok
    ok, _ = check_constraints(cset, np.zeros(2), np.array([0.86]))
    assert not ok
    ok, _ = check_constraints(cset, np.array([1.76, 0.0]), terminal=True)
    assert not ok
    ok, _ = check_constraints(cset, np.array([1.74, -1.74]), terminal=True)
    assert ok


def test_sample_noise_zero_radius():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(sample_noise(rng, 0.0, 4), np.zeros(4))


def test_sample_noise_bound_and_mean():
    rng = np.random.default_rng(42)
    w_bar = 0.06
    draws = np.array([sample_noise(rng, w_bar, 2) for _ in range(100_000)])
    assert np.max(np.abs(draws)) <= w_bar           # hard bound, every sample
    # mean of U(-w,w) has sd w/sqrt(3)/sqrt(N) per coordinate
    sigma = w_bar / np.sqrt(3) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * sigma)


def test_sample_noise_deterministic():
    a = [sample_noise(np.random.default_rng(5), 0.06, 2) for _ in range(3)]
    b = [sample_noise(np.random.default_rng(5), 0.06, 2) for _ in range(3)]
    np.testing.assert_array_equal(np.array(a), np.array(b))


def test_sample_initial_state_within_ball(scen):
    rng = np.random.default_rng(9)
    for _ in range(200):
        x0 = sample_initial_state(rng, scen.sys)
        assert np.linalg.norm(x0 - scen.sys.x_bar, np.inf) <= scen.sys.r0


def test_build_reference_constant_when_identity_and_zero_input():
    sys = make_sys(np.eye(2), np.zeros((2, 1)), T=5, x_bar=np.array([1.0, -1.0]))
    scen_like = type("S", (), {})()
    scen_like.sys = sys
    scen_like.u_bar = np.zeros((4, 1))
    r = build_reference(scen_like)
    np.testing.assert_array_equal(r, np.tile([1.0, -1.0], (5, 1)))


def test_build_reference_second_sample(scen):
    r = build_reference(scen)
    np.testing.assert_allclose(r[0], [-0.5, 0.5], atol=0)
    np.testing.assert_allclose(r[1], [-0.2774, 0.38712], atol=1e-12)


def test_build_reference_matches_shipped_table(scen):
    r = build_reference(scen)
    assert scen.r_table is not None
    np.testing.assert_allclose(r, scen.r_table, atol=1e-9)


def test_build_reference_folds_step_true(scen):
    # the reference recursion is the clean plant recursion
    clean = DisturbanceModel(kind="zero")
    r = build_reference(scen)
    x = r[0]
    for t in range(scen.sys.T - 1):
        x = step_true(scen.sys, clean, x, scen.u_bar[t], np.zeros(2), t)
        np.testing.assert_allclose(x, r[t + 1], atol=1e-12)


def test_quadratic_cost():
    traj = np.array([[1.0, 0.0], [0.0, 2.0]])
    ref = np.zeros((2, 2))
    assert quadratic_cost(traj, ref, np.eye(2)) == pytest.approx(5.0)
    assert quadratic_cost(traj, traj, np.eye(2)) == 0.0


def test_scenario_dimensions(scen):
    assert scen.sys.T == 30
    assert scen.u_bar.shape == (29, 1)
    assert scen.c2(0) == pytest.approx(0.5)
    assert scen.sys.m_bar(0) == pytest.approx(0.7595144, abs=1e-7)
    assert not scen.dist.affine


def test_scenario_roundtrip(scen):
    d = scenario_to_dict(scen)
    d = json.loads(json.dumps(d))        # force a real serialization pass
    with pytest.warns(RuntimeWarning, match="Lipschitz"):
        again = scenario_from_dict(d)
    np.testing.assert_array_equal(build_reference(again), build_reference(scen))
    np.testing.assert_array_equal(again.dist.d_table, scen.dist.d_table)
    assert again.enforce_assumption4 == scen.enforce_assumption4


def test_time_invariant_matrices_expand():
    cfg = {
        "T": 4, "A": [[1.0]], "B": [[1.0]], "K": [[0.0]], "m": 0.1,
        "w_bar": 0.0, "r0": 0.0, "x_bar": [0.0],
        "constraints": {"x_max": 1.0, "u_max": 1.0},
        "u_bar": [[0.0], [0.0], [0.0]], "c1": 0.1,
    }
    scen = scenario_from_dict(cfg)
    assert len(scen.sys.A) == 4
    np.testing.assert_array_equal(scen.sys.A[3], [[1.0]])


def test_gain_norm_pin_rejects_wrong_gain(scen):
    cfg = scenario_to_dict(scen)
    cfg["K"] = [[[0.0, 0.0]]] * scen.sys.T
    with pytest.raises(ValueError, match="A\\+BK"):
        scenario_from_dict(cfg)


def test_affine_variant_loads_cleanly():
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        scen = builtin_scenario("batch_process_affine")
    assert scen.dist.affine
    assert estimate_lipschitz(scen) <= 0.1 + 1e-12
    x = np.array([0.3, -0.2])
    want = scen.dist.D @ x + scen.dist.d_table[5]
    np.testing.assert_allclose(scen.dist.f(x, 5), want, atol=0)


def test_quadratic_disturbance_evaluator(scen):
    x = np.array([0.5, -1.0])
    want = scen.dist.coeff * x ** 2 + scen.dist.d_table[3]
    np.testing.assert_allclose(scen.dist.f(x, 3), want, atol=0)


def test_bad_dimensions_rejected():
    with pytest.raises(ValueError):
        ConstraintSet(H_x=np.eye(2), H_u=np.zeros((3, 1)), h=np.ones(2),
                      H_xT=np.eye(2), h_T=np.ones(2))
    with pytest.raises(ValueError):
        make_sys(np.eye(2), np.zeros((2, 1)), m=0.0)
