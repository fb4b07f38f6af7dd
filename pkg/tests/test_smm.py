import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smmpc.plant import NoiseSpec, generate_data, simulate
from smmpc.signal_matrix import SignalMatrix, build
from smmpc.smm import (
    DegenerateWarmStart,
    SingularKKTError,
    SmmProblem,
    covariance,
    discrepancy,
    init_g,
    kkt_residual,
    kkt_solve,
    lambda_floor,
    lambda_update,
    linearize,
    neg_log_likelihood,
    predict,
    smm_iterate,
)

EX1 = NoiseSpec(0.1, 0.1)


def _true_window(ss, rng, L0=4, Lp=10):
    """A trajectory of the plant from a random state: (u_ini, y_ini, u_hat, y_future)."""
    x0 = rng.standard_normal(ss.nx)
    u = rng.standard_normal(L0 + Lp)
    _, y0, _ = simulate(ss, u, x0)
    return u[:L0], y0[:L0], u[L0:], y0[L0:]


# --- kkt_solve -------------------------------------------------------------

def test_kkt_square_constraint(rng):
    U = rng.standard_normal((5, 5))
    Yp = rng.standard_normal((2, 5))
    b = rng.standard_normal(5)
    for lam in (1e-3, 1.0, 1e3):
        g = kkt_solve(lam, U, Yp, b, rng.standard_normal(2))
        np.testing.assert_allclose(g, np.linalg.solve(U, b), atol=1e-10)


def test_kkt_no_constraints_hand_example():
    g = kkt_solve(1.0, np.zeros((0, 2)), np.array([[1.0, 1.0]]), np.zeros(0), [2.0])
    np.testing.assert_allclose(g, [2 / 3, 2 / 3], atol=1e-14)


def test_kkt_large_lambda_tends_to_min_norm(rng):
    U = rng.standard_normal((3, 8))
    Yp = rng.standard_normal((2, 8))
    b = rng.standard_normal(3)
    g = kkt_solve(1e8, U, Yp, b, rng.standard_normal(2))
    np.testing.assert_allclose(g, np.linalg.pinv(U) @ b, atol=1e-4)


def test_kkt_singular_reported(rng):
    U = rng.standard_normal((3, 6))
    U[2] = U[0]
    with pytest.raises(SingularKKTError) as exc:
        kkt_solve(1.0, U, rng.standard_normal((2, 6)), np.ones(3), np.ones(2))
    assert exc.value.cond > 1e12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1e4))
def test_kkt_residual_contract(seed, lam):
    r = np.random.default_rng(seed)
    M = r.integers(16, 40)
    U = r.standard_normal((14, M))
    Yp = r.standard_normal((4, M))
    u_stack, y_ini = r.standard_normal(14), r.standard_normal(4)
    g = kkt_solve(lam, U, Yp, u_stack, y_ini)
    res, tol = kkt_residual(lam, U, Yp, u_stack, y_ini, g)
    assert res < tol
    assert np.linalg.norm(U @ g - u_stack) <= 1e-8 * (1 + np.linalg.norm(u_stack))


# --- lambda ----------------------------------------------------------------

def test_lambda_examples():
    g = np.array([1.0, 1.0])  # |g|^2 = 2
    assert lambda_update(g, NoiseSpec(0.1, 0.1), 14, 10) == pytest.approx(1.9)
    assert lambda_update(g, NoiseSpec(0.0, 0.0), 14, 10) == 0.0
    assert lambda_update(g, NoiseSpec(0.3, 0.0), 14, 10) == pytest.approx(14 * 0.3)
    assert lambda_update(5 * g, NoiseSpec(0.3, 0.0), 14, 10) == pytest.approx(14 * 0.3)


def test_lambda_degenerate_warm_start():
    with pytest.raises(DegenerateWarmStart):
        lambda_update(np.zeros(3), NoiseSpec(0.1, 0.1), 14, 10)


def test_lambda_floor_applied(clean_sm):
    lin = linearize(clean_sm, NoiseSpec(0.0, 0.0), np.ones(clean_sm.M))
    assert lin.lam == lambda_floor(clean_sm) > 0


# --- iteration ---------------------------------------------------------------

def test_iterate_single_step_without_online_noise(ex1_sm, rng):
    prob = SmmProblem(ex1_sm, NoiseSpec(0.1, 0.0), rng.standard_normal(4), rng.standard_normal(4),
                      rng.standard_normal(10))
    res = smm_iterate(prob, rng.standard_normal(ex1_sm.M))
    assert res.converged and res.iterations == 1


def test_iterate_converges_on_example1_instances(paper_ss):
    fast = 0
    total = 40
    for seed in range(total):
        r = np.random.default_rng(1000 + seed)
        sm = build(generate_data(paper_ss, 50, EX1, seed), 4, 10)
        u_ini, y_ini, u_hat, _ = _true_window(paper_ss, r)
        y_ini = y_ini + math.sqrt(0.1) * r.standard_normal(4)
        g0 = init_g(sm, u_ini, y_ini, 0.5 * np.sin(np.pi * np.arange(10) / 10))
        res = smm_iterate(SmmProblem(sm, EX1, u_ini, y_ini, u_hat), g0)
        fast += res.converged and res.iterations <= 30
    assert fast >= 0.95 * total


def test_noise_free_prediction_exact(paper_ss, clean_sm, rng):
    for _ in range(10):
        u_ini, y_ini, u_hat, y_fut = _true_window(paper_ss, rng)
        prob = SmmProblem(clean_sm, NoiseSpec(0.0, 0.0), u_ini, y_ini, u_hat)
        res = smm_iterate(prob, np.ones(clean_sm.M))
        y_hat, var = predict(clean_sm, res.g, NoiseSpec())
        assert np.linalg.norm(y_hat - y_fut) < 1e-6 * np.linalg.norm(y_fut)
        assert var == 0.0


def test_iterate_objective_finite(ex1_sm, paper_ss, rng):
    u_ini, y_ini, u_hat, _ = _true_window(paper_ss, rng)
    g = init_g(ex1_sm, u_ini, y_ini, np.zeros(10))
    prob = SmmProblem(ex1_sm, EX1, u_ini, y_ini, u_hat)
    for _ in range(10):
        g = smm_iterate(prob, g, max_iter=1).g
        lam = lambda_update(g, EX1, 14, 10)
        obj = lam * g @ g + np.sum((ex1_sm.Yp @ g - y_ini) ** 2)
        assert math.isfinite(obj)
    assert math.isfinite(neg_log_likelihood(ex1_sm, EX1, g, y_ini))


# --- linearize ---------------------------------------------------------------

def test_linearize_matches_kkt_solve(ex1_sm, rng):
    g_prev = rng.standard_normal(ex1_sm.M)
    lin = linearize(ex1_sm, EX1, g_prev)
    for _ in range(10):
        y_ini, u_stack = rng.standard_normal(4), rng.standard_normal(14)
        g = kkt_solve(lin.lam, ex1_sm.U, ex1_sm.Yp, u_stack, y_ini)
        np.testing.assert_allclose(lin.g(y_ini, u_stack), g, atol=1e-10)
        assert np.linalg.norm(ex1_sm.U @ lin.g(y_ini, u_stack) - u_stack) < 1e-8 * (1 + np.linalg.norm(u_stack))


def test_linearize_is_one_iteration(ex1_sm, rng):
    g_prev = rng.standard_normal(ex1_sm.M)
    lin = linearize(ex1_sm, EX1, g_prev)
    u_ini, y_ini, u_hat = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(10)
    it = smm_iterate(SmmProblem(ex1_sm, EX1, u_ini, y_ini, u_hat), g_prev, max_iter=1)
    np.testing.assert_allclose(lin.g(y_ini, np.concatenate([u_ini, u_hat])), it.g, atol=1e-10)


def test_linearize_square_case(paper_ss):
    sm = build(generate_data(paper_ss, 27, EX1, 5), 4, 10)  # M = L = 14
    lin = linearize(sm, EX1, np.ones(sm.M))
    np.testing.assert_allclose(lin.Pmat, 0.0, atol=1e-10)
    np.testing.assert_allclose(lin.Qmat, np.linalg.inv(sm.U), atol=1e-8)


# --- predict / covariance ----------------------------------------------------

def test_predict_unit_vector(ex1_sm):
    for j in (0, 5, 36):
        e = np.zeros(ex1_sm.M)
        e[j] = 1.0
        y, var = predict(ex1_sm, e, EX1)
        np.testing.assert_array_equal(y, ex1_sm.Yf[:, j])
        assert var == pytest.approx(0.1)


def test_predict_variance_matches_covariance(ex1_sm, rng):
    g = rng.standard_normal(ex1_sm.M)
    _, var = predict(ex1_sm, g, EX1)
    cov = covariance(g, EX1, 4, 14)
    np.testing.assert_allclose(np.diag(cov.Sigma_yf), var, atol=1e-12)
    np.testing.assert_allclose(np.diag(cov.Sigma_y)[:4], var + 0.1, atol=1e-12)


def test_covariance_hand_example():
    cov = covariance(np.array([1.0, 0.0, 0.0]), NoiseSpec(0.5, 0.2), 1, 2)
    np.testing.assert_allclose(cov.Sigma_y, np.diag([0.7, 0.5]), atol=1e-15)


def test_covariance_zero_g():
    cov = covariance(np.zeros(5), NoiseSpec(0.5, 0.2), 2, 4)
    np.testing.assert_array_equal(cov.Sigma_y, 0.2 * np.diag([1, 1, 0, 0]))


def test_covariance_matches_toeplitz_oracle(rng):
    # Sigma_y = sigma2 * T T^T with T[i] = g shifted by i (zero padded)
    M, L = 9, 6
    g = rng.standard_normal(M)
    T = np.zeros((L, M + L))
    for i in range(L):
        T[i, i:i + M] = g
    np.testing.assert_allclose(covariance(g, NoiseSpec(0.3, 0.0), 2, L).Sigma_y, 0.3 * T @ T.T, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_covariance_symmetric_psd(seed):
    r = np.random.default_rng(seed)
    g = r.standard_normal(r.integers(1, 40)) * r.uniform(0.01, 10)
    cov = covariance(g, NoiseSpec(r.uniform(0, 2), r.uniform(0, 2)), 4, 14).Sigma_y
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-10


# --- init_g / discrepancy ----------------------------------------------------

def test_init_g_square(rng):
    # stacked (Up, Yp, Yf) has 1 + 1 + 3 = 5 rows, matching M = 5
    sm = SignalMatrix(rng.standard_normal((4, 5)), rng.standard_normal((4, 5)), 1, 3)
    A = np.vstack([sm.Up, sm.Yp, sm.Yf])
    b = rng.standard_normal(5)
    np.testing.assert_allclose(A @ init_g(sm, b[:1], b[1:2], b[2:]), b, atol=1e-10)


def test_init_g_minimum_norm_least_squares(ex1_sm, rng):
    u0, y0, r0 = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(10)
    g = init_g(ex1_sm, u0, y0, r0)
    A = np.vstack([ex1_sm.Up, ex1_sm.Yp, ex1_sm.Yf])
    ref, *_ = np.linalg.lstsq(A, np.concatenate([u0, y0, r0]), rcond=None)
    np.testing.assert_allclose(g, ref, atol=1e-10)
    lam = lambda_update(g, EX1, 14, 10)
    assert math.isfinite(lam) and lam > 0


def test_discrepancy():
    y = np.array([1.0, -2.0, 0.5])
    assert discrepancy(y, y) == 0.0
    assert discrepancy(2 * y, y) == pytest.approx(1.0)
    assert math.isnan(discrepancy(y, np.zeros(3)))
    with pytest.raises(ValueError):
        discrepancy(y, y[:2])
