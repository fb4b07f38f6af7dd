from dataclasses import replace

import numpy as np
import pytest

from smmpc.controllers import (
    BoxConstraints,
    CostSpec,
    SmmPc,
    StepContext,
    deepc_step,
    ideal_mpc_step,
    impulse_fir_identify,
    impulse_mpc_step,
    prediction_matrices,
    smmpc_step,
)
from smmpc.harness import closed_loop
from smmpc.experiments import base_config
from smmpc.plant import NoiseSpec, TransferFunction, markov_params, simulate, tf_to_ss, generate_data
from smmpc.qp import QpStatus
from smmpc.signal_matrix import TrajectoryWindow, build
from smmpc.smm import init_g, linearize

COST = CostSpec(Q=1.0, R=1.0, Lp=10)
EX1 = NoiseSpec(0.1, 0.1)


def _window(ss, rng, x0=None):
    x0 = rng.standard_normal(ss.nx) if x0 is None else x0
    u_ini = rng.standard_normal(4)
    _, y_ini, x = simulate(ss, u_ini, x0)
    return u_ini, y_ini, x


def test_cost_validation():
    with pytest.raises(ValueError):
        CostSpec(Q=0.0, R=0.0)
    with pytest.raises(ValueError):
        CostSpec(zeta=-1.0)
    with pytest.raises(ValueError):
        BoxConstraints(u_min=1.0, u_max=0.0)


def test_smmpc_zero_problem_gives_zero_input(clean_sm):
    w = TrajectoryWindow(np.zeros(4), np.zeros(4), np.zeros(10))
    lin = linearize(clean_sm, NoiseSpec(), np.ones(clean_sm.M))
    out = smmpc_step(lin, clean_sm, w, COST)
    assert out.status == QpStatus.OPTIMAL
    np.testing.assert_allclose(out.u_plan, 0.0, atol=1e-10)


def test_smmpc_feasibility_of_g(ex1_sm, rng):
    w = TrajectoryWindow(rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(10))
    lin = linearize(ex1_sm, EX1, init_g(ex1_sm, w.u_ini, w.y_ini, w.r))
    out = smmpc_step(lin, ex1_sm, w, COST, sigma2=0.1)
    np.testing.assert_allclose(ex1_sm.U @ out.g, np.concatenate([w.u_ini, out.u_plan]), atol=1e-8)
    np.testing.assert_allclose(out.y_pred, ex1_sm.Yf @ out.g, atol=1e-10)


def test_zeta_monotone_per_step(ex1_sm, rng):
    for _ in range(5):
        w = TrajectoryWindow(rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(10))
        lin = linearize(ex1_sm, EX1, init_g(ex1_sm, w.u_ini, w.y_ini, w.r))
        norms = [smmpc_step(lin, ex1_sm, w, replace(COST, zeta=z), sigma2=0.1).g_norm2
                 for z in (0.0, 1.0, 10.0, 1e2, 1e3, 1e4)]
        assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(norms, norms[1:]))


def test_smmpc_respects_input_bounds(ex1_sm, rng):
    w = TrajectoryWindow(rng.standard_normal(4), rng.standard_normal(4), 3 * np.ones(10))
    lin = linearize(ex1_sm, EX1, init_g(ex1_sm, w.u_ini, w.y_ini, w.r))
    out = smmpc_step(lin, ex1_sm, w, COST, BoxConstraints(-0.2, 0.2), sigma2=0.1)
    assert out.status == QpStatus.OPTIMAL
    assert np.all(np.abs(out.u_plan) <= 0.2 + 1e-12)


def test_smmpc_infeasible_falls_back(ex1_sm, rng):
    w = TrajectoryWindow(rng.standard_normal(4), rng.standard_normal(4), np.zeros(10))
    lin = linearize(ex1_sm, EX1, init_g(ex1_sm, w.u_ini, w.y_ini, w.r))
    cons = BoxConstraints(-1e-3, 1e-3, 50.0, 60.0)
    out = smmpc_step(lin, ex1_sm, w, COST, cons, sigma2=0.1, u_fallback=0.25)
    assert out.status == QpStatus.INFEASIBLE and out.u == 0.25


def test_smmpc_controller_keeps_warm_start_after_infeasible(ex1_sm, rng):
    ctrl = SmmPc(ex1_sm, EX1, COST, BoxConstraints(-1e-3, 1e-3, 50.0, 60.0))
    ctx = StepContext(0, rng.standard_normal(20), rng.standard_normal(20), np.zeros(10))
    out = ctrl.step(ctx)
    assert out.status == QpStatus.INFEASIBLE
    assert ctrl.g is not None  # initialized, and left untouched by the failed step
    g_before = ctrl.g.copy()
    ctrl.step(ctx)
    np.testing.assert_array_equal(ctrl.g, g_before)


def test_smmpc_tracks_discrepancy(ex1_sm, rng):
    ctrl = SmmPc(ex1_sm, EX1, COST, track_discrepancy=True)
    out = ctrl.step(StepContext(0, rng.standard_normal(20), rng.standard_normal(20), np.ones(10)))
    assert 0 <= out.info["E"] < 1
    assert out.info["smm_iterations"] >= 1


def test_deepc_noise_free_limit(paper_ss, clean_sm, rng):
    for _ in range(3):
        u_ini, y_ini, x = _window(paper_ss, rng)
        w = TrajectoryWindow(u_ini, y_ini, 0.5 * np.sin(np.pi * np.arange(10) / 10))
        out = deepc_step(clean_sm, w, COST, lambda_g=1e-8, lambda_y=1e8)
        _, y_true, _ = simulate(paper_ss, out.u_plan, x)
        assert np.max(np.abs(out.y_pred - y_true)) < 1e-3


def test_deepc_rejects_nonpositive_weights(ex1_sm):
    w = TrajectoryWindow(np.zeros(4), np.zeros(4), np.zeros(10))
    with pytest.raises(ValueError):
        deepc_step(ex1_sm, w, COST, lambda_g=0.0)


def test_deepc_matches_joint_qp(ex1_sm, rng):
    # brute-force oracle: the joint problem in g with u_ini fixed, solved by an
    # equality-constrained least squares in g, versus the reduced QP
    w = TrajectoryWindow(rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(10))
    lg, ly = 30.0, 1000.0
    out = deepc_step(ex1_sm, w, COST, lambda_g=lg, lambda_y=ly)
    sm = ex1_sm
    # variables g; u_hat = Uf g; cost |Yf g - r|^2 + |Uf g|^2 + lg|g|^2 + ly|Yp g - y_ini|^2, s.t. Up g = u_ini
    H = sm.Yf.T @ sm.Yf + sm.Uf.T @ sm.Uf + lg * np.eye(sm.M) + ly * sm.Yp.T @ sm.Yp
    b = sm.Yf.T @ w.r + ly * sm.Yp.T @ w.y_ini
    K = np.block([[H, sm.Up.T], [sm.Up, np.zeros((4, 4))]])
    g = np.linalg.solve(K, np.concatenate([b, w.u_ini]))[: sm.M]
    np.testing.assert_allclose(out.u_plan, sm.Uf @ g, atol=1e-8)


def test_ideal_mpc_zero(paper_ss):
    out = ideal_mpc_step(paper_ss, np.zeros(4), np.zeros(10), COST)
    np.testing.assert_array_equal(out.u_plan, np.zeros(10))


def test_prediction_matrices(paper_ss, rng):
    Phi, Gamma = prediction_matrices(paper_ss, 10)
    h = markov_params(paper_ss, 10)
    np.testing.assert_allclose(Gamma[:, 0], h, atol=1e-14)
    assert Gamma[0, 0] == 0.0 and Gamma[1, 0] == pytest.approx(0.1159)
    x, u = rng.standard_normal(4), rng.standard_normal(10)
    np.testing.assert_allclose(Phi @ x + Gamma @ u, simulate(paper_ss, u, x)[1], atol=1e-12)


def test_impulse_fir_noise_free(paper_ss, clean_sm):
    fir = impulse_fir_identify(clean_sm, NoiseSpec())
    np.testing.assert_allclose(fir, markov_params(paper_ss, 10), atol=1e-6)


def test_impulse_fir_of_delay():
    ss = tf_to_ss(TransferFunction([1.0], [1.0, 0.0]))
    sm = build(generate_data(ss, 40, NoiseSpec(), 1), 2, 6)
    fir = impulse_fir_identify(sm, NoiseSpec())
    # index 0 is the direct feedthrough, index 1 the one-step delay
    np.testing.assert_allclose(fir, [0, 1, 0, 0, 0, 0], atol=1e-8)


def test_impulse_fir_noisy_estimate(paper_ss):
    sm = build(generate_data(paper_ss, 100, NoiseSpec(1.0, 1.0), 3), 4, 10)
    fir = impulse_fir_identify(sm, NoiseSpec(1.0, 1.0))
    h = markov_params(paper_ss, 10)
    assert np.all(np.isfinite(fir))
    assert np.linalg.norm(fir - h) < 2.0 * np.linalg.norm(h)


def test_impulse_mpc_zero_history():
    out = impulse_mpc_step(np.array([0.0, 1.0, 0.5]), np.zeros(5), np.zeros(10), COST)
    np.testing.assert_array_equal(out.u_plan, np.zeros(10))


def test_impulse_mpc_matches_ideal_mpc_on_fir_plant(rng):
    tf = TransferFunction([0.5, 0.3, -0.2], [1.0, 0.0, 0.0, 0.0])
    ss = tf_to_ss(tf)
    fir = markov_params(ss, 10)
    for _ in range(5):
        u_hist = rng.standard_normal(20)
        _, _, x = simulate(ss, u_hist)
        r = rng.standard_normal(10)
        a = impulse_mpc_step(fir, u_hist, r, COST)
        b = ideal_mpc_step(ss, x, r, COST)
        np.testing.assert_allclose(a.u_plan, b.u_plan, atol=1e-8)
        np.testing.assert_allclose(a.y_pred, b.y_pred, atol=1e-10)


def test_impulse_mpc_short_history():
    with pytest.raises(ValueError):
        impulse_mpc_step(np.ones(10), np.zeros(3), np.zeros(10), COST)


def test_deepc_large_lambda_g_costs_more():
    cfg = base_config(0)
    J = {}
    for lg in (10.0, 1e6):
        c = replace(cfg, controller=replace(cfg.controller, kind="deepc", lambda_g=lg))
        J[lg] = np.median([closed_loop(c, i).J_tot for i in range(8)])
    assert J[1e6] > J[10.0]
