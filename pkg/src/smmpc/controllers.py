"""Receding-horizon controllers sharing one step interface.

Each step function turns its predictor into an affine map ``y_hat = c + G u_hat``
and solves

    minimize  Q |y_hat - r|^2 + R |u_hat|^2 (+ extra quadratic in u_hat)

over the box/output constraints with :func:`smmpc.qp.qp_solve`.

The controller classes hold the per-run state (warm start, adaptive signal
matrix) and are what the closed-loop harness drives.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from smmpc.plant import NoiseSpec, StateSpace, markov_params
from smmpc.qp import QpProblem, QpStatus, qp_solve
from smmpc.signal_matrix import SignalMatrix, TrajectoryWindow, append_online, compress
from smmpc.smm import (
    SmmLinearization,
    SmmProblem,
    discrepancy,
    init_g,
    linearize,
    smm_iterate,
)

__all__ = [
    "CostSpec",
    "BoxConstraints",
    "ControllerStep",
    "StepContext",
    "qp_solve",
    "tracking_qp",
    "smmpc_step",
    "deepc_step",
    "ideal_mpc_step",
    "prediction_matrices",
    "impulse_fir_identify",
    "impulse_mpc_step",
    "Controller",
    "SmmPc",
    "DeePC",
    "IdealMpc",
    "ImpulseMpc",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostSpec:
    Q: float = 1.0
    R: float = 1.0
    Lp: int = 10
    N_c: int = 120
    zeta: float = 0.0

    def __post_init__(self):
        if self.Q < 0 or self.R < 0 or (self.Q == 0 and self.R == 0):
            raise ValueError(f"need Q >= 0, R >= 0, not both zero (got Q={self.Q}, R={self.R})")
        if self.zeta < 0:
            raise ValueError(f"zeta must be nonnegative, got {self.zeta}")


@dataclass(frozen=True)
class BoxConstraints:
    u_min: float = -math.inf
    u_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf

    def __post_init__(self):
        if self.u_min > self.u_max or self.y_min > self.y_max:
            raise ValueError("constraint lower bound exceeds upper bound")

    @property
    def has_output_bounds(self) -> bool:
        return math.isfinite(self.y_min) or math.isfinite(self.y_max)


UNCONSTRAINED = BoxConstraints()


@dataclass
class ControllerStep:
    u: float
    u_plan: np.ndarray
    y_pred: np.ndarray
    status: QpStatus
    predicted_cost: float
    g: Optional[np.ndarray] = None
    lam: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def g_norm2(self) -> float:
        return math.nan if self.g is None else float(self.g @ self.g)


@dataclass
class StepContext:
    """What the harness hands a controller at time ``t``.

    ``u_hist`` / ``y_hist`` hold every applied input and noisy measurement
    before ``t`` (offline tail included); ``x`` and ``ss`` are the true plant
    state and realization, used only by the ideal MPC baseline.
    """

    t: int
    u_hist: np.ndarray
    y_hist: np.ndarray
    r: np.ndarray
    x: Optional[np.ndarray] = None
    ss: Optional[StateSpace] = None

    def window(self, L0: int) -> TrajectoryWindow:
        return TrajectoryWindow(self.u_hist[len(self.u_hist) - L0:], self.y_hist[len(self.y_hist) - L0:], self.r)


def tracking_qp(
    c: np.ndarray,
    G: np.ndarray,
    r: np.ndarray,
    cost: CostSpec,
    cons: BoxConstraints,
    extra_H: Optional[np.ndarray] = None,
    extra_f: Optional[np.ndarray] = None,
) -> QpProblem:
    """QP in ``u_hat`` for the prediction ``y_hat = c + G u_hat``.

    ``extra_H``/``extra_f`` add ``u^T extra_H u + 2 extra_f^T u`` to the cost.
    """
    n = G.shape[1]
    H = 2.0 * (cost.Q * G.T @ G + cost.R * np.eye(n))
    f = 2.0 * cost.Q * G.T @ (c - r)
    if extra_H is not None:
        H = H + 2.0 * extra_H
        f = f + 2.0 * extra_f
    prob = QpProblem(H, f, lb=np.full(n, cons.u_min), ub=np.full(n, cons.u_max))
    if cons.has_output_bounds:
        prob = QpProblem(H, f, prob.lb, prob.ub, G=G, c=c, y_lb=np.full(len(c), cons.y_min), y_ub=np.full(len(c), cons.y_max))
    return prob


def _tracking_cost(y, u, r, cost: CostSpec) -> float:
    return float(cost.Q * np.sum((y - r) ** 2) + cost.R * np.sum(u**2))


def _infeasible(n: int, u_fallback: float) -> ControllerStep:
    return ControllerStep(
        u=u_fallback, u_plan=np.full(n, np.nan), y_pred=np.full(n, np.nan),
        status=QpStatus.INFEASIBLE, predicted_cost=math.nan,
    )


def smmpc_step(
    lin: SmmLinearization,
    sm: SignalMatrix,
    window: TrajectoryWindow,
    cost: CostSpec,
    cons: BoxConstraints = UNCONSTRAINED,
    sigma2: float = 0.0,
    u_fallback: float = 0.0,
) -> ControllerStep:
    """One SMM-PC step with the linearized predictor, plus ``zeta * sigma2 * |g|^2``.

    On an infeasible QP the fallback input is applied and ``status`` says so.
    """
    window.check(sm)
    L0 = sm.L0
    r = np.asarray(window.r, dtype=float)
    g_c = lin.Pmat @ window.y_ini + lin.Qmat[:, :L0] @ window.u_ini
    K = lin.Qmat[:, L0:]
    c = sm.Yf @ g_c
    G = sm.Yf @ K
    w = cost.zeta * sigma2
    extra = (w * K.T @ K, w * K.T @ g_c) if w > 0 else (None, None)
    res = qp_solve(tracking_qp(c, G, r, cost, cons, *extra))
    if res.status == QpStatus.INFEASIBLE:
        return _infeasible(sm.Lp, u_fallback)
    u_hat = res.x
    g = g_c + K @ u_hat
    y_hat = c + G @ u_hat
    return ControllerStep(
        u=float(u_hat[0]), u_plan=u_hat, y_pred=y_hat, status=res.status,
        predicted_cost=_tracking_cost(y_hat, u_hat, r, cost) + w * float(g @ g),
        g=g, lam=lin.lam, info={"kkt_residual": res.kkt_residual},
    )


def deepc_step(
    sm: SignalMatrix,
    window: TrajectoryWindow,
    cost: CostSpec,
    cons: BoxConstraints = UNCONSTRAINED,
    lambda_g: float = 100.0,
    lambda_y: float = 1000.0,
    u_fallback: float = 0.0,
) -> ControllerStep:
    """Regularized DeePC (squared 2-norm penalties).

    The joint problem over ``(g, u_hat)`` is reduced to ``u_hat``: for fixed
    ``u_hat`` the optimal g solves an equality-constrained ridge problem and
    is affine in ``u_hat``, so substituting it back gives an exact QP in ``u_hat``.
    """
    if lambda_g <= 0 or lambda_y <= 0:
        raise ValueError("lambda_g and lambda_y must be positive")
    window.check(sm)
    M, L0, Lp, L = sm.M, sm.L0, sm.Lp, sm.L
    r = np.asarray(window.r, dtype=float)
    Hg = cost.Q * sm.Yf.T @ sm.Yf + lambda_y * sm.Yp.T @ sm.Yp
    Hg[np.diag_indices(M)] += lambda_g
    b = cost.Q * sm.Yf.T @ r + lambda_y * sm.Yp.T @ window.y_ini
    K = np.zeros((M + L, M + L))
    K[:M, :M] = Hg
    K[:M, M:] = sm.U.T
    K[M:, :M] = sm.U
    rhs = np.zeros((M + L, 1 + Lp))
    rhs[:M, 0] = b
    rhs[M:M + L0, 0] = window.u_ini
    rhs[M + L0:, 1:] = np.eye(Lp)
    sol = np.linalg.solve(K, rhs)
    g0, Kg = sol[:M, 0], sol[:M, 1:]
    # F(g) = g^T Hg g - 2 b^T g; the R|u|^2 term is added by tracking_qp with Q := 0
    H_u = Kg.T @ Hg @ Kg
    f_u = Kg.T @ (Hg @ g0 - b)
    c = sm.Yf @ g0
    G = sm.Yf @ Kg
    zero_q = CostSpec(Q=0.0, R=cost.R, Lp=cost.Lp, N_c=cost.N_c) if cost.R > 0 else None
    if zero_q is not None:
        prob = tracking_qp(c, G, r, zero_q, cons, H_u, f_u)
    else:
        prob = QpProblem(2 * H_u, 2 * f_u, np.full(Lp, cons.u_min), np.full(Lp, cons.u_max))
        if cons.has_output_bounds:
            prob = QpProblem(2 * H_u, 2 * f_u, prob.lb, prob.ub, G, c, np.full(Lp, cons.y_min), np.full(Lp, cons.y_max))
    res = qp_solve(prob)
    if res.status == QpStatus.INFEASIBLE:
        return _infeasible(Lp, u_fallback)
    u_hat = res.x
    g = g0 + Kg @ u_hat
    y_hat = sm.Yf @ g
    pred = (
        _tracking_cost(y_hat, u_hat, r, cost)
        + lambda_g * float(g @ g)
        + lambda_y * float(np.sum((sm.Yp @ g - window.y_ini) ** 2))
    )
    return ControllerStep(
        u=float(u_hat[0]), u_plan=u_hat, y_pred=y_hat, status=res.status, predicted_cost=pred,
        g=g, info={"kkt_residual": res.kkt_residual},
    )


def prediction_matrices(ss: StateSpace, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """``Phi`` (horizon x nx) and lower-triangular Toeplitz ``Gamma`` with
    ``y_hat = Phi x + Gamma u_hat``."""
    Phi = np.empty((horizon, ss.nx))
    row = ss.C[0].copy()
    for k in range(horizon):
        Phi[k] = row
        row = row @ ss.A
    h = markov_params(ss, horizon)
    idx = np.subtract.outer(np.arange(horizon), np.arange(horizon))
    Gamma = np.where(idx >= 0, h[np.clip(idx, 0, None)], 0.0)
    return Phi, Gamma


def ideal_mpc_step(
    ss: StateSpace,
    x: np.ndarray,
    r: np.ndarray,
    cost: CostSpec,
    cons: BoxConstraints = UNCONSTRAINED,
    u_fallback: float = 0.0,
) -> ControllerStep:
    """Condensed MPC with the true model and noise-free state, no terminal cost."""
    r = np.asarray(r, dtype=float)
    Phi, Gamma = prediction_matrices(ss, r.size)
    c = Phi @ np.asarray(x, dtype=float)
    res = qp_solve(tracking_qp(c, Gamma, r, cost, cons))
    if res.status == QpStatus.INFEASIBLE:
        return _infeasible(r.size, u_fallback)
    y_hat = c + Gamma @ res.x
    return ControllerStep(
        u=float(res.x[0]), u_plan=res.x, y_pred=y_hat, status=res.status,
        predicted_cost=_tracking_cost(y_hat, res.x, r, cost), info={"kkt_residual": res.kkt_residual},
    )


def impulse_fir_identify(sm: SignalMatrix, noise: NoiseSpec, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Impulse response ``(h_0, ..., h_{Lp-1})`` read off the SMM.

    The SMM is evaluated from a zero past window with input ``(1, 0, ..., 0)``
    and no online noise, so lam does not depend on g and one step converges.
    """
    quiet = NoiseSpec(sigma2=noise.sigma2, sigma2_p=0.0)
    u_hat = np.zeros(sm.Lp)
    u_hat[0] = 1.0
    prob = SmmProblem(sm, quiet, np.zeros(sm.L0), np.zeros(sm.L0), u_hat)
    res = smm_iterate(prob, np.ones(sm.M), tol=tol, max_iter=max_iter)
    if not res.converged:
        log.warning("impulse identification did not converge in %d iterations", max_iter)
    return sm.Yf @ res.g


def impulse_mpc_step(
    fir: np.ndarray,
    u_hist: np.ndarray,
    r: np.ndarray,
    cost: CostSpec,
    cons: BoxConstraints = UNCONSTRAINED,
    u_fallback: float = 0.0,
) -> ControllerStep:
    """MPC on the truncated convolution ``y_hat[k] = sum_j fir[j] u[t + k - j]``."""
    fir = np.asarray(fir, dtype=float)
    r = np.asarray(r, dtype=float)
    n_h, Lp = fir.size, r.size
    u_hist = np.asarray(u_hist, dtype=float)
    if u_hist.size < n_h - 1:
        raise ValueError(f"input history of length {u_hist.size} shorter than FIR order - 1 = {n_h - 1}")
    idx = np.subtract.outer(np.arange(Lp), np.arange(Lp))
    G = np.where((idx >= 0) & (idx < n_h), fir[np.clip(idx, 0, n_h - 1)], 0.0)
    c = np.zeros(Lp)
    for k in range(Lp):
        for j in range(k + 1, n_h):
            c[k] += fir[j] * u_hist[u_hist.size - (j - k)]
    res = qp_solve(tracking_qp(c, G, r, cost, cons))
    if res.status == QpStatus.INFEASIBLE:
        return _infeasible(Lp, u_fallback)
    y_hat = c + G @ res.x
    return ControllerStep(
        u=float(res.x[0]), u_plan=res.x, y_pred=y_hat, status=res.status,
        predicted_cost=_tracking_cost(y_hat, res.x, r, cost), info={"kkt_residual": res.kkt_residual},
    )


class Controller:
    """Per-run controller state. One instance per closed-loop run."""

    name = "controller"
    adaptive = False

    def step(self, ctx: StepContext) -> ControllerStep:
        raise NotImplementedError

    def observe(self, u_window: np.ndarray, y_window: np.ndarray) -> None:
        """New length-L trajectory window; only adaptive controllers use it."""

    @staticmethod
    def _last(ctx: StepContext) -> float:
        return float(ctx.u_hist[-1]) if len(ctx.u_hist) else 0.0


class SmmPc(Controller):
    """Linearized SMM predictive control with optional online adaptation."""

    name = "smmpc"

    def __init__(
        self,
        sm: SignalMatrix,
        noise: NoiseSpec,
        cost: CostSpec,
        cons: BoxConstraints = UNCONSTRAINED,
        adaptive: bool = False,
        gamma: float = 1.0,
        compressed: bool = False,
        track_discrepancy: bool = False,
    ):
        self.sm = compress(sm) if compressed and sm.M >= 2 * sm.L else sm
        self.noise = noise
        self.cost = cost
        self.cons = cons
        self.adaptive = adaptive
        self.gamma = gamma
        self.track_discrepancy = track_discrepancy
        self.g: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.sm.L

    def step(self, ctx: StepContext) -> ControllerStep:
        sm = self.sm
        window = ctx.window(sm.L0)
        if self.g is None:
            self.g = init_g(sm, window.u_ini, window.y_ini, window.r)
        lin = linearize(sm, self.noise, self.g)
        out = smmpc_step(lin, sm, window, self.cost, self.cons, self.noise.sigma2, self._last(ctx))
        if out.status == QpStatus.INFEASIBLE:
            return out
        if self.track_discrepancy:
            prob = SmmProblem(sm, self.noise, window.u_ini, window.y_ini, out.u_plan)
            it = smm_iterate(prob, lin.g_warm)
            out.info["E"] = discrepancy(out.y_pred, sm.Yf @ it.g) if it.converged else math.nan
            out.info["smm_iterations"] = it.iterations
        self.g = out.g
        return out

    def observe(self, u_window, y_window) -> None:
        if self.adaptive:
            self.sm = append_online(self.sm, u_window, y_window, self.gamma)


class DeePC(Controller):
    name = "deepc"

    def __init__(self, sm: SignalMatrix, cost: CostSpec, cons: BoxConstraints = UNCONSTRAINED,
                 lambda_g: float = 100.0, lambda_y: float = 1000.0):
        self.sm, self.cost, self.cons = sm, cost, cons
        self.lambda_g, self.lambda_y = lambda_g, lambda_y

    def step(self, ctx: StepContext) -> ControllerStep:
        return deepc_step(self.sm, ctx.window(self.sm.L0), self.cost, self.cons,
                          self.lambda_g, self.lambda_y, self._last(ctx))


class IdealMpc(Controller):
    name = "mpc"

    def __init__(self, cost: CostSpec, cons: BoxConstraints = UNCONSTRAINED):
        self.cost, self.cons = cost, cons

    def step(self, ctx: StepContext) -> ControllerStep:
        if ctx.x is None or ctx.ss is None:
            raise ValueError("ideal MPC needs the true state and model")
        return ideal_mpc_step(ctx.ss, ctx.x, ctx.r, self.cost, self.cons, self._last(ctx))


class ImpulseMpc(Controller):
    name = "impulse"

    def __init__(self, fir: np.ndarray, cost: CostSpec, cons: BoxConstraints = UNCONSTRAINED):
        self.fir = np.asarray(fir, dtype=float)
        self.cost, self.cons = cost, cons

    @classmethod
    def from_signal_matrix(cls, sm: SignalMatrix, noise: NoiseSpec, cost: CostSpec,
                           cons: BoxConstraints = UNCONSTRAINED) -> "ImpulseMpc":
        return cls(impulse_fir_identify(sm, noise), cost, cons)

    def step(self, ctx: StepContext) -> ControllerStep:
        return impulse_mpc_step(self.fir, ctx.u_hist, ctx.r, self.cost, self.cons, self._last(ctx))
