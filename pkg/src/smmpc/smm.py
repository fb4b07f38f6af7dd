"""Maximum-likelihood signal matrix model (SMM).

Given a signal matrix col(U, Y), a past window (u_ini, y_ini) and a candidate
future input u_hat, the SMM estimates the combination vector g by the
fixed-point scheme

    g_{k+1} = argmin_{U g = col(u_ini, u_hat)}  lam(g_k) |g|^2 + |Y_p g - y_ini|^2
    lam(g)  = Lp * sigma2_p / |g|^2 + L * sigma2

and predicts y_hat = Y_f g. One warm-started step of the scheme is affine in
(y_ini, u_stack); ``linearize`` returns that affine map.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as sla

from smmpc.plant import NoiseSpec
from smmpc.signal_matrix import SignalMatrix

__all__ = [
    "SingularKKTError",
    "DegenerateWarmStart",
    "SmmProblem",
    "SmmLinearization",
    "CovarianceModel",
    "IterateResult",
    "LAMBDA_FLOOR_REL",
    "lambda_floor",
    "kkt_solve",
    "kkt_residual",
    "lambda_update",
    "smm_iterate",
    "linearize",
    "predict",
    "covariance",
    "neg_log_likelihood",
    "init_g",
    "discrepancy",
]

# Relative floor on lam, scaled by the mean squared column norm of Y_p. It only
# binds when both noise variances are (near) zero. The ridge bias it adds to
# noise-free predictions grows linearly with it: 1e-8 gives ~1e-6 relative
# error on 60-sample data, 1e-10 gives ~1e-8 while the KKT system stays well posed.
LAMBDA_FLOOR_REL = 1e-10


class SingularKKTError(np.linalg.LinAlgError):
    """The equality-constrained ridge system is numerically singular."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"KKT matrix is singular (condition estimate {cond:.3e}); is the input PE?")


class DegenerateWarmStart(ValueError):
    """lam(g) is undefined because g = 0 while sigma2_p > 0."""


@dataclass(frozen=True)
class SmmProblem:
    sm: SignalMatrix
    noise: NoiseSpec
    u_ini: np.ndarray
    y_ini: np.ndarray
    u_hat: np.ndarray

    @property
    def u_stack(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.u_ini), np.ravel(self.u_hat)])


@dataclass(frozen=True)
class SmmLinearization:
    """Affine solution map ``g = Pmat @ y_ini + Qmat @ u_stack``."""

    Pmat: np.ndarray
    Qmat: np.ndarray
    g_warm: np.ndarray
    lam: float

    def g(self, y_ini: np.ndarray, u_stack: np.ndarray) -> np.ndarray:
        return self.Pmat @ y_ini + self.Qmat @ u_stack


@dataclass(frozen=True)
class CovarianceModel:
    Sigma_y: np.ndarray
    L0: int

    @property
    def Sigma_yf(self) -> np.ndarray:
        return self.Sigma_y[self.L0:, self.L0:]


class IterateResult(NamedTuple):
    g: np.ndarray
    iterations: int
    converged: bool


def lambda_floor(sm: SignalMatrix) -> float:
    """Smallest admissible ridge weight; keeps the noise-free limit well posed."""
    return LAMBDA_FLOOR_REL * float(np.sum(sm.Yp**2)) / sm.M


def _kkt_matrix(lam: float, U: np.ndarray, Yp: np.ndarray) -> np.ndarray:
    M = U.shape[1]
    H = Yp.T @ Yp
    H[np.diag_indices(M)] += lam
    nc = U.shape[0]
    K = np.zeros((M + nc, M + nc))
    K[:M, :M] = H
    K[:M, M:] = U.T
    K[M:, :M] = U
    return K


def _scaling(K: np.ndarray, M: int) -> np.ndarray:
    """Symmetric equilibration for the KKT matrix.

    Primal rows are scaled by ``1/sqrt(H_ii)`` and constraint rows by
    ``sqrt(mean H_ii)``, so that a large ridge weight does not by itself
    make the factorization look singular.
    """
    d = np.abs(np.diag(K)[:M])
    d = np.where(d > 0, d, 1.0)
    return np.concatenate([1.0 / np.sqrt(d), np.full(K.shape[0] - M, np.sqrt(d.mean()))])


def _factor(K: np.ndarray, M: int):
    D = _scaling(K, M)
    Ks = D[:, None] * K * D[None, :]
    with warnings.catch_warnings():
        # singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(Ks, check_finite=False)
    anorm = np.linalg.norm(Ks, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > np.finfo(float).eps:
        raise SingularKKTError(math.inf if rcond == 0 else 1.0 / rcond)
    return lu, piv, D


def _solve_refined(K: np.ndarray, factor, rhs: np.ndarray) -> np.ndarray:
    lu, piv, D = factor
    Dc = D if rhs.ndim == 1 else D[:, None]
    x = Dc * sla.lu_solve((lu, piv), Dc * rhs, check_finite=False)
    # one step of iterative refinement keeps the residual at the contract level
    x += Dc * sla.lu_solve((lu, piv), Dc * (rhs - K @ x), check_finite=False)
    return x


def kkt_residual(lam: float, U: np.ndarray, Yp: np.ndarray, u_stack, y_ini, g: np.ndarray) -> tuple[float, float]:
    """Return ``(residual, tolerance)`` for the KKT conditions at ``g``.

    The multiplier is recovered by least squares from the stationarity rows.
    """
    U = np.atleast_2d(U)
    Yp = np.atleast_2d(Yp)
    rhs_top = Yp.T @ np.ravel(y_ini)
    grad = lam * g + Yp.T @ (Yp @ g) - rhs_top
    if U.shape[0]:
        nu, *_ = np.linalg.lstsq(U.T, -grad, rcond=None)
        grad = grad + U.T @ nu
        feas = U @ g - np.ravel(u_stack)
    else:
        feas = np.zeros(0)
    res = float(np.linalg.norm(np.concatenate([grad, feas])))
    tol = 1e-8 * (1.0 + float(np.linalg.norm(np.concatenate([rhs_top, np.ravel(u_stack)]))))
    return res, tol


def kkt_solve(lam: float, U: np.ndarray, Yp: np.ndarray, u_stack, y_ini) -> np.ndarray:
    """Minimize ``lam |g|^2 + |Yp g - y_ini|^2`` subject to ``U g = u_stack``.

    Solved by LU on the symmetric indefinite KKT system. Raises
    ``SingularKKTError`` when the system is numerically singular.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Yp = np.atleast_2d(np.asarray(Yp, dtype=float))
    if U.size == 0:
        U = np.zeros((0, Yp.shape[1]))
    M = U.shape[1]
    rhs = np.concatenate([Yp.T @ np.ravel(y_ini), np.ravel(u_stack)])
    K = _kkt_matrix(lam, U, Yp)
    x = _solve_refined(K, _factor(K, M), rhs)
    return x[:M]


def lambda_update(g: np.ndarray, noise: NoiseSpec, L: int, Lp: int) -> float:
    gg = float(np.dot(g, g))
    if noise.sigma2_p == 0:
        return L * noise.sigma2
    if gg == 0.0:
        raise DegenerateWarmStart("g = 0 with sigma2_p > 0; initialize g first")
    return Lp * noise.sigma2_p / gg + L * noise.sigma2


def _lam(sm: SignalMatrix, noise: NoiseSpec, g: np.ndarray) -> float:
    return max(lambda_update(g, noise, sm.L, sm.Lp), lambda_floor(sm))


def smm_iterate(prob: SmmProblem, g0: np.ndarray, tol: float = 1e-6, max_iter: int = 50) -> IterateResult:
    """Run the fixed-point scheme from ``g0`` until the relative change in g
    drops below ``tol``. Iteration stops early once lam stops changing, since
    the next iterate would repeat the current one.
    """
    sm, noise = prob.sm, prob.noise
    u_stack = prob.u_stack
    g = np.asarray(g0, dtype=float)
    lam = _lam(sm, noise, g)
    for k in range(1, max_iter + 1):
        g_new = kkt_solve(lam, sm.U, sm.Yp, u_stack, prob.y_ini)
        lam_new = _lam(sm, noise, g_new)
        step = np.linalg.norm(g_new - g)
        scale = np.linalg.norm(g)
        g = g_new
        if lam_new == lam or (scale > 0 and step / scale < tol):
            return IterateResult(g, k, True)
        lam = lam_new
    return IterateResult(g, max_iter, False)


def linearize(sm: SignalMatrix, noise: NoiseSpec, g_prev: np.ndarray) -> SmmLinearization:
    """Affine map of one warm-started SMM step: the blocks of the inverse KKT
    operator applied to the ``y_ini`` and ``u_stack`` right-hand sides."""
    g_prev = np.asarray(g_prev, dtype=float)
    lam = _lam(sm, noise, g_prev)
    M, L0, L = sm.M, sm.L0, sm.L
    K = _kkt_matrix(lam, sm.U, sm.Yp)
    rhs = np.zeros((M + L, L0 + L))
    rhs[:M, :L0] = sm.Yp.T
    rhs[M:, L0:] = np.eye(L)
    X = _solve_refined(K, _factor(K, M), rhs)
    return SmmLinearization(Pmat=X[:M, :L0], Qmat=X[:M, L0:], g_warm=g_prev, lam=lam)


def predict(sm: SignalMatrix, g: np.ndarray, noise: NoiseSpec) -> tuple[np.ndarray, float]:
    """Predicted future outputs and their (common) variance ``sigma2 |g|^2``."""
    g = np.asarray(g, dtype=float)
    return sm.Yf @ g, noise.sigma2 * float(g @ g)


def covariance(g: np.ndarray, noise: NoiseSpec, L0: int, L: int) -> CovarianceModel:
    """Covariance of col(Y_p g - y_ini, Y_f g) given g.

    Entry (i, j) is ``sigma2 * acf(g)[|i - j|]`` plus ``sigma2_p`` on the first
    ``L0`` diagonal entries.
    """
    g = np.asarray(g, dtype=float).ravel()
    M = g.size
    acf = np.zeros(L)
    full = np.correlate(g, g, mode="full")[M - 1:]
    acf[: min(L, M)] = full[: min(L, M)]
    lags = np.abs(np.subtract.outer(np.arange(L), np.arange(L)))
    Sigma = noise.sigma2 * acf[lags]
    Sigma[np.arange(L0), np.arange(L0)] += noise.sigma2_p
    return CovarianceModel(Sigma, L0)


def neg_log_likelihood(sm: SignalMatrix, noise: NoiseSpec, g: np.ndarray, y_ini: np.ndarray) -> float:
    """Full (un-relaxed) objective ``logdet Sigma + e^T Sigma^-1 e``; diagnostics only."""
    Sigma = covariance(g, noise, sm.L0, sm.L).Sigma_y
    e = np.concatenate([sm.Yp @ g - np.ravel(y_ini), np.zeros(sm.Lp)])
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0:
        return math.inf
    return float(logdet + e @ np.linalg.solve(Sigma, e))


def init_g(sm: SignalMatrix, u0, y0, r0) -> np.ndarray:
    """Pseudo-inverse fit of col(U_p, Y_p, Y_f) to col(u0, y0, r0)."""
    A = np.vstack([sm.Up, sm.Yp, sm.Yf])
    b = np.concatenate([np.ravel(u0), np.ravel(y0), np.ravel(r0)])
    if b.size != A.shape[0]:
        raise ValueError(f"stacked window has length {b.size}, expected {A.shape[0]}")
    return np.linalg.pinv(A, rcond=max(A.shape) * np.finfo(float).eps) @ b


def discrepancy(y_lin, y_smm) -> float:
    """Relative 2-norm distance of ``y_lin`` from ``y_smm``; NaN when ``y_smm = 0``."""
    y_lin = np.asarray(y_lin, dtype=float)
    y_smm = np.asarray(y_smm, dtype=float)
    if y_lin.shape != y_smm.shape:
        raise ValueError(f"shape mismatch {y_lin.shape} vs {y_smm.shape}")
    den = np.linalg.norm(y_smm)
    if den == 0.0:
        return math.nan
    return float(np.linalg.norm(y_lin - y_smm) / den)
