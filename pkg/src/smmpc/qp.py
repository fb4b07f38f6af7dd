"""Dense convex QP with box bounds and optional bounds on an affine output map.

    minimize    0.5 x^T H x + f^T x
    subject to  lb <= x <= ub,   y_lb <= G x + c <= y_ub

Without finite bounds the minimizer is the solution of ``H x = -f``. Otherwise
a primal active-set method (Nocedal & Wright, Alg. 16.3) runs from a feasible
start: the clipped unconstrained minimizer for box-only problems, an LP
phase-1 point (HiGHS via scipy) when output bounds are present.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

__all__ = ["QpStatus", "QpProblem", "QpResult", "qp_solve", "kkt_report"]

_FEAS_TOL = 1e-10
_STEP_TOL = 1e-12


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    y_lb: Optional[np.ndarray] = None
    y_ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.H = 0.5 * (self.H + self.H.T)
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        self.lb = _full(self.lb, n, -np.inf)
        self.ub = _full(self.ub, n, np.inf)
        if self.G is not None:
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
            m = self.G.shape[0]
            self.c = _full(self.c, m, 0.0)
            self.y_lb = _full(self.y_lb, m, -np.inf)
            self.y_ub = _full(self.y_ub, m, np.inf)

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All finite bounds as rows of ``A x <= b``."""
        n = self.n
        rows, rhs = [], []
        eye = np.eye(n)
        for i in range(n):
            if np.isfinite(self.ub[i]):
                rows.append(eye[i])
                rhs.append(self.ub[i])
            if np.isfinite(self.lb[i]):
                rows.append(-eye[i])
                rhs.append(-self.lb[i])
        if self.G is not None:
            for j in range(self.G.shape[0]):
                if np.isfinite(self.y_ub[j]):
                    rows.append(self.G[j])
                    rhs.append(self.y_ub[j] - self.c[j])
                if np.isfinite(self.y_lb[j]):
                    rows.append(-self.G[j])
                    rhs.append(self.c[j] - self.y_lb[j])
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        return np.array(rows), np.array(rhs)


@dataclass
class QpResult:
    x: np.ndarray
    status: QpStatus
    iterations: int = 0
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_residual: float = 0.0


def _full(v, n, default):
    if v is None:
        return np.full(n, default)
    v = np.asarray(v, dtype=float).ravel()
    return np.full(n, v[0]) if v.size == 1 and n != 1 else v


def _regularized(H: np.ndarray) -> np.ndarray:
    """``H`` itself when positive definite, otherwise ``H`` plus a tiny diagonal jitter."""
    try:
        np.linalg.cholesky(H)
        return H
    except np.linalg.LinAlgError:
        jitter = 1e-12 * (1.0 + float(np.max(np.abs(np.diag(H)))))
        return H + jitter * np.eye(H.shape[0])


def _eqp(H: np.ndarray, grad: np.ndarray, Aw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, k = H.shape[0], Aw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -grad), np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    sol = np.linalg.solve(K, np.concatenate([-grad, np.zeros(k)]))
    return sol[:n], sol[n:]


def _phase1(prob: QpProblem, A: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    res = linprog(np.zeros(prob.n), A_ub=A, b_ub=b, bounds=list(zip(prob.lb, prob.ub)), method="highs")
    return res.x if res.status == 0 else None


def kkt_report(prob: QpProblem, x: np.ndarray, mult: np.ndarray) -> float:
    """Max of stationarity, primal violation, dual violation and complementarity."""
    A, b = prob.inequalities()
    stat = prob.H @ x + prob.f + (A.T @ mult if A.size else 0.0)
    slack = A @ x - b if A.size else np.zeros(0)
    parts = [np.max(np.abs(stat), initial=0.0)]
    if slack.size:
        parts += [np.max(slack.clip(min=0.0)), np.max((-mult).clip(min=0.0)), np.max(np.abs(mult * slack))]
    return float(max(parts))


def qp_solve(prob: QpProblem, max_iter: Optional[int] = None) -> QpResult:
    n = prob.n
    if np.any(prob.lb > prob.ub) or (prob.G is not None and np.any(prob.y_lb > prob.y_ub)):
        return QpResult(np.full(n, np.nan), QpStatus.INFEASIBLE)
    H = _regularized(prob.H)
    A, b = prob.inequalities()
    x_unc = np.linalg.solve(H, -prob.f)
    if A.shape[0] == 0:
        return QpResult(x_unc, QpStatus.OPTIMAL, 0, np.zeros(0), kkt_report(prob, x_unc, np.zeros(0)))

    x = np.clip(x_unc, prob.lb, prob.ub)
    if np.any(A @ x - b > _FEAS_TOL):
        x = _phase1(prob, A, b)
        if x is None:
            return QpResult(np.full(n, np.nan), QpStatus.INFEASIBLE)

    m = A.shape[0]
    scale = 1.0 + np.abs(b)
    working: list[int] = []
    for i in np.flatnonzero(np.abs(A @ x - b) <= _FEAS_TOL * scale):
        trial = A[working + [i]]
        if np.linalg.matrix_rank(trial) == len(working) + 1 and len(working) < n:
            working.append(int(i))

    max_iter = max_iter or 10 * (n + m) + 20
    mult = np.zeros(m)
    for it in range(1, max_iter + 1):
        grad = H @ x + prob.f
        p, mu = _eqp(H, grad, A[working])
        if np.linalg.norm(p) <= _STEP_TOL * (1.0 + np.linalg.norm(x)):
            if mu.size == 0 or mu.min() >= -1e-12:
                mult = np.zeros(m)
                mult[working] = np.clip(mu, 0.0, None)
                return QpResult(x, QpStatus.OPTIMAL, it, mult, kkt_report(prob, x, mult))
            working.pop(int(np.argmin(mu)))
            continue
        alpha, blocking = 1.0, None
        Ap = A @ p
        for i in range(m):
            if i in working or Ap[i] <= 1e-14:
                continue
            a_i = (b[i] - A[i] @ x) / Ap[i]
            if a_i < alpha:
                alpha, blocking = max(a_i, 0.0), i
        x = x + alpha * p
        if blocking is not None:
            working.append(blocking)
    return QpResult(x, QpStatus.MAX_ITER, max_iter, mult, kkt_report(prob, x, mult))
