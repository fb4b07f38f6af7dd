"""Hankel signal matrices col(U, Y): construction, partitions, SVD compression,
online column updates with a forgetting factor, and CSV round-trips."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from smmpc.plant import DataRecord, NoiseSpec

__all__ = [
    "SignalMatrix",
    "TrajectoryWindow",
    "hankel",
    "build",
    "pe_order",
    "numerical_rank",
    "compress",
    "append_online",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_record_csv",
    "read_record_csv",
]


@dataclass(frozen=True)
class SignalMatrix:
    """Input and output Hankel blocks sharing the column space.

    ``U`` and ``Y`` are ``L x M`` with ``L = L0 + Lp``. The first ``L0`` rows
    form the past block, the last ``Lp`` rows the future block.
    """

    U: np.ndarray
    Y: np.ndarray
    L0: int
    Lp: int
    gamma: float = 1.0
    compressed: bool = False

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if U.shape != Y.shape:
            raise ValueError(f"U {U.shape} and Y {Y.shape} must have the same shape")
        if U.shape[0] != self.L0 + self.Lp:
            raise ValueError(f"row count {U.shape[0]} != L0 + Lp = {self.L0 + self.Lp}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        U.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)

    @property
    def L(self) -> int:
        return self.L0 + self.Lp

    @property
    def M(self) -> int:
        return self.U.shape[1]

    @property
    def Up(self) -> np.ndarray:
        return self.U[: self.L0]

    @property
    def Uf(self) -> np.ndarray:
        return self.U[self.L0:]

    @property
    def Yp(self) -> np.ndarray:
        return self.Y[: self.L0]

    @property
    def Yf(self) -> np.ndarray:
        return self.Y[self.L0:]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.U, self.Y])

    def gram(self) -> np.ndarray:
        S = self.stacked
        return S @ S.T


@dataclass(frozen=True)
class TrajectoryWindow:
    u_ini: np.ndarray
    y_ini: np.ndarray
    r: np.ndarray

    def check(self, sm: SignalMatrix) -> None:
        if len(self.u_ini) != sm.L0 or len(self.y_ini) != sm.L0 or len(self.r) != sm.Lp:
            raise ValueError(
                f"window lengths ({len(self.u_ini)}, {len(self.y_ini)}, {len(self.r)}) "
                f"do not match partition (L0={sm.L0}, Lp={sm.Lp})"
            )


def hankel(seq: Sequence[float], rows: int) -> np.ndarray:
    """``rows x (len(seq) - rows + 1)`` matrix with ``H[i, j] = seq[i + j]``."""
    seq = np.asarray(seq, dtype=float).ravel()
    if rows < 1 or rows > seq.size:
        raise ValueError(f"cannot build {rows}-row Hankel matrix from {seq.size} samples")
    cols = seq.size - rows + 1
    return np.lib.stride_tricks.sliding_window_view(seq, cols)[:rows].copy()


def build(data: DataRecord, L0: int, Lp: int) -> SignalMatrix:
    L = L0 + Lp
    if data.N < L:
        raise ValueError(f"data length {data.N} shorter than L0 + Lp = {L}")
    return SignalMatrix(hankel(data.u, L), hankel(data.y, L), L0, Lp)


def _rank_tol(s: np.ndarray, shape: tuple[int, int]) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * np.finfo(float).eps * s[0]


def numerical_rank(A: np.ndarray) -> int:
    """Singular values at or below ``max(dim) * eps * s_max`` count as zero."""
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _rank_tol(s, A.shape)))


def pe_order(u: Sequence[float], order: int) -> bool:
    """True iff ``u`` is persistently exciting of the given order."""
    u = np.asarray(u, dtype=float).ravel()
    if order < 1 or u.size < order:
        return False
    H = hankel(u, order)
    if H.shape[1] < order:
        return False
    return numerical_rank(H) == order


def compress(sm: SignalMatrix) -> SignalMatrix:
    """Replace col(U, Y) by ``W S`` (its left singular vectors scaled by the
    singular values), a square ``2L x 2L`` matrix with the same Gram matrix.

    When ``M < 2L`` there is nothing to gain; the input is returned with
    ``compressed=False`` and a warning.
    """
    L = sm.L
    if sm.M < 2 * L:
        warnings.warn(f"compression needs M >= 2L ({sm.M} < {2 * L}); matrix left unchanged", stacklevel=2)
        return sm
    W, s, _ = np.linalg.svd(sm.stacked, full_matrices=False)
    WS = W * s
    return replace(sm, U=WS[:L], Y=WS[L:], compressed=True)


def append_online(
    sm: SignalMatrix,
    u_window: Sequence[float],
    y_window: Sequence[float],
    gamma: float | None = None,
    recompress: bool = True,
) -> SignalMatrix:
    """Scale existing columns by ``gamma`` and append the newest length-L window.

    The result is recompressed to ``2L`` columns when the input was already
    compressed or the column count would exceed ``2L``. ``recompress=False``
    returns the raw extended matrix instead.
    """
    gamma = sm.gamma if gamma is None else gamma
    u_window = np.asarray(u_window, dtype=float).ravel()
    y_window = np.asarray(y_window, dtype=float).ravel()
    if u_window.size != sm.L or y_window.size != sm.L:
        raise ValueError(f"online window must have length L={sm.L}, got {u_window.size}, {y_window.size}")
    U = np.column_stack([gamma * sm.U, u_window])
    Y = np.column_stack([gamma * sm.Y, y_window])
    out = SignalMatrix(U, Y, sm.L0, sm.Lp, gamma=gamma, compressed=False)
    if recompress and (sm.compressed or out.M > 2 * sm.L):
        out = compress(out)
    return out


def write_matrix_csv(path: str | Path, A: np.ndarray) -> None:
    """Row-major dump with a header row of column indices."""
    A = np.atleast_2d(A)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(A.shape[1]))
        for row in A:
            w.writerow(repr(float(v)) for v in row)


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def write_record_csv(path: str | Path, rec: DataRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u", "y", "y0"])
        for t in range(rec.N):
            w.writerow([t, repr(float(rec.u[t])), repr(float(rec.y[t])), repr(float(rec.y0[t]))])


def read_record_csv(path: str | Path, noise: NoiseSpec | None = None, seed: int | None = None) -> DataRecord:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    u = np.array([float(r["u"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    y0 = np.array([float(r["y0"]) for r in rows])
    return DataRecord(u=u, y=y, y0=y0, noise=noise or NoiseSpec(), seed=seed)
