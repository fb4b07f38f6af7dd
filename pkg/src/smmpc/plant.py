"""SISO LTI plant: realization, simulation with output noise, data generation.

The plant is written as

    x[t+1] = A x[t] + B u[t]
    y[t]   = C x[t] + D u[t] + w[t],   w[t] ~ N(0, sigma2)

Random numbers come from numpy's PCG64 generator fed by a ``SeedSequence``
whose spawn key is ``(run_index, role_tag)``.  Every consumer of randomness
(offline input, offline output noise, online measurement noise) gets its own role
tag, so switching one noise source on or off never shifts another one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "TransferFunction",
    "StateSpace",
    "NoiseSpec",
    "DataRecord",
    "DriftSpec",
    "ROLE_TAGS",
    "make_rng",
    "tf_to_ss",
    "markov_params",
    "markov_params_tf",
    "simulate",
    "generate_data",
    "drift_plant",
    "PAPER_PLANT",
    "PAPER_DRIFT",
]

# Stable integer tags for the per-role substreams. Never renumber.
ROLE_TAGS = {
    "data_input": 0,
    "data_noise": 1,
    "online_noise": 2,
}


def make_rng(master_seed: int, run_index: int = 0, role: str = "data_input") -> np.random.Generator:
    """Independent generator for ``(master_seed, run_index, role)``."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_index), ROLE_TAGS[role]))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class TransferFunction:
    """Discrete-time SISO transfer function, coefficients in descending powers of z."""

    num: tuple[float, ...]
    den: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "num", tuple(float(c) for c in self.num))
        object.__setattr__(self, "den", tuple(float(c) for c in self.den))

    @property
    def order(self) -> int:
        return len(self.den) - 1


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, n)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def nx(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Output-noise variances: ``sigma2`` for offline data, ``sigma2_p`` online."""

    sigma2: float = 0.0
    sigma2_p: float = 0.0

    def __post_init__(self):
        if self.sigma2 < 0 or self.sigma2_p < 0:
            raise ValueError(f"noise variances must be nonnegative, got {self.sigma2}, {self.sigma2_p}")


@dataclass(frozen=True)
class DataRecord:
    u: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    noise: NoiseSpec
    seed: Optional[int] = None
    x_final: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if not (len(self.u) == len(self.y) == len(self.y0)):
            raise ValueError("u, y, y0 must have equal length")

    @property
    def N(self) -> int:
        return len(self.u)


@dataclass(frozen=True)
class DriftSpec:
    """Slow drift of one denominator coefficient.

    ``den[index] = sign * theta0 / (1 + t / tau)``. ``tau = inf`` means no drift.
    """

    index: int
    theta0: float
    tau: float
    sign: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def theta(self, t: float) -> float:
        if math.isinf(self.tau):
            return self.theta0
        return self.theta0 / (1.0 + t / self.tau)


def tf_to_ss(tf: TransferFunction) -> StateSpace:
    """Controllable canonical realization of a strictly proper, monic-denominator TF.

    The last row of ``A`` holds ``-den[n], ..., -den[1]``; ``B = e_n``;
    ``C`` holds the numerator coefficients in ascending powers of z.
    """
    den = np.trim_zeros(np.asarray(tf.den, dtype=float), "f")
    num = np.trim_zeros(np.asarray(tf.num, dtype=float), "f")
    if den.size < 2:
        raise ValueError("denominator must have degree >= 1")
    if den[0] != 1.0:
        raise ValueError(f"denominator must be monic, leading coefficient is {den[0]}")
    n = den.size - 1
    if num.size > n:
        raise ValueError(f"transfer function must be strictly proper: deg(num)={num.size - 1} >= deg(den)={n}")
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:0:-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    b = np.zeros(n)
    if num.size:
        b[n - num.size:] = num
    C = b[::-1].reshape(1, n)
    return StateSpace(A, B, C, 0.0)


def markov_params(ss: StateSpace, count: int) -> np.ndarray:
    """Impulse response ``h[0] = D, h[k] = C A^(k-1) B``."""
    h = np.empty(count)
    if count == 0:
        return h
    h[0] = ss.D
    v = ss.B[:, 0].copy()
    for k in range(1, count):
        h[k] = ss.C[0] @ v
        v = ss.A @ v
    return h


def markov_params_tf(tf: TransferFunction, count: int) -> np.ndarray:
    """Impulse response by long division of num/den in powers of 1/z.

    Works directly on the coefficients, without any realization.
    """
    den = np.asarray(tf.den, dtype=float)
    n = den.size - 1
    num = np.zeros(n + 1)
    coeffs = np.asarray(tf.num, dtype=float)
    num[n + 1 - coeffs.size:] = coeffs
    h = np.zeros(count)
    for k in range(count):
        acc = num[k] if k <= n else 0.0
        for j in range(1, min(k, n) + 1):
            acc -= den[j] * h[k - j]
        h[k] = acc / den[0]
    return h


def simulate(
    ss: StateSpace,
    u: Sequence[float],
    x0: Optional[np.ndarray] = None,
    noise: Optional[NoiseSpec] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate from ``x0``; returns ``(y, y0, x_final)``.

    Output noise uses ``noise.sigma2``. ``rng`` is required only when that is positive.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise ValueError("input sequence is empty")
    x = np.zeros(ss.nx) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.size != ss.nx:
        raise ValueError(f"x0 has length {x.size}, plant has {ss.nx} states")
    A, b, c = ss.A, ss.B[:, 0], ss.C[0]
    y0 = np.empty(u.size)
    for t, ut in enumerate(u):
        y0[t] = c @ x + ss.D * ut
        x = A @ x + b * ut
    sigma2 = 0.0 if noise is None else noise.sigma2
    if sigma2 > 0:
        if rng is None:
            raise ValueError("rng required for noisy simulation")
        y = y0 + math.sqrt(sigma2) * rng.standard_normal(u.size)
    else:
        y = y0.copy()
    return y, y0, x


def generate_data(ss: StateSpace, N: int, noise: NoiseSpec, seed: int, run_index: int = 0) -> DataRecord:
    """Offline experiment: unit i.i.d. Gaussian input from zero initial state."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    u = make_rng(seed, run_index, "data_input").standard_normal(N)
    y, y0, x = simulate(ss, u, None, noise, make_rng(seed, run_index, "data_noise"))
    return DataRecord(u=u, y=y, y0=y0, noise=noise, seed=seed, x_final=x)


def drift_plant(tf: TransferFunction, drift: Optional[DriftSpec], t: float) -> StateSpace:
    """Realization of ``tf`` with the drifting coefficient evaluated at time ``t``."""
    if drift is None:
        return tf_to_ss(tf)
    if not 1 <= drift.index < len(tf.den):
        raise ValueError(f"drift index {drift.index} outside denominator 1..{len(tf.den) - 1}")
    den = list(tf.den)
    den[drift.index] = drift.sign * drift.theta(t)
    return tf_to_ss(replace(tf, den=tuple(den)))


PAPER_PLANT = TransferFunction(
    num=(0.1159, 0.0, 0.1159 * 0.5, 0.0),
    den=(1.0, -2.2, 2.42, -1.87, 0.7225),
)
PAPER_DRIFT = DriftSpec(index=3, theta0=1.87, tau=1500.0, sign=-1.0)
