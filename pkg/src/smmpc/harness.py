"""Closed-loop simulation, Monte Carlo aggregation and result serialization.

One run is fully determined by ``(ScenarioConfig, run_index)``: the offline
data set, its noise and the online measurement noise each come from their own
substream of ``(seed, run_index)``. Controllers compared at the same seed and
run index therefore see identical data and identical noise realizations.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from smmpc.controllers import (
    BoxConstraints,
    Controller,
    CostSpec,
    DeePC,
    IdealMpc,
    ImpulseMpc,
    SmmPc,
    StepContext,
)
from smmpc.plant import (
    PAPER_PLANT,
    DriftSpec,
    NoiseSpec,
    TransferFunction,
    drift_plant,
    generate_data,
    make_rng,
)
from smmpc.qp import QpStatus
from smmpc.signal_matrix import build

__all__ = [
    "ReferenceSpec",
    "PlantConfig",
    "DataConfig",
    "OnlineConfig",
    "ControllerConfig",
    "TaskConfig",
    "ScenarioConfig",
    "RunResult",
    "Stats",
    "McSummary",
    "reference",
    "make_controller",
    "closed_loop",
    "run_many",
    "monte_carlo",
    "summarize",
    "deviation_from_baseline",
    "attach_baseline",
    "CSV_COLUMNS",
    "write_trajectories_csv",
    "write_runs_csv",
    "write_envelopes_csv",
]

log = logging.getLogger(__name__)

CONTROLLER_KINDS = ("smmpc", "deepc", "mpc", "impulse")


@dataclass(frozen=True)
class ReferenceSpec:
    """``sine``: ``amplitude * sin(2 pi t / period)``; ``constant``: ``value``;
    ``step``: 0 before ``step_time`` and ``value`` from then on."""

    kind: str = "sine"
    amplitude: float = 0.5
    period: float = 20.0
    value: float = 0.0
    step_time: int = 0

    def __post_init__(self):
        if self.kind not in ("sine", "constant", "step"):
            raise ValueError(f"unknown reference kind {self.kind!r}")


def reference(spec: ReferenceSpec, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=float)
    if spec.kind == "sine":
        r = spec.amplitude * np.sin(2.0 * np.pi * t / spec.period)
    elif spec.kind == "constant":
        r = np.full(t.shape, spec.value)
    else:
        r = np.where(t >= spec.step_time, spec.value, 0.0)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class PlantConfig:
    num: tuple[float, ...] = PAPER_PLANT.num
    den: tuple[float, ...] = PAPER_PLANT.den
    drift: Optional[DriftSpec] = None

    @property
    def tf(self) -> TransferFunction:
        return TransferFunction(self.num, self.den)


@dataclass(frozen=True)
class DataConfig:
    N: int = 50
    sigma2: float = 0.1


@dataclass(frozen=True)
class OnlineConfig:
    sigma2_p: float = 0.1
    adapt: bool = False
    gamma: float = 1.0
    compress: bool = False


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "smmpc"
    Q: float = 1.0
    R: float = 1.0
    L0: int = 4
    Lp: int = 10
    zeta: float = 0.0
    lambda_g: float = 100.0
    lambda_y: float = 1000.0
    u_min: float = -math.inf
    u_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf
    track_discrepancy: bool = False

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}; expected one of {CONTROLLER_KINDS}")


@dataclass(frozen=True)
class TaskConfig:
    """``initial="offline_tail"`` continues plant state and past window from the
    end of the offline experiment; ``"rest"`` starts from zero state with zero
    past inputs and past outputs that are pure measurement noise."""

    N_c: int = 120
    reference: ReferenceSpec = ReferenceSpec()
    initial: str = "offline_tail"

    def __post_init__(self):
        if self.initial not in ("offline_tail", "rest"):
            raise ValueError(f"unknown initial condition {self.initial!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantConfig = PlantConfig()
    data: DataConfig = DataConfig()
    online: OnlineConfig = OnlineConfig()
    controller: ControllerConfig = ControllerConfig()
    task: TaskConfig = TaskConfig()
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        c = self.controller
        if c.L0 < 1 or c.Lp < 1:
            raise ValueError("L0 and Lp must be positive")
        if self.data.N < c.L0 + c.Lp:
            raise ValueError(f"N={self.data.N} < L0 + Lp = {c.L0 + c.Lp}")

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.data.sigma2, self.online.sigma2_p)

    @property
    def cost(self) -> CostSpec:
        c = self.controller
        return CostSpec(Q=c.Q, R=c.R, Lp=c.Lp, N_c=self.task.N_c, zeta=c.zeta)

    @property
    def constraints(self) -> BoxConstraints:
        c = self.controller
        return BoxConstraints(c.u_min, c.u_max, c.y_min, c.y_max)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    label: str
    seed: int
    run_index: int
    r: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    J: np.ndarray
    E: np.ndarray
    g_norm2: np.ndarray
    Q: float = 1.0
    R: float = 1.0
    dev: Optional[np.ndarray] = None
    qp_failures: int = 0
    failed: bool = False
    error: str = ""

    @property
    def N_c(self) -> int:
        return len(self.u)

    @property
    def J_tot(self) -> float:
        return float(np.sum(self.J))

    @property
    def J_tot_u(self) -> float:
        return float(self.R * np.sum(self.u**2))

    @property
    def mean_g_norm2(self) -> float:
        return float(np.nanmean(self.g_norm2)) if np.any(np.isfinite(self.g_norm2)) else math.nan

    @property
    def mean_dev(self) -> float:
        return math.nan if self.dev is None else float(np.mean(self.dev))

    def recomputed_J(self) -> np.ndarray:
        return self.Q * (self.y0 - self.r) ** 2 + self.R * self.u**2

    def metrics(self) -> dict:
        return {
            "J_tot": self.J_tot,
            "J_tot_u": self.J_tot_u,
            "mean_g_norm2": self.mean_g_norm2,
            "median_E": float(np.nanmedian(self.E)) if np.any(np.isfinite(self.E)) else math.nan,
            "mean_dev": self.mean_dev,
        }


def make_controller(cfg: ScenarioConfig, sm, noise: NoiseSpec) -> Controller:
    c = cfg.controller
    cost, cons = cfg.cost, cfg.constraints
    if c.kind == "smmpc":
        return SmmPc(sm, noise, cost, cons, adaptive=cfg.online.adapt, gamma=cfg.online.gamma,
                     compressed=cfg.online.compress, track_discrepancy=c.track_discrepancy)
    if c.kind == "deepc":
        return DeePC(sm, cost, cons, c.lambda_g, c.lambda_y)
    if c.kind == "mpc":
        return IdealMpc(cost, cons)
    return ImpulseMpc.from_signal_matrix(sm, noise, cost, cons)


def closed_loop(cfg: ScenarioConfig, run_index: int = 0) -> RunResult:
    """Simulate one receding-horizon task.

    The plant state and the past window at t = 0 continue from the end of the
    offline experiment. Stage costs use the noise-free output.
    """
    c, N_c = cfg.controller, cfg.task.N_c
    tf, drift = cfg.plant.tf, cfg.plant.drift
    noise = cfg.noise
    data = generate_data(drift_plant(tf, drift, 0.0), cfg.data.N, noise, cfg.seed, run_index)
    online_rng = make_rng(cfg.seed, run_index, "online_noise")
    w_online = math.sqrt(noise.sigma2_p) * online_rng.standard_normal(N_c)
    r_full = reference(cfg.task.reference, np.arange(N_c + c.Lp))

    if cfg.task.initial == "rest":
        u_hist = [0.0] * data.N
        y_hist = list(math.sqrt(noise.sigma2_p) * online_rng.standard_normal(data.N))
        x = np.zeros(len(cfg.plant.den) - 1)
    else:
        u_hist = list(data.u)
        y_hist = list(data.y)
        x = np.array(data.x_final, dtype=float)
    u = np.full(N_c, np.nan)
    y = np.full(N_c, np.nan)
    y0 = np.full(N_c, np.nan)
    E = np.full(N_c, np.nan)
    g2 = np.full(N_c, np.nan)
    result = RunResult(cfg.label, cfg.seed, run_index, r_full[:N_c], u, y, y0, np.full(N_c, np.nan), E, g2,
                       Q=c.Q, R=c.R)
    try:
        ctrl = make_controller(cfg, build(data, c.L0, c.Lp), noise)
        ss = drift_plant(tf, drift, 0.0)
        for t in range(N_c):
            if drift is not None and t > 0:
                ss = drift_plant(tf, drift, float(t))
            ctx = StepContext(t, np.asarray(u_hist), np.asarray(y_hist), r_full[t:t + c.Lp], x.copy(), ss)
            step = ctrl.step(ctx)
            if step.status != QpStatus.OPTIMAL:
                result.qp_failures += 1
            u[t] = step.u
            y0[t] = ss.C[0] @ x + ss.D * step.u
            y[t] = y0[t] + w_online[t]
            x = ss.A @ x + ss.B[:, 0] * step.u
            g2[t] = step.g_norm2
            E[t] = step.info.get("E", math.nan)
            u_hist.append(u[t])
            y_hist.append(y[t])
            if ctrl.adaptive and t >= c.L0 + c.Lp - 1:
                L = c.L0 + c.Lp
                ctrl.observe(u[t - L + 1:t + 1], y[t - L + 1:t + 1])
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        log.warning("run %s/%d failed: %s", cfg.label, run_index, exc)
        result.failed = True
        result.error = f"{type(exc).__name__}: {exc}"
    result.J = result.recomputed_J()
    return result


def baseline_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Ideal-MPC twin of ``cfg`` sharing its seed streams."""
    ctrl = replace(cfg.controller, kind="mpc", track_discrepancy=False)
    return replace(cfg, controller=ctrl, online=replace(cfg.online, adapt=False), label="mpc")


def deviation_from_baseline(run: RunResult, baseline: RunResult) -> np.ndarray:
    """Per-step ``|y0 - y0_baseline|``."""
    if run.N_c != baseline.N_c:
        raise ValueError(f"length mismatch: {run.N_c} vs {baseline.N_c}")
    return np.abs(run.y0 - baseline.y0)


def attach_baseline(runs: Sequence[RunResult], baselines: Sequence[RunResult]) -> None:
    for run, base in zip(runs, baselines):
        run.dev = deviation_from_baseline(run, base)


def _run_job(args) -> RunResult:
    cfg, idx = args
    return closed_loop(cfg, idx)


def run_many(jobs: Iterable[tuple[ScenarioConfig, int]], n_jobs: int = 1) -> list[RunResult]:
    """Run ``closed_loop`` over ``(cfg, run_index)`` pairs; output order equals input order."""
    jobs = list(jobs)
    if n_jobs <= 1 or len(jobs) <= 1:
        return [closed_loop(cfg, i) for cfg, i in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


@dataclass
class Stats:
    median: float
    q1: float
    q3: float
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values: Iterable[float]) -> "Stats":
        v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
        if v.size == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, math.nan, 0)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return cls(float(med), float(q1), float(q3), float(v.mean()), float(v.std()), int(v.size))


@dataclass
class McSummary:
    label: str
    n_runs: int
    n_completed: int
    n_failed: int
    J_tot: Stats
    J_tot_u: Stats
    mean_g_norm2: Stats
    E: Stats
    E_below_10pct: float
    mean_dev: Stats
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(label: str, runs: Sequence[RunResult]) -> McSummary:
    ok = [r for r in runs if not r.failed]
    E_all = np.concatenate([r.E for r in ok]) if ok else np.zeros(0)
    E_all = E_all[np.isfinite(E_all)]
    return McSummary(
        label=label,
        n_runs=len(runs),
        n_completed=len(ok),
        n_failed=len(runs) - len(ok),
        J_tot=Stats.of(r.J_tot for r in ok),
        J_tot_u=Stats.of(r.J_tot_u for r in ok),
        mean_g_norm2=Stats.of(r.mean_g_norm2 for r in ok),
        E=Stats.of(E_all),
        E_below_10pct=float(np.mean(E_all < 0.10)) if E_all.size else math.nan,
        mean_dev=Stats.of(r.mean_dev for r in ok),
        failures=[f"{r.run_index}: {r.error}" for r in runs if r.failed],
    )


def monte_carlo(cfg: ScenarioConfig, n_runs: int, n_jobs: int = 1, baseline: bool = True
                ) -> tuple[McSummary, list[RunResult]]:
    """``n_runs`` seeded runs of ``cfg`` (run indices ``0..n_runs-1``)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(cfg, i) for i in range(n_runs)]
    if baseline:
        jobs += [(baseline_config(cfg), i) for i in range(n_runs)]
    results = run_many(jobs, n_jobs)
    runs = results[:n_runs]
    if baseline:
        attach_baseline(runs, results[n_runs:])
    return summarize(cfg.label, runs), runs


CSV_COLUMNS = ("t", "r", "u", "y", "y0", "J_t", "E", "dev")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectories_csv(path_or_buf, runs: Sequence[RunResult]) -> None:
    """One row per time step; ``label`` and ``run`` key columns precede the
    documented ``t, r, u, y, y0, J_t, E, dev`` order."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "run") + CSV_COLUMNS)
        for run in runs:
            dev = run.dev if run.dev is not None else np.full(run.N_c, np.nan)
            for t in range(run.N_c):
                w.writerow([run.label, run.run_index, t] + [_fmt(v) for v in
                           (run.r[t], run.u[t], run.y[t], run.y0[t], run.J[t], run.E[t], dev[t])])
    finally:
        if own:
            fh.close()


def trajectories_csv_text(runs: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    write_trajectories_csv(buf, runs)
    return buf.getvalue()


RUN_COLUMNS = ("label", "run", "failed", "J_tot", "J_tot_u", "mean_g_norm2", "median_E", "mean_dev")


def write_runs_csv(path: str | Path, runs: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for run in runs:
            m = run.metrics()
            w.writerow([run.label, run.run_index, int(run.failed)] + [_fmt(m[k]) for k in RUN_COLUMNS[3:]])


ENVELOPE_COLUMNS = ("label", "t", "r", "u_mean", "u_std", "y0_mean", "y0_std", "J_median", "J_q1", "J_q3", "dev_median")


def write_envelopes_csv(path: str | Path, groups: dict[str, Sequence[RunResult]]) -> None:
    """Per-step cross-run statistics (mean +- one std of u and y0, stage-cost quartiles)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENVELOPE_COLUMNS)
        for label, runs in groups.items():
            ok = [r for r in runs if not r.failed]
            if not ok:
                continue
            U = np.array([r.u for r in ok])
            Y0 = np.array([r.y0 for r in ok])
            J = np.array([r.J for r in ok])
            D = np.array([r.dev if r.dev is not None else np.full(r.N_c, np.nan) for r in ok])
            q1, med, q3 = np.percentile(J, [25, 50, 75], axis=0)
            dev_med = np.nanmedian(D, axis=0) if np.any(np.isfinite(D)) else np.full(U.shape[1], np.nan)
            for t in range(U.shape[1]):
                w.writerow([label, t] + [_fmt(v) for v in (ok[0].r[t], U[:, t].mean(), U[:, t].std(),
                           Y0[:, t].mean(), Y0[:, t].std(), med[t], q1[t], q3[t], dev_med[t])])


def write_summary_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, QpStatus):
        return obj.value
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
