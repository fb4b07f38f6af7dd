"""Built-in presets for the six numerical examples and their pass/fail checks.

Every preset shares the tracking task ``r_t = 0.5 sin(pi t / 10)``, ``Q = R = 1``,
``Lp = 10``, ``L0 = 4``, ``N_c = 120`` and unconstrained inputs/outputs. Groups
inside one example share seeds, so their runs are paired.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from smmpc.harness import (
    ControllerConfig,
    DataConfig,
    McSummary,
    OnlineConfig,
    PlantConfig,
    RunResult,
    ScenarioConfig,
    attach_baseline,
    baseline_config,
    run_many,
    summarize,
)
from smmpc.plant import PAPER_DRIFT

__all__ = [
    "DEFAULT_RUNS",
    "DEEPC_LAMBDA_G_GRID",
    "ZETA_GRID",
    "GAMMA_GRID",
    "Criterion",
    "ExperimentResult",
    "base_config",
    "run_groups",
    "reproduce",
    "EXAMPLES",
]

DEFAULT_RUNS = {1: 10, 2: 50, 3: 200, 4: 50, 5: 50, 6: 50}
DEEPC_LAMBDA_G_GRID = tuple(float(v) for v in np.logspace(1, 3, 9))
DEEPC_LAMBDA_Y = 1000.0
ZETA_GRID = (0.0, 1.0, 10.0, 1e2, 1e3, 1e4)
GAMMA_GRID = (1.0, 0.9, 0.7, 0.5)


@dataclass
class Criterion:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    example: int
    seed: int
    runs: int
    groups: dict[str, list[RunResult]]
    summaries: dict[str, McSummary]
    criteria: list[Criterion]
    notes: dict = field(default_factory=dict)
    trajectory_groups: Optional[list[str]] = None

    def median(self, label: str, metric: str = "J_tot") -> float:
        return getattr(self.summaries[label], metric).median

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def base_config(seed: int = 0, **overrides) -> ScenarioConfig:
    """The shared tracking task with Example-1 data settings (N=50, sigma2=sigma2_p=0.1)."""
    cfg = ScenarioConfig(
        plant=PlantConfig(),
        data=DataConfig(N=50, sigma2=0.1),
        online=OnlineConfig(sigma2_p=0.1),
        controller=ControllerConfig(kind="smmpc", Q=1.0, R=1.0, L0=4, Lp=10),
        seed=seed,
    )
    return replace(cfg, **overrides)


def _ctrl(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(cfg, controller=replace(cfg.controller, **kw))


def _online(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(cfg, online=replace(cfg.online, **kw))


def run_groups(configs: dict[str, ScenarioConfig], runs: int, n_jobs: int = 1,
               baseline: Optional[ScenarioConfig] = None) -> dict[str, list[RunResult]]:
    """Run every labelled config for ``runs`` paired runs; attach ideal-MPC deviations."""
    labelled = {k: replace(v, label=k) for k, v in configs.items()}
    if baseline is not None and "mpc" not in labelled:
        labelled["mpc"] = replace(baseline_config(baseline), label="mpc")
    jobs = [(cfg, i) for cfg in labelled.values() for i in range(runs)]
    flat = run_many(jobs, n_jobs)
    groups = {k: flat[j * runs:(j + 1) * runs] for j, k in enumerate(labelled)}
    if "mpc" in groups:
        for k, g in groups.items():
            attach_baseline(g, groups["mpc"])
    return groups


def _summaries(groups) -> dict[str, McSummary]:
    return {k: summarize(k, v) for k, v in groups.items()}


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def example1(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = _ctrl(base_config(seed), track_discrepancy=True)
    groups = run_groups({"smmpc": cfg}, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    E = summ["smmpc"]
    crit = [
        Criterion("median E < 0.05", E.E.median < 0.05, f"median E = {_fmt(E.E.median)} over {E.E.n} steps"),
        Criterion(">= 80% of steps with E < 0.10", E.E_below_10pct >= 0.80, f"fraction = {_fmt(E.E_below_10pct)}"),
    ]
    return ExperimentResult(1, seed, runs, groups, summ, crit)


def example2(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = base_config(seed)
    configs = {"smmpc": cfg}
    for lg in DEEPC_LAMBDA_G_GRID:
        configs[f"deepc_lg={lg:.4g}"] = _ctrl(cfg, kind="deepc", lambda_g=lg, lambda_y=DEEPC_LAMBDA_Y)
    groups = run_groups(configs, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    deepc = [k for k in groups if k.startswith("deepc")]
    oracle = min(deepc, key=lambda k: summ[k].J_tot.median)
    m_smm, m_dpc = summ["smmpc"].J_tot.median, summ[oracle].J_tot.median
    crit = [Criterion(
        "median J_tot SMM-PC < oracle-tuned DeePC",
        m_smm < m_dpc,
        f"SMM-PC {_fmt(m_smm)} vs {oracle} {_fmt(m_dpc)}",
    )]
    return ExperimentResult(2, seed, runs, groups, summ, crit, notes={"deepc_oracle": oracle},
                            trajectory_groups=["smmpc", oracle, "mpc"])


def _noisy(seed: int) -> ScenarioConfig:
    return base_config(seed, data=DataConfig(N=100, sigma2=1.0), online=OnlineConfig(sigma2_p=1.0))


def example3(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = _noisy(seed)
    groups = run_groups({"fixed": cfg, "adaptive": _online(cfg, adapt=True, gamma=1.0)}, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    a, f, m = (summ[k].J_tot.median for k in ("adaptive", "fixed", "mpc"))
    crit = [
        Criterion("median J_tot adaptive < fixed", a < f, f"adaptive {_fmt(a)} vs fixed {_fmt(f)}"),
        Criterion("median J_tot adaptive > ideal MPC", a > m, f"adaptive {_fmt(a)} vs MPC {_fmt(m)}"),
    ]
    return ExperimentResult(3, seed, runs, groups, summ, crit)


def example4(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = base_config(seed, plant=PlantConfig(drift=PAPER_DRIFT), data=DataConfig(N=50, sigma2=0.01),
                      online=OnlineConfig(sigma2_p=0.01))
    configs = {"fixed": cfg}
    for g in GAMMA_GRID:
        configs[f"gamma={g:g}"] = _online(cfg, adapt=True, gamma=g)
    groups = run_groups(configs, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    m = {g: summ[f"gamma={g:g}"].J_tot.median for g in GAMMA_GRID}
    crit = [Criterion(
        "median J_tot at gamma=0.9 below gamma=1 and gamma=0.5",
        m[0.9] < m[1.0] and m[0.9] < m[0.5],
        ", ".join(f"gamma={g:g}: {_fmt(v)}" for g, v in m.items()),
    )]
    return ExperimentResult(4, seed, runs, groups, summ, crit)


def example5(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = _noisy(seed)
    configs = {}
    for L0 in (4, 10):
        configs[f"L0={L0},fixed"] = _ctrl(cfg, L0=L0)
        configs[f"L0={L0},adaptive"] = _online(_ctrl(cfg, L0=L0), adapt=True, gamma=1.0)
    configs["impulse"] = _ctrl(cfg, kind="impulse")
    groups = run_groups(configs, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    a10, a4 = summ["L0=10,adaptive"].J_tot.median, summ["L0=4,adaptive"].J_tot.median
    f4, imp = summ["L0=4,fixed"].J_tot.median, summ["impulse"].J_tot.median
    crit = [
        Criterion("median J_tot L0=10 adaptive < L0=4 adaptive", a10 < a4, f"{_fmt(a10)} vs {_fmt(a4)}"),
        Criterion("median J_tot L0=4 fixed >= impulse MPC", f4 >= imp, f"{_fmt(f4)} vs {_fmt(imp)}"),
    ]
    return ExperimentResult(5, seed, runs, groups, summ, crit)


def _nonincreasing(values, rel_slack: float = 0.0, allowed: int = 0) -> tuple[bool, int]:
    violations = 0
    for a, b in zip(values, values[1:]):
        if b > a:
            if b > a * (1 + rel_slack) or violations >= allowed:
                return False, violations + 1
            violations += 1
    return True, violations


def example6(runs: int, seed: int, n_jobs: int) -> ExperimentResult:
    cfg = base_config(seed)
    configs = {f"zeta={z:g}": _ctrl(cfg, zeta=z) for z in ZETA_GRID}
    groups = run_groups(configs, runs, n_jobs, baseline=cfg)
    summ = _summaries(groups)
    labels = [f"zeta={z:g}" for z in ZETA_GRID]
    g2 = [summ[k].mean_g_norm2.median for k in labels]
    ju = [summ[k].J_tot_u.median for k in labels]
    jt = [summ[k].J_tot.median for k in labels]
    ok_g, _ = _nonincreasing(g2, rel_slack=0.02, allowed=1)
    ok_u, _ = _nonincreasing(ju)
    interior = min(jt[1:-1])
    crit = [
        Criterion("median mean |g|^2 nonincreasing in zeta (one <=2% slip allowed)", ok_g,
                  ", ".join(_fmt(v) for v in g2)),
        Criterion("median J_tot^u nonincreasing in zeta", ok_u, ", ".join(_fmt(v) for v in ju)),
        Criterion("median J_tot non-monotone (interior zeta beats both ends)",
                  interior < jt[0] and interior < jt[-1], ", ".join(_fmt(v) for v in jt)),
    ]
    return ExperimentResult(6, seed, runs, groups, summ, crit)


EXAMPLES: dict[int, Callable[[int, int, int], ExperimentResult]] = {
    1: example1, 2: example2, 3: example3, 4: example4, 5: example5, 6: example6,
}


def reproduce(example: int, runs: Optional[int] = None, seed: int = 0, n_jobs: int = 1) -> ExperimentResult:
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example}; expected one of {sorted(EXAMPLES)}")
    runs = DEFAULT_RUNS[example] if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be >= 1")
    return EXAMPLES[example](runs, seed, n_jobs)
