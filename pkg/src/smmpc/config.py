"""TOML experiment files.

Sections and keys (all optional, defaults in brackets):

    [plant]            num, den [the fourth-order example plant]
    [plant.drift]      index, theta0, tau, sign [no drift]
    [data]             N [50], sigma2 [0.1]
    [online]           sigma2_p [0.1], adapt [false], gamma [1.0], compress [false]
    [controller]       kind [smmpc|deepc|mpc|impulse], Q, R, L0, Lp, zeta,
                       lambda_g, lambda_y, u_min, u_max, y_min, y_max, track_discrepancy
    [task]             N_c [120], initial [offline_tail|rest], seed [0], runs [1], label
    [task.reference]   kind [sine|constant|step], amplitude, period, value, step_time
    [sweep]            zeta, gamma, lambda_g, L0 -- lists; the cartesian product is run

Unknown sections or keys and wrongly typed values are rejected before anything runs.
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from smmpc.harness import (
    ControllerConfig,
    DataConfig,
    OnlineConfig,
    PlantConfig,
    ReferenceSpec,
    ScenarioConfig,
    TaskConfig,
)
from smmpc.plant import DriftSpec

__all__ = ["ConfigError", "ExperimentFile", "load", "loads", "dumps", "SWEEP_KEYS"]

_NUM = (int, float)
_SCHEMA: dict[str, dict[str, Any]] = {
    "plant": {"num": list, "den": list, "drift": dict},
    "plant.drift": {"index": int, "theta0": _NUM, "tau": _NUM, "sign": _NUM},
    "data": {"N": int, "sigma2": _NUM},
    "online": {"sigma2_p": _NUM, "adapt": bool, "gamma": _NUM, "compress": bool},
    "controller": {
        "kind": str, "Q": _NUM, "R": _NUM, "L0": int, "Lp": int, "zeta": _NUM,
        "lambda_g": _NUM, "lambda_y": _NUM, "u_min": _NUM, "u_max": _NUM,
        "y_min": _NUM, "y_max": _NUM, "track_discrepancy": bool,
    },
    "task": {"N_c": int, "initial": str, "seed": int, "runs": int, "label": str, "reference": dict},
    "task.reference": {"kind": str, "amplitude": _NUM, "period": _NUM, "value": _NUM, "step_time": int},
    "sweep": {"zeta": list, "gamma": list, "lambda_g": list, "L0": list},
}
SWEEP_KEYS = ("zeta", "gamma", "lambda_g", "L0")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid experiment file:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class ExperimentFile:
    scenario: ScenarioConfig
    runs: int = 1
    sweep: dict = field(default_factory=dict)

    def scenarios(self) -> list[ScenarioConfig]:
        """Expand the sweep grid; labels name the swept values."""
        base = self.scenario
        keys = [k for k in SWEEP_KEYS if self.sweep.get(k)]
        if not keys:
            return [replace(base, label=base.label or base.controller.kind)]
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            cfg = base
            parts = []
            for k, v in zip(keys, combo):
                if k == "gamma":
                    cfg = replace(cfg, online=replace(cfg.online, gamma=float(v), adapt=True))
                else:
                    cfg = replace(cfg, controller=replace(cfg.controller, **{k: int(v) if k == "L0" else float(v)}))
                parts.append(f"{k}={v:g}")
            prefix = f"{base.label}:" if base.label else ""
            out.append(replace(cfg, label=prefix + ",".join(parts)))
        return out

    def with_seed(self, seed: int) -> "ExperimentFile":
        return replace(self, scenario=replace(self.scenario, seed=int(seed)))


def _check(doc: dict, problems: list[str]) -> None:
    for sect, body in doc.items():
        if sect not in _SCHEMA:
            problems.append(f"{sect}: unknown section")
            continue
        if not isinstance(body, dict):
            problems.append(f"{sect}: expected a table")
            continue
        _check_table(sect, body, problems)


def _check_table(path: str, body: dict, problems: list[str]) -> None:
    schema = _SCHEMA[path]
    for key, val in body.items():
        kp = f"{path}.{key}"
        if key not in schema:
            problems.append(f"{kp}: unknown key")
            continue
        want = schema[key]
        if want is dict:
            if not isinstance(val, dict):
                problems.append(f"{kp}: expected a table")
            else:
                _check_table(kp, val, problems)
            continue
        if isinstance(val, bool) and want is not bool:
            problems.append(f"{kp}: expected {_tname(want)}, got bool")
        elif not isinstance(val, want):
            problems.append(f"{kp}: expected {_tname(want)}, got {type(val).__name__}")
        elif want is list:
            for i, item in enumerate(val):
                if isinstance(item, bool) or not isinstance(item, _NUM):
                    problems.append(f"{kp}[{i}]: expected number, got {type(item).__name__}")


def _tname(t) -> str:
    return "number" if t == _NUM else t.__name__


def loads(text: str) -> ExperimentFile:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"<toml>: {exc}"]) from exc
    problems: list[str] = []
    _check(doc, problems)
    if problems:
        raise ConfigError(problems)
    try:
        return _build(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError([str(exc)]) from exc


def load(path: str | Path) -> ExperimentFile:
    return loads(Path(path).read_text())


def _build(doc: dict) -> ExperimentFile:
    plant_d = dict(doc.get("plant", {}))
    drift_d = plant_d.pop("drift", None)
    plant = PlantConfig(**{k: tuple(float(x) for x in v) for k, v in plant_d.items()},
                        drift=DriftSpec(**drift_d) if drift_d is not None else None)
    task_d = dict(doc.get("task", {}))
    ref = ReferenceSpec(**task_d.pop("reference", {}))
    seed = task_d.pop("seed", 0)
    runs = task_d.pop("runs", 1)
    label = task_d.pop("label", "")
    if runs < 1:
        raise ValueError("task.runs: must be >= 1")
    scenario = ScenarioConfig(
        plant=plant,
        data=DataConfig(**doc.get("data", {})),
        online=OnlineConfig(**doc.get("online", {})),
        controller=ControllerConfig(**doc.get("controller", {})),
        task=TaskConfig(reference=ref, **task_d),
        seed=seed,
        label=label,
    )
    sweep = {k: list(v) for k, v in doc.get("sweep", {}).items()}
    return ExperimentFile(scenario, runs, sweep)


def dumps(exp: ExperimentFile) -> str:
    """Serialize to TOML; ``loads(dumps(x)) == x``."""
    s = exp.scenario
    plant: dict[str, Any] = {"num": list(s.plant.num), "den": list(s.plant.den)}
    if s.plant.drift is not None:
        plant["drift"] = asdict(s.plant.drift)
    task = {"N_c": s.task.N_c, "initial": s.task.initial, "seed": s.seed, "runs": exp.runs,
            "label": s.label, "reference": asdict(s.task.reference)}
    doc = {
        "plant": plant,
        "data": asdict(s.data),
        "online": asdict(s.online),
        "controller": asdict(s.controller),
        "task": task,
    }
    if exp.sweep:
        doc["sweep"] = {k: list(v) for k, v in exp.sweep.items()}
    return tomli_w.dumps(doc)
