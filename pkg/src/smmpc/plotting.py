"""Renders a results directory to figures. Reads the CSV/JSON written by
:mod:`smmpc.report` and does no simulation of its own.

SVG output is byte-stable: fixed hash salt, no timestamp metadata.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["STYLE", "render", "PlotInputError"]

STYLE = {
    "figure.figsize": (7.0, 4.2),
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "smmpc",
    "svg.fonttype": "none",
    "path.simplify": False,
}


class PlotInputError(FileNotFoundError):
    pass


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path, fmt: str) -> Path:
    meta = {"Date": None} if fmt == "svg" else ({"CreationDate": None} if fmt == "pdf" else None)
    target = path.with_suffix("." + fmt)
    fig.savefig(target, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return target


def _envelopes(rows: list[dict]) -> dict[str, dict[str, np.ndarray]]:
    by = defaultdict(lambda: defaultdict(list))
    for row in rows:
        for k, v in row.items():
            if k != "label":
                by[row["label"]][k].append(float(v))
    return {lab: {k: np.asarray(v) for k, v in cols.items()} for lab, cols in by.items()}


def plot_trajectories(env: dict, out: Path, fmt: str) -> Path:
    fig, (ax_y, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.5))
    first = next(iter(env.values()))
    ax_y.plot(first["t"], first["r"], "k--", lw=1.0, label="reference")
    for label, e in env.items():
        line, = ax_y.plot(e["t"], e["y0_mean"], label=label)
        ax_y.fill_between(e["t"], e["y0_mean"] - e["y0_std"], e["y0_mean"] + e["y0_std"],
                          color=line.get_color(), alpha=0.2, lw=0)
        ax_u.plot(e["t"], e["u_mean"], color=line.get_color())
        ax_u.fill_between(e["t"], e["u_mean"] - e["u_std"], e["u_mean"] + e["u_std"],
                          color=line.get_color(), alpha=0.2, lw=0)
    ax_y.set_ylabel("output $y^0_t$")
    ax_u.set_ylabel("input $u_t$")
    ax_u.set_xlabel("time step $t$")
    ax_y.legend(loc="upper right", ncol=2)
    return _save(fig, out / "trajectories", fmt)


def plot_stage_costs(env: dict, out: Path, fmt: str) -> Path:
    fig, ax = plt.subplots()
    for label, e in env.items():
        ax.semilogy(e["t"], np.maximum(e["J_median"], 1e-12), label=label)
    ax.set_xlabel("time step $t$")
    ax.set_ylabel("median stage cost $J_t$")
    ax.legend(ncol=2)
    return _save(fig, out / "stage_costs", fmt)


def plot_deviation(env: dict, out: Path, fmt: str) -> Path | None:
    have = {k: e for k, e in env.items() if k != "mpc" and np.any(np.isfinite(e["dev_median"]))}
    if not have:
        return None
    fig, ax = plt.subplots()
    for label, e in have.items():
        ax.plot(e["t"], e["dev_median"], label=label)
    ax.set_xlabel("time step $t$")
    ax.set_ylabel(r"median $|y^0_t - y^{0,\mathrm{MPC}}_t|$")
    ax.legend(ncol=2)
    return _save(fig, out / "deviation", fmt)


def plot_boxes(runs: list[dict], out: Path, fmt: str) -> list[Path]:
    by = defaultdict(lambda: defaultdict(list))
    for row in runs:
        if row["failed"] == "1":
            continue
        for k in ("J_tot", "J_tot_u", "mean_g_norm2"):
            v = float(row[k])
            if np.isfinite(v):
                by[k][row["label"]].append(v)
    titles = {"J_tot": "total cost $J_{tot}$", "J_tot_u": "input cost $J^u_{tot}$",
              "mean_g_norm2": r"average $\|g^t\|_2^2$"}
    paths = []
    for metric, groups in by.items():
        if not groups:
            continue
        labels = list(groups)
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels) + 2), 4.2))
        ax.boxplot([groups[k] for k in labels], showfliers=True)
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=30, ha="right")
        ax.set_ylabel(titles[metric])
        if metric == "mean_g_norm2":
            ax.set_yscale("log")
        paths.append(_save(fig, out / f"box_{metric}", fmt))
    return paths


def plot_discrepancy(traj: list[dict], out: Path, fmt: str) -> Path | None:
    E = np.array([float(r["E"]) for r in traj])
    E = E[np.isfinite(E)]
    if E.size == 0:
        return None
    fig, ax = plt.subplots()
    ax.hist(E, bins=np.linspace(0.0, max(0.2, float(E.max())), 41), color="tab:blue", alpha=0.8)
    ax.axvline(0.05, color="k", ls="--", lw=1.0)
    ax.set_xlabel("normalized discrepancy $E$")
    ax.set_ylabel("count")
    return _save(fig, out / "discrepancy_hist", fmt)


def render(results: str | Path, fmt: str = "svg") -> list[Path]:
    """Write every figure the directory's contents allow; returns the written paths."""
    results = Path(results)
    need = [results / n for n in ("envelopes.csv", "runs.csv")]
    missing = [p.name for p in need if not p.is_file()]
    if missing:
        raise PlotInputError(f"{results}: missing {', '.join(missing)}")
    written: list[Path] = []
    with plt.rc_context(STYLE):
        env = _envelopes(_read_csv(results / "envelopes.csv"))
        if env:
            written.append(plot_trajectories(env, results, fmt))
            written.append(plot_stage_costs(env, results, fmt))
            p = plot_deviation(env, results, fmt)
            if p:
                written.append(p)
        written += plot_boxes(_read_csv(results / "runs.csv"), results, fmt)
        traj_path = results / "trajectories.csv"
        if traj_path.is_file():
            p = plot_discrepancy(_read_csv(traj_path), results, fmt)
            if p:
                written.append(p)
    return written
