"""Writes a results directory: delimited tables plus a JSON summary.

    trajectories.csv  label, run, t, r, u, y, y0, J_t, E, dev  (one row per step)
    runs.csv          per-run J_tot, J_tot_u, mean |g|^2, median E, mean deviation
    envelopes.csv     per-step mean/std of u and y0, stage-cost quartiles
    comparison.csv    per-group medians and quartiles
    discrepancy_hist.csv  histogram of E (only when E was evaluated)
    summary.json      configuration, per-group statistics, criteria
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from smmpc.harness import (
    McSummary,
    RunResult,
    write_envelopes_csv,
    write_runs_csv,
    write_summary_json,
    write_trajectories_csv,
)

__all__ = ["write_results", "write_comparison_csv", "format_table"]


def write_comparison_csv(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_discrepancy_hist(path: str | Path, E: np.ndarray, width: float = 0.005, top: float = 0.2) -> None:
    """Counts per bin of ``width`` on ``[0, top)``; the last row collects ``E >= top``."""
    edges = np.linspace(0.0, top, int(round(top / width)) + 1)
    counts, _ = np.histogram(E[E < top], bins=edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        w.writerow([repr(top), "inf", int(np.sum(E >= top))])


def comparison_rows(summaries: dict[str, McSummary]) -> list[dict]:
    return [{
        "label": label,
        "runs": s.n_completed,
        "failed": s.n_failed,
        "J_tot_median": s.J_tot.median,
        "J_tot_q1": s.J_tot.q1,
        "J_tot_q3": s.J_tot.q3,
        "J_tot_u_median": s.J_tot_u.median,
        "mean_g_norm2_median": s.mean_g_norm2.median,
        "E_median": s.E.median,
        "mean_dev_median": s.mean_dev.median,
    } for label, s in summaries.items()]


def format_table(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[_cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def write_results(
    out: str | Path,
    groups: dict[str, list[RunResult]],
    summaries: dict[str, McSummary],
    meta: dict,
    trajectory_groups: Optional[Sequence[str]] = None,
) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    traj = [r for k in (trajectory_groups or groups) for r in groups[k]]
    write_trajectories_csv(out / "trajectories.csv", traj)
    write_runs_csv(out / "runs.csv", [r for g in groups.values() for r in g])
    write_envelopes_csv(out / "envelopes.csv", groups)
    E = np.concatenate([r.E for g in groups.values() for r in g]) if groups else np.zeros(0)
    E = E[np.isfinite(E)]
    if E.size:
        write_discrepancy_hist(out / "discrepancy_hist.csv", E)
    rows = comparison_rows(summaries)
    write_comparison_csv(out / "comparison.csv", rows)
    payload = dict(meta)
    payload["groups"] = {k: asdict(s) for k, s in summaries.items()}
    write_summary_json(out / "summary.json", payload)
    return out
