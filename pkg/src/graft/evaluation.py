"""
Point metrics, statistical baselines and the cross-task protocol
(Skill, RankRMSE, Wins), plus attribution tables.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SLOTS, SOURCES, day_of_week, to_day
from .errors import InputError, ProtocolError

log = logging.getLogger(__name__)

DENOM_EPS = 1e-9
PERSISTENCE_MAX_W = 12


def horizon_label(w: int) -> str:
    return "VSTLF" if w <= 16 else "STLF" if w <= 48 else "MTLF"


def point_metrics(y, yhat) -> dict:
    """RMSE, MAE, MAPE (%) and sMAPE (%); percentage metrics skip near-zero denominators."""
    y, yhat = np.asarray(y, float).ravel(), np.asarray(yhat, float).ravel()
    if y.size == 0:
        raise InputError("metrics need at least one point")
    if y.shape != yhat.shape:
        raise InputError(f"length mismatch: {y.size} vs {yhat.size}")
    err = yhat - y
    ok = np.abs(y) >= DENOM_EPS
    den = np.abs(y) + np.abs(yhat)
    ok_s = den >= DENOM_EPS
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
        "mape": float(100.0 * np.mean(np.abs(err[ok]) / np.abs(y[ok]))) if ok.any() else float("nan"),
        "smape": float(100.0 * np.mean(2.0 * np.abs(err[ok_s]) / den[ok_s])) if ok_s.any() else float("nan"),
        "mape_skipped": int((~ok).sum()),
        "smape_skipped": int((~ok_s).sum()),
    }


@dataclass
class EvalTask:
    """One evaluation window of W consecutive half-hours starting at (start_day, start_slot)."""
    task_id: str
    region: str
    start_day: np.datetime64
    start_slot: int  # 0-based
    truth: np.ndarray
    preds: dict = field(default_factory=dict)
    prev_value: float | None = None  # observation right before the window, for persistence

    def __post_init__(self):
        self.truth = np.asarray(self.truth, float)
        self.start_day = to_day(self.start_day)
        for k, v in self.preds.items():
            if len(v) != len(self.truth):
                raise InputError(f"task {self.task_id}: prediction {k} has {len(v)} points, expected {len(self.truth)}")

    @property
    def W(self) -> int:
        return len(self.truth)

    @property
    def horizon(self) -> str:
        return horizon_label(self.W)

    def positions(self):
        """(day, slot) of every point in the window."""
        k = self.start_slot + np.arange(self.W)
        return self.start_day + k // SLOTS, k % SLOTS


class SeasonalMeans:
    """Day-of-week x half-hour slot means over a training history."""

    def __init__(self, days, values):
        days = np.asarray(days, dtype="datetime64[D]")
        values = np.asarray(values, float)
        dow = day_of_week(days)
        self.table = np.full((7, SLOTS), np.nan)
        for d in range(7):
            sel = dow == d
            if sel.any():
                self.table[d] = values[sel].mean(axis=0)
        self.global_mean = float(values.mean()) if values.size else float("nan")

    def predict(self, days, slots) -> np.ndarray:
        out = self.table[day_of_week(days), slots]
        missing = np.isnan(out)
        if missing.any():
            log.warning("seasonal baseline: %d (dow, slot) cells missing; using the global mean", int(missing.sum()))
            out = np.where(missing, self.global_mean, out)
        return out


def stat_baseline(task: EvalTask, history: SeasonalMeans | None):
    """Persistence for W ≤ 12, else the seasonal (dow, slot) mean. Returns (series, rmse)."""
    if task.W <= PERSISTENCE_MAX_W:
        if task.prev_value is None:
            raise InputError(f"task {task.task_id}: persistence needs the preceding observation")
        base = np.concatenate([[task.prev_value], task.truth[:-1]])
    else:
        if history is None:
            raise InputError("seasonal baseline needs a training history")
        base = history.predict(*task.positions())
    return base, point_metrics(task.truth, base)["rmse"]


def skill(rmse_k: float, rmse_stat: float) -> float:
    if not rmse_stat > 0:
        raise InputError("skill is undefined when the baseline RMSE is 0")
    return 1.0 - rmse_k / rmse_stat


def _rmse_table(table: dict, sources) -> np.ndarray:
    arr = np.empty((len(table), len(sources)))
    for i, (tid, row) in enumerate(table.items()):
        for j, s in enumerate(sources):
            if s not in row or row[s] is None or not np.isfinite(row[s]):
                raise ProtocolError(f"task {tid} has no RMSE for source {s}")
            arr[i, j] = row[s]
    return arr


def rank_rmse(table: dict, sources) -> dict:
    """Mean competition rank (ties share the minimal rank) over tasks."""
    arr = _rmse_table(table, sources)
    ranks = 1 + (arr[:, None, :] < arr[:, :, None]).sum(axis=2)
    return {s: float(ranks[:, j].mean()) for j, s in enumerate(sources)}


def wins(table: dict, sources) -> dict:
    """Tasks where a source attains the minimum RMSE; every tied source counts."""
    arr = _rmse_table(table, sources)
    best = arr == arr.min(axis=1, keepdims=True)
    return {s: int(best[:, j].sum()) for j, s in enumerate(sources)}


@dataclass
class ProtocolReport:
    sources: list
    n_tasks: int
    metrics: dict  # source -> mean rmse/mae/mape/smape
    skill: dict
    rank_rmse: dict
    wins: dict
    excluded_tasks: list
    per_task: dict

    def to_dict(self) -> dict:
        return {"sources": self.sources, "n_tasks": self.n_tasks, "metrics": self.metrics, "skill": self.skill,
                "rank_rmse": self.rank_rmse, "wins": self.wins, "excluded_tasks": self.excluded_tasks,
                "per_task": self.per_task}

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Source", "N", "RMSE", "MAE", "MAPE", "sMAPE", "Skill", "RankRMSE", "Wins"])
            for s in self.sources:
                m = self.metrics[s]
                w.writerow([s, self.n_tasks, f"{m['rmse']:.6f}", f"{m['mae']:.6f}", f"{m['mape']:.6f}",
                            f"{m['smape']:.6f}", f"{self.skill[s]:.6f}", f"{self.rank_rmse[s]:.6f}", self.wins[s]])
        return path


def protocol_from_rmse(rmse: dict, rmse_stat: dict, sources, metrics: dict | None = None) -> ProtocolReport:
    """Protocol numbers from per-task RMSEs: rmse[task][source], rmse_stat[task]."""
    sources = list(sources)
    rank = rank_rmse(rmse, sources)
    win = wins(rmse, sources)
    excluded = [t for t in rmse if not rmse_stat[t] > 0]
    if excluded:
        log.warning("%d tasks with zero baseline RMSE excluded from Skill", len(excluded))
    kept = [t for t in rmse if t not in excluded]
    sk = {s: (float(np.mean([skill(rmse[t][s], rmse_stat[t]) for t in kept])) if kept else float("nan"))
          for s in sources}
    if metrics is None:
        metrics = {s: {"rmse": float(np.mean([rmse[t][s] for t in rmse])), "mae": float("nan"),
                       "mape": float("nan"), "smape": float("nan")} for s in sources}
    per_task = {t: {"rmse": rmse[t], "rmse_stat": rmse_stat[t]} for t in rmse}
    return ProtocolReport(sources, len(rmse), metrics, sk, rank, win, excluded, per_task)


def evaluate_tasks(tasks, history: SeasonalMeans | None, sources=None) -> ProtocolReport:
    if not tasks:
        raise ProtocolError("no evaluation tasks")
    sources = list(sources or tasks[0].preds)
    rmse, rmse_stat, per_metric = {}, {}, defaultdict(list)
    for task in tasks:
        if task.task_id in rmse:
            raise ProtocolError(f"duplicate task id {task.task_id}")
        _, rmse_stat[task.task_id] = stat_baseline(task, history)
        row = {}
        for s in sources:
            if s not in task.preds:
                raise ProtocolError(f"task {task.task_id} has no prediction for {s}")
            m = point_metrics(task.truth, task.preds[s])
            row[s] = m["rmse"]
            per_metric[s].append(m)
        rmse[task.task_id] = row
    metrics = {s: {k: float(np.nanmean([m[k] for m in per_metric[s]])) for k in ("rmse", "mae", "mape", "smape")}
               for s in sources}
    return protocol_from_rmse(rmse, rmse_stat, sources, metrics)


def export_attribution(records, path=None):
    """Daily-averaged source weights per (region, date).

    ``records`` yields (region, date, weights[3], mask[3]); masked sources
    contribute no weight and days with no available source are left out.
    Returns rows (region, date, w_news, w_reddit, w_policy) and optionally writes CSV.
    """
    acc = defaultdict(list)
    for region, date, weights, mask in records:
        w = np.where(np.asarray(mask, bool), np.asarray(weights, float), 0.0)
        if w.sum() > 0:
            acc[(region, str(to_day(date)))].append(w / w.sum())
    rows = [(r, d, *np.mean(v, axis=0).tolist()) for (r, d), v in sorted(acc.items())]
    if path is not None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "date", *(f"gamma_{s.lower()}" for s in SOURCES)])
            wr.writerows(rows)
    return rows
