"""Hand-built protocol fixture: 2 tasks x 3 sources with one exact tie.

RMSE table (baseline is persistence, W = 4):

    task  s1   s2   s3   stat
    A     100  100  150  200
    B      90   60  120  120

By hand: Skill s1 = (0.5 + 0.25)/2, s2 = (0.5 + 0.5)/2, s3 = (0.25 + 0)/2.
Ranks A: 1 1 3, B: 2 1 3, so RankRMSE = 1.5, 1.0, 3.0. Wins = 1, 2, 0.
"""

import csv

import numpy as np

from graft.evaluation import EvalTask

SOURCES = ["s1", "s2", "s3"]
EXPECTED = {
    "rmse": {"A": {"s1": 100.0, "s2": 100.0, "s3": 150.0}, "B": {"s1": 90.0, "s2": 60.0, "s3": 120.0}},
    "rmse_stat": {"A": 200.0, "B": 120.0},
    "skill": {"s1": 0.375, "s2": 0.5, "s3": 0.125},
    "rank_rmse": {"s1": 1.5, "s2": 1.0, "s3": 3.0},
    "wins": {"s1": 1, "s2": 2, "s3": 0},
}


def _truth(step):
    # persistence is off by exactly ``step`` at every point
    return np.array([1000.0, 1000.0 + step, 1000.0, 1000.0 + step]), 1000.0 + step


def protocol_tasks():
    tasks = []
    for tid, step, errs in (("A", 200.0, (100.0, -100.0, 150.0)), ("B", 120.0, (90.0, -60.0, 120.0))):
        truth, prev = _truth(step)
        preds = {s: truth + e for s, e in zip(SOURCES, errs)}
        tasks.append(EvalTask(tid, "R1", "2021-03-01", 0, truth, preds, prev_value=prev))
    return tasks


def write_prediction_csvs(directory):
    """One prediction file per source, in the forecast command's layout."""
    paths = {}
    for s in SOURCES:
        path = directory / f"pred-{s}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "region", "start_date", "start_slot", "step", "truth", "pred", "prev"])
            for t in protocol_tasks():
                for k in range(t.W):
                    w.writerow([t.task_id, t.region, str(t.start_day), 1, k + 1, repr(float(t.truth[k])),
                                repr(float(t.preds[s][k])), repr(float(t.prev_value))])
        paths[s] = path
    return paths
