"""
Command-line entry point: synth, prepare, train, forecast, eval, attr and
hopfield-bench. Exit code 0 on success, 1 on runtime failure, 2 on invalid
input or configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as dp
from . import hopfield as hf
from .config import RunConfig, load_config
from .data import SLOTS, SOURCES
from .errors import ConfigError, DimensionError, GraftError, InputError
from .evaluation import EvalTask, SeasonalMeans, evaluate_tasks, export_attribution
from .experiment import DeskSetup
from .model import SWITCH_CODES, GraftModel, export_diagnostics, source_switch
from .numerics import load_checkpoint, no_grad, save_checkpoint
from .synth import make_synthetic
from .training import HORIZONS, TrainConfig, rolling_forecast, train

log = logging.getLogger("graft")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class MissingArtifact(InputError):
    """A prerequisite file or directory is absent."""


# -- run directories and manifests ----------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def new_run_dir(out) -> Path:
    """Next free ``run-NNN`` under ``out``; existing runs are never touched."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    taken = [int(p.name[4:]) for p in out.glob("run-[0-9][0-9][0-9]") if p.name[4:].isdigit()]
    n = max(taken, default=0) + 1
    while True:
        path = out / f"run-{n:03d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


def write_manifest(directory, extra=None) -> Path:
    directory = Path(directory)
    files = {p.name: sha256_file(p) for p in sorted(directory.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    path = directory / "manifest.json"
    path.write_text(json.dumps({"files": files, **(extra or {})}, indent=2, sort_keys=True))
    return path


def require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def _setup(cfg: RunConfig) -> DeskSetup:
    return DeskSetup(d_model=cfg.d_model, d_ff=cfg.d_ff, n_heads=cfg.n_heads, e_layers=cfg.e_layers,
                     seg_len=cfg.seg_len, pool_k=cfg.pool_k, dropout=cfg.dropout, t_in_days=cfg.t_in_days,
                     lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size)


def model_config(cfg: RunConfig, n_channels: int, text_dim: int):
    g = _setup(cfg).graft_config(cfg.source_switch, n_channels, text_dim)
    return replace(g, backbone=replace(g.backbone, alpha=cfg.alpha), lambda_tau=cfg.lambda_tau,
                   lambda_gamma=cfg.lambda_gamma)


# -- prepared dataset -----------------------------------------------------------------

def split_bounds(cfg: RunConfig, start, n_days: int):
    b1 = dp.to_day(cfg.train_end) if cfg.train_end else start + int(0.6 * n_days) - 1
    b2 = dp.to_day(cfg.val_end) if cfg.val_end else start + int(0.7 * n_days) - 1
    if not b1 < b2:
        raise ConfigError(f"train_end {b1} must precede val_end {b2}")
    return b1, b2


class Prepared:
    """A materialized dataset directory written by ``prepare``."""

    def __init__(self, path):
        self.path = require(path, "prepared dataset directory")
        self.panels, self.store, self.cov = dp.load_dataset(require(self.path / "dataset.npz", "dataset.npz"))
        meta = json.loads(require(self.path / "splits.json", "splits.json").read_text())
        self.b1, self.b2 = dp.to_day(meta["train_end"]), dp.to_day(meta["val_end"])
        self.t_in_days = int(meta["t_in_days"])
        norms = json.loads(require(self.path / "normalizer.json", "normalizer.json").read_text())
        self.norms = {r: dp.Normalizer.from_dict(d) for r, d in norms.items()}

    @property
    def n_channels(self) -> int:
        return 1 + (len(self.cov.names) if self.cov is not None else 0)

    def splits(self, region: str):
        wins = dp.make_windows(self.panels[region], self.store, self.t_in_days * SLOTS, SLOTS,
                               covariates=self.cov)
        return dp.split_by_forecast_end(wins, (self.b1, self.b2))

    def history(self, region: str) -> SeasonalMeans:
        p = self.panels[region]
        keep = p.days <= self.b1
        return SeasonalMeans(p.days[keep], p.values[keep])


def _prepare_outputs(src: Path, dst: Path, cfg: RunConfig) -> dict:
    panels, report = dp.read_load_csv(src / "load.csv")
    if not panels:
        raise InputError(f"{src / 'load.csv'}: no usable days")
    cov = dp.read_covariates_csv(src / "covariates.csv", list(panels)) if (src / "covariates.csv").exists() else None
    docs = dp.read_embeddings_csv(src / "embeddings.csv") if (src / "embeddings.csv").exists() else []
    start = min(p.days[0] for p in panels.values())
    end = max(p.days[-1] for p in panels.values())
    n_days = int((end - start).astype(np.int64)) + 1
    dim = len(docs[0].embedding) if docs else cfg.text_dim
    store, quarantine = dp.build_memory_store(docs, list(panels), start, n_days, dim)
    b1, b2 = split_bounds(cfg, start, n_days)
    dp.save_dataset(dst / "dataset.npz", list(panels.values()), store, cov)
    windows, norms = [], {}
    for r, p in panels.items():
        wins = dp.make_windows(p, store, cfg.t_in_days * SLOTS, SLOTS, covariates=cov)
        trn, val, tst = dp.split_by_forecast_end(wins, (b1, b2))
        if not trn:
            raise InputError(f"region {r}: empty train split (train_end {b1})")
        norms[r] = dp.Normalizer.fit(trn).to_dict()
        for name, part in (("train", trn), ("val", val), ("test", tst)):
            windows += [[r, str(s.first_day), str(s.anchor), str(s.forecast_end), name] for s in part]
    with (dst / "windows.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "first_day", "anchor", "forecast_end", "split"])
        w.writerows(windows)
    (dst / "normalizer.json").write_text(json.dumps(norms, indent=2, sort_keys=True))
    (dst / "splits.json").write_text(json.dumps({"train_end": str(b1), "val_end": str(b2),
                                                 "t_in_days": cfg.t_in_days}, indent=2))
    (dst / "ingest_report.json").write_text(json.dumps({**report, "quarantined_docs": len(quarantine)}, indent=2))
    return {"regions": sorted(panels), "n_days": n_days}


# -- commands -------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_synthetic(n_days=cfg.n_days, n_events=cfg.n_events, seed=cfg.seed, regions=cfg.region_list,
                        text_dim=cfg.text_dim, sparse=cfg.sparse)
    dp.write_load_csv(out / "load.csv", ds.panels.values())
    dp.write_embeddings_csv(out / "embeddings.csv", ds.docs)
    dp.write_covariates_csv(out / "covariates.csv", ds.covariates)
    with (out / "events.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "date", "kind"])
        for r, evs in ds.events.items():
            w.writerows([r, str(d), k] for d, k in evs)
    write_manifest(out, {"command": "synth", "config": cfg.to_dict()})
    print(f"synthetic dataset: {out} ({cfg.n_days} days, {sum(len(v) for v in ds.events.values())} events)")
    return EXIT_OK


def cmd_prepare(args, cfg: RunConfig) -> int:
    src = require(args.data, "input directory")
    require(src / "load.csv", "load.csv")
    dst = Path(args.out)
    inputs = {p.name: sha256_file(p) for p in sorted(src.glob("*.csv"))}
    keys = {"text_dim": cfg.text_dim, "t_in_days": cfg.t_in_days, "train_end": cfg.train_end, "val_end": cfg.val_end}
    mpath = dst / "manifest.json"
    if mpath.exists():
        old = json.loads(mpath.read_text())
        same_outputs = all((dst / n).exists() and sha256_file(dst / n) == d for n, d in old.get("files", {}).items())
        if old.get("inputs") == inputs and old.get("settings") == keys and same_outputs:
            print(f"{dst}: up to date (input digests match)")
            return EXIT_OK
    dst.mkdir(parents=True, exist_ok=True)
    info = _prepare_outputs(src, dst, cfg)
    write_manifest(dst, {"command": "prepare", "inputs": inputs, "settings": keys, **info})
    print(f"prepared {dst}: regions {', '.join(info['regions'])}")
    return EXIT_OK


def _load_models(run: Path, prep: Prepared):
    cfg_d = json.loads(require(run / "config.json", "run config.json").read_text())
    cfg = RunConfig(**cfg_d)
    models = {}
    for r in prep.panels:
        mcfg = model_config(cfg, prep.n_channels, prep.store.dim)
        model = GraftModel(mcfg, seed=cfg.seed)
        model.store.load_arrays(load_checkpoint(require(run / f"params-{r}.ckpt", f"checkpoint for {r}")))
        models[r] = model
    return cfg, models


def cmd_train(args, cfg: RunConfig) -> int:
    prep = Prepared(args.data)
    if cfg.t_in_days != prep.t_in_days:
        raise ConfigError(f"t_in_days={cfg.t_in_days} but the dataset was prepared with {prep.t_in_days}")
    run = new_run_dir(args.out)
    (run / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    checksums = {}
    for r in prep.panels:
        trn, _, _ = prep.splits(r)
        model = GraftModel(model_config(cfg, prep.n_channels, prep.store.dim), seed=cfg.seed)
        tcfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                           clip_threshold=cfg.clip_threshold, seed=cfg.seed)
        runlog = train(model, trn, prep.norms[r], tcfg)
        runlog.to_json(run / f"runlog-{r}.json")
        save_checkpoint(run / f"params-{r}.ckpt", model.store.arrays())
        checksums[r] = {n: model.store.checksum([n]) for n in model.store.params}
        print(f"{r}: {cfg.epochs} epochs, final loss {runlog.epoch_loss[-1]:.6f}, skipped {runlog.skipped_total}")
    write_manifest(run, {"command": "train", "param_checksums": checksums})
    print(f"run directory: {run}")
    return EXIT_OK


def cmd_forecast(args, cfg: RunConfig) -> int:
    prep = Prepared(args.data)
    run_in = require(args.run, "training run directory")
    tcfg, models = _load_models(run_in, prep)
    W = HORIZONS[cfg.horizon]
    out = new_run_dir(args.out)
    path = out / f"predictions-{cfg.horizon}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id", "region", "start_date", "start_slot", "step", "truth", "pred", "prev"])
        for r, model in models.items():
            _, _, tst = prep.splits(r)
            if not tst:
                log.warning("region %s: empty test split", r)
                continue
            panel = prep.panels[r]
            pos = {d: i for i, d in enumerate(panel.days.tolist())}
            first = min(s.forecast_end for s in tst)
            n_test = len(tst)
            if W <= SLOTS:  # one task per test day, a prefix of that day's forecast
                starts = [first + k for k in range(n_test)]
                series, _ = rolling_forecast(model, panel, prep.store, prep.norms[r], first, n_test * SLOTS, prep.cov)
                segs = [series[k * SLOTS: k * SLOTS + W] for k in range(len(starts))]
            else:  # one long task chained from day-ahead forecasts
                starts = [first]
                segs = [rolling_forecast(model, panel, prep.store, prep.norms[r], first, W, prep.cov)[0]]
            for day, seg in zip(starts, segs):
                if len(seg) < W:
                    log.warning("task %s:%s truncated to %d of %d points", r, day, len(seg), W)
                if not len(seg):
                    continue
                i = pos[day.tolist()]
                truth = panel.values[i: i + -(-len(seg) // SLOTS)].reshape(-1)[: len(seg)]
                prev = panel.values[i - 1, -1] if i > 0 else np.nan
                tid = f"{r}:{day}:{cfg.horizon}"
                for t in range(len(seg)):
                    w.writerow([tid, r, str(day), 1, t + 1, repr(float(truth[t])), repr(float(seg[t])),
                                repr(float(prev))])
    write_manifest(out, {"command": "forecast", "run": str(run_in), "horizon": cfg.horizon})
    print(f"predictions: {path}")
    return EXIT_OK


def read_predictions(path) -> dict:
    """task_id -> dict(region, start_date, start_slot, truth, pred, prev)."""
    path = require(path, "prediction file")
    tasks = defaultdict(lambda: {"truth": [], "pred": []})
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"task_id", "region", "start_date", "start_slot", "step", "truth", "pred"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise InputError(f"{path}:1: expected columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = tasks[row["task_id"]]
                t.update(region=row["region"], start_date=row["start_date"], start_slot=int(row["start_slot"]))
                prev = row.get("prev")
                t["prev"] = float(prev) if prev not in (None, "") else None
                t["truth"].append(float(row["truth"]))
                t["pred"].append(float(row["pred"]))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return dict(tasks)


def cmd_eval(args, cfg: RunConfig) -> int:
    if not args.pred:
        raise ConfigError("eval needs at least one --pred CODE=PATH")
    sets = {}
    for item in args.pred:
        code, eq, path = item.partition("=")
        if not eq:
            raise ConfigError(f"--pred expects CODE=PATH, got {item!r}")
        sets[code] = read_predictions(path)
    codes = list(sets)
    ref = sets[codes[0]]
    tasks = []
    for tid, t in ref.items():
        preds = {}
        for c in codes:
            if tid in sets[c]:
                if not np.array_equal(sets[c][tid]["truth"], t["truth"]):
                    raise InputError(f"task {tid}: truth differs between prediction sets")
                preds[c] = np.array(sets[c][tid]["pred"])
        tasks.append(EvalTask(tid, t["region"], t["start_date"], t["start_slot"] - 1, t["truth"], preds,
                              prev_value=t["prev"]))
    history = None
    if args.data:
        prep = Prepared(args.data)
        regions = {t.region for t in tasks}
        if len(regions) > 1:
            raise ConfigError("eval with a seasonal baseline takes one region per call")
        history = prep.history(regions.pop())
    report = evaluate_tasks(tasks, history, codes)
    out = new_run_dir(args.out)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    write_manifest(out, {"command": "eval", "predictions": args.pred})
    for s in codes:
        print(f"{s}: RMSE {report.metrics[s]['rmse']:.4f} Skill {report.skill[s]:.4f} "
              f"RankRMSE {report.rank_rmse[s]:.4f} Wins {report.wins[s]}")
    print(f"report: {out / 'report.csv'}")
    return EXIT_OK


def cmd_attr(args, cfg: RunConfig) -> int:
    prep = Prepared(args.data)
    run_in = require(args.run, "training run directory")
    tcfg, models = _load_models(run_in, prep)
    out = new_run_dir(args.out)
    records = []
    active = np.array([s in source_switch(tcfg.source_switch) for s in SOURCES])
    for r, model in models.items():
        _, _, tst = prep.splits(r)
        if not tst or not model.cfg.active:
            continue
        x, _, text, mask = dp.stack_samples(tst, prep.norms[r])
        with no_grad():
            _, _, diag = model.forward(x, text, mask, with_diagnostics=True)
        sub = out / r
        export_diagnostics(diag, tst, sub)
        gamma = np.mean(np.stack(diag.gamma), axis=0)
        for b, s in enumerate(tst):
            for l in range(gamma.shape[1]):
                records.append((r, s.first_day + l, gamma[b, l], mask[b, l] & active))
    if not records:
        raise InputError("no attribution: the run uses no text sources or the test split is empty")
    export_attribution(records, out / "attribution.csv")
    write_manifest(out, {"command": "attr", "run": str(run_in)})
    print(f"attribution: {out / 'attribution.csv'}")
    return EXIT_OK


def cmd_hopfield_bench(args, cfg: RunConfig) -> int:
    out = new_run_dir(args.out)
    dims = [int(d) for d in args.dims.split(",")]
    descent = hf.energy_descent_experiment(trials=args.trials, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 3])
    sparse = {}
    for name, bank in (("orthonormal", hf.MemoryBank(hf.orthonormal_patterns(16, 6, rng), 10.0, 2.0)),
                       ("unit", hf.MemoryBank(hf.unit_patterns(16, 6, rng), 4.0, 2.0))):
        sparse[name] = hf.check_sparse_dominates_dense(bank, trials=2 * args.trials, seed=cfg.seed)
    rows = hf.capacity_trend_experiment(dims, seed=cfg.seed)
    hf.write_rows_csv(out / "capacity.csv", rows)
    m_hat = [r["M_hat"] for r in rows]
    summary = {"energy_descent": descent, "sparse_vs_dense": sparse, "capacity": rows,
               "capacity_monotone": bool(all(a <= b for a, b in zip(m_hat, m_hat[1:])))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    write_manifest(out, {"command": "hopfield-bench"})
    print(f"energy descent: {descent['violations']} violations in {descent['trials']} runs")
    for name, rep in sparse.items():
        print(f"sparse vs dense ({name}): {rep['violations']} violations in {rep['evaluated']} trials")
    print("capacity: " + ", ".join(f"d={r['d']} M={r['M_hat']}" for r in rows))
    ok = descent["violations"] == 0 and all(v["violations"] == 0 for v in sparse.values())
    return EXIT_OK if ok else EXIT_RUNTIME


# -- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--source-switch", type=int, choices=sorted(SWITCH_CODES))
    common.add_argument("--horizon", choices=sorted(HORIZONS))
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="graft", description="text-fused load forecasting")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic testbed")
    sp = sub.add_parser("prepare", parents=[common], help="validate CSV inputs and build the dataset")
    sp.add_argument("--data", required=True, help="directory with load.csv [embeddings.csv covariates.csv]")
    sp = sub.add_parser("train", parents=[common], help="train one model per region")
    sp.add_argument("--data", required=True, help="prepared dataset directory")
    for name in ("forecast", "attr"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--data", required=True, help="prepared dataset directory")
        sp.add_argument("--run", required=True, help="training run directory")
    sp = sub.add_parser("eval", parents=[common], help="protocol report over prediction sets")
    sp.add_argument("--pred", action="append", metavar="CODE=PATH")
    sp.add_argument("--data", help="prepared dataset (needed for the seasonal baseline)")
    sp = sub.add_parser("hopfield-bench", parents=[common], help="retrieval property experiments")
    sp.add_argument("--trials", type=int, default=500)
    sp.add_argument("--dims", default="8,16,32,64")
    return p


COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "forecast": cmd_forecast,
            "eval": cmd_eval, "attr": cmd_attr, "hopfield-bench": cmd_hopfield_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed, "source_switch": args.source_switch,
                                                  "horizon": args.horizon})
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GraftError, OSError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
