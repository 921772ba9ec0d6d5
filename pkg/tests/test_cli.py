import csv
import json

import numpy as np
import pytest

from graft import cli
from graft.model import GraftModel, text_param_names

from fixtures import EXPECTED, write_prediction_csvs


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text("n_days = 60\nn_events = 6\nepochs = 2\nd_model = 8\nd_ff = 16\n")
    assert cli.main(["synth", "--config", str(root / "small.cfg"), "--seed", "2", "--out", str(root / "syn")]) == 0
    assert cli.main(["prepare", "--config", str(root / "small.cfg"), "--data", str(root / "syn"),
                     "--out", str(root / "prep")]) == 0
    return root


def _run(root, *args):
    return cli.main([*args, "--config", str(root / "small.cfg")])


def test_synth_is_deterministic(prepared, tmp_path):
    assert _run(prepared, "synth", "--seed", "2", "--out", str(tmp_path / "again")) == 0
    a = json.loads((prepared / "syn" / "manifest.json").read_text())["files"]
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())["files"]
    assert a == b
    with (tmp_path / "again" / "events.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 1 + 6


def test_prepare_manifest_and_idempotence(prepared, capsys):
    prep = prepared / "prep"
    man = json.loads((prep / "manifest.json").read_text())
    assert set(man["inputs"]) == {"load.csv", "embeddings.csv", "covariates.csv", "events.csv"}
    assert all(len(d) == 64 for d in man["inputs"].values())
    before = {p.name: p.stat().st_mtime_ns for p in prep.iterdir()}
    assert _run(prepared, "prepare", "--data", str(prepared / "syn"), "--out", str(prep)) == 0
    assert "up to date" in capsys.readouterr().out
    assert {p.name: p.stat().st_mtime_ns for p in prep.iterdir()} == before


def test_prepare_rejects_short_day(prepared, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    lines = (prepared / "syn" / "load.csv").read_text().splitlines()
    victim = lines[60].split(",")
    del lines[60]
    (bad / "load.csv").write_text("\n".join(lines) + "\n")
    assert _run(prepared, "prepare", "--data", str(bad), "--out", str(tmp_path / "p")) == 2
    err = capsys.readouterr().err
    assert victim[1] in err and "47 slots" in err and "load.csv:" in err


def test_missing_prerequisites_exit_2(prepared, tmp_path, capsys):
    assert _run(prepared, "train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "r")) == 2
    assert "nothing" in capsys.readouterr().err
    assert _run(prepared, "forecast", "--data", str(prepared / "prep"), "--run", str(tmp_path / "norun"),
                "--out", str(tmp_path / "f")) == 2
    assert "norun" in capsys.readouterr().err
    assert cli.main(["train"]) == 2


def test_train_forecast_eval_attr(prepared, capsys):
    runs = prepared / "runs"
    assert _run(prepared, "train", "--data", str(prepared / "prep"), "--out", str(runs), "--source-switch", "0") == 0
    assert _run(prepared, "train", "--data", str(prepared / "prep"), "--out", str(runs), "--source-switch", "2") == 0
    assert _run(prepared, "train", "--data", str(prepared / "prep"), "--out", str(runs), "--source-switch", "2") == 0
    assert sorted(p.name for p in runs.iterdir()) == ["run-001", "run-002", "run-003"]
    sums = [json.loads((runs / f"run-00{i}" / "manifest.json").read_text())["param_checksums"]["R1"]
            for i in (1, 2, 3)]
    assert sums[1] == sums[2]  # deterministic
    # the NoExt run never moves the text path away from its initial values
    cfg = cli.RunConfig(**json.loads((runs / "run-001" / "config.json").read_text()))
    prep = cli.Prepared(prepared / "prep")
    init = GraftModel(cli.model_config(cfg, prep.n_channels, prep.store.dim), seed=cfg.seed).store
    text = text_param_names(init)
    assert all(sums[0][n] == init.checksum([n]) for n in text)
    assert all(sums[0][n] != sums[1][n] for n in text if n.startswith("text.proj.reddit"))

    fc = prepared / "fc"
    for h in ("stlf", "vstlf"):
        assert _run(prepared, "forecast", "--data", str(prepared / "prep"), "--run", str(runs / "run-002"),
                    "--out", str(fc), "--horizon", h) == 0
    stlf = cli.read_predictions(fc / "run-001" / "predictions-stlf.csv")
    vstlf = cli.read_predictions(fc / "run-002" / "predictions-vstlf.csv")
    assert stlf and all(len(t["pred"]) == 48 for t in stlf.values())
    assert len(vstlf) == len(stlf) and all(len(t["pred"]) == 16 for t in vstlf.values())
    k = sorted(stlf)[0]
    assert vstlf[k.replace("stlf", "vstlf")]["pred"] == stlf[k]["pred"][:16]

    capsys.readouterr()
    assert _run(prepared, "eval", "--pred", f"2={fc / 'run-001' / 'predictions-stlf.csv'}",
                "--data", str(prepared / "prep"), "--out", str(prepared / "ev")) == 0
    report = json.loads((prepared / "ev" / "run-001" / "report.json").read_text())
    assert report["n_tasks"] == len(stlf) and report["wins"]["2"] == len(stlf)

    assert _run(prepared, "attr", "--data", str(prepared / "prep"), "--run", str(runs / "run-002"),
                "--out", str(prepared / "at")) == 0
    with (prepared / "at" / "run-001" / "attribution.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["gamma_reddit"]) == 1.0 for r in rows)
    assert _run(prepared, "attr", "--data", str(prepared / "prep"), "--run", str(runs / "run-001"),
                "--out", str(prepared / "at")) == 2


def test_eval_fixture_matches_hand_values(tmp_path):
    paths = write_prediction_csvs(tmp_path)
    argv = ["eval", "--out", str(tmp_path / "ev")]
    for s, p in paths.items():
        argv += ["--pred", f"{s}={p}"]
    assert cli.main(argv) == 0
    rep = json.loads((tmp_path / "ev" / "run-001" / "report.json").read_text())
    assert rep["skill"] == EXPECTED["skill"]
    assert rep["rank_rmse"] == EXPECTED["rank_rmse"]
    assert rep["wins"] == EXPECTED["wins"]
    assert cli.main(["eval", "--out", str(tmp_path / "ev2")]) == 2
    assert cli.main(["eval", "--pred", "nofile", "--out", str(tmp_path / "ev2")]) == 2


def test_hopfield_bench(tmp_path, capsys):
    assert cli.main(["hopfield-bench", "--trials", "60", "--dims", "4,8", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "run-001" / "summary.json").read_text())
    assert summary["energy_descent"]["violations"] == 0
    assert all(v["violations"] == 0 for v in summary["sparse_vs_dense"].values())
    assert summary["capacity_monotone"]
    assert "0 violations" in capsys.readouterr().out


def test_run_dirs_are_append_only(tmp_path):
    a = cli.new_run_dir(tmp_path)
    (a / "x.txt").write_text("keep")
    b = cli.new_run_dir(tmp_path)
    assert (a.name, b.name) == ("run-001", "run-002") and (a / "x.txt").read_text() == "keep"
    m = json.loads(cli.write_manifest(a).read_text())
    assert m["files"]["x.txt"] == cli.sha256_file(a / "x.txt")
