import json

import pytest

from bpatch.cli import build_parser, main, resolve_seed

CHAIN = ["--iterations", "12", "--burn-in", "4", "--thinning", "2"]


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "model"
    assert main(["train", "--dataset", "heart", "--S", "10", *CHAIN, "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def test_train_archive(trained):
    for name in ("samples.json", "parents.json", "cases.json", "config.json", "trace.csv",
                 "feature_importance.json"):
        assert (trained / name).is_file()
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["resolved_seed"] == 7 and cfg["hyperparameters"]["alpha"] == 0.5


def test_train_rerun_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"m{k}"
        main(["train", "--dataset", "heart", "--S", "10", *CHAIN, "--seed", "3",
              "--out", str(out)])
        outs.append((out / "samples.json").read_bytes())
    assert outs[0] == outs[1]


def test_predict_and_explain(trained, tmp_path, capsys):
    out = tmp_path / "pred"
    assert main(["predict", "--model", str(trained), "--dataset", str(trained / "cases.json"),
                 "--cases", "0,1,2,3", "--threshold", "0.5", "--out", str(out)]) == 0
    preds = json.loads((out / "predictions.json").read_text())
    assert preds and all(p["label"] in (1, 2) for p in preds)
    assert (out / "config.json").is_file()

    ex = tmp_path / "ex"
    cases = json.loads((trained / "cases.json").read_text())["case_ids"][:2]
    rc = main(["explain", "--model", str(trained), "--dataset", str(trained / "cases.json"),
               "--cases", f"{cases[0]},{cases[1]},999999", "--top-k", "4", "--out", str(ex)])
    assert rc == 0
    assert "999999" in capsys.readouterr().err
    records = json.loads((ex / "explanations.json").read_text())
    assert len(records) == 2 and all(len(r["parents"]) == 4 for r in records)


def test_missing_spec_exits_2(tmp_path, capsys):
    missing = tmp_path / "no_such_spec.json"
    data = tmp_path / "d.csv"
    data.write_text("a,b\n1,2\n")
    rc = main(["train", "--dataset", str(data), "--spec", str(missing), "--out",
               str(tmp_path / "o")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_model_exits_2(tmp_path):
    assert main(["predict", "--model", str(tmp_path / "none"), "--dataset", "heart",
                 "--out", str(tmp_path / "o")]) == 2


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv("BPATCH_SEED", raising=False)
    assert resolve_seed(None) == 0
    assert resolve_seed(5) == 5
    monkeypatch.setenv("BPATCH_SEED", "41")
    assert resolve_seed(None) == 41


def test_env_seed_snapshot(tmp_path, monkeypatch):
    monkeypatch.setenv("BPATCH_SEED", "17")
    out = tmp_path / "g"
    assert main(["generate", "--S", "3", "--N", "8", "--P", "2", "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["resolved_seed"] == 17
    bundle = json.loads((out / "bundle.json").read_text())
    assert len(bundle["dataset"]["case_ids"]) == 8 and len(bundle["planted"]["z"]) == 8


def test_cv_with_plot_data(tmp_path):
    out = tmp_path / "cv"
    assert main(["cv", "--dataset", "breast", "--S", "10", "--k", "3", *CHAIN, "--jobs", "1",
                 "--emit-plot-data", "--out", str(out)]) == 0
    for name in ("report.json", "report.txt", "fold_plan.json", "config.json",
                 "plots/fold_accuracy.csv"):
        assert (out / name).is_file()


def test_sweep_and_baseline(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--dataset", "heart", "--param", "alpha", "--values", "0,0.5",
                 "--S", "8", "--k", "2", *CHAIN, "--emit-plot-data", "--out", str(out)]) == 0
    assert len(json.loads((out / "sweep.json").read_text())) == 2
    assert (out / "plots" / "sweep_alpha.csv").is_file()
    bl = tmp_path / "bl"
    assert main(["baseline", "knn", "--dataset", "heart", "--k", "30", "--out", str(bl)]) == 0
    assert json.loads((bl / "report.json").read_text())["config"]["K"] == 30


def test_profile(tmp_path):
    out = tmp_path / "pf"
    assert main(["profile", "--sizes", "20x3", "--s-grid", "2,4", "--sweeps", "2",
                 "--emit-plot-data", "--out", str(out)]) == 0
    assert (out / "plots" / "runtime_model1.csv").is_file()


def test_parser_has_all_commands():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert {"train", "predict", "explain", "cv", "sweep", "baseline", "generate"} <= set(sub)
