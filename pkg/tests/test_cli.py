import csv
import json

import pytest

from demon_opt.cli import apply_overrides, main, parse_spec

CONFIG = {
    "problem_spec": {"generator": "quadratic", "L": 1.0, "mu": 0.1, "dim": 3},
    "optimizer": "demon_sgdm",
    "lr_schedule": {"kind": "constant", "init_value": 0.1},
    "beta_init": 0.9,
    "epochs": 20,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(CONFIG))
    return path


def test_train_writes_outputs(tmp_path, config_path):
    out = tmp_path / "train"
    assert main(["train", "--config", str(config_path), "--set", "lr=0.05", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "trace.csv")))
    assert len(rows) == 21 and rows[0]["eta_t"] == "0.05"
    summary = json.loads((out / "summary.jsonl").read_text())
    assert summary["lr"] == 0.05 and summary["momentum"] == 0.9 and summary["T"] == 20


def test_seed_env_overrides(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv("DEMON_OPT_SEED", "7")
    assert main(["train", "--config", str(config_path), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "summary.jsonl").read_text())["config"]["seed"] == 7


def test_unknown_config_key_exits_2(tmp_path, config_path, capsys):
    code = main(["train", "--config", str(config_path), "--set", "learning_rate=0.1", "--out", str(tmp_path)])
    assert code == 2 and "learning_rate" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_unwritable_output_exits_3(tmp_path, config_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["train", "--config", str(config_path), "--out", str(blocker / "sub")]) == 3


def test_overrides_aliases():
    rec = apply_overrides(json.loads(json.dumps(CONFIG)), ["momentum=0.95", "lr_schedule.kind=\"cosine\""])
    assert rec["beta_init"] == 0.95 and rec["lr_schedule"]["kind"] == "cosine"
    sgdm = {**CONFIG, "optimizer": "sgdm", "momentum_schedule": {"kind": "constant", "init_value": 0.9}}
    assert apply_overrides(sgdm, ["momentum=0.5"])["momentum_schedule"]["init_value"] == 0.5


def test_grid_writes_csv_jsonl_and_heatmap(tmp_path, config_path):
    out = tmp_path / "grid"
    args = ["grid", "--config", str(config_path), "--lr-grid", "0.03,0.1", "--momentum-grid", "0.9,0.95", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out / "grid.csv")))
    assert [(r["lr"], r["momentum"]) for r in rows] == [("0.03", "0.9"), ("0.03", "0.95"), ("0.1", "0.9"), ("0.1", "0.95")]
    svg = (out / "heatmap.svg").read_text()
    assert svg.count('class="cell"') == 4
    assert len((out / "grid.jsonl").read_text().splitlines()) == 4


def test_verify_suite_and_fault(tmp_path, monkeypatch):
    assert main(["verify", "--suite", "reductions", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "checks.jsonl").read_text().splitlines()
    assert len(lines) == 3 and all(json.loads(x)["passed"] for x in lines)
    monkeypatch.setenv("DEMON_OPT_INJECT_FAULT", "1e-3")
    assert main(["verify", "--suite", "lemma1", "--out", str(tmp_path)]) == 1


def test_schedule_samples(tmp_path):
    out = tmp_path / "s"
    assert main(["schedule", "--spec", "kind=demon,init_value=0.9", "--T", "100", "--samples", "101", "--svg", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "schedule.csv")))
    assert rows[0] == ["t", "value"] and len(rows) == 102
    assert float(rows[1][1]) == 0.9 and float(rows[-1][1]) == 0.0
    assert (out / "schedule.svg").read_text().count('class="series"') == 1


def test_schedule_multiple_specs_and_errors(tmp_path):
    out = tmp_path / "s"
    args = ["schedule", "--spec", "kind=linear,init_value=0.9,target=momentum", "--spec", "kind=step,init_value=0.1,milestones=0.3;0.6", "--out", str(out)]
    assert main(args) == 0
    assert next(csv.reader(open(out / "schedule.csv"))) == ["t", "linear_momentum", "step_learning_rate"]
    assert main(["schedule", "--spec", "kind=plateau,init_value=0.1", "--out", str(out)]) == 2
    assert main(["schedule", "--spec", "kind=demon,init_value=1.2", "--out", str(out)]) == 2
    with pytest.raises(Exception):
        parse_spec("kind=linear,bogus=1")


def test_plot_schema_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["plot", str(bad), "--kind", "heatmap"]) == 2
    assert main(["plot", str(bad), "--kind", "lines"]) == 2
    assert main(["plot", str(tmp_path / "missing.csv")]) == 2


def test_plot_trace(tmp_path, config_path):
    main(["train", "--config", str(config_path), "--out", str(tmp_path)])
    assert main(["plot", str(tmp_path / "trace.csv"), "--out", str(tmp_path / "p.svg")]) == 0
    assert (tmp_path / "p.svg").read_text().count('class="series"') == 1
