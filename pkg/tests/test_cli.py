import json
import subprocess
import sys

import pytest

from itemrecourse.cli import main


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--users", "60", "--items", "80", "--features", "12",
                 "--density", "0.08", "--seed", "2", "--out", str(out)]) == 0
    return out


def test_synth_writes_dataset(dataset):
    assert sorted(p.name for p in dataset.iterdir()) == ["catalog.csv", "catalog.json", "ratings.csv", "users.json"]
    assert (dataset / "catalog.csv").read_text().startswith("f=12\n")


def test_featurize(tmp_path):
    items = tmp_path / "items.jsonl"
    items.write_text('{"id": "a", "text": {"plot": "space ship"}, "categorical": {"g": "scifi"}}\n'
                     '{"id": "b", "text": {"plot": "love story"}, "categorical": {"g": "drama"}}\n')
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"text": {"plot": {"mode": "binary"}}, "categorical": {"g": {"mutable": False}}}))
    ratings = tmp_path / "r.csv"
    ratings.write_text("user_id,item_id,rating\nu1,a,5\nu2,b,3\n")
    out = tmp_path / "cat"
    assert main(["featurize", "--items", str(items), "--spec", str(spec), "--out", str(out),
                 "--ratings", str(ratings)]) == 0
    side = json.loads((out / "catalog.json").read_text())
    assert side["feature_names"] == ["plot:love", "plot:ship", "plot:space", "plot:story", "g=drama", "g=scifi"]
    assert side["mutable_mask"] == [True] * 4 + [False] * 2
    assert (out / "ratings.csv").exists()


def test_recourse_writes_result(dataset, tmp_path):
    out = tmp_path / "res.json"
    rc = main(["recourse", "--data", str(dataset), "--item", "i5", "--group", "1",
               "--sample", "0.5", "--seed", "3", "--out", str(out)])
    assert rc == 0
    res = json.loads(out.read_text())
    assert res["item_id"] == "i5" and res["config"]["sample_fraction"] == 0.5
    assert res["sample_size"] <= res["group_size"]
    assert all(c["old"] != c["new"] for c in res["changes"])
    assert len(res["trace"]) == res["iterations"]


def test_experiment_and_report(dataset, tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"target_ranks": [11, 21], "sample_fractions": [0.1, 0.5],
                                "grouping": {"strategy": "activity", "n_groups": 2}}))
    out = tmp_path / "exp"
    assert main(["experiment", "--data", str(dataset), "--spec", str(spec), "--out", str(out),
                 "--jobs", "2", "--charts"]) == 0
    assert (out / "report.csv").exists() and (out / "report.json").exists()
    assert sorted(p.name for p in (out / "charts").iterdir()) == [
        "l0_fraction.svg", "success_rank_11.svg", "success_rank_21.svg"]
    capsys.readouterr()
    assert main(["report", "--in", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out == (out / "report.csv").read_text()
    assert main(["report", "--in", str(out / "report.json"), "--format", "json"]) == 0
    assert capsys.readouterr().out == (out / "report.json").read_text()


def test_timing_flag_fills_wall_ms(dataset, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"target_ranks": [11], "sample_fractions": [0.2],
                                "grouping": {"n_groups": 1}}))
    out = tmp_path / "exp"
    assert main(["experiment", "--data", str(dataset), "--spec", str(spec), "--out", str(out), "--timing"]) == 0
    row = (out / "report.csv").read_text().splitlines()[1].split(",")
    assert float(row[-1]) > 0


def test_usage_errors_exit_1(dataset, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["recourse", "--data", str(dataset)])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    out = str(tmp_path / "r.json")
    assert main(["recourse", "--data", str(dataset), "--item", "i1", "--group", "0", "--lr", "-1", "--out", out]) == 1
    assert main(["recourse", "--data", str(dataset), "--item", "i1", "--group", "9", "--out", out]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["experiment", "--data", str(dataset), "--spec", str(bad), "--out", str(tmp_path / "x")]) == 1
    bad.write_text(json.dumps({"target_ranks": [3]}))
    assert main(["experiment", "--data", str(dataset), "--spec", str(bad), "--out", str(tmp_path / "x")]) == 1


def test_data_errors_exit_2(dataset, tmp_path):
    out = str(tmp_path / "r.json")
    assert main(["recourse", "--data", str(dataset), "--item", "nope", "--group", "0", "--out", out]) == 2
    assert main(["recourse", "--data", str(tmp_path / "missing"), "--item", "i1", "--group", "0", "--out", out]) == 2
    assert main(["report", "--in", str(tmp_path)]) == 2
    (dataset / "ratings.csv").write_text("user_id,item_id,rating\nu0,i1,x\n")
    assert main(["recourse", "--data", str(dataset), "--item", "i1", "--group", "0", "--out", out]) == 2


def test_numeric_failure_exits_3(dataset, tmp_path):
    rc = main(["recourse", "--data", str(dataset), "--item", "i7", "--group", "0", "--lambda", "0",
               "--lr", "1e308", "--no-normalize", "--out", str(tmp_path / "r.json")])
    assert rc == 3


def test_module_entry_point(dataset):
    proc = subprocess.run([sys.executable, "-m", "itemrecourse.cli", "report", "--in", str(dataset)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "data error" in proc.stderr
