import csv
import json
import subprocess
import sys

import pytest

from nomabeam import cli
from nomabeam import dataset as ds
from nomabeam.harness import ValidationRow
from nomabeam.learner import load_model


def run(*argv):
    return cli.main([str(a) for a in argv])


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """gen -> label -> train once for the whole module."""
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", "--nt", "2,3", "--count", "4", "--seed", "1", "--out", d / "data.jsonl") == 0
    assert run("label", d / "data.jsonl", "--starts", "2", "--out", d / "lab.jsonl") == 0
    assert run("train", d / "lab.jsonl", "--epochs", "3", "--model", d / "model.json") == 0
    return d


def test_gen_label_train(workdir):
    recs = ds.read_jsonl(workdir / "lab.jsonl")
    assert len(recs) == 8 and all(r.labeled for r in recs)
    assert [r.nt for r in recs] == [2] * 4 + [3] * 4
    load_model(workdir / "model.json")


def test_label_in_place(tmp_path):
    path = tmp_path / "d.jsonl"
    assert run("gen", "--nt", "2", "--count", "2", "--out", path) == 0
    assert run("label", path, "--starts", "1") == 0
    assert all(r.labeled for r in ds.read_jsonl(path))


def test_eval_and_ecdf(workdir):
    out = workdir / "eval.csv"
    assert run("eval", workdir / "lab.jsonl", "--model", workdir / "model.json", "--symbols", "500",
               "--out", out) == 0
    assert header(out) == ["technique", "nt", "scenario_id", "psi", "mode", "mc_symbols"]
    with open(out, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 8 * 6
    ecdf_out = workdir / "ecdf.csv"
    assert run("ecdf", out, "--out", ecdf_out) == 0
    assert header(ecdf_out) == ["technique", "nt", "psi", "cumulative_fraction"]


def test_eval_subset_without_model(workdir):
    out = workdir / "eval_co.csv"
    assert run("eval", workdir / "lab.jsonl", "--techniques", "CO,ZFBF", "--out", out) == 0
    assert run("eval", workdir / "lab.jsonl", "--out", out) == 1   # NN needs --model


def test_timing(workdir):
    out = workdir / "timing.csv"
    assert run("timing", "--nt", "2", "--count", "2", "--starts", "1", "--model",
               workdir / "model.json", "--out", out) == 0
    assert header(out) == ["technique", "nt", "mean_seconds", "count"]


def test_validate_success_and_failure(tmp_path, monkeypatch):
    out = tmp_path / "v.csv"
    assert run("validate", "--count", "2", "--symbols", "20000", "--out", out) == 0
    assert header(out)[:3] == ["index", "nt", "pe1"]

    def failing(**kwargs):
        return [ValidationRow(0, 2, 0.1, 0.1, 0.5, 0.1, 0.001, 0.001, 1000, 5.0)]

    monkeypatch.setattr(cli, "validation_suite", failing)
    assert run("validate", "--count", "1") == 2


def test_graymap(tmp_path, capsys):
    assert run("graymap", "--order", "4") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "bits,in_phase,quadrature,re,im"
    assert lines[1].startswith("00,1,1,")
    assert run("graymap", "--order", "8") == 1


def test_config_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"nt": [4], "count": 3, "seed": 2, "out": str(tmp_path / "g.jsonl")}))
    assert run("gen", "--config", conf) == 0
    recs = ds.read_jsonl(tmp_path / "g.jsonl")
    assert len(recs) == 3 and {r.nt for r in recs} == {4}
    # flags override the file
    assert run("gen", "--config", conf, "--count", "1") == 0
    assert len(ds.read_jsonl(tmp_path / "g.jsonl")) == 1


@pytest.mark.parametrize("content", ['{"epochs": 3}', "[1, 2]", "{not json"])
def test_bad_config_is_usage_error(tmp_path, content):
    conf = tmp_path / "c.json"
    conf.write_text(content)
    assert run("gen", "--config", conf) == 1


@pytest.mark.parametrize("argv", [[], ["bogus"], ["gen", "--nt", "1"], ["gen", "--count", "0"],
                                  ["gen", "--seed", "x"], ["train"], ["eval"]])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as exc:
        run(*argv)
    assert exc.value.code == 1


def test_missing_input_file(tmp_path):
    assert run("label", tmp_path / "nope.jsonl") == 1
    assert run("ecdf", tmp_path / "nope.csv") == 1


def test_train_needs_labels(tmp_path):
    path = tmp_path / "d.jsonl"
    run("gen", "--nt", "2", "--count", "2", "--out", path)
    assert run("train", path, "--model", tmp_path / "m.json") == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nomabeam.cli", "graymap", "--order", "16"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and len(res.stdout.splitlines()) == 17
    res = subprocess.run([sys.executable, "-m", "nomabeam.cli", "gen", "--nt", "x"],
                         capture_output=True, text=True)
    assert res.returncode == 1
