import csv
import io
import json
import math
import subprocess
import sys

import pytest

from bugflow.cli import fmt, parse_grid, run
from bugflow.ingest import bug_to_raw, serialize_export

from corpora import DATA, filter_fixture, table_fixture


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "table.jsonl").write_text(serialize_export([bug_to_raw(b) for b in table_fixture()]))
    (d / "fixture.jsonl").write_text(serialize_export([bug_to_raw(b) for b in filter_fixture()[0]]))
    (d / "single.csv").write_text("from,to,mean_hours,median_hours,count\nOpen,Closed,10,10,1\n")
    assert run(["synth", "generate", "--config", str(DATA / "small.yaml"), "--out", str(d / "small.jsonl"),
                "--truth", str(d / "truth.jsonl")]) == 0
    assert run(["ctmc", "fit", "--stats", str(d / "single.csv"), "--out", str(d / "single.json")]) == 0
    return d


class TestFormatting:
    def test_numbers(self):
        assert fmt(10.0) == "10"
        assert fmt(472.91) == "472.91"
        assert fmt(0.1 + 0.2) == repr(0.1 + 0.2)
        assert fmt(None) == ""

    def test_grids(self):
        assert parse_grid("0,1,2").tolist() == [0, 1, 2]
        assert parse_grid("lin:0:10:3").tolist() == [0, 5, 10]
        log = parse_grid("log:1:100:3")
        assert log[0] == 0 and log[1:] == pytest.approx([1, 10, 100])


class TestExamples:
    def test_onap_transitions_row(self, capsys, workdir):
        code, out, _ = invoke(capsys, "stats", "transitions", workdir / "table.jsonl", "--workflow", "onap")
        assert code == 0
        assert "Open,Closed,472.91,73.2,143" in out.splitlines()

    def test_single_node_cdf(self, capsys, workdir):
        code, out, _ = invoke(capsys, "ctmc", "cdf", "--model", workdir / "single.json", "--grid", "10")
        assert code == 0
        header, row = out.splitlines()
        assert header == "t_hours,F"
        t, f = row.split(",")
        assert t == "10" and f.startswith("0.6321") and abs(float(f) - (1 - math.exp(-1))) < 1e-9

    def test_cv_has_ten_repeat_rows(self, capsys, workdir):
        code, out, _ = invoke(capsys, "predict", "cv", workdir / "small.jsonl", "--repeats", "10", "--models", "knn")
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["repeat"] for r in rows] == [str(i) for i in range(10)] + ["mean"]

    def test_paths_columns(self, capsys, workdir):
        _, out, _ = invoke(capsys, "stats", "paths", workdir / "table.jsonl", "--workflow", "onap")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rows[0]["path"] == "Open-In Progress-Closed" and rows[0]["rank"] == "1"
        assert abs(float(rows[0]["fraction"]) - 0.25) <= 0.005

    def test_mean_median_diagnostic(self, capsys, workdir):
        code, _, err = invoke(capsys, "ctmc", "fit", workdir / "table.jsonl", "--workflow", "onap", "--out", workdir / "t.json")
        assert code == 0 and "Open->Closed: mean/median sojourn ratio" in err


class TestExitCodes:
    def test_usage_errors(self, capsys, workdir):
        assert invoke(capsys, "frobnicate")[0] == 1
        assert invoke(capsys, "stats", "paths")[0] == 1
        assert invoke(capsys, "stats", "paths", workdir / "table.jsonl", "--outlier", "huge")[0] == 1
        code, out, err = invoke(capsys, "ctmc", "cdf")
        assert code == 1 and out == "" and "--model" in err

    def test_data_errors(self, capsys, workdir, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"issue_key": "X-1"}\n')
        code, out, err = invoke(capsys, "ingest", bad)
        assert code == 2 and out == "" and "record 1: missing" in err
        assert invoke(capsys, "stats", "paths", tmp_path / "missing.jsonl")[0] == 2
        assert invoke(capsys, "stats", "paths", workdir / "table.jsonl", "--workflow", "nope")[0] == 1

    def test_help(self, capsys):
        assert invoke(capsys, "--help")[0] == 0


class TestFilterCommand:
    def test_report_and_output(self, capsys, workdir):
        code, out, err = invoke(capsys, "filter", workdir / "fixture.jsonl", "--report", workdir / "report.json")
        assert code == 0
        assert len(out.splitlines()) == 9
        report = json.loads((workdir / "report.json").read_text())
        assert report["removed_by_rule"] == {"resolution_status": 3}
        assert json.loads(err) == report

    def test_outlier_flag(self, capsys, workdir):
        _, out, err = invoke(capsys, "filter", workdir / "fixture.jsonl", "--outlier", "mild")
        assert len(out.splitlines()) == 8 and json.loads(err)["removed_by_rule"]["tukey_mild"] == 1


class TestStructuredOutput:
    @pytest.mark.parametrize(
        "argv",
        [
            ["stats", "transitions", "{table}", "--workflow", "onap"],
            ["stats", "paths", "{small}"],
            ["stats", "occupancy", "{small}", "--grid", "log:1:1000:7"],
            ["stats", "entities", "{small}", "--role", "assignee", "--top", "3"],
            ["stats", "self-assign", "{small}"],
            ["stats", "status-table", "{small}", "--priority", "1,2,3"],
            ["ctmc", "cdf", "--model", "{single}", "--grid", "0,5,10"],
        ],
    )
    def test_same_values(self, capsys, workdir, argv):
        paths = {"table": workdir / "table.jsonl", "small": workdir / "small.jsonl", "single": workdir / "single.json"}
        argv = [a.format(**paths) for a in argv]
        _, out_csv, _ = invoke(capsys, *argv, "--format", "csv")
        _, out_js, _ = invoke(capsys, *argv, "--format", "structured")
        rows = list(csv.DictReader(io.StringIO(out_csv)))
        records = [json.loads(line) for line in out_js.splitlines()]
        assert len(rows) == len(records)
        for row, rec in zip(rows, records):
            assert list(row) == list(rec)
            for key, value in rec.items():
                assert row[key] == fmt(value)


def test_console_script_runs(workdir):
    proc = subprocess.run(
        [sys.executable, "-m", "bugflow.cli", "ctmc", "cdf", "--model", str(workdir / "single.json"), "--grid", "10"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("t_hours,F\n10,0.6321")
