import json

import pytest

from finch import cli, harness, ir
from finch.frontend import parse
from finch.harness import (OptLevel, Report, SemanticViolation, StageError, bench,
                           kernel_names, kernel_source, pipeline, read_reports, write_reports)


def test_none_level_is_the_parse_output():
    for name in kernel_names():
        src = kernel_source(name)
        assert ir.programs_equal(pipeline(src, OptLevel.none), parse(src))


def test_nqueens_dcafe_has_one_finish_around_the_first_call():
    program = pipeline(kernel_source("nqueens"), "dcafe")
    found = [(m.name, n) for m in program.methods for n in m.body.walk()
             if isinstance(n, ir.Finish)]
    assert len(found) == 1 and found[0][0] == "main"
    inner = ir.flatten(found[0][1].body)
    assert len(inner) == 1 and isinstance(inner[0], ir.Call)


@pytest.mark.parametrize("level", ["lc", "afe", "dlbc", "dcafe"])
def test_pipeline_is_idempotent_per_level(level):
    for name in kernel_names():
        once = pipeline(kernel_source(name), level)
        assert ir.programs_equal(pipeline(once, level), once)


def test_stage_errors_name_the_stage():
    with pytest.raises(StageError) as err:
        pipeline("def main() { x = ; }", "dcafe")
    assert err.value.stage == "parse"


def test_report_round_trip(tmp_path):
    reports = bench(["exc_pending", "nqueens"], ["none", "dcafe"], [1, 2], repeats=2,
                    inputs={"nqueens": [5]})
    jsonl, csv_path = write_reports(reports, tmp_path / "r.jsonl")
    assert read_reports(jsonl) == reports
    assert len(csv_path.read_text().splitlines()) == len(reports) + 1
    r = reports[0]
    assert Report.from_json(r.to_json()) == r
    assert reports[0].outcome == ("ME", "Late")


def test_bench_rows_and_ordering():
    reports = bench(["nqueens"], ["none", "lc", "dcafe"], [4], repeats=1, inputs={"nqueens": [6]})
    by = {r.opt_level: r for r in reports}
    assert by["dcafe"].counters["asyncs"] <= by["lc"].counters["asyncs"] <= by["none"].counters["asyncs"]
    assert len({r.checksum for r in reports}) == 1
    assert by["dcafe"].rule_log and by["none"].rule_log == []


def test_bench_single_worker_dlbc_runs_serially():
    (r,) = bench(["byzantine"], ["dlbc"], [1], repeats=1)
    assert r.counters["asyncs"] == 0


def test_bench_aborts_on_semantic_violation(monkeypatch):
    real = harness.run

    def corrupt(program, config, args):
        res = real(program, config, args)
        res.checksum = "bad"
        return res

    monkeypatch.setattr(harness, "run", corrupt)
    with pytest.raises(SemanticViolation):
        bench(["nqueens"], ["none"], [1], repeats=1, inputs={"nqueens": [4]})


def test_cli_build_and_afe_trace(capsys):
    assert cli.main(["build", "nqueens", "--opt", "afe", "--afe-trace"]) == 0
    out, err = capsys.readouterr()
    assert "finish {\n    find_queens(n);" in out
    rules = [json.loads(line)["rule"] for line in err.splitlines() if line.startswith("{")]
    assert "FinishMethodPull" in rules


def test_cli_dump_dlbc(capsys):
    assert cli.main(["build", "clocked_bfs", "--opt", "dlbc", "--dump-dlbc"]) == 0
    out = capsys.readouterr().out
    assert "switch (" in out and "idleWorkers()" in out


def test_cli_run_reports_counters(capsys):
    assert cli.main(["run", "nqueens", "--opt", "dcafe", "--workers", "2", "--input", "6",
                     "--check"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["counters"]["finishes"] == 1 and data["checksum"] == data["oracle"]


def test_cli_run_file_with_trace(tmp_path, capsys):
    path = tmp_path / "p.finch"
    path.write_text("global a = 0; def main() { finish { async { a = 2; } } }")
    assert cli.main(["run", str(path), "--trace", "--exceptions"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["trace"] and data["outcome"] is None


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.finch"
    bad.write_text("def main() { x = ; }")
    assert cli.main(["build", str(bad)]) == 1
    real = harness.run

    def corrupt(program, config, args):
        res = real(program, config, args)
        res.checksum = "bad"
        return res

    monkeypatch.setattr(harness, "run", corrupt)
    assert cli.main(["bench", "--kernels", "nqueens", "--levels", "none", "--workers", "1",
                     "--repeats", "1"]) == 2
    capsys.readouterr()


def test_cli_bench_writes_reports(tmp_path, capsys):
    out = tmp_path / "report.jsonl"
    assert cli.main(["bench", "--kernels", "exc_tree", "--levels", "none,afe", "--workers", "1,2",
                     "--repeats", "1", "--out", str(out)]) == 0
    assert len(read_reports(out)) == 4 and out.with_suffix(".csv").exists()
    capsys.readouterr()
