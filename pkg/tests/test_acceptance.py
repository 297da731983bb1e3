"""Acceptance suite: one check per primary criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest.
"""

import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from finch import ir  # noqa: E402
from finch.afe import run_afe  # noqa: E402
from finch.analysis import DepFacts, depends  # noqa: E402
from finch.dlbc import apply_dlbc, compute_partition  # noqa: E402
from finch.frontend import parse, parse_stmt, pretty_stmt  # noqa: E402
from finch.harness import (ALL_LEVELS, EXCEPTION_KERNELS, KERNEL_INPUTS, kernel_names,  # noqa: E402
                           kernel_source, pipeline)
from finch.runtime import RuntimeConfig, run, serial_oracle, tag_multiset  # noqa: E402
from test_afe import GOLDEN_CHAIN, RUNNING_EXAMPLE  # noqa: E402
from test_analysis import _reorder_case  # noqa: E402
from test_dlbc import check_partition  # noqa: E402
from test_runtime import PHASED, brute_force_queens  # noqa: E402

WORKERS = (1, 2, 4, 8)


def running_example_chain():
    _, report = run_afe(parse(RUNNING_EXAMPLE))
    history = report.history["example"]
    assert len(history) >= len(GOLDEN_CHAIN)
    for (rule, body), (want_rule, golden) in zip(history, GOLDEN_CHAIN):
        assert rule == want_rule.value, (rule, want_rule)
        assert ir.structurally_equal(body, parse_stmt(golden)), (rule, pretty_stmt(body))


def nqueens_single_finish():
    program = pipeline(kernel_source("nqueens"), "dcafe")
    for n in (4, 6, 8):
        for w in WORKERS:
            res = run(program, RuntimeConfig(n_workers=w), [n])
            assert res.counters.finishes == 1, (n, w, res.counters)


def counter_ordering():
    for name in kernel_names():
        args = KERNEL_INPUTS[name]
        built = {lv: pipeline(kernel_source(name), lv) for lv in ("none", "lc", "afe", "dcafe")}
        for w in WORKERS:
            c = {lv: run(p, RuntimeConfig(n_workers=w), args).counters for lv, p in built.items()}
            assert c["dcafe"].asyncs <= c["lc"].asyncs <= c["none"].asyncs, (name, w, c)
            assert c["dcafe"].finishes <= c["afe"].finishes <= c["none"].finishes, (name, w, c)
    lc = run(pipeline(kernel_source("nqueens"), "lc"), RuntimeConfig(n_workers=8), [8])
    dc = run(pipeline(kernel_source("nqueens"), "dcafe"), RuntimeConfig(n_workers=8), [8])
    assert dc.counters.asyncs <= lc.counters.asyncs / 4, (dc.counters, lc.counters)


def partition_table():
    assert compute_partition(10, 3).sizes() == [3, 3, 2, 2]
    assert compute_partition(12, 3).sizes() == [3, 3, 3, 3]
    for workers in range(1, 65):
        for actualn in range(1, 10_001):
            check_partition(actualn, workers)


def oracle_equivalence():
    for name in kernel_names():
        args = KERNEL_INPUTS[name]
        oracle = serial_oracle(parse(kernel_source(name)), args)
        for level in ALL_LEVELS:
            program = pipeline(kernel_source(name), level)
            for w in WORKERS:
                for seed in range(3):
                    cfg = RuntimeConfig(n_workers=w, seed=seed, jitter=seed > 0)
                    res = run(program, cfg, args)
                    assert (res.checksum, res.outcome) == (oracle.checksum, oracle.outcome), \
                        (name, level.value, w, seed)
    res = run(pipeline(kernel_source("nqueens"), "dcafe"), RuntimeConfig(n_workers=4), [6])
    assert res.store["count"] == brute_force_queens(6) == 4


def exception_preservation():
    for name in EXCEPTION_KERNELS:
        args = KERNEL_INPUTS[name]
        oracle = serial_oracle(parse(kernel_source(name)), args)
        assert oracle.exception is not None
        for level in ("none", "afe", "dcafe"):
            program = pipeline(kernel_source(name), level, "exceptions")
            for w in WORKERS:
                res = run(program, RuntimeConfig(n_workers=w, seed=w, jitter=True), args)
                assert tag_multiset(res.exception) == tag_multiset(oracle.exception), (name, level)
                assert res.outcome == oracle.outcome, (name, level, w, res.outcome)
                assert res.checksum == oracle.checksum, (name, level, w)


def clocked_correctness():
    program, report = apply_dlbc(parse(PHASED))
    assert report.transformed
    n = 24
    expected = serial_oracle(parse(PHASED), [n]).checksum
    for k in (1, 2, 5):
        hook = lambda call, actual, k=k: 0 if call == 1 else k
        res = run(program, RuntimeConfig(n_workers=4, idle_hook=hook, trace=True), [n])
        writes = [(name, i) for kind, name, i, _ in res.trace if kind == "write" and i is not None]
        s1 = [pos for pos, (name, _) in enumerate(writes) if name == "a"]
        s2 = [pos for pos, (name, _) in enumerate(writes) if name == "b"]
        assert max(s1) < min(s2)
        assert sorted(i for name, i in writes if name == "a") == list(range(n))
        assert sorted(i for name, i in writes if name == "b") == list(range(n))
        assert res.counters.asyncs > 0 and res.checksum == expected


def analysis_soundness():
    rng = random.Random(7)
    independent = 0
    for _ in range(1000):
        first, second = _reorder_case(rng)
        p = parse(first)
        facts = DepFacts(p)
        stmts = ir.flatten(ir.flatten(p.method("main").body)[-1].body)
        sources = facts.escaping(stmts[0])
        if not sources or depends(ir.seq(*stmts[1:]), sources, facts):
            continue
        independent += 1
        x, y = serial_oracle(p), serial_oracle(parse(second))
        assert (x.checksum, x.outcome) == (y.checksum, y.outcome), first
    assert independent >= 50


CRITERIA = [
    ("running-example golden chain", 1.0, running_example_chain),
    ("nqueens dcafe finish count is 1", 10.0, nqueens_single_finish),
    ("async/finish counter ordering", 120.0, counter_ordering),
    ("partition table and sweep", 30.0, partition_table),
    ("oracle equivalence", 300.0, oracle_equivalence),
    ("exception preservation", 30.0, exception_preservation),
    ("clocked correctness", 30.0, clocked_correctness),
    ("analysis soundness", 60.0, analysis_soundness),
]


def evaluate(name, limit, fn):
    start = time.perf_counter()
    error = None
    try:
        fn()
    except AssertionError as e:
        error = f"assertion failed: {e}"
    elapsed = time.perf_counter() - start
    if error is None and elapsed > limit:
        error = f"took {elapsed:.1f}s, limit {limit:.0f}s"
    status = "PASS" if error is None else "FAIL"
    line = f"[{status}] {name} ({elapsed:.2f}s)" + (f": {error}" if error else "")
    return error is None, line


@pytest.mark.parametrize("name, limit, fn", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(name, limit, fn, capsys):
    ok, line = evaluate(name, limit, fn)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
