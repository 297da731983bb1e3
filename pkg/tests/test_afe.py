import pytest

from finch import ir
from finch.afe import (RuleCapExceeded, RuleId, RuleInapplicable, apply_rule, lower_pending,
                       run_afe)
from finch.analysis import DepFacts
from finch.frontend import parse, parse_stmt, pretty, pretty_stmt
from finch.harness import KERNEL_INPUTS, kernel_names, kernel_source
from finch.runtime import serial_oracle

RUNNING_EXAMPLE = """
global cond = true;
def s1() { }
def s2() { }
def s3() { }
def s4() { }
def example(n) {
  s1();
  finish {
    for (i = 0; i < n; i++) {
      async {
        if (cond) {
          finish { s2(); }
          finish { s3(); }
        }
      }
    }
  }
  s4();
}
def main() { example(4); }
"""

LOOP = "for (i = 0; i < n; i++) { async { if (cond) { s2(); s3(); } } }"

# the running example after each rule, in firing order
GOLDEN_CHAIN = [
    (RuleId.FinishFusion,
     "s1(); finish { for (i = 0; i < n; i++) { async { if (cond) { finish { s2(); s3(); } } } } } s4();"),
    (RuleId.FinishIfInterchange,
     "s1(); finish { for (i = 0; i < n; i++) { async { finish { if (cond) { s2(); s3(); } } } } } s4();"),
    (RuleId.AsyncFinishInterchange,
     "s1(); finish { for (i = 0; i < n; i++) { finish { async { if (cond) { s2(); s3(); } } } } } s4();"),
    (RuleId.LoopFinishInterchange, f"s1(); finish {{ finish {{ {LOOP} }} }} s4();"),
    (RuleId.TailFinishElim, f"s1(); finish {{ {LOOP} }} s4();"),
    (RuleId.FinishExpandUpper, f"finish {{ s1(); {LOOP} }} s4();"),
    (RuleId.FinishExpandLower, f"finish {{ s1(); {LOOP} s4(); }}"),
]

DECLS = "global a = 0; global b = 0; global c = 0;"
FACTS_SRC = DECLS + "def boom() { throw exc(Bad); } def main() { }"


def _facts():
    return DepFacts(parse(FACTS_SRC))


def _finish_count(node) -> int:
    return sum(isinstance(n, ir.Finish) for n in node.walk())


def test_running_example_golden_chain():
    program, report = run_afe(parse(RUNNING_EXAMPLE))
    history = report.history["example"]
    assert [rule for rule, _ in history[:7]] == [r.value for r, _ in GOLDEN_CHAIN]
    for (rule, body), (_, golden) in zip(history, GOLDEN_CHAIN):
        assert ir.structurally_equal(body, parse_stmt(golden)), (rule, pretty_stmt(body))
    # the method pull finishes the job
    assert history[7][0] == RuleId.FinishMethodPull.value
    assert ir.structurally_equal(program.method("example").body, parse_stmt(f"s1(); {LOOP} s4();"))
    assert ir.structurally_equal(program.method("main").body,
                                 parse_stmt("finish { example(4); }"))


def test_nqueens_keeps_a_single_finish_around_the_first_call():
    program, report = run_afe(parse(kernel_source("nqueens")))
    assert set(report.pulled) >= {"nqueens", "find_queens"}
    finishes = [(m.name, _finish_count(m.body)) for m in program.methods]
    assert sum(n for _, n in finishes) == 1
    assert dict(finishes)["main"] == 1


def test_health_rollback_restores_the_method_exactly():
    original = parse(kernel_source("health"))
    program, report = run_afe(original)
    assert "village" in report.pulled
    assert "hospital" in [m for m, _ in report.rollbacks]
    assert pretty_stmt(program.method("hospital").body) == pretty_stmt(
        original.method("hospital").body)
    assert program.method("hospital") == original.method("hospital")


def test_fusion_refused_on_dependence():
    site = parse_stmt("finish { async { a = 1; } } finish { async { b = a; } }")
    with pytest.raises(RuleInapplicable) as err:
        apply_rule(RuleId.FinishFusion, site, _facts())
    assert "depend" in err.value.reason
    site = parse_stmt("finish { async { a = 1; } } finish { async { b = c; } }")
    fused = apply_rule(RuleId.FinishFusion, site, _facts())
    assert ir.structurally_equal(fused, parse_stmt("finish { async { a = 1; } async { b = c; } }"))


def test_plain_mode_refuses_throwing_statements():
    site = parse_stmt("boom(); finish { async { a = 1; } }")
    with pytest.raises(RuleInapplicable):
        apply_rule(RuleId.FinishExpandUpper, site, _facts(), "plain")


def test_expand_upper_exception_form():
    site = parse_stmt("boom(); finish { async { a = 1; } }")
    out = apply_rule(RuleId.FinishExpandUpper, site, _facts(), "exceptions")
    want = """finish {
      _te = null;
      try { boom(); } catch (_tx: Exception) { _te = _tx; }
      if (_te == null) { async { a = 1; } }
    } pending(_te)"""
    assert ir.structurally_equal(out, parse_stmt(want))


def test_tail_finish_exception_form_wraps_in_me():
    site = parse_stmt("finish { finish { async { a = 1; } boom(); } }")
    out = apply_rule(RuleId.TailFinishElim, site, _facts(), "exceptions")
    want = "try { finish { async { a = 1; } boom(); } } catch (_tx: Exception) { throw ME(_tx); }"
    assert ir.structurally_equal(out, parse_stmt(want))


def test_try_finish_exchange_routes_uncaught_kinds_through_pending():
    site = parse_stmt("try { finish { async { a = 1; } boom(); } } catch (x: Bad) { b = 1; }")
    out = apply_rule(RuleId.TryFinishExchange, site, _facts(), "exceptions")
    want = """finish {
      _tu = null;
      _tt = null;
      try {
        try {
          try { async { a = 1; } boom(); } catch (_tx: Exception) { throw ME(_tx); }
        } catch (_ty: Bad) { _tt = _ty; }
      } catch (_tz: Exception) { _tu = _tz; }
    } pending(_tu)
    if (_tt != null) { x = _tt; b = 1; }"""
    assert ir.structurally_equal(out, parse_stmt(want))
    with pytest.raises(RuleInapplicable):
        apply_rule(RuleId.TryFinishExchange, site, _facts(), "plain")


def test_exception_kernels_fire_exception_rules():
    _, report = run_afe(parse(kernel_source("exc_pending")), "exceptions")
    fired = {f.rule for f in report.fired}
    assert {"TailFinishElim", "TryFinishExchange", "FinishExpandLower",
            "FinishFusion", "FinishExpandUpper"} <= fired
    _, plain = run_afe(parse(kernel_source("exc_pending")), "plain")
    assert "TryFinishExchange" not in {f.rule for f in plain.fired}


def test_exception_slot_set_on_pulled_method_with_pending():
    program, report = run_afe(parse(kernel_source("exc_tree")), "exceptions")
    assert "node" in report.pulled
    assert program.method("node").exception_slot
    plain, _ = run_afe(parse(kernel_source("exc_tree")), "plain")
    assert plain.method("node").exception_slot is None


def test_lower_pending_removes_every_pending_list():
    program, _ = run_afe(parse(kernel_source("exc_pending")), "exceptions")
    assert any(isinstance(n, ir.Finish) and n.pending
               for m in program.methods for n in m.body.walk())
    lowered = lower_pending(program)
    assert not any(isinstance(n, ir.Finish) and n.pending
                   for m in lowered.methods for n in m.body.walk())
    args = KERNEL_INPUTS["exc_pending"]
    a, b = serial_oracle(program, args), serial_oracle(lowered, args)
    assert (a.checksum, a.outcome) == (b.checksum, b.outcome)


def test_rule_cap():
    with pytest.raises(RuleCapExceeded):
        run_afe(parse(RUNNING_EXAMPLE), cap=3)


def test_afe_is_idempotent_on_its_output():
    once, _ = run_afe(parse(kernel_source("nqueens")))
    twice, report = run_afe(once)
    assert ir.programs_equal(once, twice)
    assert report.fired == []


@pytest.mark.parametrize("name", kernel_names())
def test_finish_count_never_grows_in_plain_mode(name):
    p = parse(kernel_source(name))
    q, _ = run_afe(p)
    args = KERNEL_INPUTS[name]
    before, after = serial_oracle(p, args), serial_oracle(lower_pending(q), args)
    assert after.counters.finishes <= before.counters.finishes
    assert (after.checksum, after.outcome) == (before.checksum, before.outcome)


def test_pretty_output_of_afe_reparses():
    for name in kernel_names():
        for mode in ("plain", "exceptions"):
            q, _ = run_afe(parse(kernel_source(name)), mode)
            assert ir.programs_equal(parse(pretty(q)), q)
