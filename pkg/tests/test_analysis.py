import random

from finch import ir
from finch.analysis import (DepFacts, build_call_graph, depends, escaping_asyncs,
                            has_escaping_jump, may_throw)
from finch.frontend import parse, parse_stmt
from finch.runtime import serial_oracle
from progs import GLOBALS, Gen

CHAIN = """
global a = 0;
global b = 0;
def leaf() { a = a + 1; }
def spawner() { async { leaf(); } }
def even(n) { if (n > 0) { odd(n - 1); } }
def odd(n) { if (n > 0) { even(n - 1); } }
def thrower() { throw exc(Boom); }
def main() { spawner(); even(3); b = 2; }
"""


def _main_stmts(p):
    return ir.flatten(p.method("main").body)


def test_call_graph_order_is_leaf_up():
    cg = build_call_graph(parse(CHAIN))
    order = cg.order()
    assert order.index("leaf") < order.index("spawner") < order.index("main")
    assert order.index("even") < order.index("main")
    assert cg.is_recursive_site("even", "odd") and cg.is_recursive_site("odd", "even")
    assert not cg.is_recursive_site("main", "even")
    assert cg.callers("leaf") == ["spawner"]


def test_escaping_asyncs_stop_at_finish():
    s = parse_stmt("async { x = 1; } finish { async { y = 2; } }")
    found = escaping_asyncs(s)
    assert len(found) == 1 and found[0].body == parse_stmt("x = 1;")


def test_call_leaks_tasks_through_summary():
    p = parse(CHAIN)
    facts = DepFacts(p)
    spawn_call, even_call, assign_b = _main_stmts(p)
    sources = facts.escaping(spawn_call)
    assert sources
    assert not depends(assign_b, sources, facts)
    assert not depends(even_call, sources, facts)
    touch_a = parse_stmt("a = 5;")
    assert depends(touch_a, sources, facts)


def test_read_read_is_not_a_conflict():
    p = parse("global a = 0; global b = 0; global c = 0;"
              "def main() { finish { async { b = a; } c = a; } }")
    facts = DepFacts(p)
    fin = _main_stmts(p)[0]
    first, second = ir.flatten(fin.body)
    assert not depends(second, facts.escaping(first), facts)


def test_may_throw_is_interprocedural_and_respects_catch():
    p = parse(CHAIN + "def safe() { try { thrower(); } catch (e: Boom) { } }"
              "def partial() { try { thrower(); } catch (e: Other) { } }")
    facts = DepFacts(p)
    assert may_throw(parse_stmt("thrower();"), facts)
    assert not may_throw(parse_stmt("safe();"), facts)
    assert may_throw(parse_stmt("partial();"), facts)
    assert not may_throw(parse_stmt("leaf();"), facts)


def test_escaping_jumps():
    assert has_escaping_jump(parse_stmt("if (x) { return; }"))
    assert not has_escaping_jump(parse_stmt("while (x) { break; }"))
    assert has_escaping_jump(parse_stmt("break;"))
    assert not has_escaping_jump(parse_stmt("async { return; }"))


def _reorder_case(rng):
    g = Gen(rng, throws=False)
    header = g.header()
    pool = GLOBALS + ["arr"]
    g.names = rng.sample(pool, rng.randint(1, 3))
    a = f"async {g.block(1)}" if rng.random() < 0.7 else "h0();"
    g.names = rng.sample(pool, rng.randint(1, 3))
    b = g.block(1)
    first = header + f"def main() {{ arr = newarray(4); finish {{ {a} {b} }} }}\n"
    second = header + f"def main() {{ arr = newarray(4); finish {{ {b} {a} }} }}\n"
    return first, second


def test_analysis_soundness_on_random_reorderings():
    rng = random.Random(20240611)
    independent = 0
    for _ in range(1000):
        first, second = _reorder_case(rng)
        p = parse(first)
        facts = DepFacts(p)
        fin = _main_stmts(p)[-1]
        stmts = ir.flatten(fin.body)
        sources = facts.escaping(stmts[0])
        if not sources or depends(ir.seq(*stmts[1:]), sources, facts):
            continue
        independent += 1
        x, y = serial_oracle(p), serial_oracle(parse(second))
        assert (x.checksum, x.outcome) == (y.checksum, y.outcome), first
    # the property must not hold vacuously
    assert independent >= 50
