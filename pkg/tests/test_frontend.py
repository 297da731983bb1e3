import random

import pytest
from hypothesis import given, settings, strategies as st

from finch import ir
from finch.frontend import (FinchSyntaxError, IllFormedProgram, parse, parse_expr, parse_stmt,
                            pretty)
from finch.harness import kernel_names, kernel_source
from finch.wellformed import well_formed
from progs import random_program


@pytest.mark.parametrize("name", kernel_names())
def test_kernel_round_trip(name):
    p = parse(kernel_source(name))
    text = pretty(p)
    assert ir.programs_equal(parse(text), p)
    assert pretty(parse(text)) == text


@settings(max_examples=150, deadline=None)
@given(st.randoms(use_true_random=False))
def test_random_round_trip(rng):
    p = parse(random_program(rng))
    again = parse(pretty(p))
    assert ir.programs_equal(again, p)
    assert pretty(again) == pretty(p)


def test_precedence():
    e = parse_expr("1 + 2 * 3 << 1 == 14 && !false")
    assert isinstance(e, ir.Binary) and e.op == "&&"
    assert parse_expr("a - b - c") == parse_expr("(a - b) - c")
    assert parse_expr("a >> i + j & 1") == parse_expr("(a >> (i + j)) & 1")


def test_for_increment_sugar():
    s = parse_stmt("for (i = 0; i < n; i++) { x = i; }")
    assert isinstance(s, ir.For)
    assert ir.structurally_equal(s.step, ir.Assign("i", ir.Binary("+", ir.Var("i"), ir.Int(1))))


def test_syntax_error_has_location():
    with pytest.raises(FinchSyntaxError) as err:
        parse("def main() {\n  x = ;\n}\n")
    assert err.value.loc[0] == 2


def test_structural_equality_ignores_locations_and_temp_names():
    a = parse_stmt("_ta1 = 3; x = _ta1;")
    b = parse_stmt("_tb7 = 3;\n\n x = _tb7;")
    assert ir.structurally_equal(a, b)
    assert not ir.structurally_equal(a, parse_stmt("_ta1 = 3; x = 4;"))


@pytest.mark.parametrize("src, fragment", [
    ("def main() { advanceAll; }", "advanceAll outside"),
    ("def main() { foo(); }", "undefined method"),
    ("global g = 0; def f(g) { } def main() { f(1); }", "shadows a global"),
    ("def main() { break; }", "break outside"),
    ("def main() { x[0] = 1; }", "must be a global"),
    ("def f() { } def f() { } def main() { }", "duplicate method"),
    ("def f() { }", "entry method"),
])
def test_ill_formed(src, fragment):
    with pytest.raises(IllFormedProgram) as err:
        parse(src)
    assert fragment in str(err.value)


def test_well_formed_accepts_clocked_advance():
    p = parse("def main() { finish { async clocked(c) { advanceAll; } } }")
    assert well_formed(p) == []


def test_every_kernel_is_well_formed():
    for name in kernel_names():
        assert well_formed(parse(kernel_source(name))) == []


def test_random_programs_parse():
    for seed in range(50):
        parse(random_program(random.Random(seed)))
