import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsgkit.predicate import (Binary, Call, Ident, ListLiteral, Literal, Not, PredicateSyntaxError, TriState,
                              conjoin, disjoin, evaluate, evaluate_value, free_identifiers, negate,
                              parse_predicate, render, UNDEFINED)

from oracles import random_ast, random_env, ref_evaluate

T, F, U = TriState.TRUE, TriState.FALSE, TriState.UNKNOWN


class TestParse:
    def test_membership_from_listing(self):
        ast = parse_predicate("account_status in ['ACTIVE', 'SUSPENDED']")
        assert ast == Binary("in", Ident("account_status"),
                             ListLiteral((Literal("ACTIVE", "string"), Literal("SUSPENDED", "string"))))
        assert len(ast.right.items) == 2

    def test_equality_over_sum(self):
        ast = parse_predicate("order_total == sum(line_items)")
        assert ast == Binary("==", Ident("order_total"), Call("sum", Ident("line_items")))

    def test_dangling_operator_reports_column(self):
        with pytest.raises(PredicateSyntaxError) as err:
            parse_predicate("x >")
        assert (err.value.line, err.value.column) == (1, 4)

    @pytest.mark.parametrize("text", ["a < b < c", "x in 5", "foo(x)", "sum(a, b)", "not", "[x]", "a ==", "'open",
                                      "and.x == 1"])
    def test_rejects_malformed(self, text):
        with pytest.raises(PredicateSyntaxError):
            parse_predicate(text)

    def test_precedence(self):
        assert parse_predicate("a or b and c") == Binary("or", Ident("a"), Binary("and", Ident("b"), Ident("c")))
        assert parse_predicate("1 + 2 * 3 == 7") == Binary(
            "==", Binary("+", Literal(1, "int"), Binary("*", Literal(2, "int"), Literal(3, "int"))), Literal(7, "int"))
        assert parse_predicate("not a == b") == Not(Binary("==", Ident("a"), Ident("b")))

    def test_negative_and_decimal_literals(self):
        assert parse_predicate("x > -1.50") == Binary(">", Ident("x"), Literal(Decimal("-1.50"), "decimal"))

    def test_multiline_position(self):
        with pytest.raises(PredicateSyntaxError) as err:
            parse_predicate("a == 1 and\n  b ==")
        assert err.value.line == 2


class TestEvaluate:
    def test_membership_true(self):
        pred = parse_predicate("account_status in ['ACTIVE','SUSPENDED']")
        assert evaluate(pred, {"account_status": "ACTIVE"}) is T

    def test_sum_of_items(self):
        pred = parse_predicate("order_total == sum(line_items)")
        assert evaluate(pred, {"order_total": 30, "line_items": [10, 20]}) is T

    def test_unbound_makes_unknown(self):
        assert evaluate(parse_predicate("x > 5 and y < 2"), {"x": 10}) is U

    def test_kleene_short_circuits(self):
        assert evaluate(parse_predicate("x > 5 and y < 2"), {"x": 1}) is F
        assert evaluate(parse_predicate("x > 5 or y < 2"), {"x": 10}) is T

    def test_null_equality(self):
        assert evaluate(parse_predicate("x == null"), {"x": None}) is T
        assert evaluate(parse_predicate("x == null"), {"x": 0}) is F
        assert evaluate(parse_predicate("x > 0"), {"x": None}) is U

    def test_type_mismatch_is_unknown(self):
        assert evaluate(parse_predicate("x == 'A'"), {"x": 1}) is U
        assert evaluate(parse_predicate("x < 'A'"), {"x": 1}) is U

    def test_decimal_arithmetic_is_exact(self):
        assert evaluate(parse_predicate("a + b == 0.3"), {"a": 0.1, "b": 0.2}) is T
        assert evaluate_value(parse_predicate("10 / 3"), {}) == Decimal("3.3333")
        assert evaluate_value(parse_predicate("x / 0"), {"x": 1}) is UNDEFINED

    def test_nested_paths(self):
        assert evaluate(parse_predicate("acct.tier == 'GOLD'"), {"acct": {"tier": "GOLD"}}) is T
        assert evaluate(parse_predicate("acct.tier == 'GOLD'"), {"acct": {}}) is U

    def test_functions(self):
        env = {"xs": [3, 1, 2], "s": "abc"}
        assert evaluate(parse_predicate("min(xs) == 1 and max(xs) == 3 and count(xs) == 3 and len(s) == 3"), env) is T
        assert evaluate(parse_predicate("min(xs) == 1"), {"xs": []}) is U

    def test_reference_evaluator_agreement(self):
        rng = random.Random(20240611)
        for _ in range(2000):
            ast, env = random_ast(rng), random_env(rng)
            assert evaluate(ast, env).value == ref_evaluate(ast, env), render(ast)


class TestFreeIdentifiers:
    def test_listing_invariant(self):
        assert free_identifiers(parse_predicate("order_total == sum(line_items)")) == {"order_total", "line_items"}

    def test_literal(self):
        assert free_identifiers(parse_predicate("true")) == set()

    def test_dedup(self):
        assert free_identifiers(parse_predicate("a.b > a.b")) == {"a.b"}


class TestAlgebra:
    def test_negate_matches_not(self):
        rng = random.Random(5)
        for _ in range(500):
            ast, env = random_ast(rng), random_env(rng)
            assert evaluate(negate(ast), env) is evaluate(Not(ast), env)

    def test_disjoin_merges_memberships(self):
        merged = disjoin([parse_predicate("x == 'A'"), parse_predicate("x == 'B'")])
        assert render(merged) == "x in ['A', 'B']"

    def test_conjoin_empty_is_true(self):
        assert evaluate(conjoin([]), {}) is T


def _expressible(e) -> bool:
    """Whether the grammar can spell ``e`` (the right side of ``in`` must be a list or field)."""
    if isinstance(e, Binary):
        if e.op == "in" and not isinstance(e.right, (ListLiteral, Ident)):
            return False
        return _expressible(e.left) and _expressible(e.right)
    if isinstance(e, Not):
        return _expressible(e.operand)
    if isinstance(e, Call):
        return _expressible(e.arg)
    return True


def test_render_round_trip_on_random_asts():
    rng = random.Random(11)
    checked = 0
    for _ in range(1500):
        ast = random_ast(rng)
        if _expressible(ast):
            checked += 1
            assert parse_predicate(render(ast)) == ast
    assert checked > 1000


_names = st.sampled_from(["a", "b", "acct.limit", "flag"])
_atoms = st.one_of(
    st.integers(-1000, 1000).map(lambda v: Literal(v, "int")),
    st.decimals(-100, 100, places=2, allow_nan=False, allow_infinity=False).map(lambda v: Literal(v, "decimal")),
    st.text("XYZ' \\", max_size=4).map(lambda v: Literal(v, "string")),
    st.booleans().map(lambda v: Literal(v, "bool")),
    st.just(Literal(None, "null")),
    _names.map(Ident),
)
_exprs = st.recursive(
    _atoms,
    lambda inner: st.one_of(
        inner.map(Not),
        st.tuples(st.sampled_from(["and", "or", "==", "<", "+", "-", "*", "/"]), inner, inner)
        .map(lambda t: Binary(*t)),
        inner.map(lambda e: Call("sum", e)),
    ),
    max_leaves=8,
)


@settings(max_examples=300, deadline=None)
@given(_exprs)
def test_render_parse_identity(expr):
    assert parse_predicate(render(expr)) == expr


@settings(max_examples=300, deadline=None)
@given(_exprs, st.dictionaries(_names, st.one_of(st.integers(-9, 9), st.booleans(), st.none(), st.text("XY", max_size=2))))
def test_evaluate_never_raises(expr, env):
    assert evaluate(expr, env) in (T, F, U)
