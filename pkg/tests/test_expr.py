"""Unit tests of the expression parser, serializer, and evaluators."""

import pytest

from daeobs import expr
from daeobs.errors import EvalDomainError, ExprSyntaxError
from daeobs.ldnum import LD


def strip_pos(node):
    kind = node[0]
    if kind in ("num", "var"):
        return node[:2]
    if kind == "neg":
        return ("neg", strip_pos(node[1]))
    if kind == "bin":
        return ("bin", node[1], strip_pos(node[2]), strip_pos(node[3]))
    return ("call", node[1], tuple(strip_pos(a) for a in node[2]))


def test_min_call():
    node = expr.parse_expr("min(V, 0.98)")
    assert strip_pos(node) == (
        "call", "min", (("var", "V"), ("num", 0.98))
    )


def test_unary_minus_binds_looser_than_pow():
    node = expr.parse_expr("-x^2")
    assert strip_pos(node) == (
        "neg", ("bin", "^", ("var", "x"), ("num", 2.0))
    )


def test_precedence_and_associativity():
    assert strip_pos(expr.parse_expr("a - b - c")) == (
        "bin", "-", ("bin", "-", ("var", "a"), ("var", "b")), ("var", "c")
    )
    assert strip_pos(expr.parse_expr("a + b * c")) == (
        "bin", "+", ("var", "a"), ("bin", "*", ("var", "b"), ("var", "c"))
    )
    # ^ is left-associative per the grammar
    assert strip_pos(expr.parse_expr("a ^ b ^ c")) == (
        "bin", "^", ("bin", "^", ("var", "a"), ("var", "b")), ("var", "c")
    )


def test_negative_exponent():
    node = expr.parse_expr("x^-2")
    assert strip_pos(node) == (
        "bin", "^", ("var", "x"), ("neg", ("num", 2.0))
    )


def test_scientific_numbers():
    assert expr.parse_expr("1.5e-3")[1] == 1.5e-3
    assert expr.parse_expr(".25")[1] == 0.25


def test_syntax_error_position():
    with pytest.raises(ExprSyntaxError) as ei:
        expr.parse_expr("x + * 2")
    assert ei.value.line == 1 and ei.value.col == 5


def test_unexpected_character_position():
    with pytest.raises(ExprSyntaxError) as ei:
        expr.parse_expr("a + $b")
    assert ei.value.col == 5


def test_arity_error():
    with pytest.raises(ExprSyntaxError):
        expr.parse_expr("min(a)")
    with pytest.raises(ExprSyntaxError):
        expr.parse_expr("abs(a, b)")


def test_unknown_function():
    with pytest.raises(ExprSyntaxError):
        expr.parse_expr("tan(a)")


def test_unbalanced_parens():
    with pytest.raises(ExprSyntaxError):
        expr.parse_expr("(a + b")


def test_free_variables_and_nonsmooth_count():
    node = expr.parse_expr("min(a, b) + abs(c) * max(a, 2)")
    assert expr.free_variables(node) == {"a", "b", "c"}
    assert expr.count_nonsmooth(node) == 3


@pytest.mark.parametrize("text", [
    "min(V, 0.98)",
    "-x^2",
    "a - (b - c)",
    "(a + b) * c / d",
    "2 * x ^ (y + 1) - abs(z)",
    "exp(-t) + log(sqrt(x))",
])
def test_round_trip(text):
    node = expr.parse_expr(text)
    assert strip_pos(expr.parse_expr(expr.to_str(node))) == strip_pos(node)


def test_compiled_matches_tree_eval():
    node = expr.parse_expr("min(x, 0.98) * max(y, x) + abs(x - y) ^ 2")
    fn = expr.compile_exprs((node,), ("x", "y"))
    for x, y in [(0.5, 0.2), (1.5, 1.5), (-1.0, 2.0)]:
        assert fn(x, y)[0] == expr.tree_eval(node, {"x": x, "y": y})


def test_compiled_over_ld_scalars():
    node = expr.parse_expr("min(x, y) + x * y")
    fn = expr.compile_exprs((node,), ("x", "y"))
    r = fn(LD(1.0, (1.0, 0.0)), LD(2.0, (0.0, 1.0)))[0]
    assert r.v == 3.0
    assert r.d == (3.0, 1.0)  # d(min)=dx plus product rule


def test_compile_substitution():
    node = expr.parse_expr("k * x")
    fn = expr.compile_exprs((node,), ("x",), subst={"k": 2.5})
    assert fn(2.0) == (5.0,)


def test_compile_empty_block():
    assert expr.compile_exprs((), ("x",))(1.0) == ()


def test_tree_eval_domain_error_reports_position():
    node = expr.parse_expr("1 + x / (y - y)")
    with pytest.raises(EvalDomainError) as ei:
        expr.tree_eval(node, {"x": 1.0, "y": 2.0})
    assert "line 1" in str(ei.value)


def test_branch_control_records_and_overrides():
    node = expr.parse_expr("min(x, y) + abs(x)")
    ctl = expr.BranchControl()
    v = expr.tree_eval(node, {"x": -1.0, "y": 2.0}, branches=ctl)
    assert v == 0.0
    assert ctl.recorded == [0, 1]  # min picks x, abs picks the -x branch
    forced = expr.BranchControl(overrides=[1, 0])
    r = expr.tree_eval(
        node, {"x": LD(-1.0, (1.0,)), "y": LD(2.0, (0.0,))}, branches=forced
    )
    # forced branches: min row from y, abs row from +x
    assert r.d == (1.0,)
