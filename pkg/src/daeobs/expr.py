"""Arithmetic expression parsing and evaluation.

Grammar: numbers (decimal/scientific), identifiers, ``+ - * / ^``, unary
minus, parentheses, and the calls min(a,b), max(a,b), abs, exp, log,
sqrt, sin, cos.  Precedence: ``^`` > unary minus > ``* /`` > ``+ -``,
left-associative.

Expressions evaluate generically over plain floats or :class:`~daeobs.ldnum.LD`
scalars.  The fast path compiles to a Python lambda; a tree-walking
evaluator carries source positions for diagnostics and supports forcing
or recording nonsmooth branch decisions (used by the frozen-branch
algebraic solves).
"""

from __future__ import annotations

import math
import re

from .errors import EvalDomainError, ExprSyntaxError
from . import ldnum
from .ldnum import LD

FUNCTIONS = {
    "min": 2,
    "max": 2,
    "abs": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "sin": 1,
    "cos": 1,
}

NONSMOOTH_FUNCTIONS = ("min", "max", "abs")

# AST nodes are tuples; the last element is the (line, col) position.
#   ("num", value, pos)
#   ("var", name, pos)
#   ("neg", a, pos)
#   ("bin", op, a, b, pos)      op in "+-*/^"
#   ("call", fn, (args...), pos)

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_]\w*)"
    r"|(?P<op>[-+*/^(),]))"
)


def tokenize(text, line=1, col_offset=0):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip leading whitespace before reporting
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            col = pos + len(text[pos:]) - len(stripped) + 1 + col_offset
            raise ExprSyntaxError(
                f"unexpected character {stripped[0]!r}", line, col
            )
        kind = m.lastgroup
        val = m.group(kind)
        col = m.start(kind) + 1 + col_offset
        if kind == "num":
            tokens.append(("num", float(val), (line, col)))
        elif kind == "ident":
            tokens.append(("ident", val, (line, col)))
        else:
            tokens.append((val, val, (line, col)))
        pos = m.end()
    tokens.append(("end", None, (line, len(text) + 1 + col_offset)))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ExprSyntaxError(
                f"expected {kind!r}, found {tok[1]!r}" if tok[1] is not None
                else f"expected {kind!r}, found end of input",
                *tok[2],
            )
        return tok

    def parse(self):
        node = self.additive()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", *tok[2])
        return node

    def additive(self):
        node = self.multiplicative()
        while self.peek()[0] in ("+", "-"):
            op, _, pos = self.next()
            rhs = self.multiplicative()
            node = ("bin", op, node, rhs, pos)
        return node

    def multiplicative(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op, _, pos = self.next()
            rhs = self.unary()
            node = ("bin", op, node, rhs, pos)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            _, _, pos = self.next()
            return ("neg", self.unary(), pos)
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[0] == "^":
            _, _, pos = self.next()
            rhs = self.exponent()
            node = ("bin", "^", node, rhs, pos)
        return node

    def exponent(self):
        # allow a leading sign in the exponent without re-entering the
        # power chain (keeps ^ left-associative)
        if self.peek()[0] == "-":
            _, _, pos = self.next()
            return ("neg", self.exponent(), pos)
        return self.atom()

    def atom(self):
        tok = self.next()
        kind, val, pos = tok
        if kind == "num":
            return ("num", val, pos)
        if kind == "ident":
            if self.peek()[0] == "(":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", *pos)
                self.next()
                args = [self.additive()]
                while self.peek()[0] == ",":
                    self.next()
                    args.append(self.additive())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ExprSyntaxError(
                        f"{val} expects {FUNCTIONS[val]} argument(s), "
                        f"got {len(args)}",
                        *pos,
                    )
                return ("call", val, tuple(args), pos)
            return ("var", val, pos)
        if kind == "(":
            node = self.additive()
            self.expect(")")
            return node
        raise ExprSyntaxError(
            f"unexpected token {val!r}" if val is not None
            else "unexpected end of input",
            *pos,
        )


def parse_expr(text, line=1):
    """Parse one expression string into an AST."""
    return _Parser(tokenize(text, line=line)).parse()


# -- introspection ----------------------------------------------------------


def iter_nodes(node):
    yield node
    kind = node[0]
    if kind == "neg":
        yield from iter_nodes(node[1])
    elif kind == "bin":
        yield from iter_nodes(node[2])
        yield from iter_nodes(node[3])
    elif kind == "call":
        for a in node[2]:
            yield from iter_nodes(a)


def free_variables(node):
    return {n[1] for n in iter_nodes(node) if n[0] == "var"}


def count_nonsmooth(node):
    return sum(
        1 for n in iter_nodes(node)
        if n[0] == "call" and n[1] in NONSMOOTH_FUNCTIONS
    )


# -- serialization ----------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def to_str(node):
    """Render an AST back to the expression grammar."""
    s, _ = _to_str(node)
    return s


def _to_str(node):
    kind = node[0]
    if kind == "num":
        v = node[1]
        if v == int(v) and abs(v) < 1e16:
            return repr(int(v)), _PREC["atom"]
        return repr(v), _PREC["atom"]
    if kind == "var":
        return node[1], _PREC["atom"]
    if kind == "neg":
        s, p = _to_str(node[1])
        if p < _PREC["neg"]:
            s = f"({s})"
        return f"-{s}", _PREC["neg"]
    if kind == "bin":
        op = node[1]
        prec = _PREC[op]
        ls, lp = _to_str(node[2])
        rs, rp = _to_str(node[3])
        if lp < prec:
            ls = f"({ls})"
        # right operand needs parens at equal precedence (left assoc)
        if rp <= prec:
            rs = f"({rs})"
        return f"{ls} {op} {rs}", prec
    if kind == "call":
        args = ", ".join(to_str(a) for a in node[2])
        return f"{node[1]}({args})", _PREC["atom"]
    raise AssertionError(node)


# -- compiled evaluation ----------------------------------------------------


def _dispatch(fn_ld, fn_math):
    def f(a):
        return fn_ld(a) if isinstance(a, LD) else fn_math(a)

    return f


_NAMESPACE = {
    "__builtins__": {},
    "_min": ldnum.ld_min,
    "_max": ldnum.ld_max,
    "_abs": ldnum.ld_abs,
    "_exp": _dispatch(ldnum.ld_exp, math.exp),
    "_log": _dispatch(ldnum.ld_log, math.log),
    "_sqrt": _dispatch(ldnum.ld_sqrt, math.sqrt),
    "_sin": _dispatch(ldnum.ld_sin, math.sin),
    "_cos": _dispatch(ldnum.ld_cos, math.cos),
}


def _gen(node, subst):
    kind = node[0]
    if kind == "num":
        return f"({node[1]!r})"
    if kind == "var":
        name = node[1]
        if name in subst:
            return f"({subst[name]!r})"
        return name
    if kind == "neg":
        return f"(-{_gen(node[1], subst)})"
    if kind == "bin":
        op = "**" if node[1] == "^" else node[1]
        return f"({_gen(node[2], subst)} {op} {_gen(node[3], subst)})"
    if kind == "call":
        args = ", ".join(_gen(a, subst) for a in node[2])
        return f"_{node[1]}({args})"
    raise AssertionError(node)


def compile_exprs(nodes, arg_names, subst=None):
    """Compile a sequence of ASTs to one callable returning a tuple.

    ``subst`` maps identifier names to constant values inlined as
    literals (used for model parameters).
    """
    subst = subst or {}
    if not nodes:
        return lambda *args: ()
    body = ", ".join(_gen(n, subst) for n in nodes)
    src = f"lambda {', '.join(arg_names)}: ({body},)"
    return eval(src, dict(_NAMESPACE))  # noqa: S307 - generated from our AST


# -- tree-walking evaluation ------------------------------------------------


class BranchControl:
    """Records or overrides min/max/abs branch decisions in call order."""

    def __init__(self, overrides=None):
        self.overrides = overrides
        self.recorded = []
        self._i = 0

    def decide(self, natural):
        if self.overrides is not None:
            choice = self.overrides[self._i]
            self._i += 1
        else:
            choice = natural()
        self.recorded.append(choice)
        return choice


def tree_eval(node, env, branches=None):
    """Evaluate an AST over ``env`` (name -> float | LD).

    ``branches`` is an optional :class:`BranchControl`.  Domain errors
    are reported with the source position of the offending node.
    """
    kind = node[0]
    try:
        if kind == "num":
            return node[1]
        if kind == "var":
            return env[node[1]]
        if kind == "neg":
            return -tree_eval(node[1], env, branches)
        if kind == "bin":
            a = tree_eval(node[2], env, branches)
            b = tree_eval(node[3], env, branches)
            op = node[1]
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return a / b
            return a ** b
        if kind == "call":
            fn = node[1]
            args = [tree_eval(a, env, branches) for a in node[2]]
            if fn in NONSMOOTH_FUNCTIONS:
                return _eval_nonsmooth(fn, args, branches)
            return _NAMESPACE[f"_{fn}"](*args)
    except (ZeroDivisionError, ValueError, OverflowError) as e:
        pos = node[-1]
        raise EvalDomainError(
            f"{e} (in {to_str(node)!r} at line {pos[0]}, col {pos[1]})"
        ) from e
    raise AssertionError(node)


def _eval_nonsmooth(fn, args, branches):
    if branches is None:
        return _NAMESPACE[f"_{fn}"](*args)
    if fn == "min":
        a, b = args
        if not isinstance(a, LD) and not isinstance(b, LD):
            branches.decide(lambda: 0 if a <= b else 1)
            return min(a, b)
        pa, pb = ldnum._promote(a, b)
        choice = branches.decide(lambda: ldnum.min_branch(pa, pb))
        return ldnum.ld_min(pa, pb, choice=choice)
    if fn == "max":
        a, b = args
        if not isinstance(a, LD) and not isinstance(b, LD):
            branches.decide(lambda: 0 if a >= b else 1)
            return max(a, b)
        pa, pb = ldnum._promote(a, b)
        choice = branches.decide(lambda: ldnum.min_branch(-pa, -pb))
        return ldnum.ld_max(pa, pb, choice=choice)
    # abs
    (a,) = args
    if not isinstance(a, LD):
        branches.decide(lambda: 0 if a >= 0 else 1)
        return abs(a)
    choice = branches.decide(lambda: ldnum.min_branch(-a, a))
    return ldnum.ld_abs(a, choice=choice)
