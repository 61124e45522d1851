"""Predicate language for contract clauses.

A small expression language with a recursive-descent parser, a renderer
whose output re-parses to the same tree, and a Kleene three-valued
evaluator. Decimals are exact fixed-point with four fractional digits.

Grammar::

    expr     := or_expr
    or_expr  := and_expr ("or" and_expr)*
    and_expr := not_expr ("and" not_expr)*
    not_expr := "not" not_expr | cmp
    cmp      := add (("=="|"!="|"<"|"<="|">"|">="|"in") add)?
    add      := mul (("+"|"-") mul)*
    mul      := prim (("*"|"/") prim)*
    prim     := literal | ident | call | "(" expr ")" | list
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from enum import Enum
from typing import Any, Iterable, Mapping, Union

__all__ = [
    "Literal", "ListLiteral", "Ident", "Not", "Binary", "Call", "Expr",
    "TriState", "UNDEFINED", "PredicateSyntaxError",
    "parse_predicate", "render", "evaluate", "evaluate_value",
    "free_identifiers", "negate", "conjoin", "disjoin", "conjuncts",
    "literal", "to_decimal", "FUNCTIONS", "COMPARISONS",
]

SCALE = Decimal("0.0001")
FUNCTIONS = ("sum", "count", "min", "max", "len")
COMPARISONS = ("==", "!=", "<", "<=", ">", ">=", "in")
KEYWORDS = {"and", "or", "not", "in", "true", "false", "null"}


class TriState(str, Enum):
    TRUE = "TRUE"
    FALSE = "FALSE"
    UNKNOWN = "UNKNOWN"

    @classmethod
    def of(cls, flag: bool) -> "TriState":
        return cls.TRUE if flag else cls.FALSE


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        return False


UNDEFINED = _Undefined()


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    value: Any
    kind: str  # int | decimal | string | bool | null


@dataclass(frozen=True)
class ListLiteral:
    items: tuple[Literal, ...]


@dataclass(frozen=True)
class Ident:
    path: str


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Literal, ListLiteral, Ident, Not, Binary, Call]


def literal(value: Any) -> Literal:
    """Wrap a Python value as a literal node."""
    if value is None:
        return Literal(None, "null")
    if isinstance(value, bool):
        return Literal(value, "bool")
    if isinstance(value, int):
        return Literal(value, "int")
    if isinstance(value, (Decimal, float)):
        return Literal(to_decimal(value), "decimal")
    if isinstance(value, str):
        return Literal(value, "string")
    raise TypeError(f"cannot make a literal from {value!r}")


def to_decimal(value: Any) -> Decimal:
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


# --- lexer -----------------------------------------------------------------

class PredicateSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}")


@dataclass(frozen=True)
class _Token:
    kind: str  # num | str | ident | kw | op | end
    text: str
    value: Any
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<str>'(?:[^'\\\n]|\\.)*'|"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op>==|!=|<=|>=|<|>|\+|-|\*|/|\(|\)|\[|\]|,)
    """,
    re.VERBOSE,
)


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", r"\1", body)


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if m is None:
            raise PredicateSyntaxError(f"unexpected character {text[pos]!r}", line, column)
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            for i, ch in enumerate(chunk):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        elif kind == "num":
            value: Any = Decimal(chunk) if "." in chunk else int(chunk)
            tokens.append(_Token("num", chunk, value, line, column))
        elif kind == "str":
            tokens.append(_Token("str", chunk, _unescape(chunk[1:-1]), line, column))
        elif kind == "ident":
            first = chunk.split(".")[0]
            if chunk in KEYWORDS:
                tokens.append(_Token("kw", chunk, chunk, line, column))
            elif first in KEYWORDS:
                raise PredicateSyntaxError(f"keyword {first!r} used as a field name", line, column)
            else:
                tokens.append(_Token("ident", chunk, chunk, line, column))
        else:
            tokens.append(_Token("op", chunk, chunk, line, column))
        pos = m.end()
    tokens.append(_Token("end", "", None, line, len(text) - line_start + 1))
    return tokens


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _error(self, message: str, tok: _Token | None = None) -> PredicateSyntaxError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        return PredicateSyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def _at(self, kind: str, text: str | None = None) -> bool:
        tok = self.tok
        return tok.kind == kind and (text is None or tok.text == text)

    def _take(self) -> _Token:
        tok = self.tok
        self.i += 1
        return tok

    def _expect(self, kind: str, text: str) -> _Token:
        if not self._at(kind, text):
            raise self._error(f"expected {text!r}")
        return self._take()

    def parse(self) -> Expr:
        expr = self.or_expr()
        if not self._at("end"):
            raise self._error("unexpected token")
        return expr

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self._at("kw", "or"):
            self._take()
            left = Binary("or", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self._at("kw", "and"):
            self._take()
            left = Binary("and", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self._at("kw", "not"):
            self._take()
            return Not(self.not_expr())
        return self.cmp()

    def cmp(self) -> Expr:
        left = self.add()
        tok = self.tok
        if (tok.kind == "op" and tok.text in COMPARISONS) or (tok.kind == "kw" and tok.text == "in"):
            op = self._take().text
            rhs_tok = self.tok
            right = self.add()
            if op == "in" and not isinstance(right, (ListLiteral, Ident)):
                raise PredicateSyntaxError(
                    "right operand of 'in' must be a list or field", rhs_tok.line, rhs_tok.column)
            nxt = self.tok
            if (nxt.kind == "op" and nxt.text in COMPARISONS) or (nxt.kind == "kw" and nxt.text == "in"):
                raise self._error("chained comparison is not allowed")
            return Binary(op, left, right)
        return left

    def add(self) -> Expr:
        left = self.mul()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self._take().text
            left = Binary(op, left, self.mul())
        return left

    def mul(self) -> Expr:
        left = self.prim()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self._take().text
            left = Binary(op, left, self.prim())
        return left

    def _literal(self) -> Literal | None:
        tok = self.tok
        if tok.kind == "num":
            self._take()
            return Literal(tok.value, "decimal" if isinstance(tok.value, Decimal) else "int")
        if tok.kind == "op" and tok.text == "-" and self.tokens[self.i + 1].kind == "num":
            self._take()
            num = self._take().value
            return Literal(-num, "decimal" if isinstance(num, Decimal) else "int")
        if tok.kind == "str":
            self._take()
            return Literal(tok.value, "string")
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self._take()
            return Literal(tok.text == "true", "bool")
        if tok.kind == "kw" and tok.text == "null":
            self._take()
            return Literal(None, "null")
        return None

    def prim(self) -> Expr:
        lit = self._literal()
        if lit is not None:
            return lit
        tok = self.tok
        if tok.kind == "ident":
            self._take()
            if self._at("op", "("):
                if tok.text not in FUNCTIONS:
                    raise PredicateSyntaxError(f"unknown function {tok.text!r}", tok.line, tok.column)
                self._take()
                args = [self.or_expr()]
                while self._at("op", ","):
                    self._take()
                    args.append(self.or_expr())
                self._expect("op", ")")
                if len(args) != 1:
                    raise PredicateSyntaxError(
                        f"function {tok.text!r} takes exactly one argument, got {len(args)}",
                        tok.line, tok.column)
                return Call(tok.text, args[0])
            return Ident(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self._take()
            inner = self.or_expr()
            self._expect("op", ")")
            return inner
        if tok.kind == "op" and tok.text == "[":
            self._take()
            items: list[Literal] = []
            if not self._at("op", "]"):
                while True:
                    item = self._literal()
                    if item is None:
                        raise self._error("list items must be literals")
                    items.append(item)
                    if not self._at("op", ","):
                        break
                    self._take()
            self._expect("op", "]")
            return ListLiteral(tuple(items))
        raise self._error("expected an operand")


def parse_predicate(text: str) -> Expr:
    """Parse predicate text, raising :class:`PredicateSyntaxError` on bad input."""
    return _Parser(text).parse()


# --- rendering -------------------------------------------------------------

_PREC = {"or": 1, "and": 2, "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4, "in": 4,
         "+": 5, "-": 5, "*": 6, "/": 6}
_NOT_PREC = 3


def _render_literal(lit: Literal) -> str:
    if lit.kind == "null":
        return "null"
    if lit.kind == "bool":
        return "true" if lit.value else "false"
    if lit.kind == "string":
        body = lit.value.replace("\\", "\\\\").replace("'", "\\'")
        return f"'{body}'"
    if lit.kind == "decimal":
        text = format(lit.value, "f")
        return text if "." in text else text + ".0"
    return str(lit.value)


def render(expr: Expr) -> str:
    """Render an AST back to concrete syntax using minimal parentheses."""
    return _render(expr, 0, "")


def _render(expr: Expr, parent: int, side: str) -> str:
    if isinstance(expr, Literal):
        return _render_literal(expr)
    if isinstance(expr, ListLiteral):
        return "[" + ", ".join(_render_literal(i) for i in expr.items) + "]"
    if isinstance(expr, Ident):
        return expr.path
    if isinstance(expr, Call):
        return f"{expr.func}({_render(expr.arg, 0, '')})"
    if isinstance(expr, Not):
        text = "not " + _render(expr.operand, _NOT_PREC, "U")
        return f"({text})" if _NOT_PREC < parent else text
    prec = _PREC[expr.op]
    text = f"{_render(expr.left, prec, 'L')} {expr.op} {_render(expr.right, prec, 'R')}"
    if prec < parent or (prec == parent and (side == "R" or prec == 4)):
        return f"({text})"
    return text


# --- evaluation ------------------------------------------------------------

def _is_num(v: Any) -> bool:
    return isinstance(v, (int, Decimal)) and not isinstance(v, bool)


def _fix(value: Decimal) -> Decimal:
    exp = value.as_tuple().exponent
    if isinstance(exp, int) and exp < -4:
        return value.quantize(SCALE, rounding=ROUND_HALF_UP)
    return value


def _normalize(value: Any) -> Any:
    if isinstance(value, float):
        return _fix(Decimal(repr(value)))
    if isinstance(value, Decimal):
        return _fix(value)
    if isinstance(value, (list, tuple)):
        return tuple(_normalize(v) for v in value)
    if value is None or isinstance(value, (bool, int, str)):
        return value
    return UNDEFINED


def _lookup(env: Mapping[str, Any], path: str) -> Any:
    if path in env:
        return _normalize(env[path])
    head, _, rest = path.partition(".")
    if rest and head in env:
        node: Any = env[head]
        for part in rest.split("."):
            if isinstance(node, Mapping) and part in node:
                node = node[part]
            else:
                return UNDEFINED
        return _normalize(node)
    return UNDEFINED


def _tri(value: Any) -> TriState:
    if value is True:
        return TriState.TRUE
    if value is False:
        return TriState.FALSE
    return TriState.UNKNOWN


def _from_tri(t: TriState) -> Any:
    return {TriState.TRUE: True, TriState.FALSE: False}.get(t, UNDEFINED)


def _eq(a: Any, b: Any) -> TriState:
    if a is UNDEFINED or b is UNDEFINED:
        return TriState.UNKNOWN
    if a is None or b is None:
        return TriState.of(a is None and b is None)
    if _is_num(a) and _is_num(b):
        return TriState.of(a == b)
    if isinstance(a, bool) and isinstance(b, bool):
        return TriState.of(a == b)
    if isinstance(a, str) and isinstance(b, str):
        return TriState.of(a == b)
    if isinstance(a, tuple) and isinstance(b, tuple):
        if len(a) != len(b):
            return TriState.FALSE
        result = TriState.TRUE
        for x, y in zip(a, b):
            r = _eq(x, y)
            if r is TriState.FALSE:
                return r
            if r is TriState.UNKNOWN:
                result = r
        return result
    return TriState.UNKNOWN


def _order(op: str, a: Any, b: Any) -> TriState:
    if not ((_is_num(a) and _is_num(b)) or (isinstance(a, str) and isinstance(b, str))):
        return TriState.UNKNOWN
    if op == "<":
        return TriState.of(a < b)
    if op == "<=":
        return TriState.of(a <= b)
    if op == ">":
        return TriState.of(a > b)
    return TriState.of(a >= b)


def _arith(op: str, a: Any, b: Any) -> Any:
    if not (_is_num(a) and _is_num(b)):
        return UNDEFINED
    if op == "/":
        if b == 0:
            return UNDEFINED
        return (Decimal(a) / Decimal(b)).quantize(SCALE, rounding=ROUND_HALF_UP)
    if isinstance(a, int) and isinstance(b, int):
        return {"+": a + b, "-": a - b, "*": a * b}[op]
    a, b = Decimal(a), Decimal(b)
    return _fix({"+": a + b, "-": a - b, "*": a * b}[op])


def _call(func: str, arg: Any) -> Any:
    if func == "len":
        return len(arg) if isinstance(arg, (str, tuple)) else UNDEFINED
    if not isinstance(arg, tuple):
        return UNDEFINED
    if func == "count":
        return len(arg)
    if func == "sum":
        if not all(_is_num(v) for v in arg):
            return UNDEFINED
        total = sum(arg, 0)
        return _fix(total) if isinstance(total, Decimal) else total
    if not arg:
        return UNDEFINED
    if all(_is_num(v) for v in arg) or all(isinstance(v, str) for v in arg):
        return min(arg) if func == "min" else max(arg)
    return UNDEFINED


def evaluate_value(expr: Expr, env: Mapping[str, Any]) -> Any:
    """Evaluate to a runtime value; failures yield :data:`UNDEFINED`."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, ListLiteral):
        return tuple(i.value for i in expr.items)
    if isinstance(expr, Ident):
        return _lookup(env, expr.path)
    if isinstance(expr, Call):
        arg = evaluate_value(expr.arg, env)
        return UNDEFINED if arg is UNDEFINED else _call(expr.func, arg)
    if isinstance(expr, Not):
        t = _tri(evaluate_value(expr.operand, env))
        return {TriState.TRUE: False, TriState.FALSE: True}.get(t, UNDEFINED)
    op = expr.op
    if op == "and":
        left = _tri(evaluate_value(expr.left, env))
        if left is TriState.FALSE:
            return False
        right = _tri(evaluate_value(expr.right, env))
        if right is TriState.FALSE:
            return False
        if left is TriState.TRUE and right is TriState.TRUE:
            return True
        return UNDEFINED
    if op == "or":
        left = _tri(evaluate_value(expr.left, env))
        if left is TriState.TRUE:
            return True
        right = _tri(evaluate_value(expr.right, env))
        if right is TriState.TRUE:
            return True
        if left is TriState.FALSE and right is TriState.FALSE:
            return False
        return UNDEFINED
    a = evaluate_value(expr.left, env)
    b = evaluate_value(expr.right, env)
    if op in ("==", "!="):
        t = _eq(a, b)
        if op == "!=" and t is not TriState.UNKNOWN:
            t = TriState.of(t is TriState.FALSE)
        return _from_tri(t)
    if op in ("<", "<=", ">", ">="):
        return _from_tri(_order(op, a, b))
    if op == "in":
        if a is UNDEFINED or not isinstance(b, tuple):
            return UNDEFINED
        result = TriState.FALSE
        for item in b:
            r = _eq(a, item)
            if r is TriState.TRUE:
                return True
            if r is TriState.UNKNOWN:
                result = r
        return _from_tri(result)
    return _arith(op, a, b)


def evaluate(pred: Expr, env: Mapping[str, Any]) -> TriState:
    """Kleene evaluation of ``pred``; never raises."""
    try:
        return _tri(evaluate_value(pred, env))
    except (InvalidOperation, ArithmeticError, RecursionError):
        return TriState.UNKNOWN


def free_identifiers(expr: Expr) -> set[str]:
    if isinstance(expr, Ident):
        return {expr.path}
    if isinstance(expr, Not):
        return free_identifiers(expr.operand)
    if isinstance(expr, Call):
        return free_identifiers(expr.arg)
    if isinstance(expr, Binary):
        return free_identifiers(expr.left) | free_identifiers(expr.right)
    return set()


# --- algebra used when turning guards into contracts -----------------------

_FLIP = {"==": "!=", "!=": "==", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}


def conjuncts(expr: Expr) -> list[Expr]:
    if isinstance(expr, Binary) and expr.op == "and":
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


def _disjuncts(expr: Expr) -> list[Expr]:
    if isinstance(expr, Binary) and expr.op == "or":
        return _disjuncts(expr.left) + _disjuncts(expr.right)
    return [expr]


def conjoin(parts: Iterable[Expr]) -> Expr:
    parts = list(parts)
    if not parts:
        return Literal(True, "bool")
    out = parts[0]
    for p in parts[1:]:
        out = Binary("and", out, p)
    return out


def disjoin(parts: Iterable[Expr]) -> Expr:
    parts = _merge_memberships(list(parts))
    out = parts[0]
    for p in parts[1:]:
        out = Binary("or", out, p)
    return out


def _membership(expr: Expr) -> tuple[str, list[Literal]] | None:
    if isinstance(expr, Binary) and isinstance(expr.left, Ident):
        if expr.op == "==" and isinstance(expr.right, Literal):
            return expr.left.path, [expr.right]
        if expr.op == "in" and isinstance(expr.right, ListLiteral):
            return expr.left.path, list(expr.right.items)
    return None


def _merge_memberships(parts: list[Expr]) -> list[Expr]:
    """Fold ``x == a or x == b`` into ``x in [a, b]`` (same Kleene meaning)."""
    out: list[Expr] = []
    slots: dict[str, int] = {}
    values: dict[str, list[Literal]] = {}
    for p in parts:
        m = _membership(p)
        if m is None:
            out.append(p)
            continue
        field, items = m
        if field in slots:
            values[field].extend(i for i in items if i not in values[field])
        else:
            slots[field] = len(out)
            values[field] = list(items)
            out.append(p)
    for field, idx in slots.items():
        items = values[field]
        if len(items) > 1 or isinstance(out[idx], Binary) and out[idx].op == "in":
            out[idx] = Binary("in", Ident(field), ListLiteral(tuple(items)))
    return out


def negate(expr: Expr) -> Expr:
    """Logical negation pushed inward; equivalent to ``Not(expr)`` under Kleene logic."""
    if isinstance(expr, Not):
        return expr.operand
    if isinstance(expr, Binary):
        if expr.op == "and":
            return disjoin(negate(p) for p in conjuncts(expr))
        if expr.op == "or":
            return conjoin(negate(p) for p in _disjuncts(expr))
        if expr.op in _FLIP:
            return Binary(_FLIP[expr.op], expr.left, expr.right)
    if isinstance(expr, Literal) and expr.kind == "bool":
        return Literal(not expr.value, "bool")
    return Not(expr)
