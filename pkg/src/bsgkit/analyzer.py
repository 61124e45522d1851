"""Deterministic rule and constraint extraction from the mini-COBOL AST.

Extraction works in two layers. :func:`scan` walks a parsed program and
returns :class:`Finding` records that keep the structured payload (guard
predicates, computed expressions, error classes). :func:`extract_rules`
and :func:`discover_constraints` turn findings into inventory rules, and
the spec generator re-runs :func:`scan` to recover the payload behind
each rule id.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Iterable, Optional, Sequence

from .artifacts import (BusinessRule, BusinessRuleInventory, ConstraintSpec, LegacyArtifactBundle,
                        SourceLocation, bundle_digest)
from .bsg import DECIMAL, INTEGER, STRING, DataType
from .cobol import (CAnd, CArith, CCond, CCondName, CExpr, CFunc, CIdent, CLit, CNeg, CNot, COr,
                    CRel, Call, Compute, Display, Evaluate, If, LegacyAst, Move, Paragraph, Perform,
                    Statement, StructureMap, expr_names, extract_structure, parse_legacy,
                    perform_range)
from .predicate import (Binary, Call as PCall, Expr, Ident, ListLiteral, Literal, Not, conjoin,
                        conjuncts, disjoin, free_identifiers, literal, negate, render)

logger = logging.getLogger(__name__)

REJECT_SENTINEL = "REJECTED"
HANDLER_WORDS = ("ERROR", "ABEND", "EXCEPTION")
REASON_WORDS = ("REASON", "ERROR-CODE", "ERR-CODE", "MSG", "MESSAGE")
DEFAULT_REJECT_CLASS = "REJECTED"

_ROLE_ORDER = {r: i for i, r in enumerate(
    ("type", "enum", "range", "fk", "default", "reject", "handler", "exemption", "invariant",
     "assign", "compute", "loop", "temporal"))}


class FieldNameCollision(ValueError):
    """Two distinct legacy names normalize to the same field name."""


class UnsupportedConstruct(ValueError):
    pass


def normalize_name(name: str) -> str:
    """``ACCOUNT-STATUS`` -> ``account_status``."""
    return name.lower().replace("-", "_")


def field_name_map(ast: LegacyAst, extra: Iterable[str] = ()) -> dict[str, str]:
    """Legacy name -> normalized name, refusing collisions."""
    names = {d.name for d in ast.data_items}
    for p in ast.paragraphs:
        for st in _walk(p.statements):
            names |= _statement_names(st)
    names |= set(extra)
    mapping: dict[str, str] = {}
    back: dict[str, str] = {}
    for n in sorted(names):
        norm = normalize_name(n)
        if norm in back and back[norm] != n:
            raise FieldNameCollision(f"{back[norm]} and {n} both normalize to {norm}")
        back[norm] = n
        mapping[n] = norm
    return mapping


def is_handler(name: str) -> bool:
    return any(w in name for w in HANDLER_WORDS)


def is_reject_paragraph(name: str) -> bool:
    return name.startswith("REJECT")


# --- COBOL -> predicate conversion -----------------------------------------

class Converter:
    """Translates COBOL conditions and expressions into predicate ASTs."""

    def __init__(self, ast: LegacyAst):
        self.cond_names = ast.condition_names()

    def expr(self, e: CExpr) -> Expr:
        if isinstance(e, CIdent):
            return Ident(normalize_name(e.name))
        if isinstance(e, CLit):
            return literal(e.value)
        if isinstance(e, CNeg):
            inner = self.expr(e.operand)
            if isinstance(inner, Literal) and inner.kind in ("int", "decimal"):
                return literal(-inner.value)
            return Binary("-", literal(0), inner)
        if isinstance(e, CArith):
            return Binary(e.op, self.expr(e.left), self.expr(e.right))
        if isinstance(e, CFunc):
            fname = {"SUM": "sum", "MAX": "max", "MIN": "min", "LENGTH": "len"}.get(e.name)
            if fname is None or len(e.args) != 1:
                raise UnsupportedConstruct(f"FUNCTION {e.name} with {len(e.args)} arguments")
            return PCall(fname, self.expr(e.args[0]))
        raise UnsupportedConstruct(f"expression {e!r}")

    def cond(self, c: CCond) -> Expr:
        if isinstance(c, CRel):
            op = {"=": "==", "<>": "!="}.get(c.op, c.op)
            return Binary(op, self.expr(c.left), self.expr(c.right))
        if isinstance(c, CCondName):
            parent, cn = self.cond_names[c.name]
            field_ = Ident(normalize_name(parent.name))
            parts: list[Expr] = []
            if cn.values:
                vals = [literal(v) for v in cn.values]
                parts.append(Binary("==", field_, vals[0]) if len(vals) == 1
                             else Binary("in", field_, ListLiteral(tuple(vals))))
            for lo, hi in cn.ranges:
                parts.append(Binary("and", Binary(">=", field_, literal(lo)), Binary("<=", field_, literal(hi))))
            return disjoin(parts)
        if isinstance(c, CNot):
            return negate(self.cond(c.operand))
        if isinstance(c, CAnd):
            return Binary("and", self.cond(c.left), self.cond(c.right))
        if isinstance(c, COr):
            return disjoin([self.cond(c.left), self.cond(c.right)])
        raise UnsupportedConstruct(f"condition {c!r}")


def substitute(expr: Expr, defs: dict[str, Expr]) -> Expr:
    if isinstance(expr, Ident):
        return defs.get(expr.path, expr)
    if isinstance(expr, Not):
        return Not(substitute(expr.operand, defs))
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, defs), substitute(expr.right, defs))
    if isinstance(expr, PCall):
        return PCall(expr.func, substitute(expr.arg, defs))
    return expr


# --- findings --------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    """One extracted rule with the structured payload behind it."""

    role: str
    kind: str
    category: str
    confidence: str
    location: SourceLocation
    description: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    paragraph: str = ""
    guard: Optional[Expr] = None
    target: Optional[str] = None
    expr: Optional[Expr] = None
    error_class: Optional[str] = None
    constraint: Optional[ConstraintSpec] = None
    prose: Optional[str] = None
    handler: Optional[str] = None
    successor: Optional[str] = None

    def sort_key(self) -> tuple:
        return (self.location.file, self.location.line_start, self.location.line_end,
                _ROLE_ORDER[self.role], self.description)

    def match_key(self) -> tuple:
        return (str(self.location), self.kind, self.description)

    def to_rule(self, rule_id: str) -> BusinessRule:
        return BusinessRule(rule_id, self.description, self.location, self.inputs, self.outputs,
                            self.confidence, self.category, self.kind, self.constraint)


def _walk(stmts: list[Statement]):
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from _walk(s.then)
            yield from _walk(s.orelse)
        elif isinstance(s, Evaluate):
            for b in s.branches:
                yield from _walk(b.body)


def _statement_names(st: Statement) -> set[str]:
    if isinstance(st, Move):
        return expr_names(st.source) | {t.name for t in st.targets}
    if isinstance(st, Compute):
        return expr_names(st.expr) | {st.target.name}
    if isinstance(st, If):
        return expr_names(st.condition)
    if isinstance(st, Evaluate):
        out = expr_names(st.subject)
        for b in st.branches:
            for c in b.conditions:
                out |= expr_names(c)
        return out
    if isinstance(st, Perform):
        return expr_names(st.until)
    if isinstance(st, Display):
        out = set()
        for i in st.items:
            out |= expr_names(i)
        return out
    if isinstance(st, Call):
        return set(st.using)
    return set()


def _reject_info(block: list[Statement]) -> Optional[tuple[str, Optional[str], set[str]]]:
    """(error class, handler paragraph, sentinel fields) when ``block`` rejects."""
    reason = None
    handler = None
    rejects = False
    sentinels: set[str] = set()
    for st in block:
        if isinstance(st, Move) and isinstance(st.source, CLit) and st.source.kind == "string":
            targets = [t.name for t in st.targets]
            if st.source.value.upper() == REJECT_SENTINEL:
                rejects = True
                sentinels |= set(targets)
            elif any(w in t for t in targets for w in REASON_WORDS):
                reason = st.source.value
                sentinels |= set(targets)
        elif isinstance(st, Perform) and st.until is None:
            if is_reject_paragraph(st.target):
                rejects = True
            elif is_handler(st.target):
                rejects = True
                handler = st.target
    if not rejects:
        return None
    if reason:
        cls = re.sub(r"[^A-Z0-9]+", "_", reason.upper()).strip("_")
    elif handler:
        cls = normalize_name(handler).upper()
    else:
        cls = DEFAULT_REJECT_CLASS
    return cls, handler, sentinels


def sentinel_fields(ast: LegacyAst) -> set[str]:
    """Status/reason fields written only as part of rejection idioms."""
    out: set[str] = set()
    for p in ast.paragraphs:
        blocks: list[list[Statement]] = [p.statements]
        for st in _walk(p.statements):
            if isinstance(st, If):
                blocks += [st.then, st.orelse]
            elif isinstance(st, Evaluate):
                blocks += [b.body for b in st.branches]
        for b in blocks:
            info = _reject_info(b)
            if info:
                out |= info[2]
        if is_reject_paragraph(p.name):
            for st in p.statements:
                if isinstance(st, Move):
                    out |= {t.name for t in st.targets}
    return out


@dataclass
class _Events:
    """Flattened read/write events in perform-expanded execution order."""

    items: list[tuple[str, str, int]] = field(default_factory=list)

    def add(self, op: str, names: Iterable[str], stmt: Statement):
        for n in sorted(names):
            self.items.append((op, n, id(stmt)))


def execution_events(ast: LegacyAst, structure: StructureMap, cond_parents: dict[str, str]) -> _Events:
    ev = _Events()
    paragraphs = {p.name: p for p in ast.paragraphs}

    def reads(names: set[str]) -> set[str]:
        return {cond_parents.get(n, n) for n in names}

    def run(stmts: list[Statement], stack: tuple[str, ...]):
        for st in stmts:
            if isinstance(st, Move):
                ev.add("r", reads(expr_names(st.source)), st)
                ev.add("w", {t.name for t in st.targets}, st)
            elif isinstance(st, Compute):
                ev.add("r", reads(expr_names(st.expr)), st)
                ev.add("w", {st.target.name}, st)
            elif isinstance(st, If):
                ev.add("r", reads(expr_names(st.condition)), st)
                run(st.then, stack)
                run(st.orelse, stack)
            elif isinstance(st, Evaluate):
                ev.add("r", reads(_statement_names(st)), st)
                for b in st.branches:
                    run(b.body, stack)
            elif isinstance(st, Perform):
                ev.add("r", reads(expr_names(st.until)), st)
                for target in perform_range(ast, st):
                    if target in paragraphs and target not in stack:
                        run(paragraphs[target].statements, stack + (target,))
            elif isinstance(st, (Display, Call)):
                ev.add("r", reads(_statement_names(st)), st)

    for entry in structure.entry_points:
        run(paragraphs[entry].statements, (entry,))
    return ev


def field_types(ast: LegacyAst) -> dict[str, DataType]:
    out: dict[str, DataType] = {}
    for d in ast.data_items:
        if d.picture is None:
            continue
        pic = d.picture
        base = STRING if pic.category != "numeric" else (DECIMAL if pic.scale else INTEGER)
        out[normalize_name(d.name)] = DataType("list_of", item=base) if d.occurs else base
    return out


class _Scanner:
    def __init__(self, ast: LegacyAst, structure: StructureMap, file: str):
        self.ast = ast
        self.structure = structure
        self.file = file
        self.conv = Converter(ast)
        self.declared = {d.name for d in ast.data_items} | set(self.conv.cond_names)
        self.sentinels = sentinel_fields(ast)
        self.cond_parents = {c: d.name for c, (d, _) in self.conv.cond_names.items()}
        self.findings: list[Finding] = []
        self.defaults: set[int] = set()
        events = execution_events(ast, structure, self.cond_parents)
        first: dict[str, tuple[str, int]] = {}
        later_read: set[str] = set()
        for op, name, sid in events.items:
            if name not in first:
                first[name] = (op, sid)
            elif op == "r":
                later_read.add(name)
        self.defaults = {sid for name, (op, sid) in first.items() if op == "w" and name in later_read}

    # helpers
    def loc(self, a: int, b: int) -> SourceLocation:
        return SourceLocation(self.file, a, max(a, b))

    def confidence(self, names: Iterable[str], para: Paragraph, base: str = "high") -> str:
        if para.salvaged:
            return "low"
        if base == "high" and any(n not in self.declared for n in names):
            return "medium"
        return base

    def ins(self, *exprs: Optional[Expr]) -> tuple[str, ...]:
        out: set[str] = set()
        for e in exprs:
            if e is not None:
                out |= free_identifiers(e)
        return tuple(sorted(out))

    # procedure division
    def scan_paragraph(self, para: Paragraph):
        if is_reject_paragraph(para.name):
            return
        defs: dict[str, Expr] = {}
        self._block(para.statements, [], para, defs)

    def _block(self, stmts: list[Statement], guards: list[Expr], para: Paragraph, defs: dict[str, Expr]):
        for st in stmts:
            try:
                self._statement(st, guards, para, defs)
            except UnsupportedConstruct as exc:
                logger.info("skipping %s at line %d: %s", type(st).__name__, st.line, exc)

    def _branch(self, body: list[Statement], guard: Expr, guards: list[Expr], span: tuple[int, int],
                cobol_cond: Optional[CCond], para: Paragraph, defs: dict[str, Expr]):
        info = _reject_info(body)
        if info is None:
            self._block(body, guards + [guard], para, dict(defs))
            return
        self._rejection(info, guards + [guard], span, cobol_cond if not guards else None, para, defs)

    def _statement(self, st: Statement, guards: list[Expr], para: Paragraph, defs: dict[str, Expr]):
        if isinstance(st, If):
            g = self.conv.cond(st.condition)
            self._branch(st.then, g, guards, (st.line, st.end_line), st.condition, para, defs)
            if st.orelse:
                self._branch(st.orelse, negate(g), guards, (st.line, st.end_line), None, para, defs)
        elif isinstance(st, Evaluate):
            previous: list[Expr] = []
            for b in st.branches:
                if b.other:
                    g = conjoin(negate(p) for p in previous) if previous else Literal(True, "bool")
                else:
                    here = disjoin([self.conv.cond(c) for c in b.conditions])
                    g = conjoin([negate(p) for p in previous] + [here])
                    previous.append(here)
                self._branch(b.body, g, guards, (st.line, b.end_line), None, para, defs)
        elif isinstance(st, Move):
            self._move(st, guards, para, defs)
        elif isinstance(st, Compute):
            self._compute(st, guards, para, defs)
        elif isinstance(st, Perform) and st.until is not None:
            cond = self.conv.cond(st.until)
            text = f"on exit, {render(cond)} holds"
            self._add(Finding(
                "loop", "computation", "explicit", self.confidence(expr_names(st.until), para),
                self.loc(st.line, st.end_line),
                f"Repeat {normalize_name(st.target)} until {render(cond)}",
                self.ins(cond), (), para.name, prose=text))

    def _guard(self, guards: list[Expr], defs: dict[str, Expr]) -> Optional[Expr]:
        if not guards:
            return None
        return substitute(conjoin(guards), defs)

    def _add(self, f: Finding):
        self.findings.append(f)

    def _move(self, st: Move, guards: list[Expr], para: Paragraph, defs: dict[str, Expr]):
        targets = [t for t in st.targets if t.name not in self.sentinels]
        if not targets:
            return
        value = self.conv.expr(st.source)
        guard = self._guard(guards, defs)
        names = expr_names(st.source) | {t.name for t in targets}
        for t in targets:
            tn = normalize_name(t.name)
            shown = render(value)
            if isinstance(st.source, CLit) and guard is None and id(st) in self.defaults:
                self._add(Finding(
                    "default", "state_transition", "implicit", self.confidence(names, para, "medium"),
                    self.loc(st.line, st.end_line), f"Default {tn} to {shown} before first use",
                    (), (tn,), para.name, target=tn, expr=value))
                defs[tn] = value
                continue
            if isinstance(st.source, CLit):
                desc = f"Set {tn} to {shown}" + (f" when {render(guard)}" if guard is not None else "")
                self._add(Finding(
                    "assign", "state_transition", "explicit", self.confidence(names, para),
                    self.loc(st.line, st.end_line), desc, self.ins(guard), (tn,), para.name,
                    guard=guard, target=tn, expr=value))
            else:
                desc = f"Copy {shown} into {tn}" + (f" when {render(guard)}" if guard is not None else "")
                self._add(Finding(
                    "compute", "computation", "explicit", self.confidence(names, para),
                    self.loc(st.line, st.end_line), desc, self.ins(guard, value), (tn,), para.name,
                    guard=guard, target=tn, expr=value))
            if guard is None:
                defs[tn] = substitute(value, defs)

    def _compute(self, st: Compute, guards: list[Expr], para: Paragraph, defs: dict[str, Expr]):
        tn = normalize_name(st.target.name)
        value = self.conv.expr(st.expr)
        guard = self._guard(guards, defs)
        names = expr_names(st.expr) | {st.target.name}
        prose = None
        if tn in free_identifiers(value):
            prose = f"{tn} updated to {render(value)} using its previous value"
        desc = f"Compute {tn} as {render(value)}" + (f" when {render(guard)}" if guard is not None else "")
        self._add(Finding(
            "compute", "computation", "explicit", self.confidence(names, para),
            self.loc(st.line, st.end_line), desc, self.ins(guard, value), (tn,), para.name,
            guard=guard, target=tn, expr=value, prose=prose))
        if guard is None and prose is None:
            defs[tn] = substitute(value, defs)

    def _rejection(self, info, guards: list[Expr], span: tuple[int, int], cobol_cond: Optional[CCond],
                   para: Paragraph, defs: dict[str, Expr]):
        cls, handler, _ = info
        guard = substitute(conjoin(guards), defs)
        names = set()
        for g in guards:
            names |= free_identifiers(g)
        loc = self.loc(*span)
        shown = render(guard)
        declared = {normalize_name(d) for d in self.declared}
        resolved = free_identifiers(guard) <= declared
        if handler:
            self._add(Finding(
                "handler", "exception", "implicit", "low" if para.salvaged else "medium", loc,
                f"Route to {normalize_name(handler)} with {cls} when {shown}",
                self.ins(guard), (), para.name, guard=guard, error_class=cls, handler=handler))
        else:
            self._add(Finding(
                "reject", "validation", "explicit",
                "low" if para.salvaged else ("high" if resolved else "medium"), loc,
                f"Reject with {cls} when {shown}", self.ins(guard), (), para.name,
                guard=guard, error_class=cls))
        # compound guard with a `field != 'V'` conjunct: V is exempted from the rejection
        parts = conjuncts(guard)
        if len(parts) >= 2:
            for i, part in enumerate(parts):
                if (isinstance(part, Binary) and part.op == "!=" and isinstance(part.left, Ident)
                        and isinstance(part.right, Literal) and part.right.kind == "string"):
                    others = conjoin(parts[:i] + parts[i + 1:])
                    value = part.right.value
                    self._add(Finding(
                        "exemption", "validation", "implicit", "low" if para.salvaged else "medium", loc,
                        f"Exemption: {part.left.path} == '{value}' bypasses the {cls} rejection "
                        f"otherwise triggered by {render(others)}",
                        self.ins(guard), (), para.name, guard=others, error_class=cls))
        # rejecting `x != E` over a non-literal E encodes the invariant x == E
        if len(parts) == 1 and isinstance(guard, Binary) and guard.op == "!=" \
                and isinstance(guard.left, Ident) and not isinstance(guard.right, Literal):
            inv = Binary("==", guard.left, guard.right)
            spec = ConstraintSpec("business_invariant", self.ins(inv), render(inv))
            self._add(Finding(
                "invariant", "constraint", "implicit", "low" if para.salvaged else "medium", loc,
                f"Invariant {render(inv)}", self.ins(inv), (), para.name, constraint=spec))

    # ordering between consecutive rule-bearing paragraphs
    def temporal(self):
        bearing = {f.paragraph for f in self.findings if f.paragraph}
        paragraphs = {p.name: p for p in self.ast.paragraphs}

        def writes(name: str) -> set[str]:
            out = set()
            for st in _walk(paragraphs[name].statements):
                if isinstance(st, Move):
                    out |= {normalize_name(t.name) for t in st.targets if t.name not in self.sentinels}
                elif isinstance(st, Compute):
                    out.add(normalize_name(st.target.name))
            return out

        def reads(name: str) -> set[str]:
            out = set()
            for st in _walk(paragraphs[name].statements):
                names = _statement_names(st)
                if isinstance(st, Move):
                    names = expr_names(st.source)
                elif isinstance(st, Compute):
                    names = expr_names(st.expr)
                out |= {normalize_name(self.cond_parents.get(n, n)) for n in names}
            return out

        for entry in self.structure.entry_points:
            seq = [st for st in paragraphs[entry].statements
                   if isinstance(st, Perform) and st.until is None and st.thru is None
                   and st.target in paragraphs]
            for a, b in zip(seq, seq[1:]):
                if a.target not in bearing or b.target not in bearing:
                    continue
                shared = sorted(writes(a.target) & reads(b.target))
                if not shared:
                    continue
                expr = conjoin(Binary("!=", Ident(n), Literal(None, "null")) for n in shared)
                spec = ConstraintSpec("temporal_ordering", tuple(shared), render(expr))
                self._add(Finding(
                    "temporal", "constraint", "implicit", "medium", self.loc(a.line, b.end_line),
                    f"{normalize_name(a.target)} completes before {normalize_name(b.target)} "
                    f"(provides {', '.join(shared)})",
                    tuple(shared), (), entry, constraint=spec, successor=b.target))

    # data division
    def data_constraints(self):
        used = set()
        for p in self.ast.paragraphs:
            for st in _walk(p.statements):
                used |= {self.cond_parents.get(n, n) for n in _statement_names(st)}
        for d in self.ast.data_items:
            name = normalize_name(d.name)
            if d.picture is not None and d.name in used and d.name not in self.sentinels:
                pic = d.picture
                if pic.category == "numeric":
                    hi = Decimal(10) ** pic.digits - (Decimal(1) / (Decimal(10) ** pic.scale) if pic.scale else 1)
                    lo = -hi if pic.signed else 0
                    expr = (f"{name} >= {lo} and {name} <= {hi}" if not d.occurs
                            else f"count({name}) <= {d.occurs}")
                    kind_word = "decimal" if pic.scale else "integer"
                else:
                    expr = f"len({name}) <= {pic.width}" if not d.occurs else f"count({name}) <= {d.occurs}"
                    kind_word = "string"
                spec = ConstraintSpec("type_restriction", (name,), expr, width=pic.width)
                self._add(Finding(
                    "type", "constraint", "explicit", "high", self.loc(d.line, d.line),
                    f"{name} is {kind_word} of width {pic.width}" + (f" (occurs {d.occurs})" if d.occurs else ""),
                    (name,), (), "", constraint=spec))
            for cn in d.conditions:
                pred = self.conv.cond(CCondName(cn.name))
                spec = ConstraintSpec("value_range", (name,), render(pred), values=tuple(cn.values),
                                      lower=cn.ranges[0][0] if cn.ranges else None,
                                      upper=cn.ranges[0][1] if cn.ranges else None)
                self._add(Finding(
                    "enum", "constraint", "explicit", "high", self.loc(cn.line, cn.line),
                    f"{normalize_name(cn.name)}: {render(pred)}", (name,), (), "", constraint=spec))


def scan(ast: LegacyAst, structure: Optional[StructureMap] = None) -> list[Finding]:
    """All procedure-division and data-division findings, sorted."""
    structure = structure or extract_structure(ast)
    s = _Scanner(ast, structure, ast.file)
    for p in ast.paragraphs:
        s.scan_paragraph(p)
    s.temporal()
    s.data_constraints()
    return sorted(s.findings, key=Finding.sort_key)


# --- DDL -------------------------------------------------------------------

@dataclass(frozen=True)
class SchemaIssue:
    file: str
    line: int
    message: str


_SQL_TOKEN = re.compile(r"\s*(?:(?P<num>-?\d+(?:\.\d+)?)|(?P<str>'[^']*')|(?P<word>[A-Za-z_][A-Za-z0-9_]*)"
                        r"|(?P<op><>|<=|>=|!=|=|<|>|\(|\)|,))")


def sql_condition(text: str) -> Expr:
    """Translate the CHECK-clause subset (comparisons, BETWEEN, IN, AND/OR/NOT)."""
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _SQL_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"unexpected character {text[pos]!r}")
        pos = m.end()
        kind = m.lastgroup
        toks.append((kind, m.group(kind)))
    i = 0

    def peek(k=0):
        return toks[i + k] if i + k < len(toks) else ("end", "")

    def take():
        nonlocal i
        if i >= len(toks):
            raise ValueError("unexpected end of condition")
        i += 1
        return toks[i - 1]

    def kw(word):
        t = peek()
        return t[0] == "word" and t[1].upper() == word

    def value():
        kind, v = take()
        if kind == "num":
            return literal(Decimal(v) if "." in v else int(v))
        if kind == "str":
            return literal(v[1:-1])
        if kind == "word":
            return Ident(v.lower())
        raise ValueError(f"unexpected {v!r}")

    def primary():
        if kw("NOT"):
            take()
            return negate(primary())
        if peek() == ("op", "("):
            take()
            inner = disj()
            if take() != ("op", ")"):
                raise ValueError("expected ')'")
            return inner
        left = value()
        if kw("BETWEEN"):
            take()
            lo = value()
            if not kw("AND"):
                raise ValueError("BETWEEN needs AND")
            take()
            hi = value()
            return Binary("and", Binary(">=", left, lo), Binary("<=", left, hi))
        if kw("IN"):
            take()
            if take() != ("op", "("):
                raise ValueError("IN needs a list")
            items = [value()]
            while peek() == ("op", ","):
                take()
                items.append(value())
            if take() != ("op", ")"):
                raise ValueError("expected ')'")
            return Binary("in", left, ListLiteral(tuple(items)))
        kind, op = take()
        if kind != "op" or op not in ("=", "<>", "!=", "<", ">", "<=", ">="):
            raise ValueError(f"expected comparison, found {op!r}")
        return Binary({"=": "==", "<>": "!="}.get(op, op), left, value())

    def conj():
        out = primary()
        while kw("AND"):
            take()
            out = Binary("and", out, primary())
        return out

    def disj():
        out = conj()
        while kw("OR"):
            take()
            out = Binary("or", out, conj())
        return out

    result = disj()
    if i != len(toks):
        raise ValueError(f"trailing input {toks[i][1]!r}")
    return result


def _balanced(text: str, start: int) -> str:
    depth = 0
    for j in range(start, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return text[start + 1:j]
    raise ValueError("unbalanced parentheses")


def _bounds(pred: Expr) -> tuple[Any, Any]:
    lo = hi = None
    for c in conjuncts(pred):
        if isinstance(c, Binary) and isinstance(c.left, Ident) and isinstance(c.right, Literal):
            if c.op in (">=", ">"):
                lo = c.right.value
            elif c.op in ("<=", "<"):
                hi = c.right.value
    return lo, hi


def schema_findings(path: str, text: str, issues: Optional[list[SchemaIssue]] = None) -> list[Finding]:
    """CHECK and FOREIGN KEY clauses of a DDL file; bad clauses become issues."""
    out: list[Finding] = []
    issues = issues if issues is not None else []
    for n, line in enumerate(text.splitlines(), 1):
        up = line.upper()
        for m in re.finditer(r"\bCHECK\s*\(", up):
            try:
                body = _balanced(line, m.end() - 1)
                pred = sql_condition(body)
            except ValueError as exc:
                issues.append(SchemaIssue(path, n, f"CHECK clause: {exc}"))
                continue
            fields = tuple(sorted(free_identifiers(pred)))
            lo, hi = _bounds(pred)
            values = ()
            if isinstance(pred, Binary) and pred.op == "in" and isinstance(pred.right, ListLiteral):
                values = tuple(i.value for i in pred.right.items)
            if lo is None and hi is None and not values:
                issues.append(SchemaIssue(path, n, "CHECK clause has no recognizable bound"))
                continue
            spec = ConstraintSpec("value_range", fields, render(pred), lo, hi, values=values)
            if values:
                bounds = f"one of {list(values)}"
            elif lo is None or hi is None:
                bounds = f"at least {lo}" if hi is None else f"at most {hi}"
            else:
                bounds = f"within [{lo}, {hi}]"
            out.append(Finding("range", "constraint", "explicit", "high", SourceLocation(path, n, n),
                               f"{', '.join(fields)} {bounds}", fields, (), "",
                               guard=pred, constraint=spec,
                               error_class=f"{fields[0].upper()}_OUT_OF_RANGE" if fields else None))
        fk = re.search(r"FOREIGN\s+KEY\s*\(\s*(\w+)\s*\)\s*REFERENCES\s+(\w+)\s*\(\s*(\w+)\s*\)", up)
        if fk:
            col, table, ref = (g.lower() for g in fk.groups())
            spec = ConstraintSpec("referential_integrity", (col,), f"{col} != null")
            out.append(Finding("fk", "constraint", "explicit", "high", SourceLocation(path, n, n),
                               f"{col} references {table}.{ref}", (col,), (), "", constraint=spec))
        elif "FOREIGN" in up:
            issues.append(SchemaIssue(path, n, "unrecognized FOREIGN KEY clause"))
    return out


# --- public operations -----------------------------------------------------

def _assign_ids(findings: Sequence[Finding]) -> list[BusinessRule]:
    ordered = sorted(findings, key=Finding.sort_key)
    return [f.to_rule(f"BR-{i:03d}") for i, f in enumerate(ordered, 1)]


def extract_rules(ast: LegacyAst, structure: Optional[StructureMap] = None) -> list[BusinessRule]:
    """Procedure-division rules (validation, computation, transitions, exceptions)."""
    return _assign_ids([f for f in scan(ast, structure) if f.kind != "constraint"])


def discover_constraints(ast: LegacyAst, schemas: Sequence[tuple[str, str]] = (),
                         issues: Optional[list[SchemaIssue]] = None) -> list[BusinessRule]:
    """Constraint rules from PIC/88 clauses, invariant idioms, orderings and DDL."""
    found = [f for f in scan(ast) if f.kind == "constraint"]
    for path, text in schemas:
        found += schema_findings(path, text, issues)
    return _assign_ids(found)


@dataclass
class Analysis:
    inventory: BusinessRuleInventory
    structures: dict[str, StructureMap]
    asts: dict[str, LegacyAst]
    findings: dict[str, Finding]
    schema_issues: list[SchemaIssue]

    @property
    def structure(self) -> StructureMap:
        return self.structures[sorted(self.structures)[0]]

    @property
    def ast(self) -> LegacyAst:
        return self.asts[sorted(self.asts)[0]]


def bundle_findings(bundle: LegacyArtifactBundle, issues: Optional[list[SchemaIssue]] = None
                    ) -> tuple[list[Finding], dict[str, LegacyAst], dict[str, StructureMap]]:
    asts: dict[str, LegacyAst] = {}
    structures: dict[str, StructureMap] = {}
    findings: list[Finding] = []
    for f in bundle.source_files:
        ast = parse_legacy(f.text, f.path)
        structure = extract_structure(ast)
        asts[f.path] = ast
        structures[f.path] = structure
        findings += scan(ast, structure)
    for f in bundle.schemas:
        findings += schema_findings(f.path, f.text, issues)
    return sorted(findings, key=Finding.sort_key), asts, structures


def read_config(bundle: LegacyArtifactBundle) -> dict[str, str]:
    """key=value pairs from config files; other lines are ignored."""
    out = {}
    for f in bundle.config_files:
        for line in f.text.splitlines():
            m = re.match(r"\s*([A-Za-z_][\w.-]*)\s*=\s*(.*?)\s*$", line)
            if m and not line.lstrip().startswith(("#", "//")):
                out[m.group(1)] = m.group(2)
    return out


def analyze(bundle: LegacyArtifactBundle, temperature: float = 0.2,
            timestamp: Optional[str] = None) -> Analysis:
    """Run structure parsing, rule extraction and constraint discovery on a bundle."""
    issues: list[SchemaIssue] = []
    findings, asts, structures = bundle_findings(bundle, issues)
    rules = [f.to_rule(f"BR-{i:03d}") for i, f in enumerate(findings, 1)]
    meta: dict[str, Any] = {"backend": "deterministic", "temperature": temperature,
                            "config_keys": sorted(read_config(bundle))}
    if timestamp:
        meta["timestamp"] = timestamp
    parse_issues = [f"{a.file}:{i.line}:{i.column}: {i.message}" for a in asts.values() for i in a.issues]
    if parse_issues or issues:
        meta["issues"] = parse_issues + [f"{s.file}:{s.line}: {s.message}" for s in issues]
    inventory = BusinessRuleInventory(tuple(rules), bundle_digest(bundle), meta)
    logger.info("extracted %d rules from %d source files", len(rules), len(asts))
    return Analysis(inventory, structures, asts, {r.id: f for r, f in zip(rules, findings)}, issues)
