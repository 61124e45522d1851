"""Parser for the mini-COBOL subset (see docs/legacy-subset.md).

Produces a line-accurate AST of the data division (levels, PIC clauses,
level-88 condition names) and the procedure division (paragraphs and
statements). Constructs outside the subset are recorded as recoverable
issues and the parser skips to the next paragraph.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterator, Optional, Union

logger = logging.getLogger(__name__)


class LegacyParseError(ValueError):
    """Fatal: the text has no PROCEDURE DIVISION."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


@dataclass(frozen=True)
class ParseIssue:
    line: int
    column: int
    message: str
    paragraph: str = ""


# --- data division ---------------------------------------------------------

@dataclass(frozen=True)
class Picture:
    text: str
    category: str  # numeric | alphanumeric
    digits: int
    scale: int
    signed: bool

    @property
    def width(self) -> int:
        return self.digits + self.scale if self.category == "numeric" else self.digits


def parse_picture(text: str) -> Picture:
    expanded = re.sub(r"([9XAVSZ])\((\d+)\)", lambda m: m.group(1) * int(m.group(2)), text.upper())
    signed = expanded.startswith("S")
    body = expanded.lstrip("S")
    if "X" in body or "A" in body:
        return Picture(text, "alphanumeric", len(body), 0, False)
    whole, _, frac = body.partition("V")
    return Picture(text, "numeric", whole.count("9") + whole.count("Z"), frac.count("9"), signed)


@dataclass(frozen=True)
class ConditionName:
    name: str
    values: tuple[Any, ...]
    line: int
    ranges: tuple[tuple[Any, Any], ...] = ()


@dataclass
class DataItem:
    level: int
    name: str
    line: int
    picture: Optional[Picture] = None
    value: Any = None
    occurs: Optional[int] = None
    conditions: list[ConditionName] = field(default_factory=list)
    parent: Optional[str] = None

    @property
    def elementary(self) -> bool:
        return self.picture is not None


# --- procedure division AST ------------------------------------------------

@dataclass(frozen=True)
class CIdent:
    name: str
    subscript: Optional[str] = None  # "ALL" or an index name/number


@dataclass(frozen=True)
class CLit:
    value: Any
    kind: str  # number | string


@dataclass(frozen=True)
class CFunc:
    name: str
    args: tuple["CExpr", ...]


@dataclass(frozen=True)
class CArith:
    op: str
    left: "CExpr"
    right: "CExpr"


@dataclass(frozen=True)
class CNeg:
    operand: "CExpr"


CExpr = Union[CIdent, CLit, CFunc, CArith, CNeg]


@dataclass(frozen=True)
class CRel:
    op: str  # = <> < > <= >=
    left: CExpr
    right: CExpr


@dataclass(frozen=True)
class CCondName:
    name: str


@dataclass(frozen=True)
class CNot:
    operand: "CCond"


@dataclass(frozen=True)
class CAnd:
    left: "CCond"
    right: "CCond"


@dataclass(frozen=True)
class COr:
    left: "CCond"
    right: "CCond"


CCond = Union[CRel, CCondName, CNot, CAnd, COr]


@dataclass
class Statement:
    line: int
    end_line: int


@dataclass
class Move(Statement):
    source: CExpr
    targets: list[CIdent]


@dataclass
class Compute(Statement):
    target: CIdent
    expr: CExpr
    verb: str = "COMPUTE"


@dataclass
class If(Statement):
    condition: CCond
    then: list[Statement]
    orelse: list[Statement]


@dataclass
class WhenBranch:
    conditions: list[CCond]  # empty for WHEN OTHER
    body: list[Statement]
    line: int
    end_line: int
    other: bool = False


@dataclass
class Evaluate(Statement):
    subject: Optional[CExpr]  # None for EVALUATE TRUE
    branches: list[WhenBranch]


@dataclass
class Perform(Statement):
    target: str
    thru: Optional[str] = None
    until: Optional[CCond] = None
    times: Optional[int] = None


@dataclass
class Call(Statement):
    program: str
    using: list[str]


@dataclass
class Display(Statement):
    items: list[CExpr]


@dataclass
class Terminate(Statement):
    verb: str  # STOP RUN | GOBACK | EXIT | CONTINUE


@dataclass
class Paragraph:
    name: str
    line: int
    end_line: int
    statements: list[Statement]
    salvaged: bool = False


@dataclass
class LegacyAst:
    program_id: str
    data_items: list[DataItem]
    paragraphs: list[Paragraph]
    issues: list[ParseIssue]
    file: str = ""
    procedure_line: int = 0

    def paragraph(self, name: str) -> Paragraph:
        for p in self.paragraphs:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def paragraph_names(self) -> list[str]:
        return [p.name for p in self.paragraphs]

    def item(self, name: str) -> Optional[DataItem]:
        for d in self.data_items:
            if d.name == name:
                return d
        return None

    def condition_names(self) -> dict[str, tuple[DataItem, ConditionName]]:
        return {c.name: (d, c) for d in self.data_items for c in d.conditions}


# --- source preparation ----------------------------------------------------

def _prepare_lines(text: str) -> list[str]:
    """Strip sequence areas and comments, keeping one entry per source line."""
    raw = text.splitlines()
    fixed = any(re.match(r"\d{6}", ln) for ln in raw)
    out = []
    for ln in raw:
        if fixed:
            if len(ln) > 6 and ln[6] in "*/":
                out.append("")
                continue
            ln = ("      " + ln[7:72]) if len(ln) > 7 else ""
        if ln.lstrip().startswith("*>") or ln.lstrip().startswith("*"):
            out.append("")
            continue
        ln = ln.split("*>", 1)[0]
        out.append(ln.rstrip())
    return out


@dataclass(frozen=True)
class _Tok:
    kind: str  # word | num | str | op | dot | end
    text: str
    line: int
    col: int
    first: bool = False  # first token on its line


_TOK_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<str>'[^']*'|"[^"]*")
  | (?P<num>\d+(?:\.\d+)?(?![A-Za-z0-9-]))
  | (?P<word>[A-Za-z0-9][A-Za-z0-9-]*[A-Za-z0-9]|[A-Za-z0-9])
  | (?P<op>>=|<=|<>|=|<|>|\+|-|\*|/|\(|\)|,)
  | (?P<dot>\.)
    """,
    re.VERBOSE,
)


def _tokenize(lines: list[str], start_line: int) -> list[_Tok]:
    toks: list[_Tok] = []
    for idx in range(start_line - 1, len(lines)):
        ln = lines[idx]
        pos = 0
        first = True
        while pos < len(ln):
            m = _TOK_RE.match(ln, pos)
            if m is None:
                toks.append(_Tok("op", ln[pos], idx + 1, pos + 1, first))
                pos += 1
                first = False
                continue
            kind = m.lastgroup
            if kind != "ws":
                toks.append(_Tok(kind, m.group(), idx + 1, pos + 1, first))
                first = False
            pos = m.end()
    last = toks[-1].line if toks else start_line
    toks.append(_Tok("end", "", last, 1))
    return toks


# --- data division parsing -------------------------------------------------

_VALUE_LIT = re.compile(r"'[^']*'|\"[^\"]*\"|-?\d+(?:\.\d+)?|ZEROS?|ZEROES|SPACES?|THRU|THROUGH", re.I)


def _lit_value(text: str) -> Any:
    t = text.upper()
    if text[0] in "'\"":
        return text[1:-1]
    if t in ("ZERO", "ZEROS", "ZEROES"):
        return 0
    if t in ("SPACE", "SPACES"):
        return ""
    return Decimal(text) if "." in text else int(text)


def _parse_data(lines: list[str], start: int, stop: int, issues: list[ParseIssue]) -> list[DataItem]:
    items: list[DataItem] = []
    parents: list[DataItem] = []
    sentence, sentence_line = "", 0
    for lineno in range(start, stop):
        ln = lines[lineno - 1].strip()
        if not ln or re.match(r"(WORKING-STORAGE|LINKAGE|FILE|LOCAL-STORAGE)\s+SECTION", ln, re.I):
            continue
        if not sentence:
            sentence_line = lineno
        sentence = f"{sentence} {ln}".strip()
        if not sentence.endswith("."):
            continue
        body = sentence[:-1].strip()
        sentence = ""
        m = re.match(r"(\d{1,2})\s+([A-Za-z0-9-]+)\s*(.*)$", body)
        if not m:
            issues.append(ParseIssue(sentence_line, 1, f"unrecognized data entry {body!r}"))
            continue
        level, name, rest = int(m.group(1)), m.group(2).upper(), m.group(3)
        if level == 88:
            vm = re.search(r"VALUES?\s+(?:ARE\s+|IS\s+)?(.*)$", rest, re.I)
            if not vm or not parents:
                issues.append(ParseIssue(sentence_line, 1, f"level-88 {name} without values or parent"))
                continue
            toks = _VALUE_LIT.findall(vm.group(1))
            values, ranges = [], []
            i = 0
            while i < len(toks):
                if i + 2 < len(toks) and toks[i + 1].upper() in ("THRU", "THROUGH"):
                    ranges.append((_lit_value(toks[i]), _lit_value(toks[i + 2])))
                    i += 3
                else:
                    values.append(_lit_value(toks[i]))
                    i += 1
            parents[-1].conditions.append(ConditionName(name, tuple(values), sentence_line, tuple(ranges)))
            continue
        item = DataItem(level, name, sentence_line)
        pm = re.search(r"PIC(?:TURE)?\s+(?:IS\s+)?(\S+)", rest, re.I)
        if pm:
            item.picture = parse_picture(pm.group(1))
        vm = re.search(r"VALUE\s+(?:IS\s+)?('[^']*'|\"[^\"]*\"|-?\d+(?:\.\d+)?|\S+)", rest, re.I)
        if vm:
            item.value = _lit_value(vm.group(1))
        om = re.search(r"OCCURS\s+(\d+)", rest, re.I)
        if om:
            item.occurs = int(om.group(1))
        while parents and parents[-1].level >= level:
            parents.pop()
        item.parent = parents[-1].name if parents else None
        parents.append(item)
        items.append(item)
    return items


# --- procedure division parsing --------------------------------------------

VERBS = {"MOVE", "COMPUTE", "ADD", "SUBTRACT", "MULTIPLY", "DIVIDE", "IF", "ELSE", "END-IF",
         "EVALUATE", "WHEN", "END-EVALUATE", "PERFORM", "END-PERFORM", "CALL", "END-CALL",
         "DISPLAY", "STOP", "GOBACK", "EXIT", "CONTINUE", "NEXT", "INITIALIZE", "READ", "WRITE",
         "OPEN", "CLOSE", "ACCEPT", "STRING", "UNSTRING", "INSPECT", "SET", "SEARCH", "GO"}
_REL_WORDS = {"EQUAL", "EQUALS", "GREATER", "LESS", "IS", "NOT", "THAN", "TO"}
_FIGURATIVE = {"ZERO": 0, "ZEROS": 0, "ZEROES": 0, "SPACE": "", "SPACES": ""}


class _Salvage(Exception):
    def __init__(self, tok: _Tok, message: str):
        self.tok = tok
        super().__init__(message)


class _ProcParser:
    def __init__(self, toks: list[_Tok], condition_names: set[str]):
        self.toks = toks
        self.i = 0
        self.cond_names = condition_names

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def word(self, *texts: str) -> bool:
        t = self.tok
        return t.kind == "word" and (not texts or t.text.upper() in texts)

    def take(self) -> _Tok:
        t = self.tok
        self.i += 1
        return t

    def expect_word(self, text: str) -> _Tok:
        if not self.word(text):
            raise _Salvage(self.tok, f"expected {text}")
        return self.take()

    def is_paragraph_header(self) -> bool:
        t = self.tok
        return (t.kind == "word" and t.first and self.peek().kind == "dot"
                and t.text.upper() not in VERBS and not t.text[0].isdigit())

    def is_section_header(self) -> bool:
        t = self.tok
        return (t.kind == "word" and t.first and self.peek().kind == "word"
                and self.peek().text.upper() == "SECTION" and self.peek(2).kind == "dot")

    # paragraphs
    def paragraphs(self, issues: list[ParseIssue]) -> list[Paragraph]:
        paras: list[Paragraph] = []
        while self.tok.kind != "end":
            if self.is_section_header():
                name_tok = self.take()
                self.take()
                self.take()
            elif self.is_paragraph_header():
                name_tok = self.take()
                self.take()
            else:
                name_tok = None
            name = name_tok.text.upper() if name_tok else "MAIN-LOGIC"
            start = name_tok.line if name_tok else self.tok.line
            para = Paragraph(name, start, start, [])
            try:
                para.statements = self.statements(top=True)
            except _Salvage as exc:
                issues.append(ParseIssue(exc.tok.line, exc.tok.col, str(exc), name))
                para.salvaged = True
                para.statements = getattr(exc, "partial", [])
                while self.tok.kind != "end" and not (self.is_paragraph_header() or self.is_section_header()):
                    self.take()
            para.end_line = max(start, self.toks[self.i - 1].line if self.i else start)
            paras.append(para)
        return paras

    def statements(self, top: bool = False, stop: tuple[str, ...] = ()) -> list[Statement]:
        out: list[Statement] = []
        while True:
            t = self.tok
            if t.kind == "end" or self.is_paragraph_header() or self.is_section_header():
                return out
            if t.kind == "dot":
                if not top:
                    return out
                self.take()
                continue
            if t.kind == "word" and t.text.upper() in stop:
                return out
            try:
                out.append(self.statement())
            except _Salvage as exc:
                exc.partial = out  # type: ignore[attr-defined]
                raise

    def statement(self) -> Statement:
        t = self.tok
        if t.kind != "word":
            raise _Salvage(t, f"unexpected token {t.text!r}")
        verb = t.text.upper()
        handler = getattr(self, "st_" + verb.replace("-", "_").lower(), None)
        if handler is None or verb not in VERBS:
            raise _Salvage(t, f"statement {verb} is outside the supported subset")
        return handler()

    def _end(self, line: int) -> int:
        return max(line, self.toks[self.i - 1].line)

    def st_move(self) -> Statement:
        start = self.take()
        src = self.operand()
        self.expect_word("TO")
        targets = [self.identifier()]
        # further targets must continue on the same line; anything else is a new statement
        while (self.tok.kind == "word" and not self.tok.first and self.tok.text.upper() not in VERBS
               and self.tok.text.upper() not in _REL_WORDS):
            targets.append(self.identifier())
        return Move(start.line, self._end(start.line), src, targets)

    def st_compute(self) -> Statement:
        start = self.take()
        target = self.identifier()
        if self.word("ROUNDED"):
            self.take()
        if not (self.tok.kind == "op" and self.tok.text == "="):
            raise _Salvage(self.tok, "expected '=' in COMPUTE")
        self.take()
        expr = self.arith()
        if self.word("END-COMPUTE"):
            self.take()
        return Compute(start.line, self._end(start.line), target, expr)

    def _giving(self, default: CIdent, expr: CExpr, start: _Tok, verb: str) -> Statement:
        target = default
        if self.word("GIVING"):
            self.take()
            target = self.identifier()
        if self.word("ROUNDED"):
            self.take()
        return Compute(start.line, self._end(start.line), target, expr, verb)

    def st_add(self) -> Statement:
        start = self.take()
        operands = [self.operand()]
        while not self.word("TO", "GIVING"):
            operands.append(self.operand())
        expr: CExpr = operands[0]
        for o in operands[1:]:
            expr = CArith("+", expr, o)
        if self.word("TO"):
            self.take()
            dest = self.identifier()
            if self.word("GIVING"):
                return self._giving(dest, CArith("+", expr, dest), start, "ADD")
            return Compute(start.line, self._end(start.line), dest, CArith("+", dest, expr), "ADD")
        return self._giving(CIdent("?"), expr, start, "ADD")

    def st_subtract(self) -> Statement:
        start = self.take()
        operands = [self.operand()]
        while not self.word("FROM"):
            operands.append(self.operand())
        self.take()
        dest = self.identifier()
        expr: CExpr = dest
        for o in operands:
            expr = CArith("-", expr, o)
        return self._giving(dest, expr, start, "SUBTRACT")

    def st_multiply(self) -> Statement:
        start = self.take()
        a = self.operand()
        self.expect_word("BY")
        b = self.identifier()
        return self._giving(b, CArith("*", a, b), start, "MULTIPLY")

    def st_divide(self) -> Statement:
        start = self.take()
        a = self.operand()
        if self.word("INTO"):
            self.take()
            b = self.identifier()
            return self._giving(b, CArith("/", b, a), start, "DIVIDE")
        self.expect_word("BY")
        b = self.operand()
        if not self.word("GIVING"):
            raise _Salvage(self.tok, "DIVIDE ... BY needs GIVING")
        return self._giving(CIdent("?"), CArith("/", a, b), start, "DIVIDE")

    def st_if(self) -> Statement:
        start = self.take()
        cond = self.condition()
        if self.word("THEN"):
            self.take()
        then = self.statements(stop=("ELSE", "END-IF"))
        orelse: list[Statement] = []
        if self.word("ELSE"):
            self.take()
            orelse = self.statements(stop=("END-IF",))
        if self.word("END-IF"):
            self.take()
        elif self.tok.kind != "dot":
            raise _Salvage(self.tok, "IF not terminated by END-IF or period")
        return If(start.line, self._end(start.line), cond, then, orelse)

    def st_evaluate(self) -> Statement:
        start = self.take()
        subject: Optional[CExpr]
        if self.word("TRUE"):
            self.take()
            subject = None
        else:
            subject = self.operand()
        branches: list[WhenBranch] = []
        pending: list[CCond] = []
        pending_line = 0
        while self.word("WHEN"):
            wtok = self.take()
            pending_line = pending_line or wtok.line
            if self.word("OTHER"):
                self.take()
                body = self.statements(stop=("WHEN", "END-EVALUATE"))
                branches.append(WhenBranch([], body, pending_line, self._end(wtok.line), other=True))
                pending, pending_line = [], 0
                continue
            if subject is None:
                cond = self.condition()
            else:
                lo = self.operand()
                if self.word("THRU", "THROUGH"):
                    self.take()
                    hi = self.operand()
                    cond = CAnd(CRel(">=", subject, lo), CRel("<=", subject, hi))
                else:
                    cond = CRel("=", subject, lo)
            pending.append(cond)
            if self.word("WHEN"):
                continue
            body = self.statements(stop=("WHEN", "END-EVALUATE"))
            branches.append(WhenBranch(pending, body, pending_line, self._end(wtok.line)))
            pending, pending_line = [], 0
        if not self.word("END-EVALUATE"):
            raise _Salvage(self.tok, "EVALUATE without END-EVALUATE")
        self.take()
        return Evaluate(start.line, self._end(start.line), subject, branches)

    def st_perform(self) -> Statement:
        start = self.take()
        if self.tok.kind != "word" or self.word("UNTIL", "VARYING"):
            raise _Salvage(self.tok, "inline PERFORM is outside the supported subset")
        target = self.take().text.upper()
        st = Perform(start.line, start.line, target)
        if self.word("THRU", "THROUGH"):
            self.take()
            st.thru = self.take().text.upper()
        if self.tok.kind == "num" and self.peek().kind == "word" and self.peek().text.upper() == "TIMES":
            st.times = int(self.take().text)
            self.take()
        if self.word("WITH"):
            self.take()
            self.expect_word("TEST")
            self.take()
        if self.word("UNTIL"):
            self.take()
            st.until = self.condition()
        st.end_line = self._end(start.line)
        return st

    def st_call(self) -> Statement:
        start = self.take()
        if self.tok.kind != "str":
            raise _Salvage(self.tok, "CALL target must be a literal")
        program = self.take().text[1:-1].upper()
        using: list[str] = []
        if self.word("USING"):
            self.take()
            while self.tok.kind == "word" and self.tok.text.upper() not in VERBS and not self.is_paragraph_header():
                if self.word("BY", "REFERENCE", "CONTENT", "VALUE"):
                    self.take()
                    continue
                using.append(self.take().text.upper())
        if self.word("END-CALL"):
            self.take()
        return Call(start.line, self._end(start.line), program, using)

    def st_display(self) -> Statement:
        start = self.take()
        items: list[CExpr] = []
        while not self.tok.first and (self.tok.kind in ("str", "num") or (
                self.tok.kind == "word" and self.tok.text.upper() not in VERBS and not self.word("UPON"))):
            items.append(self.operand())
        return Display(start.line, self._end(start.line), items)

    def st_stop(self) -> Statement:
        start = self.take()
        self.expect_word("RUN")
        return Terminate(start.line, start.line, "STOP RUN")

    def st_goback(self) -> Statement:
        t = self.take()
        return Terminate(t.line, t.line, "GOBACK")

    def st_exit(self) -> Statement:
        t = self.take()
        if self.word("PROGRAM", "PARAGRAPH"):
            self.take()
        return Terminate(t.line, t.line, "EXIT")

    def st_continue(self) -> Statement:
        t = self.take()
        return Terminate(t.line, t.line, "CONTINUE")

    # operands and expressions
    def identifier(self) -> CIdent:
        t = self.tok
        if t.kind != "word" or t.text.upper() in VERBS:
            raise _Salvage(t, f"expected a data name, found {t.text!r}")
        self.take()
        name = t.text.upper()
        sub = None
        if self.tok.kind == "op" and self.tok.text == "(" and self.tok.line == t.line and self.tok.col == t.col + len(t.text):
            self.take()
            parts = []
            while not (self.tok.kind == "op" and self.tok.text == ")"):
                if self.tok.kind == "end":
                    raise _Salvage(self.tok, "unterminated subscript")
                parts.append(self.take().text.upper())
            self.take()
            sub = " ".join(parts)
        return CIdent(name, sub)

    def operand(self) -> CExpr:
        t = self.tok
        if t.kind == "str":
            self.take()
            return CLit(t.text[1:-1], "string")
        if t.kind == "num":
            self.take()
            return CLit(Decimal(t.text) if "." in t.text else int(t.text), "number")
        if t.kind == "op" and t.text in "+-" and self.peek().kind == "num":
            self.take()
            n = self.take().text
            value = Decimal(n) if "." in n else int(n)
            return CLit(-value if t.text == "-" else value, "number")
        if t.kind == "word" and t.text.upper() in _FIGURATIVE:
            self.take()
            v = _FIGURATIVE[t.text.upper()]
            return CLit(v, "number" if v == 0 else "string")
        if t.kind == "word" and t.text.upper() == "FUNCTION":
            self.take()
            fname = self.take().text.upper()
            args: list[CExpr] = []
            if self.tok.kind == "op" and self.tok.text == "(":
                self.take()
                while not (self.tok.kind == "op" and self.tok.text == ")"):
                    if self.tok.kind == "end":
                        raise _Salvage(self.tok, "unterminated FUNCTION arguments")
                    if self.tok.kind == "op" and self.tok.text == ",":
                        self.take()
                        continue
                    args.append(self.arith())
                self.take()
            return CFunc(fname, tuple(args))
        return self.identifier()

    def arith(self) -> CExpr:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-" and self.tok.text:
            op = self.take().text
            left = CArith(op, left, self.term())
        return left

    def term(self) -> CExpr:
        left = self.factor()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.take().text
            left = CArith(op, left, self.factor())
        return left

    def factor(self) -> CExpr:
        t = self.tok
        if t.kind == "op" and t.text == "(":
            self.take()
            inner = self.arith()
            if not (self.tok.kind == "op" and self.tok.text == ")"):
                raise _Salvage(self.tok, "expected ')'")
            self.take()
            return inner
        if t.kind == "op" and t.text == "-" and self.peek().kind != "num":
            self.take()
            return CNeg(self.factor())
        return self.operand()

    # conditions
    def condition(self) -> CCond:
        self._last: Optional[tuple[CExpr, str, bool]] = None
        return self.or_cond()

    def or_cond(self) -> CCond:
        left = self.and_cond()
        while self.word("OR"):
            self.take()
            left = COr(left, self.and_cond())
        return left

    def and_cond(self) -> CCond:
        left = self.not_cond()
        while self.word("AND"):
            self.take()
            left = CAnd(left, self.not_cond())
        return left

    def not_cond(self) -> CCond:
        if self.word("NOT"):
            self.take()
            return CNot(self.not_cond())
        return self.primary_cond()

    def _relop(self) -> tuple[str, bool] | None:
        """Parse an optional relational operator; returns (op, negated)."""
        save = self.i
        negated = False
        if self.word("IS"):
            self.take()
        if self.word("NOT"):
            self.take()
            negated = True
        t = self.tok
        op = None
        if t.kind == "op" and t.text in ("=", "<", ">", ">=", "<=", "<>"):
            self.take()
            op = t.text
        elif self.word("EQUAL", "EQUALS"):
            self.take()
            if self.word("TO"):
                self.take()
            op = "="
        elif self.word("GREATER", "LESS"):
            base = ">" if self.take().text.upper() == "GREATER" else "<"
            if self.word("THAN"):
                self.take()
            op = base
            if self.word("OR") and self.peek().kind == "word" and self.peek().text.upper() == "EQUAL":
                self.take()
                self.take()
                if self.word("TO"):
                    self.take()
                op = base + "="
        if op is None:
            self.i = save
            return None
        return op, negated

    def primary_cond(self) -> CCond:
        t = self.tok
        if t.kind == "op" and t.text == "(":
            save = self.i
            self.take()
            try:
                inner = self.or_cond()
                if self.tok.kind == "op" and self.tok.text == ")":
                    self.take()
                    if self._relop_ahead():
                        raise _Salvage(self.tok, "arithmetic group")
                    return inner
                raise _Salvage(self.tok, "expected ')'")
            except _Salvage:
                self.i = save
        if t.kind == "word" and t.text.upper() in self.cond_names and self._relop_ahead() is False:
            self.take()
            return CCondName(t.text.upper())
        if (t.kind in ("str", "num") or (t.kind == "word" and t.text.upper() in _FIGURATIVE)) \
                and self._last is not None and not self._relop_ahead():
            subject, op, negated = self._last
            rel = CRel(op, subject, self.operand())
            return CNot(rel) if negated else rel
        left = self.arith()
        rel_op = self._relop()
        if rel_op is None:
            raise _Salvage(self.tok, "expected a relational operator")
        op, negated = rel_op
        right = self.arith()
        self._last = (left, op, negated)
        rel = CRel(op, left, right)
        return CNot(rel) if negated else rel

    def _relop_ahead(self) -> bool:
        save = self.i
        found = self._relop() is not None
        self.i = save
        return found


def parse_legacy(source_text: str, file: str = "") -> LegacyAst:
    """Parse mini-COBOL text; fatal only when PROCEDURE DIVISION is missing."""
    lines = _prepare_lines(source_text)
    issues: list[ParseIssue] = []
    proc_line = data_line = 0
    program_id = ""
    for n, ln in enumerate(lines, 1):
        up = ln.upper()
        if not program_id:
            m = re.search(r"PROGRAM-ID\.\s*([A-Za-z0-9-]+)", ln, re.I)
            if m:
                program_id = m.group(1).upper()
        if re.search(r"\bDATA\s+DIVISION\b", up) and not data_line:
            data_line = n
        if re.search(r"\bPROCEDURE\s+DIVISION\b", up):
            proc_line = n
            break
    if not proc_line:
        raise LegacyParseError("no PROCEDURE DIVISION found", len(lines), 1)
    items = _parse_data(lines, data_line + 1, proc_line, issues) if data_line else []
    header_end = lines[proc_line - 1].upper().find("DIVISION")
    body = list(lines)
    rest = body[proc_line - 1][header_end + len("DIVISION"):]
    rest = rest.split(".", 1)[1] if "." in rest else ""
    body[proc_line - 1] = " " * (len(body[proc_line - 1]) - len(rest)) + rest
    toks = _tokenize(body, proc_line)
    cond_names = {c.name for d in items for c in d.conditions}
    paragraphs = _ProcParser(toks, cond_names).paragraphs(issues)
    names = [p.name for p in paragraphs]
    dupes = {n for n in names if names.count(n) > 1}
    for n in sorted(dupes):
        issues.append(ParseIssue(0, 0, f"duplicate paragraph {n}"))
    return LegacyAst(program_id or "UNNAMED", items, paragraphs, issues, file, proc_line)


# --- walking ---------------------------------------------------------------

def iter_statements(stmts: list[Statement]) -> Iterator[Statement]:
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from iter_statements(s.then)
            yield from iter_statements(s.orelse)
        elif isinstance(s, Evaluate):
            for b in s.branches:
                yield from iter_statements(b.body)


def expr_names(e: CExpr | CCond | None) -> set[str]:
    if e is None:
        return set()
    if isinstance(e, CIdent):
        return {e.name}
    if isinstance(e, CFunc):
        return set().union(*(expr_names(a) for a in e.args)) if e.args else set()
    if isinstance(e, (CArith, CAnd, COr)):
        return expr_names(e.left) | expr_names(e.right)
    if isinstance(e, CRel):
        return expr_names(e.left) | expr_names(e.right)
    if isinstance(e, (CNeg, CNot)):
        return expr_names(e.operand)
    if isinstance(e, CCondName):
        return {e.name}
    return set()


# --- structure -------------------------------------------------------------

@dataclass(frozen=True)
class CallEdge:
    src: str
    dst: str
    kind: str  # perform | call


@dataclass(frozen=True)
class StructureMap:
    entry_points: tuple[str, ...]
    call_graph: tuple[CallEdge, ...]
    external_deps: tuple[str, ...]
    paragraphs: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {"entry_points": list(self.entry_points),
                "call_graph": [{"from": e.src, "to": e.dst, "kind": e.kind} for e in self.call_graph],
                "external_deps": list(self.external_deps), "paragraphs": list(self.paragraphs)}

    @classmethod
    def from_doc(cls, doc: dict) -> "StructureMap":
        return cls(tuple(doc["entry_points"]),
                   tuple(CallEdge(e["from"], e["to"], e["kind"]) for e in doc["call_graph"]),
                   tuple(doc["external_deps"]), tuple(doc.get("paragraphs", ())))


def perform_range(ast: LegacyAst, st: Perform) -> list[str]:
    names = ast.paragraph_names
    if st.target not in names:
        return [st.target]
    if not st.thru or st.thru not in names:
        return [st.target]
    a, b = names.index(st.target), names.index(st.thru)
    return names[a:b + 1] if a <= b else [st.target]


def extract_structure(ast: LegacyAst) -> StructureMap:
    """Perform/call graph, entry points (no incoming perform) and external deps."""
    local = set(ast.paragraph_names)
    edges: list[CallEdge] = []
    external: list[str] = []
    for p in ast.paragraphs:
        for st in iter_statements(p.statements):
            if isinstance(st, Perform):
                for target in perform_range(ast, st):
                    edges.append(CallEdge(p.name, target, "perform"))
                    if target not in local and target not in external:
                        external.append(target)
            elif isinstance(st, Call):
                edges.append(CallEdge(p.name, st.program, "call"))
                if st.program not in local and st.program not in external:
                    external.append(st.program)
    seen = set()
    unique = []
    for e in edges:
        if (e.src, e.dst, e.kind) not in seen:
            seen.add((e.src, e.dst, e.kind))
            unique.append(e)
    performed = {e.dst for e in unique if e.kind == "perform"}
    entries = tuple(n for n in ast.paragraph_names if n not in performed)
    return StructureMap(entries, tuple(unique), tuple(external), tuple(ast.paragraph_names))
