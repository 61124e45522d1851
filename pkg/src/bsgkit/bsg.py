"""Behavioral Specification Graph: a DAG of operation nodes carrying contracts.

Construction helpers, structural validation, deterministic topological
ordering, path selection, canonical (de)serialization, structural diffing
and gold-rule coverage scoring.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import docio
from .artifacts import BusinessRuleInventory, SourceLocation
from .docio import DocumentError, require
from .metrics import percent
from .predicate import (Binary, Expr, Ident, Literal, Not, PredicateSyntaxError,
                        free_identifiers, parse_predicate, render)

EDGE_LABELS = ("sequence", "conditional", "parallel", "error")
GUARDED_LABELS = ("conditional", "error")
DEFAULT_ERROR_CLASS = "PRECONDITION_FAILED"


# --- types -----------------------------------------------------------------

@dataclass(frozen=True)
class DataType:
    kind: str  # integer | decimal | string | boolean | date | enum_of | list_of
    values: tuple[str, ...] = ()
    item: Optional["DataType"] = None

    SIMPLE = ("integer", "decimal", "string", "boolean", "date")

    def __post_init__(self):
        if self.kind == "enum_of" and not self.values:
            raise ValueError("enum_of needs at least one value")
        if self.kind == "list_of" and self.item is None:
            raise ValueError("list_of needs an item type")
        if self.kind not in self.SIMPLE + ("enum_of", "list_of"):
            raise ValueError(f"unknown data type {self.kind!r}")

    def admits(self, value: Any) -> bool:
        """Whether ``value`` has this type (``None`` is never admitted)."""
        k = self.kind
        if k == "integer":
            return isinstance(value, int) and not isinstance(value, bool)
        if k == "decimal":
            return isinstance(value, (int, Decimal, float)) and not isinstance(value, bool)
        if k == "string":
            return isinstance(value, str)
        if k == "boolean":
            return isinstance(value, bool)
        if k == "date":
            return isinstance(value, str) and re.fullmatch(r"\d{4}-\d{2}-\d{2}", value) is not None
        if k == "enum_of":
            return isinstance(value, str) and value in self.values
        return isinstance(value, (list, tuple)) and all(self.item.admits(v) for v in value)

    def to_doc(self) -> Any:
        if self.kind == "enum_of":
            return {"enum_of": list(self.values)}
        if self.kind == "list_of":
            return {"list_of": self.item.to_doc()}
        return self.kind

    @classmethod
    def from_doc(cls, doc: Any, path: str = "") -> "DataType":
        try:
            if isinstance(doc, str):
                return cls(doc)
            if isinstance(doc, dict) and "enum_of" in doc:
                return cls("enum_of", tuple(doc["enum_of"]))
            if isinstance(doc, dict) and "list_of" in doc:
                return cls("list_of", item=cls.from_doc(doc["list_of"], path + ".list_of"))
        except ValueError as exc:
            raise DocumentError(path, str(exc)) from exc
        raise DocumentError(path, "not a data type")


INTEGER = DataType("integer")
DECIMAL = DataType("decimal")
STRING = DataType("string")


@dataclass(frozen=True)
class ContractClause:
    text: str
    predicate: Optional[Expr] = None
    error_class: Optional[str] = None
    rule_id: Optional[str] = None

    @property
    def checkable(self) -> bool:
        return self.predicate is not None

    @classmethod
    def from_text(cls, text: str, error_class: str | None = None,
                  rule_id: str | None = None) -> "ContractClause":
        try:
            pred = parse_predicate(text)
        except PredicateSyntaxError:
            pred = None
        return cls(text, pred, error_class, rule_id)

    @classmethod
    def of(cls, pred: Expr, error_class: str | None = None, rule_id: str | None = None) -> "ContractClause":
        return cls(render(pred), pred, error_class, rule_id)

    def to_doc(self) -> Any:
        if self.error_class is None and self.rule_id is None:
            return self.text
        doc = {"text": self.text}
        if self.error_class is not None:
            doc["error_class"] = self.error_class
        if self.rule_id is not None:
            doc["rule_id"] = self.rule_id
        return doc

    @classmethod
    def from_doc(cls, doc: Any, path: str) -> "ContractClause":
        if isinstance(doc, str):
            return cls.from_text(doc)
        text = require(doc, "text", path, str)
        return cls.from_text(text, doc.get("error_class"), doc.get("rule_id"))


@dataclass(frozen=True)
class ErrorBehavior:
    description: str
    error_class: str = DEFAULT_ERROR_CLASS
    trigger: Optional[Expr] = None

    def to_doc(self) -> dict:
        return {"description": self.description, "error_class": self.error_class,
                "trigger": None if self.trigger is None else render(self.trigger)}

    @classmethod
    def from_doc(cls, doc: Any, path: str) -> "ErrorBehavior":
        trigger = doc.get("trigger") if isinstance(doc, dict) else None
        try:
            pred = parse_predicate(trigger) if trigger else None
        except PredicateSyntaxError as exc:
            raise DocumentError(path + ".trigger", str(exc)) from exc
        return cls(require(doc, "description", path, str),
                   require(doc, "error_class", path, str), pred)


@dataclass(frozen=True)
class OperationNode:
    id: str
    name: str
    inputs: Mapping[str, DataType]
    outputs: Mapping[str, DataType]
    preconditions: tuple[ContractClause, ...]
    postconditions: tuple[ContractClause, ...]
    rule_ids: tuple[str, ...]
    error_behavior: ErrorBehavior
    confidence: str
    source_location: SourceLocation

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "operation": self.name,
            "source_rule": self.rule_ids[0] if self.rule_ids else None,
            "source_location": str(self.source_location),
            "preconditions": [c.to_doc() for c in self.preconditions],
            "postconditions": [c.to_doc() for c in self.postconditions],
            "confidence": self.confidence,
            "inputs": {k: t.to_doc() for k, t in self.inputs.items()},
            "outputs": {k: t.to_doc() for k, t in self.outputs.items()},
            "rule_ids": list(self.rule_ids),
            "error_behavior": self.error_behavior.to_doc(),
        }


@dataclass(frozen=True)
class BsgEdge:
    src: str
    dst: str
    label: str
    guard: Optional[Expr] = None

    def to_doc(self) -> dict:
        doc = {"from": self.src, "to": self.dst, "label": self.label}
        if self.guard is not None:
            doc["guard"] = render(self.guard)
        return doc

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.label)


@dataclass(frozen=True)
class Bsg:
    nodes: tuple[OperationNode, ...]
    edges: tuple[BsgEdge, ...]
    global_invariants: tuple[ContractClause, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def node(self, node_id: str) -> OperationNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def successors(self, node_id: str) -> list[BsgEdge]:
        return sorted((e for e in self.edges if e.src == node_id), key=lambda e: (e.dst, e.label))

    def referenced_rule_ids(self) -> set[str]:
        ids = {r for n in self.nodes for r in n.rule_ids}
        ids |= {c.rule_id for c in self.global_invariants if c.rule_id}
        return ids

    def to_doc(self) -> dict:
        return serialize_bsg(self)


def make_node_id(scenario_id: str, operation: str, taken: Iterable[str] = ()) -> str:
    """``scenario/operation`` with a numeric suffix on collision."""
    base = f"{scenario_id}/{operation}"
    taken = set(taken)
    if base not in taken:
        return base
    n = 2
    while f"{base}-{n}" in taken:
        n += 1
    return f"{base}-{n}"


# --- validation ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str
    witness: tuple[str, ...] = ()


class CycleError(ValueError):
    def __init__(self, witness: Sequence[str]):
        self.witness = list(witness)
        super().__init__("cycle: " + " -> ".join(witness))


def find_cycle(node_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """A witness cycle ``[a, b, ..., a]`` or None; deterministic (sorted DFS)."""
    adj: dict[str, list[str]] = {n: [] for n in node_ids}
    for s, d in edges:
        adj.setdefault(s, []).append(d)
        adj.setdefault(d, [])
    for k in adj:
        adj[k] = sorted(set(adj[k]))
    color = {n: 0 for n in adj}
    stack: list[str] = []

    def visit(n: str) -> list[str] | None:
        color[n] = 1
        stack.append(n)
        for m in adj[n]:
            if color[m] == 1:
                return stack[stack.index(m):] + [m]
            if color[m] == 0:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        color[n] = 2
        return None

    for n in sorted(adj):
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def validate_bsg(bsg: Bsg, bri: BusinessRuleInventory | None = None) -> list[Violation]:
    """Structural violations; empty iff every graph invariant holds."""
    out: list[Violation] = []
    ids = set()
    for n in bsg.nodes:
        if n.id in ids:
            out.append(Violation("DUPLICATE_NODE", n.id, "node id used twice"))
        ids.add(n.id)
        if not n.name:
            out.append(Violation("EMPTY_NAME", n.id, "operation name is empty"))
        for c in n.preconditions + n.postconditions:
            if c.predicate is not None and render(c.predicate) != c.text:
                if parse_predicate(c.text) != c.predicate:
                    out.append(Violation("CLAUSE_MISMATCH", n.id, f"clause {c.text!r} disagrees with its AST"))
    for e in bsg.edges:
        where = f"{e.src}->{e.dst}"
        if e.label not in EDGE_LABELS:
            out.append(Violation("BAD_LABEL", where, f"unknown label {e.label!r}"))
        if e.src not in ids or e.dst not in ids:
            out.append(Violation("MISSING_ENDPOINT", where, "edge endpoint is not a node"))
        if e.guard is not None and e.label not in GUARDED_LABELS:
            out.append(Violation("BAD_GUARD", where, f"guard not allowed on {e.label} edge"))
    cycle = find_cycle(ids, [(e.src, e.dst) for e in bsg.edges])
    if cycle:
        out.append(Violation("CYCLE", cycle[0], "graph is not acyclic", tuple(cycle)))
    if bsg.nodes:
        blocked = {e.dst for e in bsg.edges if e.label in ("sequence", "conditional")}
        if not ids - blocked:
            out.append(Violation("NO_ENTRY", "", "no node lacks incoming sequence/conditional edges"))
    else:
        out.append(Violation("EMPTY_GRAPH", "", "graph has no nodes"))
    if bri is not None:
        known = set(bri.ids)
        for n in bsg.nodes:
            for r in n.rule_ids:
                if r not in known:
                    out.append(Violation("DANGLING_RULE", n.id, f"rule {r} not in inventory"))
        for c in bsg.global_invariants:
            if c.rule_id and c.rule_id not in known:
                out.append(Violation("DANGLING_RULE", "global_invariants", f"rule {c.rule_id} not in inventory"))
    return out


def topo_order(bsg: Bsg) -> list[str]:
    """Kahn's algorithm with lexicographic tie-breaking."""
    ids = bsg.node_ids
    indeg = {n: 0 for n in ids}
    adj: dict[str, set[str]] = {n: set() for n in ids}
    for e in bsg.edges:
        if e.dst not in adj[e.src]:
            adj[e.src].add(e.dst)
            indeg[e.dst] += 1
    heap = [n for n in ids if indeg[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in sorted(adj[n]):
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    if len(order) != len(ids):
        raise CycleError(find_cycle(ids, [(e.src, e.dst) for e in bsg.edges]) or [])
    return order


def all_simple_paths(bsg: Bsg) -> list[tuple[BsgEdge, ...]]:
    """Every source-to-sink path as an edge tuple, in lexicographic node order.

    A node with neither incoming nor outgoing edges yields one empty path,
    reported through :func:`select_paths`.
    """
    order = topo_order(bsg)
    has_in = {e.dst for e in bsg.edges}
    paths: list[tuple[BsgEdge, ...]] = []

    def walk(n: str, acc: tuple[BsgEdge, ...]):
        succ = bsg.successors(n)
        if not succ:
            paths.append(acc)
            return
        for e in succ:
            walk(e.dst, acc + (e,))

    for n in order:
        if n not in has_in and bsg.successors(n):
            walk(n, ())
    return paths


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    edges: tuple[BsgEdge, ...]

    @property
    def id(self) -> str:
        return "->".join(self.nodes)


def _path_of(start: str, edges: tuple[BsgEdge, ...]) -> Path:
    return Path((start,) + tuple(e.dst for e in edges), edges)


def select_paths(bsg: Bsg, bound: int = 16) -> list[Path]:
    """Up to ``bound`` source-to-sink paths, preferring lexicographic order.

    Edge coverage is mandatory: a greedy cover (first path in lexicographic
    order that adds an uncovered edge) is always included, then the
    earliest remaining paths fill up to ``bound``. When the cover alone
    exceeds ``bound`` it is returned whole. Isolated nodes contribute
    single-node paths.
    """
    has_in = {e.dst for e in bsg.edges}
    has_out = {e.src for e in bsg.edges}
    everything = [_path_of(p[0].src, p) for p in all_simple_paths(bsg)]
    everything += [Path((n,), ()) for n in topo_order(bsg) if n not in has_in and n not in has_out]
    everything.sort(key=lambda p: p.nodes)
    covered: set = set()
    picked: set[int] = set()
    for i, p in enumerate(everything):
        if any(e.key not in covered for e in p.edges) or not p.edges:
            picked.add(i)
            covered |= {e.key for e in p.edges}
    for i in range(len(everything)):
        if len(picked) >= bound:
            break
        picked.add(i)
    return [everything[i] for i in sorted(picked)]


# --- serialization ---------------------------------------------------------

def serialize_bsg(bsg: Bsg) -> dict:
    return {
        "nodes": [n.to_doc() for n in bsg.nodes],
        "edges": [e.to_doc() for e in sorted(bsg.edges, key=lambda e: e.key)],
        "global_invariants": [c.to_doc() for c in bsg.global_invariants],
        "metadata": dict(bsg.metadata),
    }


def dumps_bsg(bsg: Bsg) -> str:
    return docio.dumps(serialize_bsg(bsg))


def _clauses(doc: dict, key: str, path: str) -> tuple[ContractClause, ...]:
    items = require(doc, key, path, list)
    return tuple(ContractClause.from_doc(c, f"{path}.{key}[{i}]") for i, c in enumerate(items))


def _types(doc: Any, path: str) -> dict[str, DataType]:
    if not isinstance(doc, dict):
        raise DocumentError(path, "expected an object of field types")
    return {k: DataType.from_doc(v, f"{path}.{k}") for k, v in doc.items()}


def _infer_inputs(clauses: Iterable[ContractClause]) -> dict[str, DataType]:
    """Field types guessed from the literals fields are compared against."""
    found: dict[str, DataType] = {}

    def visit(e: Expr):
        if isinstance(e, Binary):
            for a, b in ((e.left, e.right), (e.right, e.left)):
                if isinstance(a, Ident) and isinstance(b, Literal):
                    kind = {"int": INTEGER, "decimal": DECIMAL}.get(b.kind, STRING)
                    found.setdefault(a.path, kind)
            visit(e.left)
            visit(e.right)
        elif isinstance(e, Not):
            visit(e.operand)

    for c in clauses:
        if c.predicate is not None:
            visit(c.predicate)
            for name in sorted(free_identifiers(c.predicate)):
                found.setdefault(name, STRING)
    return dict(sorted(found.items()))


def _node_from_doc(doc: dict, path: str, scenario: str = "listing", taken: Iterable[str] = ()) -> OperationNode:
    name = require(doc, "operation", path, str)
    location = require(doc, "source_location", path, str)
    pre = _clauses(doc, "preconditions", path)
    post = _clauses(doc, "postconditions", path)
    confidence = require(doc, "confidence", path, str)
    if confidence not in ("high", "medium", "low"):
        raise DocumentError(path + ".confidence", f"bad confidence {confidence!r}")
    if "rule_ids" in doc:
        rule_ids = tuple(require(doc, "rule_ids", path, list))
    else:
        source_rule = doc.get("source_rule")
        rule_ids = (source_rule,) if source_rule else ()
    if "error_behavior" in doc:
        eb = ErrorBehavior.from_doc(doc["error_behavior"], path + ".error_behavior")
    else:
        eb = ErrorBehavior("reject when a precondition fails")
    try:
        loc = SourceLocation.parse(location)
    except ValueError as exc:
        raise DocumentError(path + ".source_location", str(exc)) from exc
    return OperationNode(
        id=doc["id"] if "id" in doc else make_node_id(scenario, name, taken),
        name=name,
        inputs=_types(doc["inputs"], path + ".inputs") if "inputs" in doc else _infer_inputs(pre),
        outputs=_types(doc["outputs"], path + ".outputs") if "outputs" in doc else {},
        preconditions=pre, postconditions=post, rule_ids=rule_ids,
        error_behavior=eb, confidence=confidence, source_location=loc,
    )


def deserialize_bsg(doc: Any) -> Bsg:
    """Rebuild a graph from its document.

    Accepts the full graph document or a single node document in the
    listing vocabulary, whose ``invariants`` become global invariants.
    """
    if not isinstance(doc, dict):
        raise DocumentError("", "expected an object")
    if "operation" in doc and "nodes" not in doc:
        node = _node_from_doc(doc, "")
        inv = _clauses(doc, "invariants", "") if "invariants" in doc else ()
        return Bsg((node,), (), inv, {"scenario_id": "listing"})
    nodes_doc = require(doc, "nodes", "", list)
    nodes = tuple(_node_from_doc(n, f".nodes[{i}]") for i, n in enumerate(nodes_doc))
    edges = []
    for i, e in enumerate(require(doc, "edges", "", list)):
        path = f".edges[{i}]"
        guard = e.get("guard") if isinstance(e, dict) else None
        try:
            g = parse_predicate(guard) if guard else None
        except PredicateSyntaxError as exc:
            raise DocumentError(path + ".guard", str(exc)) from exc
        label = require(e, "label", path, str)
        if label not in EDGE_LABELS:
            raise DocumentError(path + ".label", f"unknown label {label!r}")
        edges.append(BsgEdge(require(e, "from", path, str), require(e, "to", path, str), label, g))
    return Bsg(nodes, tuple(sorted(edges, key=lambda e: e.key)),
               _clauses(doc, "global_invariants", ""), dict(require(doc, "metadata", "", dict)))


# --- diffing ---------------------------------------------------------------

@dataclass(frozen=True)
class DiffEntry:
    change: str  # added | removed | changed
    what: str  # node | edge | clause | field
    where: str
    detail: str = ""

    def __str__(self) -> str:
        sign = {"added": "+", "removed": "-", "changed": "~"}[self.change]
        return f"{sign} {self.what} {self.where}" + (f": {self.detail}" if self.detail else "")


def _diff_clauses(a: Sequence[ContractClause], b: Sequence[ContractClause], where: str) -> list[DiffEntry]:
    out = []
    for i in range(max(len(a), len(b))):
        slot = f"{where}[{i}]"
        if i >= len(a):
            out.append(DiffEntry("added", "clause", slot, b[i].text))
        elif i >= len(b):
            out.append(DiffEntry("removed", "clause", slot, a[i].text))
        elif a[i] != b[i]:
            out.append(DiffEntry("changed", "clause", slot, f"{a[i].text!r} -> {b[i].text!r}"))
    return out


def diff_bsg(a: Bsg, b: Bsg) -> list[DiffEntry]:
    """Structural differences from ``a`` to ``b``; empty iff value-equal."""
    out: list[DiffEntry] = []
    an = {n.id: n for n in a.nodes}
    bn = {n.id: n for n in b.nodes}
    for nid in sorted(an.keys() - bn.keys()):
        out.append(DiffEntry("removed", "node", nid))
    for nid in sorted(bn.keys() - an.keys()):
        out.append(DiffEntry("added", "node", nid))
    for nid in sorted(an.keys() & bn.keys()):
        x, y = an[nid], bn[nid]
        out += _diff_clauses(x.preconditions, y.preconditions, f"{nid}.preconditions")
        out += _diff_clauses(x.postconditions, y.postconditions, f"{nid}.postconditions")
        for attr in ("name", "inputs", "outputs", "rule_ids", "error_behavior", "confidence", "source_location"):
            if getattr(x, attr) != getattr(y, attr):
                out.append(DiffEntry("changed", "field", f"{nid}.{attr}"))
    ae = {e.key: e for e in a.edges}
    be = {e.key: e for e in b.edges}
    for k in sorted(ae.keys() - be.keys()):
        out.append(DiffEntry("removed", "edge", "->".join(k[:2]), k[2]))
    for k in sorted(be.keys() - ae.keys()):
        out.append(DiffEntry("added", "edge", "->".join(k[:2]), k[2]))
    for k in sorted(ae.keys() & be.keys()):
        if ae[k] != be[k]:
            out.append(DiffEntry("changed", "edge", "->".join(k[:2]), "guard"))
    out += _diff_clauses(a.global_invariants, b.global_invariants, "global_invariants")
    if dict(a.metadata) != dict(b.metadata):
        out.append(DiffEntry("changed", "field", "metadata"))
    return out


# --- rendering helpers -----------------------------------------------------

def to_dot(bsg: Bsg) -> str:
    lines = ["digraph bsg {", "  rankdir=TB;"]
    for n in bsg.nodes:
        lines.append(f'  "{n.id}" [label="{n.name}\\n{", ".join(n.rule_ids)}"];')
    for e in sorted(bsg.edges, key=lambda e: e.key):
        label = e.label + (f" [{render(e.guard)}]" if e.guard is not None else "")
        label = label.replace('"', '\\"')
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def describe(bsg: Bsg) -> str:
    """Human-readable multi-line rendering for inspection."""
    out = [f"BSG {bsg.metadata.get('scenario_id', '?')}: {len(bsg.nodes)} nodes, {len(bsg.edges)} edges"]
    for n in bsg.nodes:
        out.append(f"\n[{n.id}] {n.name}  ({n.confidence}; {n.source_location}; rules {', '.join(n.rule_ids) or '-'})")
        out.append("  inputs:  " + ", ".join(f"{k}:{t.to_doc()}" for k, t in n.inputs.items()))
        out.append("  outputs: " + ", ".join(f"{k}:{t.to_doc()}" for k, t in n.outputs.items()))
        for c in n.preconditions:
            tag = "" if c.checkable else "  (prose)"
            out.append(f"  pre   {c.text}" + (f"  => {c.error_class}" if c.error_class else "") + tag)
        for c in n.postconditions:
            out.append(f"  post  {c.text}" + ("" if c.checkable else "  (prose)"))
    if bsg.edges:
        out.append("\nedges:")
        for e in sorted(bsg.edges, key=lambda e: e.key):
            guard = f" when {render(e.guard)}" if e.guard is not None else ""
            out.append(f"  {e.src} -{e.label}-> {e.dst}{guard}")
    if bsg.global_invariants:
        out.append("\ninvariants:")
        out += [f"  {c.text}" for c in bsg.global_invariants]
    return "\n".join(out) + "\n"


# --- gold-rule coverage ----------------------------------------------------

@dataclass(frozen=True)
class GoldRule:
    key: str
    description: str
    category: str
    span: SourceLocation
    match: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {"key": self.key, "description": self.description, "category": self.category,
               "span": str(self.span)}
        if self.match:
            doc["match"] = self.match
        return doc

    @classmethod
    def from_doc(cls, doc: dict, path: str = "") -> "GoldRule":
        try:
            span = SourceLocation.parse(require(doc, "span", path, str))
        except ValueError as exc:
            raise DocumentError(path + ".span", str(exc)) from exc
        return cls(require(doc, "key", path, str), require(doc, "description", path, str),
                   require(doc, "category", path, str), span, doc.get("match"))


@dataclass(frozen=True)
class Coverage:
    precision: float
    recall: float
    matched: tuple[str, ...]
    missed: tuple[str, ...]
    extra: tuple[str, ...]
    extracted: int
    gold: int

    def to_doc(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "matched": list(self.matched),
                "missed": list(self.missed), "extra": list(self.extra),
                "extracted": self.extracted, "gold": self.gold}


def rule_coverage(bsg_or_ids: Bsg | Iterable[str], gold: Sequence[GoldRule],
                  rule_keys: Mapping[str, Iterable[str]]) -> Coverage:
    """Precision = extracted ids matching some gold rule / extracted, recall = matched / gold (percent).

    ``rule_keys`` maps extracted rule ids to the gold keys attached to them.
    With no extracted rules precision is defined as 0.0.
    """
    keys = [g.key for g in gold]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise ValueError(f"duplicate gold keys: {', '.join(dupes)}")
    ids = bsg_or_ids.referenced_rule_ids() if isinstance(bsg_or_ids, Bsg) else set(bsg_or_ids)
    attached = {k for rid in ids for k in rule_keys.get(rid, ())}
    matched = tuple(k for k in keys if k in attached)
    missed = tuple(k for k in keys if k not in attached)
    extra = tuple(sorted(rid for rid in ids if not set(rule_keys.get(rid, ())) & set(keys)))
    precision = percent(len(ids) - len(extra), len(ids)) if ids else 0.0
    recall = percent(len(matched), len(keys)) if keys else 0.0
    return Coverage(precision, recall, matched, missed, extra, len(ids), len(keys))


def with_rule_ids(node: OperationNode, rule_ids: Iterable[str]) -> OperationNode:
    return replace(node, rule_ids=tuple(rule_ids))
