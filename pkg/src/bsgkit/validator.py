"""Test generation from a BSG, execution runners and the equivalence report.

Expected outcomes always come from the BSG (evaluated with the predicate
evaluator), never from the implementation under test. Requests are found
by a bounded, deterministic product search over small per-type domains.
"""

from __future__ import annotations

import itertools
import logging
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

from . import docio
from .bsg import Bsg, DataType, OperationNode, Path, select_paths
from .docio import DocumentError, require
from .metrics import compute_ber
from .predicate import (Binary, Expr, Ident, ListLiteral, Literal, TriState, conjuncts, evaluate,
                        evaluate_value, free_identifiers, parse_predicate, render)
from .transformer import (INVALID_INPUT, ExecutableServiceModel, Response, UnknownEndpoint,
                          check_inputs, interpret, node_effects)

logger = logging.getLogger(__name__)

SEARCH_CAP = 10_000
DEFAULT_BUDGET = 32
DEFAULT_PATH_BOUND = 16
DEFAULT_TIMEOUT = 5.0
WRONG_TYPE_PROBE = {"integer": "NaN", "decimal": "NaN", "string": 12345, "boolean": "NaN",
                    "date": 20240101, "enum_of": 12345, "list_of": "NaN"}
STRING_TOKENS = ("X", "Y")


class ValidationError(ValueError):
    pass


class StructuralFailure(RuntimeError):
    """The implementation could not be reached: missing endpoint, flow or wire."""


class RunnerStartError(RuntimeError):
    pass


# --- test model ------------------------------------------------------------

@dataclass(frozen=True)
class Expectation:
    outcome: str  # ACCEPT | REJECT | CONTRACT_HOLDS
    error_class: Optional[str] = None
    predicates: tuple[Expr, ...] = ()
    unknown: bool = False

    def describe(self) -> str:
        if self.outcome == "REJECT":
            return f"REJECT with {self.error_class}" + (" (unknown)" if self.unknown else "")
        if not self.predicates:
            return self.outcome
        return f"{self.outcome} with " + " and ".join(render(p) for p in self.predicates)

    def to_doc(self) -> dict:
        return {"outcome": self.outcome, "error_class": self.error_class,
                "predicates": [render(p) for p in self.predicates], "unknown": self.unknown}

    @classmethod
    def from_doc(cls, doc: Any, path: str) -> "Expectation":
        outcome = require(doc, "outcome", path, str)
        if outcome not in ("ACCEPT", "REJECT", "CONTRACT_HOLDS"):
            raise DocumentError(f"{path}.outcome", f"unknown outcome {outcome!r}")
        try:
            preds = tuple(parse_predicate(t) for t in doc.get("predicates", ()))
        except ValueError as exc:
            raise DocumentError(f"{path}.predicates", str(exc)) from exc
        if outcome == "REJECT" and not doc.get("error_class"):
            raise DocumentError(f"{path}.error_class", "REJECT needs an error class")
        return cls(outcome, doc.get("error_class"), preds, bool(doc.get("unknown", False)))


@dataclass(frozen=True)
class TraceStep:
    endpoint: str
    request: Mapping[str, Any]
    bindings: Mapping[str, str]
    expect: Expectation
    produces: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {"endpoint": self.endpoint, "request": dict(self.request), "bindings": dict(self.bindings),
                "expect": self.expect.to_doc(), "produces": list(self.produces)}


@dataclass(frozen=True)
class TraceScript:
    steps: tuple[TraceStep, ...]
    expected_final: tuple[Expr, ...]

    def to_doc(self) -> dict:
        return {"steps": [s.to_doc() for s in self.steps],
                "expected_final": [render(p) for p in self.expected_final]}

    @classmethod
    def from_doc(cls, doc: Any, path: str) -> "TraceScript":
        steps = []
        produced: set[str] = set()
        for i, s in enumerate(require(doc, "steps", path, list)):
            p = f"{path}.steps[{i}]"
            bindings = dict(s.get("bindings", {}))
            if any(src not in produced for src in bindings.values()):
                raise DocumentError(p + ".bindings", "binding reads a field no earlier step produces")
            produces = tuple(s.get("produces", ()))
            steps.append(TraceStep(require(s, "endpoint", p, str), dict(s.get("request", {})), bindings,
                                   Expectation.from_doc(require(s, "expect", p, dict), p + ".expect"), produces))
            produced |= set(produces)
        try:
            final = tuple(parse_predicate(t) for t in doc.get("expected_final", ()))
        except ValueError as exc:
            raise DocumentError(f"{path}.expected_final", str(exc)) from exc
        return cls(tuple(steps), final)


def _names(preds: Iterable[Expr]) -> set[str]:
    out: set[str] = set()
    for p in preds:
        out |= free_identifiers(p)
    return out


@dataclass(frozen=True)
class TestCase:
    id: str
    kind: str  # contract | boundary | trace
    target: str
    expectation: Expectation
    request: Mapping[str, Any] = field(default_factory=dict)
    script: Optional[TraceScript] = None
    vacuous: Optional[str] = None
    rules: tuple[str, ...] = ()
    node_ids: tuple[str, ...] = ()

    __test__ = False  # not a pytest class

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.node_ids or (self.target,)

    def to_doc(self) -> dict:
        doc = {"id": self.id, "kind": self.kind, "target": self.target,
               "expectation": self.expectation.to_doc(), "request": dict(self.request),
               "vacuous": self.vacuous, "rules": list(self.rules), "node_ids": list(self.node_ids)}
        if self.script is not None:
            doc["script"] = self.script.to_doc()
        return doc

    @classmethod
    def from_doc(cls, doc: Any, path: str = "") -> "TestCase":
        kind = require(doc, "kind", path, str)
        if kind not in ("contract", "boundary", "trace"):
            raise DocumentError(f"{path}.kind", f"unknown test kind {kind!r}")
        script = TraceScript.from_doc(doc["script"], path + ".script") if doc.get("script") else None
        if kind == "trace" and script is None:
            raise DocumentError(f"{path}.script", "trace tests need a script")
        return cls(require(doc, "id", path, str), kind, require(doc, "target", path, str),
                   Expectation.from_doc(require(doc, "expectation", path, dict), path + ".expectation"),
                   dict(doc.get("request", {})), script, doc.get("vacuous"),
                   tuple(doc.get("rules", ())), tuple(doc.get("node_ids", ())))


def check_targets(tests: Sequence[TestCase], bsg: Bsg) -> list[str]:
    """Test ids whose targets are not nodes (or whose trace steps are not nodes) of ``bsg``."""
    known = set(bsg.node_ids)
    bad = []
    for t in tests:
        nodes = [s.endpoint for s in t.script.steps] if t.script else [t.target]
        if any(n not in known for n in nodes + list(t.node_ids)):
            bad.append(t.id)
    return bad


# --- BSG-side simulation ---------------------------------------------------

@dataclass(frozen=True)
class Outcome:
    """What the BSG says a node does with a request."""

    status: str  # OK | REJECTED | INVALID
    error_class: Optional[str] = None
    unknown: bool = False
    env: Mapping[str, Any] = field(default_factory=dict)
    outputs: Mapping[str, Any] = field(default_factory=dict)
    post_ok: bool = True


def simulate(node: OperationNode, request: Mapping[str, Any], upto: Optional[int] = None) -> Outcome:
    """Evaluate a node's contract on ``request``.

    Input types first, then preconditions in order (the first non-TRUE one
    decides the error class), then the effects implied by the
    postconditions and the postconditions themselves.
    """
    if check_inputs(node.inputs, request) is not None:
        return Outcome("REJECTED", INVALID_INPUT)
    env = {k: request.get(k) for k in node.inputs}
    for c in node.preconditions:
        if c.predicate is None:
            continue
        r = evaluate(c.predicate, env)
        if r is not TriState.TRUE:
            return Outcome("REJECTED", c.error_class or node.error_behavior.error_class,
                           r is TriState.UNKNOWN, env)
    outputs = {}
    for e in node_effects(node):
        if e.guard is not None and evaluate(e.guard, env) is not TriState.TRUE:
            continue
        value = evaluate_value(e.expr, env)
        env[e.target] = value
        outputs[e.target] = value
    post_ok = all(evaluate(c.predicate, env) is TriState.TRUE
                  for c in node.postconditions if c.predicate is not None)
    outputs = {k: env[k] for k in node.outputs if k in env} | outputs
    return Outcome("OK", None, False, env, outputs, post_ok)


def _preds_true(preds: Sequence[Expr], env: Mapping[str, Any]) -> bool:
    return all(evaluate(p, env) is TriState.TRUE for p in preds)


def postconditions(node: OperationNode) -> tuple[Expr, ...]:
    return tuple(c.predicate for c in node.postconditions if c.predicate is not None)


def preconditions(node: OperationNode) -> list[tuple[Expr, str]]:
    return [(c.predicate, c.error_class or node.error_behavior.error_class)
            for c in node.preconditions if c.predicate is not None]


# --- domains ---------------------------------------------------------------

def _comparisons(expr: Expr) -> Iterator[Binary]:
    if isinstance(expr, Binary):
        if expr.op in ("==", "!=", "<", "<=", ">", ">=", "in"):
            yield expr
        yield from _comparisons(expr.left)
        yield from _comparisons(expr.right)
    elif hasattr(expr, "operand"):
        yield from _comparisons(expr.operand)
    elif hasattr(expr, "arg"):
        yield from _comparisons(expr.arg)


def _literals(expr: Expr) -> Iterator[Literal]:
    if isinstance(expr, Literal):
        yield expr
    elif isinstance(expr, ListLiteral):
        yield from expr.items
    elif isinstance(expr, Binary):
        yield from _literals(expr.left)
        yield from _literals(expr.right)
    elif hasattr(expr, "operand"):
        yield from _literals(expr.operand)
    elif hasattr(expr, "arg"):
        yield from _literals(expr.arg)


def related_literals(preds: Iterable[Expr]) -> dict[str, list[Any]]:
    """Literal values appearing in a comparison together with each field."""
    out: dict[str, list[Any]] = {}
    for p in preds:
        for cmp in _comparisons(p):
            values = [l.value for l in _literals(cmp) if l.kind != "null"]
            for name in free_identifiers(cmp):
                bucket = out.setdefault(name, [])
                bucket += values
    return out


def _dedupe(values: Iterable[Any]) -> list[Any]:
    out: list[Any] = []
    seen = set()
    for v in values:
        key = (type(v).__name__, repr(v))
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def field_domain(dtype: DataType, literals: Sequence[Any]) -> list[Any]:
    """Small ordered probe domain: typical values first, then literal ±1."""
    k = dtype.kind
    nums = [v for v in literals if isinstance(v, (int, Decimal)) and not isinstance(v, bool)]
    if k in ("integer", "decimal"):
        conv = int if k == "integer" else Decimal
        base = [10, 1, 0, -1]
        around = []
        for v in nums:
            around += [v, v - 1, v + 1]
        vals = [conv(v) for v in base + around if k == "decimal" or v == int(v)]
        return _dedupe(vals)
    if k == "boolean":
        return [True, False]
    if k == "enum_of":
        return list(dtype.values)
    if k == "date":
        return _dedupe([v for v in literals if isinstance(v, str) and dtype.admits(v)] + ["2024-01-01"])
    if k == "list_of":
        item = field_domain(dtype.item, ())
        return [[], [item[0], item[0] * 2] if isinstance(item[0], (int, Decimal)) else [item[0]]]
    strs = [v for v in literals if isinstance(v, str)]
    return _dedupe(strs + list(STRING_TOKENS))


def _search(names: Sequence[str], domains: Mapping[str, list[Any]], accept,
            fixed: Optional[Mapping[str, Any]] = None, cap: int = SEARCH_CAP) -> Optional[dict]:
    names = list(names)
    pools = [domains[n] for n in names]
    for combo in itertools.islice(itertools.product(*pools), cap):
        candidate = dict(fixed or {})
        candidate.update(zip(names, combo))
        if accept(candidate):
            return candidate
    return None


def _node_domains(node: OperationNode, extra: Iterable[Expr] = ()) -> dict[str, list[Any]]:
    preds = [p for p, _ in preconditions(node)] + list(postconditions(node)) + list(extra)
    lits = related_literals(preds)
    return {f: field_domain(t, lits.get(f, ())) for f, t in node.inputs.items()}


def _relevant(node: OperationNode) -> set[str]:
    names = _names(p for p, _ in preconditions(node)) | _names(postconditions(node))
    for e in node_effects(node):
        names |= free_identifiers(e.expr) | (free_identifiers(e.guard) if e.guard is not None else set())
    return names


def _order_inputs(node: OperationNode, domains: Mapping[str, list[Any]]) -> tuple[list[str], dict]:
    """Fields that matter are searched; the rest are pinned to their first value."""
    relevant = _relevant(node)
    names = sorted(f for f in node.inputs if f in relevant)
    fixed = {f: domains[f][0] for f in node.inputs if f not in relevant}
    return names, fixed


# --- contract tests --------------------------------------------------------

def _rules(node: OperationNode, rule_id: Optional[str] = None) -> tuple[str, ...]:
    return (rule_id,) if rule_id else tuple(node.rule_ids)


def accept_request(node: OperationNode) -> Optional[dict]:
    domains = _node_domains(node)
    names, fixed = _order_inputs(node, domains)

    def ok(c):
        o = simulate(node, c)
        return o.status == "OK" and o.post_ok
    return _search(names, domains, ok, fixed)


def gen_contract_tests(bsg: Bsg, budget: int = DEFAULT_BUDGET) -> list[TestCase]:
    """One ACCEPT test per node plus one REJECT test per precondition."""
    tests: list[TestCase] = []
    for node in bsg.nodes:
        posts = postconditions(node)
        base = accept_request(node)
        accept = Expectation("ACCEPT", None, posts)
        tests.append(TestCase(f"contract:{node.id}:accept", "contract", node.id, accept, base or {},
                              vacuous=None if base is not None else "precondition conjunction unsatisfiable",
                              rules=tuple(node.rule_ids)))
        domains = _node_domains(node)
        if base is not None:
            domains = {f: _dedupe([base[f]] + d) for f, d in domains.items()}
        names, fixed = _order_inputs(node, domains)
        clauses = [c for c in node.preconditions if c.predicate is not None]
        for i, clause in enumerate(clauses[:max(0, budget - 1)]):
            cls = clause.error_class or node.error_behavior.error_class
            found = None
            for strict in (True, False):
                def violates(c, i=i, strict=strict):
                    env = {k: c.get(k) for k in node.inputs}
                    if check_inputs(node.inputs, env) is not None:
                        return False
                    others = [p.predicate for j, p in enumerate(clauses) if j != i and (strict or j < i)]
                    return (evaluate(clauses[i].predicate, env) is TriState.FALSE
                            and _preds_true(others, env))
                found = _search(names, domains, violates, fixed)
                if found is not None:
                    break
            tests.append(TestCase(f"contract:{node.id}:reject-{i}", "contract", node.id,
                                  Expectation("REJECT", cls), found or {},
                                  vacuous=None if found is not None else f"cannot violate {clause.text} alone",
                                  rules=_rules(node, clause.rule_id)))
    return tests


# --- boundary tests --------------------------------------------------------

def field_bounds(node: OperationNode, name: str) -> tuple[Optional[Any], Optional[Any], list[Any]]:
    """(min, max, enum values) implied for ``name`` by the node's preconditions."""
    lo = hi = None
    values: list[Any] = []
    step = 1 if node.inputs[name].kind == "integer" else Decimal(1)
    for pred, _ in preconditions(node):
        for c in conjuncts(pred):
            if not isinstance(c, Binary):
                continue
            if c.op == "in" and c.left == Ident(name) and isinstance(c.right, ListLiteral):
                values += [l.value for l in c.right.items]
                continue
            if isinstance(c.left, Ident) and c.left.path == name and isinstance(c.right, Literal):
                op, v = c.op, c.right.value
            elif isinstance(c.right, Ident) and c.right.path == name and isinstance(c.left, Literal):
                op, v = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}.get(c.op, c.op), c.left.value
            else:
                continue
            if not isinstance(v, (int, Decimal)) or isinstance(v, bool):
                continue
            if op == ">=":
                lo = v if lo is None else max(lo, v)
            elif op == ">":
                lo = v + step if lo is None else max(lo, v + step)
            elif op == "<=":
                hi = v if hi is None else min(hi, v)
            elif op == "<":
                hi = v - step if hi is None else min(hi, v - step)
    return lo, hi, values


def _probes(node: OperationNode, name: str) -> list[tuple[str, Any]]:
    t = node.inputs[name]
    lo, hi, enum = field_bounds(node, name)
    out: list[tuple[str, Any]] = []
    if lo is not None:
        out += [("min-1", lo - 1), ("min", lo)]
    if hi is not None:
        out += [("max", hi), ("max+1", hi + 1)]
    if enum or t.kind == "enum_of":
        for v in enum or t.values:
            out.append((f"enum-{v}", v))
        out.append(("enum-XX", "XX"))
    if t.kind in ("string", "enum_of"):
        out.append(("empty", ""))
    if t.kind == "list_of":
        out.append(("empty", []))
    out.append(("null", None))
    out.append(("wrong-type", WRONG_TYPE_PROBE.get(t.kind, "NaN")))
    if t.kind == "integer":
        out = [(l, int(v)) if isinstance(v, Decimal) and v == int(v) else (l, v) for l, v in out]
    return out


def expectation_for(node: OperationNode, request: Mapping[str, Any]) -> tuple[Expectation, Optional[str]]:
    """Oracle for a probe: the BSG's verdict, or a reason to mark it vacuous."""
    o = simulate(node, request)
    if o.status == "REJECTED":
        return Expectation("REJECT", o.error_class, (), o.unknown), None
    if not o.post_ok:
        return Expectation("ACCEPT", None, postconditions(node)), "postconditions do not hold on this probe"
    return Expectation("ACCEPT", None, postconditions(node)), None


def gen_boundary_tests(bsg: Bsg) -> list[TestCase]:
    """Range, enum, empty, null and wrong-type probes around the ACCEPT request."""
    tests: list[TestCase] = []
    for node in bsg.nodes:
        base = accept_request(node)
        if base is None:
            continue
        seen: set[str] = set()
        for name in sorted(node.inputs):
            for label, value in _probes(node, name):
                request = dict(base)
                request[name] = value
                key = docio.dumps_line(request)
                if key in seen:
                    continue
                seen.add(key)
                exp, vac = expectation_for(node, request)
                tests.append(TestCase(f"boundary:{node.id}:{name}={label}", "boundary", node.id, exp,
                                      request, vacuous=vac, rules=tuple(node.rule_ids)))
    return tests


# --- trace tests -----------------------------------------------------------

def _path_plan(bsg: Bsg, path: Path) -> tuple[list[str], dict[str, list[Any]], list[set[str]]]:
    """Free fields of a path, their domains, and what each step may bind."""
    invariants = [c.predicate for c in bsg.global_invariants if c.predicate is not None]
    nodes = [bsg.node(n) for n in path.nodes]
    guards = [e.guard for e in path.edges if e.guard is not None]
    preds = guards + invariants
    for n in nodes:
        preds += [p for p, _ in preconditions(n)] + list(postconditions(n))
    lits = related_literals(preds)
    types: dict[str, DataType] = {}
    produced: set[str] = set()
    free: list[str] = []
    bindable: list[set[str]] = []
    for i, n in enumerate(nodes):
        if i > 0 and path.edges[i - 1].guard is not None:
            for f in sorted(free_identifiers(path.edges[i - 1].guard) - produced):
                if f not in free:
                    free.append(f)
        bindable.append(set(produced))
        for f in sorted(n.inputs):
            types.setdefault(f, n.inputs[f])
            if f not in produced and f not in free:
                free.append(f)
        produced |= set(n.outputs) | {e.target for e in node_effects(n)}
        for f, t in n.outputs.items():
            types.setdefault(f, t)
    for f in sorted(_names(invariants) | _names(postconditions(nodes[-1]))):
        if f not in free and f not in produced:
            free.append(f)
    domains = {}
    for f in free:
        t = types.get(f) or _guess_type(lits.get(f, ()))
        domains[f] = field_domain(t, lits.get(f, ()))
    return free, domains, bindable


def _guess_type(values: Sequence[Any]) -> DataType:
    if any(isinstance(v, Decimal) for v in values):
        return DataType("decimal")
    if any(isinstance(v, int) and not isinstance(v, bool) for v in values):
        return DataType("integer")
    return DataType("string")


def run_path(bsg: Bsg, path: Path, start: Mapping[str, Any]) -> Optional[tuple[list[Outcome], dict]]:
    """Simulate ``path`` from ``start``; None when the path is not traversed in full."""
    env = dict(start)
    outcomes: list[Outcome] = []
    for i, nid in enumerate(path.nodes):
        if i > 0:
            edge = path.edges[i - 1]
            rejected = outcomes[-1].status != "OK"
            if (edge.label == "error") != rejected:
                return None
            if edge.guard is not None and evaluate(edge.guard, env) is not TriState.TRUE:
                return None
        node = bsg.node(nid)
        o = simulate(node, {k: env.get(k) for k in node.inputs})
        if o.status == "OK":
            if not o.post_ok:
                return None
            env.update(o.outputs)
        elif i == len(path.nodes) - 1 or path.edges[i].label != "error" or o.error_class == INVALID_INPUT:
            return None
        outcomes.append(o)
    return outcomes, env


def gen_trace_tests(bsg: Bsg, path_bound: int = DEFAULT_PATH_BOUND) -> list[TestCase]:
    """One script per selected path, threading outputs to later inputs by name."""
    invariants = tuple(c.predicate for c in bsg.global_invariants if c.predicate is not None)
    inv_rules = tuple(c.rule_id for c in bsg.global_invariants if c.rule_id)
    tests = []
    for path in select_paths(bsg, path_bound):
        nodes = [bsg.node(n) for n in path.nodes]
        final = postconditions(nodes[-1]) + invariants
        free, domains, bindable = _path_plan(bsg, path)

        def traversed(c):
            r = run_path(bsg, path, c)
            return r is not None and _preds_true(final, r[1])
        found = _search(free, domains, traversed)
        rules = tuple(dict.fromkeys(r for n in nodes for r in n.rule_ids)) + inv_rules
        if found is None:
            script = TraceScript((), final)
            tests.append(TestCase(f"trace:{path.id}", "trace", path.id, Expectation("CONTRACT_HOLDS", None, final),
                                  script=script, vacuous="no request traverses this path",
                                  rules=rules, node_ids=path.nodes))
            continue
        outcomes, _ = run_path(bsg, path, found)
        steps = []
        ok_outputs: set[str] = set()
        for i, (node, o) in enumerate(zip(nodes, outcomes)):
            bind = {f: f for f in sorted(node.inputs) if f in bindable[i] and f in ok_outputs}
            request = {f: found[f] for f in sorted(node.inputs) if f not in bind and f in found}
            if i == 0:
                request.update({f: found[f] for f in free if f not in request})
            if o.status == "OK":
                exp = Expectation("ACCEPT", None, ())
                ok_outputs |= set(o.outputs)
            else:
                exp = Expectation("REJECT", o.error_class, (), o.unknown)
            steps.append(TraceStep(node.id, request, bind, exp, tuple(sorted(o.outputs))))
        tests.append(TestCase(f"trace:{path.id}", "trace", path.id, Expectation("CONTRACT_HOLDS", None, final),
                              script=TraceScript(tuple(steps), final), rules=rules, node_ids=path.nodes))
    return tests


def generate_suite(bsg: Bsg, budget: int = DEFAULT_BUDGET, path_bound: int = DEFAULT_PATH_BOUND) -> list[TestCase]:
    return gen_contract_tests(bsg, budget) + gen_boundary_tests(bsg) + gen_trace_tests(bsg, path_bound)


def covered_edges(bsg: Bsg, tests: Sequence[TestCase]) -> set[tuple[str, str, str]]:
    """Edge keys traversed by non-vacuous trace tests."""
    out = set()
    by_pair = {}
    for e in bsg.edges:
        by_pair.setdefault((e.src, e.dst), []).append(e)
    for t in tests:
        if t.kind != "trace" or t.vacuous:
            continue
        for a, b in zip(t.node_ids, t.node_ids[1:]):
            out |= {e.key for e in by_pair.get((a, b), ())}
    return out


# --- runners ---------------------------------------------------------------

class InProcessRunner:
    """Calls the ESM interpreter directly."""

    mode = "in_process_esm"

    def __init__(self, esm: ExecutableServiceModel):
        self.esm = esm

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def call(self, endpoint: str, payload: Mapping[str, Any]) -> Response:
        try:
            return interpret(self.esm, endpoint, payload)
        except UnknownEndpoint as exc:
            raise StructuralFailure(f"endpoint {endpoint} is absent") from exc

    def has_flow(self, flow_id: str) -> bool:
        return any(f.id == flow_id for f in self.esm.flows)


def response_from_wire(doc: Any) -> Response:
    if not isinstance(doc, dict) or not isinstance(doc.get("status"), str):
        raise StructuralFailure(f"malformed response {doc!r}")
    status = doc["status"]
    if status not in ("OK", "REJECTED", "CONTRACT_VIOLATION"):
        raise StructuralFailure(f"service answered {status}: {doc.get('error_class')}")
    outputs = doc.get("outputs") or {}
    if not isinstance(outputs, dict):
        raise StructuralFailure("outputs must be an object")
    return Response(status, outputs, doc.get("error_class"))


class ExternalRunner:
    """Wire-protocol client for a separately running service.

    The manifest names a ``command`` (argv list) and a ``mode``: ``stdio``
    speaks one JSON document per line over the child's standard streams;
    ``port`` connects to ``127.0.0.1:<port>`` with the same framing.
    """

    mode = "external_process"

    def __init__(self, manifest: Mapping[str, Any], timeout: float = DEFAULT_TIMEOUT, cwd: Optional[str] = None):
        self.manifest = dict(manifest)
        self.timeout = float(self.manifest.get("timeout", timeout))
        self.cwd = cwd or self.manifest.get("workdir")
        self.proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._sock: Optional[socket.socket] = None
        self._sockfile = None
        self._lock = threading.Lock()

    def start(self) -> None:
        command = self.manifest.get("command")
        wire = self.manifest.get("mode", "stdio")
        if not command or wire not in ("stdio", "port"):
            raise RunnerStartError("manifest needs a command and mode stdio|port")
        try:
            self.proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         stderr=subprocess.DEVNULL, text=True, encoding="utf-8",
                                         bufsize=1, cwd=self.cwd)
        except OSError as exc:
            raise RunnerStartError(f"cannot start {command}: {exc}") from exc
        threading.Thread(target=self._pump, daemon=True).start()
        if wire == "port":
            self._connect(int(self.manifest["port"]))

    def _pump(self) -> None:
        assert self.proc is not None and self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _connect(self, port: int) -> None:
        import time
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                self._sock = socket.create_connection(("127.0.0.1", port), timeout=self.timeout)
                self._sockfile = self._sock.makefile("rw", encoding="utf-8", newline="\n")
                return
            except OSError as exc:
                if time.monotonic() > deadline or (self.proc and self.proc.poll() is not None):
                    self.stop()
                    raise RunnerStartError(f"service never listened on port {port}") from exc
                time.sleep(0.05)

    def stop(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self.proc is not None:
            if self.proc.stdin:
                try:
                    self.proc.stdin.close()
                except OSError:
                    pass
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
            self.proc = None

    def _exchange(self, line: str) -> str:
        if self._sock is not None:
            self._sock.settimeout(self.timeout)
            try:
                self._sockfile.write(line + "\n")
                self._sockfile.flush()
                reply = self._sockfile.readline()
            except socket.timeout as exc:
                # the stream is now unusable; a fresh connection resynchronizes it
                self._sock.close()
                self._connect(int(self.manifest["port"]))
                raise StructuralFailure(f"timeout after {self.timeout}s") from exc
            except OSError as exc:
                raise StructuralFailure(f"wire failure: {exc}") from exc
            if not reply:
                raise StructuralFailure("service closed the connection")
            return reply
        if self.proc is None or self.proc.stdin is None:
            raise StructuralFailure("runner not started")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except OSError as exc:
            raise StructuralFailure(f"wire failure: {exc}") from exc
        try:
            reply = self._lines.get(timeout=self.timeout)
        except queue.Empty as exc:
            # a late reply would desynchronize the stream; restart the child
            self.stop()
            self._lines = queue.Queue()
            self.start()
            raise StructuralFailure(f"timeout after {self.timeout}s") from exc
        if reply is None:
            raise StructuralFailure("service exited")
        return reply

    def call(self, endpoint: str, payload: Mapping[str, Any]) -> Response:
        line = docio.dumps_line({"endpoint": endpoint, "payload": dict(payload)})
        with self._lock:
            reply = self._exchange(line)
        try:
            doc = docio.loads(reply)
        except ValueError as exc:
            raise StructuralFailure(f"unparseable reply {reply!r}") from exc
        return response_from_wire(doc)

    def has_flow(self, flow_id: str) -> bool:
        return True


def serve_lines(handler, lines: Iterable[str], write) -> None:
    """Server side of the wire protocol: one request per line, one reply per line."""
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            req = docio.loads(line)
            reply = handler(req["endpoint"], req.get("payload") or {})
        except Exception as exc:  # the wire must stay up
            reply = {"status": "ERROR", "error_class": type(exc).__name__}
        write(docio.dumps_line(reply) + "\n")


def esm_handler(esm: ExecutableServiceModel):
    def handle(endpoint: str, payload: Mapping[str, Any]) -> dict:
        if not esm.has_endpoint(endpoint):
            return {"status": "ERROR", "error_class": "UNKNOWN_ENDPOINT"}
        return interpret(esm, endpoint, payload).to_wire()
    return handle


# --- execution -------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    test_id: str
    passed: bool
    observed: str
    expected: str
    root_cause: Optional[str]  # point | structural | unknown
    node_ids: tuple[str, ...]
    vacuous: bool = False

    __test__ = False


@dataclass(frozen=True)
class NodeStatus:
    status: str
    passed: int
    total: int


@dataclass(frozen=True)
class Failure:
    test_id: str
    observed: str
    expected: str
    root_cause: str
    node_ids: tuple[str, ...]


@dataclass(frozen=True)
class EquivalenceReport:
    per_node: Mapping[str, NodeStatus]
    ber_percent: float
    failures: tuple[Failure, ...]
    recommendations: tuple[str, ...]
    iteration: int = 0
    runner_error: Optional[str] = None
    passed: int = 0
    total: int = 0
    vacuous: tuple[str, ...] = ()
    results: tuple[TestResult, ...] = field(default=(), compare=False)

    def to_doc(self) -> dict:
        return {
            "per_node": {k: {"status": v.status, "passed": v.passed, "total": v.total}
                         for k, v in sorted(self.per_node.items())},
            "ber_percent": self.ber_percent,
            "failures": [{"test_id": f.test_id, "observed": f.observed, "expected": f.expected,
                          "root_cause": f.root_cause, "node_ids": list(f.node_ids)} for f in self.failures],
            "recommendations": list(self.recommendations),
            "iteration": self.iteration,
            "runner_error": self.runner_error,
            "passed": self.passed,
            "total": self.total,
            "vacuous": list(self.vacuous),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EquivalenceReport":
        per_node = {k: NodeStatus(v["status"], v["passed"], v["total"]) for k, v in doc["per_node"].items()}
        failures = tuple(Failure(f["test_id"], f["observed"], f["expected"], f["root_cause"], tuple(f["node_ids"]))
                         for f in doc["failures"])
        return cls(per_node, float(doc["ber_percent"]), failures, tuple(doc["recommendations"]),
                   int(doc["iteration"]), doc.get("runner_error"), int(doc["passed"]), int(doc["total"]),
                   tuple(doc.get("vacuous", ())))


def _observe(r: Response) -> str:
    if r.status == "OK":
        return "OK " + docio.dumps_line(dict(r.outputs))
    return f"{r.status} {r.error_class}"


def _check(exp: Expectation, request: Mapping[str, Any], r: Response) -> bool:
    if exp.outcome == "REJECT":
        return r.status == "REJECTED" and r.error_class == exp.error_class
    if r.status != "OK":
        return False
    env = dict(request)
    env.update(r.outputs)
    return _preds_true(exp.predicates, env)


def _run_trace(test: TestCase, runner) -> tuple[bool, str]:
    if not runner.has_flow(test.target):
        raise StructuralFailure(f"flow {test.target} is not wired")
    env: dict[str, Any] = {}
    for i, step in enumerate(test.script.steps):
        request = dict(step.request)
        request.update({f: env.get(src) for f, src in step.bindings.items()})
        env.update(request)
        r = runner.call(step.endpoint, request)
        if not _check(step.expect, request, r):
            return False, f"step {i} ({step.endpoint}): {_observe(r)}"
        if r.status == "OK":
            env.update(r.outputs)
    failed = [render(p) for p in test.script.expected_final if evaluate(p, env) is not TriState.TRUE]
    if failed:
        return False, "final state violates " + " and ".join(failed)
    return True, "all steps and final predicates hold"


def run_test(test: TestCase, runner) -> TestResult:
    expected = test.expectation.describe()
    if test.vacuous:
        return TestResult(test.id, False, "not executed", expected, None, test.nodes, True)
    try:
        if test.kind == "trace":
            passed, observed = _run_trace(test, runner)
        else:
            r = runner.call(test.target, test.request)
            passed, observed = _check(test.expectation, test.request, r), _observe(r)
    except StructuralFailure as exc:
        return TestResult(test.id, False, str(exc), expected, "structural", test.nodes)
    except Exception as exc:  # anything else is a diagnosis we cannot make
        logger.warning("test %s raised %r", test.id, exc)
        return TestResult(test.id, False, repr(exc), expected, "unknown", test.nodes)
    return TestResult(test.id, passed, observed, expected, None if passed else "point", test.nodes)


def _recommend(failures: Sequence[Failure]) -> list[str]:
    out = []
    by_node: dict[str, dict[str, int]] = {}
    for f in failures:
        for n in f.node_ids:
            counts = by_node.setdefault(n, {})
            counts[f.root_cause] = counts.get(f.root_cause, 0) + 1
    for node, counts in sorted(by_node.items()):
        if counts.get("structural"):
            out.append(f"{node}: endpoint or flow missing ({counts['structural']} tests); "
                       "needs re-architecture, not a patch")
        if counts.get("point"):
            out.append(f"{node}: {counts['point']} diverging tests; regenerate from its contract")
        if counts.get("unknown"):
            out.append(f"{node}: {counts['unknown']} tests errored; inspect the runner log")
    return out


def summarize(results: Sequence[TestResult], iteration: int = 0, runner_error: Optional[str] = None,
              nodes: Iterable[str] = ()) -> EquivalenceReport:
    results = sorted(results, key=lambda r: r.test_id)
    live = [r for r in results if not r.vacuous]
    counts: dict[str, list[int]] = {n: [0, 0] for n in nodes}
    for r in live:
        for n in r.node_ids:
            c = counts.setdefault(n, [0, 0])
            c[0] += r.passed
            c[1] += 1
    per_node = {}
    for n, (p, t) in counts.items():
        status = "PASS" if p == t else ("FAIL" if p == 0 else "PARTIAL")
        per_node[n] = NodeStatus(status, p, t)
    passed = sum(r.passed for r in live)
    ber = compute_ber(passed, len(live)) if live else 0.0
    failures = tuple(Failure(r.test_id, r.observed, r.expected, r.root_cause or "unknown", r.node_ids)
                     for r in live if not r.passed)
    return EquivalenceReport(per_node, ber, failures, tuple(_recommend(failures)), iteration, runner_error,
                             passed, len(live), tuple(r.test_id for r in results if r.vacuous), tuple(results))


def execute(tests: Sequence[TestCase], runner, iteration: int = 0, nodes: Iterable[str] = ()) -> EquivalenceReport:
    """Run every test and reduce the results, ordered by test id."""
    tests = sorted(tests, key=lambda t: t.id)
    try:
        runner.start()
    except RunnerStartError as exc:
        results = [TestResult(t.id, False, f"runner failed to start: {exc}", t.expectation.describe(),
                              None if t.vacuous else "structural", t.nodes, bool(t.vacuous)) for t in tests]
        return summarize(results, iteration, str(exc), nodes)
    try:
        results = [run_test(t, runner) for t in tests]
    finally:
        runner.stop()
    return summarize(results, iteration, None, nodes)


def runner_for(package) -> Any:
    if package.variant == "esm":
        return InProcessRunner(package.esm)
    return ExternalRunner(package.manifest)


def validate(bsg: Bsg, package, iteration: int = 0, tests: Optional[Sequence[TestCase]] = None) -> EquivalenceReport:
    """Generate the suite from ``bsg`` and run it against ``package``."""
    suite = list(tests) if tests is not None else generate_suite(bsg)
    return execute(suite, runner_for(package), iteration, bsg.node_ids)


# --- feedback --------------------------------------------------------------

@dataclass(frozen=True)
class FailingTest:
    test_id: str
    expected: str
    observed: str
    node_ids: tuple[str, ...]
    root_cause: str


@dataclass(frozen=True)
class FeedbackBundle:
    failing: tuple[FailingTest, ...]
    targeted_nodes: frozenset[str]

    def to_doc(self) -> dict:
        return {"failing": [{"test_id": f.test_id, "expected": f.expected, "observed": f.observed,
                             "node_ids": list(f.node_ids), "root_cause": f.root_cause} for f in self.failing],
                "targeted_nodes": sorted(self.targeted_nodes)}


def package_feedback(report: EquivalenceReport) -> FeedbackBundle:
    if not report.failures:
        raise ValidationError("report has no failures to feed back")
    failing = tuple(FailingTest(f.test_id, f.expected, f.observed, f.node_ids, f.root_cause)
                    for f in report.failures)
    return FeedbackBundle(failing, frozenset(n for f in failing for n in f.node_ids))
