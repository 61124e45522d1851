from __future__ import annotations

import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bsgkit.analyzer import analyze
from bsgkit.artifacts import SourceLocation
from bsgkit.bsg import Bsg, BsgEdge, ContractClause, DataType, ErrorBehavior, OperationNode, deserialize_bsg
from bsgkit.evalkit import load_scenarios
from bsgkit.predicate import parse_predicate
from bsgkit.specgen import generate_bsg

LISTING_NODE = {
    "operation": "ValidateDisconnectOrder",
    "source_rule": "BR-004",
    "source_location": "ORDER_VALIDATION.cob:118-142",
    "preconditions": [
        "account_status in ['ACTIVE', 'SUSPENDED']",
        "order_type == 'DISCONNECT'",
    ],
    "postconditions": [
        "suspended accounts proceed for disconnect orders",
        "non-disconnect orders rejected for suspended",
    ],
    "invariants": ["order_total == sum(line_items)"],
    "confidence": "high",
}


@pytest.fixture
def listing_doc() -> dict:
    return dict(LISTING_NODE)


@pytest.fixture
def listing_bsg() -> Bsg:
    return deserialize_bsg(dict(LISTING_NODE))


@functools.lru_cache(maxsize=None)
def bundled():
    return tuple(load_scenarios())


@functools.lru_cache(maxsize=None)
def pipeline_parts(scenario_id: str):
    """(bundle, analysis, bsg) for a bundled scenario, computed once per session."""
    scenario = next(s for s in bundled() if s.id == scenario_id)
    bundle = scenario.bundle()
    analysis = analyze(bundle)
    bsg = generate_bsg(analysis.inventory, analysis.structure, analysis.ast, bundle=bundle)
    return bundle, analysis, bsg


SCENARIO_IDS = ("mini-s1", "mini-s5", "mini-s8")


@pytest.fixture(params=SCENARIO_IDS)
def scenario_parts(request):
    return pipeline_parts(request.param)


def node(name: str, pre=(), post=(), inputs=None, outputs=None, scenario: str = "t", rules=()) -> OperationNode:
    """A hand-built node; clauses are ``text`` or ``(text, error_class)``."""
    def clause(c):
        if isinstance(c, tuple):
            return ContractClause(c[0], parse_predicate(c[0]), c[1])
        return ContractClause(c, parse_predicate(c))
    return OperationNode(
        id=f"{scenario}/{name}", name=name,
        inputs=inputs or {}, outputs=outputs or {},
        preconditions=tuple(clause(c) for c in pre),
        postconditions=tuple(clause(c) for c in post),
        rule_ids=tuple(rules), error_behavior=ErrorBehavior("reject"),
        confidence="high", source_location=SourceLocation("t.cob", 1, 2),
    )


def graph(nodes, edges=(), invariants=()) -> Bsg:
    """``edges`` are ``(src_name, dst_name, label[, guard_text])``; names resolve to ids."""
    ids = {n.name: n.id for n in nodes}
    built = []
    for e in edges:
        guard = parse_predicate(e[3]) if len(e) > 3 else None
        built.append(BsgEdge(ids[e[0]], ids[e[1]], e[2], guard))
    inv = tuple(ContractClause(t, parse_predicate(t)) for t in invariants)
    return Bsg(tuple(nodes), tuple(sorted(built, key=lambda e: e.key)), inv, {"scenario_id": "t"})


INT = DataType("integer")
DEC = DataType("decimal")
STR = DataType("string")


def analyze_text(directory: Path, cobol: str, ddl: str = "", name: str = "prog.cob"):
    """Write a one-program bundle under ``directory`` and return (bundle, analysis)."""
    from bsgkit.artifacts import load_bundle
    (directory / name).write_text(cobol)
    if ddl:
        (directory / "schema.ddl").write_text(ddl)
    bundle = load_bundle(directory, scenario_id="t")
    return bundle, analyze(bundle)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
