"""Deterministic BSG generation from an inventory, a structure map and the AST.

Node granularity is the paragraph: each paragraph holding at least one
procedure rule becomes an operation node. Rejections become negated
preconditions, computations and assignments become postconditions,
invariant constraints become global invariants, and the main perform
sequence supplies the edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

from .analyzer import (Converter, FieldNameCollision, Finding, _reject_info,
                       field_name_map, field_types, is_handler, is_reject_paragraph, normalize_name,
                       scan)
from .artifacts import (BusinessRule, BusinessRuleInventory, LegacyArtifactBundle, SourceLocation,
                        bundle_digest)
from .bsg import (DEFAULT_ERROR_CLASS, STRING, Bsg, BsgEdge, ContractClause, DataType, ErrorBehavior,
                  OperationNode, find_cycle, make_node_id, topo_order, validate_bsg)
from .cobol import Evaluate, If, LegacyAst, Perform, Statement, StructureMap, perform_range
from .predicate import (Binary, Expr, Ident, Literal, Not, conjoin, disjoin, free_identifiers,
                        negate, render)

logger = logging.getLogger(__name__)

_CONFIDENCE_RANK = {"low": 0, "medium": 1, "high": 2}
_PROCEDURE_ROLES = ("reject", "handler", "exemption", "invariant", "assign", "compute", "default", "loop")


class GenerationError(ValueError):
    def __init__(self, code: str, message: str, witness: Sequence[str] = ()):
        self.code = code
        self.witness = list(witness)
        super().__init__(f"{code}: {message}")


def camel_case(paragraph: str) -> str:
    """``VALIDATE-ORDER`` -> ``ValidateOrder``."""
    return "".join(part.capitalize() for part in paragraph.replace("_", "-").split("-") if part)


def effect_clause(target: str, value: Expr, guard: Optional[Expr]) -> Expr:
    """``target == value``, or ``not G or target == value`` under a guard."""
    eq = Binary("==", Ident(target), value)
    return eq if guard is None else Binary("or", Not(guard), eq)


@dataclass
class _NodeDraft:
    paragraph: str
    id: str
    findings: list[tuple[str, Finding]]
    extra_rules: list[str]


class _Generator:
    def __init__(self, bri: BusinessRuleInventory, structure: StructureMap, ast: LegacyAst,
                 scenario_id: str):
        self.bri = bri
        self.structure = structure
        self.ast = ast
        self.scenario_id = scenario_id
        self.paragraphs = {p.name: p for p in ast.paragraphs}
        self.types = field_types(ast)
        self.conv = Converter(ast)

    def run(self) -> Bsg:
        if not self.bri.rules:
            raise GenerationError("EMPTY_BRI", "inventory has no rules; a BSG without nodes is rejected")
        try:
            names = field_name_map(self.ast)
        except FieldNameCollision as exc:
            raise GenerationError("FIELD_COLLISION", str(exc)) from exc
        performs = [(e.src, e.dst) for e in self.structure.call_graph if e.kind == "perform"]
        recursion = find_cycle(self.structure.paragraphs, performs)
        if recursion:
            raise GenerationError("CYCLIC_PERFORM", "paragraphs perform each other", recursion)

        by_key = {f.match_key(): f for f in scan(self.ast, self.structure)}
        bound: list[tuple[BusinessRule, Finding]] = []
        loose: list[BusinessRule] = []
        for rule in self.bri.rules:
            f = by_key.get((str(rule.location), rule.kind, rule.description))
            if f is not None:
                bound.append((rule, f))
            else:
                loose.append(rule)

        # node per rule-bearing paragraph, in source order
        bearing: dict[str, list[tuple[str, Finding]]] = {}
        for rule, f in bound:
            if f.role in _PROCEDURE_ROLES and f.paragraph:
                bearing.setdefault(f.paragraph, []).append((rule.id, f))
        extra: dict[str, list[str]] = {}
        unplaced: list[BusinessRule] = []
        for rule in loose:
            para = self._paragraph_at(rule)
            if para is not None and rule.kind != "constraint":
                bearing.setdefault(para, [])
                extra.setdefault(para, []).append(rule.id)
            else:
                unplaced.append(rule)
        if not bearing:
            first = self.structure.entry_points[0] if self.structure.entry_points else self.ast.paragraphs[0].name
            bearing[first] = []
        order = [p.name for p in self.ast.paragraphs if p.name in bearing]
        drafts: dict[str, _NodeDraft] = {}
        taken: list[str] = []
        for para in order:
            nid = make_node_id(self.scenario_id, camel_case(para), taken)
            taken.append(nid)
            drafts[para] = _NodeDraft(para, nid, bearing[para], extra.get(para, []))

        invariants = [ContractClause.from_text(f.constraint.expression, rule_id=r.id)
                      for r, f in bound if f.role == "invariant"]
        nodes = {para: self._node(d) for para, d in drafts.items()}
        edges = self._edges(drafts)

        # constraint rules: attach by field use, falling back to the first node in topo order
        provisional = Bsg(tuple(nodes.values()), tuple(edges))
        cycle = find_cycle(provisional.node_ids, [(e.src, e.dst) for e in edges])
        if cycle:
            raise GenerationError("CYCLIC_PERFORM", "perform structure yields a cycle", cycle)
        first_node = topo_order(provisional)[0]
        by_id = {n.id: para for para, n in nodes.items()}
        attach: dict[str, list[tuple[BusinessRule, Optional[Finding]]]] = {}
        for rule, f in bound:
            if f.role in _PROCEDURE_ROLES and f.paragraph:
                continue
            if f.role == "temporal" and f.successor in drafts:
                attach.setdefault(f.successor, []).append((rule, f))
                continue
            self._attach_by_fields(rule, f, nodes, attach, by_id[first_node])
        for rule in unplaced:
            self._attach_by_fields(rule, None, nodes, attach, by_id[first_node])
        for para, extras in attach.items():
            nodes[para] = self._with_constraints(nodes[para], extras)

        metadata = {"scenario_id": self.scenario_id, "bri_digest": self.bri.bundle_digest,
                    "generator": "deterministic",
                    "field_names": {k: v for k, v in sorted(names.items()) if k in self._used_legacy(nodes)}}
        bsg = Bsg(tuple(nodes[p] for p in order), tuple(sorted(edges, key=lambda e: e.key)),
                  tuple(invariants), metadata)
        problems = validate_bsg(bsg, self.bri)
        if problems:
            raise GenerationError("INVALID_BSG", "; ".join(f"{v.code} at {v.location}" for v in problems))
        return bsg

    def _used_legacy(self, nodes: Mapping[str, OperationNode]) -> set[str]:
        used = set()
        for n in nodes.values():
            used |= set(n.inputs) | set(n.outputs)
        return {d.name for d in self.ast.data_items if normalize_name(d.name) in used}

    def _paragraph_at(self, rule: BusinessRule) -> Optional[str]:
        if rule.location.file != self.ast.file:
            return None
        for p in self.ast.paragraphs:
            if p.line <= rule.location.line_start <= p.end_line and not is_reject_paragraph(p.name):
                return p.name
        return None

    def _attach_by_fields(self, rule, f, nodes, attach, fallback):
        fields = set(rule.input_fields)
        if rule.constraint_payload is not None:
            fields |= set(rule.constraint_payload.subject_fields)
        hits = [p for p, n in nodes.items() if fields & set(n.inputs)]
        for p in hits or [fallback]:
            attach.setdefault(p, []).append((rule, f))

    # node construction
    def _node(self, d: _NodeDraft) -> OperationNode:
        pre: list[ContractClause] = []
        post: list[ContractClause] = []
        inputs: set[str] = set()
        outputs: dict[str, DataType] = {}
        defined: set[str] = set()
        behavior: Optional[ErrorBehavior] = None
        rule_ids = set(d.extra_rules)
        conf = [f.confidence for _, f in d.findings]
        findings = sorted(d.findings, key=lambda rf: rf[1].sort_key())
        for rid, f in findings:
            rule_ids.add(rid)
            if f.role in ("reject", "handler"):
                pred = negate(f.guard)
                pre.append(ContractClause.of(pred, f.error_class, rid))
                inputs |= free_identifiers(pred) - defined
                if behavior is None:
                    behavior = ErrorBehavior(f"reject with {f.error_class} when {render(f.guard)}",
                                             f.error_class, f.guard)
            elif f.role in ("assign", "compute", "default"):
                if f.prose:
                    post.append(ContractClause(f.prose, None, None, rid))
                    inputs |= (free_identifiers(f.expr) | (free_identifiers(f.guard) if f.guard else set())) - defined
                    outputs[f.target] = self._type(f.target, f.expr)
                    continue
                reads = free_identifiers(f.expr) | (free_identifiers(f.guard) if f.guard is not None else set())
                inputs |= reads - defined
                post.append(ContractClause.of(effect_clause(f.target, f.expr, f.guard), rule_id=rid))
                outputs[f.target] = self._type(f.target, f.expr)
                if f.guard is None:
                    defined.add(f.target)
            elif f.role == "loop":
                post.append(ContractClause(f.prose, None, None, rid))
        for rid in d.extra_rules:
            conf.append(self._rule_confidence(rid))
        para = self.paragraphs[d.paragraph]
        if behavior is None:
            behavior = ErrorBehavior("no rejection paths", DEFAULT_ERROR_CLASS)
        return OperationNode(
            d.id, camel_case(d.paragraph),
            {n: self.types.get(n, STRING) for n in sorted(inputs)},
            dict(sorted(outputs.items())), tuple(pre), tuple(post), tuple(sorted(rule_ids)),
            behavior, min(conf, key=_CONFIDENCE_RANK.get) if conf else "medium",
            _span(self.ast.file, para.line, para.end_line))

    def _rule_confidence(self, rid: str) -> str:
        return self.bri.get(rid).confidence

    def _type(self, target: str, value: Expr) -> DataType:
        if target in self.types:
            return self.types[target]
        if isinstance(value, Literal):
            return {"int": DataType("integer"), "decimal": DataType("decimal"),
                    "bool": DataType("boolean")}.get(value.kind, STRING)
        return DataType("decimal")

    def _with_constraints(self, node: OperationNode, extras) -> OperationNode:
        pre = list(node.preconditions)
        ranged = []
        for rule, f in extras:
            spec = rule.constraint_payload
            if (spec is not None and spec.kind == "value_range" and rule.location.file != self.ast.file
                    and set(spec.subject_fields) <= set(node.inputs)):
                cls = f"{spec.subject_fields[0].upper()}_OUT_OF_RANGE" if spec.subject_fields else DEFAULT_ERROR_CLASS
                clause = ContractClause.from_text(spec.expression, cls, rule.id)
                if all(c.text != clause.text for c in pre):
                    ranged.append(clause)
        ids = tuple(sorted(set(node.rule_ids) | {r.id for r, _ in extras}))
        conf = [node.confidence] + [r.confidence for r, _ in extras]
        return replace(node, preconditions=tuple(ranged + pre), rule_ids=ids,
                       confidence=min(conf, key=_CONFIDENCE_RANK.get))

    # edges
    def _edges(self, drafts: dict[str, _NodeDraft]) -> list[BsgEdge]:
        guards: dict[tuple[str, str], list[Optional[Expr]]] = {}
        error_edges: dict[tuple[str, str], list[Expr]] = {}

        def add(src: str, dst: str, guard: Optional[Expr]):
            bucket = guards.setdefault((src, dst), [])
            if guard not in bucket:
                bucket.append(guard)

        def flow(stmts: list[Statement], frontier, stack: tuple[str, ...]):
            for st in stmts:
                if isinstance(st, Perform):
                    for target in perform_range(self.ast, st):
                        if is_reject_paragraph(target) or is_handler(target) or target not in self.paragraphs:
                            continue
                        if target in stack:
                            raise GenerationError("CYCLIC_PERFORM", f"{target} performs itself",
                                                  list(stack[stack.index(target):]) + [target])
                        if target in drafts:
                            nid = drafts[target].id
                            for pred, g in frontier:
                                if pred is not None and pred != nid:
                                    add(pred, nid, g)
                            frontier = [(nid, None)]
                        frontier = flow(self.paragraphs[target].statements, frontier, stack + (target,))
                elif isinstance(st, If):
                    if _reject_info(st.then) and not st.orelse:
                        continue  # the rejection is a precondition of the enclosing node
                    g = self.conv.cond(st.condition)
                    then = [] if _reject_info(st.then) else flow(st.then, _guarded(frontier, g), stack)
                    other = ([] if _reject_info(st.orelse) else flow(st.orelse, _guarded(frontier, negate(g)), stack)) \
                        if st.orelse else _guarded(frontier, negate(g))
                    if then == _guarded(frontier, g) and other == _guarded(frontier, negate(g)):
                        continue  # both arms fall through without reaching a node
                    frontier = _merge(then + other)
                elif isinstance(st, Evaluate):
                    previous: list[Expr] = []
                    merged = []
                    has_other = False
                    passthrough = True
                    for b in st.branches:
                        if b.other:
                            has_other = True
                            g = conjoin(negate(p) for p in previous) if previous else None
                        else:
                            here = disjoin([self.conv.cond(c) for c in b.conditions])
                            g = conjoin([negate(p) for p in previous] + [here])
                            previous.append(here)
                        if _reject_info(b.body):
                            passthrough = False
                            continue
                        entry = _guarded(frontier, g) if g is not None else frontier
                        out = flow(b.body, entry, stack)
                        passthrough = passthrough and out == entry
                        merged += out
                    if not has_other and previous:
                        merged += _guarded(frontier, conjoin(negate(p) for p in previous))
                    if passthrough:
                        continue  # every branch falls through: the guards partition the frontier
                    frontier = _merge(merged)
            return frontier

        for entry in self.structure.entry_points:
            if is_reject_paragraph(entry) or is_handler(entry):
                continue
            start = [(drafts[entry].id, None)] if entry in drafts else [(None, None)]
            flow(self.paragraphs[entry].statements, start, (entry,))

        for para, d in drafts.items():
            for _, f in d.findings:
                if f.role == "handler" and f.handler in drafts:
                    error_edges.setdefault((d.id, drafts[f.handler].id), []).append(f.guard)

        edges = []
        for (src, dst), gs in guards.items():
            if any(g is None for g in gs):
                edges.append(BsgEdge(src, dst, "sequence"))
            else:
                edges.append(BsgEdge(src, dst, "conditional", _disjoin_guards(gs)))
        for (src, dst), gs in error_edges.items():
            edges.append(BsgEdge(src, dst, "error", _disjoin_guards(gs)))
        return edges


def _span(file: str, a: int, b: int):
    return SourceLocation(file, a, max(a, b))


def _guarded(frontier, g: Expr):
    return [(pred, g if old is None else conjoin([old, g])) for pred, old in frontier]


def _merge(frontier):
    """Combine frontier entries sharing a predecessor; complementary guards cancel."""
    grouped: dict = {}
    for pred, g in frontier:
        grouped.setdefault(pred, []).append(g)
    out = []
    for pred, gs in grouped.items():
        if any(g is None for g in gs):
            out.append((pred, None))
        else:
            out.append((pred, _disjoin_guards(gs)))
    return out


def _disjoin_guards(gs: list[Expr]) -> Optional[Expr]:
    unique: list[Expr] = []
    for g in gs:
        if g not in unique:
            unique.append(g)
    if len(unique) == 2 and negate(unique[0]) == unique[1]:
        return None
    return disjoin(unique) if len(unique) > 1 else unique[0]


def generate_bsg(bri: BusinessRuleInventory, structure: StructureMap, ast: LegacyAst,
                 scenario_id: Optional[str] = None,
                 bundle: Optional[LegacyArtifactBundle] = None) -> Bsg:
    """Build and validate the BSG for one program.

    When ``bundle`` is given its digest must equal the inventory's.
    """
    if bundle is not None and bundle_digest(bundle) != bri.bundle_digest:
        raise GenerationError("DIGEST_MISMATCH", "inventory was extracted from a different bundle")
    if bundle is not None and scenario_id is None:
        scenario_id = bundle.scenario_id
    bsg = _Generator(bri, structure, ast, scenario_id or ast.program_id.lower()).run()
    logger.info("generated BSG with %d nodes and %d edges", len(bsg.nodes), len(bsg.edges))
    return bsg


def check_lossless(bri: BusinessRuleInventory, bsg: Bsg) -> list[str]:
    """Inventory ids referenced by no node and tagged on no global invariant."""
    present = bsg.referenced_rule_ids()
    return [r.id for r in bri.rules if r.id not in present]
