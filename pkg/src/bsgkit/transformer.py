"""BSG to service package: the executable service model and its interpreter.

Each BSG node becomes one endpoint. Preconditions become request
validations, postconditions of the form ``t == e`` (optionally guarded as
``not G or t == e``) become ordered effects, and every checkable
postcondition is re-checked as an assertion. Edges become flows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Mapping, Optional, Sequence

from .bsg import (STRING, Bsg, DataType, OperationNode,
                  deserialize_bsg, select_paths, serialize_bsg)
from .docio import DocumentError, require
from .predicate import (UNDEFINED, Binary, Call, Expr, Ident, ListLiteral, Literal, Not, TriState,
                        evaluate, evaluate_value, free_identifiers, literal, parse_predicate, render)

logger = logging.getLogger(__name__)

INVALID_INPUT = "INVALID_INPUT"
CONTRACT_VIOLATION = "CONTRACT_VIOLATION"
CODE_REJECTED = 422
CODE_UNKNOWN = 400
CODE_INVALID_INPUT = 400
CODE_VIOLATION = 500
FAULT_KINDS = ("point_constant", "point_condition_drop", "structural_drop_endpoint",
               "structural_unwire_flow")


class TransformError(ValueError):
    pass


class UnknownEndpoint(KeyError):
    pass


class FaultError(ValueError):
    pass


# --- model -----------------------------------------------------------------

@dataclass(frozen=True)
class Validation:
    predicate: Expr
    error_class: str

    @property
    def text(self) -> str:
        return render(self.predicate)


@dataclass(frozen=True)
class Effect:
    target: str
    expr: Expr
    guard: Optional[Expr] = None


@dataclass(frozen=True)
class Endpoint:
    id: str
    name: str
    input_model: str
    inputs: Mapping[str, DataType]
    outputs: Mapping[str, DataType]
    validations: tuple[Validation, ...]
    effects: tuple[Effect, ...]
    assertions: tuple[Expr, ...]
    error_responses: Mapping[str, tuple[int, str]]
    unenforced: tuple[str, ...] = ()


@dataclass(frozen=True)
class DataModel:
    name: str
    fields: Mapping[str, DataType]
    constraints: tuple[str, ...] = ()


@dataclass(frozen=True)
class FlowLink:
    src: str
    dst: str
    label: str
    guard: Optional[Expr] = None


@dataclass(frozen=True)
class Flow:
    """Ordered stages of endpoint ids; steps within one stage commute."""

    id: str
    stages: tuple[tuple[str, ...], ...]
    links: tuple[FlowLink, ...] = ()

    @property
    def steps(self) -> tuple[str, ...]:
        return tuple(s for stage in self.stages for s in stage)


@dataclass(frozen=True)
class ExecutableServiceModel:
    endpoints: tuple[Endpoint, ...]
    data_models: tuple[DataModel, ...]
    flows: tuple[Flow, ...]
    bsg: Optional[Bsg] = field(default=None, compare=False)

    def endpoint(self, endpoint_id: str) -> Endpoint:
        for e in self.endpoints:
            if e.id == endpoint_id:
                return e
        raise UnknownEndpoint(endpoint_id)

    def has_endpoint(self, endpoint_id: str) -> bool:
        return any(e.id == endpoint_id for e in self.endpoints)

    def flow(self, flow_id: str) -> Flow:
        for f in self.flows:
            if f.id == flow_id:
                return f
        raise KeyError(flow_id)

    @property
    def endpoint_ids(self) -> list[str]:
        return [e.id for e in self.endpoints]


@dataclass(frozen=True)
class ModernizedServicePackage:
    variant: str  # esm | external_sources
    esm: Optional[ExecutableServiceModel] = None
    source_files: tuple[tuple[str, str], ...] = ()
    manifest: Mapping[str, Any] = field(default_factory=dict)
    endpoint_map: Mapping[str, str] = field(default_factory=dict)
    iteration_tag: int = 0
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.variant not in ("esm", "external_sources"):
            raise ValueError(f"unknown package variant {self.variant!r}")
        if (self.variant == "esm") != (self.esm is not None):
            raise ValueError("esm variant needs an ESM and only the esm variant may carry one")
        if self.variant == "esm" and self.source_files:
            raise ValueError("esm variant carries no source files")

    def to_doc(self) -> dict:
        return package_to_doc(self)


# --- derivation ------------------------------------------------------------

def split_effect(pred: Expr) -> Optional[tuple[str, Expr, Optional[Expr]]]:
    """Recognize ``t == e`` and ``not G or t == e``."""
    guard = None
    body = pred
    if isinstance(pred, Binary) and pred.op == "or" and isinstance(pred.left, Not):
        guard = pred.left.operand
        body = pred.right
    if isinstance(body, Binary) and body.op == "==" and isinstance(body.left, Ident):
        target = body.left.path
        if target in free_identifiers(body.right):
            return None
        return target, body.right, guard
    return None


def node_effects(node: OperationNode) -> list[Effect]:
    """Effects implied by a node's postconditions, in clause order.

    A clause ``t == e`` is an effect when ``t`` is a declared output or is
    not one of the node's inputs; otherwise it only constrains inputs.
    """
    out = []
    for c in node.postconditions:
        if c.predicate is None:
            continue
        parts = split_effect(c.predicate)
        if parts is None:
            continue
        target, expr, guard = parts
        if target in node.outputs or target not in node.inputs:
            out.append(Effect(target, expr, guard))
    return out


def _guess_type(expr: Expr) -> DataType:
    if isinstance(expr, Literal):
        return {"int": DataType("integer"), "decimal": DataType("decimal"),
                "bool": DataType("boolean")}.get(expr.kind, STRING)
    if isinstance(expr, Binary) and expr.op in "+-*/":
        return DataType("decimal")
    return STRING


def endpoint_for(node: OperationNode) -> Endpoint:
    validations = []
    unenforced = []
    for c in node.preconditions:
        if c.predicate is None:
            unenforced.append(c.text)
            logger.warning("node %s: prose precondition left unenforced: %s", node.id, c.text)
        else:
            validations.append(Validation(c.predicate, c.error_class or node.error_behavior.error_class))
    effects = node_effects(node)
    assertions = tuple(c.predicate for c in node.postconditions if c.predicate is not None)
    unenforced += [c.text for c in node.postconditions if c.predicate is None]
    outputs = dict(node.outputs)
    for e in effects:
        outputs.setdefault(e.target, _guess_type(e.expr))
    responses = {INVALID_INPUT: (CODE_INVALID_INPUT, "request does not match the input model"),
                 CONTRACT_VIOLATION: (CODE_VIOLATION, "postcondition failed: {clause}")}
    for v in validations:
        responses.setdefault(v.error_class, (CODE_REJECTED, f"rejected: {v.error_class}"))
    return Endpoint(node.id, node.name, f"{node.name}Request", dict(node.inputs), dict(sorted(outputs.items())),
                    tuple(validations), tuple(effects), assertions, responses, tuple(unenforced))


def derive_flows(bsg: Bsg, bound: int = 16) -> tuple[Flow, ...]:
    """One flow per selected path; parallel siblings share a stage.

    Flow ids are path ids, so every trace script finds its own flow even
    when two paths through a parallel fan-out share the same stages.
    """
    parallel: dict[str, list[str]] = {}
    for e in bsg.edges:
        if e.label == "parallel":
            parallel.setdefault(e.src, []).append(e.dst)
    flows: list[Flow] = []
    for path in select_paths(bsg, bound):
        stages: list[tuple[str, ...]] = []
        links: list[FlowLink] = []
        skip: set[str] = set()
        for i, n in enumerate(path.nodes):
            if n in skip:
                continue
            if i > 0 and path.edges[i - 1].label == "parallel":
                sibs = tuple(sorted(parallel[path.edges[i - 1].src]))
                stages.append(sibs)
                skip |= set(sibs)
            else:
                stages.append((n,))
        for e in path.edges:
            links.append(FlowLink(e.src, e.dst, e.label, e.guard))
        flows.append(Flow(path.id, tuple(stages), tuple(links)))
    return tuple(flows)


def derive_data_models(endpoints: Sequence[Endpoint]) -> tuple[DataModel, ...]:
    shared: dict[str, DataType] = {}
    models = []
    for ep in endpoints:
        for name, t in list(ep.inputs.items()) + list(ep.outputs.items()):
            if name in shared and shared[name] != t:
                raise TransformError(f"field {name} typed {shared[name].to_doc()} and {t.to_doc()}")
            shared[name] = t
        constraints = tuple(v.text for v in ep.validations)
        models.append(DataModel(ep.input_model, dict(ep.inputs), constraints))
    models.append(DataModel("SharedFields", dict(sorted(shared.items()))))
    return tuple(models)


def build_esm(bsg: Bsg) -> ExecutableServiceModel:
    endpoints = tuple(endpoint_for(n) for n in bsg.nodes)
    return ExecutableServiceModel(endpoints, derive_data_models(endpoints), derive_flows(bsg), bsg)


def transform(bsg: Bsg) -> ModernizedServicePackage:
    """Endpoint per node, aggregated data models, path-derived flows."""
    esm = build_esm(bsg)
    mapping = {n.id: f"esm://{n.id}" for n in bsg.nodes}
    return ModernizedServicePackage("esm", esm, endpoint_map=mapping)


# --- interpreter -----------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    phase: str  # input | validation | effect | assertion
    text: str
    result: str


@dataclass(frozen=True)
class Response:
    status: str  # OK | REJECTED | CONTRACT_VIOLATION
    outputs: Mapping[str, Any]
    error_class: Optional[str] = None
    code: int = 200
    unknown: bool = False
    trace: tuple[TraceEntry, ...] = ()
    message: str = ""

    def to_wire(self) -> dict:
        doc: dict[str, Any] = {"status": self.status, "outputs": dict(self.outputs)}
        if self.error_class is not None:
            doc["error_class"] = self.error_class
        return doc


def check_inputs(inputs: Mapping[str, DataType], request: Mapping[str, Any]) -> Optional[str]:
    """Name of the first ill-typed input, if any.

    Missing and null inputs pass: they evaluate as null and surface as
    UNKNOWN in the validations that read them.
    """
    for name in sorted(inputs):
        value = request.get(name)
        if value is not None and not inputs[name].admits(_wire_value(value)):
            return name
    return None


def _wire_value(v: Any) -> Any:
    if isinstance(v, float):
        return Decimal(repr(v))
    if isinstance(v, list):
        return [_wire_value(x) for x in v]
    return v


def interpret(esm: ExecutableServiceModel, endpoint_id: str, request: Mapping[str, Any]) -> Response:
    """Validate, apply effects, then assert; pure per call."""
    ep = esm.endpoint(endpoint_id)
    trace: list[TraceEntry] = []
    bad = check_inputs(ep.inputs, request)
    if bad is not None:
        trace.append(TraceEntry("input", bad, "INVALID"))
        return Response("REJECTED", {}, INVALID_INPUT, CODE_INVALID_INPUT, False, tuple(trace),
                        f"input {bad} is ill-typed")
    env = {k: _wire_value(request.get(k)) for k in ep.inputs}
    for v in ep.validations:
        result = evaluate(v.predicate, env)
        trace.append(TraceEntry("validation", v.text, result.value))
        if result is not TriState.TRUE:
            unknown = result is TriState.UNKNOWN
            return Response("REJECTED", {}, v.error_class, CODE_UNKNOWN if unknown else CODE_REJECTED,
                            unknown, tuple(trace), f"rejected: {v.error_class}")
    written = {}
    for e in ep.effects:
        if e.guard is not None:
            g = evaluate(e.guard, env)
            trace.append(TraceEntry("effect", f"when {render(e.guard)}", g.value))
            if g is not TriState.TRUE:
                continue
        value = evaluate_value(e.expr, env)
        shown = "UNDEFINED" if value is UNDEFINED else repr(value)
        trace.append(TraceEntry("effect", f"{e.target} := {render(e.expr)}", shown))
        if value is not UNDEFINED:
            env[e.target] = value
            written[e.target] = value
    for a in ep.assertions:
        result = evaluate(a, env)
        trace.append(TraceEntry("assertion", render(a), result.value))
        if result is not TriState.TRUE:
            return Response("CONTRACT_VIOLATION", {}, CONTRACT_VIOLATION, CODE_VIOLATION,
                            result is TriState.UNKNOWN, tuple(trace), f"postcondition failed: {render(a)}")
    outputs = {k: env[k] for k in ep.outputs if k in env}
    return Response("OK", outputs, None, 200, False, tuple(trace))


def interpret_flow(esm: ExecutableServiceModel, flow_id: str, request: Mapping[str, Any],
                   order: Optional[Mapping[int, Sequence[str]]] = None) -> tuple[list[Response], dict]:
    """Run a flow, threading outputs into later requests.

    ``order`` optionally permutes the steps of a stage (used to check that
    parallel steps commute). Conditional links whose guard is not TRUE end
    the flow; error links are followed only after a rejection.
    """
    flow = esm.flow(flow_id)
    env = dict(request)
    responses: list[Response] = []
    links = {(l.src, l.dst): l for l in flow.links}
    prev: list[str] = []
    prev_rejected = False
    for i, stage in enumerate(flow.stages):
        steps = list(order[i]) if order and i in order else list(stage)
        if prev:
            link = next((links[(p, s)] for p in prev for s in stage if (p, s) in links), None)
            if link is not None:
                if link.label == "error":
                    if not prev_rejected:
                        break
                elif prev_rejected:
                    break
                if link.guard is not None and evaluate(link.guard, env) is not TriState.TRUE:
                    break
            elif prev_rejected:
                break
        prev_rejected = False
        for s in steps:
            r = interpret(esm, s, env)
            responses.append(r)
            if r.status == "OK":
                env.update(r.outputs)
            else:
                prev_rejected = True
        prev = list(stage)
        if any(r.status == "CONTRACT_VIOLATION" for r in responses[-len(steps):]):
            break
    return responses, env


# --- feedback and faults ---------------------------------------------------

def apply_feedback(package: ModernizedServicePackage, feedback: Any) -> ModernizedServicePackage:
    """Node-scoped regeneration of the endpoints named in ``feedback``.

    Endpoints missing from the ESM are not recreated, and flows are left
    as they are: repairs are local. Every call bumps ``iteration_tag``.
    """
    targets = sorted(getattr(feedback, "targeted_nodes", ()) or ())
    if package.variant == "external_sources":
        prompt = correction_prompt(feedback)
        return replace(package, iteration_tag=package.iteration_tag + 1, notes=package.notes + (prompt,))
    esm = package.esm
    bsg = esm.bsg
    if bsg is None:
        raise TransformError("ESM carries no source BSG; cannot regenerate endpoints")
    known = set(bsg.node_ids)
    unknown = [t for t in targets if t not in known]
    if unknown:
        raise TransformError(f"feedback names unknown endpoints: {', '.join(unknown)}")
    endpoints = list(esm.endpoints)
    for t in targets:
        idx = next((i for i, e in enumerate(endpoints) if e.id == t), None)
        if idx is None:
            logger.info("endpoint %s is absent; structural gap left in place", t)
            continue
        endpoints[idx] = endpoint_for(bsg.node(t))
    new_esm = replace(esm, endpoints=tuple(endpoints))
    return replace(package, esm=new_esm, iteration_tag=package.iteration_tag + 1)


def correction_prompt(feedback: Any) -> str:
    lines = ["The following behaviors diverge from the specification. Fix only these."]
    for item in getattr(feedback, "failing", ()):
        lines.append(f"- {item.test_id}: expected {item.expected}; observed {item.observed}")
    return "\n".join(lines)


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: str
    detail: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")


def _replace_first_literal(expr: Expr, pick, change) -> tuple[Expr, bool]:
    if isinstance(expr, Literal) and pick(expr):
        return change(expr), True
    if isinstance(expr, ListLiteral):
        items = list(expr.items)
        for i, it in enumerate(items):
            if pick(it):
                items[i] = change(it)
                return ListLiteral(tuple(items)), True
        return expr, False
    if isinstance(expr, Not):
        inner, done = _replace_first_literal(expr.operand, pick, change)
        return Not(inner), done
    if isinstance(expr, Call):
        inner, done = _replace_first_literal(expr.arg, pick, change)
        return Call(expr.func, inner), done
    if isinstance(expr, Binary):
        left, done = _replace_first_literal(expr.left, pick, change)
        if done:
            return Binary(expr.op, left, expr.right), True
        right, done = _replace_first_literal(expr.right, pick, change)
        return Binary(expr.op, expr.left, right), done
    return expr, False


def _perturb(ep: Endpoint, detail: Mapping[str, Any]) -> Endpoint:
    delta = detail.get("delta", 1)
    suffix = detail.get("suffix", "X")
    attempts = [
        (lambda l: l.kind in ("int", "decimal"), lambda l: literal(l.value + delta)),
        (lambda l: l.kind == "string", lambda l: literal(l.value + suffix)),
    ]
    for pick, change in attempts:
        for i, v in enumerate(ep.validations):
            new, done = _replace_first_literal(v.predicate, pick, change)
            if done:
                vals = list(ep.validations)
                vals[i] = Validation(new, v.error_class)
                return replace(ep, validations=tuple(vals))
        for i, e in enumerate(ep.effects):
            new, done = _replace_first_literal(e.expr, pick, change)
            if done:
                effs = list(ep.effects)
                effs[i] = Effect(e.target, new, e.guard)
                return replace(ep, effects=tuple(effs))
    raise FaultError(f"endpoint {ep.id} has no literal to perturb")


def inject_fault(esm: ExecutableServiceModel, fault: FaultSpec) -> ExecutableServiceModel:
    """Return a copy of ``esm`` with one deliberate defect."""
    if fault.kind == "structural_unwire_flow":
        hit = [f for f in esm.flows if f.id == fault.target or fault.target in f.steps]
        if not hit:
            raise FaultError(f"no flow matches {fault.target}")
        flows = []
        for f in esm.flows:
            if f in hit:
                flows += [Flow(f"{f.id}#{i}", (s,)) for i, s in enumerate(f.stages)]
            else:
                flows.append(f)
        return replace(esm, flows=tuple(flows))
    if not esm.has_endpoint(fault.target):
        raise FaultError(f"fault target {fault.target} is not an endpoint")
    if fault.kind == "structural_drop_endpoint":
        endpoints = tuple(e for e in esm.endpoints if e.id != fault.target)
        flows = []
        for f in esm.flows:
            stages = tuple(tuple(s for s in st if s != fault.target) for st in f.stages)
            stages = tuple(st for st in stages if st)
            if stages:
                links = tuple(l for l in f.links if fault.target not in (l.src, l.dst))
                flows.append(Flow(f.id, stages, links))
        return replace(esm, endpoints=endpoints, flows=tuple(flows))
    ep = esm.endpoint(fault.target)
    if fault.kind == "point_constant":
        new = _perturb(ep, fault.detail)
    else:
        idx = int(fault.detail.get("index", 0))
        if idx >= len(ep.validations):
            raise FaultError(f"endpoint {ep.id} has no validation #{idx}")
        new = replace(ep, validations=ep.validations[:idx] + ep.validations[idx + 1:])
    return replace(esm, endpoints=tuple(new if e.id == ep.id else e for e in esm.endpoints))


# --- documents -------------------------------------------------------------

def _types_doc(types: Mapping[str, DataType]) -> dict:
    return {k: t.to_doc() for k, t in types.items()}


def _types_from(doc: Any, path: str) -> dict[str, DataType]:
    if not isinstance(doc, dict):
        raise DocumentError(path, "expected an object of field types")
    return {k: DataType.from_doc(v, f"{path}.{k}") for k, v in doc.items()}


def _pred(text: str, path: str) -> Expr:
    try:
        return parse_predicate(text)
    except ValueError as exc:
        raise DocumentError(path, str(exc)) from exc


def esm_to_doc(esm: ExecutableServiceModel) -> dict:
    return {
        "endpoints": [{
            "id": e.id, "name": e.name, "input_model": e.input_model,
            "inputs": _types_doc(e.inputs), "outputs": _types_doc(e.outputs),
            "validations": [{"predicate": v.text, "error_class": v.error_class} for v in e.validations],
            "effects": [{"target": f.target, "expr": render(f.expr),
                         "guard": None if f.guard is None else render(f.guard)} for f in e.effects],
            "assertions": [render(a) for a in e.assertions],
            "error_responses": {k: {"code": c, "message": m} for k, (c, m) in sorted(e.error_responses.items())},
            "unenforced": list(e.unenforced),
        } for e in esm.endpoints],
        "data_models": [{"name": m.name, "fields": _types_doc(m.fields), "constraints": list(m.constraints)}
                        for m in esm.data_models],
        "flows": [{"id": f.id, "stages": [list(s) for s in f.stages],
                   "links": [{"from": l.src, "to": l.dst, "label": l.label,
                              "guard": None if l.guard is None else render(l.guard)} for l in f.links]}
                  for f in esm.flows],
        "bsg": None if esm.bsg is None else serialize_bsg(esm.bsg),
    }


def esm_from_doc(doc: dict, path: str = ".esm") -> ExecutableServiceModel:
    endpoints = []
    for i, e in enumerate(require(doc, "endpoints", path, list)):
        p = f"{path}.endpoints[{i}]"
        endpoints.append(Endpoint(
            require(e, "id", p, str), require(e, "name", p, str), require(e, "input_model", p, str),
            _types_from(require(e, "inputs", p), p + ".inputs"),
            _types_from(require(e, "outputs", p), p + ".outputs"),
            tuple(Validation(_pred(v["predicate"], p), v["error_class"]) for v in require(e, "validations", p, list)),
            tuple(Effect(f["target"], _pred(f["expr"], p), _pred(f["guard"], p) if f.get("guard") else None)
                  for f in require(e, "effects", p, list)),
            tuple(_pred(a, p) for a in require(e, "assertions", p, list)),
            {k: (v["code"], v["message"]) for k, v in require(e, "error_responses", p, dict).items()},
            tuple(e.get("unenforced", ())),
        ))
    models = tuple(DataModel(m["name"], _types_from(m["fields"], path), tuple(m.get("constraints", ())))
                   for m in require(doc, "data_models", path, list))
    flows = tuple(Flow(f["id"], tuple(tuple(s) for s in f["stages"]),
                       tuple(FlowLink(l["from"], l["to"], l["label"], _pred(l["guard"], path) if l.get("guard") else None)
                             for l in f.get("links", ())))
                  for f in require(doc, "flows", path, list))
    bsg = deserialize_bsg(doc["bsg"]) if doc.get("bsg") else None
    return ExecutableServiceModel(tuple(endpoints), models, flows, bsg)


def package_to_doc(pkg: ModernizedServicePackage) -> dict:
    return {
        "variant": pkg.variant,
        "esm": None if pkg.esm is None else esm_to_doc(pkg.esm),
        "source_files": [{"path": p, "text": t} for p, t in pkg.source_files],
        "manifest": dict(pkg.manifest),
        "endpoint_map": dict(sorted(pkg.endpoint_map.items())),
        "iteration_tag": pkg.iteration_tag,
        "notes": list(pkg.notes),
    }


def package_from_doc(doc: dict) -> ModernizedServicePackage:
    variant = require(doc, "variant", "", str)
    esm = esm_from_doc(doc["esm"]) if doc.get("esm") else None
    try:
        return ModernizedServicePackage(
            variant, esm, tuple((f["path"], f["text"]) for f in doc.get("source_files", ())),
            dict(doc.get("manifest", {})), dict(doc.get("endpoint_map", {})),
            int(doc.get("iteration_tag", 0)), tuple(doc.get("notes", ())))
    except ValueError as exc:
        raise DocumentError(".variant", str(exc)) from exc
