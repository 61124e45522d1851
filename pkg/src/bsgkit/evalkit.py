"""Benchmark scenarios, gold scoring and the fair-evaluation runner."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import docio
from .artifacts import BusinessRuleInventory, LegacyArtifactBundle, PipelineState, Status, load_bundle
from .bsg import Bsg, Coverage, GoldRule, rule_coverage
from .docio import DocumentError, require
from .metrics import aggregate, compute_brps
from .orchestrator import ConfigError, PipelineConfig, run_pipeline
from .predicate import free_identifiers, parse_predicate
from .provider import Transcript
from .transformer import FaultSpec
from .validator import (EquivalenceReport, ExternalRunner, InProcessRunner, TestCase, execute)

logger = logging.getLogger(__name__)

METHODS = ("sp_llm", "cot_llm", "am_no_feedback", "am_full")
METHOD_MODES = {"sp_llm": "sp_llm", "cot_llm": "cot_llm", "am_no_feedback": "no_feedback", "am_full": "full"}
COMPLEXITIES = ("medium", "high", "very_high")
SUMMARY_NAME = "fair_eval_summary.json"
SIDECAR_NAME = "fair_eval_timestamps.json"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """A bundle plus a withheld gold directory.

    Gold files are read only on demand, so the pipeline phase can run
    without touching them.
    """

    id: str
    root: Path
    bundle_dir: Path
    gold_dir: Path
    complexity: str = "medium"
    domain: str = ""
    description: str = ""
    recall_floor: float = 0.0

    def bundle(self) -> LegacyArtifactBundle:
        return load_bundle(self.bundle_dir, scenario_id=self.id)

    def gold_rules(self) -> list[GoldRule]:
        doc = docio.read(self.gold_dir / "rules.json")
        rules = [GoldRule.from_doc(r, f".rules[{i}]") for i, r in enumerate(require(doc, "rules", "", list))]
        keys = [r.key for r in rules]
        if len(set(keys)) != len(keys):
            raise ScenarioError(f"{self.id}: duplicate gold rule keys")
        return rules

    def gold_tests(self) -> list[TestCase]:
        doc = docio.read(self.gold_dir / "tests.json")
        return [TestCase.from_doc(t, f".tests[{i}]") for i, t in enumerate(require(doc, "tests", "", list))]


def load_scenario(root: str | Path) -> Scenario:
    root = Path(root)
    try:
        doc = docio.read(root / "scenario.json")
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"{root}: cannot read scenario.json: {exc}") from exc
    bundle_dir = (root / doc.get("bundle", "bundle")).resolve()
    gold_dir = (root / doc.get("gold", "gold")).resolve()
    if bundle_dir == gold_dir or bundle_dir in gold_dir.parents or gold_dir in bundle_dir.parents:
        raise ScenarioError(f"{root}: gold and bundle directories overlap")
    complexity = doc.get("complexity", "medium")
    if complexity not in COMPLEXITIES:
        raise ScenarioError(f"{root}: unknown complexity {complexity!r}")
    return Scenario(require(doc, "id", str(root), str), root, bundle_dir, gold_dir, complexity,
                    doc.get("domain", ""), doc.get("description", ""),
                    float(doc.get("recall_floor", 0.0)))


def bundled_scenarios_dir() -> Path:
    return Path(str(resources.files("bsgkit").joinpath("data", "scenarios")))


def load_scenarios(directory: Optional[str | Path] = None) -> list[Scenario]:
    directory = Path(directory) if directory else bundled_scenarios_dir()
    if (directory / "scenario.json").is_file():
        return [load_scenario(directory)]
    found = [load_scenario(p) for p in sorted(directory.iterdir()) if (p / "scenario.json").is_file()]
    if not found:
        raise ScenarioError(f"no scenarios under {directory}")
    return found


# --- gold scoring ----------------------------------------------------------

def attach_gold(bri: BusinessRuleInventory, gold: Sequence[GoldRule], bsg: Optional[Bsg] = None
                ) -> dict[str, list[str]]:
    """Gold keys per extracted rule id.

    A rule carries a gold key when its location overlaps the gold span and
    every field named by the gold ``match`` predicate is one the rule (or a
    BSG clause tagged with it) reads or writes.
    """
    tagged: dict[str, set[str]] = {}
    if bsg is not None:
        clauses = [c for n in bsg.nodes for c in n.preconditions + n.postconditions] + list(bsg.global_invariants)
        for c in clauses:
            if c.rule_id and c.predicate is not None:
                tagged.setdefault(c.rule_id, set()).update(free_identifiers(c.predicate))
    out: dict[str, list[str]] = {}
    for r in bri.rules:
        fields = set(r.input_fields) | set(r.output_effects) | tagged.get(r.id, set())
        for g in gold:
            if not r.location.overlaps(g.span):
                continue
            if g.match and not free_identifiers(parse_predicate(g.match)) <= fields:
                continue
            out.setdefault(r.id, []).append(g.key)
    return out


@dataclass(frozen=True)
class GoldScore:
    ber: float
    brps: float
    coverage: Optional[Coverage]
    report: EquivalenceReport
    preserved: tuple[str, ...]

    def to_doc(self) -> dict:
        return {"ber": self.ber, "brps": self.brps, "preserved": list(self.preserved),
                "coverage": None if self.coverage is None else self.coverage.to_doc(),
                "report": self.report.to_doc()}


def gold_runner(package):
    if package is None:
        return None
    if package.variant == "esm":
        return InProcessRunner(package.esm)
    return ExternalRunner(package.manifest)


class _AbsentRunner:
    """Stands in for a trial that produced no package: every call is structural."""

    def start(self):
        from .validator import RunnerStartError
        raise RunnerStartError("no package was produced")

    def stop(self):
        pass


def score_gold(scenario: Scenario, state: PipelineState) -> GoldScore:
    """Gold BER and BRPS for one finished (or failed) trial."""
    tests = scenario.gold_tests()
    gold = scenario.gold_rules()
    runner = gold_runner(state.modern_code) if state.status is Status.COMPLETED else None
    report = execute(tests, runner or _AbsentRunner())
    if state.status is not Status.COMPLETED:
        report = replace(report, ber_percent=0.0)
    coverage = None
    matched: set[str] = set()
    if state.bsg is not None and state.business_rules is not None:
        keys = attach_gold(state.business_rules, gold, state.bsg)
        coverage = rule_coverage(state.bsg, gold, keys)
        matched = set(coverage.matched)
    passed = {r.test_id for r in report.results if r.passed}
    preserved = []
    for g in gold:
        targeted = [t.id for t in tests if g.key in t.rules]
        if g.key in matched and all(t in passed for t in targeted):
            preserved.append(g.key)
    brps = compute_brps(len(preserved), len(gold)) if gold else 0.0
    return GoldScore(report.ber_percent, brps, coverage, report, tuple(preserved))


# --- fair evaluation -------------------------------------------------------

@dataclass(frozen=True)
class TrialResult:
    trial: int
    ber: float
    brps: float
    residual_failures: int
    status: str
    failure: Optional[dict] = None

    def to_doc(self) -> dict:
        return {"trial": self.trial, "ber": self.ber, "brps": self.brps,
                "residual_failures": self.residual_failures, "status": self.status, "failure": self.failure}


@dataclass(frozen=True)
class EvalSummary:
    cells: tuple[dict, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"cells": list(self.cells), "metadata": dict(self.metadata)}


def _dump_artifacts(folder: Path, state: PipelineState, score: GoldScore, transcript: Transcript) -> None:
    def put(name, value):
        docio.write(folder / f"{name}.json", None if value is None else value.to_doc())
    docio.write(folder / "state.json", state.to_doc())
    put("bri", state.business_rules)
    put("bsg", state.bsg)
    put("package", state.modern_code)
    put("internal_report", state.equiv_report)
    docio.write(folder / "gold_report.json", score.to_doc())
    (folder / "transcript.jsonl").write_text("".join(docio.dumps_line(r) + "\n" for r in transcript.records),
                                             encoding="utf-8")


def run_fair_eval(scenarios: Sequence[Scenario], methods: Sequence[str], trials: int = 3,
                  config: Optional[PipelineConfig] = None, out_dir: str | Path = "out",
                  client_factory=None, faults: Optional[Mapping[str, FaultSpec]] = None,
                  sample_sigma: bool = False) -> EvalSummary:
    """Run every scenario x method x trial, score against gold, write folders and summary."""
    config = config or PipelineConfig()
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods: {', '.join(unknown)}")
    if any(m in ("sp_llm", "cot_llm") for m in methods) and config.backend != "provider":
        raise ConfigError("baseline methods need the provider backend")
    out = Path(out_dir)
    started = datetime.now(timezone.utc).isoformat()
    cells = []
    for scenario in scenarios:
        bundle = scenario.bundle()
        for method in methods:
            fault = (faults or {}).get(scenario.id)
            cfg = replace(config, mode=METHOD_MODES[method], fault=fault if method.startswith("am_") else None)
            results = []
            for n in range(1, trials + 1):
                transcript = Transcript()
                client = client_factory(transcript) if client_factory else None
                state = run_pipeline(bundle, cfg, gold_dirs=[scenario.gold_dir], client=client)
                score = score_gold(scenario, state)
                folder = out / scenario.id / method / f"trial-{n}"
                folder.mkdir(parents=True, exist_ok=True)
                _dump_artifacts(folder, state, score, transcript)
                failed = state.status is Status.FAILED
                results.append(TrialResult(n, 0.0 if failed else score.ber, 0.0 if failed else score.brps,
                                           len(score.report.failures), state.status.value,
                                           {"tag": "FAILED", **state.failure} if failed else None))
            ber_mean, ber_sigma = aggregate([r.ber for r in results], sample_sigma)
            brps_mean, brps_sigma = aggregate([r.brps for r in results], sample_sigma)
            cells.append({"scenario": scenario.id, "method": method, "trials": [r.to_doc() for r in results],
                          "ber_mean": ber_mean, "ber_sigma": ber_sigma,
                          "brps_mean": brps_mean, "brps_sigma": brps_sigma})
    meta = {"config_digest": docio.digest(config.to_doc()), "backend": config.backend, "trials": trials,
            "methods": list(methods), "scenarios": [s.id for s in scenarios],
            "sigma": "sample" if sample_sigma else "population"}
    summary = EvalSummary(tuple(cells), meta)
    docio.write(out / SUMMARY_NAME, summary.to_doc())
    docio.write(out / SIDECAR_NAME, {"started": started, "finished": datetime.now(timezone.utc).isoformat()})
    return summary
