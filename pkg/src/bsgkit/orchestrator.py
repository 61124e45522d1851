"""Pipeline engine: the four agents, the feedback loop and the baselines."""

from __future__ import annotations

import builtins
import io
import logging
import os
import pathlib
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Protocol, Sequence

from . import docio
from .analyzer import analyze
from .artifacts import BusinessRuleInventory, LegacyArtifactBundle, PipelineState, bundle_digest
from .bsg import Bsg, deserialize_bsg, serialize_bsg, validate_bsg
from .provider import (MalformedCompletion, ProviderClient, ProviderError, ProviderSettings,
                       extract_document, render_prompt)
from .specgen import generate_bsg
from .transformer import (FaultSpec, ModernizedServicePackage, apply_feedback, correction_prompt, inject_fault,
                          transform)
from .validator import EquivalenceReport, FeedbackBundle, package_feedback, validate

logger = logging.getLogger(__name__)

MODES = ("full", "no_feedback", "sp_llm", "cot_llm")
BACKENDS = ("deterministic", "provider")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    max_iterations: int = 3
    convergence_ber: float = 100.0
    extraction_temperature: float = 0.2
    generation_temperature: float = 0.0
    backend: str = "deterministic"
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    best_iteration_retention: bool = False
    mode: str = "full"
    fault: Optional[FaultSpec] = None  # test hook, applied after the first transform

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        for name in ("extraction_temperature", "generation_temperature"):
            if not 0 <= getattr(self, name) <= 2:
                raise ConfigError(f"{name} must lie in [0, 2]")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")

    def to_doc(self) -> dict:
        return {"max_iterations": self.max_iterations, "convergence_ber": self.convergence_ber,
                "extraction_temperature": self.extraction_temperature,
                "generation_temperature": self.generation_temperature, "backend": self.backend,
                "provider": {"base_url": self.provider.base_url, "model": self.provider.model,
                             "token_env": self.provider.token_env, "retries": self.provider.retries},
                "best_iteration_retention": self.best_iteration_retention, "mode": self.mode,
                "fault": None if self.fault is None else {"kind": self.fault.kind, "target": self.fault.target,
                                                          "detail": dict(self.fault.detail)}}


class AgentBackend(Protocol):
    deterministic: bool

    def analyze(self, bundle: LegacyArtifactBundle) -> tuple[BusinessRuleInventory, Any]: ...

    def specify(self, bri: BusinessRuleInventory, context: Any, bundle: LegacyArtifactBundle) -> Bsg: ...

    def transform(self, bsg: Bsg, feedback: Optional[FeedbackBundle],
                  previous: Optional[ModernizedServicePackage]) -> ModernizedServicePackage: ...

    def validate(self, bsg: Bsg, package: ModernizedServicePackage, iteration: int) -> EquivalenceReport: ...


class DeterministicBackend:
    """Rule-based agents; every capability is a pure function of its inputs."""

    deterministic = True

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()

    def analyze(self, bundle):
        analysis = analyze(bundle, self.config.extraction_temperature)
        return analysis.inventory, analysis

    def specify(self, bri, context, bundle):
        return generate_bsg(bri, context.structure, context.ast, bundle=bundle)

    def transform(self, bsg, feedback, previous):
        if feedback is None or previous is None:
            return transform(bsg)
        return apply_feedback(previous, feedback)

    def validate(self, bsg, package, iteration):
        return validate(bsg, package, iteration)


def artifacts_text(bundle: LegacyArtifactBundle) -> str:
    return "\n".join(f"--- {f.path} ({f.kind})\n{f.text}" for f in bundle.files)


def materialize(package: ModernizedServicePackage, root: str | Path) -> ModernizedServicePackage:
    """Write an external package's files under ``root`` and point its manifest there."""
    root = Path(root)
    for rel, text in package.source_files:
        target = (root / rel).resolve()
        if root.resolve() not in target.parents:
            raise ProviderError(f"generated file escapes the work directory: {rel}")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return replace(package, manifest={**package.manifest, "workdir": str(root)})


def parse_external(doc: Any, iteration: int = 0) -> ModernizedServicePackage:
    if not isinstance(doc, dict) or not isinstance(doc.get("files"), list):
        raise MalformedCompletion("expected {files: [...], manifest: {...}}")
    files = tuple((str(f["path"]), str(f["text"])) for f in doc["files"])
    manifest = dict(doc.get("manifest") or {})
    return ModernizedServicePackage("external_sources", None, files, manifest, {}, iteration)


class ProviderBackend:
    """Agents backed by a chat-completion provider (or a mock of one)."""

    deterministic = False

    def __init__(self, client, config: Optional[PipelineConfig] = None, workdir: Optional[str | Path] = None):
        self.client = client
        self.config = config or PipelineConfig(backend="provider")
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="bsgkit-"))

    def _ask(self, template: str, temperature: float, **fields) -> Any:
        prompt = render_prompt(template, **fields)
        completion = self.client.exchange([{"role": "user", "content": prompt}], temperature)
        return extract_document(completion.text)

    def analyze(self, bundle):
        doc = self._ask("analyze", self.config.extraction_temperature, artifacts=artifacts_text(bundle))
        doc = {"bundle_digest": bundle_digest(bundle), "extraction_meta": {"backend": "provider"}, **doc}
        return BusinessRuleInventory.from_doc(doc), None

    def specify(self, bri, context, bundle):
        doc = self._ask("specify", self.config.extraction_temperature, inventory=docio.dumps(bri.to_doc()))
        bsg = deserialize_bsg(doc)
        problems = validate_bsg(bsg)
        if problems:
            raise ProviderError("generated BSG is invalid: " + "; ".join(str(p) for p in problems))
        return bsg

    def transform(self, bsg, feedback, previous):
        iteration = 0 if previous is None else previous.iteration_tag + 1
        note = "" if feedback is None else correction_prompt(feedback) + "\n"
        doc = self._ask("transform", self.config.generation_temperature, feedback=note,
                        bsg=docio.dumps(serialize_bsg(bsg)))
        return materialize(parse_external(doc, iteration), self.workdir / f"iteration-{iteration}")

    def validate(self, bsg, package, iteration):
        return validate(bsg, package, iteration)


def backend_for(config: PipelineConfig, client=None, workdir=None) -> AgentBackend:
    if config.backend == "deterministic":
        return DeterministicBackend(config)
    if client is None:
        client = ProviderClient(config.provider)
    return ProviderBackend(client, config, workdir)


# --- gold isolation --------------------------------------------------------

class GoldAccessError(PermissionError):
    pass


class GoldGuard:
    """Refuses (and records) any file open under the guarded directories."""

    def __init__(self, directories: Iterable[str | Path]):
        self.roots = [Path(d).resolve() for d in directories]
        self.violations: list[str] = []
        self._saved: tuple = ()

    def _guarded(self, file) -> bool:
        if isinstance(file, int) or not self.roots:
            return False
        try:
            p = Path(os.fsdecode(file)).resolve()
        except (TypeError, ValueError):
            return False
        return any(p == r or r in p.parents for r in self.roots)

    def _wrap(self, real):
        def guarded(file, *args, **kwargs):
            if self._guarded(file):
                self.violations.append(str(file))
                raise GoldAccessError(f"gold path read during pipeline: {file}")
            return real(file, *args, **kwargs)
        return guarded

    def __enter__(self) -> "GoldGuard":
        self._saved = (builtins.open, io.open, os.open)
        builtins.open = self._wrap(builtins.open)
        io.open = self._wrap(io.open)
        os.open = self._wrap(os.open)
        # pathlib on 3.10 captured io.open in its accessor at import time
        self._accessor = getattr(pathlib, "_NormalAccessor", None)
        if self._accessor is not None and "open" in vars(self._accessor):
            self._accessor_open = vars(self._accessor)["open"]
            self._accessor.open = staticmethod(self._wrap(self._accessor_open))
        else:
            self._accessor = None
        return self

    def __exit__(self, *exc) -> None:
        builtins.open, io.open, os.open = self._saved
        if self._accessor is not None:
            self._accessor.open = self._accessor_open


# --- pipeline --------------------------------------------------------------

def _ber(report: EquivalenceReport) -> float:
    return float(report.ber_percent)


def run_pipeline(bundle: LegacyArtifactBundle, config: Optional[PipelineConfig] = None,
                 backend: Optional[AgentBackend] = None, gold_dirs: Sequence[str | Path] = (),
                 client=None) -> PipelineState:
    """analyze -> specify -> transform -> validate, then the feedback loop."""
    config = config or PipelineConfig()
    if config.mode in ("sp_llm", "cot_llm"):
        return run_baseline(bundle, config, client)
    backend = backend or backend_for(config, client)
    state = PipelineState(bundle, config.max_iterations)
    with GoldGuard(gold_dirs):
        _run(state, bundle, config, backend)
    return state


def _run(state: PipelineState, bundle, config: PipelineConfig, backend: AgentBackend) -> None:
    stage = "analyze"
    try:
        bri, context = backend.analyze(bundle)
        state.put("business_rules", bri)
        state.structure = getattr(context, "structure", None)
        stage = "specify"
        state.put("bsg", backend.specify(bri, context, bundle))
        stage = "transform"
        package = backend.transform(state.bsg, None, None)
        if config.fault is not None:
            if package.esm is None:
                raise ConfigError("faults can only be injected into an ESM package")
            package = replace(package, esm=inject_fault(package.esm, config.fault))
        stage = "validate"
        report = backend.validate(state.bsg, package, 0)
        snapshots = [(package, report)]
        state.history.append((0, _ber(report)))
        while (config.mode == "full" and _ber(report) < config.convergence_ber
               and state.iteration < config.max_iterations and report.failures):
            stage = "feedback"
            feedback = package_feedback(report)
            state.advance()
            stage = "transform"
            package = backend.transform(state.bsg, feedback, package)
            stage = "validate"
            report = backend.validate(state.bsg, package, state.iteration)
            snapshots.append((package, report))
            state.history.append((state.iteration, _ber(report)))
        if config.best_iteration_retention:
            best = max(range(len(snapshots)), key=lambda i: (_ber(snapshots[i][1]), -i))
            package, report = snapshots[best]
        state.put("modern_code", package)
        state.put("equiv_report", report)
        state.complete()
    except Exception as exc:  # any agent failure ends the run with a stage tag
        logger.error("pipeline failed at %s: %s", stage, exc)
        state.fail(stage, f"{type(exc).__name__}: {exc}")


def run_baseline(bundle: LegacyArtifactBundle, config: PipelineConfig, client=None,
                 workdir: Optional[str | Path] = None) -> PipelineState:
    """Single-call baseline: one prompt, no BRI, no BSG, no validation loop."""
    if config.mode not in ("sp_llm", "cot_llm"):
        raise ConfigError(f"mode {config.mode} is not a baseline")
    if config.backend != "provider":
        raise ConfigError(f"baseline {config.mode} needs the provider backend")
    client = client or ProviderClient(config.provider)
    state = PipelineState(bundle, config.max_iterations)
    prompt = render_prompt(config.mode, artifacts=artifacts_text(bundle))
    try:
        completion = client.exchange([{"role": "user", "content": prompt}], config.generation_temperature)
    except ProviderError as exc:
        state.fail("baseline", f"{type(exc).__name__}: {exc}")
        return state
    try:
        package = parse_external(extract_document(completion.text))
        root = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="bsgkit-"))
        package = materialize(package, root)
    except (MalformedCompletion, KeyError, TypeError) as exc:
        logger.warning("baseline output unparseable: %s", exc)
        package = ModernizedServicePackage("external_sources", notes=(f"unparseable completion: {exc}",))
    state.put("modern_code", package)
    state.complete()
    return state

