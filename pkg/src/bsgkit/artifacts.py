"""Input bundle, business rule inventory and shared pipeline state."""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from . import docio
from .docio import DocumentError, require
from .predicate import PredicateSyntaxError, parse_predicate

logger = logging.getLogger(__name__)

KINDS = ("source", "config", "schema", "doc")

EXTENSION_KINDS = {
    ".cob": "source", ".cbl": "source", ".sql": "source", ".pls": "source",
    ".ddl": "schema",
    ".jcl": "config", ".cfg": "config", ".properties": "config",
    ".md": "doc", ".txt": "doc",
}


class BundleError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


class InventoryError(ValueError):
    pass


@dataclass(frozen=True)
class ArtifactFile:
    path: str
    kind: str
    text: str


@dataclass(frozen=True)
class LegacyArtifactBundle:
    files: tuple[ArtifactFile, ...]
    scenario_id: str = "bundle"

    def __post_init__(self):
        seen = set()
        for f in self.files:
            if f.kind not in KINDS:
                raise BundleError("UNKNOWN_KIND", f"{f.path}: {f.kind!r}")
            if f.path in seen:
                raise BundleError("DUPLICATE_PATH", f.path)
            seen.add(f.path)
        if not any(f.kind == "source" for f in self.files):
            raise BundleError("EMPTY_SOURCE_SET", "bundle has no source files")
        object.__setattr__(self, "files", tuple(sorted(self.files, key=lambda f: f.path)))

    def of_kind(self, kind: str) -> list[ArtifactFile]:
        return [f for f in self.files if f.kind == kind]

    @property
    def source_files(self) -> list[ArtifactFile]:
        return self.of_kind("source")

    @property
    def config_files(self) -> list[ArtifactFile]:
        return self.of_kind("config")

    @property
    def schemas(self) -> list[ArtifactFile]:
        return self.of_kind("schema")

    @property
    def docs(self) -> list[ArtifactFile]:
        return self.of_kind("doc")

    def file(self, path: str) -> ArtifactFile:
        for f in self.files:
            if f.path == path:
                return f
        raise KeyError(path)

    def to_doc(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "digest": bundle_digest(self),
            "files": [{"path": f.path, "kind": f.kind, "lines": len(f.text.splitlines())}
                      for f in self.files],
        }


def bundle_digest(bundle: LegacyArtifactBundle) -> str:
    """SHA-256 over the sorted (path, kind, bytes) triples."""
    h = hashlib.sha256()
    for f in sorted(bundle.files, key=lambda f: f.path):
        data = f.text.encode("utf-8")
        for part in (f.path.encode("utf-8"), f.kind.encode("ascii"), str(len(data)).encode("ascii")):
            h.update(part)
            h.update(b"\0")
        h.update(data)
    return h.hexdigest()


def _read_manifest(path: Path) -> dict[str, str]:
    kinds: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise BundleError("BAD_MANIFEST", f"{path}:{lineno}: expected '<kind> <path>'")
        kind, rel = parts
        if kind not in KINDS:
            raise BundleError("UNKNOWN_KIND", f"{path}:{lineno}: {kind!r}")
        if rel in kinds:
            raise BundleError("DUPLICATE_PATH", rel)
        kinds[rel] = kind
    return kinds


def load_bundle(root_directory: str | Path, manifest: str | Path | None = None,
                scenario_id: str | None = None) -> LegacyArtifactBundle:
    """Load every artifact under ``root_directory`` into a validated bundle.

    Without a manifest, kinds come from :data:`EXTENSION_KINDS`; files with
    other extensions are skipped.
    """
    root = Path(root_directory)
    if not root.is_dir():
        raise BundleError("NOT_A_DIRECTORY", str(root))
    if manifest is not None:
        entries = _read_manifest(Path(manifest))
    else:
        entries = {}
        for p in sorted(root.rglob("*")):
            if not p.is_file():
                continue
            kind = EXTENSION_KINDS.get(p.suffix.lower())
            if kind is None:
                logger.debug("skipping %s: no kind for extension", p)
                continue
            entries[p.relative_to(root).as_posix()] = kind
    files = []
    for rel, kind in sorted(entries.items()):
        try:
            text = (root / rel).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise BundleError("UNREADABLE_FILE", f"{rel}: {exc}") from exc
        files.append(ArtifactFile(rel, kind, text))
    return LegacyArtifactBundle(tuple(files), scenario_id or root.name)


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line_start: int
    line_end: int

    def __post_init__(self):
        if not 1 <= self.line_start <= self.line_end:
            raise ValueError(f"bad line range {self.line_start}-{self.line_end}")

    def __str__(self) -> str:
        return f"{self.file}:{self.line_start}-{self.line_end}"

    def overlaps(self, other: "SourceLocation") -> bool:
        return (self.file == other.file and self.line_start <= other.line_end
                and other.line_start <= self.line_end)

    @classmethod
    def parse(cls, text: str) -> "SourceLocation":
        m = re.fullmatch(r"(.+):(\d+)(?:-(\d+))?", text.strip())
        if not m:
            raise ValueError(f"bad source location {text!r}")
        start = int(m.group(2))
        return cls(m.group(1), start, int(m.group(3) or start))


CONFIDENCE = ("high", "medium", "low")
CATEGORIES = ("explicit", "implicit")
RULE_KINDS = ("validation", "computation", "state_transition", "exception", "constraint")
CONSTRAINT_KINDS = ("type_restriction", "value_range", "referential_integrity",
                    "temporal_ordering", "business_invariant")


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str
    subject_fields: tuple[str, ...]
    expression: str
    lower: Any = None
    upper: Any = None
    width: Optional[int] = None
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "value_range" and self.lower is None and self.upper is None and not self.values:
            raise ValueError("value_range constraint needs a bound or a value set")
        parse_predicate(self.expression)

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "subject_fields": list(self.subject_fields),
               "expression": self.expression}
        for key in ("lower", "upper", "width"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        if self.values:
            doc["values"] = list(self.values)
        return doc

    @classmethod
    def from_doc(cls, doc: dict, path: str = "") -> "ConstraintSpec":
        try:
            return cls(require(doc, "kind", path, str), tuple(require(doc, "subject_fields", path, list)),
                       require(doc, "expression", path, str), doc.get("lower"), doc.get("upper"),
                       doc.get("width"), tuple(doc.get("values", ())))
        except (ValueError, PredicateSyntaxError) as exc:
            if isinstance(exc, DocumentError):
                raise
            raise DocumentError(path, str(exc)) from exc


@dataclass(frozen=True)
class BusinessRule:
    id: str
    description: str
    location: SourceLocation
    input_fields: tuple[str, ...]
    output_effects: tuple[str, ...]
    confidence: str
    category: str
    kind: str
    constraint_payload: Optional[ConstraintSpec] = None

    def __post_init__(self):
        if not re.fullmatch(r"BR-\d{3}", self.id):
            raise ValueError(f"rule id {self.id!r} does not match BR-ddd")
        if self.confidence not in CONFIDENCE:
            raise ValueError(f"bad confidence {self.confidence!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"bad category {self.category!r}")
        if self.kind not in RULE_KINDS:
            raise ValueError(f"bad rule kind {self.kind!r}")
        if self.kind == "constraint" and self.constraint_payload is None:
            raise ValueError(f"{self.id}: constraint rule without payload")

    def to_doc(self) -> dict:
        doc = {
            "id": self.id, "description": self.description, "location": str(self.location),
            "input_fields": list(self.input_fields), "output_effects": list(self.output_effects),
            "confidence": self.confidence, "category": self.category, "kind": self.kind,
        }
        if self.constraint_payload is not None:
            doc["constraint"] = self.constraint_payload.to_doc()
        return doc

    @classmethod
    def from_doc(cls, doc: dict, path: str = "") -> "BusinessRule":
        payload = doc.get("constraint")
        try:
            return cls(
                require(doc, "id", path, str), require(doc, "description", path, str),
                SourceLocation.parse(require(doc, "location", path, str)),
                tuple(require(doc, "input_fields", path, list)),
                tuple(require(doc, "output_effects", path, list)),
                require(doc, "confidence", path, str), require(doc, "category", path, str),
                require(doc, "kind", path, str),
                ConstraintSpec.from_doc(payload, path + ".constraint") if payload is not None else None,
            )
        except DocumentError:
            raise
        except ValueError as exc:
            raise DocumentError(path, str(exc)) from exc


@dataclass(frozen=True)
class BusinessRuleInventory:
    rules: tuple[BusinessRule, ...]
    bundle_digest: str
    extraction_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = set()
        for r in self.rules:
            if r.id in seen:
                raise InventoryError(f"duplicate rule id {r.id}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.rules)

    def get(self, rule_id: str) -> BusinessRule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.rules]

    def to_doc(self) -> dict:
        return {"rules": [r.to_doc() for r in self.rules], "bundle_digest": self.bundle_digest,
                "extraction_meta": dict(self.extraction_meta)}

    @classmethod
    def from_doc(cls, doc: dict) -> "BusinessRuleInventory":
        rules = require(doc, "rules", "", list)
        try:
            return cls(tuple(BusinessRule.from_doc(r, f".rules[{i}]") for i, r in enumerate(rules)),
                       require(doc, "bundle_digest", "", str), dict(doc.get("extraction_meta", {})))
        except InventoryError as exc:
            raise DocumentError(".rules", str(exc)) from exc


def check_locations(inventory: BusinessRuleInventory, bundle: LegacyArtifactBundle) -> list[str]:
    """Rules whose line range falls outside the referenced file."""
    problems = []
    counts = {f.path: len(f.text.splitlines()) for f in bundle.files}
    for r in inventory.rules:
        n = counts.get(r.location.file)
        if n is None or r.location.line_end > n:
            problems.append(f"{r.id}: {r.location} outside bundle")
    return problems


class Status(str, Enum):
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


_REQUIRES = {"bsg": "business_rules", "equiv_report": "modern_code"}


@dataclass
class PipelineState:
    """Mutable state threaded through one pipeline run by the orchestrator."""

    legacy_bundle: LegacyArtifactBundle
    max_iterations: int = 3
    business_rules: Optional[BusinessRuleInventory] = None
    bsg: Any = None
    modern_code: Any = None
    equiv_report: Any = None
    iteration: int = 0
    status: Status = Status.RUNNING
    history: list[tuple[int, Any]] = field(default_factory=list)
    failure: Optional[dict] = None
    structure: Any = None

    def put(self, name: str, value: Any) -> None:
        if self.status is not Status.RUNNING:
            raise RuntimeError(f"state is {self.status.value}; artifacts are frozen")
        needed = _REQUIRES.get(name)
        if needed and getattr(self, needed) is None:
            raise RuntimeError(f"cannot set {name} before {needed}")
        # baselines set modern_code without a BSG; the pipeline never does
        if name == "modern_code" and self.business_rules is not None and self.bsg is None:
            raise RuntimeError("cannot set modern_code before bsg")
        setattr(self, name, value)

    def advance(self) -> None:
        if self.iteration + 1 > self.max_iterations:
            raise RuntimeError("iteration limit exceeded")
        self.iteration += 1

    def complete(self) -> None:
        self._transition(Status.COMPLETED)

    def fail(self, stage: str, message: str) -> None:
        self.failure = {"stage": stage, "message": message}
        self._transition(Status.FAILED)

    def _transition(self, target: Status) -> None:
        if self.status is not Status.RUNNING:
            raise RuntimeError(f"illegal transition {self.status.value} -> {target.value}")
        self.status = target

    def to_doc(self) -> dict:
        def dump(x):
            return None if x is None else x.to_doc()
        return {
            "legacy_bundle": self.legacy_bundle.to_doc(),
            "business_rules": dump(self.business_rules),
            "bsg": dump(self.bsg),
            "modern_code": dump(self.modern_code),
            "equiv_report": dump(self.equiv_report),
            "iteration": self.iteration,
            "status": self.status.value,
            "history": [[i, b] for i, b in self.history],
            "failure": self.failure,
        }
