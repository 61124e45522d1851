"""Canonical document format shared by every artifact.

Documents are UTF-8 JSON with sorted keys, two-space indentation and a
trailing newline. Decimal values round-trip as JSON numbers and are read
back as :class:`decimal.Decimal`.
"""

from __future__ import annotations

import hashlib
import json
from decimal import Decimal
from pathlib import Path
from typing import Any

HASH_ALGORITHM = "sha256"


class DocumentError(ValueError):
    """A document violates the schema of the artifact it claims to be."""

    def __init__(self, path: str, message: str):
        self.path = path or "."
        super().__init__(f"{self.path}: {message}")


def _plain(value: Any) -> Any:
    if isinstance(value, Decimal):
        as_float = float(value)
        if Decimal(repr(as_float)) != value:
            raise ValueError(f"decimal {value} cannot be written exactly")
        return as_float
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    return value


def dumps(doc: Any) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def dumps_line(doc: Any) -> str:
    """Compact single-line form used on the wire (no trailing newline)."""
    return json.dumps(_plain(doc), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def loads(text: str) -> Any:
    return json.loads(text, parse_float=Decimal)


def write(path: str | Path, doc: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def read(path: str | Path) -> Any:
    return loads(Path(path).read_text(encoding="utf-8"))


def digest(doc: Any) -> str:
    return hashlib.sha256(dumps(doc).encode("utf-8")).hexdigest()


def require(doc: Any, key: str, path: str, kind: type | tuple[type, ...] | None = None) -> Any:
    """Fetch ``doc[key]`` or raise a :class:`DocumentError` naming ``path.key``."""
    if not isinstance(doc, dict):
        raise DocumentError(path, "expected an object")
    if key not in doc:
        raise DocumentError(f"{path}.{key}", "missing required field")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise DocumentError(f"{path}.{key}", f"expected {_kind_name(kind)}")
    return value


def _kind_name(kind: type | tuple[type, ...]) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__
