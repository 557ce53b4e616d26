"""Deterministic JSON serialization helpers.

All artifacts written by this package go through :func:`dumps_canonical` so a
run with a fixed seed produces byte-identical files.  Keys are sorted,
floats use Python's shortest round-trip repr, and output ends with a single
newline.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(obj), encoding="utf-8")


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def content_hash(obj: Any) -> str:
    """sha256 over the compact canonical encoding, as a hex digest."""
    compact = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()
