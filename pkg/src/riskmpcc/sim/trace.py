"""JSON-lines trace files: one record per simulation step."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import InvalidInputError


def write_trace(path, records: Iterable[dict]) -> str:
    """Write records and return the SHA-256 of the serialized lines (the run's trace hash)."""
    digest = hashlib.sha256()
    with open(path, "w") as fh:
        for rec in records:
            line = json.dumps(rec, sort_keys=True)
            digest.update(line.encode())
            fh.write(line + "\n")
    return digest.hexdigest()


def iter_trace(path) -> Iterator[dict]:
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}:{n}: bad trace line: {exc}") from exc


def read_trace(path) -> list[dict]:
    if not Path(path).exists():
        raise InvalidInputError(f"trace not found: {path}")
    return list(iter_trace(path))


def trace_hash(records: Iterable[dict]) -> str:
    digest = hashlib.sha256()
    for rec in records:
        digest.update(json.dumps(rec, sort_keys=True).encode())
    return digest.hexdigest()
