"""JSON-safe canonicalization and hashing for event logs and reports."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from enum import Enum
from typing import Any, Iterable

import numpy as np

# Arrays above this size are logged as a digest rather than inline values.
_INLINE_ARRAY_LIMIT = 32


def to_jsonable(value: Any) -> Any:
    """Convert simulator values (numpy, dataclasses, enums) to JSON types.

    Large arrays become {n, max, sha256} digests so logs stay small while
    remaining deterministic.
    """
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        if value.size <= _INLINE_ARRAY_LIMIT:
            return [to_jsonable(v) for v in value.tolist()]
        return {
            "__array__": True,
            "n": int(value.size),
            "max": float(np.max(value)) if value.size else 0.0,
            "sha256": hashlib.sha256(np.ascontiguousarray(value).tobytes()).hexdigest(),
        }
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return repr(value)


def canonical_json(value: Any) -> str:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(",", ":"))


def digest(value: Any) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def trace_hash(records: Iterable[dict]) -> str:
    h = hashlib.sha256()
    for record in records:
        h.update(canonical_json(record).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
