"""Canonical JSON serialization.

Every JSON artifact the package writes goes through :func:`canonical_dumps`
so that identical in-memory content yields byte-identical files: keys are
sorted, separators are fixed, and non-finite floats are rendered as the
strings "inf" / "-inf" (JSON has no literal for them; ``allow_nan`` is off
so an unexpected NaN fails loudly instead of producing non-standard output).
"""

import json
import math

from .errors import FormatError


def _sanitize(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            raise FormatError("refusing to serialize NaN")
        return obj
    if isinstance(obj, dict):
        return {key: _sanitize(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(value) for value in obj]
    return obj


def canonical_dumps(obj) -> str:
    return json.dumps(_sanitize(obj), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(canonical_dumps(obj))
        handle.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def parse_float(value) -> float:
    """Inverse of the inf sanitization applied by canonical_dumps."""
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)
