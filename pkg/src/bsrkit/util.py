"""Small shared helpers: worker pool sizing, canonical JSON output."""

from __future__ import annotations

import json
import os

from .errors import ConfigError


def worker_count():
    """Worker cap from BSRKIT_THREADS (0 = auto, unset = 1)."""
    raw = os.environ.get("BSRKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BSRKIT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("BSRKIT_THREADS must be >= 0")
    if n == 0:
        return os.cpu_count() or 1
    return n


def dump_json(obj, path):
    """Write canonical, diff-friendly JSON (sorted keys, trailing newline)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def canonical_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
