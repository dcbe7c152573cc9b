"""Deterministic JSON writing and content hashing for pipeline artifacts."""

import hashlib
import json
from pathlib import Path

FORMAT_VERSION = 1


def dumps(doc, indent=None):
    # repr-based float formatting in json round-trips doubles exactly
    return json.dumps(doc, sort_keys=True, indent=indent, allow_nan=False)


def content_hash(doc):
    """SHA-256 of the canonical JSON encoding of ``doc``."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, doc, indent=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc, indent=indent) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
