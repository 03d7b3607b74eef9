"""Run manifest: config hash, seeds, versions and a content hash for every artifact."""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, files: Iterable[str], config_sha256: str, scenario: str, seeds: List[int]) -> Path:
    from .. import __version__

    out = Path(out_dir)
    entries: Dict[str, str] = {}
    for rel in sorted(set(files)):
        entries[rel] = sha256_file(out / rel)
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "scenario": scenario,
        "seeds": list(seeds),
        "config_sha256": config_sha256,
        "versions": {"samplesafe": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "files": entries,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(out_dir) -> List[str]:
    """Return the artifact paths whose current hash differs from the manifest (or which are missing)."""
    out = Path(out_dir)
    doc = json.loads((out / MANIFEST_NAME).read_text(encoding="utf-8"))
    bad = []
    for rel, digest in doc["files"].items():
        p = out / rel
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(rel)
    return bad
