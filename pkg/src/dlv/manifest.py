"""Run manifests: one JSON document per CLI run.

Manifests are byte-identical across runs with the same argv, fixtures and
seed; wall-clock measurements live under the single "timings" key so
consumers can strip them before comparing.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def build_manifest(command: str, argv: list[str], config: dict, seed: int,
                   inputs: dict, outputs: list[str], outcome: dict, timings: dict) -> dict:
    return {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "fixture_hashes": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "outcome": outcome,
        "timings": timings,
    }


def manifest_text(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_manifest(path, doc: dict) -> None:
    Path(path).write_text(manifest_text(doc), encoding="utf-8")


def strip_timings(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "timings"}
