"""Content-hash provenance for pipeline artifacts.

Every artifact embeds the SHA-256 of each input it was derived from; a
downstream command recomputes those hashes and refuses stale inputs unless
forced. JSON-lines artifacts (streams, tracks) keep their one-record-per-line
format and carry provenance in a ``<file>.meta.json`` sidecar instead.
Paths inside provenance records are stored relative to the artifact so that
identical pipelines in different directories produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .core_types import ConfigError


class StaleInputError(ConfigError):
    """An input file changed since the artifact referencing it was written."""


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_records(artifact_path: str | Path, inputs: dict[str, str | Path]) -> dict:
    """Role -> {path, sha256} map with paths relative to the artifact."""
    base = Path(artifact_path).resolve().parent
    recs = {}
    for role, p in inputs.items():
        p = Path(p)
        recs[role] = {
            "path": os.path.relpath(p.resolve(), start=base),
            "sha256": file_sha256(p),
        }
    return recs


def verify_inputs(artifact_path: str | Path, inputs: dict, force: bool = False) -> None:
    """Recompute each referenced input's hash; mismatch raises StaleInputError."""
    if force or not inputs:
        return
    base = Path(artifact_path).resolve().parent
    for role, rec in inputs.items():
        target = base / rec["path"]
        if not target.exists():
            raise StaleInputError(
                f"input {role!r} of {artifact_path} is missing: {target}"
            )
        actual = file_sha256(target)
        if actual != rec["sha256"]:
            raise StaleInputError(
                f"input {role!r} of {artifact_path} is stale: {target} hash "
                f"{actual[:12]} != recorded {rec['sha256'][:12]} (rerun upstream or pass --force)"
            )


def write_json_artifact(path: str | Path, payload: dict) -> None:
    """Deterministic JSON artifact: sorted keys, two-space indent, no timestamps."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json_artifact(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def write_sidecar(artifact: str | Path, payload: dict, inputs: dict[str, str | Path]) -> None:
    meta = dict(payload)
    meta["artifact"] = Path(artifact).name
    meta["inputs"] = input_records(sidecar_path(artifact), inputs)
    write_json_artifact(sidecar_path(artifact), meta)


def read_sidecar(artifact: str | Path) -> dict:
    p = sidecar_path(artifact)
    return read_json_artifact(p) if p.exists() else {}
