"""Content fingerprints and per-run manifests for reproducibility audits."""

from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import AnnotatedInstance

MANIFEST_NAME = "manifest.json"


def fingerprint_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def fingerprint_instances(instances: Iterable[AnnotatedInstance]) -> str:
    """Content hash of an instance stream, order-sensitive.

    Uses the canonical jsonl serialization so that a corpus and its
    round-tripped export fingerprint identically.
    """
    digest = hashlib.sha256()
    for inst in instances:
        line = json.dumps(inst.to_json(), ensure_ascii=False, sort_keys=True)
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def fingerprint_mapping(mapping: Mapping) -> str:
    return fingerprint_text(json.dumps(mapping, sort_keys=True, default=str))


def tool_versions() -> dict[str, str]:
    import numpy
    import torch

    from . import __version__

    return {
        "basicmip": __version__,
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "python": platform.python_version(),
    }


@dataclass(frozen=True)
class RunManifest:
    """Record of what produced the contents of one output directory."""

    command: str
    config_fingerprint: str
    data_fingerprints: dict[str, str]
    seed: int | None
    artifacts: tuple[str, ...]
    versions: dict[str, str] = field(default_factory=tool_versions)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config_fingerprint": self.config_fingerprint,
            "data_fingerprints": dict(self.data_fingerprints),
            "seed": self.seed,
            "artifacts": list(self.artifacts),
            "versions": dict(self.versions),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunManifest":
        return cls(
            command=obj["command"],
            config_fingerprint=obj["config_fingerprint"],
            data_fingerprints=dict(obj["data_fingerprints"]),
            seed=obj.get("seed"),
            artifacts=tuple(obj.get("artifacts", ())),
            versions=dict(obj.get("versions", {})),
        )


def write_manifest(out_dir: str | Path, manifest: RunManifest) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(out_dir: str | Path) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    return RunManifest.from_json(json.loads(path.read_text(encoding="utf-8")))
