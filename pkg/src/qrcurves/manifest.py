"""Run manifests and deterministic output writing."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_digest(params: dict) -> str:
    return hashlib.sha256(dumps(params).encode()).hexdigest()


@dataclass
class RunManifest:
    command: list
    params: dict
    seed: int | None
    outputs: list = field(default_factory=list)
    started: str = ""
    finished: str = ""
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    @property
    def digest(self) -> str:
        # the worker count never changes results, so it stays out of the digest
        params = {k: v for k, v in self.params.items() if k != "workers"}
        return config_digest({"command": self.command[:2], "params": params, "version": self.version})

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["config_digest"] = self.digest
        return d


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class OutputWriter:
    """Writes artifacts into one directory and records them for the manifest."""

    def __init__(self, out_dir: str, manifest: RunManifest):
        self.out_dir = out_dir
        self.manifest = manifest
        os.makedirs(out_dir, exist_ok=True)

    def write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.manifest.outputs.append(path)
        return path

    def write_json(self, name: str, obj, with_manifest_ref: bool = True) -> str:
        payload = dict(obj) if isinstance(obj, dict) else {"data": obj}
        if with_manifest_ref:
            payload["manifest"] = {"file": "manifest.json", "config_digest": self.manifest.digest,
                                   "schema_version": SCHEMA_VERSION}
        return self.write_text(name, dumps(payload))

    def finish(self) -> str:
        self.manifest.finished = utc_now()
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(self.manifest.to_json_dict()))
        return path
