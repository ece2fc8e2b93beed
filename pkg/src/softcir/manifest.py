"""Run manifests: the audit trail written next to every output file."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import time
from pathlib import Path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Collects resolved config, input digests, and cost for one invocation.

    The manifest lands at ``<output>.manifest.json`` and carries a wall-clock
    timestamp, which is the one field excluded from byte-reproducibility
    guarantees.
    """

    def __init__(self, subcommand: str, version: str) -> None:
        self.subcommand = subcommand
        self.version = version
        self._started = time.monotonic()
        self.config: dict[str, dict] = {}
        self.inputs: dict[str, str] = {}
        self.provider: dict = {}

    def record_config(self, key: str, value, source: str) -> None:
        self.config[key] = {"value": value, "source": source}

    def record_input(self, path: str | Path) -> None:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)

    def record_provider(self, model: str, usage: dict, estimated_cost: float) -> None:
        self.provider = {"model": model, "usage": usage, "estimated_cost_usd": estimated_cost}

    def write(self, output_path: str | Path) -> Path:
        output_path = Path(output_path)
        doc = {
            "subcommand": self.subcommand,
            "tool_version": self.version,
            "timestamp": dt.datetime.now(tz=dt.timezone.utc).isoformat(timespec="seconds"),
            "wall_clock_s": round(time.monotonic() - self._started, 3),
            "config": self.config,
            "inputs": self.inputs,
            "provider": self.provider,
        }
        target = output_path.with_name(output_path.name + ".manifest.json")
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(target)
        return target
