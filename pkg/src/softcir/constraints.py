"""Dual textual constraints: extraction protocol, response parsing, caching.

A query's modification text is decomposed into keep/add/remove attribute
lists, which the provider turns into two retrieval captions: a prescriptive
one (what the target must show, from keep+add) and a proscriptive one (what
it must avoid, from remove). Responses are cached in an append-only JSONL
so re-runs never pay for a provider call twice.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedResponse, SchemaViolation
from .llm import ChatProvider, TokenUsage
from .prompts import ImageAttachment, build_dual_constraint_prompt

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?|```")


@dataclass(frozen=True)
class AttributeClassification:
    keep: tuple[str, ...]
    add: tuple[str, ...]
    remove: tuple[str, ...]


@dataclass(frozen=True)
class Provenance:
    model: str
    prompt_version: str
    timestamp: str
    text_only: bool = False


@dataclass(frozen=True)
class DualConstraints:
    attributes: AttributeClassification
    prescriptive: str
    proscriptive: str
    provenance: Provenance

    def as_value_dict(self) -> dict:
        return {
            "keep": list(self.attributes.keep),
            "add": list(self.attributes.add),
            "remove": list(self.attributes.remove),
            "prescriptive": self.prescriptive,
            "proscriptive": self.proscriptive,
            "provenance": {
                "model": self.provenance.model,
                "prompt_version": self.provenance.prompt_version,
                "timestamp": self.provenance.timestamp,
                "text_only": self.provenance.text_only,
            },
        }

    @classmethod
    def from_value_dict(cls, value: dict) -> "DualConstraints":
        prov = value.get("provenance", {})
        return cls(
            attributes=AttributeClassification(
                keep=tuple(value["keep"]), add=tuple(value["add"]), remove=tuple(value["remove"])
            ),
            prescriptive=value["prescriptive"],
            proscriptive=value["proscriptive"],
            provenance=Provenance(
                model=prov.get("model", ""),
                prompt_version=prov.get("prompt_version", ""),
                timestamp=prov.get("timestamp", ""),
                text_only=bool(prov.get("text_only", False)),
            ),
        )


def extract_json_object(raw: str) -> dict:
    """Pull the first JSON object out of ``raw``, tolerating code fences and
    surrounding prose. Raises MalformedResponse when none decodes."""
    cleaned = _FENCE_RE.sub("", raw)
    decoder = json.JSONDecoder()
    for start in range(len(cleaned)):
        if cleaned[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(cleaned, start)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise MalformedResponse(f"no JSON object found in response: {raw[:200]!r}")


def _string_list(obj: dict, key: str) -> tuple[str, ...]:
    value = obj[key]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaViolation(f"{key!r} must be a list of strings")
    trimmed = tuple(v.strip() for v in value)
    if any(not v for v in trimmed):
        raise SchemaViolation(f"{key!r} contains an empty entry")
    return trimmed


def parse_constraint_response(raw: str, provenance: Provenance | None = None) -> DualConstraints:
    """Parse and validate a constraint-extraction response.

    Required keys: keep, add, remove (string lists) and prescriptive_query,
    proscriptive_query (strings). The prescriptive caption may be empty only
    when keep and add are both empty; the proscriptive caption may be empty
    only when remove is empty; nothing may sit in both add and remove.
    """
    obj = extract_json_object(raw)
    required = ("keep", "add", "remove", "prescriptive_query", "proscriptive_query")
    missing = [k for k in required if k not in obj]
    if missing:
        raise SchemaViolation(f"missing keys: {', '.join(missing)}")

    keep = _string_list(obj, "keep")
    add = _string_list(obj, "add")
    remove = _string_list(obj, "remove")
    for key in ("prescriptive_query", "proscriptive_query"):
        if not isinstance(obj[key], str):
            raise SchemaViolation(f"{key!r} must be a string")
    prescriptive = obj["prescriptive_query"].strip()
    proscriptive = obj["proscriptive_query"].strip()

    collisions = set(add) & set(remove)
    if collisions:
        raise SchemaViolation(f"attributes in both add and remove: {sorted(collisions)}")
    if not prescriptive and (keep or add):
        raise SchemaViolation("prescriptive_query empty despite keep/add attributes")
    if not proscriptive and remove:
        raise SchemaViolation("proscriptive_query empty despite remove attributes")

    return DualConstraints(
        attributes=AttributeClassification(keep=keep, add=add, remove=remove),
        prescriptive=prescriptive,
        proscriptive=proscriptive,
        provenance=provenance or Provenance(model="", prompt_version="", timestamp=""),
    )


def _now_iso() -> str:
    """UTC timestamp; honors SOURCE_DATE_EPOCH for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = float(epoch) if epoch else time.time()
    return dt.datetime.fromtimestamp(moment, tz=dt.timezone.utc).isoformat(timespec="seconds")


class ConstraintCache:
    """Append-only JSONL cache keyed by (query_id, prompt_version, model).

    Later lines win, so merging two caches is plain concatenation and a
    crashed run never corrupts earlier entries. Reads come from an in-memory
    snapshot loaded at construction; writes append under a lock.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str, str], DualConstraints] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        doc = json.loads(line)
                        key = doc["key"]
                        self._entries[(key["query_id"], key["prompt_version"], key["model"])] = (
                            DualConstraints.from_value_dict(doc["value"])
                        )
                    except (KeyError, TypeError, ValueError) as exc:
                        raise SchemaViolation(f"{self.path}:{lineno}: bad cache line: {exc}") from exc

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, query_id: str, prompt_version: str, model: str) -> DualConstraints | None:
        return self._entries.get((query_id, prompt_version, model))

    def latest_for_query(self, query_id: str) -> DualConstraints | None:
        """Last-written entry for a query id regardless of version/model."""
        hit = None
        for (qid, _, _), value in self._entries.items():
            if qid == query_id:
                hit = value
        return hit

    def put(
        self, query_id: str, value: DualConstraints, usage: TokenUsage | None = None
    ) -> None:
        key = (query_id, value.provenance.prompt_version, value.provenance.model)
        line = json.dumps(
            {
                "key": {
                    "query_id": query_id,
                    "prompt_version": value.provenance.prompt_version,
                    "model": value.provenance.model,
                },
                "value": value.as_value_dict(),
                "usage": (usage or TokenUsage()).as_dict(),
            },
            ensure_ascii=False,
        )
        with self._lock:
            self._entries[key] = value
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def generate_constraints(
    provider: ChatProvider,
    query_id: str,
    mod_text: str,
    cache: ConstraintCache,
    model: str,
    image_ref: ImageAttachment | None = None,
    max_retries: int = 2,
) -> DualConstraints:
    """Return the dual constraints for one query, consulting the cache first.

    A cache hit never touches the provider. On a miss, malformed or
    schema-violating responses are retried up to ``max_retries`` extra
    attempts before the last error propagates with the raw payload attached.
    """
    payload = build_dual_constraint_prompt(mod_text, image_ref)
    cached = cache.get(query_id, payload.prompt_version, model)
    if cached is not None:
        return cached

    last_error: Exception | None = None
    for _ in range(max_retries + 1):
        raw, usage = provider.chat(payload)
        provenance = Provenance(
            model=model,
            prompt_version=payload.prompt_version,
            timestamp=_now_iso(),
            text_only=payload.text_only,
        )
        try:
            parsed = parse_constraint_response(raw, provenance)
        except (MalformedResponse, SchemaViolation) as exc:
            last_error = MalformedResponse(f"{exc} (raw: {raw[:300]!r})")
            continue
        cache.put(query_id, parsed, usage)
        return parsed
    assert last_error is not None
    raise last_error
