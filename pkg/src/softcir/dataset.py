"""Query records and the JSONL wire formats shared across subcommands."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import SchemaViolation


@dataclass(frozen=True)
class QueryRecord:
    """One retrieval query: reference image, modification text(s), targets.

    ``mod_texts`` holds one caption for generic-scene data and two for the
    fashion protocol. ``subset_ids``, when present, names the visually
    similar candidates used for subset recall and must contain at least one
    ground-truth id.
    """

    query_id: str
    reference_id: str
    mod_texts: tuple[str, ...]
    gt_ids: frozenset[str]
    subset_ids: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if not self.query_id:
            raise SchemaViolation("query_id must be non-empty")
        if not 1 <= len(self.mod_texts) <= 2:
            raise SchemaViolation(f"query {self.query_id!r}: expected 1-2 mod_texts")
        if any(not t for t in self.mod_texts):
            raise SchemaViolation(f"query {self.query_id!r}: empty modification text")
        if not self.gt_ids:
            raise SchemaViolation(f"query {self.query_id!r}: ground truth must be non-empty")
        if self.subset_ids is not None and not (self.subset_ids & self.gt_ids):
            raise SchemaViolation(
                f"query {self.query_id!r}: subset contains no ground-truth id"
            )


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise SchemaViolation(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    """Write records one-per-line, atomically, with stable key order (as given)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    tmp.replace(path)


def load_dataset(path: str | Path) -> list[QueryRecord]:
    """Read query records from dataset JSONL, validating invariants per line."""
    records = []
    seen: set[str] = set()
    for lineno, obj in iter_jsonl(path):
        try:
            record = QueryRecord(
                query_id=str(obj["query_id"]),
                reference_id=str(obj["reference_id"]),
                mod_texts=tuple(str(t) for t in obj["mod_texts"]),
                gt_ids=frozenset(str(g) for g in obj["gt_ids"]),
                subset_ids=(
                    frozenset(str(s) for s in obj["subset_ids"])
                    if obj.get("subset_ids") is not None
                    else None
                ),
            )
        except KeyError as exc:
            raise SchemaViolation(f"{path}:{lineno}: missing field {exc}") from exc
        except TypeError as exc:
            raise SchemaViolation(f"{path}:{lineno}: {exc}") from exc
        if record.query_id in seen:
            raise SchemaViolation(f"{path}:{lineno}: duplicate query_id {record.query_id!r}")
        seen.add(record.query_id)
        records.append(record)
    if not records:
        raise SchemaViolation(f"{path}: dataset is empty")
    return records


def dataset_to_dicts(records: list[QueryRecord]) -> list[dict]:
    out = []
    for r in records:
        doc: dict = {
            "query_id": r.query_id,
            "reference_id": r.reference_id,
            "mod_texts": list(r.mod_texts),
            "gt_ids": sorted(r.gt_ids),
        }
        if r.subset_ids is not None:
            doc["subset_ids"] = sorted(r.subset_ids)
        out.append(doc)
    return out


def load_score_file(path: str | Path) -> dict[str, dict[str, float]]:
    """Read per-query candidate scores: {"query_id":…, "scores": {id: s}}."""
    table: dict[str, dict[str, float]] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            qid = str(obj["query_id"])
            scores = obj["scores"]
        except KeyError as exc:
            raise SchemaViolation(f"{path}:{lineno}: missing field {exc}") from exc
        if not isinstance(scores, dict) or not scores:
            raise SchemaViolation(f"{path}:{lineno}: scores must be a non-empty object")
        parsed: dict[str, float] = {}
        for cid, value in scores.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise SchemaViolation(f"{path}:{lineno}: score for {cid!r} is not a number")
            parsed[str(cid)] = float(value)
        if qid in table:
            raise SchemaViolation(f"{path}:{lineno}: duplicate query_id {qid!r}")
        table[qid] = parsed
    if not table:
        raise SchemaViolation(f"{path}: score file is empty")
    return table


def write_score_file(path: str | Path, table: dict[str, dict[str, float]]) -> None:
    write_jsonl(
        path,
        [{"query_id": qid, "scores": dict(sorted(scores.items()))} for qid, scores in table.items()],
    )
