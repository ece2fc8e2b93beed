"""Two-stage multi-target benchmark construction.

Stage 1 retrieves candidate pools under three criteria (modification text
only, composed text, visual similarity to the original target), has a
provider score each group's candidates in [0, 1], and keeps everything at
or above the confidence threshold. Stage 2 turns pools of three or more
into single-target triplets: sample one target plus two distractors
deterministically, then have the provider rewrite the modification text so
it uniquely picks out the target.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .constraints import extract_json_object
from .dataset import QueryRecord
from .errors import (
    InsufficientTargets,
    MalformedResponse,
    MissingEmbedding,
    SchemaViolation,
)
from .llm import ChatProvider
from .prompts import (
    ImageAttachment,
    build_confidence_prompt,
    build_refinement_prompt,
    build_stage1_query_prompt,
)
from .rng import SplitMix64, fnv1a64, shuffled
from .vecstore import EmbeddingMatrix, RankedList, similarities, top_k


class Criterion(str, enum.Enum):
    TEXTUAL_TO_MODIFICATION = "textual_to_modification"
    COMPOSITIONAL = "compositional"
    VISUAL_TO_ORIGINAL_TARGET = "visual_to_original_target"
    ORIGINAL = "original"  # provenance tag for the always-retained ground truth


@dataclass(frozen=True)
class Stage1Config:
    k: int = 10
    tau: float = 0.85
    strict_threshold: bool = False  # ">" instead of ">=" at the boundary

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    def passes(self, confidence: float) -> bool:
        return confidence > self.tau if self.strict_threshold else confidence >= self.tau


@dataclass(frozen=True)
class CandidateGroup:
    criterion: Criterion
    candidates: RankedList
    confidences: dict[str, float]

    def __post_init__(self) -> None:
        if self.confidences:
            if set(self.confidences) != set(self.candidates.ids):
                raise SchemaViolation(
                    f"confidences keyed by {sorted(self.confidences)}, "
                    f"candidates are {sorted(self.candidates.ids)}"
                )
            bad = [c for c in self.confidences.values() if not 0.0 <= c <= 1.0]
            if bad:
                raise SchemaViolation(f"confidence outside [0, 1]: {bad[0]}")

    def with_confidences(self, confidences: dict[str, float]) -> "CandidateGroup":
        return CandidateGroup(self.criterion, self.candidates, dict(confidences))


@dataclass(frozen=True)
class ValidTarget:
    id: str
    confidence: float
    criterion: Criterion


@dataclass(frozen=True)
class MultiTargetRecord:
    query: QueryRecord
    valid_targets: tuple[ValidTarget, ...]
    excluded: bool
    reason: str | None

    @property
    def pool_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.valid_targets)

    def as_dict(self) -> dict:
        return {
            "query_id": self.query.query_id,
            "valid_targets": [
                {"id": t.id, "confidence": t.confidence, "criterion": t.criterion.value}
                for t in self.valid_targets
            ],
            "excluded": self.excluded,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class SingleTargetTriplet:
    query_id: str
    target_id: str
    distractor_ids: tuple[str, str]
    refined_text: str
    seed: int

    def __post_init__(self) -> None:
        if self.target_id in self.distractor_ids:
            raise ValueError("target cannot also be a distractor")
        if len(set(self.distractor_ids)) != 2:
            raise ValueError("exactly two distinct distractors required")
        if not self.refined_text.strip():
            raise ValueError("refined text must be non-empty")

    def as_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "target_id": self.target_id,
            "distractor_ids": list(self.distractor_ids),
            "refined_text": self.refined_text,
            "seed": self.seed,
        }


class TextEmbedder(Protocol):
    """Source of text-query embeddings in the image embedding space."""

    def vector_for(self, key: str, text: str) -> np.ndarray: ...


class HashTextEmbedder:
    """Deterministic pseudo-embedder: unit vector derived from the text hash.

    No semantic alignment with any image encoder; meant for offline runs,
    determinism checks, and synthetic corpora embedded the same way.
    """

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def vector_for(self, key: str, text: str) -> np.ndarray:
        rng = SplitMix64(fnv1a64(text))
        # map u64 draws to [-1, 1)
        values = [(rng.next_u64() / 2**63) - 1.0 for _ in range(self.dim)]
        vec = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # astronomically unlikely; keep the embedder total
            vec[0] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)


class StoreTextEmbedder:
    """Looks text vectors up in an embedding store by key, e.g. produced by
    an external encoder run over an exported caption file."""

    def __init__(self, store: EmbeddingMatrix) -> None:
        self.store = store

    def vector_for(self, key: str, text: str) -> np.ndarray:
        if key not in self.store:
            raise MissingEmbedding(
                f"no embedding for {key!r}; embed the exported captions first"
            )
        return self.store.row(key)


def parse_stage1_queries(raw: str) -> tuple[str, str]:
    """Extract (sentence1, sentence2) from a two-line response.

    sentence2 may legitimately be empty; sentence1 may not. Code fences and
    surrounding blank lines are tolerated, as are wrapping quotes.
    """
    cleaned = re.sub(r"```[a-zA-Z0-9_-]*\n?|```", "", raw)
    lines = [ln.strip().strip('"').strip() for ln in cleaned.splitlines()]
    while lines and not lines[0]:
        lines.pop(0)
    if not lines or not lines[0]:
        raise MalformedResponse(f"no sentences in response: {raw[:120]!r}")
    sentence1 = lines[0]
    sentence2 = lines[1] if len(lines) > 1 else ""
    return sentence1, sentence2


def compose_query(sentence1: str, sentence2: str) -> str:
    """Space-joined composition; an empty second sentence degenerates to the first."""
    return f"{sentence1} {sentence2}" if sentence2 else sentence1


def retrieve_candidate_groups(
    images: EmbeddingMatrix,
    sentence1_vec: np.ndarray,
    composed_vec: np.ndarray,
    original_target_id: str,
    reference_id: str,
    cfg: Stage1Config,
    query_id: str = "",
) -> list[CandidateGroup]:
    """Top-k candidate groups for the three retrieval criteria.

    The reference image never appears in any group (retrieving the query's
    own reference is degenerate). Groups come back unscored.
    """
    if original_target_id not in images:
        raise MissingEmbedding(f"original target {original_target_id!r} not in image store")

    def build(criterion: Criterion, query_vec: np.ndarray) -> CandidateGroup:
        scores = similarities(images, query_vec)
        scores.pop(reference_id, None)
        ranked = top_k(scores, cfg.k, query_id=query_id)
        return CandidateGroup(criterion=criterion, candidates=ranked, confidences={})

    return [
        build(Criterion.TEXTUAL_TO_MODIFICATION, sentence1_vec),
        build(Criterion.COMPOSITIONAL, composed_vec),
        build(Criterion.VISUAL_TO_ORIGINAL_TARGET, images.row(original_target_id)),
    ]


def parse_confidence_scores(raw: str, group_ids: Sequence[str]) -> dict[str, float]:
    """Parse {candidate id: confidence} covering every id in the group.

    Scores outside [0, 1] or missing candidates are schema violations, not
    silently clamped or defaulted.
    """
    obj = extract_json_object(raw)
    out: dict[str, float] = {}
    for cid in group_ids:
        if cid not in obj:
            raise SchemaViolation(f"no confidence for candidate {cid!r}")
        value = obj[cid]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaViolation(f"confidence for {cid!r} is not a number")
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise SchemaViolation(f"confidence for {cid!r} is {value}, outside [0, 1]")
        out[cid] = value
    return out


_CRITERION_RANK = {
    Criterion.ORIGINAL: 0,
    Criterion.TEXTUAL_TO_MODIFICATION: 1,
    Criterion.COMPOSITIONAL: 2,
    Criterion.VISUAL_TO_ORIGINAL_TARGET: 3,
}


def select_multi_targets(
    groups: Sequence[CandidateGroup], cfg: Stage1Config, query: QueryRecord
) -> MultiTargetRecord:
    """Union the per-group threshold passers into one validated pool.

    Candidates appearing in several groups keep their maximum confidence
    (ties resolved by group order). Every original ground-truth id is
    retained unconditionally as (1.0, original). A query is excluded exactly
    when no candidate beyond the original ground truth passes.
    """
    best: dict[str, ValidTarget] = {
        gt: ValidTarget(id=gt, confidence=1.0, criterion=Criterion.ORIGINAL)
        for gt in sorted(query.gt_ids)
    }
    for group in groups:
        if not group.confidences and len(group.candidates):
            raise SchemaViolation(f"group {group.criterion.value} has not been scored")
        for cid, conf in group.confidences.items():
            if not cfg.passes(conf):
                continue
            current = best.get(cid)
            if (
                current is None
                or conf > current.confidence
                or (
                    conf == current.confidence
                    and _CRITERION_RANK[group.criterion] < _CRITERION_RANK[current.criterion]
                )
            ):
                best[cid] = ValidTarget(id=cid, confidence=conf, criterion=group.criterion)

    excluded = not (set(best) - query.gt_ids)
    targets = tuple(sorted(best.values(), key=lambda t: (-t.confidence, t.id)))
    return MultiTargetRecord(
        query=query,
        valid_targets=targets,
        excluded=excluded,
        reason=(
            "no candidate beyond the original ground truth reached the confidence threshold"
            if excluded
            else None
        ),
    )


def sample_contrastive_triplet(record: MultiTargetRecord, seed: int) -> tuple[str, str, str]:
    """Deterministically pick (target, distractor, distractor) from the pool.

    The pool is sorted by id and Fisher-Yates shuffled with a SplitMix64
    stream seeded by ``seed XOR fnv1a64(query_id)``; the first three
    elements become target and distractors. Requires a pool of at least 3.
    """
    pool = sorted(record.pool_ids)
    if len(pool) < 3:
        raise InsufficientTargets(
            f"query {record.query.query_id!r} has {len(pool)} valid targets, need >= 3"
        )
    rng = SplitMix64(seed ^ fnv1a64(record.query.query_id))
    order = shuffled(pool, rng)
    return order[0], order[1], order[2]


_EXTRA_SENTENCE_RE = re.compile(r"[.!?][\"'”’)\]]*\s+\S")


def require_single_sentence(text: str) -> str:
    """Accept exactly one non-empty sentence, else raise MalformedResponse."""
    stripped = text.strip()
    if not stripped:
        raise MalformedResponse("empty refinement")
    if _EXTRA_SENTENCE_RE.search(stripped):
        raise MalformedResponse(f"expected exactly one sentence: {stripped[:120]!r}")
    return stripped


def rewrite_modification(
    provider: ChatProvider,
    original_captions: Sequence[str],
    attachments: list[ImageAttachment] | None = None,
) -> str:
    """Provider-backed rewrite of the modification text for one triplet."""
    payload = build_refinement_prompt(list(original_captions), attachments)
    raw, _ = provider.chat(payload)
    return require_single_sentence(raw)


@dataclass(frozen=True)
class Stage1Stats:
    total: int
    excluded: int
    mean_pool_size: float

    @property
    def kept(self) -> int:
        return self.total - self.excluded


def stage1_stats(records: Sequence[MultiTargetRecord]) -> Stage1Stats:
    kept = [r for r in records if not r.excluded]
    mean_pool = sum(len(r.valid_targets) for r in kept) / len(kept) if kept else 0.0
    return Stage1Stats(total=len(records), excluded=len(records) - len(kept), mean_pool_size=mean_pool)


def generate_stage1_queries(
    provider: ChatProvider, dataset: Sequence[QueryRecord], domain: str
) -> tuple[dict[str, tuple[str, str]], list[dict]]:
    """Phase one of Stage 1: the two-sentence target description per query.

    Returns per-query (sentence1, composed) plus caption rows (id/text)
    ready for an external text encoder.
    """
    sentences: dict[str, tuple[str, str]] = {}
    captions: list[dict] = []
    for query in dataset:
        payload = build_stage1_query_prompt(list(query.mod_texts), domain)
        raw, _ = provider.chat(payload)
        sentence1, sentence2 = parse_stage1_queries(raw)
        composed = compose_query(sentence1, sentence2)
        sentences[query.query_id] = (sentence1, composed)
        captions.append({"id": f"{query.query_id}::mod", "text": sentence1})
        captions.append({"id": f"{query.query_id}::comp", "text": composed})
    return sentences, captions


def run_stage1(
    provider: ChatProvider,
    embedder: TextEmbedder,
    images: EmbeddingMatrix,
    dataset: Sequence[QueryRecord],
    cfg: Stage1Config,
    domain: str,
    on_captions=None,
) -> tuple[list[MultiTargetRecord], list[dict]]:
    """Full Stage 1 over a dataset: query generation, retrieval, scoring,
    thresholding.

    All sentences are generated up front and handed to ``on_captions``
    before any embedding lookup, so a store-backed run that is missing
    text embeddings still leaves a complete caption export behind for the
    encoder pass.
    """
    sentences, captions = generate_stage1_queries(provider, dataset, domain)
    if on_captions is not None:
        on_captions(captions)

    records: list[MultiTargetRecord] = []
    for query in dataset:
        sentence1, composed = sentences[query.query_id]
        sent1_vec = embedder.vector_for(f"{query.query_id}::mod", sentence1)
        comp_vec = embedder.vector_for(f"{query.query_id}::comp", composed)
        original_target = sorted(query.gt_ids)[0]
        groups = retrieve_candidate_groups(
            images, sent1_vec, comp_vec, original_target, query.reference_id, cfg, query.query_id
        )

        scored = []
        for group in groups:
            if not len(group.candidates):
                scored.append(group)
                continue
            cp = build_confidence_prompt(
                list(group.candidates.ids), query.reference_id, list(query.mod_texts)
            )
            raw_scores, _ = provider.chat(cp)
            scored.append(group.with_confidences(parse_confidence_scores(raw_scores, group.candidates.ids)))

        records.append(select_multi_targets(scored, cfg, query))
    return records, captions


def run_stage2(
    provider: ChatProvider,
    records: Sequence[MultiTargetRecord],
    seed: int,
) -> list[SingleTargetTriplet]:
    """Stage 2 over Stage 1 output. Pools smaller than 3 are skipped (the
    gate), as are excluded queries."""
    triplets: list[SingleTargetTriplet] = []
    for record in records:
        if record.excluded or len(record.valid_targets) < 3:
            continue
        target, d1, d2 = sample_contrastive_triplet(record, seed)
        refined = rewrite_modification(provider, list(record.query.mod_texts))
        triplets.append(
            SingleTargetTriplet(
                query_id=record.query.query_id,
                target_id=target,
                distractor_ids=(d1, d2),
                refined_text=refined,
                seed=seed,
            )
        )
    return triplets


def multi_target_record_from_dict(obj: dict, query: QueryRecord) -> MultiTargetRecord:
    return MultiTargetRecord(
        query=query,
        valid_targets=tuple(
            ValidTarget(id=t["id"], confidence=float(t["confidence"]), criterion=Criterion(t["criterion"]))
            for t in obj["valid_targets"]
        ),
        excluded=bool(obj["excluded"]),
        reason=obj.get("reason"),
    )
