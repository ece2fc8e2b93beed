"""Recall@K, subset Recall@K, mAP@K, and the sweep/ablation report runners.

Metric kernels are deliberately plain Python with left-to-right
accumulation: the numbers are tiny per query and bit-stable results matter
more than vectorization (report CSVs are compared byte-for-byte against
oracle-generated golden files).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .dataset import QueryRecord
from .errors import EmptySubsetIntersection, MissingQueryOutcome
from .rerank import RerankConfig, RerankOutcome, Variant, rerank
from .vecstore import RankedList

CSV_HEADER = "metric,k,lambda,variant,value,n_queries"


def recall_at_k(ranked: RankedList, gt: frozenset[str] | set[str], k: int) -> int:
    """1 iff any ground-truth id appears among the first min(k, len) entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(id_ in gt for id_ in ranked.ids[:k]))


def recall_subset_at_k(
    ranked: RankedList, subset: frozenset[str] | set[str], gt: frozenset[str] | set[str], k: int
) -> int:
    """Recall after restricting the ranking to ``subset``, order preserved."""
    filtered = [id_ for id_ in ranked.ids if id_ in subset]
    if not filtered:
        raise EmptySubsetIntersection(
            f"subset shares no candidate with ranking {ranked.query_id!r}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(id_ in gt for id_ in filtered[:k]))


def map_at_k(ranked: RankedList, gt: frozenset[str] | set[str], k: int) -> float:
    """AP@K with the multi-target normalizer min(|gt|, K).

    AP@K = (1 / min(|gt|, K)) * sum_i Precision@i * rel(i) over the first
    min(k, len) entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gt:
        raise ValueError("ground truth must be non-empty")
    hits = 0
    total = 0.0
    for i, id_ in enumerate(ranked.ids[:k]):
        if id_ in gt:
            hits += 1
            total += hits / (i + 1)
    return total / min(len(gt), k)


@dataclass(frozen=True)
class ReportRow:
    metric: str
    k: int
    lam: float | None
    variant: str | None
    value: float
    n_queries: int


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ReportRow, ...]
    n_queries: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_queries <= 0:
            raise ValueError("report needs at least one query")
        for row in self.rows:
            if not 0.0 <= row.value <= 1.0:
                raise ValueError(f"{row.metric}@{row.k} = {row.value} outside [0, 1]")

    def value(self, metric: str, k: int) -> float:
        for row in self.rows:
            if row.metric == metric and row.k == k:
                return row.value
        raise KeyError((metric, k))


def _as_ranked(outcome: RankedList | RerankOutcome) -> RankedList:
    return outcome.ranked if isinstance(outcome, RerankOutcome) else outcome


def evaluate(
    outcomes: Mapping[str, RankedList | RerankOutcome],
    dataset: Sequence[QueryRecord],
    ks: Sequence[int],
    lam: float | None = None,
    variant: str | None = None,
    extra_diagnostics: dict | None = None,
) -> EvalReport:
    """Aggregate recall/subset-recall/mAP over a dataset, in dataset order.

    Queries whose ground truth never appears in the candidate pool score 0
    and stay in the denominator; they are tallied in the diagnostics instead
    of being dropped.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    missing = [r.query_id for r in dataset if r.query_id not in outcomes]
    if missing:
        raise MissingQueryOutcome(f"no outcome for queries: {missing[:5]}")

    gt_absent = 0
    negative_base = 0
    recall_totals = {k: 0 for k in ks}
    map_totals = {k: 0.0 for k in ks}
    subset_totals = {k: 0 for k in ks}
    subset_n = 0

    for record in dataset:
        outcome = outcomes[record.query_id]
        ranked = _as_ranked(outcome)
        if isinstance(outcome, RerankOutcome):
            negative_base += outcome.negative_base_count
        if not (record.gt_ids & set(ranked.ids)):
            gt_absent += 1
        for k in ks:
            recall_totals[k] += recall_at_k(ranked, record.gt_ids, k)
            map_totals[k] += map_at_k(ranked, record.gt_ids, k)
        if record.subset_ids is not None:
            subset_n += 1
            for k in ks:
                subset_totals[k] += recall_subset_at_k(ranked, record.subset_ids, record.gt_ids, k)

    n = len(dataset)
    rows: list[ReportRow] = []
    for k in ks:
        rows.append(ReportRow("recall", k, lam, variant, recall_totals[k] / n, n))
    if subset_n:
        for k in ks:
            rows.append(
                ReportRow("recall_subset", k, lam, variant, subset_totals[k] / subset_n, subset_n)
            )
    for k in ks:
        rows.append(ReportRow("map", k, lam, variant, map_totals[k] / n, n))

    diagnostics = {"gt_absent_from_pool": gt_absent, "negative_base_count": negative_base}
    diagnostics.update(extra_diagnostics or {})
    return EvalReport(rows=tuple(rows), n_queries=n, diagnostics=diagnostics)


def rerank_all(
    base: Mapping[str, dict[str, float]],
    reward: Mapping[str, dict[str, float]],
    penalty: Mapping[str, dict[str, float]],
    cfg: RerankConfig,
    jobs: int = 1,
) -> dict[str, RerankOutcome]:
    """Re-rank every query in ``base`` under one config.

    ``jobs`` > 1 fans queries out over a thread pool; results are identical
    to the sequential path (re-ranking is pure), just faster on large runs.
    """
    qids = list(base)
    if jobs > 1 and len(qids) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = pool.map(
                lambda qid: rerank(base[qid], reward[qid], penalty[qid], cfg, query_id=qid),
                qids,
            )
            return dict(zip(qids, outcomes))
    return {
        qid: rerank(base[qid], reward[qid], penalty[qid], cfg, query_id=qid) for qid in qids
    }


def sweep_lambda(
    dataset: Sequence[QueryRecord],
    base: Mapping[str, dict[str, float]],
    reward: Mapping[str, dict[str, float]],
    penalty: Mapping[str, dict[str, float]],
    grid: Sequence[float],
    ks: Sequence[int],
    variant: Variant = Variant.FULL,
    jobs: int = 1,
) -> list[EvalReport]:
    """One evaluation per blend weight, in grid order (duplicates included)."""
    reports = []
    for lam in grid:
        cfg = RerankConfig(lam=lam, variant=variant)
        outcomes = rerank_all(base, reward, penalty, cfg, jobs=jobs)
        reports.append(evaluate(outcomes, dataset, ks, lam=lam, variant=variant.value))
    return reports


def ablation(
    dataset: Sequence[QueryRecord],
    base: Mapping[str, dict[str, float]],
    reward: Mapping[str, dict[str, float]],
    penalty: Mapping[str, dict[str, float]],
    lam: float,
    ks: Sequence[int],
    variants: Sequence[Variant] | None = None,
    jobs: int = 1,
) -> list[EvalReport]:
    """One evaluation per constraint variant, in the fixed emission order."""
    from .rerank import VARIANT_ORDER

    reports = []
    for variant in variants or VARIANT_ORDER:
        cfg = RerankConfig(lam=lam, variant=variant)
        outcomes = rerank_all(base, reward, penalty, cfg, jobs=jobs)
        reports.append(evaluate(outcomes, dataset, ks, lam=lam, variant=variant.value))
    return reports


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def reports_to_csv(reports: Iterable[EvalReport]) -> str:
    """Fixed-column CSV (metric,k,lambda,variant,value,n_queries), LF endings."""
    lines = [CSV_HEADER]
    for report in reports:
        for row in report.rows:
            lines.append(
                ",".join(
                    (
                        row.metric,
                        str(row.k),
                        _csv_cell(row.lam),
                        _csv_cell(row.variant),
                        repr(row.value),
                        str(row.n_queries),
                    )
                )
            )
    return "\n".join(lines) + "\n"


def reports_to_text(reports: Iterable[EvalReport]) -> str:
    """Human-readable table with 4-decimal values."""
    lines = [f"{'metric':<15}{'k':>4}{'lambda':>9}{'variant':>14}{'value':>10}{'n':>7}"]
    for report in reports:
        for row in report.rows:
            lam = f"{row.lam:.2f}" if row.lam is not None else "-"
            lines.append(
                f"{row.metric:<15}{row.k:>4}{lam:>9}{(row.variant or '-'):>14}"
                f"{row.value:>10.4f}{row.n_queries:>7}"
            )
    return "\n".join(lines) + "\n"


def reports_to_json(reports: Iterable[EvalReport]) -> list[dict]:
    out = []
    for report in reports:
        out.append(
            {
                "rows": [
                    {
                        "metric": r.metric,
                        "k": r.k,
                        "lambda": r.lam,
                        "variant": r.variant,
                        "value": r.value,
                        "n_queries": r.n_queries,
                    }
                    for r in report.rows
                ],
                "n_queries": report.n_queries,
                "diagnostics": report.diagnostics,
            }
        )
    return out
