"""Soft-constraint score modulation and candidate re-ranking.

The core identity: a candidate's base similarity is multiplied by
``(s_reward + 1 - s_penalty) / 2``, a factor in [-0.5, 1.5] for cosine
inputs that rewards agreement with the prescriptive caption and penalizes
agreement with the proscriptive one. The modulated score is then blended
back with the base score through a convex weight ``lam``. Neither score is
clamped; out-of-[0,1] values are legitimate and surface in reports.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .errors import IdSetMismatch, LambdaOutOfRange, NonFiniteValue
from .vecstore import RankedList


class Variant(str, enum.Enum):
    """Which constraint terms participate in the modulation factor."""

    BASE_ONLY = "base_only"
    REWARD_ONLY = "reward_only"
    PENALTY_ONLY = "penalty_only"
    FULL = "full"


# Fixed emission order for ablation reports.
VARIANT_ORDER = (Variant.BASE_ONLY, Variant.REWARD_ONLY, Variant.PENALTY_ONLY, Variant.FULL)


@dataclass(frozen=True)
class ScoreTriple:
    """Per-candidate similarities: base retriever, prescriptive, proscriptive."""

    s_base: float
    s_reward: float
    s_penalty: float

    def __post_init__(self) -> None:
        for name in ("s_base", "s_reward", "s_penalty"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteValue(f"{name} is not finite")


@dataclass(frozen=True)
class RerankConfig:
    lam: float = 1.0
    variant: Variant = Variant.FULL

    def __post_init__(self) -> None:
        _check_lambda(self.lam)


@dataclass(frozen=True, eq=False)
class RerankOutcome:
    """Final ranking plus the per-candidate score breakdown behind it.

    Breakdown arrays are aligned with ``ranked.ids``. ``negative_base_count``
    tallies candidates whose raw base score was negative; those pass through
    the modulation unmodified, which inverts the reward/penalty direction.
    """

    ranked: RankedList
    base: np.ndarray
    reward: np.ndarray
    penalty: np.ndarray
    soft: np.ndarray
    negative_base_count: int
    config: RerankConfig

    def breakdown(self, candidate_id: str) -> dict[str, float]:
        i = self.ranked.ids.index(candidate_id)
        return {
            "base": float(self.base[i]),
            "reward": float(self.reward[i]),
            "penalty": float(self.penalty[i]),
            "soft": float(self.soft[i]),
            "final": float(self.ranked.scores[i]),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RerankOutcome):
            return NotImplemented
        return (
            self.ranked == other.ranked
            and np.array_equal(self.base, other.base)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.penalty, other.penalty)
            and np.array_equal(self.soft, other.soft)
            and self.negative_base_count == other.negative_base_count
            and self.config == other.config
        )


def _check_lambda(lam: float) -> None:
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {lam!r}")


def soft_score(triple: ScoreTriple) -> float:
    """Modulated score: s_base * (s_reward + 1 - s_penalty) / 2. No clamping."""
    return triple.s_base * ((triple.s_reward + 1.0 - triple.s_penalty) / 2.0)


def fuse(s_base: float, s_soft: float, lam: float) -> float:
    """Convex blend (1 - lam) * s_base + lam * s_soft.

    The endpoints are exact: lam=0 returns s_base bitwise, lam=1 returns
    s_soft bitwise.
    """
    _check_lambda(lam)
    return (1.0 - lam) * s_base + lam * s_soft


def variant_score(triple: ScoreTriple, variant: Variant) -> float:
    """The modulated score fed to ``fuse`` under an ablation variant."""
    if variant is Variant.FULL:
        return soft_score(triple)
    if variant is Variant.REWARD_ONLY:
        return triple.s_base * triple.s_reward
    if variant is Variant.PENALTY_ONLY:
        return triple.s_base * (1.0 - triple.s_penalty)
    if variant is Variant.BASE_ONLY:
        return triple.s_base
    raise ValueError(f"unknown variant {variant!r}")


def _final_scores(
    base: np.ndarray, reward: np.ndarray, penalty: np.ndarray, lam: float, variant: Variant
) -> np.ndarray:
    """Vectorized fuse(variant_score(...)) with the same operation order as
    the scalar path, so per-candidate results agree bit for bit."""
    if variant is Variant.BASE_ONLY:
        # (1-lam)*b + lam*b equals b in real arithmetic; computing it
        # directly keeps the base ranking bit-exact for every lam.
        return base.copy()
    if variant is Variant.FULL:
        soft = base * ((reward + 1.0 - penalty) / 2.0)
    elif variant is Variant.REWARD_ONLY:
        soft = base * reward
    else:
        soft = base * (1.0 - penalty)
    return (1.0 - lam) * base + lam * soft


def rerank(
    base_scores: dict[str, float],
    reward_scores: dict[str, float],
    penalty_scores: dict[str, float],
    cfg: RerankConfig,
    query_id: str = "",
) -> RerankOutcome:
    """Re-rank one query's candidates by the fused score.

    The three maps must share an identical id set. Ordering is final score
    descending with ties broken by ascending id; the full per-candidate
    breakdown is kept for reports. Pure function: identical inputs produce
    identical outcomes.
    """
    if not (base_scores.keys() == reward_scores.keys() == penalty_scores.keys()):
        raise IdSetMismatch(f"score maps for query {query_id!r} disagree on candidate ids")
    if not base_scores:
        raise IdSetMismatch(f"no candidates for query {query_id!r}")

    n = len(base_scores)
    ids = sorted(base_scores)
    base = np.fromiter(map(base_scores.__getitem__, ids), dtype=np.float64, count=n)
    reward = np.fromiter(map(reward_scores.__getitem__, ids), dtype=np.float64, count=n)
    penalty = np.fromiter(map(penalty_scores.__getitem__, ids), dtype=np.float64, count=n)
    for name, arr in (("base", base), ("reward", reward), ("penalty", penalty)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"{name} scores for query {query_id!r} contain NaN/Inf")

    final = _final_scores(base, reward, penalty, cfg.lam, cfg.variant)
    if cfg.variant is Variant.FULL:
        soft = base * ((reward + 1.0 - penalty) / 2.0)
    elif cfg.variant is Variant.REWARD_ONLY:
        soft = base * reward
    elif cfg.variant is Variant.PENALTY_ONLY:
        soft = base * (1.0 - penalty)
    else:
        soft = base.copy()

    # ids are pre-sorted ascending, so a stable sort on -final yields the
    # (score desc, id asc) order without a lexsort over strings.
    order = np.argsort(-final, kind="stable")
    ids_arr = np.array(ids, dtype=object)[order]
    ranked = RankedList(query_id=query_id, ids=tuple(ids_arr.tolist()), scores=final[order])
    return RerankOutcome(
        ranked=ranked,
        base=base[order],
        reward=reward[order],
        penalty=penalty[order],
        soft=soft[order],
        negative_base_count=int(np.sum(base < 0.0)),
        config=cfg,
    )


def minmax_normalize(scores: dict[str, float]) -> dict[str, float]:
    """Per-query min-max rescaling of base scores to [0, 1].

    A degenerate span (all scores equal) maps to the constant 0.5 so the
    soft modulation factor alone orders candidates.
    """
    values = list(scores.values())
    lo, hi = min(values), max(values)
    if hi == lo:
        return {k: 0.5 for k in scores}
    span = hi - lo
    return {k: (v - lo) / span for k, v in scores.items()}


class SoftReranker(BaseEstimator, TransformerMixin):
    """Sklearn-style transformer over per-candidate score triples.

    Input is an (n, 3) array with columns [s_base, s_reward, s_penalty];
    ``transform`` returns the (n, 1) fused final scores. The estimator is
    stateless (nothing is learned), so ``fit`` only validates; it exists so
    the scorer composes with pipelines and ``get_params`` tooling.
    """

    def __init__(self, lam: float = 1.0, variant: str = "full"):
        self.lam = lam
        self.variant = variant

    def _validate(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64, ensure_min_features=3)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns [base, reward, penalty], got {X.shape[1]}")
        _check_lambda(self.lam)
        Variant(self.variant)
        return X

    def fit(self, X, y=None):
        self._validate(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X) -> np.ndarray:
        X = self._validate(X)
        final = _final_scores(X[:, 0], X[:, 1], X[:, 2], self.lam, Variant(self.variant))
        return final.reshape(-1, 1)

    def score_candidates(self, X) -> np.ndarray:
        """Flat (n,) convenience view of ``transform``."""
        return self.transform(X).ravel()
