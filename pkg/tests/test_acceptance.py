"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one pass/fail
line per criterion (the -v test lines, plus an explicit ACCEPTANCE line).
"""

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from conftest import completion_body
from softcir.cli import main as cli_main
from softcir.constraints import ConstraintCache, generate_constraints
from softcir.dataset import QueryRecord, write_jsonl
from softcir.errors import AuthError
from softcir.evaluation import (
    ablation,
    evaluate,
    map_at_k,
    recall_at_k,
    recall_subset_at_k,
    sweep_lambda,
)
from softcir.llm import HttpChatProvider, MockChatProvider, ProviderConfig
from softcir.multitarget import HashTextEmbedder, Stage1Config, run_stage1, run_stage2
from softcir.rerank import RerankConfig, Variant, rerank
from softcir.rng import fnv1a64
from softcir.vecstore import RankedList, import_embeddings, similarity_kernel

FIXTURES = Path(__file__).parent / "fixtures"

PASSED = "ACCEPTANCE PASS:"


def _random_query(rng, n, tag):
    ids = [f"{tag}_c{i:04d}" for i in range(n)]
    base = {i: float(rng.uniform(-0.2, 1.0)) for i in ids}
    reward = {i: float(rng.uniform(-1.0, 1.0)) for i in ids}
    penalty = {i: float(rng.uniform(-1.0, 1.0)) for i in ids}
    return base, reward, penalty


def test_c01_formula_oracle():
    """10,000 random score triples and blend weights: the production final
    score equals an independently coded evaluation of the modulation and
    blend formulas, exactly, in under a second."""
    rng = np.random.default_rng(101)
    n_queries, n_candidates = 20, 500  # 10,000 triples
    queries = []
    for q in range(n_queries):
        base, reward, penalty = _random_query(rng, n_candidates, f"q{q}")
        lam = float(rng.uniform(0.0, 1.0))
        queries.append((base, reward, penalty, lam))

    start = time.perf_counter()
    outcomes = [
        rerank(base, reward, penalty, RerankConfig(lam=lam, variant=Variant.FULL))
        for base, reward, penalty, lam in queries
    ]
    elapsed = time.perf_counter() - start

    checked = 0
    for (base, reward, penalty, lam), outcome in zip(queries, outcomes):
        for i, cid in enumerate(outcome.ranked.ids):
            modulated = base[cid] * ((reward[cid] + 1.0 - penalty[cid]) / 2.0)
            expected = (1.0 - lam) * base[cid] + lam * modulated
            assert outcome.ranked.scores[i] == expected
            checked += 1
    assert checked == 10_000
    assert elapsed < 1.0, f"rerank of 10k triples took {elapsed:.3f}s"
    print(f"{PASSED} formula oracle (10,000 triples exact, {elapsed * 1e3:.0f} ms)")


def test_c02_endpoint_identities():
    """Blend weight 0 reproduces the base-only ranking and weight 1 the pure
    modulated ranking, exactly, on 1,000 random queries."""
    rng = np.random.default_rng(202)
    for q in range(1000):
        base, reward, penalty = _random_query(rng, 12, f"q{q}")
        at_zero = rerank(base, reward, penalty, RerankConfig(lam=0.0))
        base_rank = [i for i, _ in sorted(base.items(), key=lambda kv: (-kv[1], kv[0]))]
        assert list(at_zero.ranked.ids) == base_rank

        at_one = rerank(base, reward, penalty, RerankConfig(lam=1.0))
        soft = {i: base[i] * ((reward[i] + 1.0 - penalty[i]) / 2.0) for i in base}
        soft_rank = [i for i, _ in sorted(soft.items(), key=lambda kv: (-kv[1], kv[0]))]
        assert list(at_one.ranked.ids) == soft_rank
    print(f"{PASSED} endpoint identities (1,000 queries, exact)")


def test_c03_monotonicity_and_scaling():
    """With positive base scores and a positive blend weight, raising one
    candidate's reward (or lowering its penalty) never lowers its rank;
    uniformly scaling base scores leaves rank lists and metric values
    bit-identical."""
    rng = np.random.default_rng(303)
    for trial in range(200):
        n = 10
        base = {f"c{i}": float(rng.uniform(0.05, 1.0)) for i in range(n)}
        reward = {f"c{i}": float(rng.uniform(-0.8, 0.8)) for i in range(n)}
        penalty = {f"c{i}": float(rng.uniform(-0.8, 0.8)) for i in range(n)}
        lam = float(rng.uniform(0.05, 1.0))
        cfg = RerankConfig(lam=lam)
        target = f"c{rng.integers(0, n)}"

        before = rerank(base, reward, penalty, cfg).ranked.ids.index(target)
        bumped = dict(reward)
        bumped[target] = min(1.0, bumped[target] + float(rng.uniform(0.01, 0.4)))
        assert rerank(base, bumped, penalty, cfg).ranked.ids.index(target) <= before

        eased = dict(penalty)
        eased[target] = max(-1.0, eased[target] - float(rng.uniform(0.01, 0.4)))
        assert rerank(base, reward, eased, cfg).ranked.ids.index(target) <= before

    # uniform positive scaling of base scores
    dataset = [
        QueryRecord(f"q{i}", "ref", ("m",), frozenset({f"q{i}_c{rng.integers(0, 30):04d}"}))
        for i in range(25)
    ]
    tables = {}
    for record in dataset:
        b, r, p = _random_query(rng, 30, record.query_id)
        b = {i: abs(v) + 0.01 for i, v in b.items()}
        tables[record.query_id] = (b, r, p)
    ks = [1, 5, 10]
    for c in (2.0, 0.0625, 3.141592653589793):
        plain, scaled = {}, {}
        for qid, (b, r, p) in tables.items():
            cfg = RerankConfig(lam=0.7)
            plain[qid] = rerank(b, r, p, cfg, query_id=qid)
            scaled[qid] = rerank({i: c * v for i, v in b.items()}, r, p, cfg, query_id=qid)
            assert scaled[qid].ranked.ids == plain[qid].ranked.ids
        before = evaluate(plain, dataset, ks)
        after = evaluate(scaled, dataset, ks)
        assert [row.value for row in after.rows] == [row.value for row in before.rows]
    print(f"{PASSED} monotonicity and scaling invariance (exact rank/metric equality)")


def test_c04_metric_oracle_exhaustive():
    """All 720 orderings of six candidates, every non-empty ground-truth
    subset: recall, subset recall and AP match brute force exactly,
    including the hand-derived AP@4 = 0.5 case, in under ten seconds."""
    ids = ["a", "b", "c", "d", "e", "f"]
    scores = np.arange(6, 0, -1, dtype=float)

    def brute_recall(order, gt, k):
        return 1 if set(order[:k]) & gt else 0

    def brute_subset(order, subset, gt, k):
        kept = [i for i in order if i in subset]
        return brute_recall(kept, gt, k)

    def brute_ap(order, gt, k):
        total, hits = 0.0, 0
        for i, cid in enumerate(order[:k]):
            if cid in gt:
                hits += 1
                total += hits / (i + 1)
        return total / min(len(gt), k)

    hand = RankedList("hand", ("a", "b", "c", "d"), np.array([4.0, 3.0, 2.0, 1.0]))
    assert map_at_k(hand, {"b", "d"}, 4) == 0.5

    gt_subsets = [
        frozenset(c) for size in range(1, 7) for c in itertools.combinations(ids, size)
    ]
    start = time.perf_counter()
    for perm in itertools.permutations(ids):
        ranked = RankedList("q", perm, scores)
        for gt in gt_subsets:
            for k in (1, 2, 3, 4, 5, 6):
                assert recall_at_k(ranked, gt, k) == brute_recall(perm, gt, k)
                assert map_at_k(ranked, gt, k) == brute_ap(perm, gt, k)
            subset = gt | {perm[0]}
            for k in (1, 2, 3):
                assert recall_subset_at_k(ranked, subset, gt, k) == brute_subset(perm, subset, gt, k)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"exhaustive metric oracle took {elapsed:.2f}s"
    print(f"{PASSED} metric oracle (720 x 63 exhaustive, {elapsed:.2f} s)")


def test_c05_ablation_coherence():
    """The base-only ablation row equals the weight-0 sweep row exactly, the
    four variant rows come out in fixed order, and each variant's scores
    match its formula."""
    rng = np.random.default_rng(505)
    dataset = []
    base, reward, penalty = {}, {}, {}
    for q in range(12):
        qid = f"q{q}"
        b, r, p = _random_query(rng, 9, qid)
        base[qid], reward[qid], penalty[qid] = b, r, p
        dataset.append(QueryRecord(qid, "ref", ("m",), frozenset({sorted(b)[0]})))
    ks = [1, 3, 5]

    sweep = sweep_lambda(dataset, base, reward, penalty, [0.0], ks)
    reports = ablation(dataset, base, reward, penalty, lam=0.8, ks=ks)
    assert [row.value for row in reports[0].rows] == [row.value for row in sweep[0].rows]
    assert [r.rows[0].variant for r in reports] == [
        "base_only", "reward_only", "penalty_only", "full",
    ]

    # variant formulas as oracle, checked through rank-identical evaluation
    formulas = {
        "reward_only": lambda b, r, p: b * r,
        "penalty_only": lambda b, r, p: b * (1.0 - p),
        "full": lambda b, r, p: b * ((r + 1.0 - p) / 2.0),
    }
    for report in reports[1:]:
        name = report.rows[0].variant
        oracle_outcomes = {}
        for record in dataset:
            qid = record.query_id
            blended = {
                i: (1.0 - 0.8) * base[qid][i] + 0.8 * formulas[name](base[qid][i], reward[qid][i], penalty[qid][i])
                for i in base[qid]
            }
            order = sorted(blended.items(), key=lambda kv: (-kv[1], kv[0]))
            oracle_outcomes[qid] = RankedList(
                qid, tuple(i for i, _ in order), np.array([s for _, s in order])
            )
        want = evaluate(oracle_outcomes, dataset, ks, lam=0.8, variant=name)
        assert [row.value for row in report.rows] == [row.value for row in want.rows]
    print(f"{PASSED} ablation coherence (fixed order, formula oracle)")


def test_c06_stage1_rule_conformance(capsys):
    """Scripted mock scorer over 200 synthetic queries: selected pools equal
    the threshold filter-union oracle, exclusion fires exactly when no new
    candidate passes, and the stage-1 defaults are surfaced in --help."""
    rng = np.random.default_rng(606)
    image_ids = [f"img_{i:03d}" for i in range(30)]
    store = import_embeddings(
        [(i, rng.normal(size=16)) for i in image_ids], normalize=True
    )
    dataset = []
    for q in range(200):
        gt = image_ids[int(rng.integers(0, len(image_ids)))]
        ref = image_ids[int(rng.integers(0, len(image_ids)))]
        dataset.append(
            QueryRecord(f"q{q:03d}", ref, (f"modify {q:03d}",), frozenset({gt}))
        )

    def confidence(qid: str, cid: str) -> float:
        return (fnv1a64(f"{qid}|{cid}") % 1001) / 1000.0

    scored_union: dict[str, set] = {}

    def responder(payload):
        text = payload.text
        if "two-sentence description" in text:
            tag = text.split("modify ", 1)[1][:3]
            return f"Sentence one about {tag}.\nSentence two."
        if "confidence score" in text:
            qid = "q" + text.split("modify ", 1)[1][:3]
            names = json.loads(text.split("- candidate_images: ", 1)[1].splitlines()[0])
            scored_union.setdefault(qid, set()).update(names)
            return json.dumps({cid: confidence(qid, cid) for cid in names})
        raise AssertionError("unexpected prompt")

    cfg = Stage1Config()  # defaults: k=10, tau=0.85
    assert cfg.k == 10 and cfg.tau == 0.85
    records, _ = run_stage1(
        MockChatProvider(responder), HashTextEmbedder(16), store, dataset, cfg, "generic"
    )
    assert len(records) == 200
    for record in records:
        qid = record.query.query_id
        passers = {c for c in scored_union[qid] if confidence(qid, c) >= cfg.tau}
        oracle_pool = passers | record.query.gt_ids
        assert set(record.pool_ids) == oracle_pool
        assert record.excluded == (not (passers - record.query.gt_ids))

    assert cli_main(["mt", "stage1", "--help"]) == 0
    help_text = " ".join(capsys.readouterr().out.split())
    assert "[default: 0.85]" in help_text and "[default: 10]" in help_text
    excluded = sum(r.excluded for r in records)
    print(f"{PASSED} stage-1 rule conformance (200 queries, {excluded} excluded, defaults surfaced)")


def test_c07_stage2_gate_and_determinism(tmp_path):
    """No triplet for pools smaller than three; a fixed seed reproduces
    byte-identical stage-2 output across two full runs."""
    rng = np.random.default_rng(707)
    image_ids = [f"img_{i:02d}" for i in range(12)]
    store = import_embeddings([(i, rng.normal(size=8)) for i in image_ids], normalize=True)
    dataset = [
        QueryRecord(f"q{q}", image_ids[-1], (f"mod {q}",), frozenset({image_ids[q]}))
        for q in range(6)
    ]

    def responder(payload):
        text = payload.text
        if "two-sentence description" in text:
            return "One sentence.\nAnother."
        if "confidence score" in text:
            names = json.loads(text.split("- candidate_images: ", 1)[1].splitlines()[0])
            # queries 0-2 get rich pools, 3-5 get nothing new
            rich = any(f"mod {q}" in text for q in (0, 1, 2))
            return json.dumps({cid: (0.95 if rich else 0.1) for cid in names})
        return "A refined caption."

    def run_once(out_path: Path) -> bytes:
        provider = MockChatProvider(responder)
        records, _ = run_stage1(
            provider, HashTextEmbedder(8), store, dataset, Stage1Config(k=5), "generic"
        )
        small = [r for r in records if len(r.valid_targets) < 3]
        assert small, "fixture must exercise the gate"
        triplets = run_stage2(provider, records, seed=20260809)
        assert {t.query_id for t in triplets}.isdisjoint({r.query.query_id for r in small})
        write_jsonl(out_path, [t.as_dict() for t in sorted(triplets, key=lambda t: t.query_id)])
        return out_path.read_bytes()

    first = run_once(tmp_path / "run1.jsonl")
    second = run_once(tmp_path / "run2.jsonl")
    assert first == second and first
    print(f"{PASSED} stage-2 gate and byte-identical determinism")


def test_c08_end_to_end_synthetic_win(tmp_path):
    """On the committed 8-dim corpus, full reweighting at blend 1.0 ranks
    the true target first while the base-only ranking has it second."""
    e2e = FIXTURES / "e2e"
    for lam, variant, want_first in (
        ("1", "full", "img_target"),
        ("0", "base_only", "img_distract"),
    ):
        out = tmp_path / f"ranked_{variant}.jsonl"
        code = cli_main(
            [
                "rerank", "--base-scores", str(e2e / "base_scores.jsonl"),
                "--images", str(e2e / "images.sftemb"), "--texts", str(e2e / "texts.sftemb"),
                "--constraints", str(e2e / "constraints_cache.jsonl"),
                "--lambda", lam, "--variant", variant, "--out", str(out),
            ]
        )
        assert code == 0
        ranking = [e["id"] for e in json.loads(out.read_text().splitlines()[0])["ranking"]]
        assert ranking[0] == want_first
        if variant == "base_only":
            assert ranking[1] == "img_target"
    print(f"{PASSED} end-to-end synthetic win (target first under full reweighting)")


def test_c09_transport_contract(fake_llm_server, tmp_path):
    """Against a local fake server: exponential backoff on 429/5xx, fail
    fast on 401, in-flight bound respected, cache eliminates repeat calls."""
    from softcir.prompts import build_dual_constraint_prompt

    url, state = fake_llm_server
    constraint_json = json.dumps(
        {
            "keep": ["shape"], "add": ["red"], "remove": ["blue"],
            "prescriptive_query": "a red shape", "proscriptive_query": "a blue shape",
        }
    )

    # backoff on 429 and 5xx
    sleeps = []
    provider = HttpChatProvider(
        ProviderConfig(base_url=url, max_retries=3, backoff_base_s=0.5),
        api_key="k",
        sleeper=sleeps.append,
    )
    state.script.extend([(429, {}), (500, {}), (200, completion_body(constraint_json))])
    cache = ConstraintCache(tmp_path / "cache.jsonl")
    result = generate_constraints(provider, "q1", "make it red", cache, model="m")
    assert result.prescriptive == "a red shape"
    assert len(sleeps) == 2
    assert all(0.0 <= s <= 0.5 * 2**i for i, s in enumerate(sleeps))

    # cache eliminates all repeat calls
    calls_before = len(state.requests)
    again = generate_constraints(provider, "q1", "make it red", cache, model="m")
    assert again == result
    assert len(state.requests) == calls_before

    # fail fast on 401
    state.script.append((401, {}))
    with pytest.raises(AuthError):
        provider.chat(build_dual_constraint_prompt("other text"))
    assert len(state.requests) == calls_before + 1

    # in-flight bound under heavy parallel load
    state.delay_s = 0.04
    bounded = HttpChatProvider(
        ProviderConfig(base_url=url, max_retries=0, max_concurrent=3, timeout_s=10),
        api_key="k",
    )
    state.high_water = 0
    with ThreadPoolExecutor(max_workers=10) as pool:
        futures = [
            pool.submit(bounded.chat, build_dual_constraint_prompt(f"text {i}"))
            for i in range(10)
        ]
        for f in futures:
            f.result()
    assert state.high_water <= 3
    print(f"{PASSED} transport contract (backoff, 401 fast-fail, bound {state.high_water} <= 3, cache)")


def test_c10_performance():
    """1,000 queries x 5,000 candidates re-rank in under ten seconds
    single-threaded; the similarity kernel reads embeddings at 2 GB/s or
    better."""
    rng = np.random.default_rng(1010)
    ids = [f"c{i:04d}" for i in range(5000)]
    cfg = RerankConfig(lam=0.7)

    total = 0.0
    for _ in range(1000):
        values = rng.uniform(-1.0, 1.0, size=(3, 5000))
        base = dict(zip(ids, values[0].tolist()))
        reward = dict(zip(ids, values[1].tolist()))
        penalty = dict(zip(ids, values[2].tolist()))
        start = time.perf_counter()
        rerank(base, reward, penalty, cfg)
        total += time.perf_counter() - start
    assert total < 10.0, f"1000x5000 rerank took {total:.2f}s"

    store = import_embeddings(
        ((f"v{i}", row) for i, row in enumerate(rng.normal(size=(100_000, 512)).astype(np.float32))),
        normalize=True,
    )
    query = store.data[0]
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        similarity_kernel(store, query)
        best = min(best, time.perf_counter() - start)
    throughput = store.data.nbytes / best / 1e9
    assert throughput >= 2.0, f"similarity kernel at {throughput:.2f} GB/s"
    print(
        f"{PASSED} performance (rerank {total:.2f}s / 10s budget, kernel {throughput:.1f} GB/s)"
    )
