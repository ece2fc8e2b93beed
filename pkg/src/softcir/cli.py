"""Single-binary command line for the whole toolkit.

Exit codes: 0 success, 1 validation/usage error, 2 provider failure,
3 I/O or file-format error. Diagnostics go to stderr; data goes to files
or stdout. Config precedence: CLI flag > environment variable > TOML
config file (subcommand-scoped tables) > built-in default, and every run
writes a manifest recording the resolved values and their sources.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .constraints import ConstraintCache, generate_constraints
from .dataset import (
    iter_jsonl,
    load_dataset,
    load_score_file,
    write_jsonl,
)
from .errors import (
    FormatError,
    MissingEmbedding,
    ProviderError,
    SoftCirError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    ablation,
    evaluate,
    rerank_all,
    reports_to_csv,
    reports_to_json,
    reports_to_text,
    sweep_lambda,
)
from .llm import HttpChatProvider, MockChatProvider, ProviderConfig
from .manifest import RunManifest
from .multitarget import (
    HashTextEmbedder,
    Stage1Config,
    StoreTextEmbedder,
    multi_target_record_from_dict,
    run_stage1,
    run_stage2,
    stage1_stats,
)
from .prompts import ImageAttachment
from .rerank import RerankConfig, Variant
from .vecstore import RankedList, import_embeddings, read_store, write_store

log = logging.getLogger("softcir")

# Default blend weight by base-score source style: generative-query systems
# work best fully reweighted, inversion-style systems with a light touch.
LAMBDA_BY_STYLE = {"generative-query": 1.0, "inversion": 0.2}

_SOURCE_NAMES = {
    "COMMANDLINE": "cli",
    "ENVIRONMENT": "env",
    "DEFAULT_MAP": "config",
    "DEFAULT": "default",
}


def _record_params(ctx: click.Context, manifest: RunManifest) -> None:
    for name, value in ctx.params.items():
        source = ctx.get_parameter_source(name)
        source_name = _SOURCE_NAMES.get(source.name if source else "DEFAULT", "default")
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        manifest.record_config(name, value, source_name)


def _float_list(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise click.UsageError(f"expected a comma-separated float list, got {raw!r}") from exc


def _int_list(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise click.UsageError(f"expected a comma-separated int list, got {raw!r}") from exc


@click.group(name="softcir")
@click.version_option(version=__version__)
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="TOML config file; tables named after subcommands set option defaults.",
)
@click.pass_context
def cli(ctx: click.Context, config: Path | None) -> None:
    """Soft-constraint re-ranking toolkit for composed image retrieval."""
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    if config is not None:
        with open(config, "rb") as fh:
            ctx.default_map = tomllib.load(fh)


# ---------------------------------------------------------------------------
# embed


@cli.group()
def embed() -> None:
    """Embedding store utilities."""


@embed.command("import")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSONL rows {id, vector}.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Output embedding store (.sftemb plus .ids.json sidecar).")
@click.option("--no-normalize", is_flag=True, default=False, show_default=True, help="Keep raw vectors instead of unit-normalizing rows at import.")
@click.pass_context
def embed_import(ctx: click.Context, input_path: Path, out: Path, no_normalize: bool) -> None:
    """Convert (id, vector) JSONL rows into a binary embedding store."""
    manifest = RunManifest("embed import", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(input_path)

    rows = []
    for lineno, obj in iter_jsonl(input_path):
        if "id" not in obj or "vector" not in obj:
            raise ValidationError(f"{input_path}:{lineno}: rows need 'id' and 'vector'")
        rows.append((str(obj["id"]), obj["vector"]))
    store = import_embeddings(rows, normalize=not no_normalize)
    write_store(out, store)
    manifest.write(out)
    log.info("wrote %d rows of dim %d to %s", len(store), store.dim, out)


# ---------------------------------------------------------------------------
# providers (shared options)


def provider_options(fn):
    fn = click.option("--provider", default="http", show_default=True, help="'http' for a live endpoint, or 'mock:<file.json>' mapping prompt substrings to scripted responses.")(fn)
    fn = click.option("--model", default="gpt-4o", show_default=True, help="Model name sent with every request.")(fn)
    fn = click.option("--base-url", default="", envvar="SOFT_LLM_BASE_URL", help="Chat-completions base URL [env: SOFT_LLM_BASE_URL].")(fn)
    fn = click.option("--temperature", default=0.0, show_default=True, help="Sampling temperature.")(fn)
    fn = click.option("--retries", default=3, show_default=True, help="Retry budget for rate limits, server errors, and malformed responses.")(fn)
    fn = click.option("--timeout", "timeout_s", default=60.0, show_default=True, help="Per-attempt timeout in seconds.")(fn)
    fn = click.option("--concurrency", default=4, show_default=True, help="Maximum in-flight provider requests.")(fn)
    return fn


def _build_provider(provider: str, model: str, base_url: str, temperature: float, retries: int, timeout_s: float, concurrency: int):
    cfg = ProviderConfig(
        base_url=base_url,
        model=model,
        temperature=temperature,
        max_retries=retries,
        timeout_s=timeout_s,
        max_concurrent=concurrency,
    )
    if provider == "http":
        return HttpChatProvider(cfg), cfg
    if provider.startswith("mock:"):
        table_path = provider.split(":", 1)[1]
        with open(table_path, encoding="utf-8") as fh:
            table = json.load(fh)
        default = table.pop("__default__", None)
        return MockChatProvider.from_table(table, default=default), cfg
    raise click.UsageError(f"unknown provider {provider!r} (use 'http' or 'mock:<file>')")


# ---------------------------------------------------------------------------
# constraints


@cli.group()
def constraints() -> None:
    """Dual textual constraint extraction."""


@constraints.command("generate")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL.")
@click.option("--cache", "cache_path", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Append-only constraint cache JSONL (created if missing).")
@click.option("--images-root", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None, help="Directory of reference images to attach (png/jpg by id).")
@click.option("--ref-captions", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="JSONL {id, text} reference captions for the text-only fallback.")
@click.option("--captions-out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also export generated constraint captions as JSONL {id, text} for an external text encoder.")
@provider_options
@click.pass_context
def constraints_generate(
    ctx: click.Context,
    dataset_path: Path,
    cache_path: Path,
    images_root: Path | None,
    ref_captions: Path | None,
    captions_out: Path | None,
    provider: str,
    model: str,
    base_url: str,
    temperature: float,
    retries: int,
    timeout_s: float,
    concurrency: int,
) -> None:
    """Generate (or load from cache) dual constraints for every query."""
    manifest = RunManifest("constraints generate", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(dataset_path)

    dataset = load_dataset(dataset_path)
    chat, provider_cfg = _build_provider(provider, model, base_url, temperature, retries, timeout_s, concurrency)
    cache = ConstraintCache(cache_path)

    captions_table = {}
    if ref_captions is not None:
        for _, obj in iter_jsonl(ref_captions):
            captions_table[str(obj.get("id", ""))] = str(obj.get("text", ""))

    generated = 0
    empty_prescriptive = 0
    empty_proscriptive = 0
    caption_rows = []
    for record in dataset:
        attachment = _reference_attachment(record.reference_id, images_root, captions_table)
        mod_text = " and ".join(record.mod_texts)
        result = generate_constraints(
            chat,
            record.query_id,
            mod_text,
            cache,
            model=model,
            image_ref=attachment,
            max_retries=retries,
        )
        generated += 1
        empty_prescriptive += int(not result.prescriptive)
        empty_proscriptive += int(not result.proscriptive)
        if result.prescriptive:
            caption_rows.append({"id": f"{record.query_id}::prescriptive", "text": result.prescriptive})
        if result.proscriptive:
            caption_rows.append({"id": f"{record.query_id}::proscriptive", "text": result.proscriptive})

    if captions_out is not None:
        write_jsonl(captions_out, sorted(caption_rows, key=lambda r: r["id"]))
        log.info("exported %d constraint captions to %s", len(caption_rows), captions_out)

    usage = getattr(chat, "total_usage", None)
    if usage is not None:
        cost = usage.cost(provider_cfg)
        manifest.record_provider(model, usage.as_dict(), cost)
        log.info(
            "provider usage: %d calls, %d prompt + %d completion tokens, est. $%.4f",
            usage.calls, usage.prompt_tokens, usage.completion_tokens, cost,
        )
    manifest.write(cache_path)
    log.info(
        "constraints ready for %d queries (%d empty prescriptive, %d empty proscriptive)",
        generated, empty_prescriptive, empty_proscriptive,
    )


def _reference_attachment(reference_id: str, images_root: Path | None, captions: dict[str, str]) -> ImageAttachment | None:
    if images_root is not None:
        for ext in (".png", ".jpg", ".jpeg", ".webp"):
            candidate = images_root / f"{reference_id}{ext}"
            if candidate.exists():
                return ImageAttachment(path=candidate)
    if reference_id in captions:
        return ImageAttachment(caption=captions[reference_id])
    return None


# ---------------------------------------------------------------------------
# scoring inputs shared by rerank / sweep / ablation


def scoring_options(fn):
    fn = click.option("--base-scores", "base_scores_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Base retriever scores JSONL: {query_id, scores:{id: s}}.")(fn)
    fn = click.option("--images", "images_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Candidate image embedding store.")(fn)
    fn = click.option("--texts", "texts_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Constraint text embedding store (<query_id>::prescriptive / ::proscriptive rows).")(fn)
    fn = click.option("--constraints", "constraints_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Constraint cache JSONL from 'constraints generate'.")(fn)
    fn = click.option("--reward-scores", "reward_scores_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Precomputed prescriptive-similarity scores JSONL.")(fn)
    fn = click.option("--penalty-scores", "penalty_scores_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Precomputed proscriptive-similarity scores JSONL.")(fn)
    fn = click.option("--minmax-base", is_flag=True, default=False, show_default=True, help="Min-max normalize base scores per query before fusing.")(fn)
    return fn


def _load_triples(
    base_scores_path: Path,
    images_path: Path | None,
    texts_path: Path | None,
    constraints_path: Path | None,
    reward_scores_path: Path | None,
    penalty_scores_path: Path | None,
    minmax_base: bool,
):
    """Resolve (base, reward, penalty) score tables from either precomputed
    score files or embeddings plus cached constraints."""
    import numpy as np

    from .rerank import minmax_normalize

    base = load_score_file(base_scores_path)
    if minmax_base:
        base = {qid: minmax_normalize(scores) for qid, scores in base.items()}

    if reward_scores_path is not None or penalty_scores_path is not None:
        if not (reward_scores_path and penalty_scores_path):
            raise click.UsageError("--reward-scores and --penalty-scores go together")
        reward = load_score_file(reward_scores_path)
        penalty = load_score_file(penalty_scores_path)
        empty_constraints = {"empty_prescriptive": 0, "empty_proscriptive": 0}
        return base, reward, penalty, empty_constraints

    if not (images_path and texts_path and constraints_path):
        raise click.UsageError(
            "supply either --reward-scores/--penalty-scores or --images/--texts/--constraints"
        )
    images = read_store(images_path)
    texts = read_store(texts_path)
    cache = ConstraintCache(constraints_path)

    reward: dict[str, dict[str, float]] = {}
    penalty: dict[str, dict[str, float]] = {}
    empty_prescriptive = 0
    empty_proscriptive = 0
    for qid, scores in base.items():
        entry = cache.latest_for_query(qid)
        if entry is None:
            raise ValidationError(f"no cached constraints for query {qid!r}")
        candidates = sorted(scores)
        missing = [c for c in candidates if c not in images]
        if missing:
            raise MissingEmbedding(f"query {qid!r}: candidates missing from image store: {missing[:5]}")
        mat = np.stack([images.row(c) for c in candidates]).astype(np.float64)

        def side(caption: str, key: str) -> dict[str, float]:
            if not caption:
                return {c: 0.0 for c in candidates}
            if key not in texts:
                raise MissingEmbedding(f"no text embedding {key!r}; run the encoder over the exported captions")
            sims = mat @ texts.row(key).astype(np.float64)
            return dict(zip(candidates, sims.tolist()))

        reward[qid] = side(entry.prescriptive, f"{qid}::prescriptive")
        penalty[qid] = side(entry.proscriptive, f"{qid}::proscriptive")
        empty_prescriptive += int(not entry.prescriptive)
        empty_proscriptive += int(not entry.proscriptive)

    diags = {"empty_prescriptive": empty_prescriptive, "empty_proscriptive": empty_proscriptive}
    return base, reward, penalty, diags


def _resolve_lambda(lam: float | None, base_style: str) -> float:
    return LAMBDA_BY_STYLE[base_style] if lam is None else lam


def lambda_options(fn):
    fn = click.option("--lambda", "lam", type=float, default=None, help="Blend weight in [0,1]; default depends on --base-style: 1.0 for generative-query, 0.2 for inversion.")(fn)
    fn = click.option("--base-style", type=click.Choice(sorted(LAMBDA_BY_STYLE)), default="generative-query", show_default=True, help="Base-score source style, sets the default blend weight (generative-query: 1.0, inversion: 0.2).")(fn)
    return fn


def jobs_option(fn):
    return click.option(
        "--jobs", type=int, default=os.cpu_count() or 1, show_default="logical CPUs",
        help="Worker threads for per-query scoring.",
    )(fn)


# ---------------------------------------------------------------------------
# rerank


@cli.command("rerank")
@scoring_options
@lambda_options
@jobs_option
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default=Variant.FULL.value, show_default=True, help="Which constraint terms modulate the base score.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Re-ranked output JSONL.")
@click.pass_context
def rerank_cmd(
    ctx: click.Context,
    base_scores_path: Path,
    images_path: Path | None,
    texts_path: Path | None,
    constraints_path: Path | None,
    reward_scores_path: Path | None,
    penalty_scores_path: Path | None,
    minmax_base: bool,
    lam: float | None,
    base_style: str,
    jobs: int,
    variant: str,
    out: Path,
) -> None:
    """Re-rank candidates by blending base scores with constraint modulation."""
    manifest = RunManifest("rerank", __version__)
    _record_params(ctx, manifest)
    for p in (base_scores_path, images_path, texts_path, constraints_path, reward_scores_path, penalty_scores_path):
        if p is not None:
            manifest.record_input(p)

    lam_value = _resolve_lambda(lam, base_style)
    manifest.record_config("resolved_lambda", lam_value, "cli" if lam is not None else "default")
    cfg = RerankConfig(lam=lam_value, variant=Variant(variant))
    base, reward, penalty, diags = _load_triples(
        base_scores_path, images_path, texts_path, constraints_path,
        reward_scores_path, penalty_scores_path, minmax_base,
    )

    missing = [qid for qid in base if qid not in reward or qid not in penalty]
    if missing:
        raise ValidationError(f"no reward/penalty scores for queries: {missing[:5]}")
    outcomes = rerank_all(base, reward, penalty, cfg, jobs=max(1, jobs))

    lines = []
    negative_base = 0
    for qid in sorted(base):
        outcome = outcomes[qid]
        negative_base += outcome.negative_base_count
        lines.append(
            {
                "query_id": qid,
                "lambda": cfg.lam,
                "variant": cfg.variant.value,
                "ranking": [
                    {
                        "id": cid,
                        "final": float(outcome.ranked.scores[i]),
                        "base": float(outcome.base[i]),
                        "reward": float(outcome.reward[i]),
                        "penalty": float(outcome.penalty[i]),
                        "soft": float(outcome.soft[i]),
                    }
                    for i, cid in enumerate(outcome.ranked.ids)
                ],
            }
        )
    write_jsonl(out, lines)
    manifest.write(out)
    log.info(
        "re-ranked %d queries (lambda=%s, variant=%s, %d negative base scores, %s)",
        len(lines), cfg.lam, cfg.variant.value, negative_base, diags,
    )


def _load_run(path: Path) -> tuple[dict[str, RankedList], float | None, str | None]:
    outcomes: dict[str, RankedList] = {}
    lam = None
    variant = None
    for lineno, obj in iter_jsonl(path):
        qid = str(obj["query_id"])
        lam = obj.get("lambda", lam)
        variant = obj.get("variant", variant)
        ranking = obj["ranking"]
        outcomes[qid] = RankedList(
            query_id=qid,
            ids=tuple(str(e["id"]) for e in ranking),
            scores=[float(e["final"]) for e in ranking],
        )
    if not outcomes:
        raise ValidationError(f"{path}: empty run file")
    return outcomes, lam, variant


# ---------------------------------------------------------------------------
# eval / sweep / ablation


def report_output_options(fn):
    fn = click.option("--csv-out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write the report as CSV (metric,k,lambda,variant,value,n_queries).")(fn)
    fn = click.option("--json", "as_json", is_flag=True, default=False, show_default=True, help="Print the report as JSON instead of a text table.")(fn)
    return fn


def _emit_reports(reports: list[EvalReport], csv_out: Path | None, as_json: bool, manifest: RunManifest) -> None:
    if csv_out is not None:
        csv_text = reports_to_csv(reports)
        tmp = csv_out.with_name(csv_out.name + ".tmp")
        tmp.write_text(csv_text, encoding="utf-8", newline="\n")
        tmp.replace(csv_out)
        manifest.write(csv_out)
    if as_json:
        click.echo(json.dumps(reports_to_json(reports), indent=2, sort_keys=True))
    else:
        click.echo(reports_to_text(reports), nl=False)


@cli.command("eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL.")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Re-ranked run JSONL from 'rerank'.")
@click.option("--ks", default="1,5,10,50", show_default=True, help="Comma-separated cutoffs for every metric.")
@click.option("--metrics", default="recall,recall_subset,map", show_default=True, help="Metrics to report (subset recall is skipped when no query has subsets).")
@report_output_options
@click.pass_context
def eval_cmd(ctx: click.Context, dataset_path: Path, run_path: Path, ks: str, metrics: str, csv_out: Path | None, as_json: bool) -> None:
    """Score a re-ranked run against ground truth."""
    manifest = RunManifest("eval", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(dataset_path)
    manifest.record_input(run_path)

    dataset = load_dataset(dataset_path)
    outcomes, lam, variant = _load_run(run_path)
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    report = evaluate(outcomes, dataset, _int_list(ks), lam=lam, variant=variant)
    filtered = EvalReport(
        rows=tuple(r for r in report.rows if r.metric in wanted),
        n_queries=report.n_queries,
        diagnostics=report.diagnostics,
    )
    log.info("diagnostics: %s", filtered.diagnostics)
    _emit_reports([filtered], csv_out, as_json, manifest)


@cli.command("sweep")
@scoring_options
@jobs_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL.")
@click.option("--lambdas", default="0.1,0.3,0.5,0.7,0.9", show_default=True, help="Blend-weight grid to sweep.")
@click.option("--ks", default="1,5,10,50", show_default=True, help="Comma-separated cutoffs for every metric.")
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default=Variant.FULL.value, show_default=True, help="Variant evaluated at each grid point.")
@report_output_options
@click.pass_context
def sweep_cmd(
    ctx: click.Context,
    base_scores_path: Path,
    images_path: Path | None,
    texts_path: Path | None,
    constraints_path: Path | None,
    reward_scores_path: Path | None,
    penalty_scores_path: Path | None,
    minmax_base: bool,
    jobs: int,
    dataset_path: Path,
    lambdas: str,
    ks: str,
    variant: str,
    csv_out: Path | None,
    as_json: bool,
) -> None:
    """Evaluate a grid of blend weights over one scoring setup."""
    manifest = RunManifest("sweep", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(dataset_path)
    manifest.record_input(base_scores_path)

    dataset = load_dataset(dataset_path)
    base, reward, penalty, _ = _load_triples(
        base_scores_path, images_path, texts_path, constraints_path,
        reward_scores_path, penalty_scores_path, minmax_base,
    )
    reports = sweep_lambda(dataset, base, reward, penalty, _float_list(lambdas), _int_list(ks), Variant(variant), jobs=max(1, jobs))
    _emit_reports(reports, csv_out, as_json, manifest)


@cli.command("ablation")
@scoring_options
@lambda_options
@jobs_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL.")
@click.option("--ks", default="1,5,10,50", show_default=True, help="Comma-separated cutoffs for every metric.")
@report_output_options
@click.pass_context
def ablation_cmd(
    ctx: click.Context,
    base_scores_path: Path,
    images_path: Path | None,
    texts_path: Path | None,
    constraints_path: Path | None,
    reward_scores_path: Path | None,
    penalty_scores_path: Path | None,
    minmax_base: bool,
    lam: float | None,
    base_style: str,
    jobs: int,
    dataset_path: Path,
    ks: str,
    csv_out: Path | None,
    as_json: bool,
) -> None:
    """Evaluate all four constraint variants (base_only, reward_only,
    penalty_only, full) at one blend weight."""
    manifest = RunManifest("ablation", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(dataset_path)
    manifest.record_input(base_scores_path)

    dataset = load_dataset(dataset_path)
    base, reward, penalty, _ = _load_triples(
        base_scores_path, images_path, texts_path, constraints_path,
        reward_scores_path, penalty_scores_path, minmax_base,
    )
    lam_value = _resolve_lambda(lam, base_style)
    reports = ablation(dataset, base, reward, penalty, lam_value, _int_list(ks), jobs=max(1, jobs))
    _emit_reports(reports, csv_out, as_json, manifest)


# ---------------------------------------------------------------------------
# mt (multi-target pipeline)


@cli.group()
def mt() -> None:
    """Multi-target benchmark construction pipeline."""


def _build_embedder(spec_str: str):
    if spec_str.startswith("hash:"):
        return HashTextEmbedder(int(spec_str.split(":", 1)[1]))
    if spec_str.startswith("store:"):
        return StoreTextEmbedder(read_store(spec_str.split(":", 1)[1]))
    raise click.UsageError(f"unknown embedder {spec_str!r} (use 'hash:<dim>' or 'store:<path>')")


@mt.command("stage1")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL.")
@click.option("--images", "images_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Candidate image embedding store.")
@click.option("--embedder", default="hash:64", show_default=True, help="Text query embedder: 'store:<path.sftemb>' for encoder outputs, 'hash:<dim>' for deterministic offline vectors.")
@click.option("--domain", type=click.Choice(["generic", "fashion"]), default="generic", show_default=True, help="Query-generation template family (generic: 1 caption, fashion: 2).")
@click.option("--k", default=10, show_default=True, help="Candidates retrieved per criterion.")
@click.option("--tau", default=0.85, show_default=True, help="Confidence threshold for a candidate to become a valid target.")
@click.option("--strict-threshold", is_flag=True, default=False, show_default=True, help="Require confidence strictly above tau instead of at-or-above.")
@click.option("--captions-out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Export generated sentence captions as JSONL {id, text} for an external text encoder.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Multi-target records JSONL.")
@provider_options
@click.pass_context
def mt_stage1(
    ctx: click.Context,
    dataset_path: Path,
    images_path: Path,
    embedder: str,
    domain: str,
    k: int,
    tau: float,
    strict_threshold: bool,
    captions_out: Path | None,
    out: Path,
    provider: str,
    model: str,
    base_url: str,
    temperature: float,
    retries: int,
    timeout_s: float,
    concurrency: int,
) -> None:
    """Stage 1: retrieve candidate groups, score them, select valid targets."""
    manifest = RunManifest("mt stage1", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(dataset_path)
    manifest.record_input(images_path)

    dataset = load_dataset(dataset_path)
    images = read_store(images_path)
    chat, provider_cfg = _build_provider(provider, model, base_url, temperature, retries, timeout_s, concurrency)
    cfg = Stage1Config(k=k, tau=tau, strict_threshold=strict_threshold)

    def export_captions(captions: list[dict]) -> None:
        # written before any embedding lookup so a store-backed run missing
        # text embeddings still leaves the captions for the encoder pass
        if captions_out is not None:
            write_jsonl(captions_out, sorted(captions, key=lambda c: c["id"]))
            log.info("exported %d stage-1 captions to %s", len(captions), captions_out)

    records, _ = run_stage1(
        chat, _build_embedder(embedder), images, dataset, cfg, domain, on_captions=export_captions
    )
    write_jsonl(out, [r.as_dict() for r in sorted(records, key=lambda r: r.query.query_id)])

    usage = getattr(chat, "total_usage", None)
    if usage is not None:
        manifest.record_provider(model, usage.as_dict(), usage.cost(provider_cfg))
    manifest.write(out)
    stats = stage1_stats(records)
    log.info(
        "stage1: %d queries, %d excluded, %d kept, mean pool size %.2f",
        stats.total, stats.excluded, stats.kept, stats.mean_pool_size,
    )


@mt.command("stage2")
@click.option("--multi-targets", "mt_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Stage 1 output JSONL.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Query dataset JSONL (for modification texts).")
@click.option("--seed", default=0, show_default=True, help="Deterministic sampling seed for target/distractor selection.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Single-target triplets JSONL.")
@provider_options
@click.pass_context
def mt_stage2(
    ctx: click.Context,
    mt_path: Path,
    dataset_path: Path,
    seed: int,
    out: Path,
    provider: str,
    model: str,
    base_url: str,
    temperature: float,
    retries: int,
    timeout_s: float,
    concurrency: int,
) -> None:
    """Stage 2: contrastive rewriting for pools with at least three targets."""
    manifest = RunManifest("mt stage2", __version__)
    _record_params(ctx, manifest)
    manifest.record_input(mt_path)
    manifest.record_input(dataset_path)

    dataset = {r.query_id: r for r in load_dataset(dataset_path)}
    records = []
    for lineno, obj in iter_jsonl(mt_path):
        qid = str(obj["query_id"])
        if qid not in dataset:
            raise ValidationError(f"{mt_path}:{lineno}: query {qid!r} not in dataset")
        records.append(multi_target_record_from_dict(obj, dataset[qid]))

    chat, provider_cfg = _build_provider(provider, model, base_url, temperature, retries, timeout_s, concurrency)
    triplets = run_stage2(chat, records, seed)
    write_jsonl(out, [t.as_dict() for t in sorted(triplets, key=lambda t: t.query_id)])

    usage = getattr(chat, "total_usage", None)
    if usage is not None:
        manifest.record_provider(model, usage.as_dict(), usage.cost(provider_cfg))
    manifest.write(out)
    log.info("stage2: %d triplets from %d records (pool >= 3 gate)", len(triplets), len(records))


# ---------------------------------------------------------------------------
# entrypoint with spec'd exit codes


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except ProviderError as exc:
        click.echo(f"provider error: {exc}", err=True)
        return 2
    except FormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 3
    except (ValidationError, ValueError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        return 1
    except SoftCirError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
