"""Operator surface: ingest, summarize, index, query, eval, sweep, export.

Config precedence: command-line flags > environment (OMGM_ prefix) >
config file > defaults. Every command resolves its configuration before
touching data, never mutates its inputs, and writes a ``<out>.meta.json``
sidecar recording the resolved config and engine version. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import click

from omgm import OmgmError, __version__
from omgm.corpus import Corpus, load_corpus, load_queries, persist_corpus
from omgm.evaluation import (
    EvalError,
    EvalReport,
    measure_latency,
    recall_at_k,
    score_answer,
    section_recall_at_1,
    sweep,
    sweep_rows_to_csv,
    sweep_rows_to_dict,
)
from omgm.index import build_index, load_index
from omgm.pairs import build_pairs, export_pairs
from omgm.pipeline import PipelineConfig, result_to_dict, run_pipeline, stage1_search
from omgm.prompts import render_summary_prompt
from omgm.providers import (
    CachingProvider,
    DeterministicProvider,
    HttpProvider,
    ProviderEndpoint,
)

_ENV_PREFIX = "OMGM_"
_CONFIG_KEYS = (
    "k", "alpha", "beta", "score_norm", "temperature", "imageless_policy",
    "normalize_embeddings", "pair_count", "max_hard_negatives", "seed",
    "parallelism", "prompt_style", "provider_url",
)


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        import tomllib  # Python >= 3.11
    except ImportError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    flat: dict = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return {k: v for k, v in flat.items() if k in _CONFIG_KEYS}


def _env_overrides() -> dict:
    out: dict = {}
    for key in _CONFIG_KEYS:
        raw = os.environ.get(_ENV_PREFIX + key.upper())
        if raw is None:
            continue
        if key in ("k", "pair_count", "max_hard_negatives", "seed", "parallelism"):
            out[key] = int(raw)
        elif key in ("alpha", "beta", "temperature"):
            out[key] = float(raw)
        elif key == "normalize_embeddings":
            out[key] = raw.lower() not in ("0", "false", "no")
        else:
            out[key] = raw
    return out


def resolve_config(config_path: Optional[str] = None, **flags) -> PipelineConfig:
    """Merge flags > environment > config file > defaults."""
    merged = {}
    merged.update(_load_config_file(config_path))
    merged.update(_env_overrides())
    merged.update({k: v for k, v in flags.items() if v is not None})
    return PipelineConfig(**merged)


def _make_provider(config: PipelineConfig):
    if config.provider_url:
        return HttpProvider(ProviderEndpoint(base_url=config.provider_url))
    return DeterministicProvider()


def _write_meta(out_path: str, config: PipelineConfig, extra: Optional[dict] = None) -> None:
    meta = {"engine_version": __version__, "config": config.to_dict()}
    if extra:
        meta.update(extra)
    with open(str(out_path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OmgmError as exc:
            click.echo(f"error [{exc.__class__.__module__.split('.')[-1]}]: {exc}", err=True)
            sys.exit(1)

    return wrapper


_config_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="TOML config file mirroring the pipeline settings."),
    click.option("--k", type=int, default=None, help="Rerank scope."),
    click.option("--alpha", type=float, default=None, help="Entity fusion weight."),
    click.option("--beta", type=float, default=None, help="Section fusion weight."),
    click.option("--seed", type=int, default=None, help="Run seed."),
    click.option("--provider-url", type=str, default=None,
                 help="Provider service base URL (deterministic provider if unset)."),
]


def config_options(fn):
    for option in reversed(_config_options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="omgm")
def main() -> None:
    """Coarse-to-fine multimodal retrieval engine."""


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_options
@_domain_errors
def ingest(corpus_path, out_dir, config_path, **flags) -> None:
    """Validate a corpus file; write its manifest and a canonical copy."""
    config = resolve_config(config_path, **flags)
    corpus = load_corpus(corpus_path)
    manifest = corpus.manifest()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    persist_corpus(corpus, out / "corpus.jsonl")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_meta(str(out / "manifest.json"), config)
    click.echo(f"ingested {manifest.entity_count} entities "
               f"({manifest.section_count} sections)")


def _article_text(entity) -> str:
    parts = [entity.title]
    for section in entity.sections:
        if section.heading:
            parts.append(f"## {section.heading}")
        parts.append(section.body)
    return "\n".join(parts)


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Summary cache JSONL, keyed by (entity_id, prompt hash).")
@config_options
@_domain_errors
def summarize(corpus_path, out_path, cache_path, config_path, **flags) -> None:
    """Generate entity summaries offline; cached entities are skipped."""
    config = resolve_config(config_path, **flags)
    provider = _make_provider(config)
    corpus = load_corpus(corpus_path)

    cache: dict[tuple[str, str], str] = {}
    if cache_path and os.path.exists(cache_path):
        with open(cache_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    cache[(d["entity_id"], d["prompt_hash"])] = d["summary"]

    rows = []
    for entity in corpus:
        prompt = render_summary_prompt(_article_text(entity))
        prompt_hash = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        key = (entity.entity_id, prompt_hash)
        summary = cache.get(key)
        if summary is None:
            summary = provider.generate(prompt)
            cache[key] = summary
        rows.append({"entity_id": entity.entity_id, "prompt_hash": prompt_hash,
                     "summary": summary})

    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    if cache_path:
        with open(cache_path, "w", encoding="utf-8") as fh:
            for (eid, ph), summary in sorted(cache.items()):
                fh.write(json.dumps(
                    {"entity_id": eid, "prompt_hash": ph, "summary": summary},
                    sort_keys=True, separators=(",", ":")))
                fh.write("\n")
    _write_meta(out_path, config)
    click.echo(f"summarized {len(rows)} entities")


def _load_summaries(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[d["entity_id"]] = d["summary"]
    return out


@main.command(name="index")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--summaries", "summaries_path", type=click.Path(exists=True), default=None,
              help="Summaries JSONL to attach before embedding.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@config_options
@_domain_errors
def index_cmd(corpus_path, summaries_path, out_path, config_path, **flags) -> None:
    """Embed entity summaries and persist the flat inner-product index."""
    import numpy as np

    config = resolve_config(config_path, **flags)
    provider = _make_provider(config)
    corpus = load_corpus(corpus_path)
    if summaries_path:
        corpus = corpus.attach_summaries(_load_summaries(summaries_path))
    missing = [e.entity_id for e in corpus if not e.summary]
    if missing:
        from omgm.corpus import CorpusError

        raise CorpusError(
            f"{len(missing)} entities lack summaries (e.g. {missing[:3]}); "
            "run 'omgm summarize' first"
        )
    entities = list(corpus)
    vectors = provider.embed_text([e.summary for e in entities])
    if config.normalize_embeddings:
        vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    idx = build_index([(e.entity_id, v) for e, v in zip(entities, vectors)])
    idx.save(out_path)
    _write_meta(out_path, config, {"entries": len(idx), "dims": idx.dims})
    click.echo(f"indexed {len(idx)} summaries ({idx.dims} dims)")


@main.command()
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--with-generation", is_flag=True, default=False)
@click.option("--style", type=click.Choice(["evqa", "infoseek"]), default=None)
@config_options
@_domain_errors
def query(samples_path, corpus_path, index_path, out_path, with_generation,
          style, config_path, **flags) -> None:
    """Run the full pipeline per sample; write batch results JSONL.

    The results file is byte-deterministic for a fixed seed; wall-clock
    timings go to a ``<out>.timings.jsonl`` sidecar instead.
    """
    config = resolve_config(config_path, prompt_style=style, **flags)
    provider = CachingProvider(_make_provider(config))
    corpus = load_corpus(corpus_path)
    samples = load_queries(samples_path)
    idx = load_index(index_path)

    with open(out_path, "w", encoding="utf-8") as results_fh, \
            open(str(out_path) + ".timings.jsonl", "w", encoding="utf-8") as timings_fh:
        for sample in samples:
            result = run_pipeline(sample, corpus, idx, provider, config,
                                  with_generation=with_generation)
            line = result_to_dict(result, include_timings=False)
            line["reranked"] = [r.entity_id for r in result.stage2]
            results_fh.write(json.dumps(line, sort_keys=True, separators=(",", ":"),
                                        ensure_ascii=False))
            results_fh.write("\n")
            timings_fh.write(json.dumps(
                {"sample_id": result.sample_id, "timings_ms": result.timings_ms},
                sort_keys=True, separators=(",", ":")))
            timings_fh.write("\n")
    _write_meta(out_path, config, {"samples": len(samples)})
    click.echo(f"queried {len(samples)} samples -> {out_path}")


def _load_jsonl(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@main.command(name="eval")
@click.option("--results", "results_path", type=click.Path(exists=True), required=True)
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--tolerance", type=float, default=0.10,
              help="Relative tolerance for relaxed (numeric) accuracy.")
@config_options
@_domain_errors
def eval_cmd(results_path, samples_path, out_path, tolerance, config_path, **flags) -> None:
    """Score a batch results file against gold labels."""
    import numpy as np

    config = resolve_config(config_path, **flags)
    samples = {s.sample_id: s for s in load_queries(samples_path)}
    rows = _load_jsonl(results_path)

    rankings, golds = [], []
    sec_preds, sec_golds = [], []
    vqa_scores, relaxed_scores = [], []
    per_sample = []
    for row in rows:
        sample = samples.get(row["sample_id"])
        if sample is None:
            raise EvalError(f"result for unknown sample {row['sample_id']!r}")
        outcome = {"sample_id": row["sample_id"]}
        if sample.gold_entity_id is not None:
            ranking = row.get("reranked") or [r["entity_id"] for r in row["stage1"]]
            rankings.append(ranking)
            golds.append(sample.gold_entity_id)
            if sample.gold_section_index is not None:
                sec_preds.append((row["top1_entity"], row["best_section_index"]))
                sec_golds.append((sample.gold_entity_id, sample.gold_section_index))
        if row.get("answer") is not None and sample.valid_answers:
            score = score_answer(row["answer"], sample, tolerance)
            outcome["answer_score"] = score
            (relaxed_scores if sample.answer_kind == "numeric" else vqa_scores).append(score)
        per_sample.append(outcome)

    latency = {}
    timings_path = str(results_path) + ".timings.jsonl"
    if os.path.exists(timings_path):
        records = [r["timings_ms"] for r in _load_jsonl(timings_path)]
        if records:
            latency = measure_latency(records)

    report = EvalReport(
        recall={k: recall_at_k(rankings, golds, k) for k in (1, 5, 10, 20)} if golds else {},
        section_recall_1=section_recall_at_1(sec_preds, sec_golds) if sec_golds else None,
        vqa_acc=float(np.mean(vqa_scores)) if vqa_scores else None,
        relaxed_acc=float(np.mean(relaxed_scores)) if relaxed_scores else None,
        latency_ms=latency,
        per_sample=per_sample,
        config=config.to_dict(),
    )
    if out_path:
        report.to_json(out_path)
        _write_meta(out_path, config)
    click.echo(json.dumps(report.to_dict()["metrics"], sort_keys=True))


@main.command(name="sweep")
@click.option("--param", type=click.Choice(["alpha", "beta", "k"]), required=True)
@click.option("--grid", "grid_text", type=str, required=True,
              help="Comma-separated grid values, e.g. '10,20,50'.")
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_base", type=click.Path(), required=True,
              help="Basename; writes <out>.csv and <out>.json.")
@config_options
@_domain_errors
def sweep_cmd(param, grid_text, samples_path, corpus_path, index_path, out_base,
              config_path, **flags) -> None:
    """Sweep one hyperparameter; emit metric/latency tables."""
    config = resolve_config(config_path, **flags)
    try:
        grid = [float(v) for v in grid_text.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"--grid must be comma-separated numbers, got {grid_text!r}")
    if not grid:
        raise click.UsageError("--grid is empty")
    provider = _make_provider(config)
    corpus = load_corpus(corpus_path)
    samples = load_queries(samples_path)
    idx = load_index(index_path)
    rows = sweep(param, grid, samples, corpus, idx, provider, config)
    sweep_rows_to_csv(rows, str(out_base) + ".csv")
    with open(str(out_base) + ".json", "w", encoding="utf-8") as fh:
        json.dump({"engine_version": __version__, "config": config.to_dict(),
                   "rows": sweep_rows_to_dict(rows)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_meta(str(out_base) + ".csv", config)
    click.echo(f"swept {param} over {len(grid)} points -> {out_base}.csv")


@main.command(name="export-pairs")
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@config_options
@_domain_errors
def export_pairs_cmd(samples_path, corpus_path, index_path, out_path,
                     config_path, **flags) -> None:
    """Build contrastive pair sets from stage-1 candidates and export them."""
    config = resolve_config(config_path, **flags)
    provider = CachingProvider(_make_provider(config))
    corpus = load_corpus(corpus_path)
    samples = load_queries(samples_path)
    idx = load_index(index_path)
    sets = []
    for sample in samples:
        stage1 = stage1_search(sample.image, corpus, idx, config.k, provider)
        sets.append(build_pairs(sample, stage1, corpus, provider,
                                pair_count=config.pair_count,
                                max_hard_negatives=config.max_hard_negatives,
                                seed=config.seed))
    export_pairs(sets, out_path)
    _write_meta(out_path, config, {"pair_sets": len(sets)})
    click.echo(f"exported {len(sets)} pair sets -> {out_path}")


if __name__ == "__main__":
    main()
