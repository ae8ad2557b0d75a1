"""Metrics, hyperparameter sweeps and latency reporting.

Answer scoring follows the two-metric convention: string answers use
exact match after a fixed normalization (lowercase, strip leading
articles, strip terminal punctuation, collapse whitespace), numeric
answers use relaxed accuracy within a relative tolerance (default 0.10)
of the gold value, or containment for range golds. Unit mismatches score
zero by design: a prediction of 118 against a gold of 1.18 is wrong.
"""

from __future__ import annotations

import csv
import json
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from omgm import OmgmError, __version__
from omgm.corpus import Corpus, QuerySample
from omgm.index import VectorIndex
from omgm.pipeline import PipelineConfig, PipelineResult, run_pipeline
from omgm.providers import CachingProvider

SWEEP_PARAMS = ("alpha", "beta", "k")
SWEEP_CSV_HEADER = ["param", "value", "metric", "latency_ms_mean"]


class EvalError(OmgmError):
    """Inconsistent evaluation inputs."""


def recall_at_k(ranked_entities: Sequence[Sequence[str]],
                gold_entities: Sequence[str], k: int) -> float:
    """Fraction of samples whose top-k ranking contains the gold entity."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_entities) != len(gold_entities):
        raise EvalError("rankings and golds differ in length")
    if not gold_entities:
        raise EvalError("no samples to evaluate")
    hits = sum(
        1 for ranking, gold in zip(ranked_entities, gold_entities)
        if gold in ranking[:k]
    )
    return hits / len(gold_entities)


def section_recall_at_1(predictions: Sequence[tuple[str, int]],
                        golds: Sequence[tuple[str, int]]) -> float:
    """Fraction where both the entity and the section index match gold."""
    if len(predictions) != len(golds):
        raise EvalError("predictions and golds differ in length")
    if not golds:
        raise EvalError("no samples to evaluate")
    return sum(1 for p, g in zip(predictions, golds) if p == g) / len(golds)


_ARTICLES = ("a ", "an ", "the ")


def normalize_answer(text: str) -> str:
    """Lowercase, strip leading articles and terminal punctuation,
    collapse whitespace."""
    out = text.strip().lower()
    out = re.sub(r"\s+", " ", out)
    for article in _ARTICLES:
        if out.startswith(article):
            out = out[len(article):]
            break
    out = out.rstrip(".,;:!?")
    return out.strip()


def vqa_accuracy(prediction: str, valid_answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized valid answer."""
    if not valid_answers:
        raise ValueError("valid_answers must be non-empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(a) for a in valid_answers))


_NUMBER_RE = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?(?:[eE][+-]?\d+)?")


def parse_number(text: str) -> Optional[float]:
    """First numeric token in the text, or None."""
    match = _NUMBER_RE.search(text)
    if match is None:
        return None
    return float(match.group(0).replace(",", ""))


def relaxed_accuracy(prediction: str, gold, tolerance: float = 0.10) -> int:
    """Numeric-answer correctness within a relative tolerance.

    ``gold`` is a scalar or an (a, b) range. Unparseable predictions
    score 0; a zero gold requires an exact match.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    pred = parse_number(prediction)
    if pred is None:
        return 0
    if isinstance(gold, (tuple, list)):
        lo, hi = float(gold[0]), float(gold[1])
        return int(lo <= pred <= hi)
    g = float(gold)
    if g == 0.0:
        return int(pred == 0.0)
    return int(abs(pred - g) <= tolerance * abs(g))


def score_answer(prediction: str, sample: QuerySample,
                 tolerance: float = 0.10) -> int:
    """Dispatch on the sample's answer kind."""
    if not sample.valid_answers:
        raise EvalError(f"sample {sample.sample_id!r} has no valid answers")
    if sample.answer_kind == "numeric":
        for answer in sample.valid_answers:
            if ".." in answer:
                lo, hi = answer.split("..", 1)
                if relaxed_accuracy(prediction, (float(lo), float(hi))):
                    return 1
            else:
                gold = parse_number(answer)
                if gold is not None and relaxed_accuracy(prediction, gold, tolerance):
                    return 1
        return 0
    return vqa_accuracy(prediction, sample.valid_answers)


def measure_latency(timing_records: Sequence[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Per-stage mean/p50/p95 over per-sample wall-clock records (ms)."""
    if not timing_records:
        raise EvalError("no timing records")
    stages: dict[str, list[float]] = {}
    for record in timing_records:
        for stage, value in record.items():
            stages.setdefault(stage, []).append(value)
    return {
        stage: {
            "mean": float(np.mean(vals)),
            "p50": float(np.percentile(vals, 50)),
            "p95": float(np.percentile(vals, 95)),
        }
        for stage, vals in stages.items()
    }


@dataclass
class EvalReport:
    recall: dict[int, float]
    section_recall_1: Optional[float]
    vqa_acc: Optional[float]
    relaxed_acc: Optional[float]
    latency_ms: dict[str, dict[str, float]]
    per_sample: list[dict]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "engine_version": __version__,
            "config": self.config,
            "metrics": {
                "recall": {str(k): v for k, v in sorted(self.recall.items())},
                "section_recall_1": self.section_recall_1,
                "vqa_acc": self.vqa_acc,
                "relaxed_acc": self.relaxed_acc,
            },
            "latency_ms": self.latency_ms,
            "samples": self.per_sample,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_benchmark(samples: Sequence[QuerySample], corpus: Corpus,
                  index: VectorIndex, provider, config: PipelineConfig,
                  with_generation: bool = False) -> list[PipelineResult]:
    """Run the pipeline over a labeled benchmark, stage order per sample."""
    return [
        run_pipeline(s, corpus, index, provider, config,
                     with_generation=with_generation)
        for s in samples
    ]


def evaluate_results(results: Sequence[PipelineResult],
                     samples: Sequence[QuerySample],
                     config: Optional[PipelineConfig] = None,
                     ks: Sequence[int] = (1, 5, 10, 20),
                     tolerance: float = 0.10) -> EvalReport:
    """Score pipeline results against gold labels."""
    by_id = {s.sample_id: s for s in samples}
    missing = [r.sample_id for r in results if r.sample_id not in by_id]
    if missing:
        raise EvalError(f"results for unknown samples: {missing[:5]}")

    rankings, golds = [], []
    sec_preds, sec_golds = [], []
    vqa_scores, relaxed_scores = [], []
    per_sample = []
    timing_records = []

    for result in results:
        sample = by_id[result.sample_id]
        outcome: dict = {"sample_id": result.sample_id}
        if sample.gold_entity_id is not None:
            ranking = [r.entity_id for r in result.stage2]
            rankings.append(ranking)
            golds.append(sample.gold_entity_id)
            outcome["entity_rank"] = (
                ranking.index(sample.gold_entity_id) + 1
                if sample.gold_entity_id in ranking else None
            )
            if sample.gold_section_index is not None:
                sec_preds.append((result.context.entity_id, result.context.section.index))
                sec_golds.append((sample.gold_entity_id, sample.gold_section_index))
                outcome["section_hit"] = sec_preds[-1] == sec_golds[-1]
        if result.answer is not None and sample.valid_answers:
            score = score_answer(result.answer, sample, tolerance)
            outcome["answer_score"] = score
            if sample.answer_kind == "numeric":
                relaxed_scores.append(score)
            else:
                vqa_scores.append(score)
        if result.timings_ms:
            timing_records.append(result.timings_ms)
        per_sample.append(outcome)

    recall = {}
    if golds:
        for k in ks:
            recall[k] = recall_at_k(rankings, golds, k)
    return EvalReport(
        recall=recall,
        section_recall_1=(section_recall_at_1(sec_preds, sec_golds)
                          if sec_golds else None),
        vqa_acc=(float(np.mean(vqa_scores)) if vqa_scores else None),
        relaxed_acc=(float(np.mean(relaxed_scores)) if relaxed_scores else None),
        latency_ms=(measure_latency(timing_records) if timing_records else {}),
        per_sample=per_sample,
        config=config.to_dict() if config else {},
    )


@dataclass
class SweepRow:
    param: str
    value: float
    metrics: dict[str, float]
    latency_ms_mean: dict[str, float]


def sweep(param: str, grid: Sequence[float], samples: Sequence[QuerySample],
          corpus: Corpus, index: VectorIndex, provider,
          base_config: PipelineConfig,
          ks: Sequence[int] = (1, 5, 10, 20)) -> list[SweepRow]:
    """One full evaluation per grid point, embeddings cached across points.

    Grid points run sequentially so latency measurements stay uncontended.
    An untimed warmup at the widest scope fills the embedding cache first,
    so per-point stage timings reflect scoring work, not encoder calls.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep param {param!r} (expected one of {SWEEP_PARAMS})")
    if not grid:
        raise ValueError("grid must be non-empty")
    cached = CachingProvider(provider)

    warm_cfg_kwargs = base_config.to_dict()
    if param == "k":
        warm_cfg_kwargs["k"] = int(max(grid))
    warm_cfg = PipelineConfig(**warm_cfg_kwargs)
    run_benchmark(samples, corpus, index, cached, warm_cfg)

    rows: list[SweepRow] = []
    for value in grid:
        kwargs = base_config.to_dict()
        kwargs[param] = int(value) if param == "k" else float(value)
        config = PipelineConfig(**kwargs)
        results = run_benchmark(samples, corpus, index, cached, config)
        report = evaluate_results(results, samples, config, ks=ks)
        metrics: dict[str, float] = {
            f"recall@{k}": v for k, v in report.recall.items()
        }
        if report.section_recall_1 is not None:
            metrics["section_recall@1"] = report.section_recall_1
        latency = {
            stage: stats["mean"] for stage, stats in report.latency_ms.items()
        }
        rows.append(SweepRow(param=param, value=float(value),
                             metrics=metrics, latency_ms_mean=latency))
    return rows


def sweep_rows_to_csv(rows: Sequence[SweepRow], path) -> None:
    """CSV in long form: one row per (grid value, metric).

    The metric cell carries ``name=value``; the latency column is the
    mean stage-2 wall clock for that grid point.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER)
        for row in rows:
            stage2 = row.latency_ms_mean.get("stage2", 0.0)
            for name, value in row.metrics.items():
                writer.writerow([row.param, row.value, f"{name}={value:.6f}",
                                 f"{stage2:.6f}"])


def sweep_rows_to_dict(rows: Sequence[SweepRow]) -> list[dict]:
    return [
        {
            "param": row.param,
            "value": row.value,
            "metrics": row.metrics,
            "latency_ms_mean": row.latency_ms_mean,
        }
        for row in rows
    ]
