"""The three-stage retrieval pipeline.

Stage 1 searches the summary index with the query-image embedding
(inner product, exact). Stage 2 reranks the top-k entities: every
(entity main image, section) pair is scored against the fused query
matrix with late interaction, the per-entity maximum is fused with the
stage-1 similarity via

    fused_e = alpha * norm(sim_c) + (1 - alpha) * norm(max_h sim_m)

and stage 3 picks a section of the winning entity via

    fused_sec = beta * norm(sim_m) + (1 - beta) * norm(sim_t)

where sim_t comes from the text pair scorer and the per-section sim_m
values are reused from stage 2, not recomputed. Both normalizations run
over the current candidate set (min-max by default) so the weights mean
the same thing across queries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from omgm import OmgmError
from omgm.corpus import Corpus, EntityRecord, ImageRef, QuerySample, SectionRecord
from omgm.index import VectorIndex
from omgm.prompts import format_context_block, render_answer_prompt
from omgm.providers import PLACEHOLDER_IMAGE

SCORE_NORM_MODES = ("minmax", "by_query_len", "none")
IMAGELESS_POLICIES = ("placeholder", "demote")


class PipelineError(OmgmError):
    """A pipeline stage failed; the message names the stage."""


@dataclass
class PipelineConfig:
    """Knobs for the three retrieval stages.

    Defaults follow the reference operating point: rerank scope k=20,
    entity fusion weight alpha=0.9, section fusion weight beta=0.2.
    """

    k: int = 20
    alpha: float = 0.9
    beta: float = 0.2
    score_norm: str = "minmax"
    temperature: float = 1.0
    imageless_policy: str = "placeholder"
    normalize_embeddings: bool = True
    pair_count: int = 16
    max_hard_negatives: int = 3
    seed: int = 0
    parallelism: int = 1
    prompt_style: str = "evqa"
    provider_url: Optional[str] = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.score_norm not in SCORE_NORM_MODES:
            raise ValueError(f"unknown score_norm {self.score_norm!r}")
        if self.imageless_policy not in IMAGELESS_POLICIES:
            raise ValueError(f"unknown imageless_policy {self.imageless_policy!r}")

    def to_dict(self) -> dict:
        return {
            "k": self.k, "alpha": self.alpha, "beta": self.beta,
            "score_norm": self.score_norm, "temperature": self.temperature,
            "imageless_policy": self.imageless_policy,
            "normalize_embeddings": self.normalize_embeddings,
            "pair_count": self.pair_count,
            "max_hard_negatives": self.max_hard_negatives,
            "seed": self.seed, "parallelism": self.parallelism,
            "prompt_style": self.prompt_style, "provider_url": self.provider_url,
        }


@dataclass(frozen=True)
class StageOneResult:
    entity_id: str
    sim_c: float


@dataclass
class StageTwoResult:
    entity_id: str
    section_sims: dict[int, float]
    sim_m_max: float
    fused: float = 0.0
    imageless: bool = False


@dataclass
class FinalContext:
    entity_id: str
    entity_title: str
    section: SectionRecord
    sim_m: float
    sim_t: float
    fused_section: float


@dataclass
class PipelineResult:
    sample_id: str
    stage1: list[StageOneResult]
    stage2: list[StageTwoResult]
    context: FinalContext
    answer: Optional[str] = None
    timings_ms: dict[str, float] = field(default_factory=dict)


def maxsim(query_matrix: np.ndarray, candidate_matrix: np.ndarray) -> float:
    """Late-interaction score: sum over query rows of the max dot product."""
    q = np.asarray(query_matrix, dtype=np.float64)
    c = np.asarray(candidate_matrix, dtype=np.float64)
    if q.ndim != 2 or c.ndim != 2 or q.shape[1] != c.shape[1]:
        raise PipelineError(
            f"maxsim dims mismatch: {q.shape} vs {c.shape}"
        )
    return float((q @ c.T).max(axis=1).sum())


def normalize_scores(values: Sequence[float], mode: str = "minmax") -> np.ndarray:
    """Align score scales before fusion.

    minmax maps affinely onto [0, 1] (all-equal input maps to 0.5);
    by_query_len divides by the 32 query rows; none is the identity.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("values must be non-empty")
    if mode == "minmax":
        lo, hi = arr.min(), arr.max()
        if hi == lo:
            return np.full_like(arr, 0.5)
        return (arr - lo) / (hi - lo)
    if mode == "by_query_len":
        from omgm.providers import FUSED_ROWS

        return arr / FUSED_ROWS
    if mode == "none":
        return arr.copy()
    raise ValueError(f"unknown normalization mode {mode!r}")


def fuse_scores(primary: Sequence[float], secondary: Sequence[float],
                weight: float, mode: str = "minmax") -> np.ndarray:
    """weight * norm(primary) + (1 - weight) * norm(secondary)."""
    return weight * normalize_scores(primary, mode) + (1.0 - weight) * normalize_scores(
        secondary, mode
    )


def stage1_search(query_image: ImageRef, corpus: Corpus, index: VectorIndex,
                  k: int, provider) -> list[StageOneResult]:
    """Coarse entity search: query image against the summary index."""
    query_vec = provider.embed_image([query_image])[0]
    hits = index.search(query_vec, k)
    for hit in hits:
        if hit.record_id not in corpus:
            raise PipelineError(
                f"stage1: index entry {hit.record_id!r} missing from corpus"
            )
    return [StageOneResult(h.record_id, h.score) for h in hits]


def entity_multimodal_score(query_image: ImageRef, question: str,
                            entity: EntityRecord, provider,
                            config: PipelineConfig,
                            query_matrix: Optional[np.ndarray] = None) -> StageTwoResult:
    """Late-interaction score of every section of one entity."""
    if not entity.sections:
        raise PipelineError(f"stage2: entity {entity.entity_id!r} has no sections")
    imageless = entity.main_image is None
    if imageless and config.imageless_policy == "demote":
        return StageTwoResult(
            entity_id=entity.entity_id,
            section_sims={s.index: 0.0 for s in entity.sections},
            sim_m_max=-np.inf,
            imageless=True,
        )
    candidate_image = PLACEHOLDER_IMAGE if imageless else entity.main_image
    if query_matrix is None:
        query_matrix = provider.embed_fused(query_image, question)
    section_sims = {
        section.index: maxsim(query_matrix, provider.embed_fused(candidate_image, section.body))
        for section in entity.sections
    }
    return StageTwoResult(
        entity_id=entity.entity_id,
        section_sims=section_sims,
        sim_m_max=max(section_sims.values()),
        imageless=imageless,
    )


def rerank_entities(stage1: Sequence[StageOneResult], query_image: ImageRef,
                    question: str, corpus: Corpus, provider,
                    config: PipelineConfig) -> list[StageTwoResult]:
    """Fuse stage-1 and fused-matrix similarities; sort candidates by it."""
    if not stage1:
        raise PipelineError("stage2: empty candidate set")
    query_matrix = provider.embed_fused(query_image, question)
    results = [
        entity_multimodal_score(
            query_image, question, corpus.get(r.entity_id), provider, config,
            query_matrix=query_matrix,
        )
        for r in stage1
    ]
    fused = fuse_scores(
        [r.sim_c for r in stage1],
        [r.sim_m_max for r in results],
        config.alpha,
        config.score_norm,
    )
    for result, score in zip(results, fused):
        result.fused = float(score)
    # ties broken by lower entity_id for determinism
    results.sort(key=lambda r: (-r.fused, r.entity_id))
    return results


def select_section(top1: StageTwoResult, question: str, corpus: Corpus,
                   provider, config: PipelineConfig) -> FinalContext:
    """Pick the best section of the winning entity.

    Reuses the per-section fused similarities carried over from stage 2
    and fuses them with the text pair score.
    """
    entity = corpus.get(top1.entity_id)
    if not entity.sections:
        raise PipelineError(f"stage3: entity {entity.entity_id!r} has no sections")
    sections = list(entity.sections)
    sim_m = [top1.section_sims[s.index] for s in sections]
    sim_t = provider.score_text_pairs(question, [s.body for s in sections])
    fused = fuse_scores(sim_m, sim_t, config.beta, config.score_norm)
    best = min(range(len(sections)), key=lambda i: (-fused[i], sections[i].index))
    return FinalContext(
        entity_id=entity.entity_id,
        entity_title=entity.title,
        section=sections[best],
        sim_m=sim_m[best],
        sim_t=sim_t[best],
        fused_section=float(fused[best]),
    )


def assemble_prompt(context: FinalContext, question: str, style: str) -> str:
    """Byte-deterministic prompt for the generator."""
    block = format_context_block(
        context.entity_title, context.section.heading, context.section.body
    )
    return render_answer_prompt(block, question, style)


def run_pipeline(sample: QuerySample, corpus: Corpus, index: VectorIndex,
                 provider, config: PipelineConfig,
                 with_generation: bool = False) -> PipelineResult:
    """Run stage1 -> rerank -> section selection (-> generate if asked)."""
    timings: dict[str, float] = {}

    start = time.perf_counter()
    stage1 = stage1_search(sample.image, corpus, index, config.k, provider)
    timings["stage1"] = (time.perf_counter() - start) * 1000.0
    if not stage1:
        raise PipelineError("stage1: empty index")

    start = time.perf_counter()
    stage2 = rerank_entities(stage1, sample.image, sample.question, corpus,
                             provider, config)
    timings["stage2"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    context = select_section(stage2[0], sample.question, corpus, provider, config)
    timings["stage3"] = (time.perf_counter() - start) * 1000.0

    answer = None
    if with_generation:
        start = time.perf_counter()
        prompt = assemble_prompt(context, sample.question, config.prompt_style)
        answer = provider.generate(prompt)
        timings["generate"] = (time.perf_counter() - start) * 1000.0

    return PipelineResult(
        sample_id=sample.sample_id,
        stage1=list(stage1),
        stage2=stage2,
        context=context,
        answer=answer,
        timings_ms=timings,
    )


def result_to_dict(result: PipelineResult, include_timings: bool = True) -> dict:
    """Batch-results JSONL line for one sample."""
    top1 = result.stage2[0]
    d = {
        "sample_id": result.sample_id,
        "stage1": [
            {"entity_id": r.entity_id, "sim_c": r.sim_c} for r in result.stage1
        ],
        "top1_entity": result.context.entity_id,
        "best_section_index": result.context.section.index,
        "scores": {
            "sim_c": next(
                (r.sim_c for r in result.stage1 if r.entity_id == top1.entity_id),
                None,
            ),
            "sim_m": result.context.sim_m,
            "sim_t": result.context.sim_t,
            "fused_entity": top1.fused,
            "fused_section": result.context.fused_section,
        },
        "answer": result.answer,
    }
    if include_timings:
        d["timings_ms"] = result.timings_ms
    return d
