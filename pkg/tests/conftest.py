"""Shared fixtures: deterministic provider and synthetic planted corpora.

Planting convention: the deterministic provider embeds a text and an
image identically whenever the text equals the image's ref_id, and two
fused matrices are identical when both the image ref and the text match.
Synthetic corpora exploit this to make the gold entity/section the
unique exact match at every stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest

from omgm.corpus import Corpus, EntityRecord, ImageRef, QuerySample, SectionRecord
from omgm.index import VectorIndex, build_index
from omgm.providers import DeterministicProvider


def entity_id(i: int) -> str:
    return f"e{i:04d}"


def image_for(eid: str) -> ImageRef:
    return ImageRef(ref_id=f"img-{eid}", uri=f"synthetic://{eid}")


def make_entity(i: int, n_sections: int = 3, evidence: tuple[int, str] | None = None,
                imageless: bool = False, aux: int = 0) -> EntityRecord:
    eid = entity_id(i)
    bodies = [f"generic body text for {eid} section {j} nothing special here"
              for j in range(n_sections)]
    if evidence is not None:
        idx, question = evidence
        bodies[idx] = question
    sections = tuple(
        SectionRecord(index=j, heading=f"Part {j}", body=bodies[j])
        for j in range(n_sections)
    )
    return EntityRecord(
        entity_id=eid,
        title=f"Entity {i}",
        sections=sections,
        summary=f"img-{eid}",  # planted: summary embeds like the main image
        main_image=None if imageless else image_for(eid),
        aux_images=tuple(
            ImageRef(ref_id=f"aux-{eid}-{a}", uri=f"synthetic://{eid}/aux{a}")
            for a in range(aux)
        ),
    )


@dataclass
class Benchmark:
    corpus: Corpus
    samples: list[QuerySample]
    index: VectorIndex
    provider: DeterministicProvider


def make_planted_benchmark(n_entities: int = 100, n_queries: int = 20,
                           n_sections: int = 3, aux: int = 0) -> Benchmark:
    """Every query's gold entity and section are exact planted matches."""
    provider = DeterministicProvider()
    questions = {
        i: f"what is the distinguishing fact about {entity_id(i)} marker {i * 7919}"
        for i in range(n_queries)
    }
    entities = []
    for i in range(n_entities):
        if i < n_queries:
            entities.append(make_entity(i, n_sections,
                                        evidence=(i % n_sections, questions[i]),
                                        aux=aux))
        else:
            entities.append(make_entity(i, n_sections, aux=aux))
    corpus = Corpus(entities)
    samples = [
        QuerySample(
            sample_id=f"s{i:04d}",
            image=image_for(entity_id(i)),
            question=questions[i],
            gold_entity_id=entity_id(i),
            gold_section_index=i % n_sections,
            valid_answers=("planted answer",),
        )
        for i in range(n_queries)
    ]
    summaries = [e.summary for e in entities]
    vectors = provider.embed_text(summaries)
    index = build_index([(e.entity_id, v) for e, v in zip(entities, vectors)])
    return Benchmark(corpus, samples, index, provider)


def _rotate_towards(query: np.ndarray, cosine: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector with the given inner product against the unit query."""
    u = rng.standard_normal(query.shape[0])
    u -= (u @ query) * query
    u /= np.linalg.norm(u)
    return cosine * query + math.sqrt(1.0 - cosine * cosine) * u


def make_noisy_benchmark(n_entities: int, distractors_per_sample: list[int],
                         n_sections: int = 3, seed: int = 7,
                         gold_cosine: float = 0.9,
                         distractor_cosines: tuple[float, float] = (0.91, 0.95)) -> Benchmark:
    """Benchmark where stage-1 ranks the gold below planted distractors.

    Sample i's gold summary vector sits at ``gold_cosine`` from the query
    vector; ``distractors_per_sample[i]`` distractor entities sit closer
    (cosines in ``distractor_cosines``), so the gold's stage-1 rank is
    1 + that count. Fused features stay planted on the gold only, so
    stage-2 reranking can recover it.
    """
    provider = DeterministicProvider()
    rng = np.random.default_rng(seed)
    n_queries = len(distractors_per_sample)
    n_distractors = sum(distractors_per_sample)
    assert n_queries + n_distractors <= n_entities, "corpus too small for the plan"

    questions = {
        i: f"unique probe question number {i} about {entity_id(i)} token {i * 104729}"
        for i in range(n_queries)
    }
    entities = []
    for i in range(n_entities):
        if i < n_queries:
            entities.append(make_entity(i, n_sections, evidence=(i % n_sections, questions[i])))
        else:
            entities.append(make_entity(i, n_sections))
    corpus = Corpus(entities)

    samples = []
    entries: dict[str, np.ndarray] = {}
    next_distractor = n_queries
    for i in range(n_queries):
        query_image = image_for(entity_id(i))
        q = provider.embed_image([query_image])[0]
        entries[entity_id(i)] = _rotate_towards(q, gold_cosine, rng)
        m = distractors_per_sample[i]
        lo, hi = distractor_cosines
        for j in range(m):
            cosine = lo + (hi - lo) * (j / max(m - 1, 1))
            entries[entity_id(next_distractor)] = _rotate_towards(q, cosine, rng)
            next_distractor += 1
        samples.append(QuerySample(
            sample_id=f"s{i:04d}",
            image=query_image,
            question=questions[i],
            gold_entity_id=entity_id(i),
            gold_section_index=i % n_sections,
            valid_answers=("planted answer",),
        ))
    # remaining entities are fillers with unrelated random embeddings
    for i in range(next_distractor, n_entities):
        v = rng.standard_normal(provider.dims)
        entries[entity_id(i)] = v / np.linalg.norm(v)
    index = build_index([(e.entity_id, entries[e.entity_id]) for e in entities])
    return Benchmark(corpus, samples, index, provider)


@pytest.fixture
def provider() -> DeterministicProvider:
    return DeterministicProvider()


@pytest.fixture
def small_benchmark() -> Benchmark:
    return make_planted_benchmark(n_entities=30, n_queries=6)
