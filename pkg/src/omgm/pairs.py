"""Contrastive training-pair construction and loss for the fused reranker.

Each training sample becomes N image-section pairs (default 16): one
positive (the query-nearest image of the gold entity with the gold
evidence section), up to three hard negatives from other sections of the
gold article (longest bodies first, a deterministic difficulty proxy),
and candidate negatives built from (main image, first section) of
distinct stage-1 candidates drawn with the run seed.

The loss is the temperature-scaled InfoNCE over the N pair scores,
computed with log-sum-exp stabilization. Optimization itself happens
outside this package; pair sets are exported as JSONL for external
fine-tuning.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from omgm import OmgmError
from omgm.corpus import Corpus, ImageRef, QuerySample
from omgm.pipeline import StageOneResult


class PairConstructionError(OmgmError):
    """Missing gold labels or a corpus too small to fill N pairs."""


@dataclass(frozen=True)
class ContrastivePair:
    entity_id: str
    section_index: int
    image: ImageRef


@dataclass
class ContrastivePairSet:
    sample_id: str
    pairs: list[ContrastivePair]
    positive_index: int
    hard_negative_count: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "positive_index": self.positive_index,
            "pairs": [
                {
                    "entity_id": p.entity_id,
                    "section_index": p.section_index,
                    "image_ref": p.image.to_dict(),
                }
                for p in self.pairs
            ],
            "hard_negative_count": self.hard_negative_count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContrastivePairSet":
        return cls(
            sample_id=d["sample_id"],
            positive_index=d["positive_index"],
            pairs=[
                ContrastivePair(
                    entity_id=p["entity_id"],
                    section_index=p["section_index"],
                    image=ImageRef.from_dict(p["image_ref"]),
                )
                for p in d["pairs"]
            ],
            hard_negative_count=d.get("hard_negative_count", 0),
            seed=d.get("seed", 0),
        )


def select_positive_image(query_image: ImageRef, candidates: Sequence[ImageRef],
                          provider) -> ImageRef:
    """Candidate image maximizing inner product with the query image.

    Ties keep the first candidate.
    """
    if not candidates:
        raise PairConstructionError("no candidate images to select from")
    if len(candidates) == 1:
        return candidates[0]
    query_vec = provider.embed_image([query_image])[0]
    scores = provider.embed_image(list(candidates)) @ query_vec
    return candidates[int(np.argmax(scores))]


def build_pairs(sample: QuerySample, stage1: Sequence[StageOneResult],
                corpus: Corpus, provider, pair_count: int = 16,
                max_hard_negatives: int = 3, seed: int = 0) -> ContrastivePairSet:
    """Build one N-pair contrastive set for a labeled sample."""
    if sample.gold_entity_id is None or sample.gold_section_index is None:
        raise PairConstructionError(
            f"sample {sample.sample_id!r} lacks gold entity/section labels"
        )
    gold = corpus.get(sample.gold_entity_id)
    if sample.gold_section_index >= len(gold.sections):
        raise PairConstructionError(
            f"sample {sample.sample_id!r}: gold section "
            f"{sample.gold_section_index} missing from {gold.entity_id!r}"
        )
    if not gold.images:
        raise PairConstructionError(
            f"gold entity {gold.entity_id!r} has no images for the positive pair"
        )

    positive = ContrastivePair(
        entity_id=gold.entity_id,
        section_index=sample.gold_section_index,
        image=select_positive_image(sample.image, gold.images, provider),
    )

    # hard negatives: other sections of the gold article, longest first
    others = sorted(
        (s for s in gold.sections if s.index != sample.gold_section_index),
        key=lambda s: (-len(s.body), s.index),
    )
    gold_neg_image = gold.images[0]
    hard = [
        ContrastivePair(gold.entity_id, s.index, gold_neg_image)
        for s in others[:max_hard_negatives]
    ]

    # candidate negatives: (main image, first section) of distinct
    # stage-1 candidates other than the gold entity
    pool = []
    for r in stage1:
        if r.entity_id == gold.entity_id:
            continue
        entity = corpus.get(r.entity_id)
        if not entity.sections or not entity.images:
            continue
        pool.append(ContrastivePair(entity.entity_id, entity.sections[0].index,
                                    entity.images[0]))
    needed = pair_count - 1 - len(hard)
    if needed > len(pool):
        raise PairConstructionError(
            f"sample {sample.sample_id!r}: need {needed} candidate negatives "
            f"but only {len(pool)} available (short by {needed - len(pool)})"
        )
    rng = random.Random(seed)
    randoms = rng.sample(pool, needed)

    pairs = [positive] + hard + randoms
    rng.shuffle(pairs)
    return ContrastivePairSet(
        sample_id=sample.sample_id,
        pairs=pairs,
        positive_index=pairs.index(positive),
        hard_negative_count=len(hard),
        seed=seed,
    )


def contrastive_loss(scores: Sequence[float], positive_index: int,
                     temperature: float = 1.0) -> float:
    """InfoNCE: -log(exp(s+/T) / sum_j exp(s_j/T)), stabilized."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least 2 scores")
    if not 0 <= positive_index < arr.size:
        raise ValueError(f"positive_index {positive_index} out of range")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    logits = arr / temperature
    return float(logsumexp(logits) - logits[positive_index])


def export_pairs(sets: Sequence[ContrastivePairSet], path) -> None:
    """Stream pair sets to JSONL, one set per line."""
    if not sets:
        raise ValueError("no pair sets to export")
    with open(path, "w", encoding="utf-8") as fh:
        for ps in sets:
            fh.write(json.dumps(ps.to_dict(), sort_keys=True,
                                separators=(",", ":"), ensure_ascii=False))
            fh.write("\n")


def load_pairs(path) -> list[ContrastivePairSet]:
    with open(path, "r", encoding="utf-8") as fh:
        return [ContrastivePairSet.from_dict(json.loads(line))
                for line in fh if line.strip()]
