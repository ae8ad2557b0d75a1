import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omgm.corpus import Corpus, ImageRef, QuerySample
from omgm.pairs import (
    ContrastivePairSet,
    PairConstructionError,
    build_pairs,
    contrastive_loss,
    export_pairs,
    load_pairs,
    select_positive_image,
)
from omgm.pipeline import PipelineConfig, stage1_search
from tests.conftest import entity_id, image_for, make_entity, make_planted_benchmark


def stage1_for(benchmark, sample, k=30):
    return stage1_search(sample.image, benchmark.corpus, benchmark.index,
                         k, benchmark.provider)


class TestSelectPositiveImage:
    def test_exact_match_wins(self, provider):
        query = image_for(entity_id(3))
        candidates = [image_for(entity_id(1)), query, image_for(entity_id(2))]
        assert select_positive_image(query, candidates, provider) == query

    def test_single_candidate_shortcut(self, provider):
        only = image_for(entity_id(9))
        assert select_positive_image(image_for(entity_id(1)), [only], provider) == only

    def test_empty_candidates(self, provider):
        with pytest.raises(PairConstructionError):
            select_positive_image(image_for(entity_id(0)), [], provider)


class TestBuildPairs:
    def test_composition_five_sections(self):
        # gold has 5 sections: 1 positive + 3 hard + 12 random = 16
        b = make_planted_benchmark(n_entities=30, n_queries=4, n_sections=5)
        sample = b.samples[0]
        ps = build_pairs(sample, stage1_for(b, sample), b.corpus, b.provider, seed=11)
        assert len(ps.pairs) == 16
        assert ps.hard_negative_count == 3
        positive = ps.pairs[ps.positive_index]
        assert positive.entity_id == sample.gold_entity_id
        assert positive.section_index == sample.gold_section_index
        gold_pairs = [p for p in ps.pairs if p.entity_id == sample.gold_entity_id]
        assert len(gold_pairs) == 4  # positive + 3 hard negatives
        others = [p for p in ps.pairs if p.entity_id != sample.gold_entity_id]
        assert len(others) == 12
        assert len({p.entity_id for p in others}) == 12  # distinct candidates
        assert all(p.section_index == 0 for p in others)

    def test_composition_two_sections(self):
        # only 1 hard negative available, so 14 candidate negatives fill in
        b = make_planted_benchmark(n_entities=30, n_queries=4, n_sections=2)
        sample = b.samples[1]
        ps = build_pairs(sample, stage1_for(b, sample), b.corpus, b.provider, seed=11)
        assert len(ps.pairs) == 16
        assert ps.hard_negative_count == 1
        others = [p for p in ps.pairs if p.entity_id != sample.gold_entity_id]
        assert len(others) == 14

    def test_hard_negatives_longest_first(self, provider):
        bodies = ["short", "the very longest body text of them all", "middle size"]
        entity = make_entity(0, n_sections=3)
        entity = type(entity)(
            entity_id=entity.entity_id, title=entity.title,
            sections=tuple(
                type(s)(index=s.index, heading=s.heading, body=bodies[s.index])
                for s in entity.sections
            ),
            summary=entity.summary, main_image=entity.main_image,
        )
        b = make_planted_benchmark(n_entities=30, n_queries=2, n_sections=3)
        corpus = Corpus([entity if e.entity_id == entity.entity_id else e
                         for e in b.corpus])
        sample = QuerySample(
            sample_id="s-hard", image=image_for(entity.entity_id), question="q",
            gold_entity_id=entity.entity_id, gold_section_index=0,
            valid_answers=("a",),
        )
        ps = build_pairs(sample, stage1_for(b, sample, k=20), corpus, provider,
                         max_hard_negatives=1, seed=0)
        hard = [p for p in ps.pairs
                if p.entity_id == entity.entity_id and p.section_index != 0]
        assert [p.section_index for p in hard] == [1]  # longest body wins

    def test_seed_determinism_and_variation(self):
        b = make_planted_benchmark(n_entities=40, n_queries=2, n_sections=4)
        sample = b.samples[0]
        s1 = stage1_for(b, sample)
        a = build_pairs(sample, s1, b.corpus, b.provider, seed=5)
        b2 = build_pairs(sample, s1, b.corpus, b.provider, seed=5)
        c = build_pairs(sample, s1, b.corpus, b.provider, seed=6)
        assert a.pairs == b2.pairs and a.positive_index == b2.positive_index
        assert a.pairs != c.pairs

    def test_gold_section_never_a_negative(self):
        b = make_planted_benchmark(n_entities=40, n_queries=6, n_sections=4)
        for sample in b.samples:
            ps = build_pairs(sample, stage1_for(b, sample), b.corpus, b.provider,
                             seed=3)
            for i, p in enumerate(ps.pairs):
                if i == ps.positive_index:
                    continue
                assert not (p.entity_id == sample.gold_entity_id
                            and p.section_index == sample.gold_section_index)

    def test_missing_gold_labels(self, small_benchmark):
        b = small_benchmark
        sample = QuerySample(sample_id="s-x", image=b.samples[0].image,
                             question="q", valid_answers=("a",))
        with pytest.raises(PairConstructionError, match="gold"):
            build_pairs(sample, stage1_for(b, sample), b.corpus, b.provider)

    def test_pool_too_small(self):
        b = make_planted_benchmark(n_entities=8, n_queries=1, n_sections=2)
        sample = b.samples[0]
        with pytest.raises(PairConstructionError, match="short by"):
            build_pairs(sample, stage1_for(b, sample, k=8), b.corpus, b.provider)

    def test_custom_pair_count(self):
        b = make_planted_benchmark(n_entities=30, n_queries=2, n_sections=3)
        sample = b.samples[0]
        ps = build_pairs(sample, stage1_for(b, sample), b.corpus, b.provider,
                         pair_count=8, seed=1)
        assert len(ps.pairs) == 8


class TestContrastiveLoss:
    def test_uniform_scores_is_log_n(self):
        # ln 16 computed independently: 2.772588722239781
        loss = contrastive_loss([0.0] * 16, positive_index=5)
        assert loss == pytest.approx(2.772588722239781, abs=1e-12)

    def test_dominant_positive_near_zero(self):
        scores = [100.0] + [0.0] * 15
        assert contrastive_loss(scores, 0) < 1e-40

    def test_hand_computed_two_scores(self):
        # -log(e^2 / (e^2 + e^1)) = log(1 + e^-1) with s=[1.0,0.5], T=0.5
        loss = contrastive_loss([1.0, 0.5], 0, temperature=0.5)
        assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert loss == pytest.approx(0.31326168751822286, abs=1e-12)

    def test_dominant_negative_large_loss(self):
        assert contrastive_loss([0.0, 50.0], 0) == pytest.approx(50.0, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(
        scores=st.lists(st.floats(-20, 20), min_size=2, max_size=32),
        seed=st.integers(0, 1000),
        temp=st.floats(0.05, 5.0),
    )
    def test_properties(self, scores, seed, temp):
        pi = seed % len(scores)
        loss = contrastive_loss(scores, pi, temp)
        # nonnegative, bounded by log N when positive is the max
        assert loss >= 0.0
        if scores[pi] == max(scores):
            assert loss <= math.log(len(scores)) + 1e-9
        # permutation equivariance
        perm = list(range(len(scores)))
        rng = np.random.default_rng(seed)
        rng.shuffle(perm)
        permuted = [scores[j] for j in perm]
        assert contrastive_loss(permuted, perm.index(pi), temp) == pytest.approx(
            loss, abs=1e-9)

    def test_monotone_in_positive_score(self):
        base = [0.0, 1.0, 2.0]
        low = contrastive_loss(base, 0)
        high = contrastive_loss([0.5, 1.0, 2.0], 0)
        assert high < low

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            contrastive_loss([1.0], 0)
        with pytest.raises(ValueError):
            contrastive_loss([1.0, 2.0], 2)
        with pytest.raises(ValueError):
            contrastive_loss([1.0, 2.0], 0, temperature=0.0)
        with pytest.raises(ValueError):
            contrastive_loss([1.0, float("nan")], 0)


class TestExport:
    def test_round_trip(self, tmp_path):
        b = make_planted_benchmark(n_entities=30, n_queries=3, n_sections=3)
        sets = [build_pairs(s, stage1_for(b, s), b.corpus, b.provider, seed=2)
                for s in b.samples]
        path = tmp_path / "pairs.jsonl"
        export_pairs(sets, path)
        loaded = load_pairs(path)
        assert len(loaded) == 3
        for original, back in zip(sets, loaded):
            assert back.sample_id == original.sample_id
            assert back.positive_index == original.positive_index
            assert back.pairs == original.pairs
            assert back.seed == original.seed
            assert back.hard_negative_count == original.hard_negative_count

    def test_export_is_deterministic(self, tmp_path):
        b = make_planted_benchmark(n_entities=30, n_queries=2, n_sections=3)
        sets = [build_pairs(s, stage1_for(b, s), b.corpus, b.provider, seed=2)
                for s in b.samples]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_pairs(sets, p1)
        export_pairs(sets, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_export_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_pairs([], tmp_path / "pairs.jsonl")
