"""Coarse-to-fine multimodal retrieval engine for knowledge-based VQA.

The engine runs a three-stage retrieval over a multimodal knowledge base:

1. coarse entity search matching the query image against entity summaries,
2. hybrid reranking of the top-k entities with late-interaction (MaxSim)
   scoring over fused image+text token matrices, fused with the stage-1
   similarity,
3. fine-grained section selection combining the stage-2 section similarity
   with a text cross-encoder score.

It also ships the contrastive training-pair toolkit used to fine-tune the
fused reranker externally, and an evaluation harness (recall@K, VQA and
relaxed accuracy, hyperparameter sweeps, latency reporting).
"""

__version__ = "0.1.0"


class OmgmError(Exception):
    """Base class for all domain errors raised by this package."""
