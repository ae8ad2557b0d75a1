"""Inference backends.

The deterministic backend is a seeded stand-in with the same output
contracts as a real encoder stack: unit-norm dense vectors, 32-row
unit-norm fused matrices, bounded pair scores and deterministic text
completions. Real encoders (e.g. a CLIP-family dense model, a Q-Former
style fused model, a cross-encoder reranker) plug in by registering a
loader under their model identifier; the HTTP layer is backend-agnostic.

Pooling note: the dense embedding of a real encoder is model-specific
(CLS token vs mean pooling); each registered loader documents its own.
The deterministic backend has no pooling — vectors are drawn whole.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Protocol, Sequence

import numpy as np

from embed_service import ServiceError
from embed_service.config import ServiceConfig


class Backend(Protocol):
    def embed_text(self, texts: Sequence[str]) -> np.ndarray: ...
    def embed_image(self, keys: Sequence[str]) -> np.ndarray: ...
    def embed_fused(self, image_key: str, text: str) -> np.ndarray: ...
    def score_pairs(self, query: str, passages: Sequence[str]) -> list[float]: ...
    def generate(self, prompt: str, max_tokens: int) -> str: ...


def _seed(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def _unit_vector(seed: int, dims: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(dims)
    return v / np.linalg.norm(v)


class DeterministicBackend:
    """Pure function of its inputs; identical requests yield identical payloads."""

    def __init__(self, config: ServiceConfig):
        self.config = config

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([
            _unit_vector(_seed(t.encode("utf-8")), self.config.dense_dims)
            for t in texts
        ])

    def embed_image(self, keys: Sequence[str]) -> np.ndarray:
        return np.stack([
            _unit_vector(_seed(k.encode("utf-8")), self.config.dense_dims)
            for k in keys
        ])

    def embed_fused(self, image_key: str, text: str) -> np.ndarray:
        img_seed = _seed(image_key.encode("utf-8"))
        txt_seed = _seed(text.encode("utf-8"))
        rows = [
            np.random.default_rng(
                np.random.SeedSequence((img_seed, txt_seed, row))
            ).standard_normal(self.config.fused_dims)
            for row in range(self.config.fused_rows)
        ]
        matrix = np.stack(rows)
        return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)

    def score_pairs(self, query: str, passages: Sequence[str]) -> list[float]:
        q_tokens = set(query.lower().split())
        scores = []
        for passage in passages:
            p_tokens = set(passage.lower().split())
            union = q_tokens | p_tokens
            scores.append(len(q_tokens & p_tokens) / len(union) if union else 0.0)
        return scores

    def generate(self, prompt: str, max_tokens: int) -> str:
        # rough 4-chars-per-token budget, floor of one token
        return "ECHO:" + prompt[: max(max_tokens, 1) * 4][:64]


_LOADERS: dict[str, Callable[[ServiceConfig], Backend]] = {
    "deterministic": DeterministicBackend,
}


def register_loader(model_id: str, loader: Callable[[ServiceConfig], Backend]) -> None:
    _LOADERS[model_id] = loader


def load_backend(config: ServiceConfig) -> Backend:
    """Instantiate the configured backend; unknown models refuse to start."""
    models = {config.dense_model, config.fused_model,
              config.scorer_model, config.generator_model}
    unknown = sorted(m for m in models if m not in _LOADERS)
    if unknown:
        raise ServiceError(f"unknown model identifiers: {unknown}; "
                           f"registered: {sorted(_LOADERS)}")
    if len(models) > 1:
        raise ServiceError("mixed backends per role are not supported yet; "
                           "configure one model identifier for all roles")
    return _LOADERS[models.pop()](config)
