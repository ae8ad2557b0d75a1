"""Uniform boundary to all learned components.

Four capabilities sit behind one interface: dense text/image embedding,
fused multimodal token-matrix encoding, text pair scoring, and text
generation. Two implementations are provided:

* :class:`DeterministicProvider` -- a pure function of its inputs, used for
  tests and synthetic benchmarks. Vectors are drawn from a generator seeded
  by a 64-bit hash of the input bytes, then L2-normalized, so two inputs
  with the same bytes always embed identically (this is what lets test
  corpora "plant" a known best match).
* :class:`HttpProvider` -- client for the model-serving wire protocol:
  POST /v1/embed, /v1/score_pairs, /v1/generate.

All vectors are float64 and unit-norm; fused matrices always have 32 rows,
each row unit-norm.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import requests

from omgm import OmgmError
from omgm.corpus import ImageRef

FUSED_ROWS = 32

#: Fixed stand-in image for entities lacking a main image (zero seed).
PLACEHOLDER_IMAGE = ImageRef(ref_id="__placeholder__", uri="placeholder:zero")


class ProviderError(OmgmError):
    """Base class for provider failures."""


class TransportError(ProviderError):
    """The provider endpoint could not be reached."""


class ProtocolError(ProviderError):
    """The provider responded, but outside the wire contract."""


class ImageResolutionError(ProviderError):
    """An image ref carries neither a URI nor an inline payload."""


def seed64(data: bytes) -> int:
    """64-bit content hash used to seed deterministic embeddings."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ProviderError("cannot normalize a zero vector")
    return v / norm


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not t:
            raise ValueError("every text must be non-empty")


def _check_image(ref: ImageRef) -> None:
    if not ref.resolvable:
        raise ImageResolutionError(f"image ref {ref.ref_id!r} has no uri or payload")


class DeterministicProvider:
    """Offline provider: embeddings are a pure function of input bytes.

    Texts are seeded by their UTF-8 bytes, images by their ref_id bytes
    (the placeholder image uses seed 0). Fused matrices seed each of the
    32 rows by (image seed, text seed, row index), so identical
    (image, text) pairs produce identical matrices.

    Text pair scoring is the Jaccard overlap of lowercase token sets, in
    [0, 1]. Generation echoes a fixed transform of the prompt, for
    pipeline tests only.
    """

    def __init__(self, dims: int = 256, fused_dims: int = 64,
                 max_text_chars: int = 8192):
        self.dims = dims
        self.fused_dims = fused_dims
        self.max_text_chars = max_text_chars
        #: texts truncated to ``max_text_chars``, recorded for run metadata
        self.truncations: list[str] = []

    def _text_seed(self, text: str) -> int:
        if len(text) > self.max_text_chars:
            self.truncations.append(text[:64])
            text = text[: self.max_text_chars]
        return seed64(text.encode("utf-8"))

    def _image_seed(self, ref: ImageRef) -> int:
        _check_image(ref)
        if ref.ref_id == PLACEHOLDER_IMAGE.ref_id:
            return 0
        return seed64(ref.ref_id.encode("utf-8"))

    def _dense(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return _unit(rng.standard_normal(self.dims))

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        _check_texts(texts)
        return np.stack([self._dense(self._text_seed(t)) for t in texts])

    def embed_image(self, images: Sequence[ImageRef]) -> np.ndarray:
        if not images:
            raise ValueError("images must be non-empty")
        return np.stack([self._dense(self._image_seed(ref)) for ref in images])

    def embed_fused(self, image: ImageRef, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        img_seed = self._image_seed(image)
        txt_seed = self._text_seed(text)
        rows = []
        for row in range(FUSED_ROWS):
            rng = np.random.default_rng(np.random.SeedSequence((img_seed, txt_seed, row)))
            rows.append(_unit(rng.standard_normal(self.fused_dims)))
        return np.stack(rows)

    @staticmethod
    def _tokens(text: str) -> set[str]:
        return set(text.lower().split())

    def score_text_pairs(self, question: str, passages: Sequence[str]) -> list[float]:
        if not passages:
            raise ValueError("passages must be non-empty")
        q = self._tokens(question)
        scores = []
        for p in passages:
            t = self._tokens(p)
            union = q | t
            scores.append(len(q & t) / len(union) if union else 0.0)
        return scores

    def score_pairs(self, question: str, passages: Sequence[str]) -> list[float]:
        return self.score_text_pairs(question, passages)

    def generate(self, prompt: str, max_tokens: int = 64) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        return "ECHO:" + prompt[:64]


@dataclass
class ProviderEndpoint:
    """Connection settings for an HTTP provider."""

    base_url: str
    timeout: float = 30.0
    max_batch: int = 64
    retries: int = 2

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        self.base_url = self.base_url.rstrip("/")


class HttpProvider:
    """Client for the /v1 embedding wire protocol.

    Requests above ``max_batch`` are split client-side; responses are
    validated for shape (uniform dims, 32 fused rows) before use.
    """

    def __init__(self, endpoint: ProviderEndpoint, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self._session = session or requests.Session()
        self.dims: Optional[int] = None
        self.fused_dims: Optional[int] = None

    def _post(self, path: str, body: dict) -> dict:
        url = self.endpoint.base_url + path
        last_exc: Exception | None = None
        for _ in range(self.endpoint.retries + 1):
            try:
                resp = self._session.post(url, json=body, timeout=self.endpoint.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code != 200:
                try:
                    err = resp.json()["error"]
                    raise ProtocolError(f"{err['code']}: {err['message']}")
                except (ValueError, KeyError):
                    raise ProtocolError(f"HTTP {resp.status_code} from {path}") from None
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response from {path}") from exc
        raise TransportError(f"cannot reach {url}: {last_exc}")

    def _embed_batches(self, modality: str, items: list[dict]) -> list:
        out: list = []
        key = "matrices" if modality == "fused" else "vectors"
        for start in range(0, len(items), self.endpoint.max_batch):
            chunk = items[start : start + self.endpoint.max_batch]
            resp = self._post("/v1/embed", {"modality": modality, "items": chunk})
            if key not in resp or "dims" not in resp:
                raise ProtocolError(f"embed response missing '{key}' or 'dims'")
            dims = int(resp["dims"])
            if modality == "fused":
                if int(resp.get("rows", -1)) != FUSED_ROWS:
                    raise ProtocolError(f"fused response must have rows={FUSED_ROWS}")
                if self.fused_dims is None:
                    self.fused_dims = dims
                elif self.fused_dims != dims:
                    raise ProtocolError("fused dims changed across batches")
            else:
                if self.dims is None:
                    self.dims = dims
                elif self.dims != dims:
                    raise ProtocolError("dense dims changed across batches")
            out.extend(resp[key])
        return out

    @staticmethod
    def _image_item(ref: ImageRef) -> dict:
        _check_image(ref)
        if ref.bytes_b64 is not None:
            return {"image_b64": ref.bytes_b64}
        return {"image_uri": ref.uri}

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        _check_texts(texts)
        vectors = self._embed_batches("text", [{"text": t} for t in texts])
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise ProtocolError("embed response shape mismatch")
        return arr

    def embed_image(self, images: Sequence[ImageRef]) -> np.ndarray:
        if not images:
            raise ValueError("images must be non-empty")
        vectors = self._embed_batches("image", [self._image_item(r) for r in images])
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(images):
            raise ProtocolError("embed response shape mismatch")
        return arr

    def embed_fused(self, image: ImageRef, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        item = self._image_item(image)
        item["text"] = text
        matrices = self._embed_batches("fused", [item])
        arr = np.asarray(matrices[0], dtype=np.float64)
        if arr.size % FUSED_ROWS != 0:
            raise ProtocolError("fused matrix size not divisible by 32 rows")
        return arr.reshape(FUSED_ROWS, -1)

    def score_text_pairs(self, question: str, passages: Sequence[str]) -> list[float]:
        if not passages:
            raise ValueError("passages must be non-empty")
        resp = self._post("/v1/score_pairs", {"query": question, "passages": list(passages)})
        scores = resp.get("scores")
        if scores is None or len(scores) != len(passages):
            raise ProtocolError("score_pairs response shape mismatch")
        return [float(s) for s in scores]

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        resp = self._post("/v1/generate", {"prompt": prompt, "max_tokens": max_tokens})
        text = resp.get("text")
        if not text:
            raise ProtocolError("generate returned an empty completion")
        return text


class CachingProvider:
    """Memoizing wrapper; semantically invisible for pure providers.

    Used by sweeps so embeddings are computed once across grid points.
    """

    def __init__(self, inner):
        self.inner = inner
        self._text: dict[str, np.ndarray] = {}
        self._image: dict[str, np.ndarray] = {}
        self._fused: dict[tuple[str, str], np.ndarray] = {}
        self._scores: dict[tuple[str, tuple[str, ...]], list[float]] = {}

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in texts if t not in self._text]
        if missing:
            vecs = self.inner.embed_text(missing)
            for t, v in zip(missing, vecs):
                self._text[t] = v
        return np.stack([self._text[t] for t in texts])

    def embed_image(self, images: Sequence[ImageRef]) -> np.ndarray:
        missing = [r for r in images if r.ref_id not in self._image]
        if missing:
            vecs = self.inner.embed_image(missing)
            for r, v in zip(missing, vecs):
                self._image[r.ref_id] = v
        return np.stack([self._image[r.ref_id] for r in images])

    def embed_fused(self, image: ImageRef, text: str) -> np.ndarray:
        key = (image.ref_id, text)
        if key not in self._fused:
            self._fused[key] = self.inner.embed_fused(image, text)
        return self._fused[key]

    def score_text_pairs(self, question: str, passages: Sequence[str]) -> list[float]:
        key = (question, tuple(passages))
        if key not in self._scores:
            self._scores[key] = self.inner.score_text_pairs(question, passages)
        return self._scores[key]

    def generate(self, prompt: str, max_tokens: int = 256) -> str:
        return self.inner.generate(prompt, max_tokens=max_tokens)
