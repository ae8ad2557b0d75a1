"""HTTP layer: the /v1 wire protocol over a pluggable backend.

All numbers are serialized as 64-bit floats (Python floats in JSON).
Every error response, including request validation, uses the envelope
{"error": {"code", "message"}} with a non-200 status.
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from embed_service import ServiceError, __version__
from embed_service.backends import load_backend
from embed_service.config import ServiceConfig


class EmbedItem(BaseModel):
    text: Optional[str] = None
    image_uri: Optional[str] = None
    image_b64: Optional[str] = None


class EmbedRequest(BaseModel):
    modality: Literal["text", "image", "fused"]
    items: list[EmbedItem] = Field(min_length=1)


class ScorePairsRequest(BaseModel):
    query: str = Field(min_length=1)
    passages: list[str] = Field(min_length=1)


class GenerateRequest(BaseModel):
    prompt: str = Field(min_length=1)
    max_tokens: int = Field(default=64, ge=1)


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


class BadItem(ServiceError):
    """Request item missing required fields for its modality."""


def _image_key(item: EmbedItem, position: int) -> str:
    key = item.image_uri or item.image_b64
    if not key:
        raise BadItem(f"item {position} needs image_uri or image_b64")
    return key


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    config = config or ServiceConfig()
    backend = load_backend(config)  # model load failure refuses to start
    app = FastAPI(title="embed-service", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def _on_validation(_: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        return _error(400, "bad_request", f"{where}: {first.get('msg', 'invalid')}")

    @app.exception_handler(BadItem)
    async def _on_bad_item(_: Request, exc: BadItem):
        return _error(400, "bad_request", str(exc))

    def _truncate(texts: list[str]) -> tuple[list[str], list[bool]]:
        flags = [len(t) > config.max_text_chars for t in texts]
        return [t[: config.max_text_chars] for t in texts], flags

    @app.post("/v1/embed")
    def embed(req: EmbedRequest):
        if len(req.items) > config.max_batch:
            return _error(413, "batch_too_large",
                          f"{len(req.items)} items exceeds max_batch={config.max_batch}")
        if req.modality == "text":
            missing = [i for i, item in enumerate(req.items) if not item.text]
            if missing:
                return _error(400, "bad_request",
                              f"items {missing} lack 'text' for modality=text")
            texts, truncated = _truncate([item.text for item in req.items])
            vectors = backend.embed_text(texts)
            body = {"dims": config.dense_dims, "vectors": vectors.tolist()}
            if any(truncated):
                body["truncated"] = truncated
            return body
        if req.modality == "image":
            keys = [_image_key(item, i) for i, item in enumerate(req.items)]
            vectors = backend.embed_image(keys)
            return {"dims": config.dense_dims, "vectors": vectors.tolist()}
        # fused: each item needs both an image and a text
        missing = [i for i, item in enumerate(req.items) if not item.text]
        if missing:
            return _error(400, "bad_request",
                          f"items {missing} lack 'text' for modality=fused")
        texts, truncated = _truncate([item.text for item in req.items])
        matrices = [
            backend.embed_fused(_image_key(item, i), text)
            for i, (item, text) in enumerate(zip(req.items, texts))
        ]
        body = {
            "dims": config.fused_dims,
            "rows": config.fused_rows,
            "matrices": [m.ravel().tolist() for m in matrices],
        }
        if any(truncated):
            body["truncated"] = truncated
        return body

    @app.post("/v1/score_pairs")
    def score_pairs(req: ScorePairsRequest):
        return {"scores": backend.score_pairs(req.query, req.passages)}

    @app.post("/v1/generate")
    def generate(req: GenerateRequest):
        text = backend.generate(req.prompt, req.max_tokens)
        if not text:
            return _error(502, "empty_completion", "backend returned no text")
        return {"text": text}

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "dims": {"dense": config.dense_dims, "fused": config.fused_dims},
        }

    return app
