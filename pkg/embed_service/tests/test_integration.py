"""End-to-end: the retrieval engine's HTTP client against a live service.

Exercises only public surfaces on both sides — the omgm provider client
and the service's wire protocol — over a real socket.
"""

import threading
import time

import numpy as np
import pytest

uvicorn = pytest.importorskip("uvicorn")

from omgm.corpus import ImageRef
from omgm.providers import HttpProvider, ProtocolError, ProviderEndpoint

from embed_service.app import create_app
from embed_service.config import ServiceConfig


@pytest.fixture(scope="module")
def base_url():
    app = create_app(ServiceConfig(dense_dims=32, fused_dims=16, max_batch=3))
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0,
                                           log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("service did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


@pytest.fixture
def client(base_url):
    return HttpProvider(ProviderEndpoint(base_url=base_url))


def test_dense_embeddings_round_trip(client):
    vectors = client.embed_text(["alpha", "beta"])
    assert vectors.shape == (2, 32)
    assert np.allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(vectors, client.embed_text(["alpha", "beta"]))


def test_image_and_fused(client):
    ref = ImageRef(ref_id="it-1", uri="synthetic://it-1")
    image_vecs = client.embed_image([ref])
    assert image_vecs.shape == (1, 32)
    matrix = client.embed_fused(ref, "a question")
    assert matrix.shape == (32, 16)
    assert np.allclose(np.linalg.norm(matrix, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(matrix, client.embed_fused(ref, "a question"))


def test_client_batching_respects_server_limit(base_url):
    # max_batch=3 on the server; client chunks at 3 so 7 texts succeed
    client = HttpProvider(ProviderEndpoint(base_url=base_url, max_batch=3))
    vectors = client.embed_text([f"text {i}" for i in range(7)])
    assert vectors.shape == (7, 32)


def test_oversized_batch_surfaces_as_protocol_error(base_url):
    greedy = HttpProvider(ProviderEndpoint(base_url=base_url, max_batch=10))
    with pytest.raises(ProtocolError, match="batch_too_large"):
        greedy.embed_text([f"text {i}" for i in range(5)])


def test_scoring_and_generation(client):
    scores = client.score_text_pairs("red fox den", ["red fox", "blue whale"])
    assert scores[0] > scores[1]
    assert client.generate("hello service").startswith("ECHO:")
