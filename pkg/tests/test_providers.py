import base64
import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from omgm.corpus import ImageRef
from omgm.providers import (
    PLACEHOLDER_IMAGE,
    CachingProvider,
    DeterministicProvider,
    HttpProvider,
    ImageResolutionError,
    ProtocolError,
    ProviderEndpoint,
    TransportError,
    seed64,
)


def ref(rid: str) -> ImageRef:
    return ImageRef(ref_id=rid, uri=f"synthetic://{rid}")


class TestEmbedText:
    def test_determinism(self, provider):
        a, b = provider.embed_text(["same text", "same text"])
        assert np.array_equal(a, b)

    def test_unit_norm(self, provider):
        vecs = provider.embed_text(["alpha", "beta", "gamma"])
        assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-6)

    def test_unrelated_strings_nearly_orthogonal(self, provider):
        # measured over 1000 random pairs: max |cosine| was 0.227 at dims=256
        a, b = provider.embed_text(["completely unrelated words", "zq xv jk mn"])
        assert abs(float(a @ b)) < 0.5

    def test_empty_inputs_rejected(self, provider):
        with pytest.raises(ValueError):
            provider.embed_text([])
        with pytest.raises(ValueError):
            provider.embed_text([""])

    def test_batch_equivalence(self, provider):
        texts = ["one", "two", "three"]
        batch = provider.embed_text(texts)
        singles = np.stack([provider.embed_text([t])[0] for t in texts])
        assert np.array_equal(batch, singles)

    def test_truncation_recorded(self):
        provider = DeterministicProvider(max_text_chars=10)
        long_text = "x" * 50
        a = provider.embed_text([long_text])[0]
        b = provider.embed_text([long_text[:10]])[0]
        assert np.array_equal(a, b)
        assert provider.truncations


class TestEmbedImage:
    def test_determinism(self, provider):
        a, b = provider.embed_image([ref("r1"), ref("r1")])
        assert np.array_equal(a, b)

    def test_planted_identity_with_text(self, provider):
        img = provider.embed_image([ref("img-e0007")])[0]
        txt = provider.embed_text(["img-e0007"])[0]
        assert float(img @ txt) == pytest.approx(1.0, abs=1e-9)

    def test_unresolvable_ref(self, provider):
        with pytest.raises(ImageResolutionError):
            provider.embed_image([ImageRef(ref_id="nowhere")])

    def test_placeholder_uses_zero_seed(self, provider):
        vec = provider.embed_image([PLACEHOLDER_IMAGE])[0]
        rng = np.random.default_rng(0)
        expected = rng.standard_normal(provider.dims)
        expected /= np.linalg.norm(expected)
        assert np.array_equal(vec, expected)


class TestEmbedFused:
    def test_shape_32_rows(self, provider):
        m = provider.embed_fused(ref("r1"), "a question")
        assert m.shape == (32, provider.fused_dims)

    def test_determinism(self, provider):
        a = provider.embed_fused(ref("r1"), "a question")
        b = provider.embed_fused(ref("r1"), "a question")
        assert np.array_equal(a, b)

    def test_row_norms(self, provider):
        m = provider.embed_fused(ref("r1"), "some text")
        assert np.allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-6)

    def test_distinct_inputs_distinct_matrices(self, provider):
        a = provider.embed_fused(ref("r1"), "text one")
        b = provider.embed_fused(ref("r1"), "text two")
        c = provider.embed_fused(ref("r2"), "text one")
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestScoreTextPairs:
    def test_self_overlap_is_one(self, provider):
        assert provider.score_text_pairs("red fox", ["red fox"]) == [1.0]

    def test_disjoint_is_zero(self, provider):
        assert provider.score_text_pairs("red fox", ["blue whale"]) == [0.0]

    def test_partial_overlap_ordering(self, provider):
        # jaccard("red fox den", "red fox") = 2/3; vs "blue whale" = 0
        scores = provider.score_text_pairs("red fox den", ["red fox", "blue whale"])
        assert scores[0] == pytest.approx(2 / 3)
        assert scores[0] > scores[1]

    def test_empty_passages_rejected(self, provider):
        with pytest.raises(ValueError):
            provider.score_text_pairs("q", [])


class TestGenerate:
    def test_echo_contract(self, provider):
        prompt = "p" * 100
        assert provider.generate(prompt) == "ECHO:" + "p" * 64

    def test_empty_prompt_rejected(self, provider):
        with pytest.raises(ValueError):
            provider.generate("")


# --- HTTP provider against a stub wire-protocol server ---------------------


class _StubHandler(BaseHTTPRequestHandler):
    """Minimal deterministic implementation of the /v1 wire protocol."""

    model = DeterministicProvider(dims=8, fused_dims=4)
    requests_seen: list[dict] = []
    break_fused_rows = False

    def log_message(self, *args):
        pass

    def _json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _item_key(self, item: dict) -> str:
        return item.get("image_uri") or item.get("image_b64") or ""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        req = json.loads(self.rfile.read(length))
        type(self).requests_seen.append({"path": self.path, "body": req})
        if self.path == "/v1/embed":
            modality = req["modality"]
            items = req["items"]
            if modality == "text":
                vecs = self.model.embed_text([i["text"] for i in items])
                self._json(200, {"dims": vecs.shape[1], "vectors": vecs.tolist()})
            elif modality == "image":
                refs = [ImageRef(ref_id=self._item_key(i), uri="stub://x") for i in items]
                vecs = self.model.embed_image(refs)
                self._json(200, {"dims": vecs.shape[1], "vectors": vecs.tolist()})
            else:
                mats = [
                    self.model.embed_fused(
                        ImageRef(ref_id=self._item_key(i), uri="stub://x"), i["text"]
                    )
                    for i in items
                ]
                rows = 31 if type(self).break_fused_rows else 32
                self._json(200, {
                    "dims": mats[0].shape[1], "rows": rows,
                    "matrices": [m.ravel().tolist() for m in mats],
                })
        elif self.path == "/v1/score_pairs":
            scores = self.model.score_text_pairs(req["query"], req["passages"])
            self._json(200, {"scores": scores})
        elif self.path == "/v1/generate":
            self._json(200, {"text": self.model.generate(req["prompt"])})
        else:
            self._json(404, {"error": {"code": "not_found", "message": self.path}})


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.requests_seen = []
    _StubHandler.break_fused_rows = False
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestHttpProvider:
    def test_embed_text_round_trip(self, stub_server):
        client = HttpProvider(ProviderEndpoint(base_url=stub_server))
        vecs = client.embed_text(["hello", "world"])
        assert vecs.shape == (2, 8)
        assert client.dims == 8
        expected = _StubHandler.model.embed_text(["hello", "world"])
        assert np.allclose(vecs, expected)

    def test_batching_splits_requests(self, stub_server):
        client = HttpProvider(ProviderEndpoint(base_url=stub_server, max_batch=2))
        client.embed_text(["a", "b", "c", "d", "e"])
        embed_calls = [r for r in _StubHandler.requests_seen if r["path"] == "/v1/embed"]
        assert [len(r["body"]["items"]) for r in embed_calls] == [2, 2, 1]

    def test_fused_shape_and_rows_check(self, stub_server):
        client = HttpProvider(ProviderEndpoint(base_url=stub_server))
        m = client.embed_fused(ref("r1"), "question")
        assert m.shape == (32, 4)
        _StubHandler.break_fused_rows = True
        with pytest.raises(ProtocolError, match="rows=32"):
            client.embed_fused(ref("r1"), "question")

    def test_score_pairs_and_generate(self, stub_server):
        client = HttpProvider(ProviderEndpoint(base_url=stub_server))
        assert client.score_text_pairs("red fox", ["red fox"]) == [1.0]
        assert client.generate("hello").startswith("ECHO:")

    def test_error_envelope_raises_protocol_error(self, stub_server):
        client = HttpProvider(ProviderEndpoint(base_url=stub_server + "/missing"))
        with pytest.raises(ProtocolError, match="not_found"):
            client.generate("hello")

    def test_unreachable_raises_transport_error(self):
        endpoint = ProviderEndpoint(base_url="http://127.0.0.1:9", timeout=0.2, retries=0)
        with pytest.raises(TransportError):
            HttpProvider(endpoint).embed_text(["x"])


class TestCachingProvider:
    def test_transparent_for_pure_provider(self, provider):
        cached = CachingProvider(provider)
        texts = ["a", "b", "a"]
        assert np.array_equal(cached.embed_text(texts), provider.embed_text(texts))
        m1 = cached.embed_fused(ref("r"), "t")
        assert np.array_equal(m1, provider.embed_fused(ref("r"), "t"))
        assert cached.embed_fused(ref("r"), "t") is m1  # memoized

    def test_scores_cached(self, provider):
        cached = CachingProvider(provider)
        s1 = cached.score_text_pairs("q words", ["q", "words"])
        assert s1 == provider.score_text_pairs("q words", ["q", "words"])
        assert cached.score_text_pairs("q words", ["q", "words"]) is s1


def test_seed64_is_stable():
    assert seed64(b"abc") == seed64(b"abc")
    assert seed64(b"abc") != seed64(b"abd")
    assert 0 <= seed64(b"abc") < 2**64
