import math

import pytest
import requests
from hypothesis import given, strategies as st

from ger.embed import (
    EmbeddingCache,
    EmbeddingVector,
    HashEmbedder,
    RemoteEmbedder,
    cosine,
    deterministic_test_embedder,
)
from ger.errors import DimensionMismatch, EmptyText, GerError, ProviderError


def test_same_text_same_vector():
    provider = deterministic_test_embedder(16)
    assert provider.embed("the zoo") == provider.embed("the zoo")


def test_distinct_texts_distinct_vectors():
    provider = deterministic_test_embedder(16)
    assert provider.embed("zoo") != provider.embed("aquarium")


def test_normalized_input_shares_vector():
    provider = deterministic_test_embedder(16)
    assert provider.embed("The  Zoo ") == provider.embed("the zoo")


def test_empty_text_rejected():
    provider = deterministic_test_embedder(16)
    with pytest.raises(EmptyText):
        provider.embed("   ")


def test_unit_norm():
    provider = deterministic_test_embedder(48)
    for text in ("a", "b", "some longer text"):
        vector = provider.embed(text)
        norm = math.sqrt(sum(v * v for v in vector.values))
        assert abs(norm - 1.0) < 1e-6


def test_minimum_dimension():
    with pytest.raises(GerError):
        HashEmbedder(dimension=1)


def test_cosine_self_similarity():
    provider = deterministic_test_embedder(16)
    vector = provider.embed("anything")
    assert abs(cosine(vector, vector) - 1.0) < 1e-9


def test_cosine_orthogonal_basis():
    e1 = EmbeddingVector(values=(1.0, 0.0))
    e2 = EmbeddingVector(values=(0.0, 1.0))
    assert cosine(e1, e2) == 0.0


def test_cosine_hand_value():
    a = EmbeddingVector(values=(0.6, 0.8))
    b = EmbeddingVector(values=(0.8, 0.6))
    assert cosine(a, b) == pytest.approx(0.96, abs=1e-12)


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine(EmbeddingVector(values=(1.0, 0.0)), EmbeddingVector(values=(1.0, 0.0, 0.0)))


@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_cosine_symmetric_and_bounded(seed_a, seed_b):
    provider = deterministic_test_embedder(12)
    a = provider.embed(f"text {seed_a}")
    b = provider.embed(f"text {seed_b}")
    assert cosine(a, b) == cosine(b, a)
    assert -1.0 - 1e-9 <= cosine(a, b) <= 1.0 + 1e-9


def test_planted_vectors_override():
    provider = deterministic_test_embedder(4)
    provider.plant("query", [2.0, 0.0, 0.0, 0.0])
    provider.plant("other", [0.0, 3.0, 0.0, 0.0])
    assert provider.embed("query").values == (1.0, 0.0, 0.0, 0.0)
    assert cosine(provider.embed("query"), provider.embed("other")) == 0.0


def test_planted_vector_dimension_checked():
    provider = deterministic_test_embedder(4)
    with pytest.raises(DimensionMismatch):
        provider.plant("query", [1.0, 0.0])


class FakeResponse:
    def __init__(self, payload, status_code=200):
        self.payload = payload
        self.status_code = status_code

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self.payload


class FakeEmbeddingSession:
    """Deterministic stand-in for an embeddings endpoint."""

    def __init__(self, dimension=6, fail_times=0):
        self.dimension = dimension
        self.fail_times = fail_times
        self.calls = []

    def post(self, url, headers=None, json=None, timeout=None):
        self.calls.append(json["input"])
        if self.fail_times > 0:
            self.fail_times -= 1
            return FakeResponse({}, status_code=500)
        seed = sum(ord(c) for c in json["input"]) + 1
        vector = [((seed * (i + 3)) % 17) - 8.0 for i in range(self.dimension)]
        if not any(vector):
            vector[0] = 1.0
        return FakeResponse({"data": [{"embedding": vector}]})


def remote(tmp_path=None, **kwargs):
    session = kwargs.pop("session", FakeEmbeddingSession())
    cache = EmbeddingCache(tmp_path / "cache.jsonl") if tmp_path else None
    return (
        RemoteEmbedder(
            endpoint="http://embeddings.local/v1/embeddings",
            model="test-model",
            dimension=6,
            cache=cache,
            backoff_seconds=0.0,
            session=session,
            **kwargs,
        ),
        session,
    )


def test_remote_embeds_and_normalizes():
    provider, session = remote()
    vector = provider.embed("hello world")
    assert vector.dimension == 6
    assert abs(math.sqrt(sum(v * v for v in vector.values)) - 1.0) < 1e-9
    assert session.calls == ["hello world"]


def test_remote_retries_then_succeeds():
    provider, session = remote(session=FakeEmbeddingSession(fail_times=2))
    provider.embed("hello")
    assert len(session.calls) == 3


def test_remote_gives_up_after_budget():
    provider, session = remote(session=FakeEmbeddingSession(fail_times=10))
    with pytest.raises(ProviderError):
        provider.embed("hello")
    assert len(session.calls) == 3


def test_cache_transparent_and_persistent(tmp_path):
    provider, session = remote(tmp_path)
    first = provider.embed("hello")
    second = provider.embed("hello")
    assert first == second
    assert session.calls == ["hello"]

    # a fresh provider sharing the cache file never hits the network
    fresh_session = FakeEmbeddingSession()
    fresh = RemoteEmbedder(
        endpoint="http://embeddings.local/v1/embeddings",
        model="test-model",
        dimension=6,
        cache=EmbeddingCache(tmp_path / "cache.jsonl"),
        backoff_seconds=0.0,
        session=fresh_session,
    )
    assert fresh.embed("hello") == first
    assert fresh_session.calls == []
