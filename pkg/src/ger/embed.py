"""Text embedding behind a provider abstraction, plus cosine similarity.

Two providers are included: a deterministic offline embedder for tests and
demos (seeded from a stable hash of the text) and a client for an
OpenAI-compatible embeddings endpoint. All providers emit unit-normalized
vectors, so cosine similarity reduces to a dot product downstream.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import normalize_text
from .errors import DimensionMismatch, EmptyText, GerError, ProviderError

EMBED_API_KEY_ENV = "GER_EMBED_API_KEY"
DEFAULT_EMBED_MODEL = "all-MiniLM-L6-v2"
DEFAULT_EMBED_DIMENSION = 384


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|); symmetric, bounded in [-1, 1] up to rounding."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(
            f"cosine over dimensions {a.dimension} and {b.dimension}"
        )
    dot = sum(x * y for x, y in zip(a.values, b.values))
    norm_a = math.sqrt(sum(x * x for x in a.values))
    norm_b = math.sqrt(sum(y * y for y in b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise GerError("cosine undefined for a zero vector")
    return dot / (norm_a * norm_b)


def unit_normalized(values) -> tuple[float, ...]:
    norm = math.sqrt(sum(float(v) * float(v) for v in values))
    if norm == 0.0:
        raise GerError("cannot normalize a zero vector")
    return tuple(float(v) / norm for v in values)


class EmbeddingProvider:
    """Base class: normalizes input text, enforces the unit-vector contract.

    Subclasses implement `_embed(normalized_text)`.
    """

    name: str = "base"
    dimension: int = 0

    def embed(self, text: str) -> EmbeddingVector:
        key = normalize_text(text)
        if not key:
            raise EmptyText("cannot embed empty text")
        vector = EmbeddingVector(values=unit_normalized(self._embed(key)))
        if vector.dimension != self.dimension:
            raise ProviderError(
                f"{self.name}: expected dimension {self.dimension}, "
                f"got {vector.dimension}"
            )
        return vector

    def _embed(self, text: str):
        raise NotImplementedError


class HashEmbedder(EmbeddingProvider):
    """Deterministic offline embedder.

    Each normalized text seeds a PRNG through a stable 64-bit hash, which
    draws a pseudo-random unit vector; identical texts always map to the same
    vector and distinct texts collide only with negligible probability.
    Tests can plant explicit text-to-vector overrides to build exact
    similarity scenarios.
    """

    def __init__(self, dimension: int = DEFAULT_EMBED_DIMENSION, name: str = "hash"):
        if dimension < 2:
            raise GerError("dimension must be at least 2")
        self.name = name
        self.dimension = dimension
        self._planted: dict[str, tuple[float, ...]] = {}

    def plant(self, text: str, values) -> None:
        values = tuple(float(v) for v in values)
        if len(values) != self.dimension:
            raise DimensionMismatch(
                f"planted vector has dimension {len(values)}, expected {self.dimension}"
            )
        self._planted[normalize_text(text)] = unit_normalized(values)

    def _embed(self, text: str):
        planted = self._planted.get(text)
        if planted is not None:
            return planted
        seed = int.from_bytes(
            hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big"
        )
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dimension)


def deterministic_test_embedder(dimension: int = 32) -> HashEmbedder:
    return HashEmbedder(dimension=dimension, name="hash-test")


class EmbeddingCache:
    """On-disk cache of embedding vectors, keyed by a hash of
    (provider name, model, normalized text). Append-only JSON lines;
    safe for concurrent use within one process."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[float, ...]] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[record["key"]] = tuple(record["vector"])

    @staticmethod
    def key_for(provider_name: str, model: str, normalized_text: str) -> str:
        payload = "\x1f".join((provider_name, model, normalized_text))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def get(self, key: str) -> tuple[float, ...] | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, vector: tuple[float, ...]) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = vector
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps({"key": key, "vector": list(vector)}) + "\n"
                )


class RemoteEmbedder(EmbeddingProvider):
    """Client for an OpenAI-compatible embeddings endpoint.

    POSTs {"model": ..., "input": ...} and reads data[0].embedding. Retries
    with exponential backoff, limits in-flight requests, and can persist
    results to an EmbeddingCache; cached and fresh vectors are identical.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = DEFAULT_EMBED_MODEL,
        dimension: int = DEFAULT_EMBED_DIMENSION,
        api_key: str | None = None,
        cache: EmbeddingCache | None = None,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.name = "remote"
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key = api_key
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(max_in_flight)

    def _embed(self, text: str):
        if self.cache is not None:
            key = EmbeddingCache.key_for(self.name, self.model, text)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        vector = unit_normalized(self._request(text))
        if self.cache is not None:
            self.cache.put(key, vector)
        return vector

    def _request(self, text: str) -> list[float]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._session.post(
                        self.endpoint,
                        headers=headers,
                        json={"model": self.model, "input": text},
                        timeout=60,
                    )
                if response.status_code >= 500:
                    last_error = ProviderError(
                        f"embeddings endpoint returned {response.status_code}"
                    )
                    continue
                response.raise_for_status()
                return response.json()["data"][0]["embedding"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
        raise ProviderError(
            f"embedding request failed after {self.max_attempts} attempts: {last_error}"
        )
