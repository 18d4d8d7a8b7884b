"""Pluggable text encoders, an on-disk vector cache, and embedding cosine."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Protocol, runtime_checkable

import httpx

from obsmatch.diagnostics import Diagnostics
from obsmatch.model import Entity
from obsmatch.scoring.text import entity_document, tokenize
from obsmatch.scoring.tfidf import cosine

__all__ = [
    "CachedEncoder",
    "EmbeddingCache",
    "EmbeddingEncoder",
    "EncoderError",
    "HashingEncoder",
    "HttpEncoder",
    "embedding_cosine",
]

logger = logging.getLogger(__name__)


class EncoderError(RuntimeError):
    """The encoder could not produce vectors (transport or protocol failure)."""


@runtime_checkable
class EmbeddingEncoder(Protocol):
    model_id: str

    def encode(self, texts: Sequence[str]) -> list[list[float]]: ...


class HashingEncoder:
    """Deterministic stand-in for a neural encoder.

    Each token is hashed (with the seed) into a pseudo-random Gaussian vector;
    a text is the sum of its token vectors. Shared tokens therefore produce
    similar vectors, which is enough to exercise the scoring path offline.
    """

    def __init__(self, dim: int = 64, seed: int = 0, model_id: str | None = None):
        self.dim = dim
        self.seed = seed
        self.model_id = model_id or f"hashing-{dim}d-seed{seed}"
        self.calls = 0
        self._vectors: dict[str, list[float]] = {}

    def _token_vector(self, token: str) -> list[float]:
        cached = self._vectors.get(token)
        if cached is not None:
            return cached
        digest = hashlib.sha256(f"{self.seed}\x00{token}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        vec = self._vectors[token] = [rng.gauss(0.0, 1.0) for _ in range(self.dim)]
        return vec

    def encode(self, texts: Sequence[str]) -> list[list[float]]:
        self.calls += 1
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for token in tokenize(text):
                for i, x in enumerate(self._token_vector(token)):
                    vec[i] += x
            out.append(vec)
        return out


class HttpEncoder:
    """Client for a remote embedding endpoint.

    Request: ``POST <url>`` with ``{"model": ..., "input": [texts]}``.
    Response: ``{"model": ..., "embeddings": [[float, ...], ...]}`` in input order.
    """

    def __init__(
        self,
        url: str,
        model_id: str,
        timeout: float = 30.0,
        retries: int = 2,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model_id = model_id
        self.timeout = timeout
        self.retries = retries
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)

    def encode(self, texts: Sequence[str]) -> list[list[float]]:
        payload = {"model": self.model_id, "input": list(texts)}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers, timeout=self.timeout)
                resp.raise_for_status()
                body = resp.json()
                vectors = body["embeddings"]
                if len(vectors) != len(texts):
                    raise EncoderError(f"expected {len(texts)} vectors, got {len(vectors)}")
                return [[float(x) for x in v] for v in vectors]
            except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
                last = exc
                logger.warning("encoder %s attempt %d failed: %s", self.model_id, attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(0.1 * 2**attempt, 2.0))
        raise EncoderError(f"encoder {self.model_id} unavailable: {last}")


class EmbeddingCache:
    """Content-addressed vector store: ``<root>/<model>/<sha256 of text>.json``.

    Reads are lock-free; writes are serialized and atomic.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, model_id: str, text: str) -> Path:
        safe = re.sub(r"[^A-Za-z0-9._-]+", "_", model_id)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.root / safe / f"{digest}.json"

    def get(self, model_id: str, text: str) -> list[float] | None:
        path = self._path(model_id, text)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, model_id: str, text: str, vector: Sequence[float]) -> None:
        path = self._path(model_id, text)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(list(vector), fh)
            os.replace(tmp, path)


class CachedEncoder:
    """Wraps an encoder with an :class:`EmbeddingCache`; hits never reach the encoder.

    ``encoder`` may be ``None`` for a cache-only (offline) run.
    """

    def __init__(self, encoder: EmbeddingEncoder | None, cache: EmbeddingCache, model_id: str | None = None):
        if encoder is None and model_id is None:
            raise ValueError("a model_id is required when no encoder is given")
        self.encoder = encoder
        self.cache = cache
        self.model_id = model_id or encoder.model_id

    def encode(self, texts: Sequence[str]) -> list[list[float]]:
        found = {t: self.cache.get(self.model_id, t) for t in dict.fromkeys(texts)}
        missing = [t for t, v in found.items() if v is None]
        if missing:
            if self.encoder is None:
                raise EncoderError(f"{len(missing)} texts not cached and no encoder configured")
            for text, vec in zip(missing, self.encoder.encode(missing)):
                self.cache.put(self.model_id, text, vec)
                found[text] = vec
        return [found[t] for t in texts]


def embedding_cosine(
    encoder: EmbeddingEncoder,
    left: Entity | str,
    right: Entity | str,
    diagnostics: Diagnostics | None = None,
) -> float | None:
    """Cosine of the two documents' embeddings, clipped to [0, 1]; ``None`` if the encoder fails."""
    texts = [entity_document(x) if isinstance(x, Entity) else x for x in (left, right)]
    try:
        u, v = encoder.encode(texts)
    except EncoderError as exc:
        if diagnostics is not None:
            diagnostics.warn("encoder-unavailable", str(exc))
        return None
    return max(0.0, min(1.0, cosine(u, v)))
