"""Text-to-unit-vector providers.

``HashEmbedder`` is the deterministic offline provider: feature hashing of
lowercased tokens with a signed second hash, so texts sharing tokens land
near each other without any model. ``RemoteEmbedder`` speaks the common
HTTP JSON embeddings protocol. Both yield L2-normalized float64 vectors.
"""

from __future__ import annotations

import hashlib
import os
import threading
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .errors import DimensionMismatch, EmptyText, RemoteFailure, ZeroVector
from .text import tokenize

EMBED_API_KEY_ENV = "MEMFLY_EMBED_API_KEY"
_NORM_TOL = 1e-6


def unit_normalize(vec: np.ndarray) -> np.ndarray:
    """Return vec scaled to unit L2 norm (float64). Raises ZeroVector."""
    arr = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroVector("cannot normalize a zero or non-finite vector")
    return arr / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; equals the dot product for unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cosine: shapes {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Contract: same text -> identical unit-norm vector of dimension dim."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]: ...


class HashEmbedder:
    """Deterministic bag-of-tokens feature hashing.

    Each token is hashed (keyed blake2b, so the layout is stable across
    processes for a given seed) into one of ``dim`` buckets with a +/-1
    sign from a second hash bit; token vectors are summed and normalized.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = int(seed).to_bytes(8, "little", signed=True)

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9, key=self._key).digest()
        bucket = int.from_bytes(digest[:8], "little") % self.dim
        sign = 1.0 if digest[8] & 1 else -1.0
        return bucket, sign

    def embed(self, text: str) -> np.ndarray:
        stripped = text.strip()
        if not stripped:
            raise EmptyText("cannot embed empty text")
        tokens = tokenize(stripped) or [stripped.lower()]
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            bucket, sign = self._slot(tok)
            vec[bucket] += sign
        if not vec.any():
            # Signs cancelled exactly; fall back to the whole string as one token.
            bucket, sign = self._slot("\x00" + stripped.lower())
            vec[bucket] = sign
        return unit_normalize(vec)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for a POST {input, model} -> {data: [{embedding}]} endpoint.

    Batches are capped at 64 inputs, transport failures retried twice, and
    responses are memoized in process so repeated texts stay identical.
    """

    MAX_BATCH = 64

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        *,
        timeout: float = 30.0,
        retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(EMBED_API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"input": texts, "model": self.model}
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/embeddings",
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                data = resp.json()["data"]
                if len(data) != len(texts):
                    raise RemoteFailure(
                        f"embedding server returned {len(data)} vectors for {len(texts)} inputs"
                    )
                out = []
                for item in data:
                    vec = np.asarray(item["embedding"], dtype=np.float64)
                    if vec.shape != (self.dim,):
                        raise DimensionMismatch(
                            f"server returned dim {vec.shape}, expected ({self.dim},)"
                        )
                    out.append(unit_normalize(vec))
                return out
            except (DimensionMismatch, RemoteFailure):
                raise
            except Exception as exc:  # transport or schema problem: retry
                last_error = exc
        raise RemoteFailure(f"embedding request failed after retries: {last_error}")

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        cleaned = []
        for text in texts:
            stripped = text.strip()
            if not stripped:
                raise EmptyText("cannot embed empty text")
            cleaned.append(stripped)

        with self._lock:
            missing = [t for t in dict.fromkeys(cleaned) if t not in self._cache]
        for start in range(0, len(missing), self.MAX_BATCH):
            chunk = missing[start:start + self.MAX_BATCH]
            vectors = self._post(chunk)
            with self._lock:
                for t, v in zip(chunk, vectors):
                    self._cache[t] = v
        with self._lock:
            return [self._cache[t].copy() for t in cleaned]
