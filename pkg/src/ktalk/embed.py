"""Semantic vectors: backend embedding calls, normalization, cosine distance."""

from __future__ import annotations

import logging
import threading
import time

import numpy as np

from .agents import BackendError, InferenceBackend

logger = logging.getLogger(__name__)


class EmbeddingError(Exception):
    """An embedding could not be produced or normalized."""


class DimensionMismatch(EmbeddingError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"embedding dimension {got} does not match expected {expected}")
        self.expected = expected
        self.got = got


def normalize(values) -> np.ndarray:
    """L2-normalize to a float32 unit vector. Zero or non-finite input is an error."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmbeddingError("empty vector")
    if not np.all(np.isfinite(arr)):
        raise EmbeddingError("vector contains non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise EmbeddingError("zero vector cannot be normalized")
    return (arr / norm).astype(np.float32)


def cosine_distance(a, b) -> float:
    """1 - cos(a, b), in [0, 2]. Inputs are renormalized so d(a, a) is exactly 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(a.size, b.size)
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if denom == 0.0:
        raise EmbeddingError("cosine distance undefined for zero vectors")
    d = 1.0 - float(np.dot(a, b)) / denom
    return min(max(d, 0.0), 2.0)


class Embedder:
    """Backend embedder that latches the vector dimension on first success.

    The latch is set once (atomically) and enforced afterwards; retriable
    backend failures are retried up to `retries` extra attempts.
    """

    def __init__(
        self,
        backend: InferenceBackend,
        model_name: str,
        dim: int | None = None,
        retries: int = 2,
    ):
        self.backend = backend
        self.model_name = model_name
        self.retries = retries
        self._dim = dim
        self._latch = threading.Lock()

    @property
    def dim(self) -> int | None:
        return self._dim

    def latch_dim(self, dim: int) -> None:
        """Fix the expected dimension (e.g. from a loaded knowledge base)."""
        with self._latch:
            if self._dim is not None and self._dim != dim:
                raise DimensionMismatch(self._dim, dim)
            self._dim = int(dim)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        last: BackendError | None = None
        for attempt in range(self.retries + 1):
            try:
                raw = self.backend.embed(self.model_name, text)
                break
            except BackendError as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.1 * (attempt + 1))
        else:
            raise BackendError(f"embedding failed after {self.retries + 1} attempts: {last}")
        vec = normalize(raw)
        with self._latch:
            if self._dim is None:
                self._dim = int(vec.size)
            elif vec.size != self._dim:
                raise DimensionMismatch(self._dim, int(vec.size))
        return vec
