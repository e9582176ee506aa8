"""Deterministic text embeddings and cosine similarity.

Embeddings feed three consumers: the semantic gain (question/response
cosine), the semantic rank that breaks ties in dynamic ranking, and the
similarity used by the hit/recall metrics.  The default embedder hashes
character n-grams into a fixed number of signed buckets; it is a
test-grade stand-in for any real encoder.  Vectors precomputed by an
external encoder can be loaded from a TSV file instead.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod

import numpy as np

from .errors import SchemaError, ValidationError

DEFAULT_DIM = 256
DEFAULT_NGRAM = 3


class Embedder(ABC):
    """Maps text to a fixed-dimension vector, deterministically.

    Implementations must be bit-stable: the same text yields the same
    vector on every call.  Instances are immutable after construction,
    so concurrent embed calls are safe.
    """

    dim: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Return a unit-norm float64 vector (all-zero only for empty text)."""


def _signed_bucket(data: bytes, dim: int) -> tuple[int, float]:
    # blake2b rather than hash(): the builtin is salted per process.
    digest = hashlib.blake2b(data, digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    return (value >> 1) % dim, 1.0 if value & 1 else -1.0


def hashed_ngram_embed(text: str, dim: int = DEFAULT_DIM, ngram: int = DEFAULT_NGRAM) -> np.ndarray:
    """Embed text via signed hashing of character n-grams, then L2-normalize.

    Empty text maps to the all-zero vector; any other text maps to a
    unit-norm vector.
    """
    if dim < 8:
        raise ValidationError(f"embedding dimension must be >= 8, got {dim}")
    if ngram < 1:
        raise ValidationError(f"ngram size must be >= 1, got {ngram}")
    vec = np.zeros(dim, dtype=np.float64)
    if not text:
        return vec
    encoded = text.encode("utf-8")
    grams = [encoded[i : i + ngram] for i in range(len(encoded) - ngram + 1)] or [encoded]
    for gram in grams:
        bucket, sign = _signed_bucket(gram, dim)
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # Signed collisions cancelled everything out; fall back to a
        # single bucket so non-empty text always has unit norm.
        bucket, _ = _signed_bucket(encoded, dim)
        vec[bucket] = 1.0
        return vec
    return vec / norm


class HashedNgramEmbedder(Embedder):
    """Default embedder: character n-grams with signed feature hashing."""

    def __init__(self, dim: int = DEFAULT_DIM, ngram: int = DEFAULT_NGRAM):
        if dim < 8:
            raise ValidationError(f"embedding dimension must be >= 8, got {dim}")
        if ngram < 1:
            raise ValidationError(f"ngram size must be >= 1, got {ngram}")
        self.dim = dim
        self.ngram = ngram

    def embed(self, text: str) -> np.ndarray:
        return hashed_ngram_embed(text, self.dim, self.ngram)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector is all-zero.

    The zero-vector convention keeps empty responses rankable (they fall
    to the bottom by gain) instead of aborting a whole batch.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.dot(a, b) / (norm_a * norm_b))


def load_external_embeddings(path) -> dict[str, np.ndarray]:
    """Read `id<TAB>floats` lines into a map of unit-norm vectors.

    All rows must share one dimension.  Duplicate ids and malformed rows
    are errors; vectors are L2-normalized on load (an all-zero row stays
    zero).
    """
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            key, sep, rest = line.partition("\t")
            if not sep or not key:
                raise SchemaError("expected `id<TAB>floats`", line=lineno)
            try:
                values = np.array([float(tok) for tok in rest.split()], dtype=np.float64)
            except ValueError as exc:
                raise SchemaError(f"bad float in embedding row: {exc}", line=lineno) from exc
            if values.size == 0:
                raise SchemaError("embedding row has no values", line=lineno)
            if dim is None:
                dim = values.size
            elif values.size != dim:
                raise SchemaError(
                    f"dimension mismatch: expected {dim}, got {values.size}", line=lineno
                )
            if key in table:
                raise SchemaError(f"duplicate embedding id {key!r}", line=lineno)
            norm = np.linalg.norm(values)
            table[key] = values / norm if norm > 0 else values
    return table


def write_external_embeddings(path, table: dict[str, np.ndarray]) -> None:
    """Write the TSV format read by :func:`load_external_embeddings`."""
    with open(path, "w", encoding="utf-8") as handle:
        for key, vec in table.items():
            floats = " ".join(repr(float(v)) for v in np.asarray(vec, dtype=np.float64))
            handle.write(f"{key}\t{floats}\n")
