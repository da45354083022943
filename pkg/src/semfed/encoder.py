"""Deterministic text embeddings and the cosine geometry used downstream.

The reference encoder hashes character n-grams into a fixed number of
signed buckets (feature hashing with a +/-1 sign bit derived from the
same keyed hash).  It is a stand-in for a real sentence encoder that is
cheap, dependency free, and bit-reproducible across runs and platforms.
Real encoder output can be substituted by loading precomputed vectors
from JSONL (``load_embeddings_jsonl``); everything downstream assumes
only unit-norm float64 vectors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ZERO_NORM_EPS",
    "UNIT_NORM_TOL",
    "ZeroVectorError",
    "EncoderConfig",
    "encode",
    "normalize",
    "encode_normalized",
    "is_unit",
    "cosine_distance",
    "load_embeddings_jsonl",
]

# Norms below this are treated as exactly zero and refused by normalize().
ZERO_NORM_EPS = 1e-12
# Tolerance when checking that a vector claiming to be normalized is unit.
UNIT_NORM_TOL = 1e-9


class ZeroVectorError(ValueError):
    """Raised when a vector with (near-)zero norm cannot be normalized."""


@dataclass(frozen=True)
class EncoderConfig:
    """Settings for the hashed character n-gram encoder.

    dimension: number of hash buckets, i.e. the embedding width.
    ngram_size: character n-gram length fed to the hash.
    seed: key for the hash; different seeds give unrelated embeddings.
    lowercase: optional preprocessing, off by default so the encoder
        sees generated text byte for byte.
    """

    dimension: int = 384
    ngram_size: int = 3
    seed: int = 0
    lowercase: bool = False

    def __post_init__(self) -> None:
        if self.dimension < 8:
            raise ValueError(f"encoder dimension must be >= 8, got {self.dimension}")
        if self.ngram_size < 1:
            raise ValueError(f"ngram_size must be >= 1, got {self.ngram_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def _hash_ngram(ngram: str, seed: int, dimension: int) -> tuple[int, float]:
    """Map an n-gram to (bucket, sign) with a keyed 64-bit hash."""
    digest = hashlib.blake2b(
        ngram.encode("utf-8"),
        digest_size=8,
        key=seed.to_bytes(8, "little"),
    ).digest()
    value = int.from_bytes(digest, "little")
    sign = 1.0 if value & 1 else -1.0
    return (value >> 1) % dimension, sign


def encode(text: str, config: EncoderConfig) -> np.ndarray:
    """Embed ``text`` as signed hashed n-gram counts (not normalized).

    Pure function of (text, config).  Texts shorter than the n-gram
    size, including the empty string, produce the all-zero vector;
    ``normalize`` refuses those, which is how empty generations surface
    as errors instead of silently entering consensus.
    """
    if config.lowercase:
        text = text.lower()
    vec = np.zeros(config.dimension, dtype=np.float64)
    n = config.ngram_size
    for start in range(len(text) - n + 1):
        bucket, sign = _hash_ngram(text[start : start + n], config.seed, config.dimension)
        vec[bucket] += sign
    return vec


def normalize(raw: np.ndarray) -> np.ndarray:
    """Scale ``raw`` to unit Euclidean norm.

    Raises ZeroVectorError when the norm is below ZERO_NORM_EPS and
    ValueError on non-finite input.
    """
    vec = np.asarray(raw, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding has non-finite entries")
    norm = float(np.linalg.norm(vec))
    if norm < ZERO_NORM_EPS:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm!r}")
    return vec / norm


def encode_normalized(text: str, config: EncoderConfig) -> np.ndarray:
    """encode() followed by normalize()."""
    return normalize(encode(text, config))


def is_unit(vec: np.ndarray) -> bool:
    """True when ``vec`` has unit norm within UNIT_NORM_TOL."""
    return abs(float(np.linalg.norm(vec)) - 1.0) <= UNIT_NORM_TOL


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - <a, b> for unit vectors, clamped to [0, 2] against float error.

    Symmetric exactly: the elementwise products commute and are summed
    in the same order either way.
    """
    d = 1.0 - float(np.dot(a, b))
    if d < 0.0:
        return 0.0
    if d > 2.0:
        return 2.0
    return d


def load_embeddings_jsonl(path: str | Path, dimension: int | None = None) -> dict[str, np.ndarray]:
    """Load externally computed embeddings from JSONL.

    Each line is an object {"response_id": str, "embedding": [floats]}.
    Vectors are returned raw (not normalized) so callers decide when to
    normalize.  All vectors must share one dimension; pass ``dimension``
    to also pin what that dimension must be.
    """
    out: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "response_id" not in record or "embedding" not in record:
                raise ValueError(f"{path}:{lineno}: expected keys response_id and embedding")
            rid = record["response_id"]
            if not isinstance(rid, str):
                raise ValueError(f"{path}:{lineno}: response_id must be a string")
            if rid in out:
                raise ValueError(f"{path}:{lineno}: duplicate response_id {rid!r}")
            vec = np.asarray(record["embedding"], dtype=np.float64)
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"{path}:{lineno}: embedding must be a non-empty flat list")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: embedding has non-finite entries")
            if dimension is None:
                dimension = int(vec.size)
            elif vec.size != dimension:
                raise ValueError(
                    f"{path}:{lineno}: embedding has dimension {vec.size}, expected {dimension}"
                )
            out[rid] = vec
    return out
