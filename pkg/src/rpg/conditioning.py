"""Deterministic text conditioning vectors.

Denoisers receive prompts as CondEmbedding values: a stable id plus a
fixed-dimension unit vector derived from the text by hashing, so the
same text always embeds identically with no model in the loop.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EMBED_DIM = 16


class EmptyTextError(ValueError):
    pass


@dataclass(frozen=True)
class CondEmbedding:
    """Identifier plus unit-norm vector; id and vector determine each other."""

    id: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        vec = vec.copy()
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    def __eq__(self, other):
        return isinstance(other, CondEmbedding) and self.id == other.id

    def __hash__(self):
        return hash(self.id)


def normalize_text(text: str) -> str:
    """Collapse whitespace; embeddings ignore formatting differences."""
    return " ".join(text.split())


@lru_cache(maxsize=4096)
def _vector_for(normalized: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(normalized.casefold().encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    vec.flags.writeable = False
    return vec


def embed_prompt(text: str, dim: int = EMBED_DIM) -> CondEmbedding:
    """Embed text deterministically; raises EmptyTextError on blank input."""
    normalized = normalize_text(text)
    if not normalized:
        raise EmptyTextError("prompt text is empty")
    return CondEmbedding(id=normalized, vector=_vector_for(normalized, dim))
