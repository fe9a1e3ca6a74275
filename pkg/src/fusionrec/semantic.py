"""Per-item semantic embeddings: file ingestion, deterministic fallback, cosine.

Embedding file format: one record per line,
``item_id<TAB>v1<SPACE>v2 ... v768`` with decimal or scientific floats.
Vectors are L2-normalized on load.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DataError

__all__ = [
    "SEMANTIC_DIM",
    "load_embeddings",
    "fallback_embed",
    "embed_catalog",
    "similarity",
    "similarity_mapped",
]

SEMANTIC_DIM = 768


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Load unit-normalized 768-dim vectors keyed by item id."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                item, values = line.split("\t", 1)
            except ValueError:
                raise DataError(f"embeddings line {lineno}: missing tab separator") from None
            vec = np.array(values.split(), dtype=np.float64)
            if vec.shape[0] != SEMANTIC_DIM:
                raise DataError(
                    f"embeddings line {lineno}: expected {SEMANTIC_DIM} values, got {vec.shape[0]}"
                )
            if not np.all(np.isfinite(vec)):
                raise DataError(f"embeddings line {lineno}: non-finite value")
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise DataError(f"embeddings line {lineno}: zero vector cannot be normalized")
            table[item] = vec / norm
    return table


def _token_bucket(token: str) -> tuple[int, float]:
    # md5 gives a stable cross-platform hash; Python's hash() is salted per run.
    digest = hashlib.md5(token.encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "little") % SEMANTIC_DIM
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def fallback_embed(text: str) -> np.ndarray:
    """Signed-hash bag of words into 768 buckets, L2-normalized.

    Deterministic stand-in for a frozen text encoder so that the whole test
    suite runs without model downloads. Empty (or fully cancelling) text maps
    to the first basis vector.
    """
    vec = np.zeros(SEMANTIC_DIM, dtype=np.float64)
    for token in text.lower().split():
        bucket, sign = _token_bucket(token)
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        e1 = np.zeros(SEMANTIC_DIM, dtype=np.float64)
        e1[0] = 1.0
        return e1
    return vec / norm


def embed_catalog(catalog: dict[str, tuple[str, str]]) -> dict[str, np.ndarray]:
    """Fallback-embed ``title description`` text for every catalog item."""
    return {
        item: fallback_embed(f"{title} {description}".strip())
        for item, (title, description) in catalog.items()
    }


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def similarity_mapped(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine mapped to [0, 1] via (c + 1) / 2, used by the scoring code."""
    return (similarity(u, v) + 1.0) / 2.0
