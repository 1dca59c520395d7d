"""Deterministic hashed n-gram text embedding and small vector helpers."""
from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import DIM

# Changing the key changes every embedding, i.e. it is a corpus-format break.
HASH_KEY = b"pa-retrieval-v1"

WORD_WEIGHT = 1.0
BIGRAM_WEIGHT = 1.0
CHAR_WEIGHT = 0.0
CHAR_NGRAMS = (3, 4, 5)
# code tokens carry most of the meaning in coverage text: ICD-10 codes (letter then digit)
# and five-digit CPT codes
ICD_WEIGHT = 3.0
CPT_WEIGHT = 1.0

_TOKEN_RE = re.compile(r"[a-z0-9][a-z0-9.\-]*")

STOPWORDS = frozenset(
    "a an and any are as at be by for from in is it must no not of on or such the to when which with within"
    .split()
)


@lru_cache(maxsize=1 << 16)
def _signed_bucket(feature: str) -> tuple[int, float]:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=HASH_KEY).digest()
    h = int.from_bytes(digest, "little")
    return h % DIM, (1.0 if (h >> 63) & 1 else -1.0)


_ICD_RE = re.compile(r"[a-z][0-9]")
_CPT_RE = re.compile(r"[0-9]{5}")


def _word_weight(w: str) -> float:
    if _ICD_RE.match(w):
        return ICD_WEIGHT
    if _CPT_RE.fullmatch(w):
        return CPT_WEIGHT
    return WORD_WEIGHT


def _features(text: str) -> list[tuple[str, float]]:
    norm = " ".join(text.lower().split())
    words = [w for w in _TOKEN_RE.findall(norm) if w not in STOPWORDS]
    feats = [("w:" + w, _word_weight(w)) for w in words]
    feats += [("b:" + a + "_" + b, BIGRAM_WEIGHT) for a, b in zip(words, words[1:])]
    for w in words if CHAR_WEIGHT > 0 else ():
        padded = f"<{w}>"
        for n in CHAR_NGRAMS:
            feats += [(f"c{n}:" + padded[i:i + n], CHAR_WEIGHT) for i in range(len(padded) - n + 1)]
    return feats


def embed_text(text: str) -> np.ndarray:
    """Embed ``text`` into a unit-norm 384-d vector by signed feature hashing."""
    if not text or not text.split():
        raise ValueError("empty input")
    v = np.zeros(DIM, dtype=np.float64)
    # Accumulate in a fixed order so results are bit-identical across runs.
    for feat, weight in _features(text):
        bucket, sign = _signed_bucket(feat)
        v[bucket] += sign * weight
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0:
        return v
    return v / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (DIM,) or b.shape != (DIM,):
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def mean_pool(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean; the empty history maps to the zero vector. Not re-normalized."""
    if len(vectors) == 0:
        return np.zeros(DIM, dtype=np.float64)
    stacked = np.asarray(vectors, dtype=np.float64)
    if stacked.shape[1:] != (DIM,):
        raise ValueError(f"expected {DIM}-d vectors, got {stacked.shape[1:]}")
    if len(vectors) == 1:
        return stacked[0].copy()
    return stacked.mean(axis=0)
