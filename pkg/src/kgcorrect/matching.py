"""Entity resolution: normalization, hashing embeddings, a flat vector index,
and the tiered matcher (exact -> normalized -> alias -> embedding).
"""
from __future__ import annotations

import json
import re
import string
import struct
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from ._kernels import dot_scores

DEFAULT_DIMENSION = 256
DEFAULT_THRESHOLD = 0.80

_EDGE_PUNCT = set(string.punctuation) - {"$", "%"}
_DETERMINER_RE = re.compile(r"^(?:the|a|an)\s+")
_WS_RE = re.compile(r"\s+")

INDEX_MAGIC = b"KGVI"
INDEX_VERSION = 1


class MatchingError(Exception):
    pass


class DimensionMismatch(MatchingError):
    pass


class IndexFormatError(MatchingError):
    """Raised on a corrupt or truncated index file; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmbeddingProviderError(MatchingError):
    """External embedding provider failure, with retry metadata."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


def normalize_entity(surface: str) -> str:
    """Canonical form of an entity surface string.

    Lowercase, NFC, trimmed, internal whitespace collapsed, edge punctuation
    stripped ($ and % survive), then one leading determiner removed.
    """
    s = surface.lower()
    s = unicodedata.normalize("NFC", s)
    s = _WS_RE.sub(" ", s.strip())
    while s and (s[0] in _EDGE_PUNCT or s[0] == " "):
        s = s[1:]
    while s and (s[-1] in _EDGE_PUNCT or s[-1] == " "):
        s = s[:-1]
    s = _DETERMINER_RE.sub("", s)
    return s.strip()


def _fnv1a(data: bytes, basis: int) -> int:
    h = basis
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


_FNV_BASIS_BUCKET = 0xCBF29CE484222325
_FNV_BASIS_SIGN = 0xCBF29CE484222325 ^ 0x9E3779B97F4A7C15


@lru_cache(maxsize=65536)
def _hash_gram(gram: bytes) -> tuple[int, float]:
    bucket = _fnv1a(gram, _FNV_BASIS_BUCKET)
    sign = 1.0 if _fnv1a(gram, _FNV_BASIS_SIGN) & 1 == 0 else -1.0
    return bucket, sign


@lru_cache(maxsize=65536)
def _hashing_embed(text: str, dimension: int) -> np.ndarray:
    acc = np.zeros(dimension, dtype=np.float64)
    for token in text.casefold().split():
        padded = "#" + token + "#"
        for i in range(len(padded) - 2):
            bucket, sign = _hash_gram(padded[i : i + 3].encode("utf-8"))
            acc[bucket % dimension] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        # Signed buckets cancelled out; fall back to a single deterministic spike.
        acc[_fnv1a(text.encode("utf-8"), _FNV_BASIS_BUCKET) % dimension] = 1.0
        norm = 1.0
    vec = (acc / norm).astype(np.float32)
    vec.flags.writeable = False
    return vec


class HashingEmbedder:
    """Deterministic character-3-gram feature-hashing embedder.

    Tokens are case-folded and padded with '#' boundaries; each 3-gram lands
    in one of ``dimension`` signed buckets; the result is L2-normalized.
    """

    name = "hashing"

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise MatchingError("cannot embed an empty string")
        return _hashing_embed(text, self.dimension)


class ExternalEmbedder:
    """Seam for a remote embedding provider; ``transport`` maps text to a vector."""

    name = "external"

    def __init__(self, transport, dimension: int = DEFAULT_DIMENSION, max_attempts: int = 3):
        self.transport = transport
        self.dimension = dimension
        self.max_attempts = max_attempts

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise MatchingError("cannot embed an empty string")
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                raw = np.asarray(self.transport(text), dtype=np.float64)
            except Exception as exc:  # transport owns its failure modes
                last_error = exc
                continue
            if raw.shape != (self.dimension,):
                raise DimensionMismatch(
                    f"provider returned shape {raw.shape}, expected ({self.dimension},)"
                )
            norm = float(np.linalg.norm(raw))
            if norm == 0.0:
                raise MatchingError("provider returned a zero vector")
            return (raw / norm).astype(np.float32)
        raise EmbeddingProviderError(
            f"embedding provider failed after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
        )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit vectors, clamped to [-1, 1]."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a.astype(np.float64), b.astype(np.float64)), -1.0, 1.0))


class VectorIndex:
    """Flat exact-search index over unit vectors keyed by canonical entity."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension
        self._entries: dict[str, np.ndarray] = {}
        self.overwrites = 0
        self._matrix: Optional[np.ndarray] = None
        self._keys: list[str] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def vector(self, key: str) -> np.ndarray:
        return self._entries[key]

    def add(self, key: str, vector: np.ndarray) -> bool:
        """Insert or overwrite; returns True when an existing key was overwritten."""
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dimension,):
            raise DimensionMismatch(
                f"vector shape {vector.shape} does not match index dimension {self.dimension}"
            )
        overwritten = key in self._entries
        if overwritten:
            self.overwrites += 1
        self._entries[key] = vector
        self._matrix = None
        return overwritten

    def _ensure_matrix(self):
        if self._matrix is None:
            self._keys = list(self._entries.keys())
            if self._keys:
                self._matrix = np.stack([self._entries[k] for k in self._keys])
            else:
                self._matrix = np.zeros((0, self.dimension), dtype=np.float32)

    def query(self, vector: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k (key, cosine) pairs, exact, score-descending, key tie-break."""
        if k < 1:
            raise ValueError("k must be >= 1")
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dimension,):
            raise DimensionMismatch(
                f"query shape {vector.shape} does not match index dimension {self.dimension}"
            )
        if not self._entries:
            return []
        self._ensure_matrix()
        scores = dot_scores(self._matrix, vector)
        scores = np.clip(scores, -1.0, 1.0)
        order = sorted(range(len(self._keys)), key=lambda i: (-scores[i], self._keys[i]))
        return [(self._keys[i], float(scores[i])) for i in order[:k]]

    # -- persistence (KGVI v1): header + [key_len, key, float32*D] records --

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += INDEX_MAGIC
        out += struct.pack("<III", INDEX_VERSION, self.dimension, len(self._entries))
        for key, vec in self._entries.items():
            kb = key.encode("utf-8")
            out += struct.pack("<I", len(kb))
            out += kb
            out += vec.astype("<f4").tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["VectorIndex", int]:
        def need(n: int, what: str):
            if offset_holder[0] + n > len(buf):
                raise IndexFormatError(f"truncated index: expected {what}", offset_holder[0])

        offset_holder = [offset]
        need(4, "magic")
        if buf[offset_holder[0] : offset_holder[0] + 4] != INDEX_MAGIC:
            raise IndexFormatError("bad index magic", offset_holder[0])
        offset_holder[0] += 4
        need(12, "header")
        version, dimension, count = struct.unpack_from("<III", buf, offset_holder[0])
        if version != INDEX_VERSION:
            raise IndexFormatError(f"unsupported index version {version}", offset_holder[0])
        offset_holder[0] += 12
        index = cls(dimension=dimension)
        for _ in range(count):
            need(4, "key length")
            (klen,) = struct.unpack_from("<I", buf, offset_holder[0])
            offset_holder[0] += 4
            need(klen, "key bytes")
            key = buf[offset_holder[0] : offset_holder[0] + klen].decode("utf-8")
            offset_holder[0] += klen
            vec_bytes = 4 * dimension
            need(vec_bytes, "vector")
            vec = np.frombuffer(buf, dtype="<f4", count=dimension, offset=offset_holder[0]).copy()
            offset_holder[0] += vec_bytes
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) > 1e-6:
                raise IndexFormatError(f"vector for {key!r} is not unit norm", offset_holder[0])
            index._entries[key] = vec
        index._matrix = None
        return index, offset_holder[0]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VectorIndex":
        with open(path, "rb") as fh:
            buf = fh.read()
        index, end = cls.from_bytes(buf)
        if end != len(buf):
            raise IndexFormatError("trailing bytes after index payload", end)
        return index


def index_add(index: VectorIndex, key: str, vector: np.ndarray) -> VectorIndex:
    index.add(key, vector)
    return index


def index_query(index: VectorIndex, vector: np.ndarray, k: int) -> list[tuple[str, float]]:
    return index.query(vector, k)


TIER_EXACT = "exact"
TIER_NORMALIZED = "normalized"
TIER_ALIAS = "alias"
TIER_EMBEDDING = "embedding"
TIER_NONE = "none"


@dataclass(frozen=True)
class MatchResult:
    query: str
    matched: Optional[str]
    score: float
    tier: str

    def to_dict(self) -> dict:
        return {"query": self.query, "matched": self.matched, "score": self.score, "tier": self.tier}


@dataclass
class MatcherConfig:
    threshold: float = DEFAULT_THRESHOLD
    alias_table: dict[str, str] = field(default_factory=dict)
    embedder: str = "hashing"
    dimension: int = DEFAULT_DIMENSION

    def __post_init__(self):
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")

    def make_embedder(self, transport=None):
        if self.embedder == "hashing":
            return HashingEmbedder(self.dimension)
        if self.embedder == "external":
            if transport is None:
                raise MatchingError("external embedder requires a transport")
            return ExternalEmbedder(transport, self.dimension)
        raise MatchingError(f"unknown embedder provider {self.embedder!r}")


def load_aliases(path) -> dict[str, str]:
    """Alias table file: one {"alias": ..., "canonical": ...} object per line."""
    table: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                alias = record["alias"]
                canonical = record["canonical"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MatchingError(f"bad alias record on line {lineno}: {exc}") from exc
            table[normalize_entity(alias)] = normalize_entity(canonical)
    return table


def build_index(node_keys: Iterable[str], cfg: MatcherConfig, embedder=None) -> VectorIndex:
    """Embed every canonical node key into a fresh index."""
    embedder = embedder or cfg.make_embedder()
    index = VectorIndex(dimension=cfg.dimension)
    for key in node_keys:
        if key:
            index.add(key, embedder.embed(key))
    return index


class Matcher:
    """Tiered entity matcher over one context graph's node set.

    ``nodes`` maps canonical -> Entity (anything with a ``mentions`` iterable);
    a plain iterable of canonical strings also works.
    """

    def __init__(self, nodes, cfg: Optional[MatcherConfig] = None, index: Optional[VectorIndex] = None,
                 embedder=None):
        self.cfg = cfg or MatcherConfig()
        self.embedder = embedder or self.cfg.make_embedder()
        if hasattr(nodes, "items"):
            self._canonicals = dict.fromkeys(nodes.keys())
            self._surface_map: dict[str, str] = {}
            for canonical, entity in nodes.items():
                for mention in getattr(entity, "mentions", ()):  # first inserted wins
                    self._surface_map.setdefault(mention, canonical)
                self._surface_map.setdefault(canonical, canonical)
        else:
            self._canonicals = dict.fromkeys(nodes)
            self._surface_map = {c: c for c in self._canonicals}
        if index is None:
            index = build_index(self._canonicals, self.cfg, embedder=self.embedder)
        self.index = index

    def match(self, query) -> MatchResult:
        surface = getattr(query, "surface", query)
        exact = self._surface_map.get(surface)
        if exact is not None:
            return MatchResult(surface, exact, 1.0, TIER_EXACT)
        normalized = normalize_entity(surface)
        if normalized in self._canonicals:
            return MatchResult(surface, normalized, 1.0, TIER_NORMALIZED)
        alias_target = self.cfg.alias_table.get(normalized)
        if alias_target is not None and alias_target in self._canonicals:
            return MatchResult(surface, alias_target, 1.0, TIER_ALIAS)
        if normalized and len(self.index) > 0:
            top = self.index.query(self.embedder.embed(normalized), k=1)
            if top and top[0][1] >= self.cfg.threshold:
                return MatchResult(surface, top[0][0], top[0][1], TIER_EMBEDDING)
        return MatchResult(surface, None, 0.0, TIER_NONE)


def match_entity(query, nodes, cfg: Optional[MatcherConfig] = None,
                 index: Optional[VectorIndex] = None) -> MatchResult:
    """One-shot tiered match; build a Matcher for repeated queries."""
    return Matcher(nodes, cfg=cfg, index=index).match(query)
