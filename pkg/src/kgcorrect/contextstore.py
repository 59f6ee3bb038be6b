"""Guided-context assembly, persistence, and training-time augmentation.

A ContextBundle pairs a prompt with its grounding text, the knowledge graph
built from it, and the matching index. Augmentation appends distractor
contexts drawn by a seeded splitmix64 stream, so fixtures are reproducible
bit for bit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .kgraph import KnowledgeGraph, ORIGIN_CONTEXT, build_graph
from .matching import MatcherConfig, VectorIndex, build_index
from .triplets import Triplet, extract_triplets, ingest_triplets, serialize_triplets, split_sentences

STORE_MAGIC = b"KTST"
STORE_VERSION = 1


class ContextStoreError(Exception):
    pass


class StoreFormatError(ContextStoreError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class GroundingError(ContextStoreError):
    """Neither live RAG results nor a triplet store were provided."""


@dataclass(frozen=True)
class ContextBundle:
    id: str
    prompt: str
    rag_context: str
    guided_context: str
    graph: KnowledgeGraph
    index: VectorIndex

    def export_record(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "rag_context": self.rag_context,
            "guided_context": self.guided_context,
        }


@dataclass(frozen=True)
class TripletStore:
    version: int
    triplets: tuple[Triplet, ...]
    index: VectorIndex


def splitmix64(seed: int):
    """The splitmix64 stream: trivially portable, reproducible across runs."""
    state = seed & 0xFFFFFFFFFFFFFFFF
    while True:
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        yield (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


def _graph_and_index(text: str, extra_triplets: Sequence[Triplet],
                     base_index: Optional[VectorIndex],
                     cfg: MatcherConfig) -> tuple[KnowledgeGraph, VectorIndex]:
    triplets = list(extract_triplets(split_sentences(text))) + list(extra_triplets)
    graph = build_graph(triplets, origin=ORIGIN_CONTEXT)
    embedder = cfg.make_embedder()
    if base_index is None:
        index = build_index(graph.nodes.keys(), cfg, embedder=embedder)
    else:
        index = VectorIndex(dimension=base_index.dimension)
        for key in base_index.keys():
            index.add(key, base_index.vector(key))
        for key in graph.nodes:
            if key not in index:
                index.add(key, embedder.embed(key))
    return graph, index


def assemble(prompt: str, rag_results: Sequence[str],
             store: Optional[TripletStore] = None,
             bundle_id: str = "bundle",
             cfg: Optional[MatcherConfig] = None) -> ContextBundle:
    """Concatenate RAG results, fold in stored triplets, build graph + index."""
    cfg = cfg or MatcherConfig()
    if not rag_results and store is None:
        raise GroundingError("no grounding source: need RAG results or a triplet store")
    rag_context = "\n".join(rag_results)
    extra = store.triplets if store is not None else ()
    base_index = store.index if store is not None else None
    graph, index = _graph_and_index(rag_context, extra, base_index, cfg)
    return ContextBundle(
        id=bundle_id, prompt=prompt, rag_context=rag_context,
        guided_context=rag_context, graph=graph, index=index,
    )


def augment(bundle: ContextBundle, distractor_pool: Sequence[str], count: int,
            seed: int, cfg: Optional[MatcherConfig] = None) -> ContextBundle:
    """Append ``count`` pool entries drawn without replacement, seeded.

    The RAG context is untouched; the guided context grows, and the graph and
    index are rebuilt over it (a supergraph of the original).
    """
    cfg = cfg or MatcherConfig()
    if count > len(distractor_pool):
        raise ContextStoreError(
            f"cannot draw {count} distractors from a pool of {len(distractor_pool)}")
    if count == 0:
        return replace(bundle, guided_context=bundle.rag_context)
    stream = splitmix64(seed)
    remaining = list(range(len(distractor_pool)))
    chosen: list[str] = []
    for _ in range(count):
        pick = next(stream) % len(remaining)
        chosen.append(distractor_pool[remaining.pop(pick)])
    guided = bundle.rag_context + "\n" + "\n".join(chosen)
    graph, index = _graph_and_index(guided, (), None, cfg)
    return ContextBundle(
        id=bundle.id, prompt=bundle.prompt, rag_context=bundle.rag_context,
        guided_context=guided, graph=graph, index=index,
    )


def build_store(corpus_texts: Sequence[str], cfg: Optional[MatcherConfig] = None) -> TripletStore:
    """Extract triplets from a context corpus and index their entities.

    Triplets are stored in record form (what the interchange format carries),
    so save/load round trips are lossless field for field.
    """
    cfg = cfg or MatcherConfig()
    extracted: list[Triplet] = []
    for text in corpus_texts:
        extracted.extend(extract_triplets(split_sentences(text)))
    triplets = ingest_triplets(serialize_triplets(extracted)).triplets
    graph = build_graph(triplets, origin=ORIGIN_CONTEXT)
    index = build_index(graph.nodes.keys(), cfg)
    return TripletStore(version=STORE_VERSION, triplets=triplets, index=index)


def save_store(store: TripletStore, path) -> None:
    payload = serialize_triplets(store.triplets).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<I", store.version))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(store.index.to_bytes())


def load_store(path) -> TripletStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    offset = 0
    if len(buf) < 4 or buf[:4] != STORE_MAGIC:
        raise StoreFormatError("bad store magic", 0)
    offset = 4
    if len(buf) < offset + 8:
        raise StoreFormatError("truncated store header", offset)
    (version,) = struct.unpack_from("<I", buf, offset)
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported store version {version}", offset)
    offset += 4
    (payload_len,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + payload_len:
        raise StoreFormatError("truncated triplet block", offset)
    payload = buf[offset : offset + payload_len].decode("utf-8")
    offset += payload_len
    result = ingest_triplets(payload)
    index, end = VectorIndex.from_bytes(buf, offset)
    if end != len(buf):
        raise StoreFormatError("trailing bytes after index block", end)
    return TripletStore(version=version, triplets=result.triplets, index=index)


def export_bundles(bundles: Iterable[ContextBundle], path) -> None:
    """Bundle export for the dual-decoder consumer: one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(json.dumps(bundle.export_record(), ensure_ascii=False) + "\n")
