"""Readers for the interchange files the grounding engine exports.

Context bundles: JSONL of {id, prompt, rag_context, guided_context}.
Triplet records: JSONL of {subject, relation, object[, sentence_index, confidence]}.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class InterchangeError(Exception):
    pass


@dataclass(frozen=True)
class Bundle:
    id: str
    prompt: str
    rag_context: str
    guided_context: str


def read_bundles(path) -> list[Bundle]:
    bundles = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                bundles.append(Bundle(
                    id=str(rec["id"]), prompt=rec["prompt"],
                    rag_context=rec["rag_context"], guided_context=rec["guided_context"],
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InterchangeError(f"bad bundle record on line {lineno}: {exc}") from exc
    return bundles


def read_triplet_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InterchangeError(f"bad triplet record on line {lineno}: {exc}") from exc
            for field in ("subject", "relation", "object"):
                if field not in rec:
                    raise InterchangeError(f"triplet record on line {lineno} lacks {field!r}")
            records.append(rec)
    return records


def build_char_vocab(texts) -> dict[str, int]:
    """Stable char -> id map over the given texts; 0 stays reserved for padding."""
    chars = sorted({ch for text in texts for ch in text})
    return {ch: i + 1 for i, ch in enumerate(chars)}


def encode_with_vocab(text: str, vocab: dict[str, int], max_len: int = None) -> np.ndarray:
    ids = [vocab[ch] for ch in text if ch in vocab]
    if max_len is not None:
        ids = ids[:max_len]
    return np.array([ids], dtype=np.int64)
