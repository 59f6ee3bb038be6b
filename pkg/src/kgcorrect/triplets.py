"""Sentence segmentation and knowledge-triplet extraction/ingestion.

Extraction is deliberately rule-based and deterministic: a copula rule, a
conjunction-list expansion on objects, and a generic first-finite-verb
fallback. Production pipelines with a heavier extractor feed the same
record format through :func:`ingest_triplets` instead.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional, Sequence, Union

from .matching import normalize_entity

logger = logging.getLogger(__name__)

PROVENANCE_EXTRACTED = "extracted"
PROVENANCE_INGESTED = "ingested"

COPULA_VERBS = ("is", "are", "was", "were", "costs", "supports", "requires", "includes")

CONFIDENCE_COPULA = 1.0
CONFIDENCE_SVO = 0.8


class TripletParseError(Exception):
    """Malformed ingestion record; message names the offending line."""


@dataclass(frozen=True)
class Sentence:
    index: int
    text: str
    char_span: tuple[int, int]


@dataclass(frozen=True)
class EntityMention:
    surface: str
    canonical: str
    char_span: Optional[tuple[int, int]]  # offsets within the owning sentence; None when ingested


@dataclass(frozen=True)
class Triplet:
    subject: EntityMention
    relation: str
    object: EntityMention
    sentence_index: Optional[int]
    provenance: str
    confidence: float
    # extractor-only details used for text splicing; None on ingested records
    relation_span: Optional[tuple[int, int]] = None
    object_list_span: Optional[tuple[int, int]] = None  # full span of the conjunct list
    list_surface: Optional[str] = None  # pre-expansion object surface

    def record(self) -> dict:
        rec = {
            "subject": self.subject.surface,
            "relation": self.relation,
            "object": self.object.surface,
            "confidence": self.confidence,
        }
        if self.sentence_index is not None:
            rec["sentence_index"] = self.sentence_index
        return rec


def _load_wordlist(name: str) -> frozenset[str]:
    text = resources.files("kgcorrect.data").joinpath(name).read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


def default_abbreviations() -> frozenset[str]:
    return _load_wordlist("abbreviations.txt")


def default_svo_verbs() -> frozenset[str]:
    return _load_wordlist("verbs.txt")


_TERMINAL_RE = re.compile(r"[.!?]+")


def split_sentences(text: str, abbreviations: Optional[Iterable[str]] = None) -> list[Sentence]:
    """Split a document on terminal punctuation followed by whitespace and an
    uppercase letter or digit, suppressing splits after known abbreviations.

    Never fails; pathological input comes back as a single sentence.
    """
    if abbreviations is None:
        abbreviations = default_abbreviations()
    abbrev = {a.lower() for a in abbreviations}

    boundaries: list[int] = []  # index one past the punctuation run of each split
    for m in _TERMINAL_RE.finditer(text):
        end = m.end()
        if end >= len(text) or not text[end].isspace():
            continue
        nxt = end
        while nxt < len(text) and text[nxt].isspace():
            nxt += 1
        if nxt >= len(text) or not (text[nxt].isupper() or text[nxt].isdigit()):
            continue
        token_start = m.start()
        while token_start > 0 and not text[token_start - 1].isspace():
            token_start -= 1
        if text[token_start:end].lower() in abbrev:
            continue
        boundaries.append(end)

    sentences: list[Sentence] = []
    cursor = 0
    for boundary in boundaries + [len(text)]:
        chunk = text[cursor:boundary]
        start = cursor + (len(chunk) - len(chunk.lstrip()))
        end = cursor + len(chunk.rstrip())
        if end > start:
            sentences.append(Sentence(index=len(sentences), text=text[start:end], char_span=(start, end)))
        cursor = boundary
    return sentences


@dataclass(frozen=True)
class ExtractionRules:
    copula_verbs: tuple[str, ...] = COPULA_VERBS
    svo_verbs: frozenset[str] = None  # type: ignore[assignment]
    copula_confidence: float = CONFIDENCE_COPULA
    svo_confidence: float = CONFIDENCE_SVO

    def __post_init__(self):
        if self.svo_verbs is None:
            object.__setattr__(self, "svo_verbs", default_svo_verbs())


_LIST_SPLIT_RE = re.compile(r"\s*,\s*(?:and\s+|or\s+)?|\s+(?:and|or)\s+")
_TRAILING_TERMINAL_RE = re.compile(r"[.!?]+\s*$")


def _mention(sentence_text: str, span: tuple[int, int]) -> EntityMention:
    surface = sentence_text[span[0] : span[1]]
    return EntityMention(surface=surface, canonical=normalize_entity(surface), char_span=span)


def _trim_span(text: str, start: int, end: int) -> Optional[tuple[int, int]]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    if end <= start:
        return None
    return (start, end)


def _split_object_list(text: str, span: tuple[int, int]) -> list[tuple[int, int]]:
    """Spans of conjunction-list elements inside ``span``, or [] if not a list."""
    segment = text[span[0] : span[1]]
    parts = []
    cursor = 0
    for m in _LIST_SPLIT_RE.finditer(segment):
        if m.start() > cursor:
            parts.append((cursor, m.start()))
        cursor = m.end()
    if cursor < len(segment):
        parts.append((cursor, len(segment)))
    if len(parts) < 2:
        return []
    spans = []
    for a, b in parts:
        trimmed = _trim_span(segment, a, b)
        if trimmed is None:
            return []
        spans.append((span[0] + trimmed[0], span[0] + trimmed[1]))
    return spans


def _first_verb_match(clause: str, verbs, offset: int) -> Optional[tuple[int, int, str]]:
    pattern = re.compile(r"\b(" + "|".join(re.escape(v) for v in sorted(verbs)) + r")\b", re.IGNORECASE)
    m = pattern.search(clause)
    if m is None:
        return None
    return (offset + m.start(1), offset + m.end(1), m.group(1))


def _clause_triplets(sentence: Sentence, clause_span: tuple[int, int],
                     rules: ExtractionRules) -> list[Triplet]:
    text = sentence.text
    clause = text[clause_span[0] : clause_span[1]]
    hit = _first_verb_match(clause, rules.copula_verbs, clause_span[0])
    confidence = rules.copula_confidence
    if hit is None:
        hit = _first_verb_match(clause, rules.svo_verbs, clause_span[0])
        confidence = rules.svo_confidence
    if hit is None:
        return []
    rel_start, rel_end, relation = hit

    subj_span = _trim_span(text, clause_span[0], rel_start)
    obj_end = clause_span[1]
    tail = _TRAILING_TERMINAL_RE.search(text, rel_end, obj_end)
    if tail is not None:
        obj_end = tail.start()
    obj_span = _trim_span(text, rel_end, obj_end)
    if subj_span is None or obj_span is None:
        return []
    subject = _mention(text, subj_span)
    if not subject.canonical:
        return []

    element_spans = _split_object_list(text, obj_span)
    triplets = []
    if element_spans:
        list_surface = text[obj_span[0] : obj_span[1]]
        for span in element_spans:
            obj = _mention(text, span)
            if not obj.canonical:
                continue
            triplets.append(Triplet(
                subject=subject, relation=relation, object=obj,
                sentence_index=sentence.index, provenance=PROVENANCE_EXTRACTED,
                confidence=confidence, relation_span=(rel_start, rel_end),
                object_list_span=obj_span, list_surface=list_surface,
            ))
    else:
        obj = _mention(text, obj_span)
        if obj.canonical:
            triplets.append(Triplet(
                subject=subject, relation=relation, object=obj,
                sentence_index=sentence.index, provenance=PROVENANCE_EXTRACTED,
                confidence=confidence, relation_span=(rel_start, rel_end),
            ))
    return triplets


def extract_triplets(sentences: Sequence[Sentence],
                     rules: Optional[ExtractionRules] = None) -> list[Triplet]:
    """Deterministic rule-based extraction, in sentence order.

    Sentences that match no rule contribute nothing (they remain visible to
    the corrector for elimination accounting via the sentence list).
    """
    rules = rules or ExtractionRules()
    out: list[Triplet] = []
    for sentence in sentences:
        cursor = 0
        for part in sentence.text.split(";"):
            span = _trim_span(sentence.text, cursor, cursor + len(part))
            cursor += len(part) + 1
            if span is None:
                continue
            out.extend(_clause_triplets(sentence, span, rules))
    return out


@dataclass(frozen=True)
class IngestResult:
    triplets: tuple[Triplet, ...]
    duplicate_count: int

    def __iter__(self):
        return iter(self.triplets)

    def __len__(self):
        return len(self.triplets)


def _ingested_mention(surface: str) -> EntityMention:
    return EntityMention(surface=surface, canonical=normalize_entity(surface), char_span=None)


def ingest_triplets(stream: Union[str, Iterable[str]]) -> IngestResult:
    """Parse line-delimited triplet records (the interchange format).

    Required fields: subject, relation, object. Optional: sentence_index
    (int >= 0), confidence (in [0, 1], defaults to 1.0). Exact duplicates are
    dropped and counted.
    """
    if isinstance(stream, str):
        stream = stream.split("\n")  # the format is newline-delimited; \x85 etc. stay in-record
    triplets: list[Triplet] = []
    seen: set[tuple] = set()
    duplicates = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TripletParseError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(rec, dict):
            raise TripletParseError(f"line {lineno}: expected an object, got {type(rec).__name__}")
        try:
            subject = rec["subject"]
            relation = rec["relation"]
            obj = rec["object"]
        except KeyError as exc:
            raise TripletParseError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        for name, value in (("subject", subject), ("relation", relation), ("object", obj)):
            if not isinstance(value, str) or not value:
                raise TripletParseError(f"line {lineno}: field {name!r} must be a non-empty string")
        sentence_index = rec.get("sentence_index")
        if sentence_index is not None and (not isinstance(sentence_index, int) or sentence_index < 0):
            raise TripletParseError(f"line {lineno}: sentence_index must be an integer >= 0")
        confidence = rec.get("confidence", 1.0)
        if not isinstance(confidence, (int, float)) or not (0.0 <= confidence <= 1.0):
            raise TripletParseError(f"line {lineno}: confidence must be a number in [0, 1]")
        key = (subject, relation, obj, sentence_index, float(confidence))
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        triplets.append(Triplet(
            subject=_ingested_mention(subject), relation=relation,
            object=_ingested_mention(obj), sentence_index=sentence_index,
            provenance=PROVENANCE_INGESTED, confidence=float(confidence),
        ))
    if duplicates:
        logger.warning("ingest_triplets dropped %d duplicate record(s)", duplicates)
    return IngestResult(triplets=tuple(triplets), duplicate_count=duplicates)


def serialize_triplets(triplets: Iterable[Triplet]) -> str:
    """Triplets back to the line-delimited record format."""
    return "\n".join(json.dumps(t.record(), ensure_ascii=False) for t in triplets)
