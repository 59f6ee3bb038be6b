"""Reference-based text metrics (ROUGE-L, METEOR) and dataset evaluation.

Both metrics share one tokenizer. METEOR is the exact+stemmed two-stage
variant (no synonym lexicon) with the canonical constants; ROUGE-L uses the
standard recall-weighted F with beta = 1.2.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import porter
from ._kernels import lcs_length

ROUGE_BETA = 1.2
AGGREGATE_ID = "__aggregate__"

_TOKEN_EDGE_PUNCT = set(string.punctuation) - {"$", "%"}


class EvaluationError(Exception):
    pass


class DuplicateIdError(EvaluationError):
    def __init__(self, duplicates: Sequence[str]):
        super().__init__(f"duplicate record ids: {', '.join(sorted(duplicates))}")
        self.duplicates = tuple(duplicates)


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with edge punctuation stripped.

    '$' and '%' always survive; internal characters (so '7.2' in '$7.2',
    the dot of 'east.net') are never touched. Idempotent.
    """
    tokens = []
    for raw in text.lower().split():
        while raw and raw[0] in _TOKEN_EDGE_PUNCT:
            raw = raw[1:]
        while raw and raw[-1] in _TOKEN_EDGE_PUNCT:
            raw = raw[:-1]
        if raw:
            tokens.append(raw)
    return tokens


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f: float


def _token_ids(a: list[str], b: list[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    def ids(tokens):
        out = np.empty(len(tokens), dtype=np.int32)
        for i, tok in enumerate(tokens):
            out[i] = vocab.setdefault(tok, len(vocab))
        return out
    return ids(a), ids(b)


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """Token-level longest-common-subsequence precision/recall/F."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    a, b = _token_ids(cand, ref)
    lcs = lcs_length(a, b)
    p = lcs / len(cand)
    r = lcs / len(ref)
    if p == 0.0 and r == 0.0:
        return RougeScore(0.0, 0.0, 0.0)
    beta2 = ROUGE_BETA ** 2
    f = (1 + beta2) * p * r / (r + beta2 * p)
    return RougeScore(p, r, f)


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Two-stage unigram alignment: exact, then Porter-stemmed leftovers.

    Greedy left-to-right, leftmost available reference position first.
    """
    matches: list[tuple[int, int]] = []
    used_ref = [False] * len(ref)
    matched_cand = [False] * len(cand)

    def run_stage(cand_keys: list[str], ref_keys: list[str]) -> None:
        positions: dict[str, list[int]] = {}
        for j in range(len(ref) - 1, -1, -1):
            if not used_ref[j]:
                positions.setdefault(ref_keys[j], []).append(j)
        for i in range(len(cand)):
            if matched_cand[i]:
                continue
            slots = positions.get(cand_keys[i])
            if slots:
                j = slots.pop()
                used_ref[j] = True
                matched_cand[i] = True
                matches.append((i, j))

    run_stage(cand, ref)
    run_stage([porter.stem(t) for t in cand], [porter.stem(t) for t in ref])
    matches.sort()
    return matches


def meteor(candidate: str, reference: str) -> float:
    """Exact+stemmed unigram METEOR with chunk penalty 0.5 * (chunks/m)^3."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    matches = _align(cand, ref)
    m = len(matches)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (ci, ri), (cj, rj) in zip(matches, matches[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


@dataclass(frozen=True)
class EvalRecord:
    id: str
    prompt: str
    context: str
    reference: str
    candidate: str


@dataclass
class MetricScores:
    rouge_l_f: float
    meteor: float
    groundedness: Optional[int] = None
    gpt_similarity: Optional[int] = None
    eliminated_entity_rate: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"rouge_l_f": self.rouge_l_f, "meteor": self.meteor}
        for name in ("groundedness", "gpt_similarity", "eliminated_entity_rate"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    _FIELDS = ("rouge_l_f", "meteor", "groundedness", "gpt_similarity", "eliminated_entity_rate")


@dataclass
class EvalOptions:
    judge_client: object = None            # duck-typed chat client; None disables judge metrics
    compute_elimination: bool = False      # run the corrector per record
    matcher_config: object = None
    strict: bool = False


def score_record(record: EvalRecord, options: Optional[EvalOptions] = None) -> MetricScores:
    options = options or EvalOptions()
    scores = MetricScores(
        rouge_l_f=rouge_l(record.candidate, record.reference).f,
        meteor=meteor(record.candidate, record.reference),
    )
    if options.judge_client is not None:
        from . import judge as judge_mod
        g = judge_mod.judge_groundedness(record, options.judge_client)
        s = judge_mod.judge_similarity(record, options.judge_client)
        scores.groundedness = g.score
        scores.gpt_similarity = s.score
    if options.compute_elimination:
        from . import corrector as corrector_mod
        from .kgraph import ORIGIN_CONTEXT, build_graph
        from .triplets import extract_triplets, split_sentences
        context_graph = build_graph(
            extract_triplets(split_sentences(record.context)), origin=ORIGIN_CONTEXT)
        report = corrector_mod.correct(
            record.candidate, context_graph,
            matcher_cfg=options.matcher_config, strict=options.strict)
        scores.eliminated_entity_rate = report.eliminated_entity_rate
    return scores


def aggregate_scores(per_record: Sequence[MetricScores]) -> dict:
    """Arithmetic mean per metric, skipping absent values."""
    out: dict = {}
    for name in MetricScores._FIELDS:
        values = [getattr(s, name) for s in per_record if getattr(s, name) is not None]
        if values:
            out[name] = sum(values) / len(values)
    return out


def evaluate_dataset(records: Sequence[EvalRecord],
                     options: Optional[EvalOptions] = None,
                     ) -> tuple[list[tuple[str, MetricScores]], dict]:
    ids = [r.id for r in records]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise DuplicateIdError(sorted(dupes))
    per_record = [(r.id, score_record(r, options)) for r in records]
    per_record.sort(key=lambda pair: pair[0])
    return per_record, aggregate_scores([s for _, s in per_record])


def read_dataset(lines: Iterable[str]) -> list[EvalRecord]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            records.append(EvalRecord(
                id=str(rec["id"]), prompt=rec.get("prompt", ""),
                context=rec.get("context", ""), reference=rec["reference"],
                candidate=rec["candidate"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise EvaluationError(f"bad dataset record on line {lineno}: {exc}") from exc
    return records


def results_lines(per_record: Sequence[tuple[str, MetricScores]], aggregate: dict) -> Iterable[str]:
    for record_id, scores in per_record:
        yield json.dumps({"id": record_id, **scores.to_dict()}, ensure_ascii=False)
    yield json.dumps({"id": AGGREGATE_ID, **aggregate}, ensure_ascii=False)
