"""End-to-end hallucination correction.

Verifies every triplet extracted from the generated text against the context
graph, repairs or eliminates the unverified ones, prunes redundant cycles to
a spanning forest, splices the edits back into the text, and reports a full
reasoning trace (actions, match log, verified subgraph, elimination rate).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .kgraph import KnowledgeGraph, build_graph, find_cycles, minimum_spanning_tree, verified_subgraph
from .matching import Matcher, MatcherConfig, MatchResult, TIER_EXACT, TIER_NONE
from .triplets import (
    EntityMention,
    ExtractionRules,
    Sentence,
    Triplet,
    extract_triplets,
    split_sentences,
)

logger = logging.getLogger(__name__)

KIND_KEEP = "keep"
KIND_REPLACE_OBJECT = "replace_object"
KIND_REPLACE_RELATION = "replace_relation"
KIND_ELIMINATE_SENTENCE = "eliminate_sentence"
KIND_PRUNE_EDGE = "prune_edge"

REASON_UNMATCHED_SUBJECT = "unmatched-subject"
REASON_UNVERIFIED_FACT = "unverified-fact"
REASON_SIBLING = "sentence-eliminated-by-sibling"
REASON_NO_TRIPLETS = "no-triplets"
REASON_PRUNED = "mst-pruned"


class CorrectionError(Exception):
    pass


class OverlappingEditError(CorrectionError):
    """Two replacement spans within one sentence overlap; extractor bug."""


@dataclass(frozen=True)
class CorrectionAction:
    kind: str
    triplet_id: Optional[int]
    detail: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "triplet_id": self.triplet_id, "detail": self.detail}


@dataclass
class CorrectionReport:
    original: str
    corrected: str
    actions: list[CorrectionAction]
    verified_graph: KnowledgeGraph
    eliminated_entity_rate: float
    match_log: list[MatchResult]
    sentences: list[Sentence]
    triplets: list[Triplet]

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "corrected": self.corrected,
            "actions": [a.to_dict() for a in self.actions],
            "eliminated_entity_rate": self.eliminated_entity_rate,
            "match_log": [m.to_dict() for m in self.match_log],
            "verified_graph": list(self.verified_graph.dump_lines()),
        }


@dataclass
class _Verification:
    tid: int
    triplet: Triplet
    match: MatchResult
    verdict: str                      # keep / replace_object / replace_relation / eliminate
    reason: Optional[str] = None
    subject_key: Optional[str] = None
    asserted_objects: tuple[str, ...] = ()   # canonical objects the corrected text asserts
    relation: Optional[str] = None            # corrected relation surface
    replacement: Optional[tuple[tuple[int, int], str]] = None  # (span, new surface)
    replace_old: Optional[str] = None
    source: Optional[dict] = None
    subject_rewrite: Optional[tuple[tuple[int, int], str]] = None
    excisable: bool = False
    subsumed: bool = False
    excision_span: Optional[tuple[int, int]] = None


def _agrees(obj: EntityMention, other_key: str, graph: KnowledgeGraph) -> bool:
    if obj.canonical == other_key:
        return True
    return obj.surface in graph.node(other_key).mentions


def _pick_source_triplet(edge, graph: KnowledgeGraph) -> Triplet:
    def key(tid):
        t = graph.triplet(tid)
        idx = t.sentence_index if t.sentence_index is not None else float("inf")
        return (idx, t.object.canonical)
    return graph.triplet(min(edge.source_triplet_ids, key=key))


def _list_group(graph: KnowledgeGraph, anchor: Triplet, subject_key: str) -> list[Triplet]:
    """Context triplets sharing the anchor's conjunct-list span, in item order."""
    if anchor.object_list_span is None:
        return [anchor]
    members = [
        t for t in graph.source_triplets
        if t.sentence_index == anchor.sentence_index
        and t.object_list_span == anchor.object_list_span
        and t.relation.casefold() == anchor.relation.casefold()
        and t.subject.canonical == subject_key
    ]
    members.sort(key=lambda t: t.object.char_span or (0, 0))
    return members or [anchor]


def _verify_triplet(tid: int, t: Triplet, graph: KnowledgeGraph, matcher: Matcher) -> _Verification:
    sm = matcher.match(t.subject)
    if sm.tier == TIER_NONE:
        return _Verification(tid, t, sm, "eliminate", reason=REASON_UNMATCHED_SUBJECT)

    s_key = sm.matched
    v = _Verification(tid, t, sm, "keep", subject_key=s_key, relation=t.relation)
    primary = graph.node(s_key).mentions[0]
    if sm.tier != TIER_EXACT and primary != t.subject.surface and t.subject.char_span is not None:
        v.subject_rewrite = (t.subject.char_span, primary)

    edges = graph.edges_at(s_key)
    rel_cf = t.relation.casefold()
    same_rel = [e for e in edges if e.relation.casefold() == rel_cf]

    for e in same_rel:
        other = e.other(s_key)
        if _agrees(t.object, other, graph):
            v.asserted_objects = (other,)
            return v

    if same_rel:
        def edge_key(e):
            idx = e.min_sentence_index if e.min_sentence_index is not None else float("inf")
            return (idx, e.other(s_key))
        chosen = min(same_rel, key=edge_key)
        anchor = _pick_source_triplet(chosen, graph)
        group = _list_group(graph, anchor, s_key)
        v.verdict = "replace_object"
        v.source = {
            "subject": s_key,
            "relation": chosen.relation,
            "objects": [m.object.canonical for m in group],
        }
        if t.object_list_span is not None:
            new_surface = anchor.list_surface or anchor.object.surface
            v.replacement = (t.object_list_span, new_surface)
            v.replace_old = t.list_surface
            v.asserted_objects = tuple(m.object.canonical for m in group)
        else:
            v.replacement = (t.object.char_span, anchor.object.surface)
            v.replace_old = t.object.surface
            v.asserted_objects = (anchor.object.canonical,)
        return v

    cross = [e for e in edges if _agrees(t.object, e.other(s_key), graph)]
    if cross:
        def edge_key(e):
            idx = e.min_sentence_index if e.min_sentence_index is not None else float("inf")
            return (idx, e.relation.casefold())
        chosen = min(cross, key=edge_key)
        v.verdict = "replace_relation"
        v.relation = chosen.relation
        v.asserted_objects = (chosen.other(s_key),)
        v.source = {"subject": s_key, "relation": chosen.relation,
                    "objects": [chosen.other(s_key)]}
        if t.relation_span is not None:
            v.replacement = (t.relation_span, chosen.relation)
            v.replace_old = t.relation
        return v

    v.verdict = "eliminate"
    v.reason = REASON_UNVERIFIED_FACT
    v.excisable = t.object_list_span is not None
    v.subject_rewrite = None
    return v


def _reconcile_sentence(group: list[_Verification]) -> Optional[str]:
    """Returns an elimination reason when the whole sentence must go."""
    eliminated = [v for v in group if v.verdict == "eliminate"]
    if not eliminated:
        return None
    survivors = [v for v in group if v.verdict != "eliminate"]
    if not survivors:
        return eliminated[0].reason
    if any(not v.excisable for v in eliminated):
        return eliminated[0].reason
    # every member of an eliminated conjunct's list group must not be eliminated too
    for v in eliminated:
        siblings = [w for w in group
                    if w.triplet.object_list_span == v.triplet.object_list_span and w is not v]
        if siblings and all(w.verdict == "eliminate" for w in siblings):
            return v.reason
        if not siblings:
            return v.reason
    return None


def _plan_excisions(group: list[_Verification]) -> None:
    """Attach excision spans to eliminated conjuncts in a surviving sentence.

    Consecutive eliminated items are excised as one run so spans never
    overlap; when a sibling replacement already rewrites the whole list,
    the eliminated items are marked subsumed instead.
    """
    by_list: dict[tuple[int, int], list[_Verification]] = {}
    for v in group:
        if v.triplet.object_list_span is not None:
            by_list.setdefault(v.triplet.object_list_span, []).append(v)
    for list_span, members in by_list.items():
        members.sort(key=lambda v: v.triplet.object.char_span)
        has_list_replacement = any(
            v.verdict == "replace_object" and v.replacement and v.replacement[0] == list_span
            for v in members)
        if has_list_replacement:
            for v in members:
                if v.verdict == "eliminate":
                    v.subsumed = True
            continue
        i = 0
        while i < len(members):
            if members[i].verdict != "eliminate":
                i += 1
                continue
            j = i
            while j + 1 < len(members) and members[j + 1].verdict == "eliminate":
                j += 1
            if i == 0:
                span = (members[0].triplet.object.char_span[0],
                        members[j + 1].triplet.object.char_span[0])
            else:
                span = (members[i - 1].triplet.object.char_span[1],
                        members[j].triplet.object.char_span[1])
            members[i].excision_span = span
            for v in members[i + 1 : j + 1]:
                v.subsumed = True
            i = j + 1


def _splice(text: str, edits: Sequence[tuple[tuple[int, int], str]]) -> str:
    """Apply (span, replacement) edits rightmost-first; overlapping spans error."""
    unique = sorted(set(edits), key=lambda e: (e[0][0], e[0][1]))
    prev_end = -1
    for (start, end), _ in unique:
        if start < prev_end:
            raise OverlappingEditError(f"overlapping edit spans near offset {start}")
        prev_end = end
    out = text
    for (start, end), replacement in reversed(unique):
        out = out[:start] + replacement + out[end:]
    return out


def apply_edits(original: str, sentences: Sequence[Sentence],
                actions: Sequence[CorrectionAction]) -> str:
    """Replay a correction: splice replacements, drop eliminated sentences.

    Replacement spans are sentence-relative and applied rightmost-first;
    whole-sentence eliminations normalize the inter-sentence whitespace.
    """
    eliminated: set[int] = set()
    splices: dict[int, list[tuple[tuple[int, int], str]]] = {}

    def add_splice(sentence_index, span, replacement):
        splices.setdefault(sentence_index, []).append(((span[0], span[1]), replacement))

    for action in actions:
        d = action.detail
        if action.kind == KIND_ELIMINATE_SENTENCE:
            if d.get("clause_span") is not None:
                add_splice(d["sentence_index"], d["clause_span"], "")
            elif not d.get("subsumed"):
                eliminated.add(d["sentence_index"])
        elif action.kind in (KIND_KEEP, KIND_REPLACE_OBJECT, KIND_REPLACE_RELATION):
            if d.get("span") is not None and "new" in d:
                add_splice(d["sentence_index"], d["span"], d["new"])
            subject = d.get("subject")
            if subject is not None:
                add_splice(d["sentence_index"], subject["span"], subject["new"])

    edited: dict[int, str] = {}
    for sentence in sentences:
        if sentence.index in eliminated:
            continue
        edits = splices.get(sentence.index, [])
        edited[sentence.index] = _splice(sentence.text, edits) if edits else sentence.text

    if not eliminated:
        out = original
        for sentence in reversed(sentences):
            start, end = sentence.char_span
            out = out[:start] + edited[sentence.index] + out[end:]
        return out
    return " ".join(edited[s.index] for s in sentences if s.index in edited)


def correct(generated: str, context_graph: KnowledgeGraph,
            matcher_cfg: Optional[MatcherConfig] = None, *,
            strict: bool = False,
            matcher: Optional[Matcher] = None,
            rules: Optional[ExtractionRules] = None) -> CorrectionReport:
    """Verify, repair, and prune ``generated`` against the context graph."""
    sentences = split_sentences(generated)
    triplets = extract_triplets(sentences, rules=rules)
    g = build_graph(triplets, origin="generated")
    rejected_ids = {r.triplet_id for r in g.rejected}

    if matcher is None:
        matcher = Matcher(context_graph.nodes, cfg=matcher_cfg)

    verifications: list[_Verification] = []
    for tid, t in enumerate(triplets):
        if tid in rejected_ids:
            continue
        verifications.append(_verify_triplet(tid, t, context_graph, matcher))

    by_sentence: dict[int, list[_Verification]] = {}
    for v in verifications:
        by_sentence.setdefault(v.triplet.sentence_index, []).append(v)

    sentence_reason: dict[int, str] = {}
    for idx, group in by_sentence.items():
        reason = _reconcile_sentence(group)
        if reason is not None:
            sentence_reason[idx] = reason
            for v in group:
                if v.verdict != "eliminate":
                    v.verdict = "eliminate"
                    v.reason = REASON_SIBLING
                v.excisable = False
                v.excision_span = None
                v.subject_rewrite = None
                v.replacement = None
        else:
            _plan_excisions(group)

    survivors = [v for v in verifications if v.verdict != "eliminate"]

    verified_keys: set[str] = set()
    for v in survivors:
        verified_keys.add(v.subject_key)
        verified_keys.update(v.asserted_objects)
    g_hat = verified_subgraph(context_graph, verified_keys)

    # graph of the corrected assertions, in context-graph coordinates
    synth: list[Triplet] = []
    synth_tid: list[int] = []
    for v in survivors:
        for obj in v.asserted_objects:
            synth.append(Triplet(
                subject=EntityMention(v.subject_key, v.subject_key, None),
                relation=v.relation or v.triplet.relation,
                object=EntityMention(obj, obj, None),
                sentence_index=v.triplet.sentence_index,
                provenance="extracted",
                confidence=v.triplet.confidence,
            ))
            synth_tid.append(v.tid)

    prune_actions: list[CorrectionAction] = []
    h = build_graph(synth, origin="generated")
    tid_edges: dict[int, set] = {}
    for edge in h.edges:
        ekey = (edge.pair(), edge.relation.casefold())
        for sid in edge.source_triplet_ids:
            tid_edges.setdefault(synth_tid[sid], set()).add(ekey)
    while find_cycles(h):
        pruned_graph = minimum_spanning_tree(h)
        kept = {(e.pair(), e.relation.casefold()) for e in pruned_graph.edges}
        for edge in h.edges:
            ekey = (edge.pair(), edge.relation.casefold())
            if ekey in kept:
                continue
            dropped_tids = sorted({synth_tid[sid] for sid in edge.source_triplet_ids})
            prune_actions.append(CorrectionAction(KIND_PRUNE_EDGE, None, {
                "edge": list(edge.endpoints), "relation": edge.relation,
                "weight": edge.weight, "dropped_triplet_ids": dropped_tids,
            }))
        h = pruned_graph

    final_keys = {(e.pair(), e.relation.casefold()) for e in h.edges}
    pruned_tids = {tid for tid, keys in tid_edges.items() if not (keys & final_keys)}

    prune_sentence_actions: list[CorrectionAction] = []
    if pruned_tids:
        for idx, group in sorted(by_sentence.items()):
            group_survivors = [v for v in group if v.verdict != "eliminate"]
            if group_survivors and all(v.tid in pruned_tids for v in group_survivors):
                sentence_reason[idx] = REASON_PRUNED
                prune_sentence_actions.append(CorrectionAction(
                    KIND_ELIMINATE_SENTENCE, None,
                    {"sentence_index": idx, "reason": REASON_PRUNED}))

    actions: list[CorrectionAction] = []
    for v in verifications:
        detail: dict = {"sentence_index": v.triplet.sentence_index}
        if v.subject_rewrite is not None:
            detail["subject"] = {
                "old": v.triplet.subject.surface,
                "new": v.subject_rewrite[1],
                "span": list(v.subject_rewrite[0]),
            }
        if v.verdict == "keep":
            actions.append(CorrectionAction(KIND_KEEP, v.tid, detail))
        elif v.verdict == "replace_object":
            detail.update({
                "old": v.replace_old,
                "new": v.replacement[1] if v.replacement else None,
                "span": list(v.replacement[0]) if v.replacement else None,
                "source": v.source,
            })
            actions.append(CorrectionAction(KIND_REPLACE_OBJECT, v.tid, detail))
        elif v.verdict == "replace_relation":
            detail.update({
                "old": v.replace_old if v.replace_old is not None else v.triplet.relation,
                "new": v.relation,
                "span": list(v.replacement[0]) if v.replacement else None,
                "source": v.source,
            })
            actions.append(CorrectionAction(KIND_REPLACE_RELATION, v.tid, detail))
        else:
            detail["reason"] = v.reason
            if v.excision_span is not None:
                detail["clause_span"] = list(v.excision_span)
            if v.subsumed:
                detail["subsumed"] = True
            actions.append(CorrectionAction(KIND_ELIMINATE_SENTENCE, v.tid, detail))

    if strict:
        covered = set(by_sentence.keys())
        for sentence in sentences:
            if sentence.index not in covered:
                actions.append(CorrectionAction(KIND_ELIMINATE_SENTENCE, None, {
                    "sentence_index": sentence.index, "reason": REASON_NO_TRIPLETS}))

    actions.extend(prune_actions)
    actions.extend(prune_sentence_actions)

    corrected = apply_edits(generated, sentences, actions)

    g_entities = set(g.nodes.keys())
    removed_tids = {v.tid for v in verifications if v.verdict == "eliminate"} | pruned_tids
    surviving_tids = {v.tid for v in verifications} - removed_tids
    surviving_entities = set()
    for tid in surviving_tids:
        surviving_entities.add(triplets[tid].subject.canonical)
        surviving_entities.add(triplets[tid].object.canonical)
    removed_entities = set()
    for tid in removed_tids:
        for key in (triplets[tid].subject.canonical, triplets[tid].object.canonical):
            if key in g_entities and key not in surviving_entities:
                removed_entities.add(key)
    rate = len(removed_entities) / len(g_entities) if g_entities else 0.0

    return CorrectionReport(
        original=generated, corrected=corrected, actions=actions,
        verified_graph=g_hat, eliminated_entity_rate=rate,
        match_log=[v.match for v in verifications],
        sentences=sentences, triplets=triplets,
    )


def eliminated_entity_rate(report: CorrectionReport) -> float:
    """Fraction of the generated graph's entities removed by eliminate/prune."""
    return report.eliminated_entity_rate


def select_salient_sentences(article: str, budget: int,
                             rules: Optional[ExtractionRules] = None) -> str:
    """Pick the sentences carrying the most frequent triplet subjects.

    Subjects rank by (frequency, earliest appearance); sentences come back in
    original order, at most ``budget`` of them. Articles with no extractable
    triplets fall back to the first ``budget`` sentences.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    sentences = split_sentences(article)
    if not sentences:
        return ""
    triplets = extract_triplets(sentences, rules=rules)
    if not triplets:
        logger.info("no triplets extracted; falling back to the first %d sentence(s)", budget)
        chosen = sentences[:budget]
        return " ".join(s.text for s in chosen)

    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    subject_sentences: dict[str, set[int]] = {}
    for order, t in enumerate(triplets):
        key = t.subject.canonical
        counts[key] = counts.get(key, 0) + 1
        first_seen.setdefault(key, order)
        subject_sentences.setdefault(key, set()).add(t.sentence_index)

    ranked = sorted(counts, key=lambda k: (-counts[k], first_seen[k]))
    selected: set[int] = set()
    for key in ranked:
        if len(selected) >= budget:
            break
        selected.update(subject_sentences[key])
    kept_indexes = set(sorted(selected)[:budget])
    return " ".join(s.text for s in sentences if s.index in kept_indexes)
