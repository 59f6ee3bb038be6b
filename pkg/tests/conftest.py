"""Shared fixtures: golden documents and the seeded synthetic corpus generator."""
import random

import pytest

from kgcorrect.kgraph import ORIGIN_CONTEXT, build_graph
from kgcorrect.matching import normalize_entity
from kgcorrect.triplets import extract_triplets, split_sentences

REGISTRAR_CONTEXT = (
    "Domain registrars that support all DNS records required for Microsoft 365 "
    "are Oray , HiChina , east.net, and BIZCN."
)
REGISTRAR_GENERATED = (
    "Domain registrar that support all DNS records required for Microsoft 365 "
    "are GoDaddy and Oray."
)
REGISTRAR_EXPECTED = (
    "Domain registrars that support all DNS records required for Microsoft 365 "
    "are Oray , HiChina , east.net, and BIZCN."
)

PRICING_CONTEXT = (
    "Microsoft 365 Business Basic is $7.2 dollars per user per month. "
    "If you commit yearly the price is $6 dollars per user per month. "
    "Microsoft 365 Business Standard is $15 dollars per user per month."
)
PRICING_GENERATED = (
    "Microsoft 365 Business Basic is priced at $7.2 dollars for each user on a monthly basis. "
    "However, if you choose to commit to a yearly plan, the price decreases to "
    "$6 dollars per user per month."
)


def context_graph(text: str):
    return build_graph(extract_triplets(split_sentences(text)), origin=ORIGIN_CONTEXT)


@pytest.fixture
def registrar_graph():
    return context_graph(REGISTRAR_CONTEXT)


@pytest.fixture
def pricing_graph():
    return context_graph(PRICING_CONTEXT)


# ---------------------------------------------------------------------------
# Seeded synthetic corpus: grounded product facts plus injected hallucinations
# whose entities come from a disjoint vocabulary (so embedding similarity
# stays far below any sane threshold).
# ---------------------------------------------------------------------------

_BRANDS = ["Contoso", "Fabrikam", "Northwind", "Tailspin", "Wingtip",
           "Proseware", "Lamna", "Woodgrove", "Adatum", "Litware"]
_TIERS = ["Basic", "Standard", "Premium", "Core", "Plus", "Team", "Enterprise", "Go"]
_FEATURES = ["advanced reporting", "shared calendars", "custom domains",
             "priority support", "meeting recordings", "device management",
             "audit logging", "extended storage"]
_RELATIONS = ["is", "costs", "includes", "supports"]
_HALLUC_WORDS = ["Zyxqv", "Qwvrk", "Xlpht", "Vbnzz", "Kjqrw", "Pzxvt", "Gqwzk", "Hxvzp"]


def make_fact(rng: random.Random, subject: str):
    relation = rng.choice(_RELATIONS)
    if relation in ("is", "costs"):
        obj = f"${rng.randint(2, 48)} dollars per user per month"
    else:
        obj = rng.choice(_FEATURES)
    return (subject, relation, obj)


def make_synthetic_example(rng: random.Random, with_paraphrase: bool = False,
                           with_lists: bool = False):
    """One (context, generated, hallucinated entity canonicals) triple."""
    subjects = [f"{rng.choice(_BRANDS)} {rng.choice(_TIERS)} {rng.randint(1, 9)}"
                for _ in range(rng.randint(2, 4))]
    subjects = list(dict.fromkeys(subjects))
    facts = [make_fact(rng, s) for s in subjects]
    context_sentences = [f"{s} {r} {o}." for s, r, o in facts]
    if with_lists:
        list_subject = f"{rng.choice(_BRANDS)} {rng.choice(_TIERS)} bundle"
        members = rng.sample(_FEATURES, 3)
        context_sentences.append(
            f"{list_subject} includes {members[0]}, {members[1]}, and {members[2]}.")
        facts.append((list_subject, "includes", members[0]))

    generated_sentences = []
    for s, r, o in rng.sample(facts, k=max(1, len(facts) - 1)):
        generated_sentences.append(f"{s} {r} {o}.")
    if with_paraphrase and facts:
        s, r, o = rng.choice(facts)
        if o.startswith("$"):
            wrong = f"${rng.randint(50, 99)} dollars per user per month"
            generated_sentences.append(f"{s} {r} {wrong}.")

    halluc_entities = set()
    for i in range(rng.randint(1, 3)):
        subject = f"{rng.choice(_HALLUC_WORDS)} {rng.choice(_HALLUC_WORDS)} {i}"
        obj = f"{rng.choice(_HALLUC_WORDS).lower()} {rng.randint(100, 999)} credits"
        generated_sentences.append(f"{subject} is {obj}.")
        halluc_entities.add(normalize_entity(subject))
        halluc_entities.add(normalize_entity(obj))

    rng.shuffle(generated_sentences)
    return " ".join(context_sentences), " ".join(generated_sentences), halluc_entities
