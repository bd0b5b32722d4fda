"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import math
import random

import numpy as np

from ger.corpus import (
    EventTriple,
    EventType,
    Story,
    StoryPair,
    StoryRole,
    render_query_sentence,
)
from ger.embed import HashEmbedder, cosine
from ger.evaluation import EVENT_ORDER
from ger.graph import PersonalKG, build_kg
from ger.retrieval import (
    Aggregation,
    RetrievalConfig,
    SupportEvent,
    triple_score,
)


def make_triple(tid, subject, predicate, obj=None, sentence_index=0, gold=None):
    return EventTriple(
        triple_id=tid,
        subject=subject,
        predicate=predicate,
        object=obj,
        sentence_index=sentence_index,
        gold_label=gold,
    )


def make_story(story_id, role, triples, n_sentences=None, coref=()):
    if n_sentences is None:
        n_sentences = max((t.sentence_index for t in triples), default=-1) + 1 or 1
    return Story(
        story_id=story_id,
        role=role,
        sentences=tuple(f"Sentence {i}." for i in range(n_sentences)),
        triples=tuple(triples),
        coref_clusters=tuple(coref),
    )


def make_pair(pair_id, pre_triples, post_triples, pre_coref=(), post_coref=()):
    return StoryPair(
        pair_id=pair_id,
        pre=make_story(f"{pair_id}-pre", StoryRole.PRE_RETOLD, pre_triples, coref=pre_coref),
        post=make_story(
            f"{pair_id}-post", StoryRole.POST_RETOLD, post_triples, coref=post_coref
        ),
    )


def zoo_pair() -> StoryPair:
    pre = Story(
        story_id="zoo-pre",
        role=StoryRole.PRE_RETOLD,
        sentences=(
            "Me and my girlfriend went to the zoo.",
            "We saw some seals.",
        ),
        triples=(
            make_triple(
                "pre-0", "me and my girlfriend", "went to", "the zoo", 0,
                EventType.UNFORGOTTEN,
            ),
            make_triple("pre-1", "we", "saw", "some seals", 1, EventType.FORGOTTEN),
        ),
    )
    post = Story(
        story_id="zoo-post",
        role=StoryRole.POST_RETOLD,
        sentences=("I remember the zoo trip with my girlfriend.",),
        triples=(
            make_triple(
                "post-0", "me and my girlfriend", "went to", "the zoo", 0,
                EventType.CONSISTENT,
            ),
        ),
    )
    return StoryPair(pair_id="zoo", pre=pre, post=post)


# ---------------------------------------------------------------------------
# Planted-embedding scenarios for retrieval
# ---------------------------------------------------------------------------


def plant_with_cosine(provider: HashEmbedder, text, query_vector, alpha, rng):
    """Plant a unit vector whose cosine with query_vector is exactly alpha
    (up to rounding)."""
    q = np.asarray(query_vector, dtype=float)
    q = q / np.linalg.norm(q)
    noise = rng.standard_normal(len(q))
    noise -= noise.dot(q) * q
    norm = np.linalg.norm(noise)
    if norm < 1e-12:
        noise = np.zeros_like(q)
        noise[0 if abs(q[0]) < 0.9 else 1] = 1.0
        noise -= noise.dot(q) * q
        norm = np.linalg.norm(noise)
    noise /= norm
    vector = alpha * q + math.sqrt(max(0.0, 1.0 - alpha * alpha)) * noise
    provider.plant(text, vector)


QUERY_TEXT = "The planted query sentence."


def random_scenario(seed: int, dimension: int = 8):
    """A random small KG with planted node similarities and a threshold pair
    tau_node <= tau_triple, which guarantees that every triple passing the
    triple threshold contains at least one key node (max node score is at
    least the aggregate for mean, min, and clamped geometric mean)."""
    rng = np.random.default_rng(seed)
    pyrng = random.Random(seed)
    provider = HashEmbedder(dimension=dimension)
    query_vector = rng.standard_normal(dimension)
    provider.plant(QUERY_TEXT, query_vector)

    subjects = [f"subject {i}" for i in range(4)]
    predicates = [f"predicate {i}" for i in range(3)]
    objects = [f"object {i}" for i in range(4)] + [None]
    n_triples = pyrng.randint(1, 8)
    triples = []
    for i in range(n_triples):
        triples.append(
            make_triple(
                f"t{i}",
                pyrng.choice(subjects),
                pyrng.choice(predicates),
                pyrng.choice(objects),
                0,
            )
        )
    story = make_story("scenario", StoryRole.PRE_RETOLD, triples, n_sentences=1)
    surfaces = set()
    for t in triples:
        surfaces.add(t.subject)
        surfaces.add(t.predicate)
        if t.object:
            surfaces.add(t.object)
    for surface in sorted(surfaces):
        plant_with_cosine(provider, surface, query_vector, pyrng.uniform(-1, 1), rng)

    lo, hi = sorted((pyrng.uniform(0, 1), pyrng.uniform(0, 1)))
    cfg = RetrievalConfig(
        node_threshold=lo,
        triple_threshold=hi,
        aggregation=pyrng.choice(list(Aggregation)),
    )
    return build_kg(story), QUERY_TEXT, provider, cfg


def brute_force_support_events(kg: PersonalKG, query_text, provider, cfg):
    """Score every triple directly, with no key-node shortcut, and filter by
    the triple threshold."""
    query_vector = provider.embed(query_text)
    node_score = {}
    for node in kg.nodes:
        node_score[node.node_id] = max(
            cosine(query_vector, provider.embed(surface))
            for surface in sorted(node.surface_forms)
        )
    selected = set()
    for triple in kg.triples:
        scores = [node_score[nid] for nid in triple.node_ids()]
        if triple_score(scores, cfg.aggregation) >= cfg.triple_threshold:
            selected.add(SupportEvent.from_kg_triple(triple))
    return frozenset(selected)


# ---------------------------------------------------------------------------
# Metric recount oracle
# ---------------------------------------------------------------------------


def recount_metrics(gold: dict, pred: dict):
    """Per-class recall/precision/f1 recomputed directly from the raw pairs,
    never building a confusion matrix."""
    out = {}
    for event in EVENT_ORDER:
        tp = sum(1 for k in gold if gold[k] == event and pred[k] == event)
        support = sum(1 for k in gold if gold[k] == event)
        predicted = sum(1 for k in pred if pred[k] == event)
        recall = tp / support if support else None
        precision = tp / predicted if predicted else None
        if recall is None or precision is None or precision + recall == 0:
            f1 = None
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out[event] = (recall, precision, f1, support)
    return out


def chi2_survival_quad(statistic: float) -> float:
    """chi-square(1) survival by numerical integration of the density."""
    from scipy import integrate

    def pdf(x):
        return math.exp(-x / 2.0) / math.sqrt(2.0 * math.pi * x)

    value, _err = integrate.quad(pdf, statistic, np.inf)
    return value


def rendered(triple) -> str:
    return render_query_sentence(triple)
