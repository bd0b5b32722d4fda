"""Knowledge-graph support-event retrieval.

Scores every graph node against the query by cosine similarity, keeps nodes
at or above the node threshold as key nodes, assembles the triples touching
any key node, scores each triple by combining its node scores, and keeps
triples at or above the triple threshold as support events.

Both thresholds are closed (a score exactly equal to the threshold passes),
so an exact-match threshold of 1.0 is usable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .corpus import EventTriple, clean_text, normalize_text
from .errors import ConfigError
from .graph import KGTriple, PersonalKG, triples_containing
from .embed import EmbeddingProvider, cosine


class Aggregation(Enum):
    MEAN = "mean"
    MIN = "min"
    GEOMETRIC_MEAN_NONNEG = "geo"


@dataclass(frozen=True)
class RetrievalConfig:
    node_threshold: float = 0.5
    triple_threshold: float = 0.5
    aggregation: Aggregation = Aggregation.MEAN

    def __post_init__(self) -> None:
        for label, value in (
            ("node_threshold", self.node_threshold),
            ("triple_threshold", self.triple_threshold),
        ):
            if not -1.0 <= value <= 1.0:
                raise ConfigError(f"{label} must be in [-1, 1], got {value}")
        if not isinstance(self.aggregation, Aggregation):
            raise ConfigError(f"bad aggregation: {self.aggregation!r}")


@dataclass(frozen=True)
class ScoredNode:
    node_id: str
    score: float


@dataclass(frozen=True)
class ScoredTriple:
    triple_id: str
    score: float
    node_scores: tuple[tuple[str, float], ...]


@dataclass(frozen=True, order=True)
class SupportEvent:
    """Canonical key for one reference-story event: the triple id plus the
    normalized slot texts."""

    triple_id: str
    subject: str
    predicate: str
    object: str  # empty string when the slot is absent

    @classmethod
    def from_event_triple(cls, triple: EventTriple) -> "SupportEvent":
        obj = triple.object if triple.object is not None else ""
        return cls(
            triple_id=triple.triple_id,
            subject=normalize_text(triple.subject),
            predicate=normalize_text(triple.predicate),
            object=normalize_text(obj),
        )

    @classmethod
    def from_kg_triple(cls, triple: KGTriple) -> "SupportEvent":
        return cls(
            triple_id=triple.triple_id,
            subject=normalize_text(triple.subject_text),
            predicate=normalize_text(triple.predicate_text),
            object=normalize_text(triple.object_text or ""),
        )

    def sentence(self) -> str:
        parts = [self.subject, self.predicate]
        if self.object:
            parts.append(self.object)
        text = clean_text(" ".join(parts))
        return text[:1].upper() + text[1:] + "."


SupportEventSet = frozenset[SupportEvent]


def score_nodes(
    kg: PersonalKG, query_text: str, provider: EmbeddingProvider
) -> list[ScoredNode]:
    """One score per node: the max cosine between the query and any of the
    node's merged surface forms."""
    query_vector = provider.embed(query_text)
    scored = []
    for node in kg.nodes:
        score = max(
            cosine(query_vector, provider.embed(surface))
            for surface in sorted(node.surface_forms)
        )
        scored.append(ScoredNode(node_id=node.node_id, score=score))
    return scored


def key_nodes(scored: list[ScoredNode], node_threshold: float) -> list[ScoredNode]:
    return [node for node in scored if node.score >= node_threshold]


def candidate_triples(kg: PersonalKG, key: list[ScoredNode]) -> list[str]:
    """Ids of all triples containing at least one key node, deduplicated,
    in graph order."""
    wanted: set[str] = set()
    for node in key:
        for triple in triples_containing(kg, node.node_id):
            wanted.add(triple.triple_id)
    return [t.triple_id for t in kg.triples if t.triple_id in wanted]


def triple_score(node_scores: list[float], aggregation: Aggregation) -> float:
    """Combine the scores of a triple's present nodes into one triple score."""
    if len(node_scores) < 2:
        raise ConfigError("a triple score needs at least subject and predicate scores")
    if aggregation is Aggregation.MEAN:
        return sum(node_scores) / len(node_scores)
    if aggregation is Aggregation.MIN:
        return min(node_scores)
    clamped = [min(1.0, max(0.0, s)) for s in node_scores]
    product = math.prod(clamped)
    return product ** (1.0 / len(clamped))


def score_triple_nodes(
    kg: PersonalKG, triple_id: str, scores_by_node: dict[str, float]
) -> tuple[tuple[str, float], ...]:
    triple = next(t for t in kg.triples if t.triple_id == triple_id)
    return tuple((nid, scores_by_node[nid]) for nid in triple.node_ids())


def support_events_kg(
    kg: PersonalKG,
    query_text: str,
    provider: EmbeddingProvider,
    cfg: RetrievalConfig,
) -> SupportEventSet:
    """Full retrieval pass: node scoring, key-node selection, candidate
    assembly, triple scoring, and the final triple-threshold filter."""
    scored = score_nodes(kg, query_text, provider)
    keys = key_nodes(scored, cfg.node_threshold)
    scores_by_node = {node.node_id: node.score for node in scored}
    selected = []
    for triple_id in candidate_triples(kg, keys):
        node_scores = score_triple_nodes(kg, triple_id, scores_by_node)
        score = triple_score([s for _, s in node_scores], cfg.aggregation)
        if score >= cfg.triple_threshold:
            selected.append(triple_id)
    by_id = {t.triple_id: t for t in kg.triples}
    return frozenset(SupportEvent.from_kg_triple(by_id[tid]) for tid in selected)


def scored_triples(
    kg: PersonalKG,
    query_text: str,
    provider: EmbeddingProvider,
    cfg: RetrievalConfig,
) -> list[ScoredTriple]:
    """Scores for every candidate triple; used by the inspection CLI."""
    scored = score_nodes(kg, query_text, provider)
    keys = key_nodes(scored, cfg.node_threshold)
    scores_by_node = {node.node_id: node.score for node in scored}
    out = []
    for triple_id in candidate_triples(kg, keys):
        node_scores = score_triple_nodes(kg, triple_id, scores_by_node)
        out.append(
            ScoredTriple(
                triple_id=triple_id,
                score=triple_score([s for _, s in node_scores], cfg.aggregation),
                node_scores=node_scores,
            )
        )
    return out
