"""Paired-story corpus: domain types, loading, validation, and query instances.

A corpus is a list of story pairs. Each pair holds a story written right
after the events (pre-retold) and a later retelling (post-retold). Each
story carries event triples (subject, predicate, object); classifying one
triple against the opposite story is the unit of work for the pipeline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import SchemaError, ValidationError

SCHEMA_VERSION = 1

_WS_RUN = re.compile(r"\s+")


def clean_text(text: str) -> str:
    """Trim and collapse internal whitespace runs, preserving case."""
    return _WS_RUN.sub(" ", text.strip())


def normalize_text(text: str) -> str:
    """Canonical form used for all text comparisons: trim, collapse, casefold."""
    return clean_text(text).casefold()


class EventType(Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    ADDITIONAL = "additional"
    FORGOTTEN = "forgotten"
    UNFORGOTTEN = "unforgotten"

    @property
    def abbrev(self) -> str:
        return _ABBREV[self]

    @classmethod
    def from_text(cls, text: str) -> "EventType":
        """Parse a full name or abbreviation, case-insensitively."""
        key = normalize_text(text)
        for member in cls:
            if key == member.value or key == member.abbrev.casefold():
                return member
        raise ValueError(f"unknown event type: {text!r}")


_ABBREV = {
    EventType.CONSISTENT: "CST",
    EventType.INCONSISTENT: "INC",
    EventType.ADDITIONAL: "ADD",
    EventType.FORGOTTEN: "FGT",
    EventType.UNFORGOTTEN: "UFG",
}


class RelevanceLabel(Enum):
    RELEVANT = "relevant"
    IRRELEVANT = "irrelevant"

    @classmethod
    def from_text(cls, text: str) -> "RelevanceLabel":
        key = normalize_text(text)
        for member in cls:
            if key == member.value:
                return member
        raise ValueError(f"unknown relevance label: {text!r}")


def relevance_from_gold(event_type: EventType) -> RelevanceLabel:
    """Collapse a gold event type to the binary working label.

    Consistent, Inconsistent, and Unforgotten events all have related
    descriptions in the reference story, so they collapse to Relevant;
    Additional and Forgotten collapse to Irrelevant.
    """
    if event_type in (
        EventType.CONSISTENT,
        EventType.INCONSISTENT,
        EventType.UNFORGOTTEN,
    ):
        return RelevanceLabel.RELEVANT
    return RelevanceLabel.IRRELEVANT


def relevance_from_seen(event_type: EventType) -> RelevanceLabel:
    """Map a five-way *predicted* event type (e.g. from a SEEN predictions
    file) to the binary label: Consistent and Unforgotten become Relevant,
    everything else Irrelevant.

    This differs from :func:`relevance_from_gold` in how Inconsistent is
    treated: a predicted Inconsistent signals a detected conflict, not a
    matching description.
    """
    if event_type in (EventType.CONSISTENT, EventType.UNFORGOTTEN):
        return RelevanceLabel.RELEVANT
    return RelevanceLabel.IRRELEVANT


class StoryRole(Enum):
    PRE_RETOLD = "pre_retold"
    POST_RETOLD = "post_retold"


class Direction(Enum):
    TARGET_IS_PRE = "target_is_pre"
    TARGET_IS_POST = "target_is_post"


# Gold labels legal for triples of each story role.
_LABELS_BY_ROLE = {
    StoryRole.PRE_RETOLD: {EventType.FORGOTTEN, EventType.UNFORGOTTEN},
    StoryRole.POST_RETOLD: {
        EventType.CONSISTENT,
        EventType.INCONSISTENT,
        EventType.ADDITIONAL,
    },
}


@dataclass(frozen=True)
class EventTriple:
    triple_id: str
    subject: str
    predicate: str
    object: str | None
    sentence_index: int
    gold_label: EventType | None = None


# A coreference mention: (sentence_index, surface text).
Mention = tuple[int, str]


@dataclass(frozen=True)
class Story:
    story_id: str
    role: StoryRole
    sentences: tuple[str, ...]
    triples: tuple[EventTriple, ...]
    coref_clusters: tuple[tuple[Mention, ...], ...] = ()


@dataclass(frozen=True)
class StoryPair:
    pair_id: str
    pre: Story
    post: Story


@dataclass(frozen=True)
class QueryInstance:
    pair_id: str
    query: EventTriple
    query_text: str
    reference: Story
    direction: Direction
    gold_label: EventType | None = None

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.pair_id, self.query.triple_id, self.direction.value)


def render_query_sentence(triple: EventTriple) -> str:
    """Render a triple as a sentence: slots joined by single spaces, first
    character uppercased, terminal period. An absent object slot is omitted."""
    parts = [clean_text(triple.subject), clean_text(triple.predicate)]
    if triple.object is not None and clean_text(triple.object):
        parts.append(clean_text(triple.object))
    sentence = " ".join(p for p in parts if p)
    return sentence[:1].upper() + sentence[1:] + "."


def validate_story(pair_id: str, story: Story) -> None:
    if not isinstance(story.role, StoryRole):
        raise ValidationError(f"pair {pair_id}: story {story.story_id}: bad role")
    seen_ids: set[str] = set()
    legal = _LABELS_BY_ROLE[story.role]
    for t in story.triples:
        if not clean_text(t.subject):
            raise ValidationError(
                f"pair {pair_id}: triple {t.triple_id}: empty subject"
            )
        if not clean_text(t.predicate):
            raise ValidationError(
                f"pair {pair_id}: triple {t.triple_id}: empty predicate"
            )
        if t.triple_id in seen_ids:
            raise ValidationError(
                f"pair {pair_id}: duplicate triple_id {t.triple_id!r} "
                f"in story {story.story_id}"
            )
        seen_ids.add(t.triple_id)
        if not 0 <= t.sentence_index < len(story.sentences):
            raise ValidationError(
                f"pair {pair_id}: triple {t.triple_id}: sentence_index "
                f"{t.sentence_index} out of range (story has "
                f"{len(story.sentences)} sentences)"
            )
        if t.gold_label is not None and t.gold_label not in legal:
            raise ValidationError(
                f"pair {pair_id}: triple {t.triple_id}: gold label "
                f"{t.gold_label.value!r} not legal for a {story.role.value} story"
            )
    for cluster in story.coref_clusters:
        for sentence_index, _text in cluster:
            if not 0 <= sentence_index < len(story.sentences):
                raise ValidationError(
                    f"pair {pair_id}: story {story.story_id}: coref mention "
                    f"references sentence {sentence_index} out of range"
                )


def validate_pair(pair: StoryPair) -> None:
    if pair.pre.role is not StoryRole.PRE_RETOLD:
        raise ValidationError(f"pair {pair.pair_id}: pre story has role {pair.pre.role.value}")
    if pair.post.role is not StoryRole.POST_RETOLD:
        raise ValidationError(f"pair {pair.pair_id}: post story has role {pair.post.role.value}")
    validate_story(pair.pair_id, pair.pre)
    validate_story(pair.pair_id, pair.post)


def instances_of(pair: StoryPair) -> list[QueryInstance]:
    """One classification instance per triple: pre-story triples are checked
    against the post story and vice versa."""
    out: list[QueryInstance] = []
    for t in pair.pre.triples:
        out.append(
            QueryInstance(
                pair_id=pair.pair_id,
                query=t,
                query_text=render_query_sentence(t),
                reference=pair.post,
                direction=Direction.TARGET_IS_PRE,
                gold_label=t.gold_label,
            )
        )
    for t in pair.post.triples:
        out.append(
            QueryInstance(
                pair_id=pair.pair_id,
                query=t,
                query_text=render_query_sentence(t),
                reference=pair.pre,
                direction=Direction.TARGET_IS_POST,
                gold_label=t.gold_label,
            )
        )
    return out


def all_instances(pairs: list[StoryPair]) -> list[QueryInstance]:
    out: list[QueryInstance] = []
    for pair in pairs:
        out.extend(instances_of(pair))
    return out


# ---------------------------------------------------------------------------
# Canonical JSON schema (versioned; documented in README)
# ---------------------------------------------------------------------------


def _triple_to_dict(t: EventTriple) -> dict:
    return {
        "triple_id": t.triple_id,
        "subject": t.subject,
        "predicate": t.predicate,
        "object": t.object,
        "sentence_index": t.sentence_index,
        "gold_label": t.gold_label.value if t.gold_label else None,
    }


def _story_to_dict(s: Story) -> dict:
    doc = {
        "story_id": s.story_id,
        "role": s.role.value,
        "sentences": list(s.sentences),
        "triples": [_triple_to_dict(t) for t in s.triples],
    }
    if s.coref_clusters:
        doc["coref"] = [
            [[idx, text] for idx, text in cluster] for cluster in s.coref_clusters
        ]
    return doc


def pair_to_dict(pair: StoryPair) -> dict:
    return {
        "pair_id": pair.pair_id,
        "pre": _story_to_dict(pair.pre),
        "post": _story_to_dict(pair.post),
    }


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing field {key!r}")
    return doc[key]


def _triple_from_dict(doc: dict, where: str) -> EventTriple:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: triple is not an object")
    gold = doc.get("gold_label")
    try:
        gold_label = EventType.from_text(gold) if gold is not None else None
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    sentence_index = _require(doc, "sentence_index", where)
    if not isinstance(sentence_index, int) or isinstance(sentence_index, bool):
        raise SchemaError(f"{where}: sentence_index must be an integer")
    return EventTriple(
        triple_id=str(_require(doc, "triple_id", where)),
        subject=str(_require(doc, "subject", where)),
        predicate=str(_require(doc, "predicate", where)),
        object=None if doc.get("object") is None else str(doc["object"]),
        sentence_index=sentence_index,
        gold_label=gold_label,
    )


def _story_from_dict(doc: dict, where: str) -> Story:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: story is not an object")
    try:
        role = StoryRole(_require(doc, "role", where))
    except ValueError as exc:
        raise SchemaError(f"{where}: bad role") from exc
    sentences = _require(doc, "sentences", where)
    triples = _require(doc, "triples", where)
    if not isinstance(sentences, list) or not isinstance(triples, list):
        raise SchemaError(f"{where}: sentences and triples must be arrays")
    clusters: list[tuple[Mention, ...]] = []
    for cluster in doc.get("coref", []):
        mentions = []
        for m in cluster:
            if not (isinstance(m, list) and len(m) == 2 and isinstance(m[0], int)):
                raise SchemaError(f"{where}: coref mention must be [sentence_index, text]")
            mentions.append((m[0], str(m[1])))
        clusters.append(tuple(mentions))
    return Story(
        story_id=str(_require(doc, "story_id", where)),
        role=role,
        sentences=tuple(str(s) for s in sentences),
        triples=tuple(
            _triple_from_dict(t, f"{where}.triples[{i}]") for i, t in enumerate(triples)
        ),
        coref_clusters=tuple(clusters),
    )


def pair_from_dict(doc: dict, where: str = "pair") -> StoryPair:
    pair = StoryPair(
        pair_id=str(_require(doc, "pair_id", where)),
        pre=_story_from_dict(_require(doc, "pre", where), f"{where}.pre"),
        post=_story_from_dict(_require(doc, "post", where), f"{where}.post"),
    )
    validate_pair(pair)
    return pair


def load_corpus(path: str | Path) -> list[StoryPair]:
    """Load and validate a canonical corpus file, preserving pair order."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read corpus {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: corpus document must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    pairs_doc = _require(doc, "pairs", str(path))
    if not isinstance(pairs_doc, list):
        raise SchemaError(f"{path}: pairs must be an array")
    return [
        pair_from_dict(p, where=f"pairs[{i}]") for i, p in enumerate(pairs_doc)
    ]


def write_corpus(pairs: list[StoryPair], path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "pairs": [pair_to_dict(p) for p in pairs],
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
