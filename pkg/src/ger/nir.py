"""Best-effort converter from NIR release files to the canonical corpus.

The upstream layout is not formally documented, so the converter accepts a
family of JSON shapes (pair records with pre/post stories under several key
aliases, events as objects or arrays) and reports everything it skips with a
reason instead of failing the whole run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    EventTriple,
    EventType,
    Story,
    StoryPair,
    StoryRole,
    clean_text,
    validate_pair,
    write_corpus,
)
from .errors import ConversionError, ValidationError

_PAIR_ID_KEYS = ("pair_id", "id", "pid", "story_id", "name")
_PRE_KEYS = ("pre", "pre_story", "pre_retold", "story_a", "storyA", "A", "a")
_POST_KEYS = ("post", "post_story", "post_retold", "story_b", "storyB", "B", "b")
_PRE_EVENT_KEYS = ("pre_events", "pre_triples", "events_a", "triples_a")
_POST_EVENT_KEYS = ("post_events", "post_triples", "events_b", "triples_b")
_SENTENCE_KEYS = ("sentences", "sents", "text", "story")
_EVENT_KEYS = ("triples", "events", "event_triples")
_SUBJECT_KEYS = ("subject", "subj", "s")
_PREDICATE_KEYS = ("predicate", "pred", "p", "relation", "verb")
_OBJECT_KEYS = ("object", "obj", "o")
_INDEX_KEYS = ("sentence_index", "sentence_id", "sent_id", "sent_idx", "sid", "sentence")
_LABEL_KEYS = ("label", "type", "event_type", "gold", "gold_label")

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


@dataclass
class ConversionReport:
    files_seen: int = 0
    files_recognized: int = 0
    pair_count: int = 0
    instance_count: int = 0
    class_counts: dict[str, int] = field(default_factory=dict)
    unlabeled_count: int = 0
    skipped: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "files_seen": self.files_seen,
            "files_recognized": self.files_recognized,
            "pairs": self.pair_count,
            "instances": self.instance_count,
            "class_counts": dict(sorted(self.class_counts.items())),
            "unlabeled": self.unlabeled_count,
            "skipped": list(self.skipped),
            "notes": list(self.notes),
        }


def _first_key(doc: dict, keys) -> object | None:
    for key in keys:
        if key in doc:
            return doc[key]
    return None


def _split_sentences(text: str) -> list[str]:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if len(lines) > 1:
        return lines
    return [s for s in _SENTENCE_SPLIT.split(text.strip()) if s]


def _extract_sentences(story_value) -> list[str] | None:
    if isinstance(story_value, str):
        return _split_sentences(story_value)
    if isinstance(story_value, list) and all(isinstance(s, str) for s in story_value):
        return [str(s) for s in story_value]
    if isinstance(story_value, dict):
        raw = _first_key(story_value, _SENTENCE_KEYS)
        if isinstance(raw, str):
            return _split_sentences(raw)
        if isinstance(raw, list):
            return [str(s) for s in raw]
    return None


def _extract_events(story_value, pair_doc: dict, pair_level_keys) -> list | None:
    if isinstance(story_value, dict):
        events = _first_key(story_value, _EVENT_KEYS)
        if isinstance(events, list):
            return events
    events = _first_key(pair_doc, pair_level_keys)
    if isinstance(events, list):
        return events
    return None


def _parse_event(
    raw,
    prefix: str,
    position: int,
    sentence_count: int,
    role: StoryRole,
    report: ConversionReport,
) -> EventTriple | None:
    where = f"{prefix}-{position}"
    if isinstance(raw, (list, tuple)):
        if len(raw) < 2:
            report.skipped.append(f"{where}: event array too short")
            return None
        subject, predicate = str(raw[0]), str(raw[1])
        obj = str(raw[2]) if len(raw) > 2 and raw[2] not in (None, "") else None
        index = raw[3] if len(raw) > 3 and isinstance(raw[3], int) else None
        label_text = None
    elif isinstance(raw, dict):
        subject_raw = _first_key(raw, _SUBJECT_KEYS)
        predicate_raw = _first_key(raw, _PREDICATE_KEYS)
        if subject_raw is None or predicate_raw is None:
            report.skipped.append(f"{where}: event lacks subject or predicate")
            return None
        subject, predicate = str(subject_raw), str(predicate_raw)
        obj_raw = _first_key(raw, _OBJECT_KEYS)
        if obj_raw in (None, ""):
            obj = None
            report.notes.append(f"{where}: object absent")
        else:
            obj = str(obj_raw)
        index = _first_key(raw, _INDEX_KEYS)
        if not isinstance(index, int) or isinstance(index, bool):
            index = None
        label_raw = _first_key(raw, _LABEL_KEYS)
        label_text = str(label_raw) if label_raw is not None else None
    else:
        report.skipped.append(f"{where}: event is neither object nor array")
        return None

    if not clean_text(subject) or not clean_text(predicate):
        report.skipped.append(f"{where}: empty subject or predicate")
        return None
    if index is None:
        report.notes.append(f"{where}: missing sentence index, defaulted to 0")
        index = 0
    if not 0 <= index < sentence_count:
        report.skipped.append(f"{where}: sentence index {index} out of range")
        return None

    gold = None
    if label_text is not None:
        try:
            gold = EventType.from_text(label_text)
        except ValueError:
            report.skipped.append(f"{where}: unrecognized label {label_text!r}")
            return None
        legal = (
            {EventType.FORGOTTEN, EventType.UNFORGOTTEN}
            if role is StoryRole.PRE_RETOLD
            else {EventType.CONSISTENT, EventType.INCONSISTENT, EventType.ADDITIONAL}
        )
        if gold not in legal:
            report.skipped.append(
                f"{where}: label {gold.value!r} not legal for {role.value} story"
            )
            return None
    return EventTriple(
        triple_id=f"{prefix}-{position}",
        subject=subject,
        predicate=predicate,
        object=obj,
        sentence_index=index,
        gold_label=gold,
    )


def _parse_story(
    story_value,
    pair_doc: dict,
    pair_level_keys,
    pair_id: str,
    role: StoryRole,
    report: ConversionReport,
) -> Story | None:
    sentences = _extract_sentences(story_value)
    if not sentences:
        report.skipped.append(f"pair {pair_id}: no sentences for {role.value} story")
        return None
    events_raw = _extract_events(story_value, pair_doc, pair_level_keys)
    if events_raw is None:
        report.skipped.append(f"pair {pair_id}: no events for {role.value} story")
        return None
    prefix = "pre" if role is StoryRole.PRE_RETOLD else "post"
    triples = []
    for position, raw in enumerate(events_raw):
        triple = _parse_event(raw, prefix, position, len(sentences), role, report)
        if triple is not None:
            triples.append(triple)
    return Story(
        story_id=f"{pair_id}-{prefix}",
        role=role,
        sentences=tuple(sentences),
        triples=tuple(triples),
    )


def _parse_pair(doc, fallback_id: str, report: ConversionReport) -> StoryPair | None:
    if not isinstance(doc, dict):
        report.skipped.append(f"{fallback_id}: record is not an object")
        return None
    pair_id_raw = _first_key(doc, _PAIR_ID_KEYS)
    pair_id = str(pair_id_raw) if pair_id_raw is not None else fallback_id
    pre_value = _first_key(doc, _PRE_KEYS)
    post_value = _first_key(doc, _POST_KEYS)
    if pre_value is None or post_value is None:
        report.skipped.append(f"{pair_id}: missing pre or post story")
        return None
    pre = _parse_story(pre_value, doc, _PRE_EVENT_KEYS, pair_id, StoryRole.PRE_RETOLD, report)
    post = _parse_story(
        post_value, doc, _POST_EVENT_KEYS, pair_id, StoryRole.POST_RETOLD, report
    )
    if pre is None or post is None:
        return None
    pair = StoryPair(pair_id=pair_id, pre=pre, post=post)
    try:
        validate_pair(pair)
    except ValidationError as exc:
        report.skipped.append(f"{pair_id}: {exc}")
        return None
    return pair


def _records_of(doc) -> list | None:
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        for key in ("pairs", "data", "records", "stories"):
            if isinstance(doc.get(key), list):
                return doc[key]
        return [doc]
    return None


def convert_nir(src: str | Path, dst: str | Path) -> ConversionReport:
    """Convert a directory of NIR files into a canonical corpus at dst.

    Raises ConversionError when no file in src can be recognized at all.
    """
    src = Path(src)
    report = ConversionReport()
    pairs: list[StoryPair] = []
    files = sorted(
        p for p in src.rglob("*") if p.is_file() and p.suffix in (".json", ".jsonl")
    )
    report.files_seen = len(files)
    for path in files:
        text = path.read_text(encoding="utf-8")
        records: list | None = None
        if path.suffix == ".jsonl":
            try:
                records = [json.loads(line) for line in text.splitlines() if line.strip()]
            except json.JSONDecodeError as exc:
                report.skipped.append(f"{path.name}: bad JSON lines: {exc}")
                continue
        else:
            try:
                records = _records_of(json.loads(text))
            except json.JSONDecodeError as exc:
                report.skipped.append(f"{path.name}: bad JSON: {exc}")
                continue
        if not records:
            report.skipped.append(f"{path.name}: no records found")
            continue
        converted_any = False
        for position, record in enumerate(records):
            pair = _parse_pair(record, f"{path.stem}-{position}", report)
            if pair is not None:
                pairs.append(pair)
                converted_any = True
        if converted_any:
            report.files_recognized += 1
    if report.files_recognized == 0:
        raise ConversionError(
            f"no NIR files recognized under {src} "
            f"({report.files_seen} file(s) seen; "
            f"{'; '.join(report.skipped[:5]) if report.skipped else 'none readable'})"
        )
    report.pair_count = len(pairs)
    for pair in pairs:
        for story in (pair.pre, pair.post):
            for triple in story.triples:
                report.instance_count += 1
                if triple.gold_label is None:
                    report.unlabeled_count += 1
                else:
                    key = triple.gold_label.value
                    report.class_counts[key] = report.class_counts.get(key, 0) + 1
    write_corpus(pairs, dst)
    return report
