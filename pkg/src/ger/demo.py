"""Bundled demo fixtures: a small synthetic corpus covering all five event
types, plus a scripted-response file that makes every module answer with the
gold-derived value, so the pipeline runs offline end to end."""

from __future__ import annotations

from pathlib import Path

from .corpus import (
    EventTriple,
    EventType,
    RelevanceLabel,
    Story,
    StoryPair,
    StoryRole,
    all_instances,
    relevance_from_gold,
    write_corpus,
)
from .llm_gateway import MockScript, TemplateId

_THEMES = [
    ("the zoo", "my girlfriend", "some seals", "an ice cream", "either April or June", "a plush otter"),
    ("the beach", "my brother", "two dolphins", "fish tacos", "a Tuesday morning", "a straw hat"),
    ("the museum", "my roommate", "old maps", "a pretzel", "last winter", "postcards"),
    ("the night market", "my cousin", "a fire dancer", "stinky tofu", "sometime in May", "paper lanterns"),
    ("the lake", "my coworker", "wild geese", "grilled corn", "early autumn", "a wooden whistle"),
]


def make_demo_pairs(n_pairs: int = 5) -> list[StoryPair]:
    """Build n_pairs story pairs, six instances each: per pair the pre story
    carries two Unforgotten and one Forgotten triple, the post story one
    each of Consistent, Inconsistent, and Additional."""
    pairs = []
    for i in range(n_pairs):
        place, companion, sight, food, wrong_time, extra = _THEMES[i % len(_THEMES)]
        suffix = "" if i < len(_THEMES) else f" (trip {i // len(_THEMES) + 1})"
        place = place + suffix
        pair_id = f"demo-{i:02d}"
        pre = Story(
            story_id=f"{pair_id}-pre",
            role=StoryRole.PRE_RETOLD,
            sentences=(
                f"I went to {place} with {companion}.",
                f"We saw {sight} there.",
                f"I ate {food} afterwards.",
            ),
            triples=(
                EventTriple(
                    "pre-0", f"me and {companion}", "went to", place, 0,
                    EventType.UNFORGOTTEN,
                ),
                EventTriple("pre-1", "we", "saw", sight, 1, EventType.UNFORGOTTEN),
                EventTriple("pre-2", "I", "ate", food, 2, EventType.FORGOTTEN),
            ),
            coref_clusters=(((0, f"me and {companion}"), (1, "we")),),
        )
        post = Story(
            story_id=f"{pair_id}-post",
            role=StoryRole.POST_RETOLD,
            sentences=(
                f"I remember going to {place} with {companion}.",
                f"It was {wrong_time}.",
                f"We also bought {extra}.",
            ),
            triples=(
                EventTriple(
                    "post-0", f"me and {companion}", "went to", place, 0,
                    EventType.CONSISTENT,
                ),
                EventTriple("post-1", "it", "was", wrong_time, 1, EventType.INCONSISTENT),
                EventTriple("post-2", "we", "bought", extra, 2, EventType.ADDITIONAL),
            ),
        )
        pairs.append(StoryPair(pair_id=pair_id, pre=pre, post=post))
    return pairs


def gold_script_for(pairs: list[StoryPair]) -> MockScript:
    """Script every provider response from the gold labels, so the pipeline
    reproduces the gold event types exactly (all corrections agree, the
    discriminator answers the gold consistency)."""
    script = MockScript()
    for instance in all_instances(pairs):
        gold = instance.gold_label
        if gold is None:
            raise ValueError(f"instance {instance.key} has no gold label")
        relevance = relevance_from_gold(gold)
        answer = "Relevant" if relevance is RelevanceLabel.RELEVANT else "Irrelevant"
        script.script(TemplateId.BASE_PREDICT, instance.key, f"ANSWER: {answer}")
        support = "1" if relevance is RelevanceLabel.RELEVANT else "none"
        script.script(TemplateId.SUPPORT_CLASSIFY, instance.key, f"ANSWER: {support}")
        if gold is EventType.CONSISTENT:
            script.script(
                TemplateId.CONSISTENCY_DISCRIMINATE, instance.key, "ANSWER: Consistent"
            )
        elif gold is EventType.INCONSISTENT:
            script.script(
                TemplateId.CONSISTENCY_DISCRIMINATE, instance.key, "ANSWER: Inconsistent"
            )
    # Correction defaults, only reached when a sweep or edited config makes
    # the modules disagree: the rethink mock trusts the support module and
    # withdraws, the explore mock adopts the surfaced support events.
    script.script_default(TemplateId.RETHINK, "ANSWER: Irrelevant")
    script.script_default(TemplateId.EXPLORE, "ANSWER: Relevant")
    return script


_DEMO_CONFIG = """\
# Offline demo configuration: every chat role answers from the scripted
# response file, retrieval runs with vacuous thresholds so the graph passes
# through all reference events, and the hash embedder keeps it networkless.
base.kind = scripted
base.script = demo_script.jsonl
support.use_kg = true
support.kind = scripted
support.script = demo_script.jsonl
correction.kind = scripted
correction.script = demo_script.jsonl
discriminator.kind = scripted
discriminator.script = demo_script.jsonl
retrieval.tau_node = -1.0
retrieval.tau_triple = -1.0
retrieval.aggregation = mean
embedder.kind = hash
embedder.dimension = 64
prompts.catalog = default
run.workers = 1
"""


def write_demo_fixtures(directory: str | Path, n_pairs: int = 5) -> dict[str, Path]:
    """Write demo_corpus.json, demo_script.jsonl, and demo.cfg into the
    directory; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pairs = make_demo_pairs(n_pairs)
    corpus_path = directory / "demo_corpus.json"
    script_path = directory / "demo_script.jsonl"
    config_path = directory / "demo.cfg"
    write_corpus(pairs, corpus_path)
    gold_script_for(pairs).dump(script_path)
    config_path.write_text(_DEMO_CONFIG, encoding="utf-8")
    return {"corpus": corpus_path, "script": script_path, "config": config_path}
