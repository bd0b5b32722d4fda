"""End-to-end refinement pipeline.

For each classification instance: a base module produces an initial binary
relevance label; a support module retrieves support events from the
reference story through the knowledge graph and a chat model, fusing the two
selections by intersection; a correction module keeps agreed labels and
re-asks the model on disagreement (a rethinking prompt when the base said
Relevant, an exploration prompt fed with the support events when it said
Irrelevant); a label mapper converts the final binary label back to the
five-way event type, consulting a consistency discriminator where needed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import (
    Direction,
    EventType,
    QueryInstance,
    RelevanceLabel,
    StoryPair,
    all_instances,
    render_query_sentence,
)
from .embed import EmbeddingProvider
from .errors import ConfigError, GerError, ParseError, PipelineError
from .graph import PersonalKG, build_kg
from .llm_gateway import (
    ChatProvider,
    Completion,
    PrecomputedLabelSource,
    PromptCatalog,
    PromptTemplate,
    ResponseCache,
    TemplateId,
    complete,
    default_prompt_catalog,
    parse_consistency,
    parse_relevance,
    parse_support_ids,
)
from .retrieval import (
    RetrievalConfig,
    SupportEvent,
    SupportEventSet,
    support_events_kg,
)


class CorrectionBranch(Enum):
    AGREE = "agree"
    RETHINK = "rethink"
    EXPLORE = "explore"


@dataclass(frozen=True)
class TraceEntry:
    template: str
    prompt_hash: str
    parsed: str
    warnings: tuple[str, ...] = ()
    prompt: str | None = None


@dataclass(frozen=True)
class PipelinePrediction:
    pair_id: str
    triple_id: str
    direction: Direction
    gold_label: EventType | None
    base_label: RelevanceLabel
    kg_support: SupportEventSet
    llm_support: SupportEventSet
    fused_support: SupportEventSet
    support_label: RelevanceLabel
    correction_branch: CorrectionBranch
    final_relevance: RelevanceLabel
    final_event_type: EventType
    trace: tuple[TraceEntry, ...]

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.pair_id, self.triple_id, self.direction.value)


@dataclass(frozen=True)
class InstanceFailure:
    pair_id: str
    triple_id: str
    direction: Direction
    reason: str


@dataclass
class PipelineRun:
    predictions: list[PipelinePrediction]
    failures: list[InstanceFailure]

    @property
    def total(self) -> int:
        return len(self.predictions) + len(self.failures)


@dataclass
class GerConfig:
    """Runtime wiring for one pipeline run.

    Exactly one base source must be set. At least one support source must be
    enabled; a ground-truth oracle, when set, replaces both support
    classifiers.
    """

    base_provider: ChatProvider | None = None
    base_precomputed: PrecomputedLabelSource | None = None
    use_kg_support: bool = True
    support_provider: ChatProvider | None = None
    ground_truth_support: PrecomputedLabelSource | None = None
    correction_provider: ChatProvider | None = None
    discriminator_provider: ChatProvider | None = None
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    catalog: PromptCatalog = field(default_factory=default_prompt_catalog)
    embedder: EmbeddingProvider | None = None
    response_cache: ResponseCache | None = None
    few_shot: dict[TemplateId, str] = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        if (self.base_provider is None) == (self.base_precomputed is None):
            raise ConfigError(
                "exactly one of base_provider and base_precomputed must be set"
            )
        if self.ground_truth_support is None:
            if not self.use_kg_support and self.support_provider is None:
                raise ConfigError("no support source enabled")
            if self.use_kg_support and self.embedder is None:
                raise ConfigError("knowledge-graph support requires an embedder")
        if self.correction_provider is None:
            raise ConfigError("a correction provider is required")
        if self.discriminator_provider is None:
            raise ConfigError("a consistency discriminator provider is required")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


def story_text(story) -> str:
    return "\n".join(story.sentences)


_RETRY_REMINDERS = {
    TemplateId.BASE_PREDICT: "Reminder: end with ANSWER: Relevant or ANSWER: Irrelevant.",
    TemplateId.RETHINK: "Reminder: end with ANSWER: Relevant or ANSWER: Irrelevant.",
    TemplateId.EXPLORE: "Reminder: end with ANSWER: Relevant or ANSWER: Irrelevant.",
    TemplateId.SUPPORT_CLASSIFY: "Reminder: end with ANSWER: <numbers> or ANSWER: none.",
    TemplateId.CONSISTENCY_DISCRIMINATE: (
        "Reminder: end with ANSWER: Consistent or ANSWER: Inconsistent."
    ),
}


def _ask(
    cfg: GerConfig,
    provider: ChatProvider,
    template: PromptTemplate,
    bindings: dict[str, str],
    instance: QueryInstance,
    parser,
    trace: list[TraceEntry],
):
    """One completion plus parse, retrying once with a terse reminder suffix.

    Returns the parsed value, or raises ParseError after the retry; recording
    trace entries either way.
    """
    attempt_template = template
    for attempt in range(2):
        completion: Completion = complete(
            provider,
            attempt_template,
            bindings,
            instance_key=instance.key,
            cache=cfg.response_cache,
        )
        try:
            parsed = parser(completion.text)
        except ParseError:
            trace.append(
                TraceEntry(
                    template=template.template_id.value,
                    prompt_hash=completion.prompt_hash,
                    parsed="",
                    warnings=("unparsable response",),
                    prompt=completion.prompt,
                )
            )
            if attempt == 1:
                raise
            attempt_template = PromptTemplate(
                template_id=template.template_id,
                text=template.text + "\n\n" + _RETRY_REMINDERS[template.template_id],
            )
            continue
        value, warnings = parsed if isinstance(parsed, tuple) else (parsed, [])
        trace.append(
            TraceEntry(
                template=template.template_id.value,
                prompt_hash=completion.prompt_hash,
                parsed=_render_parsed(value),
                warnings=tuple(warnings),
                prompt=completion.prompt,
            )
        )
        return value
    raise AssertionError("unreachable")


def _render_parsed(value) -> str:
    if isinstance(value, (RelevanceLabel, EventType)):
        return value.value
    if isinstance(value, frozenset):
        return ",".join(str(v) for v in sorted(value))
    return str(value)


def base_predict(
    cfg: GerConfig, instance: QueryInstance, trace: list[TraceEntry]
) -> RelevanceLabel:
    """Initial relevance label, from the chat provider or a predictions file."""
    if cfg.base_precomputed is not None:
        label = cfg.base_precomputed.relevance_for(
            instance.pair_id, instance.query.triple_id
        )
        trace.append(
            TraceEntry(
                template=TemplateId.BASE_PREDICT.value,
                prompt_hash="precomputed",
                parsed=label.value,
            )
        )
        return label
    template = cfg.catalog[TemplateId.BASE_PREDICT]
    bindings = {
        "few_shot_block": cfg.few_shot.get(TemplateId.BASE_PREDICT, ""),
        "reference_story": story_text(instance.reference),
        "query": instance.query_text,
    }
    try:
        return _ask(
            cfg, cfg.base_provider, template, bindings, instance, parse_relevance, trace
        )
    except ParseError as exc:
        raise PipelineError(f"base prediction unparsable after retry: {exc}") from exc


def _enumerate_reference_events(instance: QueryInstance) -> str:
    lines = []
    for position, triple in enumerate(instance.reference.triples, start=1):
        lines.append(f"{position}. {render_query_sentence(triple)}")
    return "\n".join(lines)


def support_predict(
    cfg: GerConfig,
    instance: QueryInstance,
    kg: PersonalKG | None,
    trace: list[TraceEntry],
) -> tuple[SupportEventSet, SupportEventSet, SupportEventSet, RelevanceLabel]:
    """Support events and the support label.

    Returns (kg set, llm set, fused set, label) where fused is the
    intersection of the enabled classifiers' selections and the label is
    Relevant exactly when fused is non-empty.
    """
    reference_triples = instance.reference.triples
    empty: SupportEventSet = frozenset()

    if cfg.ground_truth_support is not None:
        ids = cfg.ground_truth_support.support_ids_for(
            instance.pair_id, instance.query.triple_id
        )
        by_id = {t.triple_id: t for t in reference_triples}
        events = []
        warnings = []
        for triple_id in sorted(ids):
            if triple_id in by_id:
                events.append(SupportEvent.from_event_triple(by_id[triple_id]))
            else:
                warnings.append(f"oracle support id {triple_id!r} not in reference")
        fused = frozenset(events)
        trace.append(
            TraceEntry(
                template="support_oracle",
                prompt_hash="precomputed",
                parsed=_render_parsed(frozenset(e.triple_id for e in fused)),
                warnings=tuple(warnings),
            )
        )
        label = RelevanceLabel.RELEVANT if fused else RelevanceLabel.IRRELEVANT
        return fused, fused, fused, label

    if not reference_triples:
        return empty, empty, empty, RelevanceLabel.IRRELEVANT

    kg_set: SupportEventSet | None = None
    if cfg.use_kg_support:
        if kg is None:
            raise PipelineError("knowledge-graph support enabled but no graph given")
        kg_set = support_events_kg(
            kg, instance.query_text, cfg.embedder, cfg.retrieval
        )

    llm_set: SupportEventSet | None = None
    if cfg.support_provider is not None:
        template = cfg.catalog[TemplateId.SUPPORT_CLASSIFY]
        bindings = {
            "reference_story": story_text(instance.reference),
            "support_events": _enumerate_reference_events(instance),
            "query": instance.query_text,
        }
        valid_positions = list(range(1, len(reference_triples) + 1))

        def parser(text: str):
            return parse_support_ids(text, valid_positions)

        try:
            positions = _ask(
                cfg, cfg.support_provider, template, bindings, instance, parser, trace
            )
        except ParseError as exc:
            raise PipelineError(
                f"support classification unparsable after retry: {exc}"
            ) from exc
        llm_set = frozenset(
            SupportEvent.from_event_triple(reference_triples[p - 1]) for p in positions
        )

    parts = [s for s in (kg_set, llm_set) if s is not None]
    fused = parts[0]
    for part in parts[1:]:
        fused = fused & part
    label = RelevanceLabel.RELEVANT if fused else RelevanceLabel.IRRELEVANT
    return (
        kg_set if kg_set is not None else empty,
        llm_set if llm_set is not None else empty,
        fused,
        label,
    )


def _support_sentences(instance: QueryInstance, fused: SupportEventSet) -> str:
    by_id = {t.triple_id: t for t in instance.reference.triples}
    lines = []
    for event in sorted(fused):
        triple = by_id.get(event.triple_id)
        sentence = render_query_sentence(triple) if triple else event.sentence()
        lines.append(f"- {sentence}")
    return "\n".join(lines)


def correct(
    cfg: GerConfig,
    instance: QueryInstance,
    base_label: RelevanceLabel,
    support_label: RelevanceLabel,
    fused_support: SupportEventSet,
    trace: list[TraceEntry],
) -> tuple[RelevanceLabel, CorrectionBranch]:
    """Three-way refinement. Agreement keeps the base label without any
    model call; disagreement re-asks through the rethinking or exploration
    prompt; an unparsable answer after one retry falls back to the base
    label."""
    if base_label == support_label:
        return base_label, CorrectionBranch.AGREE
    if base_label is RelevanceLabel.RELEVANT:
        branch = CorrectionBranch.RETHINK
        template = cfg.catalog[TemplateId.RETHINK]
        bindings = {
            "reference_story": story_text(instance.reference),
            "query": instance.query_text,
        }
    else:
        branch = CorrectionBranch.EXPLORE
        template = cfg.catalog[TemplateId.EXPLORE]
        bindings = {
            "reference_story": story_text(instance.reference),
            "support_events": _support_sentences(instance, fused_support),
            "query": instance.query_text,
        }
    try:
        label = _ask(
            cfg,
            cfg.correction_provider,
            template,
            bindings,
            instance,
            parse_relevance,
            trace,
        )
    except ParseError:
        trace.append(
            TraceEntry(
                template=template.template_id.value,
                prompt_hash="",
                parsed=base_label.value,
                warnings=("correction unparsable after retry; kept base label",),
            )
        )
        return base_label, branch
    return label, branch


def map_label(
    cfg: GerConfig,
    instance: QueryInstance,
    final_relevance: RelevanceLabel,
    trace: list[TraceEntry],
) -> EventType:
    """Convert the final binary label back to an event type.

    Pre-story queries map directly (Relevant becomes Unforgotten, Irrelevant
    becomes Forgotten). Post-story queries map Irrelevant to Additional and
    send Relevant through the consistency discriminator; an unparsable
    discriminator answer falls back to Consistent, the majority class."""
    if instance.direction is Direction.TARGET_IS_PRE:
        if final_relevance is RelevanceLabel.RELEVANT:
            return EventType.UNFORGOTTEN
        return EventType.FORGOTTEN
    if final_relevance is RelevanceLabel.IRRELEVANT:
        return EventType.ADDITIONAL
    template = cfg.catalog[TemplateId.CONSISTENCY_DISCRIMINATE]
    bindings = {
        "reference_story": story_text(instance.reference),
        "query": instance.query_text,
    }
    try:
        return _ask(
            cfg,
            cfg.discriminator_provider,
            template,
            bindings,
            instance,
            parse_consistency,
            trace,
        )
    except ParseError:
        trace.append(
            TraceEntry(
                template=template.template_id.value,
                prompt_hash="",
                parsed=EventType.CONSISTENT.value,
                warnings=("discriminator unparsable after retry; defaulted",),
            )
        )
        return EventType.CONSISTENT


def _process_instance(
    cfg: GerConfig, instance: QueryInstance, kg: PersonalKG | None
) -> PipelinePrediction:
    trace: list[TraceEntry] = []
    base_label = base_predict(cfg, instance, trace)
    kg_set, llm_set, fused, support_label = support_predict(cfg, instance, kg, trace)
    final_relevance, branch = correct(
        cfg, instance, base_label, support_label, fused, trace
    )
    final_event_type = map_label(cfg, instance, final_relevance, trace)
    return PipelinePrediction(
        pair_id=instance.pair_id,
        triple_id=instance.query.triple_id,
        direction=instance.direction,
        gold_label=instance.gold_label,
        base_label=base_label,
        kg_support=kg_set,
        llm_support=llm_set,
        fused_support=fused,
        support_label=support_label,
        correction_branch=branch,
        final_relevance=final_relevance,
        final_event_type=final_event_type,
        trace=tuple(trace),
    )


def run_pipeline(cfg: GerConfig, pairs: list[StoryPair]) -> PipelineRun:
    """Run every instance of the corpus, in corpus order.

    The reference-story graph is built once per (pair, direction). Instances
    are independent work units; failures are recorded and skipped without
    aborting the run.
    """
    cfg.validate()
    instances = all_instances(pairs)

    graphs: dict[tuple[str, str], PersonalKG] = {}
    if cfg.use_kg_support and cfg.ground_truth_support is None:
        for pair in pairs:
            if pair.pre.triples:
                graphs[(pair.pair_id, Direction.TARGET_IS_PRE.value)] = build_kg(
                    pair.post
                )
            if pair.post.triples:
                graphs[(pair.pair_id, Direction.TARGET_IS_POST.value)] = build_kg(
                    pair.pre
                )

    def work(instance: QueryInstance):
        kg = graphs.get((instance.pair_id, instance.direction.value))
        try:
            return _process_instance(cfg, instance, kg)
        except GerError as exc:
            return InstanceFailure(
                pair_id=instance.pair_id,
                triple_id=instance.query.triple_id,
                direction=instance.direction,
                reason=f"{type(exc).__name__}: {exc}",
            )

    if cfg.workers == 1:
        results = [work(instance) for instance in instances]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, instances))

    run = PipelineRun(predictions=[], failures=[])
    for result in results:
        if isinstance(result, PipelinePrediction):
            run.predictions.append(result)
        else:
            run.failures.append(result)
    return run


# ---------------------------------------------------------------------------
# Prediction serialization (JSON lines)
# ---------------------------------------------------------------------------


def _support_to_list(events: SupportEventSet) -> list[dict]:
    return [
        {
            "triple_id": e.triple_id,
            "subject": e.subject,
            "predicate": e.predicate,
            "object": e.object,
        }
        for e in sorted(events)
    ]


def prediction_to_dict(pred: PipelinePrediction, trace_full: bool = False) -> dict:
    doc = {
        "pair_id": pred.pair_id,
        "triple_id": pred.triple_id,
        "direction": pred.direction.value,
        "gold_label": pred.gold_label.value if pred.gold_label else None,
        "base_label": pred.base_label.value,
        "kg_support": _support_to_list(pred.kg_support),
        "llm_support": _support_to_list(pred.llm_support),
        "fused_support": _support_to_list(pred.fused_support),
        "support_label": pred.support_label.value,
        "correction_branch": pred.correction_branch.value,
        "final_relevance": pred.final_relevance.value,
        "final_event_type": pred.final_event_type.value,
        "trace": [
            {
                "template": entry.template,
                "prompt_sha256": entry.prompt_hash,
                "parsed": entry.parsed,
                "warnings": list(entry.warnings),
                **({"prompt": entry.prompt} if trace_full and entry.prompt else {}),
            }
            for entry in pred.trace
        ],
    }
    return doc


def write_predictions(
    run: PipelineRun, path: str | Path, trace_full: bool = False
) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for pred in run.predictions:
            handle.write(
                json.dumps(prediction_to_dict(pred, trace_full), sort_keys=True) + "\n"
            )
        for failure in run.failures:
            handle.write(
                json.dumps(
                    {
                        "pair_id": failure.pair_id,
                        "triple_id": failure.triple_id,
                        "direction": failure.direction.value,
                        "failed": failure.reason,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_predictions(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Read a predictions file back; returns (predictions, failures) as the
    raw row dictionaries."""
    predictions, failures = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        (failures if "failed" in row else predictions).append(row)
    return predictions, failures
