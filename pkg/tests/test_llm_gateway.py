import pytest
import requests
from hypothesis import given, strategies as st

from ger.corpus import EventType, RelevanceLabel
from ger.errors import (
    MissingPrediction,
    MockScriptError,
    ParseError,
    ProviderError,
    SchemaError,
    TemplateError,
)
from ger.llm_gateway import (
    ChatRequest,
    MockChatProvider,
    MockScript,
    OpenAIChatProvider,
    PrecomputedLabelSource,
    PromptTemplate,
    ResponseCache,
    TemplateId,
    complete,
    default_prompt_catalog,
    load_prompt_catalog,
    parse_consistency,
    parse_prompt_catalog,
    parse_relevance,
    parse_support_ids,
)

KEY = ("p1", "t1", "target_is_pre")


def simple_template(text="Story: {reference_story}\nQuery: {query}"):
    return PromptTemplate(template_id=TemplateId.BASE_PREDICT, text=text)


# ---------------------------------------------------------------------------
# Templates and catalog
# ---------------------------------------------------------------------------


def test_render_binds_placeholders():
    template = simple_template()
    rendered = template.render(reference_story="S", query="Q")
    assert rendered == "Story: S\nQuery: Q"
    assert template.render(reference_story="S", query="Q") == rendered


def test_render_rejects_unbound_placeholder():
    with pytest.raises(TemplateError, match="query"):
        simple_template().render(reference_story="S")


def test_render_ignores_extra_bindings():
    assert "S" in simple_template().render(reference_story="S", query="Q", extra="x")


def test_default_catalog_complete():
    catalog = default_prompt_catalog()
    assert set(catalog.templates) == set(TemplateId)
    assert catalog.version == "1"
    assert len(catalog.sha256) == 64
    for template in catalog.templates.values():
        assert "ANSWER" in template.text


def test_catalog_placeholders_are_the_documented_set():
    catalog = default_prompt_catalog()
    allowed = {"reference_story", "query", "support_events", "few_shot_block"}
    for template in catalog.templates.values():
        assert template.placeholders() <= allowed


def test_catalog_from_file(tmp_path):
    source = default_prompt_catalog().raw_text
    path = tmp_path / "catalog.txt"
    path.write_text(source, encoding="utf-8")
    catalog = load_prompt_catalog(path)
    assert catalog.source == str(path)
    assert catalog.sha256 == default_prompt_catalog().sha256


def test_catalog_requires_version():
    with pytest.raises(SchemaError, match="version"):
        parse_prompt_catalog("=== base_predict\nhello {query}\n")


def test_catalog_rejects_unknown_section():
    text = "# version: 1\n=== mystery\nhello\n"
    with pytest.raises(SchemaError, match="mystery"):
        parse_prompt_catalog(text)


def test_catalog_requires_all_templates():
    text = "# version: 1\n=== base_predict\nhi {query}\n"
    with pytest.raises(SchemaError, match="lacks template"):
        parse_prompt_catalog(text)


# ---------------------------------------------------------------------------
# Parsers
# ---------------------------------------------------------------------------


def test_parse_relevance_examples():
    assert parse_relevance("The answer is: Relevant") is RelevanceLabel.RELEVANT
    assert parse_relevance("irrelevant.") is RelevanceLabel.IRRELEVANT
    with pytest.raises(ParseError):
        parse_relevance("I cannot decide")


def test_parse_relevance_last_occurrence_wins():
    assert (
        parse_relevance("Relevant at first glance... ANSWER: Irrelevant")
        is RelevanceLabel.IRRELEVANT
    )
    assert (
        parse_relevance("seems irrelevant, but ANSWER: Relevant")
        is RelevanceLabel.RELEVANT
    )


def test_parse_relevance_does_not_split_irrelevant():
    # the "relevant" substring inside "irrelevant" must not count
    assert parse_relevance("plainly IRRELEVANT") is RelevanceLabel.IRRELEVANT


@given(
    label=st.sampled_from(["Relevant", "Irrelevant", "RELEVANT", "irrelevant"]),
    prefix=st.sampled_from(["", "Reasoning first. ", "ANSWER: "]),
    suffix=st.sampled_from(["", ".", "!\n"]),
)
def test_parse_relevance_total_over_canonical_answers(label, prefix, suffix):
    parsed = parse_relevance(prefix + label + suffix)
    expected = (
        RelevanceLabel.IRRELEVANT
        if label.casefold() == "irrelevant"
        else RelevanceLabel.RELEVANT
    )
    assert parsed is expected


def test_parse_support_ids_examples():
    ids, warnings = parse_support_ids("IDs: 2, 5", range(1, 7))
    assert ids == frozenset({2, 5}) and warnings == []
    ids, warnings = parse_support_ids("none", range(1, 7))
    assert ids == frozenset() and warnings == []
    ids, warnings = parse_support_ids("IDs: 2, 9", range(1, 7))
    assert ids == frozenset({2}) and len(warnings) == 1
    assert "9" in warnings[0]


def test_parse_support_ids_answer_marker():
    ids, _ = parse_support_ids("thinking... ANSWER: 1, 3", range(1, 4))
    assert ids == frozenset({1, 3})
    ids, _ = parse_support_ids("ANSWER: none", range(1, 4))
    assert ids == frozenset()


def test_parse_support_ids_last_marker_wins():
    ids, _ = parse_support_ids("ANSWER: 1\nOn reflection, ANSWER: 2", range(1, 4))
    assert ids == frozenset({2})


def test_parse_support_ids_deduplicates():
    ids, warnings = parse_support_ids("ANSWER: 2, 2, 2", range(1, 4))
    assert ids == frozenset({2}) and warnings == []


def test_parse_support_ids_errors():
    with pytest.raises(ParseError):
        parse_support_ids("no marker and no tokens", range(1, 4))
    with pytest.raises(ParseError):
        parse_support_ids("ANSWER: maybe?", range(1, 4))


def test_parse_consistency_examples():
    assert parse_consistency("Therefore: Consistent") is EventType.CONSISTENT
    assert (
        parse_consistency("...explicitly contradicts, Inconsistent")
        is EventType.INCONSISTENT
    )
    with pytest.raises(ParseError):
        parse_consistency("unsure")


def test_parse_consistency_last_occurrence_and_boundaries():
    assert (
        parse_consistency("Consistent? No. ANSWER: Inconsistent")
        is EventType.INCONSISTENT
    )
    assert parse_consistency("INCONSISTENT then consistent") is EventType.CONSISTENT


# ---------------------------------------------------------------------------
# Mock provider and scripting
# ---------------------------------------------------------------------------


def test_mock_script_exact_and_default():
    script = MockScript()
    script.script(TemplateId.BASE_PREDICT, KEY, "ANSWER: Relevant")
    script.script_default(TemplateId.RETHINK, "ANSWER: Irrelevant")
    provider = MockChatProvider(script)
    request = ChatRequest("p", TemplateId.BASE_PREDICT, KEY)
    assert provider.complete(request) == "ANSWER: Relevant"
    other = ChatRequest("p", TemplateId.RETHINK, ("x", "y", "z"))
    assert provider.complete(other) == "ANSWER: Irrelevant"
    assert provider.calls_for(TemplateId.BASE_PREDICT) == 1


def test_mock_script_unmatched_raises():
    provider = MockChatProvider(MockScript())
    with pytest.raises(MockScriptError):
        provider.complete(ChatRequest("p", TemplateId.EXPLORE, KEY))


def test_mock_script_sequences_consume_in_order():
    script = MockScript()
    script.script(TemplateId.BASE_PREDICT, KEY, ["first", "second"])
    provider = MockChatProvider(script)
    request = ChatRequest("p", TemplateId.BASE_PREDICT, KEY)
    assert provider.complete(request) == "first"
    assert provider.complete(request) == "second"
    assert provider.complete(request) == "second"  # last response repeats


def test_mock_script_dump_and_load(tmp_path):
    script = MockScript()
    script.script(TemplateId.BASE_PREDICT, KEY, "ANSWER: Relevant")
    script.script(TemplateId.SUPPORT_CLASSIFY, KEY, ["ANSWER: 1", "ANSWER: none"])
    script.script_default(TemplateId.CONSISTENCY_DISCRIMINATE, "ANSWER: Consistent")
    path = tmp_path / "script.jsonl"
    script.dump(path)
    loaded = MockScript.load(path)
    assert loaded.lookup(TemplateId.BASE_PREDICT, KEY) == "ANSWER: Relevant"
    assert loaded.lookup(TemplateId.SUPPORT_CLASSIFY, KEY) == "ANSWER: 1"
    assert loaded.lookup(TemplateId.SUPPORT_CLASSIFY, KEY) == "ANSWER: none"
    assert loaded.lookup(TemplateId.CONSISTENCY_DISCRIMINATE, None) == "ANSWER: Consistent"


# ---------------------------------------------------------------------------
# complete() and the response cache
# ---------------------------------------------------------------------------


def scripted_provider(response="ANSWER: Relevant"):
    script = MockScript()
    script.script_default(TemplateId.BASE_PREDICT, response)
    return MockChatProvider(script)


def test_complete_renders_and_returns():
    provider = scripted_provider()
    result = complete(
        provider, simple_template(), {"reference_story": "S", "query": "Q"}
    )
    assert result.text == "ANSWER: Relevant"
    assert result.prompt == "Story: S\nQuery: Q"
    assert not result.cached
    assert len(result.prompt_hash) == 64


def test_complete_unbound_placeholder():
    with pytest.raises(TemplateError):
        complete(scripted_provider(), simple_template(), {"reference_story": "S"})


def test_complete_uses_cache(tmp_path):
    cache = ResponseCache(tmp_path / "cache.jsonl")
    provider = scripted_provider()
    bindings = {"reference_story": "S", "query": "Q"}
    first = complete(provider, simple_template(), bindings, cache=cache)
    second = complete(provider, simple_template(), bindings, cache=cache)
    assert first.text == second.text
    assert not first.cached and second.cached
    assert len(provider.calls) == 1

    # cache survives a restart and keeps the provider untouched
    reloaded = ResponseCache(tmp_path / "cache.jsonl")
    third = complete(provider, simple_template(), bindings, cache=reloaded)
    assert third.cached and third.text == first.text
    assert len(provider.calls) == 1


def test_cache_does_not_change_labels(tmp_path):
    bindings = {"reference_story": "S", "query": "Q"}
    plain = complete(scripted_provider(), simple_template(), bindings)
    cached = complete(
        scripted_provider(),
        simple_template(),
        bindings,
        cache=ResponseCache(tmp_path / "c.jsonl"),
    )
    assert parse_relevance(plain.text) == parse_relevance(cached.text)


def test_complete_logs_calls():
    log = []
    complete(
        scripted_provider(),
        simple_template(),
        {"reference_story": "S", "query": "Q"},
        log=log,
    )
    assert len(log) == 1
    assert log[0]["template"] == "base_predict"
    assert log[0]["response"] == "ANSWER: Relevant"
    assert "timestamp" in log[0]


# ---------------------------------------------------------------------------
# OpenAI-compatible provider (fake transport)
# ---------------------------------------------------------------------------


class FakeResponse:
    def __init__(self, payload, status_code=200):
        self.payload = payload
        self.status_code = status_code

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self.payload


class FakeChatSession:
    def __init__(self, fail_times=0):
        self.fail_times = fail_times
        self.bodies = []

    def post(self, url, headers=None, json=None, timeout=None):
        self.bodies.append(json)
        if self.fail_times > 0:
            self.fail_times -= 1
            return FakeResponse({}, status_code=503)
        content = f"echo: {json['messages'][0]['content']}"
        return FakeResponse({"choices": [{"message": {"content": content}}]})


def test_openai_provider_roundtrip():
    session = FakeChatSession()
    provider = OpenAIChatProvider(
        endpoint="http://chat.local/v1/chat/completions",
        model="test-chat",
        backoff_seconds=0.0,
        session=session,
    )
    text = provider.complete(ChatRequest("hello", TemplateId.BASE_PREDICT, KEY))
    assert text == "echo: hello"
    assert session.bodies[0]["model"] == "test-chat"
    assert session.bodies[0]["temperature"] == 0.0


def test_openai_provider_retries_then_fails():
    session = FakeChatSession(fail_times=10)
    provider = OpenAIChatProvider(
        endpoint="http://chat.local/v1/chat/completions",
        model="test-chat",
        backoff_seconds=0.0,
        max_attempts=2,
        session=session,
    )
    with pytest.raises(ProviderError):
        provider.complete(ChatRequest("hello", TemplateId.BASE_PREDICT, KEY))
    assert len(session.bodies) == 2


# ---------------------------------------------------------------------------
# Precomputed predictions
# ---------------------------------------------------------------------------


def test_precomputed_labels(tmp_path):
    path = tmp_path / "preds.jsonl"
    path.write_text(
        "\n".join(
            [
                '{"pair_id": "p1", "triple_id": "t1", "label": "Relevant"}',
                '{"pair_id": "p1", "triple_id": "t2", "label": "Irrelevant"}',
                '{"pair_id": "p1", "triple_id": "t3", "label": "Consistent"}',
                '{"pair_id": "p1", "triple_id": "t4", "label": "Inconsistent"}',
                '{"pair_id": "p1", "triple_id": "t5", "label": "Forgotten"}',
                '{"pair_id": "p2", "triple_id": "t1", "support_ids": ["r1", "r2"]}',
            ]
        ),
        encoding="utf-8",
    )
    source = PrecomputedLabelSource.load(path)
    assert source.relevance_for("p1", "t1") is RelevanceLabel.RELEVANT
    assert source.relevance_for("p1", "t2") is RelevanceLabel.IRRELEVANT
    # five-way predicted labels: Consistent maps to Relevant, the detected
    # conflict and the absence classes map to Irrelevant
    assert source.relevance_for("p1", "t3") is RelevanceLabel.RELEVANT
    assert source.relevance_for("p1", "t4") is RelevanceLabel.IRRELEVANT
    assert source.relevance_for("p1", "t5") is RelevanceLabel.IRRELEVANT
    assert source.support_ids_for("p2", "t1") == frozenset({"r1", "r2"})
    with pytest.raises(MissingPrediction):
        source.relevance_for("p9", "t9")
    with pytest.raises(MissingPrediction):
        source.support_ids_for("p1", "t1")


def test_precomputed_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"pair_id": "p", "triple_id": "t"}', encoding="utf-8")
    with pytest.raises(SchemaError):
        PrecomputedLabelSource.load(path)
    path.write_text(
        '{"pair_id": "p", "triple_id": "t", "label": "sideways"}', encoding="utf-8"
    )
    with pytest.raises(SchemaError):
        PrecomputedLabelSource.load(path)
