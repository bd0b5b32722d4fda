"""Chat-completion access for every step that talks to a language model.

Provides prompt templates loaded from a versioned catalog file, response
parsers for the three answer vocabularies, an OpenAI-compatible HTTP
provider, a scripted provider for offline runs and tests, a persistent
response cache, and a file-backed source of precomputed predictions.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import requests

from .corpus import EventType, RelevanceLabel, relevance_from_seen
from .errors import (
    MissingPrediction,
    MockScriptError,
    ParseError,
    ProviderError,
    SchemaError,
    TemplateError,
)

CHAT_API_KEY_ENV = "GER_CHAT_API_KEY"

# An instance key identifies one classification instance:
# (pair_id, triple_id, direction value).
InstanceKey = tuple[str, str, str]


class TemplateId(Enum):
    BASE_PREDICT = "base_predict"
    SUPPORT_CLASSIFY = "support_classify"
    RETHINK = "rethink"
    EXPLORE = "explore"
    CONSISTENCY_DISCRIMINATE = "consistency_discriminate"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: TemplateId
    text: str

    def placeholders(self) -> frozenset[str]:
        names = set()
        for _literal, name, _spec, _conv in string.Formatter().parse(self.text):
            if name:
                names.add(name)
        return frozenset(names)

    def render(self, **bindings: str) -> str:
        missing = self.placeholders().difference(bindings)
        if missing:
            raise TemplateError(
                f"template {self.template_id.value}: unbound placeholder(s) "
                f"{', '.join(sorted(missing))}"
            )
        return self.text.format(**{k: str(v) for k, v in bindings.items()})


@dataclass(frozen=True)
class PromptCatalog:
    version: str
    templates: dict[TemplateId, PromptTemplate]
    raw_text: str
    source: str

    def __getitem__(self, template_id: TemplateId) -> PromptTemplate:
        return self.templates[template_id]

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()


_SECTION = re.compile(r"^===\s+(\S+)\s*$")
_VERSION = re.compile(r"^#\s*version\s*:\s*(\S+)\s*$", re.IGNORECASE)


def parse_prompt_catalog(text: str, source: str = "<string>") -> PromptCatalog:
    version = None
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        match = _SECTION.match(line)
        if match:
            name = match.group(1)
            if name in sections:
                raise SchemaError(f"{source}: duplicate template section {name!r}")
            current = sections.setdefault(name, [])
            continue
        if current is None:
            vmatch = _VERSION.match(line)
            if vmatch:
                version = vmatch.group(1)
            continue
        current.append(line)
    if version is None:
        raise SchemaError(f"{source}: catalog is missing a '# version:' header")
    templates: dict[TemplateId, PromptTemplate] = {}
    for name, lines in sections.items():
        try:
            template_id = TemplateId(name)
        except ValueError as exc:
            raise SchemaError(f"{source}: unknown template id {name!r}") from exc
        body = "\n".join(lines).strip("\n")
        if not body.strip():
            raise SchemaError(f"{source}: template {name!r} is empty")
        templates[template_id] = PromptTemplate(template_id=template_id, text=body)
    missing = [tid.value for tid in TemplateId if tid not in templates]
    if missing:
        raise SchemaError(f"{source}: catalog lacks template(s): {', '.join(missing)}")
    return PromptCatalog(
        version=version, templates=templates, raw_text=text, source=source
    )


def load_prompt_catalog(path: str | Path) -> PromptCatalog:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read prompt catalog {path}: {exc}") from exc
    return parse_prompt_catalog(text, source=str(path))


def default_prompt_catalog() -> PromptCatalog:
    text = resources.files("ger").joinpath("data/prompt_catalog.txt").read_text(
        encoding="utf-8"
    )
    return parse_prompt_catalog(text, source="default")


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    template_id: TemplateId
    instance_key: InstanceKey | None = None


class ChatProvider:
    name: str = "base"
    model: str = "none"

    def complete(self, request: ChatRequest) -> str:
        raise NotImplementedError


class OpenAIChatProvider(ChatProvider):
    """Client for an OpenAI-compatible chat-completions endpoint.

    Temperature defaults to 0 so repeated runs see stable responses; retries
    use exponential backoff and a semaphore bounds in-flight requests.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.name = "openai"
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(max_in_flight)

    def complete(self, request: ChatRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._session.post(
                        self.endpoint, headers=headers, json=body, timeout=120
                    )
                if response.status_code >= 500:
                    last_error = ProviderError(
                        f"chat endpoint returned {response.status_code}"
                    )
                    continue
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError, IndexError) as exc:
                last_error = exc
        raise ProviderError(
            f"chat request failed after {self.max_attempts} attempts: {last_error}"
        )


class MockScript:
    """Ordered map from (template_id, instance key) to canned responses.

    A response may be a single string or a list of strings consumed one per
    call (the last repeats). Lookups fall back to a template-wide default;
    prompts with neither raise, so tests must script everything they touch.
    """

    def __init__(self) -> None:
        self._exact: dict[tuple[str, InstanceKey], list[str]] = {}
        self._default: dict[str, list[str]] = {}
        self._cursor: dict[object, int] = {}

    def script(
        self,
        template_id: TemplateId,
        instance_key: InstanceKey,
        response: str | list[str],
    ) -> None:
        responses = [response] if isinstance(response, str) else list(response)
        self._exact[(template_id.value, tuple(instance_key))] = responses

    def script_default(self, template_id: TemplateId, response: str | list[str]) -> None:
        responses = [response] if isinstance(response, str) else list(response)
        self._default[template_id.value] = responses

    def lookup(self, template_id: TemplateId, instance_key: InstanceKey | None) -> str:
        entry_key: object
        if instance_key is not None and (template_id.value, tuple(instance_key)) in self._exact:
            entry_key = (template_id.value, tuple(instance_key))
            responses = self._exact[entry_key]
        elif template_id.value in self._default:
            entry_key = template_id.value
            responses = self._default[entry_key]
        else:
            raise MockScriptError(
                f"no scripted response for template {template_id.value!r}, "
                f"instance {instance_key!r}"
            )
        index = self._cursor.get(entry_key, 0)
        self._cursor[entry_key] = index + 1
        return responses[min(index, len(responses) - 1)]

    def dump(self, path: str | Path) -> None:
        rows = []
        for (template, key), responses in self._exact.items():
            rows.append(
                {
                    "template": template,
                    "pair_id": key[0],
                    "triple_id": key[1],
                    "direction": key[2],
                    "response": responses if len(responses) > 1 else responses[0],
                }
            )
        for template, responses in self._default.items():
            rows.append(
                {
                    "template": template,
                    "response": responses if len(responses) > 1 else responses[0],
                }
            )
        with Path(path).open("w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        script = cls()
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise SchemaError(f"cannot read script file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                template_id = TemplateId(row["template"])
                response = row["response"]
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad script row: {exc}") from exc
            if "pair_id" in row:
                key = (str(row["pair_id"]), str(row["triple_id"]), str(row["direction"]))
                script.script(template_id, key, response)
            else:
                script.script_default(template_id, response)
        return script


class MockChatProvider(ChatProvider):
    """Provider that answers from a MockScript and records every call."""

    def __init__(self, script: MockScript, name: str = "mock", model: str = "scripted"):
        self.script = script
        self.name = name
        self.model = model
        self.calls: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> str:
        self.calls.append(request)
        return self.script.lookup(request.template_id, request.instance_key)

    def calls_for(self, template_id: TemplateId) -> int:
        return sum(1 for call in self.calls if call.template_id is template_id)


# ---------------------------------------------------------------------------
# Response cache and the completion entry point
# ---------------------------------------------------------------------------


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSON-lines cache of chat responses keyed by
    (model, prompt hash). Values for one key are identical by construction,
    so last-writer-wins is safe."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], str] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[(record["model"], record["prompt_sha256"])] = record[
                        "response"
                    ]

    def get(self, model: str, prompt: str) -> str | None:
        with self._lock:
            return self._entries.get((model, prompt_sha256(prompt)))

    def put(self, model: str, prompt: str, response: str) -> None:
        digest = prompt_sha256(prompt)
        with self._lock:
            if (model, digest) in self._entries:
                return
            self._entries[(model, digest)] = response
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps(
                        {"model": model, "prompt_sha256": digest, "response": response},
                        sort_keys=True,
                    )
                    + "\n"
                )


@dataclass(frozen=True)
class Completion:
    text: str
    prompt: str
    prompt_hash: str
    cached: bool


def complete(
    provider: ChatProvider,
    template: PromptTemplate,
    bindings: dict[str, str],
    *,
    instance_key: InstanceKey | None = None,
    cache: ResponseCache | None = None,
    log: list | None = None,
) -> Completion:
    """Render the template, consult the cache, and call the provider.

    The optional log list receives one record per call with the prompt,
    response, model, and timestamp.
    """
    prompt = template.render(**bindings)
    digest = prompt_sha256(prompt)
    cached_text = cache.get(provider.model, prompt) if cache is not None else None
    if cached_text is not None:
        text, was_cached = cached_text, True
    else:
        text = provider.complete(
            ChatRequest(
                prompt=prompt,
                template_id=template.template_id,
                instance_key=instance_key,
            )
        )
        if cache is not None:
            cache.put(provider.model, prompt, text)
        was_cached = False
    if log is not None:
        log.append(
            {
                "template": template.template_id.value,
                "model": provider.model,
                "prompt": prompt,
                "prompt_sha256": digest,
                "response": text,
                "cached": was_cached,
                "timestamp": time.time(),
            }
        )
    return Completion(text=text, prompt=prompt, prompt_hash=digest, cached=was_cached)


# ---------------------------------------------------------------------------
# Response parsers
# ---------------------------------------------------------------------------

_RELEVANCE = re.compile(r"\b(irrelevant|relevant)\b", re.IGNORECASE)
_CONSISTENCY = re.compile(r"\b(inconsistent|consistent)\b", re.IGNORECASE)
_ANSWER_MARKER = re.compile(r"\b(?:answer|ids?)\s*:", re.IGNORECASE)
_NONE_TOKEN = re.compile(r"\bnone\b", re.IGNORECASE)
_INT_TOKEN = re.compile(r"\d+")


def parse_relevance(text: str) -> RelevanceLabel:
    """Last token-boundary occurrence of relevant/irrelevant wins."""
    matches = _RELEVANCE.findall(text)
    if not matches:
        raise ParseError(f"no relevance answer in response: {text!r}")
    token = matches[-1].casefold()
    return RelevanceLabel.IRRELEVANT if token == "irrelevant" else RelevanceLabel.RELEVANT


def parse_consistency(text: str) -> EventType:
    """Last token-boundary occurrence of consistent/inconsistent wins;
    returns EventType.CONSISTENT or EventType.INCONSISTENT."""
    matches = _CONSISTENCY.findall(text)
    if not matches:
        raise ParseError(f"no consistency answer in response: {text!r}")
    token = matches[-1].casefold()
    return EventType.INCONSISTENT if token == "inconsistent" else EventType.CONSISTENT


def parse_support_ids(
    text: str, valid_ids: list[int] | set[int]
) -> tuple[frozenset[int], list[str]]:
    """Extract the event numbers following the final answer marker.

    Returns the selected ids and a list of warnings for ids outside the
    presented range. A bare "none" (with or without a marker) means the
    empty selection.
    """
    valid = set(valid_ids)
    markers = list(_ANSWER_MARKER.finditer(text))
    if not markers:
        if _NONE_TOKEN.search(text):
            return frozenset(), []
        raise ParseError(f"no answer marker in response: {text!r}")
    tail = text[markers[-1].end():]
    tokens = [int(t) for t in _INT_TOKEN.findall(tail)]
    if not tokens:
        if _NONE_TOKEN.search(tail):
            return frozenset(), []
        raise ParseError(f"answer marker without ids in response: {text!r}")
    warnings = []
    selected = []
    for token in tokens:
        if token in valid:
            if token not in selected:
                selected.append(token)
        else:
            warnings.append(f"ignored out-of-range id {token}")
    return frozenset(selected), warnings


# ---------------------------------------------------------------------------
# Precomputed predictions (file-backed base module or support oracle)
# ---------------------------------------------------------------------------


@dataclass
class PrecomputedLabelSource:
    """Predictions loaded from a JSON-lines file.

    Rows carry {"pair_id", "triple_id"} plus either "label" (a binary
    relevance label, or a five-way event type that is then mapped with the
    Consistent/Unforgotten-to-Relevant rule) or "support_ids" (a list of
    reference-story triple ids).
    """

    labels: dict[tuple[str, str], RelevanceLabel] = field(default_factory=dict)
    support_ids: dict[tuple[str, str], frozenset[str]] = field(default_factory=dict)
    source: str = "<memory>"

    @classmethod
    def load(cls, path: str | Path) -> "PrecomputedLabelSource":
        out = cls(source=str(path))
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise SchemaError(f"cannot read predictions file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                key = (str(row["pair_id"]), str(row["triple_id"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad prediction row: {exc}") from exc
            if "label" in row:
                out.labels[key] = _parse_precomputed_label(
                    str(row["label"]), f"{path}:{lineno}"
                )
            elif "support_ids" in row:
                out.support_ids[key] = frozenset(str(i) for i in row["support_ids"])
            else:
                raise SchemaError(
                    f"{path}:{lineno}: row needs either 'label' or 'support_ids'"
                )
        return out

    def relevance_for(self, pair_id: str, triple_id: str) -> RelevanceLabel:
        try:
            return self.labels[(pair_id, triple_id)]
        except KeyError:
            raise MissingPrediction(
                f"{self.source}: no label for pair {pair_id!r}, triple {triple_id!r}"
            ) from None

    def support_ids_for(self, pair_id: str, triple_id: str) -> frozenset[str]:
        try:
            return self.support_ids[(pair_id, triple_id)]
        except KeyError:
            raise MissingPrediction(
                f"{self.source}: no support ids for pair {pair_id!r}, "
                f"triple {triple_id!r}"
            ) from None


def _parse_precomputed_label(text: str, where: str) -> RelevanceLabel:
    try:
        return RelevanceLabel.from_text(text)
    except ValueError:
        pass
    try:
        return relevance_from_seen(EventType.from_text(text))
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
