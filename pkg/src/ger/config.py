"""Flat key-value run configuration.

The file format is one `key = value` assignment per line with dotted section
prefixes (base.*, support.*, correction.*, discriminator.*, retrieval.*,
embedder.*, prompts.*, cache.*, run.*). '#' starts a comment. Relative paths
resolve against the config file's directory. The reference of every key is
documented in the README.
"""

from __future__ import annotations

import os
from pathlib import Path

from .embed import (
    DEFAULT_EMBED_DIMENSION,
    DEFAULT_EMBED_MODEL,
    EMBED_API_KEY_ENV,
    EmbeddingCache,
    EmbeddingProvider,
    HashEmbedder,
    RemoteEmbedder,
)
from .errors import ConfigError
from .llm_gateway import (
    CHAT_API_KEY_ENV,
    ChatProvider,
    MockChatProvider,
    MockScript,
    OpenAIChatProvider,
    PrecomputedLabelSource,
    PromptCatalog,
    ResponseCache,
    TemplateId,
    default_prompt_catalog,
    load_prompt_catalog,
)
from .pipeline import GerConfig
from .retrieval import Aggregation, RetrievalConfig


def parse_flat_config(path: str | Path) -> dict[str, str]:
    flat: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        flat[key] = value
    return flat


def _as_bool(flat: dict[str, str], key: str, default: bool) -> bool:
    value = flat.get(key)
    if value is None:
        return default
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _as_float(flat: dict[str, str], key: str, default: float) -> float:
    value = flat.get(key)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from exc


def _as_int(flat: dict[str, str], key: str, default: int) -> int:
    value = flat.get(key)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc


def _resolve(base_dir: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base_dir / path


class _ScriptPool:
    """Loads each scripted-response file once, even when several roles point
    at the same path."""

    def __init__(self) -> None:
        self._scripts: dict[Path, MockScript] = {}

    def get(self, path: Path) -> MockScript:
        resolved = path.resolve()
        if resolved not in self._scripts:
            self._scripts[resolved] = MockScript.load(resolved)
        return self._scripts[resolved]


def _chat_provider(
    flat: dict[str, str], section: str, base_dir: Path, pool: _ScriptPool
) -> ChatProvider | None:
    kind = flat.get(f"{section}.kind", "none").lower()
    if kind == "none":
        return None
    if kind == "scripted":
        script_path = flat.get(f"{section}.script")
        if not script_path:
            raise ConfigError(f"{section}.kind = scripted requires {section}.script")
        script = pool.get(_resolve(base_dir, script_path))
        return MockChatProvider(script, name=f"scripted-{section}")
    if kind == "openai":
        endpoint = flat.get(f"{section}.endpoint")
        model = flat.get(f"{section}.model")
        if not endpoint or not model:
            raise ConfigError(
                f"{section}.kind = openai requires {section}.endpoint and {section}.model"
            )
        return OpenAIChatProvider(
            endpoint=endpoint,
            model=model,
            api_key=os.environ.get(CHAT_API_KEY_ENV),
            temperature=_as_float(flat, f"{section}.temperature", 0.0),
            max_in_flight=_as_int(flat, f"{section}.max_in_flight", 4),
        )
    if kind == "precomputed":
        return None  # handled by the caller for the base section
    raise ConfigError(f"{section}.kind: unknown provider kind {kind!r}")


def build_embedder(flat: dict[str, str], base_dir: Path) -> EmbeddingProvider:
    kind = flat.get("embedder.kind", "hash").lower()
    dimension = _as_int(flat, "embedder.dimension", DEFAULT_EMBED_DIMENSION)
    if kind == "hash":
        return HashEmbedder(dimension=dimension)
    if kind == "openai":
        endpoint = flat.get("embedder.endpoint")
        if not endpoint:
            raise ConfigError("embedder.kind = openai requires embedder.endpoint")
        cache = None
        if flat.get("embedder.cache"):
            cache = EmbeddingCache(_resolve(base_dir, flat["embedder.cache"]))
        return RemoteEmbedder(
            endpoint=endpoint,
            model=flat.get("embedder.model", DEFAULT_EMBED_MODEL),
            dimension=dimension,
            api_key=os.environ.get(EMBED_API_KEY_ENV),
            cache=cache,
        )
    raise ConfigError(f"embedder.kind: unknown embedder kind {kind!r}")


def _catalog(flat: dict[str, str], base_dir: Path) -> PromptCatalog:
    source = flat.get("prompts.catalog", "default")
    if source == "default":
        return default_prompt_catalog()
    return load_prompt_catalog(_resolve(base_dir, source))


def _few_shot(flat: dict[str, str], base_dir: Path) -> dict[TemplateId, str]:
    blocks: dict[TemplateId, str] = {}
    for template_id in TemplateId:
        key = f"prompts.few_shot.{template_id.value}"
        if key in flat and flat[key]:
            path = _resolve(base_dir, flat[key])
            try:
                blocks[template_id] = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"{key}: cannot read {path}: {exc}") from exc
    return blocks


def build_ger_config(flat: dict[str, str], base_dir: str | Path) -> GerConfig:
    """Assemble the runtime pipeline configuration from parsed flat keys."""
    base_dir = Path(base_dir)
    pool = _ScriptPool()

    base_kind = flat.get("base.kind", "none").lower()
    base_provider = None
    base_precomputed = None
    if base_kind == "precomputed":
        predictions = flat.get("base.predictions")
        if not predictions:
            raise ConfigError("base.kind = precomputed requires base.predictions")
        base_precomputed = PrecomputedLabelSource.load(_resolve(base_dir, predictions))
    else:
        base_provider = _chat_provider(flat, "base", base_dir, pool)

    ground_truth = None
    if flat.get("support.ground_truth"):
        ground_truth = PrecomputedLabelSource.load(
            _resolve(base_dir, flat["support.ground_truth"])
        )

    try:
        aggregation = Aggregation(flat.get("retrieval.aggregation", "mean").lower())
    except ValueError as exc:
        raise ConfigError(
            f"retrieval.aggregation: unknown aggregation "
            f"{flat.get('retrieval.aggregation')!r}"
        ) from exc
    retrieval = RetrievalConfig(
        node_threshold=_as_float(flat, "retrieval.tau_node", 0.5),
        triple_threshold=_as_float(flat, "retrieval.tau_triple", 0.5),
        aggregation=aggregation,
    )

    use_kg = _as_bool(flat, "support.use_kg", True)
    cfg = GerConfig(
        base_provider=base_provider,
        base_precomputed=base_precomputed,
        use_kg_support=use_kg,
        support_provider=_chat_provider(flat, "support", base_dir, pool),
        ground_truth_support=ground_truth,
        correction_provider=_chat_provider(flat, "correction", base_dir, pool),
        discriminator_provider=_chat_provider(flat, "discriminator", base_dir, pool),
        retrieval=retrieval,
        catalog=_catalog(flat, base_dir),
        embedder=build_embedder(flat, base_dir) if (use_kg and ground_truth is None) else None,
        response_cache=(
            ResponseCache(_resolve(base_dir, flat["cache.responses"]))
            if flat.get("cache.responses")
            else None
        ),
        few_shot=_few_shot(flat, base_dir),
        workers=_as_int(flat, "run.workers", 1),
    )
    cfg.validate()
    return cfg


def provider_summary(cfg: GerConfig) -> dict[str, str]:
    """Short provider descriptions for the run manifest."""

    def describe(provider) -> str:
        if provider is None:
            return "none"
        return f"{provider.name}:{provider.model}"

    summary = {
        "base": (
            f"precomputed:{cfg.base_precomputed.source}"
            if cfg.base_precomputed is not None
            else describe(cfg.base_provider)
        ),
        "support_llm": describe(cfg.support_provider),
        "support_kg": "on" if cfg.use_kg_support else "off",
        "correction": describe(cfg.correction_provider),
        "discriminator": describe(cfg.discriminator_provider),
        "embedder": (
            f"{cfg.embedder.name}:dim{cfg.embedder.dimension}"
            if cfg.embedder is not None
            else "none"
        ),
    }
    if cfg.ground_truth_support is not None:
        summary["support_oracle"] = cfg.ground_truth_support.source
    return summary
