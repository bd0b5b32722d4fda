"""Command-line entrypoint.

Subcommands: convert-nir, build-kg, retrieve, run, evaluate, sweep.
Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
Runs are randomless; identical inputs give identical outputs (pin --stamp or
GER_RUN_STAMP to make the manifest byte-stable too).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import (
    build_embedder,
    build_ger_config,
    parse_flat_config,
    provider_summary,
)
from .corpus import (
    EventType,
    RelevanceLabel,
    StoryPair,
    all_instances,
    load_corpus,
    render_query_sentence,
)
from .errors import ConfigError, GerError
from .evaluation import (
    ModulePrediction,
    class_metrics,
    confusion,
    contribution_analysis,
    emit_report,
    mcnemar,
    EVENT_ORDER,
)
from .graph import build_kg, kg_to_dict
from .llm_gateway import default_prompt_catalog, load_prompt_catalog
from .nir import convert_nir
from .pipeline import read_predictions, run_pipeline, write_predictions
from .retrieval import (
    Aggregation,
    RetrievalConfig,
    scored_triples,
    score_nodes,
    support_events_kg,
)
from .embed import HashEmbedder

STAMP_ENV = "GER_RUN_STAMP"


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fail(message: str, kind: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_convert_nir(args) -> int:
    report = convert_nir(args.src, args.dst)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_build_kg(args) -> int:
    pairs = load_corpus(args.corpus)
    pair = _find_pair(pairs, args.pair)
    doc = {
        "pair_id": pair.pair_id,
        "pre": kg_to_dict(build_kg(pair.pre)),
        "post": kg_to_dict(build_kg(pair.post)),
    }
    Path(args.out).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote knowledge graphs for pair {pair.pair_id} to {args.out}")
    return 0


def _find_pair(pairs: list[StoryPair], pair_id: str) -> StoryPair:
    for pair in pairs:
        if pair.pair_id == pair_id:
            return pair
    raise GerError(f"no pair {pair_id!r} in corpus")


def cmd_retrieve(args) -> int:
    pairs = load_corpus(args.corpus)
    pair = _find_pair(pairs, args.pair)
    query = reference = None
    for triple in pair.pre.triples:
        if triple.triple_id == args.triple:
            query, reference = triple, pair.post
    for triple in pair.post.triples:
        if triple.triple_id == args.triple:
            if query is not None:
                raise GerError(
                    f"triple id {args.triple!r} is ambiguous within pair "
                    f"{pair.pair_id!r}; it occurs in both stories"
                )
            query, reference = triple, pair.pre
    if query is None:
        raise GerError(f"no triple {args.triple!r} in pair {pair.pair_id!r}")

    if args.config:
        flat = parse_flat_config(args.config)
        provider = build_embedder(flat, Path(args.config).parent)
    else:
        provider = HashEmbedder()
    cfg = RetrievalConfig(
        node_threshold=args.tau_node,
        triple_threshold=args.tau_triple,
        aggregation=Aggregation(args.agg),
    )
    kg = build_kg(reference)
    query_text = render_query_sentence(query)
    nodes = score_nodes(kg, query_text, provider)
    triples = scored_triples(kg, query_text, provider, cfg)
    support = support_events_kg(kg, query_text, provider, cfg)
    doc = {
        "pair_id": pair.pair_id,
        "query_triple": query.triple_id,
        "query": query_text,
        "reference_story": reference.story_id,
        "config": {
            "tau_node": cfg.node_threshold,
            "tau_triple": cfg.triple_threshold,
            "aggregation": cfg.aggregation.value,
        },
        "nodes": [
            {
                "node_id": n.node_id,
                "score": n.score,
                "surfaces": sorted(kg.node_by_id[n.node_id].surface_forms),
                "key_node": n.score >= cfg.node_threshold,
            }
            for n in nodes
        ],
        "candidate_triples": [
            {
                "triple_id": t.triple_id,
                "score": t.score,
                "node_scores": [[nid, s] for nid, s in t.node_scores],
            }
            for t in triples
        ],
        "support_events": [
            {
                "triple_id": e.triple_id,
                "subject": e.subject,
                "predicate": e.predicate,
                "object": e.object,
            }
            for e in sorted(support)
        ],
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _run_stamp(args) -> str:
    if getattr(args, "stamp", None):
        return args.stamp
    env = os.environ.get(STAMP_ENV)
    if env:
        return env
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _catalog_info(flat: dict[str, str], config_dir: Path) -> dict:
    source = flat.get("prompts.catalog", "default")
    if source == "default":
        catalog = default_prompt_catalog()
    else:
        path = Path(source)
        catalog = load_prompt_catalog(
            path if path.is_absolute() else config_dir / path
        )
    return {"source": source, "version": catalog.version, "sha256": catalog.sha256}


def cmd_run(args) -> int:
    pairs = load_corpus(args.corpus)
    flat = parse_flat_config(args.config)
    config_dir = Path(args.config).parent
    cfg = build_ger_config(flat, config_dir)
    run = run_pipeline(cfg, pairs)
    write_predictions(run, args.out, trace_full=args.trace_full)
    manifest = {
        "artifact_version": __version__,
        "created_utc": _run_stamp(args),
        "corpus": {"path": str(args.corpus), "sha256": file_sha256(args.corpus)},
        "prompt_catalog": _catalog_info(flat, config_dir),
        "providers": provider_summary(cfg),
        "config": dict(sorted(flat.items())),
        "counts": {
            "instances": run.total,
            "predicted": len(run.predictions),
            "failed": len(run.failures),
        },
    }
    manifest_path = Path(str(args.out) + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        json.dumps(
            {
                "predictions": str(args.out),
                "manifest": str(manifest_path),
                **manifest["counts"],
            },
            sort_keys=True,
        )
    )
    return 0


def _gold_map(pairs: list[StoryPair]) -> dict[tuple[str, str, str], EventType]:
    gold = {}
    for instance in all_instances(pairs):
        if instance.gold_label is not None:
            gold[instance.key] = instance.gold_label
    return gold


def _pred_map(rows: list[dict]) -> dict[tuple[str, str, str], EventType]:
    out = {}
    for row in rows:
        key = (row["pair_id"], row["triple_id"], row["direction"])
        out[key] = EventType(row["final_event_type"])
    return out


def _verify_manifest(pred_path: str, gold_path: str) -> None:
    manifest_path = Path(str(pred_path) + ".manifest.json")
    if not manifest_path.exists():
        raise GerError(f"no manifest found at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    actual_corpus = file_sha256(gold_path)
    recorded = manifest["corpus"]["sha256"]
    if actual_corpus != recorded:
        raise GerError(
            f"corpus hash mismatch: manifest records {recorded[:12]}..., "
            f"gold file hashes to {actual_corpus[:12]}..."
        )
    catalog_info = manifest.get("prompt_catalog", {})
    source = catalog_info.get("source", "default")
    if source == "default":
        actual_catalog = default_prompt_catalog().sha256
    else:
        path = Path(source)
        if not path.is_absolute():
            path = manifest_path.parent / path
        actual_catalog = load_prompt_catalog(path).sha256 if path.exists() else None
    if actual_catalog is not None and actual_catalog != catalog_info.get("sha256"):
        raise GerError("prompt catalog hash mismatch")
    print(f"manifest verified: {manifest_path}")


def _aligned_metrics(
    name: str, rows: list[dict], gold: dict
) -> tuple[str, dict, dict]:
    preds = _pred_map(rows)
    unlabeled = [k for k in preds if k not in gold]
    for key in unlabeled:
        del preds[key]
    gold_sub = {k: gold[k] for k in preds}
    metrics = class_metrics(confusion(preds, gold_sub))
    coverage = {
        "scored": len(preds),
        "gold_total": len(gold),
        "unlabeled_dropped": len(unlabeled),
    }
    return name, metrics, coverage


def _contribution_rows(rows: list[dict]) -> list[ModulePrediction]:
    return [
        ModulePrediction(
            key=(row["pair_id"], row["triple_id"], row["direction"]),
            base_label=RelevanceLabel(row["base_label"]),
            support_label=RelevanceLabel(row["support_label"]),
        )
        for row in rows
    ]


def cmd_evaluate(args) -> int:
    if args.verify:
        _verify_manifest(args.pred, args.gold)
    gold = _gold_map(load_corpus(args.gold))
    rows_a, failures_a = read_predictions(args.pred)
    name_a = Path(args.pred).stem
    results = [_aligned_metrics(name_a, rows_a, gold)]
    rows_b: list[dict] = []
    if args.pred_b:
        rows_b, _failures_b = read_predictions(args.pred_b)
        name_b = Path(args.pred_b).stem
        if name_b == name_a:
            name_b = name_b + "-b"
        results.append(_aligned_metrics(name_b, rows_b, gold))

    metrics = {name: per_class for name, per_class, _cov in results}
    mcnemar_result = None
    if args.mcnemar:
        if not args.pred_b:
            raise ConfigError("--mcnemar requires --pred-b")
        preds_a, preds_b = _pred_map(rows_a), _pred_map(rows_b)
        common = set(preds_a) & set(preds_b) & set(gold)
        mcnemar_result = mcnemar(
            {k: preds_a[k] for k in common},
            {k: preds_b[k] for k in common},
            {k: gold[k] for k in common},
            continuity_correction=args.continuity_correction,
        )

    contribution = None
    if args.contribution:
        module_rows = [
            p for p in _contribution_rows(rows_a) if p.key in gold
        ]
        contribution = contribution_analysis(module_rows, gold)

    if args.format == "json":
        doc = json.loads(emit_report(metrics, "json"))
        doc["coverage"] = {name: cov for name, _m, cov in results}
        doc["failures"] = {name_a: len(failures_a)}
        if mcnemar_result is not None:
            doc["mcnemar"] = {
                "b": mcnemar_result.b,
                "c": mcnemar_result.c,
                "statistic": mcnemar_result.statistic,
                "p_value": mcnemar_result.p_value,
            }
        if contribution is not None:
            doc["contribution"] = {
                event.value: {
                    "fail": row.fail,
                    "success": row.success,
                    "alternative_insight": row.alternative_insight,
                    "count": row.count,
                }
                for event, row in contribution.items()
            }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0

    print(emit_report(metrics, "markdown"))
    for name, _m, cov in results:
        print(
            f"\n{name}: scored {cov['scored']} of {cov['gold_total']} gold instances"
            + (
                f" ({cov['unlabeled_dropped']} unlabeled dropped)"
                if cov["unlabeled_dropped"]
                else ""
            )
        )
    if failures_a:
        print(f"{name_a}: {len(failures_a)} failed instance(s) excluded")
    if mcnemar_result is not None:
        if mcnemar_result.degenerate:
            print("\nMcNemar: degenerate (no discordant pairs)")
        else:
            print(
                f"\nMcNemar: b={mcnemar_result.b} c={mcnemar_result.c} "
                f"statistic={mcnemar_result.statistic:.4f} "
                f"p={mcnemar_result.p_value:.5f}"
            )
    if contribution is not None:
        print("\n## Module contribution\n")
        print("| Event | Fail | Success | Alternative Insight | Count |")
        print("|---|---|---|---|---|")
        for event in EVENT_ORDER:
            row = contribution[event]
            cells = [
                f"{v * 100:.2f}%" if v is not None else "n/a"
                for v in (row.fail, row.success, row.alternative_insight)
            ]
            print(
                f"| {event.abbrev} | {cells[0]} | {cells[1]} | {cells[2]} "
                f"| {row.count} |"
            )
    return 0


def _sweep_values(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"sweep range must be start:stop:step, got {spec!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad sweep range {spec!r}: {exc}") from exc
    if step <= 0:
        raise ConfigError("sweep step must be positive")
    values = []
    count = int(round((stop - start) / step))
    for i in range(count + 1):
        value = start + i * step
        if value <= stop + 1e-9:
            values.append(round(value, 10))
    return values


def cmd_sweep(args) -> int:
    if (args.tau_node is None) == (args.tau_triple is None):
        raise ConfigError("sweep needs exactly one of --tau-node or --tau-triple")
    key = "retrieval.tau_node" if args.tau_node else "retrieval.tau_triple"
    values = _sweep_values(args.tau_node or args.tau_triple)
    pairs = load_corpus(args.corpus)
    gold = _gold_map(pairs)
    base_flat = parse_flat_config(args.config)
    config_dir = Path(args.config).parent

    label = "tau_node" if args.tau_node else "tau_triple"
    print(f"| {label} | " + " | ".join(e.abbrev for e in EVENT_ORDER) + " |")
    print("|---|" + "---|" * len(EVENT_ORDER))
    for value in values:
        flat = dict(base_flat)
        flat[key] = str(value)
        cfg = build_ger_config(flat, config_dir)
        run = run_pipeline(cfg, pairs)
        preds = {p.key: p.final_event_type for p in run.predictions if p.key in gold}
        per_class = class_metrics(confusion(preds, {k: gold[k] for k in preds}))
        cells = []
        for event in EVENT_ORDER:
            metric = getattr(per_class[event], args.metric)
            cells.append(f"{metric:.4f}" if metric is not None else "n/a")
        print(f"| {value:g} | " + " | ".join(cells) + " |")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ger",
        description=(
            "Classify lifelog events against paired stories with a "
            "graph-empowered refinement pipeline."
        ),
    )
    parser.add_argument("--version", action="version", version=f"ger {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert-nir", help="convert NIR release files to a corpus")
    p.add_argument("--src", required=True, help="directory of NIR files")
    p.add_argument("--dst", required=True, help="output corpus JSON path")
    p.set_defaults(handler=cmd_convert_nir)

    p = sub.add_parser("build-kg", help="export a pair's knowledge graphs as JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pair", required=True, help="pair id")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_build_kg)

    p = sub.add_parser("retrieve", help="score one query triple against its reference story")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--triple", required=True, help="query triple id")
    p.add_argument("--tau-node", type=float, default=0.5)
    p.add_argument("--tau-triple", type=float, default=0.5)
    p.add_argument("--agg", choices=[a.value for a in Aggregation], default="mean")
    p.add_argument("--config", help="optional run config for the embedder")
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("run", help="run the pipeline over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--trace-full", action="store_true", help="embed raw prompts in traces")
    p.add_argument("--stamp", help="manifest timestamp override (also GER_RUN_STAMP)")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-b", help="second predictions file for comparison")
    p.add_argument("--gold", required=True, help="gold corpus JSON")
    p.add_argument("--format", choices=["md", "markdown", "json"], default="md")
    p.add_argument("--mcnemar", action="store_true")
    p.add_argument(
        "--continuity-correction",
        action="store_true",
        help="use the (|b-c|-1)^2 numerator variant",
    )
    p.add_argument("--contribution", action="store_true", help="module contribution table")
    p.add_argument("--verify", action="store_true", help="check the run manifest hashes")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="re-run the pipeline across a threshold range")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--tau-node", help="range start:stop:step")
    p.add_argument("--tau-triple", help="range start:stop:step")
    p.add_argument("--metric", choices=["recall", "f1"], default="recall")
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.handler(args)
    except ConfigError as exc:
        _fail(str(exc), "config")
        return 3
    except GerError as exc:
        _fail(str(exc), type(exc).__name__)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
