"""Command-line entry point: offline build, indexing, queries, benchmarks.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import config as config_mod
from . import corpus as corpus_mod
from . import evaluation, executor, fusion, graph as graph_mod, views
from .errors import (
    ConfigError,
    ModelError,
    ParseError,
    SchemaVersionError,
    TriviewError,
    UnknownFormatError,
)
from .gateway import QuestionUsage, TokenUsage, record_usage

logger = logging.getLogger(__name__)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the run configuration JSON")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--max-in-flight", type=int, help="max concurrent questions")
    parser.add_argument("--alpha-r", type=float, help="relation-view fusion weight")
    parser.add_argument("--alpha-a", type=float, help="anchor-view fusion weight")
    parser.add_argument("--alpha-t", type=float, help="text-view fusion weight")
    parser.add_argument("--beta", type=float, help="residual relation weight")
    parser.add_argument("--lambda", dest="lam", type=float, help="consensus bonus weight")
    parser.add_argument("--top-k", type=int, help="final number of evidence units")
    parser.add_argument("--k-view", type=int, help="per-view retrieval breadth")
    parser.add_argument("--views", help="comma-separated view subset, e.g. r,a,t or t")
    parser.add_argument("--no-consensus", action="store_true", help="disable the consensus bonus")
    parser.add_argument("--no-slot-binding", action="store_true", help="bind placeholders to sub-question text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triview", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build-graph", help="extract and persist the evidence-grounded graph")
    _add_common_flags(p_build)
    p_build.add_argument("--force", action="store_true", help="overwrite an existing graph file")
    p_build.set_defaults(func=cmd_build_graph)

    p_index = sub.add_parser("index", help="textualize, embed, and persist the view indexes")
    _add_common_flags(p_index)
    p_index.set_defaults(func=cmd_index)

    p_query = sub.add_parser("query", help="answer one question")
    _add_common_flags(p_query)
    p_query.add_argument("question", help="the question to answer")
    p_query.add_argument("--explain", action="store_true", help="include the per-candidate fusion dump in the trace")
    p_query.set_defaults(func=cmd_query)

    p_bench = sub.add_parser("run-benchmark", help="run all benchmark questions and write reports")
    _add_common_flags(p_bench)
    p_bench.set_defaults(func=cmd_run_benchmark)
    return parser


def _apply_overrides(cfg: config_mod.RunConfig, args: argparse.Namespace) -> config_mod.RunConfig:
    changes: dict = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_in_flight is not None:
        changes["max_in_flight"] = args.max_in_flight
    if any(v is not None for v in (args.alpha_r, args.alpha_a, args.alpha_t)):
        base = cfg.resolved_alpha()
        changes["alpha"] = (
            args.alpha_r if args.alpha_r is not None else base[0],
            args.alpha_a if args.alpha_a is not None else base[1],
            args.alpha_t if args.alpha_t is not None else base[2],
        )
    if args.beta is not None:
        changes["beta"] = args.beta
    if args.lam is not None:
        changes["lambda_"] = args.lam
    if args.top_k is not None:
        changes["k_final"] = args.top_k
    if args.k_view is not None:
        changes["k_view"] = args.k_view
    if args.views:
        flags = tuple(flag.strip() for flag in args.views.split(",") if flag.strip())
        changes["views"] = flags
    if args.no_consensus:
        changes["consensus"] = False
    if args.no_slot_binding:
        changes["slot_binding"] = False
    return config_mod.replace(cfg, **changes)


def _load_source(cfg: config_mod.RunConfig) -> tuple[corpus_mod.Corpus, list[corpus_mod.QARecord]]:
    if cfg.benchmark_path:
        if not cfg.benchmark_format:
            raise ConfigError("benchmark_format is required with benchmark_path")
        return corpus_mod.load_benchmark(cfg.benchmark_path, cfg.benchmark_format)
    if cfg.corpus_path:
        return corpus_mod.load_corpus(cfg.corpus_path), []
    raise ConfigError("config needs benchmark_path (with benchmark_format) or corpus_path")


def _out_dir(cfg: config_mod.RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _graph_path(cfg: config_mod.RunConfig) -> Path:
    return Path(cfg.out_dir) / "graph.json"


def _index_dir(cfg: config_mod.RunConfig) -> Path:
    return Path(cfg.out_dir) / "index"


def cmd_build_graph(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(config_mod.load_config(args.config), args)
    out = _out_dir(cfg)
    graph_path = _graph_path(cfg)
    if graph_path.exists() and not args.force:
        raise ConfigError(f"{graph_path} already exists; pass --force to rebuild")
    corpus, _ = _load_source(cfg)
    provider = config_mod.make_chat_provider(cfg.chat_provider)
    usages: list[TokenUsage] = []
    graph = graph_mod.build_graph_from_corpus(
        corpus, provider, cfg.schema_labels, max_workers=cfg.max_in_flight, usages=usages
    )
    graph_mod.persist_graph(graph, graph_path)
    corpus_mod.persist_corpus(corpus, out / "corpus.json")
    build_log = {
        "units": len(corpus),
        "nodes": graph.node_count(),
        "edges": graph.edge_count(),
        "failed_units": sorted(graph.failed_units),
        "extraction_calls": len(usages),
        "extraction_tokens": sum(u.total_tokens for u in usages),
    }
    (out / "build_log.json").write_text(
        json.dumps(build_log, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"graph built: {graph.node_count()} nodes, {graph.edge_count()} edges, "
          f"{len(graph.failed_units)} failed units -> {graph_path}")
    return 0


def _load_artifacts(cfg: config_mod.RunConfig):
    corpus = corpus_mod.load_corpus(Path(cfg.out_dir) / "corpus.json")
    graph = graph_mod.load_graph(_graph_path(cfg))
    return corpus, graph


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(config_mod.load_config(args.config), args)
    corpus, graph = _load_artifacts(cfg)
    embedder = config_mod.make_embedding_provider(cfg.embed_provider)
    indexes = views.build_view_indexes(
        corpus, graph, embedder, views=views.ALL_VIEWS, max_anchor_edges=cfg.max_anchor_edges
    )
    views.save_indexes(indexes, _index_dir(cfg), embedder.provider_id)
    sizes = {view: len(idx) for view, idx in sorted(indexes.items())}
    print(f"indexes built: {sizes} -> {_index_dir(cfg)}")
    return 0


def _make_retriever(cfg: config_mod.RunConfig):
    corpus, graph = _load_artifacts(cfg)
    indexes, manifest = views.load_indexes(_index_dir(cfg))
    embedder = config_mod.make_embedding_provider(cfg.embed_provider)
    if manifest.get("provider_id") != embedder.provider_id:
        logger.warning(
            "index was built with provider %r but querying with %r",
            manifest.get("provider_id"), embedder.provider_id,
        )
    retriever = fusion.MultiViewRetriever(
        graph, indexes, embedder, cfg.fusion_config(), views=cfg.view_names()
    )
    return corpus, retriever


def _write_trace(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _explain_dump(retriever: fusion.MultiViewRetriever, trace: executor.ExecutionTrace) -> dict:
    dump = {"initial": [c.to_dict() for c in retriever.retrieve(trace.question).candidates]}
    for step in trace.steps:
        if step.bound_query.strip():
            dump[f"step_{step.step_id}"] = [
                c.to_dict() for c in retriever.retrieve(step.bound_query).candidates
            ]
    return dump


def cmd_query(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(config_mod.load_config(args.config), args)
    corpus, retriever = _make_retriever(cfg)
    provider = config_mod.make_chat_provider(cfg.chat_provider)
    question_id = "adhoc-" + hashlib.sha1(args.question.encode("utf-8")).hexdigest()[:8]
    usages: list[TokenUsage] = []
    trace = executor.run_pipeline(
        args.question,
        retriever,
        provider,
        corpus,
        usages,
        question_id=question_id,
        max_steps=cfg.max_steps,
        slot_binding=cfg.slot_binding,
    )
    payload = trace.to_dict()
    payload["usage"] = vars(record_usage(question_id, usages))
    if args.explain:
        payload["explain"] = _explain_dump(retriever, trace)
    traces_dir = _out_dir(cfg) / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    _write_trace(traces_dir / f"{question_id}.json", payload)
    print(trace.final_answer)
    return 0


def cmd_run_benchmark(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(config_mod.load_config(args.config), args)
    if not cfg.benchmark_path:
        raise ConfigError("run-benchmark needs benchmark_path in the config")
    _, records = _load_source(cfg)
    corpus, retriever = _make_retriever(cfg)
    provider = config_mod.make_chat_provider(cfg.chat_provider)
    judge = config_mod.make_chat_provider(cfg.judge_provider, role="judge") if cfg.judge_provider else None

    traces_dir = _out_dir(cfg) / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    pending = [rec for rec in records if not (traces_dir / f"{rec.record_id}.json").exists()]
    logger.info("running %d of %d questions (%d already have traces)",
                len(pending), len(records), len(records) - len(pending))

    def run_one(rec: corpus_mod.QARecord) -> None:
        usages: list[TokenUsage] = []
        path = traces_dir / f"{rec.record_id}.json"
        try:
            trace = executor.run_pipeline(
                rec.question,
                retriever,
                provider,
                corpus,
                usages,
                question_id=rec.record_id or "q",
                max_steps=cfg.max_steps,
                slot_binding=cfg.slot_binding,
            )
            payload = trace.to_dict()
        except ModelError as exc:
            logger.error("question %s failed: %s", rec.record_id, exc)
            payload = {
                "question_id": rec.record_id,
                "question": rec.question,
                "plan": [],
                "initial_unit_ids": [],
                "steps": [],
                "acquired": [],
                "final_answer": "",
                "warnings": [f"failed: {exc}"],
                "error": str(exc),
            }
        payload["usage"] = vars(record_usage(rec.record_id or "q", usages))
        _write_trace(path, payload)

    workers = max(1, cfg.max_in_flight)
    if pending:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, pending))

    traces: list[executor.ExecutionTrace] = []
    usages_map: dict[str, QuestionUsage] = {}
    for rec in records:
        data = json.loads((traces_dir / f"{rec.record_id}.json").read_text(encoding="utf-8"))
        traces.append(executor.trace_from_dict(data))
        usage = data.get("usage", {})
        usages_map[rec.record_id] = QuestionUsage(
            question_id=rec.record_id or "q",
            calls=usage.get("calls", 0),
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
            total_tokens=usage.get("total_tokens", 0),
            wall_clock_ms=usage.get("wall_clock_ms", 0.0),
            approximate=usage.get("approximate", False),
        )

    verdicts = {}
    judge_usages: list[TokenUsage] = []
    for rec, trace in zip(records, traces):
        llm_ok = evaluation.llm_acc(trace.final_answer, rec.gold_answer, judge, judge_usages) if judge else None
        verdicts[rec.record_id] = evaluation.QuestionVerdict(
            question_id=rec.record_id or "q",
            prediction=trace.final_answer,
            gold=rec.gold_answer,
            str_correct=evaluation.str_acc(trace.final_answer, rec.gold_answer),
            llm_correct=llm_ok,
        )
    slot = evaluation.slot_diagnostics(traces, verdicts, judge, usages=judge_usages) if judge else None

    report = evaluation.aggregate_report(
        list(verdicts.values()),
        usages_map,
        dataset=cfg.dataset_name or cfg.benchmark_format or "",
        slot=slot,
        effective_config=cfg.effective_dict(),
    )
    evaluation.write_report(report, cfg.out_dir)
    print(evaluation.render_report_text(report), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UnknownFormatError, SchemaVersionError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TriviewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
