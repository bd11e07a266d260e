"""Command-line entry point: ingest, match, plan, corpus, fit-planner, answer, eval."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .agent import AgentConfig
from .config import Config, load_config
from .embeddings import HashingEmbedder, RemoteEmbedder, build_index
from .evaluation import format_table, load_dataset, run_eval, write_report
from .graph import GraphError, SemiStructuredGraph, graph_stats, load_graph
from .llm import BackendError, RecordReplayBackend, RemoteBackend, RetryPolicy, ScriptedBackend
from .matcher import Question
from .pipeline import Pipeline
from .planner import (
    FrequencyPathModel,
    GraphFeaturizer,
    LLMPathModel,
    PlanTarget,
    UniformRelationModel,
    build_corpus,
    fit_frequency_model,
    kl_loss,
    read_corpus,
    serialize_path,
    target_distribution,
    write_corpus,
)

log = logging.getLogger("semiqa")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="INI config file")
    p.add_argument("--graph-nodes", metavar="PATH", help="line-delimited JSON node file")
    p.add_argument("--graph-edges", metavar="PATH", help="line-delimited JSON edge file")
    p.add_argument("--k", type=int, metavar="N", help="fan-out per Search/Query (default 5)")
    p.add_argument("--t", type=int, metavar="N", help="maximum agent rounds (default 5)")
    p.add_argument("--backend", choices=["scripted", "replay", "record", "remote"], help="chat backend")
    p.add_argument("--cassette", metavar="PATH", help="cassette file for replay/record backends")
    p.add_argument("--script", metavar="PATH", help="rules file for the scripted backend")
    p.add_argument("--planner", metavar="PATH", help="fitted frequency planner (JSON)")
    p.add_argument("--prune-mode", choices=["llm", "plan_first", "score"], help="Search pruning strategy")
    p.add_argument("--embedding", choices=["hash", "remote"], help="embedding provider")
    p.add_argument("--out", metavar="DIR", help="root directory for run outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="semiqa", description="Plan-assisted question answering over semi-structured graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    sub.add_parser("ingest", parents=[common], help="index the graph and build the embedding cache")
    p = sub.add_parser("match", parents=[common], help="print topic nodes for a question")
    p.add_argument("question")
    p = sub.add_parser("plan", parents=[common], help="print topic nodes and relation paths")
    p.add_argument("question")
    p = sub.add_parser("corpus", parents=[common], help="emit path-generation training examples")
    p.add_argument("--dataset", metavar="PATH", help="question file (id, question, answers, split)")
    p.add_argument("--split", default="train")
    p.add_argument("--output", metavar="PATH", help="corpus file (default: run directory)")
    p = sub.add_parser("fit-planner", parents=[common], help="fit the frequency path model on a corpus")
    p.add_argument("--corpus", metavar="PATH", required=True)
    p.add_argument("--output", metavar="PATH", help="model file (default: run directory)")
    p = sub.add_parser("answer", parents=[common], help="answer one question")
    p.add_argument("question")
    p.add_argument("--trace", action="store_true", help="print and save the agent transcript")
    p = sub.add_parser("eval", parents=[common], help="evaluate on a dataset split")
    p.add_argument("--dataset", metavar="PATH")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, metavar="N", help="evaluate a seeded sample of N questions")
    p.add_argument("--parallelism", type=int, metavar="N")
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = load_config(args.config)
    overrides = {
        ("graph", "nodes"): args.graph_nodes,
        ("graph", "edges"): args.graph_edges,
        ("agent", "k"): args.k,
        ("agent", "t"): args.t,
        ("agent", "prune_mode"): args.prune_mode,
        ("backend", "kind"): args.backend,
        ("backend", "cassette"): args.cassette,
        ("backend", "script"): args.script,
        ("planner", "model"): args.planner,
        ("embedding", "provider"): args.embedding,
        ("eval", "out_dir"): args.out,
        ("eval", "dataset"): getattr(args, "dataset", None),
        ("eval", "limit"): getattr(args, "limit", None),
        ("eval", "parallelism"): getattr(args, "parallelism", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def run_dir(cfg: Config, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    out = Path(cfg.eval.out_dir) / f"{stamp}-{cfg.digest()}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"command": command, **cfg.to_dict()}, indent=2), encoding="utf-8")
    return out


def open_graph(cfg: Config) -> SemiStructuredGraph:
    if not cfg.graph.nodes or not cfg.graph.edges:
        raise UsageError("graph files not configured (--graph-nodes/--graph-edges)")
    for p in (cfg.graph.nodes, cfg.graph.edges):
        if not Path(p).exists():
            raise FileNotFoundError(f"graph file not found: {p}")
    return load_graph(cfg.graph.nodes, cfg.graph.edges)


def make_provider(cfg: Config):
    e = cfg.embedding
    if e.provider == "hash":
        return HashingEmbedder(e.dim, e.seed)
    if e.provider == "remote":
        return RemoteEmbedder(e.model, e.dim, retry=RetryPolicy(cfg.backend.attempts, timeout=cfg.backend.timeout))
    raise UsageError(f"unknown embedding provider {e.provider!r}")


def make_backend(cfg: Config):
    b = cfg.backend
    if b.kind == "scripted":
        if b.script:
            return ScriptedBackend.from_file(b.script)
        return ScriptedBackend(default_response="Thought 1: No script configured.\nAction 1: Finish[unknown]")
    if b.kind in ("replay", "record"):
        if not b.cassette:
            raise UsageError(f"--cassette is required for the {b.kind} backend")
        inner = None
        if b.kind == "record":
            inner = RemoteBackend(retry=RetryPolicy(b.attempts, timeout=b.timeout), max_in_flight=b.max_in_flight)
        return RecordReplayBackend(b.cassette, inner, b.kind)
    if b.kind == "remote":
        return RemoteBackend(retry=RetryPolicy(b.attempts, timeout=b.timeout), max_in_flight=b.max_in_flight)
    raise UsageError(f"unknown backend {b.kind!r}")


def make_pipeline(cfg: Config, g: SemiStructuredGraph, need_backend: bool = True) -> Pipeline:
    provider = make_provider(cfg)
    backend = make_backend(cfg) if need_backend or cfg.planner.source == "llm" else ScriptedBackend()
    model = None
    if cfg.planner.source == "frequency" and cfg.planner.model:
        model = FrequencyPathModel.load(cfg.planner.model, GraphFeaturizer(g))
    elif cfg.planner.source == "llm":
        model = LLMPathModel(backend, g, model=cfg.backend.model)
    index = None
    if cfg.graph.embedding_cache:
        index = build_index(g, provider, cfg.graph.embedding_cache)
    agent_cfg = AgentConfig(k=cfg.agent.k, t=cfg.agent.t, prune_mode=cfg.agent.prune_mode, model=cfg.backend.model)
    return Pipeline(g, provider, backend, agent_cfg, model, cfg.planner.match_k, cfg.planner.n_paths, cfg.planner.max_len, index)


def _names(g: SemiStructuredGraph, ids) -> str:
    return " | ".join(g.nodes[i].display_name for i in ids)


def cmd_ingest(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    s = graph_stats(g)
    print(
        f"{s.node_count} nodes, {s.edge_count} edges, {s.node_type_count} node types, "
        f"{s.edge_type_count} edge types, avg degree {s.avg_degree}",
        file=out,
    )
    cache = cfg.graph.embedding_cache or f"{cfg.graph.nodes}.emb.jsonl"
    index = build_index(g, make_provider(cfg), cache)
    print(f"embedding cache: {cache} ({len(index)} vectors)", file=out)
    return EXIT_OK


def cmd_match(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    result = make_pipeline(cfg, g, need_backend=False).match(args.question)
    print(f"method: {result.method}", file=out)
    for nid, score in result.nodes:
        print(f"{nid}\t{g.nodes[nid].display_name}\t{score:.4f}", file=out)
    return EXIT_OK


def cmd_plan(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    plan = make_pipeline(cfg, g, need_backend=False).plan(args.question)
    print(f"Topic Node: [{_names(g, plan.seeds)}]", file=out)
    if not plan.paths:
        print("Plan: (none)", file=out)
    for path, score in plan.paths:
        print(f"Plan: {' -> '.join(path)}\t{score:.4f}\t{serialize_path(path)}", file=out)
    return EXIT_OK


def _targets(cfg: Config, g: SemiStructuredGraph, split: str) -> list[PlanTarget]:
    if not cfg.eval.dataset:
        raise UsageError("--dataset is required")
    questions = load_dataset(cfg.eval.dataset, split)
    if not questions:
        raise ValueError("empty dataset")
    pipe = make_pipeline(cfg, g, need_backend=False)
    targets = []
    for q in questions:
        seeds = pipe.match(Question(q.id, q.text)).ids
        if not seeds:
            log.warning("no topic nodes for %s; skipped", q.id)
            continue
        targets.append(target_distribution(q.text, q.gold, g, seeds, cfg.planner.max_len, q.id))
    return targets


def cmd_corpus(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    examples = build_corpus(_targets(cfg, g, args.split))
    path = Path(args.output) if args.output else run_dir(cfg, "corpus") / "corpus.jsonl"
    n = write_corpus(examples, path)
    print(f"{n} training examples -> {path}", file=out)
    return EXIT_OK


def cmd_fit_planner(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    corpus = read_corpus(args.corpus)
    model = fit_frequency_model(corpus, g, GraphFeaturizer(g), cfg.planner.max_len)
    path = Path(args.output) if args.output else run_dir(cfg, "fit-planner") / "planner.json"
    model.save(path)
    by_q: dict[str, list] = {}
    for ex in corpus:
        by_q.setdefault(ex.question_id, [ex.question, []])[1].append(ex.path)
    targets = [PlanTarget(qid, q, (), tuple(paths)) for qid, (q, paths) in by_q.items()]
    baseline = UniformRelationModel(model.vocabulary, model.max_len)
    print(f"fitted on {len(corpus)} examples -> {path}", file=out)
    print(f"training loss {kl_loss(model, targets):.4f} (uniform {kl_loss(baseline, targets):.4f})", file=out)
    return EXIT_OK


def cmd_answer(cfg: Config, args, out) -> int:
    g = open_graph(cfg)
    outcome = make_pipeline(cfg, g).answer(Question("cli", args.question))
    print(f"status: {outcome.status} (rounds {outcome.rounds_used}, {outcome.latency:.2f}s)", file=out)
    for nid in outcome.answers:
        print(f"{nid}\t{g.nodes[nid].display_name}", file=out)
    if not outcome.answers:
        print("unknown", file=out)
    if args.trace:
        for rec in outcome.transcript_records():
            print(json.dumps(rec, ensure_ascii=False), file=out)
        path = run_dir(cfg, "answer") / "transcript.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            outcome.write_transcript(fh)
        print(f"transcript -> {path}", file=out)
    return EXIT_OK if outcome.status != "backend_error" else EXIT_RUNTIME


def cmd_eval(cfg: Config, args, out) -> int:
    if not cfg.eval.dataset:
        raise UsageError("--dataset is required")
    questions = load_dataset(cfg.eval.dataset, args.split)
    if not questions:
        raise ValueError("empty dataset")
    g = open_graph(cfg)
    pipe = make_pipeline(cfg, g)
    result = run_eval(questions, pipe, cfg.eval.parallelism, cfg.eval.seed, cfg.eval.limit)
    name = Path(cfg.eval.dataset).stem
    report = write_report(result, run_dir(cfg, "eval"), name, {"split": args.split, "config": cfg.digest()})
    print(format_table({name: result}), file=out)
    print(f"report -> {report}", file=out)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "match": cmd_match,
    "plan": cmd_plan,
    "corpus": cmd_corpus,
    "fit-planner": cmd_fit_planner,
    "answer": cmd_answer,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args, out)
    except UsageError as exc:
        print(f"semiqa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, BackendError, OSError, ValueError, KeyError) as exc:
        print(f"semiqa {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
