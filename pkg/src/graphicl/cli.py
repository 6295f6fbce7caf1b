"""Command-line surface: graph building, kernels, indexing, training, runs.

Exit codes: 0 success, 2 input/parse error, 3 config/environment error,
4 endpoint failure after retries.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys

import numpy as np

from . import graphs as G
from . import parsing
from .errors import (
    ConfigError,
    GraphiclError,
    RateLimited,
    TransportError,
)
from .evaluation import grid_table, load_dataset, report
from .kernels import DEFAULT_WL_ITERATIONS, KernelSpec, compute
from .llm import HttpClient, LlmEndpoint, MockClient
from .pipeline import PipelineConfig, RunTrace, run_pipeline
from .retrieval import (
    EmbeddingStore,
    ScoredCandidate,
    hashing_embedder,
    load_store,
    rerank_graph,
    save_store,
)
from .training import (
    Exemplar,
    TrainConfig,
    build_train_set,
    load_instances,
    save_instances,
    train_head,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_ENDPOINT = 4


def _read_text(args) -> str:
    if args.text is not None:
        return args.text
    if args.file is not None:
        with open(args.file) as fh:
            return fh.read()
    return sys.stdin.read()


def cmd_build_graph(args) -> int:
    text = _read_text(args)
    try:
        if args.flavor == "deductive":
            steps = parsing.parse_deductive_trace(text)
            graph = G.build_deductive_graph(steps)
        else:
            equations = parsing.extract_equations(text)
            graph = G.build_math_graph(equations)
    except GraphiclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = G.serialize(graph)
    if args.diagnose:
        d = G.diagnose(graph)
        out += (
            f"# weakly-connected={d.weakly_connected}"
            f" strongly-connected={d.strongly_connected}"
            f" components={d.component_count}"
            f" longest-path={d.longest_path_length}"
            f" cycle={d.cycle_detected}\n"
        )
    _write_output(out, args.output)
    return EXIT_OK


def _write_output(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_graph(path: str) -> G.ReasoningGraph:
    with open(path) as fh:
        return G.deserialize(fh.read())


def cmd_kernel(args) -> int:
    try:
        g1 = _load_graph(args.graph_a)
        g2 = _load_graph(args.graph_b)
        spec = KernelSpec(args.kernel, args.iters, normalized=not args.raw)
        value = compute(g1, g2, spec)
    except (GraphiclError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(repr(value.raw if args.raw else value.normalized))
    return EXIT_OK


def cmd_rerank(args) -> int:
    try:
        query = _load_graph(args.query_graph)
        with open(args.candidates) as fh:
            candidates = G.deserialize_many(fh.read())
        spec = KernelSpec(args.kernel, args.iters)
    except (GraphiclError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    scored = [
        ScoredCandidate(str(i), 0.0, final_rank=i + 1)
        for i in range(len(candidates))
    ]
    graphs = {str(i): g for i, g in enumerate(candidates)}
    n = args.n if args.n else len(candidates)
    for cand in rerank_graph(scored, query, graphs, spec, n):
        print(f"{cand.exemplar_id} {cand.structural_score!r}")
    return EXIT_OK


def cmd_index(args) -> int:
    try:
        store = None
        with open(args.vectors) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                vec = np.asarray(record["vector"], dtype=float)
                if store is None:
                    store = EmbeddingStore(vec.shape[0], args.metric)
                store.add(str(record["id"]), vec)
        if store is None:
            raise ValueError("no vectors in input")
        save_store(store, args.output)
    except (GraphiclError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def load_corpus(path: str) -> list[Exemplar]:
    corpus = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            corpus.append(
                Exemplar(
                    str(raw["id"]),
                    raw["question"],
                    raw.get("rationale", ""),
                    str(raw.get("answer", "")),
                    tuple(raw.get("equations", ())),
                )
            )
    return corpus


def _train_config(cfg: dict, seed: int | None) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(cfg) - fields
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    if seed is not None:
        cfg = {**cfg, "seed": seed}
    return TrainConfig(**cfg)


def cmd_mine(args) -> int:
    try:
        corpus = load_corpus(args.corpus)
        cfg = _train_config(_load_json(args.config) if args.config else {}, args.seed)
        scorer = MockClient.from_jsonl(args.mock) if args.mock else _http_client(args)
        instances = build_train_set(corpus, cfg, scorer)
        save_instances(instances, args.output)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphiclError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        store = load_store(args.store)
        instances = load_instances(args.instances)
        cfg = _train_config(_load_json(args.config) if args.config else {}, args.seed)
        head = train_head(store, instances, cfg)
        cfg_hash = hashlib.sha256(repr(cfg).encode()).hexdigest()[:12]
        head.save(args.output, seed=cfg.seed, cfg_hash=cfg_hash)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphiclError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        try:
            cfg[key] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key] = value
    return cfg


_RUN_KEYS = {
    "dataset", "dataset_name", "corpus", "store", "mock", "endpoint",
    "embed_dim", "traces", "report", "limit",
    "initial_policy", "initial_n", "fixed_initial_ids", "m", "n",
    "query_field", "rerank_metric", "kernel", "kernel_iterations",
    "eps", "mix_alpha", "prompt_order", "flavor", "method",
}


def _pipeline_config(cfg: dict) -> PipelineConfig:
    kernel_kind = cfg.get("kernel", "wl")
    spec = KernelSpec(kernel_kind, int(cfg.get("kernel_iterations", DEFAULT_WL_ITERATIONS)))
    return PipelineConfig(
        initial_policy=cfg.get("initial_policy", "complex-cot-longest"),
        initial_n=int(cfg.get("initial_n", 8)),
        fixed_initial_ids=tuple(cfg.get("fixed_initial_ids", ())),
        m=int(cfg.get("m", 64)),
        n=int(cfg.get("n", 8)),
        query_field=cfg.get("query_field", "q"),
        rerank_metric=cfg.get("rerank_metric", "graph"),
        kernel=spec,
        eps=int(cfg.get("eps", 256)),
        mix_alpha=float(cfg.get("mix_alpha", 0.3)),
        prompt_order=cfg.get("prompt_order", "similar-last"),
        flavor=cfg.get("flavor", "math"),
        dataset=cfg.get("dataset_name", "gsm8k"),
    )


def _http_client(args) -> HttpClient:
    raise ConfigError("no mock script configured and no endpoint support in this command")


def _client_from_config(cfg: dict):
    if cfg.get("mock"):
        return MockClient.from_jsonl(cfg["mock"])
    endpoint_cfg = cfg.get("endpoint")
    if not endpoint_cfg:
        raise ConfigError("config needs either 'mock' or 'endpoint'")
    endpoint = LlmEndpoint(**endpoint_cfg)
    import os

    if os.environ.get(endpoint.api_key_var) is None:
        raise ConfigError(
            f"API key environment variable {endpoint.api_key_var} is not set"
        )
    return HttpClient(endpoint)


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(_load_json(args.config), args.override)
        unknown = set(cfg) - _RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        pcfg = _pipeline_config(cfg)
        client = _client_from_config(cfg)
        corpus = load_corpus(cfg["corpus"])
        records = load_dataset(cfg["dataset"])
        if cfg.get("limit"):
            records = records[: int(cfg["limit"])]
        embedder = hashing_embedder(int(cfg.get("embed_dim", 64)))
        store = load_store(cfg["store"]) if cfg.get("store") else None
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphiclError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    traces = []
    try:
        for record in records:
            traces.append(
                run_pipeline(
                    record.question,
                    corpus,
                    pcfg,
                    client,
                    embedder,
                    store=store,
                    question_id=record.record_id,
                    gold=record.gold,
                )
            )
    except (TransportError, RateLimited) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT

    traces_path = cfg.get("traces", "traces.jsonl")
    with open(traces_path, "w") as fh:
        for trace in traces:
            fh.write(trace.to_json() + "\n")
    rep = report(
        traces,
        cfg.get("dataset_name", "gsm8k"),
        records={r.record_id: r for r in records},
        method=cfg.get("method", pcfg.rerank_metric),
        config_hash=hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()
        ).hexdigest()[:12],
    )
    report_path = cfg.get("report")
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(rep.to_json() + "\n")
    sys.stdout.write(grid_table([rep]))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        reports = []
        for path in args.traces:
            with open(path) as fh:
                traces = [RunTrace.from_json(line) for line in fh if line.strip()]
            records = None
            if args.dataset:
                records = {r.record_id: r for r in load_dataset(args.dataset)}
            reports.append(
                report(traces, args.dataset_name, records=records, method=path)
            )
    except (GraphiclError, ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(grid_table(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphicl",
        description="Reasoning-graph exemplar selection toolkit",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build a reasoning graph from text")
    p.add_argument("--flavor", choices=["math", "deductive"], default="math")
    p.add_argument("--text")
    p.add_argument("--file")
    p.add_argument("--output", "-o")
    p.add_argument("--diagnose", action="store_true")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("kernel", help="kernel similarity of two graph files")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.add_argument("--kernel", choices=["wl", "sp"], default="wl")
    p.add_argument("--iters", type=int, default=DEFAULT_WL_ITERATIONS)
    p.add_argument("--raw", action="store_true")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("rerank", help="re-rank candidate graphs against a query graph")
    p.add_argument("--query-graph", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--kernel", choices=["wl", "sp"], default="wl")
    p.add_argument("--iters", type=int, default=DEFAULT_WL_ITERATIONS)
    p.add_argument("-n", type=int, default=0)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("index", help="build an embedding store from vector JSONL")
    p.add_argument("vectors")
    p.add_argument("--metric", choices=["ip", "cos"], default="ip")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("mine", help="build contrastive training instances")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--mock")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train the projection head")
    p.add_argument("--store", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--config")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the two-query pipeline over a dataset")
    p.add_argument("config")
    p.add_argument("--override", action="append", default=[])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="report accuracy from existing trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--dataset")
    p.add_argument("--dataset-name", default="gsm8k")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
