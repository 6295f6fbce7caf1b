"""End-to-end orchestration: first query, graph re-ranked retrieval, second query.

The flow: generate an initial chain-of-thought with heuristic exemplars,
turn it into a reasoning graph, pull the dense top-M candidates, re-rank
them by the configured metric (graph kernel, low-rank similarity, or none),
and compose the selected N exemplars into the final prompt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import graphs as G
from . import parsing
from .errors import GraphiclError, MissingSteps, NoAnswerFound
from .kernels import KernelSpec, sp_kernel
from .retrieval import (
    EmbeddingStore,
    ScoredCandidate,
    dense_topm,
    fit_lowrank,
    rerank_graph,
    rerank_lowrank,
)
from .training import Exemplar


def load_prompt(name: str) -> str:
    path = resources.files("graphicl.assets.prompts").joinpath(f"{name}.txt")
    return path.read_text()


@dataclass(frozen=True)
class PipelineConfig:
    initial_policy: str = "complex-cot-longest"  # or "fixed"
    initial_n: int = 8
    fixed_initial_ids: tuple[str, ...] = ()
    m: int = 64
    n: int = 8  # 4 for logic tasks
    query_field: str = "q"  # "q" | "qa"
    rerank_metric: str = "graph"  # "graph" | "lowrank" | "none"
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("wl"))
    eps: int = 256
    mix_alpha: float = 0.3
    prompt_order: str = "similar-last"  # "similar-last" | "similar-first"
    flavor: str = "math"  # "math" | "deductive"
    dataset: str = "gsm8k"

    def __post_init__(self):
        if self.n > self.m:
            raise ValueError(f"N={self.n} exceeds M={self.m}")
        if self.query_field not in ("q", "qa"):
            raise ValueError(f"bad query field {self.query_field!r}")
        if self.rerank_metric not in ("graph", "lowrank", "none"):
            raise ValueError(f"bad rerank metric {self.rerank_metric!r}")


@dataclass
class RunTrace:
    question_id: str
    question: str
    first_response: str = ""
    equations: list[str] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    query_graph: str = ""
    candidates: list[dict] = field(default_factory=list)
    selected: list[str] = field(default_factory=list)
    final_response: str = ""
    answer: str = ""
    gold: str = ""
    correct: bool | None = None
    errors: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "RunTrace":
        return cls(**json.loads(line))


# ---------------------------------------------------------------------------
# Prompt assembly and the first query
# ---------------------------------------------------------------------------


def render_exemplar(ex: Exemplar) -> str:
    template = load_prompt("manual_cot").rstrip("\n")
    return template.format(question=ex.question, rationale=ex.rationale)


def assemble_prompt(exemplars: list[Exemplar], question: str) -> str:
    parts = [render_exemplar(ex) for ex in exemplars]
    parts.append(f"Question: {question}\nA: Let's think step by step")
    return "\n\n".join(parts)


def rationale_steps(rationale: str) -> int:
    return len([l for l in rationale.splitlines() if l.strip()])


def pick_initial(corpus: list[Exemplar], cfg: PipelineConfig) -> list[Exemplar]:
    if cfg.initial_policy == "fixed":
        by_id = {ex.exemplar_id: ex for ex in corpus}
        return [by_id[i] for i in cfg.fixed_initial_ids]
    ranked = sorted(
        corpus, key=lambda ex: (-rationale_steps(ex.rationale), ex.exemplar_id)
    )
    return ranked[: cfg.initial_n]


def first_query(question: str, corpus: list[Exemplar], cfg: PipelineConfig, client) -> str:
    """Initial CoT from the most complex exemplars (most rationale steps)."""
    exemplars = pick_initial(corpus, cfg)
    return client.complete(assemble_prompt(exemplars, question))


# ---------------------------------------------------------------------------
# Graph extraction from responses
# ---------------------------------------------------------------------------


def response_graph(text: str, flavor: str) -> G.ReasoningGraph:
    """Reasoning graph of a response; empty graph when nothing extracts."""
    if flavor == "deductive":
        steps = parsing.parse_deductive_trace(text)
        try:
            return G.build_deductive_graph(steps)
        except GraphiclError:
            return G.ReasoningGraph((), (), G.DEDUCTIVE)
    equations = parsing.extract_equations(text)
    try:
        return G.build_math_graph(equations)
    except GraphiclError:
        return G.ReasoningGraph((), (), G.MATH)


def exemplar_graph(ex: Exemplar, flavor: str) -> G.ReasoningGraph:
    if ex.equations:
        eqs = []
        for raw in ex.equations:
            eq = parsing._parse_equation_string(raw)
            if eq is not None:
                eqs.append(eq)
        try:
            return G.build_math_graph(eqs)
        except GraphiclError:
            return G.ReasoningGraph((), (), G.MATH)
    return response_graph(ex.rationale, flavor)


# ---------------------------------------------------------------------------
# The full two-query run
# ---------------------------------------------------------------------------


def run_pipeline(
    question: str,
    corpus: list[Exemplar],
    cfg: PipelineConfig,
    client,
    embedder,
    store: EmbeddingStore | None = None,
    corpus_graphs: dict[str, G.ReasoningGraph] | None = None,
    question_id: str = "",
    gold: str = "",
    patterns: dict[str, parsing.AnswerPattern] | None = None,
) -> RunTrace:
    """Execute the two-query flow for one question, recording a full trace.

    Stage errors are recorded in the trace rather than raised so batch runs
    continue past individual failures.
    """
    trace = RunTrace(question_id=question_id, question=question, gold=gold)
    by_id = {ex.exemplar_id: ex for ex in corpus}
    try:
        trace.first_response = first_query(question, corpus, cfg, client)
    except Exception as exc:  # recorded, run continues in batch mode
        trace.errors.append({"stage": "first_query", "message": str(exc)})
        return trace

    query_graph = response_graph(trace.first_response, cfg.flavor)
    trace.query_graph = G.serialize(query_graph)
    if cfg.flavor == "math":
        trace.equations = [
            parsing.render_equation(e)
            for e in parsing.extract_equations(trace.first_response)
        ]
    else:
        trace.steps = [
            s.index for s in parsing.parse_deductive_trace(trace.first_response)
        ]

    if store is None:
        store = build_store(corpus, cfg, embedder)
    if corpus_graphs is None:
        corpus_graphs = {
            ex.exemplar_id: exemplar_graph(ex, cfg.flavor) for ex in corpus
        }

    query_text = question
    if cfg.query_field == "qa":
        query_text = question + "\n" + trace.first_response
    query_vec = np.asarray(embedder(query_text), dtype=float)

    try:
        candidates = dense_topm(query_vec, store, cfg.m)
        ranked = _rerank(candidates, query_vec, query_graph, corpus_graphs, store, cfg)
    except GraphiclError as exc:
        trace.errors.append({"stage": "retrieval", "message": str(exc)})
        return trace
    trace.candidates = [
        {
            "id": c.exemplar_id,
            "semantic": c.semantic_score,
            "structural": c.structural_score,
        }
        for c in candidates
    ]

    ordered = list(ranked)
    if cfg.prompt_order == "similar-last":
        ordered.reverse()
    trace.selected = [c.exemplar_id for c in ordered]

    prompt = assemble_prompt([by_id[i] for i in trace.selected], question)
    try:
        trace.final_response = client.complete(prompt)
    except Exception as exc:
        trace.errors.append({"stage": "second_query", "message": str(exc)})
        return trace

    pattern_map = patterns or parsing.load_answer_patterns()
    pattern = pattern_map.get(cfg.dataset)
    if pattern is not None and pattern.kind == "regex":
        try:
            trace.answer = parsing.extract_answer(trace.final_response, pattern)
        except NoAnswerFound as exc:
            trace.errors.append({"stage": "extract_answer", "message": str(exc)})
    if gold and trace.answer:
        trace.correct = _answers_match(trace.answer, gold)
    return trace


def _rerank(
    candidates: list[ScoredCandidate],
    query_vec: np.ndarray,
    query_graph: G.ReasoningGraph,
    corpus_graphs: dict[str, G.ReasoningGraph],
    store: EmbeddingStore,
    cfg: PipelineConfig,
) -> list[ScoredCandidate]:
    if cfg.rerank_metric == "none":
        return candidates[: cfg.n]
    if cfg.rerank_metric == "graph":
        return rerank_graph(candidates, query_graph, corpus_graphs, cfg.kernel, cfg.n)
    eps = min(cfg.eps, store.dimension, len(store))
    projector = fit_lowrank(store, eps)
    return rerank_lowrank(candidates, query_vec, store, projector, cfg.n)


def build_store(
    corpus: list[Exemplar], cfg: PipelineConfig, embedder
) -> EmbeddingStore:
    """Embed corpus entries over the configured query field."""
    store = None
    for ex in corpus:
        text = ex.question if cfg.query_field == "q" else ex.text
        vec = np.asarray(embedder(text), dtype=float)
        if store is None:
            store = EmbeddingStore(vec.shape[0])
        store.add(ex.exemplar_id, vec)
    if store is None:
        raise ValueError("empty corpus")
    return store


def _answers_match(answer: str, gold: str) -> bool:
    try:
        a = parsing.parse_number(answer)
        g = parsing.parse_number(gold)
        return abs(float(a - g)) <= 1e-4
    except ValueError:
        return answer.strip().lower() == gold.strip().lower()


# ---------------------------------------------------------------------------
# Combined graph + sentence-level similarity (commonsense variant)
# ---------------------------------------------------------------------------


@dataclass
class ComposedInstance:
    """A question or exemplar decomposed into steps with embeddings and a DAG."""

    steps: list[str]
    step_embeddings: np.ndarray  # (num_steps, dim), unit-norm rows expected
    graph: G.ReasoningGraph


def split_steps(text: str) -> list[str]:
    """Step segmentation: line breaks, falling back to sentence punctuation."""
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    if len(lines) > 1:
        return lines
    import re

    parts = [p.strip() for p in re.split(r"(?<=[.!?])\s+", text) if p.strip()]
    return parts


def combined_similarity(
    query: ComposedInstance, exemplar: ComposedInstance, alpha: float = 0.3
) -> float:
    """alpha * normalized SP kernel + (1 - alpha) * rescaled step similarity.

    Step similarity is the sum over query steps of the best inner product
    against exemplar steps, divided by the query step count.
    """
    if not query.steps or not exemplar.steps:
        raise MissingSteps("both sides need at least one step")
    graph_sim = sp_kernel(query.graph, exemplar.graph).normalized
    sims = np.asarray(query.step_embeddings) @ np.asarray(exemplar.step_embeddings).T
    sen_sim = float(sims.max(axis=1).sum()) / len(query.steps)
    return alpha * graph_sim + (1 - alpha) * sen_sim
