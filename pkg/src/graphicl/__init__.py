"""Exemplar selection for in-context learning with reasoning graphs."""

from .graphs import (
    ReasoningGraph,
    build_deductive_graph,
    build_math_graph,
    deserialize,
    diagnose,
    serialize,
)
from .kernels import KernelSpec, gram_matrix, sp_kernel, wl_kernel
from .parsing import (
    AnswerPattern,
    DeductiveStep,
    Equation,
    extract_answer,
    extract_equations,
    parse_deductive_trace,
    to_rpn,
    tokenize_expression,
)
from .pipeline import PipelineConfig, RunTrace, combined_similarity, run_pipeline
from .retrieval import (
    EmbeddingStore,
    ScoredCandidate,
    bm25_topk,
    dense_topm,
    fit_lowrank,
    rerank_graph,
    rerank_lowrank,
)
from .training import Exemplar, TrainConfig, TrainInstance, build_train_set, train_head

__version__ = "0.1.0"
