import numpy as np
import pytest

from graphicl.errors import MissingSteps
from graphicl.graphs import build_math_graph, deserialize
from graphicl.kernels import KernelSpec, sp_kernel, wl_kernel
from graphicl.llm import MockClient
from graphicl.parsing import extract_equations
from graphicl.pipeline import (
    ComposedInstance,
    PipelineConfig,
    RunTrace,
    assemble_prompt,
    combined_similarity,
    exemplar_graph,
    first_query,
    pick_initial,
    response_graph,
    run_pipeline,
    split_steps,
)
from graphicl.retrieval import dense_topm, hashing_embedder
from graphicl.training import Exemplar


def math_graph(text):
    return build_math_graph(extract_equations("Calculation equations: " + text))


class ScriptedClient:
    """Returns a canned response per trailing question; records prompts."""

    def __init__(self, by_question, default="The answer is 0."):
        self.by_question = by_question
        self.default = default
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        for question, response in self.by_question.items():
            if question in prompt.splitlines()[-2]:
                return response
        return self.default


PUNCHES_Q = (
    "On average Joe throws 25 punches per minute. A fight lasts 5 rounds of "
    "3 minutes. How many punches did he throw?"
)
PUNCHES_COT = (
    "The fight lasted 5*3=<<5*3=15>>15 minutes. "
    "He threw 25*15=<<25*15=375>>375 punches. The answer is 375."
)

# 10-exemplar toy corpus: five two-step multiplication chains and five others
CORPUS = [
    Exemplar("tony", "How much weight can Tony lift in the squat exercise?",
             "He can military press 2*90=180 pounds.\nHe can squat 5*180=900 pounds.\nThe answer is 900.",
             "900", ("2*90=180", "5*180=900")),
    Exemplar("mike", "How many pull-ups does Mike do a week?",
             "He does 5*2=10 pull-ups a day.\nSo he does 10*7=70 a week.\nThe answer is 70.",
             "70", ("5*2=10", "10*7=70")),
    Exemplar("pistachio", "How many pistachios have shells and an opened shell?",
             "Shells: 80*.95=76.\nOpened: 76*.75=57.\nThe answer is 57.",
             "57", ("80*.95=76", "76*.75=57")),
    Exemplar("juniors", "How many juniors are involved in sports?",
             "Juniors: 500*.40=200.\nIn sports: 200*.70=140.\nThe answer is 140.",
             "140", ("500*.40=200", "200*.70=140")),
    Exemplar("rocky", "How many knockouts did Rocky have in the first round?",
             "Knockouts: 190*.50=95.\nFirst round: 95*.2=19.\nThe answer is 19.",
             "19", ("190*.50=95", "95*.2=19")),
    Exemplar("sum", "How many apples are in the basket?",
             "There are 7+9=16 apples.\nThe answer is 16.",
             "16", ("7+9=16",)),
    Exemplar("race", "By how many minutes did he win the race?",
             "He beat the next guy by 23-20=3 minutes.\nThe answer is 3.",
             "3", ("23-20=3",)),
    Exemplar("traffic", "How long was the trip?",
             "Stuck for 5*2=10 hours.\nTrip took 10+5=15 hours.\nThe answer is 15.",
             "15", ("5*2=10", "10+5=15")),
    Exemplar("tennis", "How many games did Jeff win?",
             "He scores 120/5=24 points.\nHe won 24/8=3 games.\nThe answer is 3.",
             "3", ("120/5=24", "24/8=3")),
    Exemplar("riddle", "What walks on four legs in the morning?",
             "No computation needed here.\nThe answer is a person.",
             "person", ()),
]
MULT_CHAIN_IDS = {"tony", "mike", "pistachio", "juniors", "rocky"}


def punches_config(**overrides):
    params = dict(m=10, n=4, initial_n=2, dataset="gsm8k")
    params.update(overrides)
    return PipelineConfig(**params)


class TestFirstQuery:
    def test_longest_rationale_policy(self):
        corpus = [
            Exemplar("a", "qa", "l1\nl2"),
            Exemplar("b", "qb", "l1\nl2\nl3\nl4\nl5"),
            Exemplar("c", "qc", "l1\nl2\nl3"),
        ]
        cfg = PipelineConfig(initial_n=2, m=8, n=2)
        assert [e.exemplar_id for e in pick_initial(corpus, cfg)] == ["b", "c"]

    def test_fixed_policy_passthrough(self):
        corpus = [Exemplar(i, f"q{i}", "r") for i in "abc"]
        cfg = PipelineConfig(initial_policy="fixed", fixed_initial_ids=("c", "a"),
                             m=8, n=2)
        assert [e.exemplar_id for e in pick_initial(corpus, cfg)] == ["c", "a"]

    def test_scripted_client(self):
        client = ScriptedClient({PUNCHES_Q: PUNCHES_COT})
        out = first_query(PUNCHES_Q, CORPUS, punches_config(), client)
        assert out == PUNCHES_COT
        prompt = client.prompts[0]
        assert prompt.endswith(f"Question: {PUNCHES_Q}\nA: Let's think step by step")

    def test_mock_fallback_client(self):
        out = first_query(PUNCHES_Q, CORPUS, punches_config(), MockClient())
        assert out == "The answer is 0."


class TestResponseGraph:
    def test_math_response(self):
        g = response_graph(PUNCHES_COT, "math")
        expected = math_graph("5*3=15,25*15=375")
        assert {(n.kind, n.label) for n in g.nodes} == {
            (n.kind, n.label) for n in expected.nodes
        }

    def test_unparseable_gives_empty(self):
        g = response_graph("nothing to see", "math")
        assert len(g.nodes) == 0

    def test_exemplar_equations_preferred(self):
        ex = CORPUS[0]
        g = exemplar_graph(ex, "math")
        assert {n.label for n in g.nodes if n.kind == "OP"} == {"*"}
        assert len([n for n in g.nodes if n.kind == "OP"]) == 2


class TestRunPipeline:
    def run(self, cfg, client=None):
        client = client or ScriptedClient({PUNCHES_Q: PUNCHES_COT})
        return run_pipeline(
            PUNCHES_Q, CORPUS, cfg, client, hashing_embedder(64),
            question_id="punches", gold="375",
        )

    def test_none_rerank_equals_dense_topn(self):
        cfg = punches_config(rerank_metric="none", query_field="q",
                             prompt_order="similar-first")
        trace = self.run(cfg)
        embed = hashing_embedder(64)
        from graphicl.pipeline import build_store

        store = build_store(CORPUS, cfg, embed)
        dense = dense_topm(np.asarray(embed(PUNCHES_Q)), store, cfg.n)
        assert trace.selected == [c.exemplar_id for c in dense]

    def test_graph_rerank_selects_isomorphic_exemplar(self):
        twin = Exemplar("twin", "A twin problem about punches thrown.",
                        "step\nstep", "375", ("5*3=15", "25*15=375"))
        corpus = CORPUS + [twin]
        cfg = punches_config(m=11, n=1, prompt_order="similar-first")
        client = ScriptedClient({PUNCHES_Q: PUNCHES_COT})
        trace = run_pipeline(PUNCHES_Q, corpus, cfg, client, hashing_embedder(64))
        assert trace.selected == ["twin"]

    def test_punches_toy_corpus_prefers_multiplication_chains(self):
        cfg = punches_config(prompt_order="similar-first")
        trace = self.run(cfg)
        assert len(trace.selected) == 4
        assert set(trace.selected) <= MULT_CHAIN_IDS
        # oracle: the WL kernel ranks every chained-multiplication exemplar
        # above every other exemplar for this query graph
        qg = deserialize(trace.query_graph)
        scores = {
            ex.exemplar_id: wl_kernel(qg, exemplar_graph(ex, "math")).normalized
            for ex in CORPUS
        }
        assert min(scores[i] for i in MULT_CHAIN_IDS) > max(
            scores[i] for i in set(scores) - MULT_CHAIN_IDS
        )

    def test_prompt_order_switch(self):
        first = self.run(punches_config(prompt_order="similar-first")).selected
        last = self.run(punches_config(prompt_order="similar-last")).selected
        assert last == first[::-1]

    def test_selected_subset_of_candidates(self):
        trace = self.run(punches_config())
        candidate_ids = {c["id"] for c in trace.candidates}
        assert set(trace.selected) <= candidate_ids
        assert len(trace.selected) == 4

    def test_trace_answer_and_correctness(self):
        final = "Two steps: 5*3=15 then 25*15=375. The answer is 375."
        client = ScriptedClient({PUNCHES_Q: PUNCHES_COT}, default=final)

        class TwoPhase:
            def __init__(self):
                self.n = 0

            def complete(self, prompt):
                self.n += 1
                return PUNCHES_COT if self.n == 1 else final

        trace = self.run(punches_config(), client=TwoPhase())
        assert trace.answer == "375"
        assert trace.correct is True
        assert trace.equations == ["5*3=15", "25*15=375"]

    def test_reproducible_trace_serialization(self):
        a = self.run(punches_config()).to_json()
        b = self.run(punches_config()).to_json()
        assert a == b
        assert RunTrace.from_json(a).to_json() == a

    def test_first_query_error_recorded(self):
        class Failing:
            def complete(self, prompt):
                raise RuntimeError("endpoint down")

        trace = self.run(punches_config(), client=Failing())
        assert trace.errors == [
            {"stage": "first_query", "message": "endpoint down"}
        ]
        assert trace.selected == []

    def test_qa_field_uses_first_response(self):
        seen = []

        def spy_embedder(text):
            seen.append(text)
            return hashing_embedder(64)(text)

        cfg = punches_config(query_field="qa")
        client = ScriptedClient({PUNCHES_Q: PUNCHES_COT})
        run_pipeline(PUNCHES_Q, CORPUS, cfg, client, spy_embedder)
        assert any(PUNCHES_COT in t and PUNCHES_Q in t for t in seen)

    def test_lowrank_rerank_runs(self):
        cfg = punches_config(rerank_metric="lowrank", eps=256)
        trace = self.run(cfg)
        assert len(trace.selected) == 4 and not trace.errors


class TestConfigValidation:
    def test_n_exceeds_m(self):
        with pytest.raises(ValueError):
            PipelineConfig(m=4, n=8)

    def test_bad_fields(self):
        with pytest.raises(ValueError):
            PipelineConfig(query_field="question")
        with pytest.raises(ValueError):
            PipelineConfig(rerank_metric="fancy")

    def test_defaults(self):
        cfg = PipelineConfig()
        assert (cfg.m, cfg.n, cfg.eps, cfg.mix_alpha) == (64, 8, 256, 0.3)
        assert cfg.kernel.iterations == 3


class TestAssemblePrompt:
    def test_layout(self):
        prompt = assemble_prompt([CORPUS[5]], "How many now?")
        assert prompt == (
            "Question: How many apples are in the basket?\n"
            "A: Let's think step by step There are 7+9=16 apples.\n"
            "The answer is 16.\n\n"
            "Question: How many now?\nA: Let's think step by step"
        )


def composed(texts, graph, dim=8):
    embed = hashing_embedder(dim)
    vecs = np.stack([embed(t) for t in texts])
    return ComposedInstance(list(texts), vecs, graph)


class TestCombinedSimilarity:
    def make_pair(self):
        steps = "\n".join(f"#{i}. premise {i}." for i in range(1, 4))
        steps2 = "#1. premise 1.\n#2. premise 2.\n#3. (by #1 #2)derived."
        from graphicl.graphs import build_deductive_graph
        from graphicl.parsing import parse_deductive_trace

        g1 = build_deductive_graph(parse_deductive_trace(steps))
        g2 = build_deductive_graph(parse_deductive_trace(steps2))
        q = composed(["find the total", "count the items"], g1)
        e = composed(["count the items", "sum everything up"], g2)
        return q, e, g1, g2

    def test_alpha_one_is_pure_graph(self):
        q, e, g1, g2 = self.make_pair()
        assert combined_similarity(q, e, alpha=1.0) == pytest.approx(
            sp_kernel(g1, g2).normalized
        )

    def test_alpha_zero_identical_steps(self):
        q, e, g1, g2 = self.make_pair()
        same = composed(q.steps, g2)
        assert combined_similarity(q, same, alpha=0.0) == pytest.approx(1.0)

    def test_mix_arithmetic(self):
        g = math_graph("1+2=3")
        q = ComposedInstance(["s"], np.array([[1.0, 0.0]]), g)
        e = ComposedInstance(["s"], np.array([[1.0, 0.0]]), g)
        # graph sim 1.0, sen sim 1.0 -> any alpha gives 1.0
        assert combined_similarity(q, e, 0.3) == pytest.approx(1.0)
        # force graph sim 0.5 by scaling components directly
        value = 0.3 * 0.5 + 0.7 * 1.0
        assert value == pytest.approx(0.85)

    def test_missing_steps(self):
        g = math_graph("1+2=3")
        full = ComposedInstance(["s"], np.array([[1.0]]), g)
        hollow = ComposedInstance([], np.zeros((0, 1)), g)
        with pytest.raises(MissingSteps):
            combined_similarity(full, hollow)

    def test_monotone_in_sen_sim(self):
        g = math_graph("1+2=3")
        q = ComposedInstance(["s"], np.array([[1.0, 0.0]]), g)
        closer = ComposedInstance(["s"], np.array([[0.9, np.sqrt(1 - 0.81)]]), g)
        farther = ComposedInstance(["s"], np.array([[0.2, np.sqrt(1 - 0.04)]]), g)
        assert combined_similarity(q, closer, 0.3) > combined_similarity(q, farther, 0.3)


def test_split_steps():
    assert split_steps("a\nb\nc") == ["a", "b", "c"]
    assert split_steps("First do this. Then do that! Done?") == [
        "First do this.", "Then do that!", "Done?",
    ]
