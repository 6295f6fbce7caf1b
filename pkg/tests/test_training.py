import math

import numpy as np
import pytest

from graphicl.errors import CorpusTooSmall
from graphicl.retrieval import EmbeddingStore
from graphicl.training import (
    Exemplar,
    ProjectionHead,
    TrainConfig,
    TrainInstance,
    build_train_set,
    contrastive_loss,
    init_head,
    load_instances,
    save_instances,
    score_candidates,
    similarity_margin,
    train_head,
)


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


class EditDistanceScorer:
    """Mock scorer: single pseudo-token whose logprob is -edit_distance."""

    def __init__(self, anchor_rationale=None):
        self.calls = []

    def score_continuation(self, context, continuation):
        self.calls.append((context, continuation))
        cand = context.split("\nA: ")[1].split("\n\n")[0]
        return [-float(edit_distance(cand, continuation))]


class FixedScorer:
    def __init__(self, scores):
        self.scores = scores

    def score_continuation(self, context, continuation):
        cand = context.split("\nA: ")[1].split("\n\n")[0]
        return [self.scores[cand]]


def ex(i, question, rationale="", answer=""):
    return Exemplar(f"e{i:02d}", question, rationale, answer)


class TestScoreCandidates:
    def test_identical_candidate_scores_highest(self):
        anchor = ex(0, "q", "add three and four to get seven")
        cands = [
            ex(1, "q1", "add three and four to get seven"),
            ex(2, "q2", "multiply five by nine"),
            ex(3, "q3", "add three and four to get eight"),
        ]
        scored = score_candidates(anchor, cands, EditDistanceScorer())
        assert scored[0][0].exemplar_id == "e01"
        assert scored[0][1] == 0.0

    def test_sort_contract(self):
        anchor = ex(0, "q", "r")
        cands = [ex(1, "q1", "a"), ex(2, "q2", "b")]
        scored = score_candidates(anchor, cands, FixedScorer({"a": -2.0, "b": -1.0}))
        assert [(c.exemplar_id, s) for c, s in scored] == [("e02", -1.0), ("e01", -2.0)]

    def test_shape_and_descending(self):
        anchor = ex(0, "q", "target")
        cands = [ex(i, f"q{i}", "x" * (i % 7)) for i in range(1, 65)]
        scored = score_candidates(anchor, cands, EditDistanceScorer())
        assert len(scored) == 64
        values = [s for _, s in scored]
        assert values == sorted(values, reverse=True)

    def test_length_normalization(self):
        class TwoTokenScorer:
            def score_continuation(self, context, continuation):
                return [-1.0, -3.0]

        anchor = ex(0, "q", "r")
        raw = score_candidates(anchor, [ex(1, "q1", "a")], TwoTokenScorer())
        norm = score_candidates(
            anchor, [ex(1, "q1", "a")], TwoTokenScorer(), length_normalized=True
        )
        assert raw[0][1] == -4.0 and norm[0][1] == -2.0


class TestBuildTrainSet:
    def corpus(self):
        topics = ["apples in the basket", "speed of the train",
                  "apples on the tree", "length of the train"]
        return [
            ex(i, f"count {topics[i % 4]} number {i}", f"reasoning {i}", str(i % 2))
            for i in range(10)
        ]

    def test_shapes(self):
        cfg = TrainConfig(k=4, t=1, epochs=0)
        instances = build_train_set(self.corpus(), cfg, EditDistanceScorer())
        assert len(instances) == 10
        for inst in instances:
            assert len(inst.positives) == 1 and len(inst.negatives) == 1

    def test_anchor_excluded_and_disjoint(self):
        cfg = TrainConfig(k=6, t=2, epochs=0)
        for inst in build_train_set(self.corpus(), cfg, EditDistanceScorer()):
            pool = set(inst.positives) | set(inst.negatives)
            assert inst.anchor_id not in pool
            assert not (set(inst.positives) & set(inst.negatives))

    def test_corpus_too_small(self):
        with pytest.raises(CorpusTooSmall):
            build_train_set(self.corpus(), TrainConfig(k=32), EditDistanceScorer())

    def test_answer_favoring_scorer_selects_same_answer_positives(self):
        corpus = [
            ex(0, "shared words alpha beta", "same", "7"),
            ex(1, "shared words alpha gamma", "same", "7"),
            ex(2, "shared words alpha delta", "other", "3"),
            ex(3, "shared words beta gamma", "same", "7"),
            ex(4, "shared words beta delta", "other", "3"),
            ex(5, "unrelated zeta", "other", "3"),
        ]
        scorer = FixedScorer({"same": 0.0, "other": -5.0})
        cfg = TrainConfig(k=4, t=2, epochs=0)
        instances = build_train_set(corpus, cfg, scorer)
        by_id = {e.exemplar_id: e for e in corpus}
        anchor = instances[0]
        assert all(by_id[p].answer == "7" for p in anchor.positives)
        assert all(by_id[n].answer == "3" for n in anchor.negatives)


def test_instance_file_roundtrip(tmp_path):
    instances = [
        TrainInstance("a1", ("p1", "p2"), ("n1", "n2")),
        TrainInstance("a2", ("p3",), ("n3",)),
    ]
    path = str(tmp_path / "instances.txt")
    save_instances(instances, path)
    assert load_instances(path) == instances
    first = open(path).readline()
    assert first == "a1 | pos: p1,p2 | neg: n1,n2\n"


# ---------------------------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------------------------


def oracle_loss(weight, anchors, positives, negatives):
    """Scalar-loop restatement of the batch loss."""
    b = len(anchors)
    za = [weight @ a for a in anchors]
    zp = [weight @ p for p in positives]
    zn = [weight @ n for n in negatives]
    total = 0.0
    for i in range(b):
        denom = sum(math.exp(float(za[i] @ zp[j])) for j in range(b))
        denom += sum(math.exp(float(za[i] @ zn[j])) for j in range(b))
        total += -math.log(math.exp(float(za[i] @ zp[i])) / denom)
    return total


def random_batch(rng, b, dim, out_dim):
    weight = rng.normal(scale=0.3, size=(out_dim, dim))
    return (
        weight,
        rng.normal(scale=0.5, size=(b, dim)),
        rng.normal(scale=0.5, size=(b, dim)),
        rng.normal(scale=0.5, size=(b, dim)),
    )


class TestContrastiveLoss:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            weight, a, p, n = random_batch(rng, 4, 5, 3)
            loss, _, _ = contrastive_loss(weight, a, p, n)
            assert loss == pytest.approx(oracle_loss(weight, a, p, n), rel=1e-10)

    def test_denominator_has_2b_terms(self):
        rng = np.random.default_rng(3)
        for b in (1, 2, 16):
            weight, a, p, n = random_batch(rng, b, 4, 4)
            _, _, terms = contrastive_loss(weight, a, p, n)
            assert terms == 2 * b

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            weight, a, p, n = random_batch(rng, 3, 4, 3)
            _, grad, _ = contrastive_loss(weight, a, p, n)
            fd = np.zeros_like(weight)
            h = 1e-6
            for i in range(weight.shape[0]):
                for j in range(weight.shape[1]):
                    w1, w2 = weight.copy(), weight.copy()
                    w1[i, j] += h
                    w2[i, j] -= h
                    fd[i, j] = (
                        contrastive_loss(w1, a, p, n)[0]
                        - contrastive_loss(w2, a, p, n)[0]
                    ) / (2 * h)
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-7)

    def test_anchor_permutation_invariance(self):
        rng = np.random.default_rng(7)
        weight, a, p, n = random_batch(rng, 5, 4, 4)
        loss, _, _ = contrastive_loss(weight, a, p, n)
        perm = rng.permutation(5)
        loss_p, _, _ = contrastive_loss(weight, a[perm], p[perm], n[perm])
        assert loss == pytest.approx(loss_p, rel=1e-12)

    def test_large_logit_stability(self):
        weight = np.eye(3) * 40.0
        a = np.ones((2, 3))
        loss, grad, _ = contrastive_loss(weight, a, a, -a)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def cluster_fixture(seed=0, per_cluster=12, dim=6):
    rng = np.random.default_rng(seed)
    centers = {"a": np.zeros(dim), "b": np.zeros(dim)}
    centers["a"][0] = 2.0
    centers["b"][1] = 2.0
    store = EmbeddingStore(dim)
    ids = {"a": [], "b": []}
    for label, center in centers.items():
        for i in range(per_cluster):
            eid = f"{label}{i:02d}"
            store.add(eid, center + rng.normal(scale=0.2, size=dim))
            ids[label].append(eid)
    instances = []
    for label, other in (("a", "b"), ("b", "a")):
        for i, eid in enumerate(ids[label]):
            pos = tuple(x for x in ids[label] if x != eid)[:4]
            neg = tuple(ids[other][:4])
            instances.append(TrainInstance(eid, pos, neg))
    return store, instances


class TestTrainHead:
    def test_zero_epochs_equals_init(self):
        store, instances = cluster_fixture()
        cfg = TrainConfig(epochs=0, seed=9)
        head = train_head(store, instances, cfg)
        assert np.array_equal(head.weight, init_head(6, None, 9).weight)

    def test_bit_reproducible(self):
        store, instances = cluster_fixture()
        cfg = TrainConfig(epochs=5, batch_anchors=8, seed=13)
        w1 = train_head(store, instances, cfg).weight
        w2 = train_head(store, instances, cfg).weight
        assert np.array_equal(w1, w2)

    def test_seed_changes_result(self):
        store, instances = cluster_fixture()
        w1 = train_head(store, instances, TrainConfig(epochs=3, seed=1)).weight
        w2 = train_head(store, instances, TrainConfig(epochs=3, seed=2)).weight
        assert not np.array_equal(w1, w2)

    def test_margin_improves_on_clusters(self):
        store, instances = cluster_fixture()
        cfg = TrainConfig(epochs=40, batch_anchors=8, learning_rate=1e-2, seed=0)
        before = similarity_margin(init_head(6, None, 0), store, instances)
        after = similarity_margin(train_head(store, instances, cfg), store, instances)
        assert after > before

    def test_first_batch_loss_decreases(self):
        store, instances = cluster_fixture()
        rng = np.random.default_rng(0)
        batch = instances[:8]
        anchors = np.stack([store.vector(i.anchor_id) for i in batch])
        positives = np.stack([store.vector(i.positives[0]) for i in batch])
        negatives = np.stack([store.vector(i.negatives[0]) for i in batch])
        head = init_head(6, None, 0)
        losses = []
        m = np.zeros_like(head.weight)
        v = np.zeros_like(head.weight)
        for step in range(1, 11):
            loss, grad, _ = contrastive_loss(head.weight, anchors, positives, negatives)
            losses.append(loss)
            m = 0.9 * m + 0.1 * grad
            v = 0.999 * v + 0.001 * grad**2
            head.weight = head.weight - 1e-2 * (m / (1 - 0.9**step)) / (
                np.sqrt(v / (1 - 0.999**step)) + 1e-8
            )
        assert losses[-1] < losses[0]

    def test_out_dim_head(self):
        store, instances = cluster_fixture()
        cfg = TrainConfig(epochs=2, out_dim=3, seed=0)
        head = train_head(store, instances, cfg)
        assert head.weight.shape == (3, 6)
        assert head.project(np.ones(6)).shape == (3,)


def test_head_checkpoint_roundtrip(tmp_path):
    head = init_head(5, 3, seed=21)
    path = str(tmp_path / "head.bin")
    head.save(path, seed=21, cfg_hash="abc123")
    loaded = ProjectionHead.load(path)
    assert np.array_equal(loaded.weight, head.weight)
    header = open(path, "rb").readline().decode()
    assert header == "head out=3 in=5 seed=21 cfg=abc123\n"


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.k, cfg.t, cfg.batch_anchors, cfg.epochs) == (64, 4, 16, 250)
    assert cfg.learning_rate == 1e-3
