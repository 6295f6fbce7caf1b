"""Retriever training: LM-scored data construction and a contrastive head.

Candidates are mined with BM25, scored by the log-probability of the anchor's
rationale under the LM given the candidate, and split into top/bottom-t
positives and negatives. A linear projection head over frozen base
embeddings is then trained with an in-batch contrastive loss whose
denominator holds one positive and one negative term per batch anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusTooSmall, NonFiniteLoss
from .retrieval import EmbeddingStore, bm25_topk


@dataclass(frozen=True)
class Exemplar:
    exemplar_id: str
    question: str
    rationale: str = ""
    answer: str = ""
    equations: tuple[str, ...] = ()

    @property
    def text(self) -> str:
        return f"{self.question}\n{self.rationale}".strip()


@dataclass(frozen=True)
class TrainInstance:
    anchor_id: str
    positives: tuple[str, ...]
    negatives: tuple[str, ...]


@dataclass(frozen=True)
class TrainConfig:
    k: int = 64  # BM25 candidate count
    t: int = 4  # positives/negatives per anchor
    batch_anchors: int = 16
    learning_rate: float = 1e-3  # head-scale default; 1e-6 matches encoder training
    epochs: int = 250
    seed: int = 0
    length_normalized: bool = False
    out_dim: int | None = None


# ---------------------------------------------------------------------------
# Data construction
# ---------------------------------------------------------------------------


def score_candidates(
    anchor: Exemplar,
    candidates: list[Exemplar],
    scorer,
    length_normalized: bool = False,
) -> list[tuple[Exemplar, float]]:
    """Score candidates by the LM log-probability of the anchor rationale.

    The prompt is the candidate demonstration followed by the anchor
    question; the score is the summed token log-probability of the anchor's
    rationale (mean when length-normalized).
    """
    scored = []
    for cand in candidates:
        context = (
            f"Question: {cand.question}\nA: {cand.rationale}\n\n"
            f"Question: {anchor.question}\nA: "
        )
        logprobs = scorer.score_continuation(context, anchor.rationale)
        total = float(sum(logprobs))
        if logprobs and length_normalized:
            total /= len(logprobs)
        scored.append((cand, total))
    scored.sort(key=lambda cs: (-cs[1], cs[0].exemplar_id))
    return scored


def build_train_set(
    corpus: list[Exemplar], cfg: TrainConfig, scorer
) -> list[TrainInstance]:
    """Per anchor: BM25 top-k (anchor excluded), then top/bottom-t split."""
    if len(corpus) < cfg.k + 1:
        raise CorpusTooSmall(f"need >= {cfg.k + 1} exemplars, have {len(corpus)}")
    docs = [ex.question for ex in corpus]
    instances = []
    for i, anchor in enumerate(corpus):
        ranked = bm25_topk(anchor.question, docs, cfg.k + 1)
        candidate_idx = [j for j in ranked if j != i][: cfg.k]
        scored = score_candidates(
            anchor,
            [corpus[j] for j in candidate_idx],
            scorer,
            length_normalized=cfg.length_normalized,
        )
        positives = tuple(c.exemplar_id for c, _ in scored[: cfg.t])
        negatives = tuple(c.exemplar_id for c, _ in scored[-cfg.t :])
        instances.append(TrainInstance(anchor.exemplar_id, positives, negatives))
    return instances


def save_instances(instances: list[TrainInstance], path: str) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(
                f"{inst.anchor_id} | pos: {','.join(inst.positives)}"
                f" | neg: {','.join(inst.negatives)}\n"
            )


def load_instances(path: str) -> list[TrainInstance]:
    instances = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            anchor, pos, neg = line.split(" | ")
            instances.append(
                TrainInstance(
                    anchor,
                    tuple(x for x in pos[len("pos: ") :].split(",") if x),
                    tuple(x for x in neg[len("neg: ") :].split(",") if x),
                )
            )
    return instances


# ---------------------------------------------------------------------------
# Projection head and contrastive loss
# ---------------------------------------------------------------------------


@dataclass
class ProjectionHead:
    weight: np.ndarray  # (out_dim, in_dim)

    def project(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.weight.T

    def save(self, path: str, seed: int = 0, cfg_hash: str = "") -> None:
        out_dim, in_dim = self.weight.shape
        with open(path, "wb") as fh:
            fh.write(f"head out={out_dim} in={in_dim} seed={seed} cfg={cfg_hash}\n".encode())
            fh.write(np.ascontiguousarray(self.weight, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "ProjectionHead":
        with open(path, "rb") as fh:
            header = b""
            while not header.endswith(b"\n"):
                header += fh.read(1)
            fields = dict(p.split("=") for p in header.decode().split()[1:])
            out_dim, in_dim = int(fields["out"]), int(fields["in"])
            data = np.frombuffer(fh.read(8 * out_dim * in_dim), dtype="<f8")
        return cls(data.reshape(out_dim, in_dim).copy())


def init_head(in_dim: int, out_dim: int | None, seed: int) -> ProjectionHead:
    """Identity-padded init plus small seeded noise, near base geometry."""
    out_dim = out_dim or in_dim
    rng = np.random.default_rng(seed)
    weight = np.zeros((out_dim, in_dim))
    for i in range(min(out_dim, in_dim)):
        weight[i, i] = 1.0
    weight += rng.uniform(-0.01, 0.01, size=weight.shape)
    return ProjectionHead(weight)


def contrastive_loss(
    weight: np.ndarray,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
) -> tuple[float, np.ndarray, int]:
    """In-batch contrastive loss, its gradient, and the denominator term count.

    For anchor i: -log exp(s(x_i, e_i+)) / (sum_j exp(s(x_i, e_j+)) +
    sum_j exp(s(x_i, e_j-))) with s the inner product of projected
    embeddings; the denominator has exactly 2b terms for b batch anchors.
    """
    b = anchors.shape[0]
    za = anchors @ weight.T
    zp = positives @ weight.T
    zn = negatives @ weight.T
    sims_p = za @ zp.T  # (b, b): s(x_i, e_j+)
    sims_n = za @ zn.T
    logits = np.concatenate([sims_p, sims_n], axis=1)  # (b, 2b)
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    denom = exp.sum(axis=1, keepdims=True)
    losses = -(np.diag(sims_p) - shift[:, 0] - np.log(denom[:, 0]))
    loss = float(losses.sum())

    # d s(a, e) / dW = W (a e^T + e a^T); accumulate softmax-weighted terms
    probs = exp / denom  # (b, 2b)
    pos_w = probs[:, :b].copy()
    neg_w = probs[:, b:]
    pos_w[np.arange(b), np.arange(b)] -= 1.0
    # sum_ij w_ij (a_i e_j^T + e_j a_i^T) assembled via matrix products
    ae_pos = anchors.T @ (pos_w @ positives)
    ae_neg = anchors.T @ (neg_w @ negatives)
    cross = ae_pos + ae_neg
    grad = weight @ (cross + cross.T)
    return loss, grad, logits.shape[1]


def train_head(
    base: EmbeddingStore, instances: list[TrainInstance], cfg: TrainConfig
) -> ProjectionHead:
    """Train the projection head with Adam under a fixed seed.

    Each anchor's positive/negative for a batch is drawn from its top/bottom
    lists by the seeded RNG; batches are formed deterministically per epoch.
    """
    head = init_head(base.dimension, cfg.out_dim, cfg.seed)
    if not instances or cfg.epochs <= 0:
        return head
    rng = np.random.default_rng(cfg.seed)
    m = np.zeros_like(head.weight)
    v = np.zeros_like(head.weight)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    order = np.arange(len(instances))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_anchors):
            batch = [instances[i] for i in order[start : start + cfg.batch_anchors]]
            anchors = np.stack([base.vector(inst.anchor_id) for inst in batch])
            positives = np.stack(
                [base.vector(inst.positives[rng.integers(len(inst.positives))]) for inst in batch]
            )
            negatives = np.stack(
                [base.vector(inst.negatives[rng.integers(len(inst.negatives))]) for inst in batch]
            )
            loss, grad, _ = contrastive_loss(head.weight, anchors, positives, negatives)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(
                    f"non-finite loss at step {step}: loss={loss}, "
                    f"|grad|={np.abs(grad).max()}"
                )
            step += 1
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad**2
            m_hat = m / (1 - beta1**step)
            v_hat = v / (1 - beta2**step)
            head.weight = head.weight - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return head


def similarity_margin(
    head: ProjectionHead, base: EmbeddingStore, instances: list[TrainInstance]
) -> float:
    """Mean sim(anchor, positive) minus mean sim(anchor, negative)."""
    pos_vals, neg_vals = [], []
    for inst in instances:
        za = head.project(base.vector(inst.anchor_id))
        for pid in inst.positives:
            pos_vals.append(float(za @ head.project(base.vector(pid))))
        for nid in inst.negatives:
            neg_vals.append(float(za @ head.project(base.vector(nid))))
    return float(np.mean(pos_vals) - np.mean(neg_vals))
