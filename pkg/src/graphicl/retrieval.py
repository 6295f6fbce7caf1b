"""Dense and lexical retrieval plus the re-ranking metrics.

Exact top-M inner-product/cosine search over an in-memory embedding store,
Okapi BM25 candidate mining, graph-kernel re-ranking, and the PCA-based
low-rank similarity used as the re-ranking ablation counterpart.
"""

from __future__ import annotations

import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, FlavorMismatch, InsufficientData
from .graphs import ReasoningGraph
from .kernels import KernelSpec, kernel

# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"\w+")


def _tokenize_doc(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def bm25_topk(
    query: str,
    corpus: list[str],
    k: int,
    k1: float = 1.5,
    b: float = 0.75,
) -> list[int]:
    """Okapi BM25 top-k document indices; ties broken by ascending index."""
    scores = bm25_scores(query, corpus, k1=k1, b=b)
    ranked = sorted(range(len(corpus)), key=lambda i: (-scores[i], i))
    return ranked[:k]


def bm25_scores(
    query: str, corpus: list[str], k1: float = 1.5, b: float = 0.75
) -> list[float]:
    if not corpus:
        raise ValueError("empty corpus")
    docs = [_tokenize_doc(d) for d in corpus]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    tfs = [Counter(d) for d in docs]
    df: Counter = Counter()
    for tf in tfs:
        df.update(tf.keys())
    terms = _tokenize_doc(query)
    if not terms:
        return [0.0] * n
    scores = []
    for tf, doc in zip(tfs, docs):
        norm = k1 * (1 - b + b * len(doc) / avgdl) if avgdl else k1
        s = 0.0
        for t in terms:
            f = tf.get(t, 0)
            if not f:
                continue
            idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
            s += idf * f * (k1 + 1) / (f + norm)
        scores.append(s)
    return scores


# ---------------------------------------------------------------------------
# Embedding store
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingStore:
    dimension: int
    metric: str = "ip"  # "ip" | "cos"
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, entry_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dimension,):
            raise DimensionMismatch(
                f"vector for {entry_id!r} has shape {vector.shape}, "
                f"store dimension is {self.dimension}"
            )
        self.entries[entry_id] = vector

    def __len__(self):
        return len(self.entries)

    def vector(self, entry_id: str) -> np.ndarray:
        return self.entries[entry_id]

    def score(self, query: np.ndarray, vector: np.ndarray) -> float:
        if self.metric == "cos":
            qn = np.linalg.norm(query)
            vn = np.linalg.norm(vector)
            if qn == 0.0 or vn == 0.0:
                return 0.0
            return float(query @ vector / (qn * vn))
        return float(query @ vector)


@dataclass
class ScoredCandidate:
    exemplar_id: str
    semantic_score: float
    structural_score: float | None = None
    final_rank: int = 0


def dense_topm(
    query_vector: np.ndarray, store: EmbeddingStore, m: int
) -> list[ScoredCandidate]:
    """Exact top-m by the store metric; deterministic tie-break by id."""
    query_vector = np.asarray(query_vector, dtype=float)
    if query_vector.shape != (store.dimension,):
        raise DimensionMismatch(
            f"query has shape {query_vector.shape}, store dimension is {store.dimension}"
        )
    scored = [
        (store.score(query_vector, vec), entry_id)
        for entry_id, vec in store.entries.items()
    ]
    scored.sort(key=lambda sv: (-sv[0], sv[1]))
    return [
        ScoredCandidate(entry_id, score, final_rank=rank)
        for rank, (score, entry_id) in enumerate(scored[:m], start=1)
    ]


# ---------------------------------------------------------------------------
# Graph-kernel re-ranking
# ---------------------------------------------------------------------------


def rerank_graph(
    candidates: list[ScoredCandidate],
    query_graph: ReasoningGraph,
    graphs: dict[str, ReasoningGraph],
    spec: KernelSpec,
    n: int,
) -> list[ScoredCandidate]:
    """Re-rank candidates by normalized kernel similarity to the query graph.

    Ties (including the all-empty-graph case) fall back to the incoming
    semantic rank, so a structureless query preserves the dense order.
    Most similar first; prompt ordering is applied by the pipeline.
    """
    spec = replace(spec, normalized=True)
    scored = []
    for pos, cand in enumerate(candidates):
        value = kernel(query_graph, graphs[cand.exemplar_id], spec)
        scored.append((value, pos, cand))
    scored.sort(key=lambda t: (-t[0], t[1]))
    out = []
    for rank, (value, _, cand) in enumerate(scored[:n], start=1):
        out.append(
            ScoredCandidate(cand.exemplar_id, cand.semantic_score, value, rank)
        )
    return out


# ---------------------------------------------------------------------------
# Low-rank (PCA) similarity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowRankProjector:
    mean: np.ndarray
    axes: np.ndarray  # (dimension, eps), orthonormal columns
    eigenvalues: np.ndarray  # top-eps, descending

    @property
    def eps(self) -> int:
        return self.axes.shape[1]

    def project(self, vector: np.ndarray) -> np.ndarray:
        """Coordinates along the principal axes.

        Uncentered so that eps == dimension is an exact isometry and
        inner-product rankings are reproduced bit-for-bit.
        """
        return np.asarray(vector, dtype=float) @ self.axes

    def reconstruct(self, vector: np.ndarray) -> np.ndarray:
        centered = np.asarray(vector, dtype=float) - self.mean
        return self.mean + self.axes @ (self.axes.T @ centered)


def fit_lowrank(store: EmbeddingStore, eps: int) -> LowRankProjector:
    """Principal axes of the store's covariance, top-eps by eigenvalue."""
    if len(store) < eps:
        raise InsufficientData(f"{len(store)} entries < eps={eps}")
    if eps < 1 or eps > store.dimension:
        raise ValueError(f"eps must be in [1, {store.dimension}]")
    data = np.stack(list(store.entries.values()))
    mean = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, bias=False)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:eps]
    return LowRankProjector(mean, eigvecs[:, order], eigvals[order])


def rerank_lowrank(
    candidates: list[ScoredCandidate],
    query_vector: np.ndarray,
    store: EmbeddingStore,
    projector: LowRankProjector,
    n: int,
) -> list[ScoredCandidate]:
    """Re-rank by inner product in the projected space; same tie-break."""
    query_vector = np.asarray(query_vector, dtype=float)
    if query_vector.shape != (projector.axes.shape[0],):
        raise DimensionMismatch(
            f"query has shape {query_vector.shape}, projector input "
            f"dimension is {projector.axes.shape[0]}"
        )
    q = projector.project(query_vector)
    scored = []
    for pos, cand in enumerate(candidates):
        value = float(q @ projector.project(store.vector(cand.exemplar_id)))
        scored.append((value, pos, cand))
    scored.sort(key=lambda t: (-t[0], t[1]))
    out = []
    for rank, (value, _, cand) in enumerate(scored[:n], start=1):
        out.append(
            ScoredCandidate(cand.exemplar_id, cand.semantic_score, value, rank)
        )
    return out


# ---------------------------------------------------------------------------
# Deterministic text embedder
# ---------------------------------------------------------------------------


def hashing_embedder(dim: int = 64):
    """Seedless bag-of-words embedder: sha256 feature hashing, unit norm.

    Deterministic across runs and platforms; the stand-in for a sentence
    encoder in offline runs and tests.
    """
    import hashlib

    def embed(text: str) -> np.ndarray:
        vec = np.zeros(dim)
        for token in _tokenize_doc(text):
            digest = hashlib.sha256(token.encode()).digest()
            idx = int.from_bytes(digest[:4], "little") % dim
            sign = 1.0 if digest[4] % 2 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec

    return embed


# ---------------------------------------------------------------------------
# Store file formats
# ---------------------------------------------------------------------------


def save_store(store: EmbeddingStore, path: str) -> None:
    header = f"dim={store.dimension} metric={store.metric} count={len(store)}\n"
    if str(path).endswith(".bin"):
        with open(path, "wb") as fh:
            fh.write(header.encode())
            for entry_id, vec in store.entries.items():
                ident = entry_id.encode()
                fh.write(struct.pack("<H", len(ident)))
                fh.write(ident)
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(header)
        for entry_id, vec in store.entries.items():
            floats = " ".join(repr(float(x)) for x in vec)
            fh.write(f'"{entry_id}" {floats}\n')


def load_store(path: str) -> EmbeddingStore:
    if str(path).endswith(".bin"):
        with open(path, "rb") as fh:
            header = b""
            while not header.endswith(b"\n"):
                header += fh.read(1)
            fields = dict(p.split("=") for p in header.decode().split())
            store = EmbeddingStore(int(fields["dim"]), fields["metric"])
            for _ in range(int(fields["count"])):
                (id_len,) = struct.unpack("<H", fh.read(2))
                entry_id = fh.read(id_len).decode()
                raw = fh.read(4 * store.dimension)
                store.add(entry_id, np.frombuffer(raw, dtype="<f4").astype(float))
        return store
    with open(path) as fh:
        fields = dict(p.split("=") for p in fh.readline().split())
        store = EmbeddingStore(int(fields["dim"]), fields["metric"])
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if not line.startswith('"'):
                raise ValueError(f"bad store line: {line!r}")
            end = line.index('"', 1)
            entry_id = line[1:end]
            values = np.array([float(x) for x in line[end + 1 :].split()])
            store.add(entry_id, values)
    return store
