"""R-convolution graph kernels for reasoning graphs.

Weisfeiler-Lehman subtree kernel for attributed math graphs and the
shortest-path kernel for deductive graphs, plus Gram matrix assembly.
Neighborhoods and paths use the undirected skeleton of the graph.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .errors import FlavorMismatch
from .graphs import ReasoningGraph

DEFAULT_WL_ITERATIONS = 3


@dataclass(frozen=True)
class KernelSpec:
    kind: str  # "wl" | "sp"
    iterations: int = DEFAULT_WL_ITERATIONS
    normalized: bool = True

    def __post_init__(self):
        if self.kind not in ("wl", "sp"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "wl" and self.iterations < 1:
            raise ValueError("wl iterations must be >= 1")


@dataclass(frozen=True)
class KernelValue:
    raw: float
    normalized: float


def _check_flavors(g1: ReasoningGraph, g2: ReasoningGraph) -> None:
    if len(g1) and len(g2) and g1.flavor != g2.flavor:
        raise FlavorMismatch(f"{g1.flavor} vs {g2.flavor}")


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman subtree kernel
# ---------------------------------------------------------------------------


def _wl_histograms(graph: ReasoningGraph, h: int) -> list[Counter]:
    """Label-count histograms for iterations 0..h.

    Labels are canonical strings (initial attribute classes refined by the
    sorted-neighbor multiset), so histograms are comparable across graphs
    without a shared compression table.
    """
    adj = graph.undirected_adjacency()
    labels = {n.id: n.wl_label() for n in graph.nodes}
    hists = [Counter(labels.values())]
    for _ in range(h):
        new_labels = {}
        for v in labels:
            neigh = sorted(labels[w] for w in adj[v])
            new_labels[v] = labels[v] + "|" + ",".join(neigh)
        labels = new_labels
        hists.append(Counter(labels.values()))
    return hists


def wl_kernel(
    g1: ReasoningGraph, g2: ReasoningGraph, h: int = DEFAULT_WL_ITERATIONS
) -> KernelValue:
    """WL subtree kernel: sum over iterations 0..h of histogram dot products."""
    _check_flavors(g1, g2)
    if not len(g1) or not len(g2):
        return KernelValue(0.0, 0.0)
    h1 = _wl_histograms(g1, h)
    h2 = _wl_histograms(g2, h)
    raw = float(sum(_dot(a, b) for a, b in zip(h1, h2)))
    self1 = float(sum(_dot(a, a) for a in h1))
    self2 = float(sum(_dot(a, a) for a in h2))
    return KernelValue(raw, _normalize(raw, self1, self2))


def _dot(a: Counter, b: Counter) -> int:
    if len(b) < len(a):
        a, b = b, a
    return sum(c * b[label] for label, c in a.items())


def _normalize(raw: float, self1: float, self2: float) -> float:
    if self1 <= 0.0 or self2 <= 0.0:
        return 0.0
    return raw / math.sqrt(self1 * self2)


# ---------------------------------------------------------------------------
# Shortest-path kernel
# ---------------------------------------------------------------------------


def _path_features(graph: ReasoningGraph) -> Counter:
    """Multiset of (endpoint-label pair, length) over unordered node pairs."""
    adj = graph.undirected_adjacency()
    labels = {n.id: n.wl_label() for n in graph.nodes}
    feats: Counter = Counter()
    ids = [n.id for n in graph.nodes]
    for idx, src in enumerate(ids):
        dist = {src: 0}
        queue = deque([src])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        for dst in ids[idx + 1 :]:
            if dst in dist:
                ends = tuple(sorted((labels[src], labels[dst])))
                feats[(ends, dist[dst])] += 1
    return feats


def sp_kernel(g1: ReasoningGraph, g2: ReasoningGraph) -> KernelValue:
    """Shortest-path kernel: count path pairs matching in length and endpoints."""
    _check_flavors(g1, g2)
    if not len(g1) or not len(g2):
        return KernelValue(0.0, 0.0)
    f1 = _path_features(g1)
    f2 = _path_features(g2)
    raw = float(_dot(f1, f2))
    return KernelValue(raw, _normalize(raw, _dot(f1, f1), _dot(f2, f2)))


# ---------------------------------------------------------------------------
# Dispatch and Gram matrices
# ---------------------------------------------------------------------------


def kernel(g1: ReasoningGraph, g2: ReasoningGraph, spec: KernelSpec) -> float:
    value = compute(g1, g2, spec)
    return value.normalized if spec.normalized else value.raw


def compute(g1: ReasoningGraph, g2: ReasoningGraph, spec: KernelSpec) -> KernelValue:
    if spec.kind == "wl":
        return wl_kernel(g1, g2, spec.iterations)
    return sp_kernel(g1, g2)


def gram_matrix(graphs: list[ReasoningGraph], spec: KernelSpec) -> np.ndarray:
    """Symmetric matrix of pairwise kernel values under the given KernelSpec."""
    flavors = {g.flavor for g in graphs if len(g)}
    if len(flavors) > 1:
        raise FlavorMismatch(f"mixed flavors in batch: {sorted(flavors)}")
    n = len(graphs)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            v = kernel(graphs[i], graphs[j], spec)
            out[i, j] = out[j, i] = v
    return out
