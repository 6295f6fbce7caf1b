"""Attributed directed reasoning graphs.

Two flavors: MATH graphs built from equation lists (numbers, variables, and
operator nodes with operand edges) and DEDUCTIVE graphs built from numbered
statement traces (citation edges). Includes structural diagnostics and a
canonical line-oriented serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DuplicateIndex, ForwardReference, MalformedEquation
from .parsing import (
    DeductiveStep,
    Equation,
    Token,
    _apply,
    canonical_label,
    to_rpn,
)

MATH = "MATH"
DEDUCTIVE = "DEDUCTIVE"

NUM = "NUM"
VAR = "VAR"
OP = "OP"
STMT = "STMT"


@dataclass(frozen=True)
class Node:
    id: int
    kind: str  # NUM | VAR | OP | STMT
    label: str
    value: Fraction | None = None

    def wl_label(self) -> str:
        """Initial kernel label: attribute class, with operator identity."""
        if self.kind == OP:
            return f"OP:{self.label}"
        return self.kind


@dataclass(frozen=True)
class ReasoningGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    flavor: str

    def __len__(self):
        return len(self.nodes)

    @property
    def node_by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    def undirected_adjacency(self) -> dict[int, list[int]]:
        # neighborhood = in-neighbors union out-neighbors, each counted once
        adj: dict[int, set[int]] = {n.id: set() for n in self.nodes}
        for s, d in self.edges:
            adj[s].add(d)
            adj[d].add(s)
        return {v: sorted(ws) for v, ws in adj.items()}

    def out_adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for s, d in self.edges:
            adj[s].append(d)
        return adj


@dataclass(frozen=True)
class GraphDiagnostics:
    weakly_connected: bool
    strongly_connected: bool
    component_count: int
    longest_path_length: int
    cycle_detected: bool


# ---------------------------------------------------------------------------
# Construction: math graphs
# ---------------------------------------------------------------------------


class _Builder:
    """Mutable state while assembling a graph; frozen on finish."""

    def __init__(self, flavor: str):
        self.flavor = flavor
        self.kinds: list[str] = []
        self.labels: list[str] = []
        self.values: list[Fraction | None] = []
        self.edges: dict[tuple[int, int], None] = {}

    def add_node(self, kind: str, label: str, value: Fraction | None = None) -> int:
        self.kinds.append(kind)
        self.labels.append(label)
        self.values.append(value)
        return len(self.kinds) - 1

    def add_edge(self, src: int, dst: int) -> None:
        if src != dst:
            self.edges[(src, dst)] = None

    def finish(self) -> ReasoningGraph:
        nodes = tuple(
            Node(i, k, l, v)
            for i, (k, l, v) in enumerate(zip(self.kinds, self.labels, self.values))
        )
        return ReasoningGraph(nodes, tuple(self.edges), self.flavor)


def build_math_graph(equations: list[Equation]) -> ReasoningGraph:
    """Build a MATH graph from an ordered equation list.

    Each operator application contributes one OP node with edges from its two
    operands; the final OP node of an equation carries the declared answer.
    Operands whose canonical label matches an earlier equation's result are
    merged with that result node, chaining equations into one graph.
    """
    b = _Builder(MATH)
    num_ids: dict[str, int] = {}
    var_ids: dict[str, int] = {}
    result_ids: dict[str, int] = {}

    def operand_node(tok: Token) -> int:
        if tok.kind == "NUM":
            nid = result_ids.get(tok.text)
            if nid is None:
                nid = num_ids.get(tok.text)
            if nid is None:
                nid = b.add_node(NUM, tok.text, tok.value)
                num_ids[tok.text] = nid
            return nid
        nid = var_ids.get(tok.text)
        if nid is None:
            nid = result_ids.get(tok.text)
        if nid is None:
            nid = b.add_node(VAR, tok.text)
            var_ids[tok.text] = nid
        return nid

    for eq in equations:
        if not eq.expression:
            raise MalformedEquation("empty expression side")
        rpn = to_rpn(list(eq.expression))
        # evaluate the RPN, materializing a node per operator application
        stack: list[tuple[int, Fraction | None]] = []
        for tok in rpn:
            if tok.kind in ("NUM", "VAR"):
                nid = operand_node(tok)
                stack.append((nid, b.values[nid]))
                continue
            rid, rval = stack.pop()
            lid, lval = stack.pop()
            value = None
            if lval is not None and rval is not None:
                try:
                    value = _apply(tok.text, lval, rval)
                except (ZeroDivisionError, ValueError):
                    value = None
            op_id = b.add_node(OP, tok.text, value)
            b.add_edge(lid, op_id)
            b.add_edge(rid, op_id)
            stack.append((op_id, value))
        root_id, _ = stack[0]
        answer_value = eq.answer_value
        if b.kinds[root_id] == OP:
            # the declared answer is stored as-is, not recomputed
            b.values[root_id] = answer_value
            result_ids[eq.answer] = root_id
        else:
            # pure assignment: constant/value -> variable edge, no OP node
            if answer_value is not None:
                tok = Token("NUM", canonical_label(answer_value), answer_value)
            else:
                tok = Token("VAR", eq.answer)
            ans_id = operand_node(tok)
            b.add_edge(ans_id, root_id)
    return b.finish()


def build_deductive_graph(steps: list[DeductiveStep]) -> ReasoningGraph:
    """Build a DEDUCTIVE graph: one STMT node per step, citation edges."""
    b = _Builder(DEDUCTIVE)
    ids: dict[int, int] = {}
    for step in steps:
        if step.index in ids:
            raise DuplicateIndex(f"statement #{step.index} repeated")
        ids[step.index] = b.add_node(STMT, f"#{step.index}")
    for step in steps:
        for cited in step.cited:
            if cited >= step.index:
                raise ForwardReference(
                    f"statement #{step.index} cites #{cited}"
                )
            if cited not in ids:
                raise ForwardReference(
                    f"statement #{step.index} cites unknown #{cited}"
                )
            b.add_edge(ids[cited], ids[step.index])
    return b.finish()


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def diagnose(graph: ReasoningGraph) -> GraphDiagnostics:
    """Connectivity, component, cycle, and longest-path facts for a graph."""
    n = len(graph.nodes)
    if n == 0:
        return GraphDiagnostics(False, False, 0, 0, False)
    components = _weak_components(graph)
    sccs = _tarjan_sccs(graph)
    cycle = any(len(c) > 1 for c in sccs)
    longest = _longest_path_condensation(graph, sccs)
    return GraphDiagnostics(
        weakly_connected=components == 1,
        strongly_connected=len(sccs) == 1,
        component_count=components,
        longest_path_length=longest,
        cycle_detected=cycle,
    )


def verify_arithmetic(graph: ReasoningGraph) -> list[int]:
    """Ids of OP nodes whose stored value disagrees with recomputation."""
    if graph.flavor != MATH:
        return []
    by_id = graph.node_by_id
    inputs: dict[int, list[int]] = {n.id: [] for n in graph.nodes}
    for s, d in graph.edges:
        inputs[d].append(s)
    bad = []
    for node in graph.nodes:
        if node.kind != OP or node.value is None:
            continue
        ops = [by_id[i].value for i in inputs[node.id]]
        if len(ops) == 1:  # collapsed duplicate operand, e.g. 2+2
            ops = ops * 2
        if len(ops) != 2 or any(v is None for v in ops):
            continue
        try:
            expected = _apply(node.label, ops[0], ops[1])
            alt = _apply(node.label, ops[1], ops[0])
        except (ZeroDivisionError, ValueError):
            continue
        if node.value != expected and node.value != alt:
            bad.append(node.id)
    return bad


def _weak_components(graph: ReasoningGraph) -> int:
    adj = graph.undirected_adjacency()
    seen: set[int] = set()
    count = 0
    for start in adj:
        if start in seen:
            continue
        count += 1
        stack = [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
    return count


def _tarjan_sccs(graph: ReasoningGraph) -> list[list[int]]:
    adj = graph.out_adjacency()
    index: dict[int, int] = {}
    lowlink: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = [0]

    def strongconnect(v: int) -> None:
        # iterative Tarjan to stay safe on deep graphs
        work = [(v, iter(adj[v]))]
        index[v] = lowlink[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = lowlink[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(adj[w])))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[node] = min(lowlink[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                scc = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    scc.append(w)
                    if w == node:
                        break
                sccs.append(scc)

    for v in adj:
        if v not in index:
            strongconnect(v)
    return sccs


def _longest_path_condensation(
    graph: ReasoningGraph, sccs: list[list[int]]
) -> int:
    comp_of: dict[int, int] = {}
    for ci, scc in enumerate(sccs):
        for v in scc:
            comp_of[v] = ci
    comp_edges: set[tuple[int, int]] = set()
    for s, d in graph.edges:
        if comp_of[s] != comp_of[d]:
            comp_edges.add((comp_of[s], comp_of[d]))
    succ: dict[int, list[int]] = {i: [] for i in range(len(sccs))}
    indeg = {i: 0 for i in range(len(sccs))}
    for s, d in comp_edges:
        succ[s].append(d)
        indeg[d] += 1
    order = [v for v in indeg if indeg[v] == 0]
    dist = {v: 0 for v in indeg}
    i = 0
    while i < len(order):
        v = order[i]
        i += 1
        for w in succ[v]:
            dist[w] = max(dist[w], dist[v] + 1)
            indeg[w] -= 1
            if indeg[w] == 0:
                order.append(w)
    return max(dist.values(), default=0)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def _topological_ranks(graph: ReasoningGraph) -> dict[int, int]:
    sccs = _tarjan_sccs(graph)
    comp_of: dict[int, int] = {}
    for ci, scc in enumerate(sccs):
        for v in scc:
            comp_of[v] = ci
    succ: dict[int, set[int]] = {i: set() for i in range(len(sccs))}
    indeg = {i: 0 for i in range(len(sccs))}
    for s, d in graph.edges:
        cs, cd = comp_of[s], comp_of[d]
        if cs != cd and cd not in succ[cs]:
            succ[cs].add(cd)
            indeg[cd] += 1
    rank: dict[int, int] = {}
    frontier = [c for c in indeg if indeg[c] == 0]
    level = 0
    while frontier:
        nxt = []
        for c in frontier:
            rank[c] = level
            for w in succ[c]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    nxt.append(w)
        frontier = nxt
        level += 1
    return {v: rank[comp_of[v]] for v in comp_of}


def serialize(graph: ReasoningGraph) -> str:
    """Canonical line-oriented text form, stable under node id renumbering."""
    ranks = _topological_ranks(graph)
    ordered = sorted(
        graph.nodes, key=lambda n: (n.kind, n.label, ranks.get(n.id, 0), n.id)
    )
    renum = {n.id: i for i, n in enumerate(ordered)}
    lines = [f"flavor={graph.flavor} nodes={len(graph.nodes)} edges={len(graph.edges)}"]
    for i, node in enumerate(ordered):
        line = f"node {i} {node.kind} {node.label}"
        if node.value is not None:
            line += f" value={canonical_label(node.value)}"
        lines.append(line)
    for s, d in sorted((renum[s], renum[d]) for s, d in graph.edges):
        lines.append(f"edge {s} {d}")
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> ReasoningGraph:
    graphs = deserialize_many(text)
    if len(graphs) != 1:
        raise ValueError(f"expected one graph, found {len(graphs)}")
    return graphs[0]


def deserialize_many(text: str) -> list[ReasoningGraph]:
    """Parse one or more concatenated canonical serializations."""
    lines = [l for l in text.splitlines() if l.strip()]
    graphs = []
    i = 0
    while i < len(lines):
        header = dict(part.split("=", 1) for part in lines[i].split())
        if "flavor" not in header:
            raise ValueError(f"bad graph header: {lines[i]!r}")
        n, m = int(header["nodes"]), int(header["edges"])
        i += 1
        nodes = []
        for _ in range(n):
            parts = lines[i].split()
            value = None
            if parts[-1].startswith("value="):
                value = Fraction(parts[-1][len("value="):])
                parts = parts[:-1]
            _, nid, kind, label = parts
            nodes.append(Node(int(nid), kind, label, value))
            i += 1
        edges = []
        for _ in range(m):
            _, s, d = lines[i].split()
            edges.append((int(s), int(d)))
            i += 1
        graphs.append(ReasoningGraph(tuple(nodes), tuple(edges), header["flavor"]))
    return graphs
