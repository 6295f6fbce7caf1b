"""Bindings for the graphicl graph and kernel core.

Every operation shells out to the native command-line interface and
exchanges data through the canonical graph serialization, so bound results
are bit-identical to native output by construction. Only the pure,
deterministic core is exposed: graph construction, both kernels, and
kernel re-ranking.
"""

from __future__ import annotations

import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "BindingError",
    "BoundGraph",
    "build_math_graph",
    "build_deductive_graph",
    "wl_kernel",
    "sp_kernel",
    "rerank",
]

DEFAULT_ITERATIONS = 3

_CLI = (sys.executable, "-m", "graphicl.cli")


class BindingError(RuntimeError):
    """The native command rejected the input or failed."""


def _run(*args: str) -> str:
    proc = subprocess.run(
        [*_CLI, *args], capture_output=True, text=True, check=False
    )
    if proc.returncode != 0:
        raise BindingError(
            f"native command failed (exit {proc.returncode}): {proc.stderr.strip()}"
        )
    return proc.stdout


@dataclass(frozen=True)
class BoundGraph:
    """Opaque handle over a native reasoning graph's canonical serialization."""

    serialization: str

    @property
    def _header(self) -> dict[str, str]:
        fields = self.serialization.splitlines()[0].split()
        return dict(item.split("=") for item in fields)

    @property
    def flavor(self) -> str:
        return self._header["flavor"]

    @property
    def node_count(self) -> int:
        return int(self._header["nodes"])

    @property
    def edge_count(self) -> int:
        return int(self._header["edges"])

    def serialize(self) -> str:
        return self.serialization


def _build(text: str, flavor: str) -> BoundGraph:
    out = _run("build-graph", "--flavor", flavor, "--text", text)
    return BoundGraph(out)


def build_math_graph(equations: list[str]) -> BoundGraph:
    """Graph from equation strings such as ["6/2=3", "3*2=6"]."""
    text = "Calculation equations: " + ",".join(equations) if equations else ""
    return _build(text, "math")


def build_deductive_graph(steps: list[str]) -> BoundGraph:
    """Graph from statement lines such as ["#1. premise.", "#2. (by #1)s."]."""
    return _build("\n".join(steps), "deductive")


def _graph_files(tmp: str, graphs: list[BoundGraph]) -> list[str]:
    paths = []
    for i, graph in enumerate(graphs):
        path = Path(tmp) / f"g{i}.txt"
        path.write_text(graph.serialization)
        paths.append(str(path))
    return paths


def _kernel(a: BoundGraph, b: BoundGraph, kind: str, h: int, raw: bool) -> float:
    with tempfile.TemporaryDirectory() as tmp:
        pa, pb = _graph_files(tmp, [a, b])
        args = ["kernel", pa, pb, "--kernel", kind, "--iters", str(h)]
        if raw:
            args.append("--raw")
        return float(_run(*args).strip())


def wl_kernel(
    a: BoundGraph, b: BoundGraph, h: int = DEFAULT_ITERATIONS, raw: bool = False
) -> float:
    """Weisfeiler-Lehman subtree kernel value (normalized by default)."""
    return _kernel(a, b, "wl", h, raw)


def sp_kernel(a: BoundGraph, b: BoundGraph, raw: bool = False) -> float:
    """Shortest-path kernel value (normalized by default)."""
    return _kernel(a, b, "sp", DEFAULT_ITERATIONS, raw)


def rerank(
    candidates: list[BoundGraph],
    query: BoundGraph,
    kind: str = "wl",
    h: int = DEFAULT_ITERATIONS,
    n: int | None = None,
) -> list[int]:
    """Indices of candidates most structurally similar to the query, best first."""
    with tempfile.TemporaryDirectory() as tmp:
        query_path = Path(tmp) / "query.txt"
        query_path.write_text(query.serialization)
        cands_path = Path(tmp) / "candidates.txt"
        cands_path.write_text("".join(g.serialization for g in candidates))
        out = _run(
            "rerank",
            "--query-graph", str(query_path),
            "--candidates", str(cands_path),
            "--kernel", kind,
            "--iters", str(h),
            "-n", str(n if n is not None else len(candidates)),
        )
    return [int(line.split()[0]) for line in out.splitlines() if line.strip()]
