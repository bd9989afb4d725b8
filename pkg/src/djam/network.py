"""Undirected weighted agent networks.

Agents are indexed ``0 .. n-1`` in the Python API. The edge-list text format
(:func:`read_edge_list` / :func:`write_edge_list`) uses 1-based indices.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from djam.errors import (
    DisconnectedGraph,
    DuplicateEdge,
    IndexOutOfRange,
    NonpositiveWeight,
    SelfLoop,
    UnknownEdge,
)

Edge = tuple[int, int]

__all__ = [
    "Edge",
    "Network",
    "build_network",
    "agent_weight_sum",
    "canonical_edge",
    "read_edge_list",
    "write_edge_list",
]


def canonical_edge(i: int, j: int) -> Edge:
    """Return the unordered pair ``(i, j)`` as ``(min, max)``."""
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Network:
    """Validated, immutable network. Build it with :func:`build_network`.

    Attributes:
        n: number of agents.
        p: model dimension.
        edges: canonical ``(i, j)`` pairs with ``i < j``, sorted.
        weights: positive coupling weight per edge, aligned with ``edges``.
    """

    n: int
    p: int
    edges: tuple[Edge, ...]
    weights: tuple[float, ...]
    _index: dict[Edge, int] = field(repr=False, compare=False)
    W: np.ndarray = field(repr=False, compare=False)
    neighbors: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)
    weight_sums: np.ndarray = field(repr=False, compare=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, i: int, j: int) -> int:
        """Position of edge ``{i, j}`` in :attr:`edges` (either order)."""
        try:
            return self._index[canonical_edge(i, j)]
        except KeyError:
            raise UnknownEdge(f"({i}, {j}) is not an edge of the network") from None

    def has_edge(self, i: int, j: int) -> bool:
        return canonical_edge(i, j) in self._index

    def weight(self, i: int, j: int) -> float:
        """``W_ij``; raises :class:`UnknownEdge` for non-adjacent pairs."""
        return self.weights[self.edge_index(i, j)]

    def degree(self, j: int) -> int:
        return len(self.neighbors[j])


def _check_index(i: int, n: int) -> None:
    if not (0 <= i < n):
        raise IndexOutOfRange(f"agent index {i} outside [0, {n})")


def build_network(n: int, p: int, weighted_edges: Iterable[tuple[int, int, float]]) -> Network:
    """Validate an edge list and build a :class:`Network`.

    Args:
        n: number of agents (>= 1).
        p: model dimension (>= 1).
        weighted_edges: ``(i, j, W_ij)`` triples with 0-based indices. Each
            unordered pair may appear only once.

    Raises:
        IndexOutOfRange, SelfLoop, DuplicateEdge, NonpositiveWeight,
        DisconnectedGraph.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")

    table: dict[Edge, float] = {}
    for i, j, w in weighted_edges:
        i, j, w = int(i), int(j), float(w)
        _check_index(i, n)
        _check_index(j, n)
        if i == j:
            raise SelfLoop(f"self-loop at agent {i}")
        if not math.isfinite(w):
            raise NonpositiveWeight(f"weight of ({i}, {j}) is not finite: {w}")
        if w <= 0.0:
            raise NonpositiveWeight(f"weight of ({i}, {j}) must be > 0, got {w}")
        e = canonical_edge(i, j)
        if e in table:
            raise DuplicateEdge(f"edge {e} listed more than once")
        table[e] = w

    edges = tuple(sorted(table))
    weights = tuple(table[e] for e in edges)

    W = np.zeros((n, n))
    for (i, j), w in zip(edges, weights):
        W[i, j] = W[j, i] = w

    if n > 1:
        ncomp, _ = connected_components(csr_matrix(W > 0), directed=False)
        if ncomp != 1:
            raise DisconnectedGraph(f"graph has {ncomp} connected components")

    nbrs = tuple(tuple(int(k) for k in np.flatnonzero(W[j])) for j in range(n))
    W.setflags(write=False)
    sums = W.sum(axis=1)
    sums.setflags(write=False)
    return Network(
        n=n,
        p=p,
        edges=edges,
        weights=weights,
        _index={e: k for k, e in enumerate(edges)},
        W=W,
        neighbors=nbrs,
        weight_sums=sums,
    )


def agent_weight_sum(net: Network, j: int) -> float:
    """Sum of the weights of the edges incident to agent ``j`` (0 if isolated)."""
    _check_index(j, net.n)
    return float(sum(net.W[j, k] for k in net.neighbors[j]))


def read_edge_list(path: str | Path, n: int | None = None, p: int = 1) -> Network:
    """Load a network from ``i j W_ij`` lines (1-based, ``#`` comments).

    ``n`` defaults to the largest index mentioned in the file.
    """
    triples = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'i j W_ij', got {raw!r}")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        triples.append((i - 1, j - 1, w))
    if n is None:
        n = max((max(i, j) + 1 for i, j, _ in triples), default=1)
    return build_network(n, p, triples)


def write_edge_list(net: Network, path: str | Path) -> None:
    lines = [f"# n={net.n} p={net.p}"]
    lines += [f"{i + 1} {j + 1} {w:.17g}" for (i, j), w in zip(net.edges, net.weights)]
    Path(path).write_text("\n".join(lines) + "\n")


def edges_from_pairs(pairs: Sequence[Edge], weight: float = 1.0) -> list[tuple[int, int, float]]:
    """Attach a constant weight to bare pairs; handy for fixtures."""
    return [(i, j, weight) for i, j in pairs]
