"""Undirected communication graphs and the redundancy toolkit.

Graphs are immutable values backed by a dense symmetric boolean adjacency
matrix. Time-varying topologies are plain sequences of :class:`Graph`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

ROBUSTNESS_MAX_NODES = 16


class CapabilityError(RuntimeError):
    """Raised when a request exceeds what an exhaustive checker can handle."""


class Graph:
    """Simple undirected graph over agents ``0..n-1``."""

    __slots__ = ("_adj", "_nbrs", "_directed")

    def __init__(self, adjacency):
        adj = np.array(adjacency, dtype=bool, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise ValueError("self-loops are not allowed")
        adj.setflags(write=False)
        self._adj = adj
        self._nbrs = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in adj)
        self._directed = frozenset((i, j) for i, row in enumerate(self._nbrs) for j in row)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        if n < 1:
            raise ValueError("n must be positive")
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            _check_node(n, i)
            _check_node(n, j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            adj[i, j] = adj[j, i] = True
        return cls(adj)

    @property
    def n(self) -> int:
        return self._adj.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self._adj[i, j])

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._nbrs[i]

    def directed_edges(self) -> frozenset:
        """Every ordered pair ``(i, j)`` with an edge between them."""
        return self._directed

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(self.neighbors(i) + (i,)))

    def degree(self, i: int) -> int:
        return int(self._adj[i].sum())

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` with ``i < j``, in row-major order."""
        rows, cols = np.nonzero(np.triu(self._adj, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    @property
    def num_edges(self) -> int:
        return int(self._adj.sum()) // 2

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self._adj, other._adj)

    def __hash__(self) -> int:
        return hash((self.n, np.packbits(self._adj).tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges})"


def _check_node(n: int, i: int) -> None:
    if not 0 <= i < n:
        raise ValueError(f"node id {i} out of range for n={n}")


# --- common graphs -------------------------------------------------------


def complete_graph(n: int) -> Graph:
    adj = np.ones((n, n), dtype=bool)
    np.fill_diagonal(adj, False)
    return Graph(adj)


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(n: int, center: int = 0) -> Graph:
    return Graph.from_edges(n, [(center, j) for j in range(n) if j != center])


def empty_graph(n: int) -> Graph:
    return Graph(np.zeros((n, n), dtype=bool))


def random_graph(n: int, density: float, rng: np.random.Generator) -> Graph:
    """Erdos-Renyi G(n, p) sample."""
    upper = np.triu(rng.random((n, n)) < density, k=1)
    return Graph(upper | upper.T)


# --- shared neighbors and the r-2-hop transform --------------------------


def shared_neighbor_count(g: Graph, i: int, j: int) -> int:
    """Size of ``({i} U N(i)) & N(j)``: common neighbours counting ``i`` itself."""
    _check_node(g.n, i)
    _check_node(g.n, j)
    if i == j:
        raise ValueError("shared_neighbor_count needs two distinct agents")
    closed_i = set(g.neighbors(i)) | {i}
    return len(closed_i & set(g.neighbors(j)))


def shared_neighbor_matrix(g: Graph) -> np.ndarray:
    """All pairwise shared-neighbour counts at once, as ``A @ A + A``.

    Only the off-diagonal entries are meaningful; the diagonal holds degrees.
    """
    a = g.adjacency.astype(np.int64)
    return a @ a + a


def two_hop_graph(g: Graph, r: int) -> Graph:
    """Graph joining ``i`` and ``j`` whenever they share at least ``r`` neighbours."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    counts = shared_neighbor_matrix(g)
    adj = counts >= r
    np.fill_diagonal(adj, False)
    return Graph(adj)


def is_connected(g: Graph) -> bool:
    return not _unreachable_from_zero(g)


def _unreachable_from_zero(g: Graph) -> list[int]:
    adj = g.adjacency
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in np.flatnonzero(adj[v] & ~seen):
            seen[w] = True
            queue.append(int(w))
    return [int(v) for v in np.flatnonzero(~seen)]


@dataclass(frozen=True)
class RedundancyResult:
    """Outcome of an ``(r, r')``-redundancy check.

    Truthy iff the graph is redundant. On failure ``reason`` is either
    ``"disconnected"`` (with ``node`` unreachable from node 0 in the r-2-hop
    graph) or ``"gap"`` (with ``pair`` sharing ``count`` neighbours, strictly
    between ``r'`` and ``r``).
    """

    redundant: bool
    r: int
    r_prime: int
    reason: Optional[str] = None
    node: Optional[int] = None
    pair: Optional[tuple[int, int]] = None
    count: Optional[int] = None

    def __bool__(self) -> bool:
        return self.redundant

    def describe(self) -> str:
        head = f"({self.r},{self.r_prime})-redundant"
        if self.redundant:
            return f"graph is {head}"
        if self.reason == "disconnected":
            return (f"graph is not {head}: the {self.r}-2-hop graph is disconnected "
                    f"(node {self.node} unreachable from node 0)")
        i, j = self.pair
        return (f"graph is not {head}: agents {i} and {j} share {self.count} neighbours "
                f"(needs >= {self.r} or <= {self.r_prime})")

    def to_dict(self) -> dict:
        return {
            "redundant": self.redundant,
            "r": self.r,
            "r_prime": self.r_prime,
            "reason": self.reason,
            "node": self.node,
            "pair": list(self.pair) if self.pair is not None else None,
            "count": self.count,
            "message": self.describe(),
        }


def is_rr_redundant(g: Graph, r: int, r_prime: int) -> RedundancyResult:
    """Check ``(r, r')``-redundancy in O(n^3).

    The r-2-hop graph must be connected, and every pair of distinct agents
    must share either at least ``r`` or at most ``r_prime`` neighbours.
    """
    if r_prime < 0 or r <= r_prime:
        raise ValueError(f"need r > r' >= 0, got r={r}, r'={r_prime}")
    counts = shared_neighbor_matrix(g)
    gap = (counts < r) & (counts > r_prime)
    np.fill_diagonal(gap, False)
    if gap.any():
        i, j = np.argwhere(gap)[0]
        return RedundancyResult(False, r, r_prime, reason="gap",
                                pair=(int(i), int(j)), count=int(counts[i, j]))
    unreachable = _unreachable_from_zero(two_hop_graph(g, r))
    if unreachable:
        return RedundancyResult(False, r, r_prime, reason="disconnected", node=unreachable[0])
    return RedundancyResult(True, r, r_prime)


def construct_redundant(n: int, r: int) -> Graph:
    """Clique on ``0..r-1`` with every other node attached to all of it.

    The result is ``(r, r')``-redundant for every ``0 <= r' < r``.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if n <= r:
        raise ValueError(f"need n > r, got n={n}, r={r}")
    adj = np.zeros((n, n), dtype=bool)
    adj[:r, :] = True
    adj[:, :r] = True
    np.fill_diagonal(adj, False)
    return Graph(adj)


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency.astype(float)
    return np.diag(a.sum(axis=1)) - a


# --- r-robustness ----------------------------------------------------------


def _popcount(x: np.ndarray) -> np.ndarray:
    table = np.array([bin(v).count("1") for v in range(256)], dtype=np.int64)
    out = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        out += table[x & 0xFF]
        x = x >> 8
    return out


def is_r_robust_bruteforce(g: Graph, r: int) -> bool:
    """Exhaustive r-robustness check over all disjoint subset pairs.

    A subset ``S`` is *r-reachable* if one of its members has at least ``r``
    neighbours outside ``S``. The graph is r-robust iff no two disjoint
    nonempty subsets are both unreachable. Reachability is tabulated for all
    ``2^n`` subsets, then a subset-union transform tells, for every set, whether
    it contains an unreachable nonempty subset.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    n = g.n
    if n > ROBUSTNESS_MAX_NODES:
        raise CapabilityError(
            f"exhaustive robustness check limited to n <= {ROBUSTNESS_MAX_NODES} (got {n}); "
            "the problem is co-NP-complete")
    if r == 0:
        return True
    full = (1 << n) - 1
    masks = np.arange(1 << n, dtype=np.int64)
    adj = g.adjacency
    reachable = np.zeros(1 << n, dtype=bool)
    for i in range(n):
        nbr_mask = sum(1 << int(j) for j in np.flatnonzero(adj[i]))
        outside = int(adj[i].sum()) - _popcount(masks & nbr_mask)
        reachable |= ((masks >> i) & 1).astype(bool) & (outside >= r)
    stuck = ~reachable
    stuck[0] = False
    # contains_stuck[S]: some nonempty T within S is unreachable
    contains_stuck = stuck.copy()
    for b in range(n):
        view = contains_stuck.reshape(-1, 2, 1 << b)
        view[:, 1, :] |= view[:, 0, :]
    complements = full ^ masks
    return not np.any(stuck & contains_stuck[complements])


# --- edge-list I/O ---------------------------------------------------------


def parse_edge_list(text: str) -> Graph:
    """Parse the edge-list format: ``n`` on the first line, then ``i j`` pairs.

    Lines starting with ``#`` (and trailing ``# ...`` comments) are ignored.
    Self-loops and duplicate edges are rejected.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise ValueError("edge list is empty")
    lineno, head = rows[0]
    if len(head) != 1:
        raise ValueError(f"line {lineno}: expected node count, got {' '.join(head)!r}")
    n = int(head[0])
    if n < 1:
        raise ValueError(f"line {lineno}: node count must be positive")
    seen = set()
    edges = []
    for lineno, fields in rows[1:]:
        if len(fields) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {' '.join(fields)!r}")
        i, j = int(fields[0]), int(fields[1])
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"line {lineno}: node id out of range for n={n}")
        if i == j:
            raise ValueError(f"line {lineno}: self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"line {lineno}: duplicate edge {key}")
        seen.add(key)
        edges.append(key)
    return Graph.from_edges(n, edges)


def format_edge_list(g: Graph, comment: Optional[str] = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(str(g.n))
    lines.extend(f"{i} {j}" for i, j in g.edges())
    return "\n".join(lines) + "\n"


def load_edge_list(path) -> Graph:
    return parse_edge_list(Path(path).read_text())


def save_edge_list(g: Graph, path, comment: Optional[str] = None) -> None:
    Path(path).write_text(format_edge_list(g, comment))
