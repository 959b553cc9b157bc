"""Weighted graphs, hop distances, extreme points and the Two-Points Condition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

# TPC enumeration is exponential in n.
TPC_ENUMERATION_CAP = 20
_CHUNK_BITS = 16


class GraphError(ValueError):
    """Invalid graph construction or an operation outside its domain."""


class EnumerationCapError(GraphError):
    """Raised when an exhaustive subset enumeration would be infeasible."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightedGraph:
    """A finite simple graph with vertex measure ``mu``, edge weights ``g`` and potential ``q``.

    Vertices are the integers ``0..n-1``. ``edges`` holds each unordered pair
    once as ``(i, j)`` with ``i < j``; ``g[k]`` is the weight of ``edges[k]``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    mu: np.ndarray
    g: np.ndarray
    q: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("a graph needs at least one vertex")
        canon = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            e = (min(i, j), max(i, j))
            if e in seen:
                raise GraphError(f"duplicate edge {e}")
            seen.add(e)
            canon.append(e)
        object.__setattr__(self, "edges", tuple(canon))
        mu, g, q = _frozen(self.mu), _frozen(self.g), _frozen(self.q)
        if mu.shape != (self.n,) or q.shape != (self.n,):
            raise GraphError("mu and q need one entry per vertex")
        if g.shape != (len(canon),):
            raise GraphError("g needs one entry per edge")
        if np.any(mu <= 0):
            raise GraphError("vertex weights mu must be positive")
        if np.any(g <= 0):
            raise GraphError("edge weights g must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "q", q)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.n:
                raise GraphError("labels need one entry per vertex")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, n, edges, mu=None, g=None, q=None, labels=None) -> "WeightedGraph":
        """Build a graph; omitted weights default to 1 (``mu``, ``g``) and 0 (``q``)."""
        edges = tuple((int(i), int(j)) for i, j in edges)
        mu = np.ones(n) if mu is None else np.broadcast_to(np.asarray(mu, float), (n,))
        g = np.ones(len(edges)) if g is None else np.broadcast_to(np.asarray(g, float), (len(edges),))
        q = np.zeros(n) if q is None else np.broadcast_to(np.asarray(q, float), (n,))
        return cls(n, edges, mu, g, q, labels)

    def replace(self, **changes) -> "WeightedGraph":
        kw = dict(n=self.n, edges=self.edges, mu=self.mu, g=self.g, q=self.q, labels=self.labels)
        kw.update(changes)
        return WeightedGraph(**kw)

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        """Symmetric n x n matrix with ``g_xy`` at edges and zeros elsewhere."""
        W = np.zeros((self.n, self.n))
        for (i, j), w in zip(self.edges, self.g):
            W[i, j] = W[j, i] = w
        W.setflags(write=False)
        return W

    @cached_property
    def adjacency(self) -> np.ndarray:
        return self.weight_matrix > 0

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, x: int) -> list[int]:
        return [int(y) for y in np.flatnonzero(self.adjacency[x])]

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """Hop-count distances; ``np.inf`` marks unreachable pairs."""
        D = shortest_path(self.adjacency.astype(float), unweighted=True, directed=False)
        D.setflags(write=False)
        return D

    @property
    def is_connected(self) -> bool:
        return bool(np.all(np.isfinite(self.distance_matrix)))

    def check_vertex(self, x) -> int:
        x = int(x)
        if not 0 <= x < self.n:
            raise GraphError(f"vertex {x} out of range for n={self.n}")
        return x

    def subset(self, members: Iterable[int]) -> tuple[int, ...]:
        """Validate an ordered vertex subset and return it as a tuple."""
        out = tuple(self.check_vertex(x) for x in members)
        if len(set(out)) != len(out):
            raise GraphError(f"repeated vertex in subset {out}")
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self, B: Sequence[int] | None = None) -> dict:
        d = {
            "n": self.n,
            "edges": [list(e) for e in self.edges],
            "mu": [float(v) for v in self.mu],
            "g": [float(v) for v in self.g],
            "q": [float(v) for v in self.q],
        }
        if self.labels is not None:
            d["labels"] = list(self.labels)
        if B is not None:
            d["B"] = [int(b) for b in B]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedGraph":
        n = int(d["n"])
        edges = [tuple(e) for e in d["edges"]]
        return cls.from_edges(n, edges, mu=d["mu"], g=d["g"], q=d.get("q"), labels=d.get("labels"))


def load_graph(path) -> tuple[WeightedGraph, tuple[int, ...] | None]:
    """Read a graph JSON file. Returns the graph and its ``B`` list if present."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    graph = WeightedGraph.from_dict(d)
    B = graph.subset(d["B"]) if "B" in d else None
    return graph, B


def save_graph(graph: WeightedGraph, path, B: Sequence[int] | None = None) -> None:
    Path(path).write_text(json.dumps(graph.to_dict(B), indent=1) + "\n", encoding="utf-8")


def path_graph(n: int, **weights) -> WeightedGraph:
    return WeightedGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)], **weights)


def cycle_graph(n: int, **weights) -> WeightedGraph:
    return WeightedGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], **weights)


# -- distances and extreme points -------------------------------------------


def graph_distance(graph: WeightedGraph, x: int, y: int) -> int | None:
    """Hop-count distance between ``x`` and ``y``; ``None`` if unreachable.

    Edge weights are ignored: the distance is the minimal number of edges
    on a path.
    """
    d = graph.distance_matrix[graph.check_vertex(x), graph.check_vertex(y)]
    return None if not np.isfinite(d) else int(d)


def _require_connected(graph: WeightedGraph) -> None:
    if not graph.is_connected:
        raise GraphError("graph is disconnected")


def _extreme_points_from(D: np.ndarray, S: Sequence[int], B: Sequence[int]) -> tuple[int, ...]:
    S = list(S)
    found = set()
    for b in B:
        row = D[b, S]
        m = row.min()
        hits = np.flatnonzero(row == m)
        if len(hits) == 1:
            found.add(S[hits[0]])
    return tuple(x for x in S if x in found)


def extreme_points(graph: WeightedGraph, S: Sequence[int], B: Sequence[int]) -> tuple[int, ...]:
    """Points of ``S`` that are the strictly unique nearest point of ``S`` from some ``b`` in ``B``.

    The result keeps the order of ``S``.
    """
    S, B = graph.subset(S), graph.subset(B)
    if not S:
        raise GraphError("S must be nonempty")
    _require_connected(graph)
    return _extreme_points_from(graph.distance_matrix, S, B)


@dataclass(frozen=True)
class TPCResult:
    holds: bool
    witness: tuple[int, ...] | None = None

    def __bool__(self):
        return self.holds


def _member_matrix(masks: np.ndarray, n: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def _unique_nearest_masks(D: np.ndarray, sources: Sequence[int], targets: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """For each source row and each subset mask, the bit of the unique nearest target (or 0).

    ``targets`` maps bit position k to the vertex id it represents.
    """
    member = _member_matrix(masks, len(targets))
    out = np.zeros((len(sources), len(masks)), dtype=np.int64)
    big = np.inf
    for k, b in enumerate(sources):
        dm = np.where(member, D[b, targets][None, :], big)
        mn = dm.min(axis=1)
        unique = ((dm == mn[:, None]).sum(axis=1) == 1) & np.isfinite(mn)
        arg = dm.argmin(axis=1)
        out[k] = np.where(unique, np.left_shift(1, arg), 0)
    return out


def _lex_first(masks: np.ndarray) -> int:
    """Lexicographically smallest subset (as a sorted tuple) among the given bitmasks."""
    cand = np.asarray(masks, dtype=np.int64)
    rest = cand.copy()
    while len(cand) > 1:
        # an exhausted tuple is a proper prefix, which sorts first
        low = np.where(rest == 0, -1, np.bitwise_count((rest & -rest) - 1).astype(np.int64))
        keep = low == low.min()
        cand, rest = cand[keep], rest[keep]
        if low.min() < 0:
            break
        rest = rest & ~np.left_shift(1, low[keep])
    return int(cand[0])


def _mask_to_tuple(mask: int, targets: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(targets[k]) for k in range(len(targets)) if mask >> k & 1)


def _tpc_over(D, interior: Sequence[int], sources: Sequence[int], cap: int, witness: bool) -> TPCResult:
    m = len(interior)
    if m > cap:
        raise EnumerationCapError(f"{m} vertices exceed the enumeration cap {cap}")
    targets = np.asarray(interior, dtype=np.int64)
    total = 1 << m
    step = 1 << min(m, _CHUNK_BITS)
    violators = []
    for start in range(0, total, step):
        masks = np.arange(start, min(start + step, total), dtype=np.int64)
        ext = np.bitwise_or.reduce(_unique_nearest_masks(D, sources, targets, masks), axis=0) if len(sources) else np.zeros(len(masks), np.int64)
        bad = (np.bitwise_count(masks) >= 2) & (np.bitwise_count(ext) < 2)
        if bad.any():
            if not witness:
                return TPCResult(False, None)
            violators.append(masks[bad])
    if not violators:
        return TPCResult(True, None)
    violators = np.concatenate(violators)
    # prefer witnesses avoiding the sources: those are not explained by d(b, b) = 0
    src = np.isin(targets, np.asarray(sources, dtype=np.int64))
    smask = int(np.sum(np.left_shift(1, np.flatnonzero(src)))) if src.any() else 0
    clean = violators[(violators & smask) == 0]
    first = _lex_first(clean if len(clean) else violators)
    return TPCResult(False, _mask_to_tuple(first, targets))


def check_two_points_condition(graph: WeightedGraph, B: Sequence[int], cap: int = TPC_ENUMERATION_CAP,
                               witness: bool = True) -> TPCResult:
    """Exhaustive Two-Points Condition check of ``graph`` with respect to ``B``.

    Every subset S with at least two vertices must have at least two extreme
    points. When the condition fails, ``witness`` is the lexicographically
    smallest violating S (sorted tuples compared in vertex order), taken
    among the violators disjoint from B when there are any. Pass
    ``witness=False`` to stop at the first violating chunk.
    """
    B = graph.subset(B)
    _require_connected(graph)
    return _tpc_over(graph.distance_matrix, range(graph.n), B, cap, witness)


def two_points_condition_table(graph: WeightedGraph, cap: int = 12) -> np.ndarray:
    """TPC verdict for every choice of B at once.

    Returns a boolean array indexed by the bitmask of B (bit x set iff x in B).
    """
    _require_connected(graph)
    n = graph.n
    if n > cap:
        raise EnumerationCapError(f"{n} vertices exceed the table cap {cap}")
    masks = np.arange(1 << n, dtype=np.int64)
    per_b = _unique_nearest_masks(graph.distance_matrix, range(n), np.arange(n), masks)
    big = np.bitwise_count(masks) >= 2
    ext = np.zeros((1 << n, 1 << n), dtype=np.int64)
    holds = np.zeros(1 << n, dtype=bool)
    holds[0] = not big.any()
    for bmask in range(1, 1 << n):
        top = bmask.bit_length() - 1
        ext[bmask] = ext[bmask ^ (1 << top)] | per_b[top]
        holds[bmask] = not np.any(big & (np.bitwise_count(ext[bmask]) < 2))
    return holds


# -- graphs with boundary ---------------------------------------------------


@dataclass(frozen=True)
class GraphWithBoundary:
    """Interior vertices ``0..interior_count-1`` followed by boundary vertices.

    ``graph`` holds edges and weights over the union; potentials on boundary
    vertices are unused.
    """

    graph: WeightedGraph
    interior_count: int
    boundary: tuple[int, ...] = field(default=())

    def __post_init__(self):
        b = tuple(int(z) for z in self.boundary)
        object.__setattr__(self, "boundary", b)
        if set(b) & set(range(self.interior_count)):
            raise GraphError("boundary and interior overlap")
        if any(not self.interior_count <= z < self.graph.n for z in b):
            raise GraphError("boundary vertex out of range")

    @property
    def interior(self) -> tuple[int, ...]:
        return tuple(range(self.interior_count))

    def interior_neighbors(self, z: int) -> list[int]:
        return [x for x in self.graph.neighbors(z) if x < self.interior_count]


def build_boundary_copy(graph: WeightedGraph, B: Sequence[int], mu_boundary: float = 1.0,
                        g_boundary: float = 1.0) -> GraphWithBoundary:
    """Attach a pendant copy ``b~`` to each ``b`` in ``B``.

    Copy ``k`` gets id ``graph.n + k`` and a single edge to ``B[k]``.
    """
    B = graph.subset(B)
    if not B:
        raise GraphError("B must be nonempty")
    n = graph.n
    edges = list(graph.edges) + [(b, n + k) for k, b in enumerate(B)]
    mu = np.concatenate([graph.mu, np.full(len(B), float(mu_boundary))])
    g = np.concatenate([graph.g, np.full(len(B), float(g_boundary))])
    q = np.concatenate([graph.q, np.zeros(len(B))])
    labels = None
    if graph.labels is not None:
        labels = graph.labels + tuple(graph.labels[b] + "~" for b in B)
    big = WeightedGraph.from_edges(n + len(B), edges, mu=mu, g=g, q=q, labels=labels)
    return GraphWithBoundary(big, n, tuple(range(n, n + len(B))))


def check_two_points_condition_boundary(gb: GraphWithBoundary, cap: int = TPC_ENUMERATION_CAP,
                                        witness: bool = True) -> TPCResult:
    """TPC for a graph with boundary: subsets of the interior, extreme w.r.t. the boundary."""
    if not gb.graph.is_connected:
        raise GraphError("graph is disconnected")
    return _tpc_over(gb.graph.distance_matrix, gb.interior, gb.boundary, cap, witness)
