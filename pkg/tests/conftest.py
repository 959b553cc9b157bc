"""Shared random generators for graphs and walk models."""

from __future__ import annotations

import numpy as np
import pytest

from gsi.graph import WeightedGraph
from gsi.randwalk import walk_from_conductances


def random_connected_edges(rng: np.random.Generator, n: int, p: float = 0.4) -> list[tuple[int, int]]:
    """A random spanning tree plus independent extra edges with probability ``p``."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.add((i, j))
    return sorted(edges)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, q_scale: float = 1.0) -> WeightedGraph:
    edges = random_connected_edges(rng, n, p)
    return WeightedGraph.from_edges(n, edges, mu=rng.uniform(0.5, 2.0, n), g=rng.uniform(0.5, 2.0, len(edges)),
                                    q=rng.uniform(-q_scale, q_scale, n))


def random_stable_graph(rng: np.random.Generator, n: int, p: float = 0.4) -> WeightedGraph:
    """Random weights with the spectrum of ``-Delta + q`` inside [0, 2].

    ``mu`` exceeds the weighted degree by ``extra`` and ``0 <= q <= extra / mu``,
    so ``|1 - lambda| <= 1`` and the discrete heat flow does not blow up.
    """
    edges = random_connected_edges(rng, n, p)
    g = rng.uniform(0.5, 2.0, len(edges))
    W = np.zeros((n, n))
    for (i, j), w in zip(edges, g):
        W[i, j] = W[j, i] = w
    deg = W.sum(axis=1)
    extra = rng.uniform(0.2, 1.0, n) * np.maximum(deg, 1.0)
    mu = deg + extra
    q = rng.uniform(0.0, 1.0, n) * extra / mu
    return WeightedGraph.from_edges(n, edges, mu=mu, g=g, q=q)


def random_walk_model(rng: np.random.Generator, n: int, p: float = 0.4, lazy: float = 0.5):
    """Random conductances; each vertex stays put with positive weight with probability ``lazy``."""
    g = WeightedGraph.from_edges(n, random_connected_edges(rng, n, p))
    c = rng.uniform(0.5, 2.0, len(g.edges))
    c_self = np.where(rng.random(n) < lazy, rng.uniform(0.1, 1.0, n), 0.0)
    if n == 1:
        c_self[0] = 1.0  # an isolated vertex needs a staying weight
    return walk_from_conductances(g, c, c_self)


def path(n: int, **kw) -> WeightedGraph:
    return WeightedGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)], **kw)


def cycle(n: int, **kw) -> WeightedGraph:
    return WeightedGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
