"""Two isospectral six-vertex graphs whose interior spectral data agree on B = {v1, v2}."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .graph import WeightedGraph
from .randwalk import walk_from_weights
from .spectral import (InteriorSpectralData, decompose, gram_matrices, restrict_to_subset,
                       spectral_data_equal)

WALK_MIN_C = 4.0


class FixtureError(ValueError):
    pass


def _read(name: str) -> dict:
    return json.loads(resources.files("gsi").joinpath("data", name).read_text(encoding="utf-8"))


def expected_values() -> dict:
    return _read("appendix_expected.json")


def _load_graph(name: str, C: float) -> tuple[WeightedGraph, tuple[int, ...]]:
    d = _read(name)
    g = WeightedGraph.from_dict(d)
    return g.replace(mu=np.full(g.n, float(C))), tuple(d["B"])


@dataclass(frozen=True)
class AppendixPair:
    left: WeightedGraph
    right: WeightedGraph
    B_left: tuple[int, ...]
    B_right: tuple[int, ...]
    exact_eigenvalues: np.ndarray
    exact_phi_B: tuple[tuple[float, np.ndarray], ...]

    def exact_gram(self) -> list[tuple[float, np.ndarray]]:
        """Per-eigenvalue Gram blocks on B from the exact eigenvector values."""
        return [(lam, Phi @ Phi.T) for lam, Phi in self.exact_phi_B]


def appendix_pair(C: float = 1.0) -> AppendixPair:
    """The pair with ``mu = C`` and ``g = 1``; exact values are for ``C = 1`` and scale as documented.

    Eigenvalues scale by ``1/C`` and eigenvector values by ``C^{-1/2}``.
    """
    if C <= 0:
        raise FixtureError("C must be positive")
    left, B_left = _load_graph("appendix_left.json", C)
    right, B_right = _load_graph("appendix_right.json", C)
    exp = expected_values()
    lam = np.array(sorted(e["value"] for e in exp["eigenvalues"])) / C
    phi = tuple((p["eigenvalue"] / C, np.array(p["columns"]).T / np.sqrt(C)) for p in exp["phi_B"])
    return AppendixPair(left, right, B_left, B_right, lam, phi)


def printed_laplacians() -> tuple[np.ndarray, np.ndarray]:
    exp = expected_values()
    return np.array(exp["laplacian_left"], dtype=float), np.array(exp["laplacian_right"], dtype=float)


def exact_spectral_data(pair: AppendixPair) -> InteriorSpectralData:
    cols, eig, groups = [], [], []
    k = 0
    for lam, Phi in pair.exact_phi_B:
        cols.append(Phi)
        eig.extend([lam] * Phi.shape[1])
        groups.append(np.arange(k, k + Phi.shape[1]))
        k += Phi.shape[1]
    return InteriorSpectralData(pair.B_left, np.array(eig), np.hstack(cols), tuple(groups))


def degree_signature(graph: WeightedGraph) -> tuple[int, ...]:
    return tuple(sorted(int(d) for d in graph.degrees))


@dataclass(frozen=True)
class IsospectralReport:
    C: float
    spectral_equal: bool
    max_eigenvalue_diff: float
    max_gram_diff: float
    walks_checked: bool
    max_walk_diff: float | None
    walk_horizon: int

    @property
    def holds(self) -> bool:
        ok = self.spectral_equal
        if self.walks_checked:
            ok = ok and self.max_walk_diff is not None and self.max_walk_diff <= 1e-12
        return ok


def _gram_diff(a: InteriorSpectralData, b: InteriorSpectralData) -> float:
    ga = sorted(gram_matrices(a), key=lambda p: p[0])
    gb = sorted(gram_matrices(b), key=lambda p: p[0])
    if len(ga) != len(gb):
        return float("inf")
    return max(float(np.abs(x[1] - y[1]).max()) for x, y in zip(ga, gb))


def walk_return_table(graph: WeightedGraph, B, T: int) -> np.ndarray:
    """``out[t, i, k] = P(H_t^{B[i]} = B[k])`` by exact matrix powers."""
    P = walk_from_weights(graph).P
    B = list(B)
    out = np.zeros((T + 1, len(B), len(B)))
    Pt = np.eye(graph.n)
    for t in range(T + 1):
        out[t] = Pt[np.ix_(B, B)]
        Pt = Pt @ P
    return out


def verify_isospectral_pair(C: float = 1.0, check_walks: bool | None = None, T: int = 50,
                            tol: float = 1e-10) -> IsospectralReport:
    """Compare interior spectral data and, for ``C >= 4``, walk probabilities on B.

    ``check_walks=None`` checks walks exactly when ``C >= 4``.
    """
    if check_walks is None:
        check_walks = C >= WALK_MIN_C
    if check_walks and C < WALK_MIN_C:
        raise FixtureError(f"walks need C >= {WALK_MIN_C:g} (a vertex has degree 4)")
    pair = appendix_pair(C)
    a = restrict_to_subset(decompose(pair.left), pair.B_left)
    b = restrict_to_subset(decompose(pair.right), pair.B_right)
    eq = spectral_data_equal(a, b, tol)
    eig_diff = float(np.abs(np.sort(a.eigenvalues) - np.sort(b.eigenvalues)).max())
    walk_diff = None
    if check_walks:
        wl = walk_return_table(pair.left, pair.B_left, T)
        wr = walk_return_table(pair.right, pair.B_right, T)
        walk_diff = float(np.abs(wl - wr).max())
    return IsospectralReport(float(C), eq, eig_diff, _gram_diff(a, b), check_walks, walk_diff, T)


def perturbed_right(eps: float = 1e-3, edge: int = 0, C: float = 1.0) -> WeightedGraph:
    """The right graph with one edge weight changed by ``eps`` (negative control)."""
    right = appendix_pair(C).right
    g = right.g.copy()
    g[edge] += eps
    return right.replace(g=g)

