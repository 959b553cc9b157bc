"""Schrodinger operators -Delta + q, mu-orthonormal eigendata and interior spectral data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import GraphError, WeightedGraph

CLUSTER_TOL = 1e-8
UC_TOL = 1e-9


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorMatrix:
    """Matrix of ``-Delta_X + q`` acting on column vectors, with its measure ``mu``."""

    matrix: np.ndarray
    mu: np.ndarray

    @property
    def n(self) -> int:
        return len(self.mu)

    def inner(self, u, v) -> float:
        return float(np.sum(self.mu * u * v))


def laplacian_matrix(graph: WeightedGraph) -> np.ndarray:
    """``Delta_X`` as a matrix: ``(Delta u)(x) = (1/mu_x) sum_y g_xy (u(y) - u(x))``."""
    W = graph.weight_matrix
    return (W - np.diag(W.sum(axis=1))) / graph.mu[:, None]


def assemble_operator(graph: WeightedGraph) -> OperatorMatrix:
    A = -laplacian_matrix(graph) + np.diag(graph.q)
    return OperatorMatrix(A, graph.mu.copy())


def _group_indices(eigenvalues: np.ndarray, cluster_tol: float) -> tuple[np.ndarray, ...]:
    groups, cur = [], [0]
    for k in range(1, len(eigenvalues)):
        lam = eigenvalues[k]
        if abs(lam - eigenvalues[cur[-1]]) <= cluster_tol * max(1.0, abs(lam)):
            cur.append(k)
        else:
            groups.append(np.array(cur))
            cur = [k]
    groups.append(np.array(cur))
    return tuple(groups)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues, mu-orthonormal eigenvectors (columns) and multiplicity groups."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mu: np.ndarray
    groups: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def group_values(self) -> np.ndarray:
        return np.array([self.eigenvalues[g].mean() for g in self.groups])


def eigendecompose(op: OperatorMatrix, cluster_tol: float = CLUSTER_TOL) -> SpectralDecomposition:
    """Full eigendecomposition in the mu-weighted inner product.

    Solves the symmetric problem for ``D^{1/2} A D^{-1/2}`` and maps the
    eigenvectors back through ``D^{-1/2}``, so columns satisfy
    ``sum_x mu_x phi_j(x) phi_k(x) = delta_jk``.
    """
    s = np.sqrt(op.mu)
    S = op.matrix * s[:, None] / s[None, :]
    S = 0.5 * (S + S.T)
    try:
        lam, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"symmetric eigensolver failed: {exc}") from exc
    phi = U / s[:, None]
    norms = np.sqrt(np.einsum("x,xj,xj->j", op.mu, phi, phi))
    phi = phi / norms
    # sign convention: the first clearly nonzero entry of each eigenvector is positive
    lead = np.argmax(np.abs(phi) > 1e-10 * np.abs(phi).max(axis=0), axis=0)
    phi = phi * np.where(phi[lead, np.arange(phi.shape[1])] < 0, -1.0, 1.0)
    return SpectralDecomposition(lam, phi, op.mu.copy(), _group_indices(lam, cluster_tol))


def decompose(graph: WeightedGraph, cluster_tol: float = CLUSTER_TOL) -> SpectralDecomposition:
    return eigendecompose(assemble_operator(graph), cluster_tol)


@dataclass(frozen=True)
class InteriorSpectralData:
    """Eigenvalues with their eigenvector values on ``B``.

    ``phi_B`` has one row per vertex of ``B`` (in order) and one column per
    eigenvalue. ``mu_B`` is carried along when known.
    """

    B: tuple[int, ...]
    eigenvalues: np.ndarray
    phi_B: np.ndarray
    groups: tuple[np.ndarray, ...]
    mu_B: np.ndarray | None = None

    def __post_init__(self):
        if self.phi_B.shape != (len(self.B), len(self.eigenvalues)):
            raise SpectralError("phi_B must be |B| x (number of eigenvalues)")
        idx = np.sort(np.concatenate(self.groups)) if self.groups else np.array([], int)
        if not np.array_equal(idx, np.arange(len(self.eigenvalues))):
            raise SpectralError("groups must partition the eigenvalue indices")

    def group_values(self) -> np.ndarray:
        return np.array([self.eigenvalues[g].mean() for g in self.groups])


def restrict_to_subset(dec: SpectralDecomposition, B: Sequence[int]) -> InteriorSpectralData:
    B = tuple(int(b) for b in B)
    if any(not 0 <= b < dec.n for b in B) or len(set(B)) != len(B):
        raise GraphError(f"invalid vertex subset {B}")
    idx = list(B)
    return InteriorSpectralData(B, dec.eigenvalues.copy(), dec.eigenvectors[idx, :].copy(), dec.groups,
                                dec.mu[idx].copy())


@dataclass(frozen=True)
class UCResult:
    holds: bool
    witness_eigenvalue: float | None = None

    def __bool__(self):
        return self.holds


def unique_continuation_check(dec: SpectralDecomposition, B: Sequence[int], tol: float = UC_TOL) -> UCResult:
    """Whether no nonzero eigenfunction vanishes identically on ``B``.

    Per multiplicity group the restriction of the eigenvector block to ``B``
    must have full column rank. The singular-value threshold is ``tol`` times
    the largest singular value of the unrestricted block, so it follows the
    scale set by ``mu``.
    """
    idx = list(B)
    for grp in dec.groups:
        full = dec.eigenvectors[:, grp]
        scale = np.linalg.norm(full, 2)
        block = full[idx, :]
        if len(idx) < len(grp):
            return UCResult(False, float(dec.eigenvalues[grp].mean()))
        if len(grp) == 1:
            smin = np.linalg.norm(block)
        else:
            smin = np.linalg.svd(block, compute_uv=False)[-1]
        if smin <= tol * scale:
            return UCResult(False, float(dec.eigenvalues[grp].mean()))
    return UCResult(True, None)


def gram_matrices(data: InteriorSpectralData) -> list[tuple[float, np.ndarray]]:
    """Residue matrices ``Q_j = Phi_j Phi_j^T`` on ``B``, one per group."""
    out = []
    for grp in data.groups:
        Phi = data.phi_B[:, grp]
        out.append((float(data.eigenvalues[grp].mean()), Phi @ Phi.T))
    return out


def spectral_data_equal(a: InteriorSpectralData, b: InteriorSpectralData, tol: float = 1e-8,
                        gram_tol: float | None = None) -> bool:
    """Equality of interior spectral data up to orthogonal changes within each eigenspace.

    Eigenvalues are compared with ``tol`` (relative above magnitude 1) and
    Gram matrices entrywise with ``gram_tol`` (defaults to ``tol``).
    """
    if len(a.B) != len(b.B):
        raise SpectralError("spectral data over different |B|")
    gram_tol = tol if gram_tol is None else gram_tol
    if len(a.eigenvalues) != len(b.eigenvalues):
        return False
    la, lb = np.sort(a.eigenvalues), np.sort(b.eigenvalues)
    if np.any(np.abs(la - lb) > tol * np.maximum(1.0, np.abs(la))):
        return False
    ga, gb = gram_matrices(a), gram_matrices(b)
    if len(ga) != len(gb):
        return False
    ga.sort(key=lambda p: p[0])
    gb.sort(key=lambda p: p[0])
    for (_, Qa), (_, Qb) in zip(ga, gb):
        if Qa.size and np.max(np.abs(Qa - Qb)) > gram_tol:
            return False
    return True


def write_spectral_csv(data: InteriorSpectralData, path) -> None:
    """One row per eigenvalue: value, group id, then phi_j at each vertex of B."""
    group_of = np.empty(len(data.eigenvalues), dtype=int)
    for gid, grp in enumerate(data.groups):
        group_of[grp] = gid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["eigenvalue", "group"] + [f"phi@{b}" for b in data.B])
        for j, lam in enumerate(data.eigenvalues):
            w.writerow([f"{lam:.17g}", group_of[j]] + [f"{v:.17g}" for v in data.phi_B[:, j]])


def read_spectral_csv(path) -> InteriorSpectralData:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    B = tuple(int(h.split("@")[1]) for h in header[2:])
    lam = np.array([float(r[0]) for r in body])
    gid = np.array([int(r[1]) for r in body], dtype=int)
    phi = np.array([[float(v) for v in r[2:]] for r in body]).T.reshape(len(B), len(body))
    groups = tuple(np.flatnonzero(gid == k) for k in range(gid.max() + 1)) if len(body) else ()
    return InteriorSpectralData(B, lam, phi, groups)
