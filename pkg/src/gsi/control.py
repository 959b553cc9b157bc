"""Observability (mode coefficients from B-measurements) and controllability (reachability, steering)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .evolution import FieldHistory, SourceTerm, heat_step_matrix, solve_discrete_heat_source
from .graph import WeightedGraph
from .spectral import InteriorSpectralData

METHODS = ("exact-solve", "limit")
RANK_TOL = 1e-9
LIMIT_TOL = 1e-6
LIMIT_PATIENCE = 5
LIMIT_T_MAX = 200
STEER_TOL = 1e-8


class ControlError(ValueError):
    pass


class SingularSystemError(ControlError):
    """Raised when an eigenspace is invisible on B (unique continuation fails)."""


class LimitNotConvergedError(ControlError):
    pass


class UnreachableTargetError(ControlError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class CoefficientVector:
    """``values[j] = <w, phi_j>_mu`` in the order of the spectral data."""

    values: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def reconstruct(self, phi: np.ndarray) -> np.ndarray:
        return phi @ self.values


def _check_visible(data: InteriorSpectralData, rank_tol: float = RANK_TOL) -> None:
    for grp in data.groups:
        block = data.phi_B[:, grp]
        s = np.linalg.svd(block, compute_uv=False) if block.size else np.zeros(1)
        scale = max(1.0, float(np.abs(data.phi_B).max())) if data.phi_B.size else 1.0
        if len(s) < len(grp) or s[-1] <= rank_tol * scale:
            lam = float(data.eigenvalues[grp].mean())
            raise SingularSystemError(f"eigenspace of {lam:.12g} is not determined by values on B")


def _exact_solve(measurement: np.ndarray, data: InteriorSpectralData, bases: np.ndarray,
                 rank_tol: float) -> CoefficientVector:
    _check_visible(data, rank_tol)
    T = measurement.shape[0] - 1
    powers = np.power.outer(bases, np.arange(T + 1)).T  # (T+1, N)
    powers[0] = 1.0
    # rows scaled so growing modes do not swamp the others, then columns to unit norm
    rows = 1.0 / np.maximum(1.0, np.abs(powers).max(axis=1))
    A = (rows[:, None, None] * powers[:, None, :] * data.phi_B[None, :, :]).reshape(-1, len(bases))
    b = (rows[:, None] * measurement).reshape(-1)
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    s = np.linalg.svd(A / scale, compute_uv=False)
    if len(s) < len(bases) or s[-1] <= rank_tol * s[0]:
        raise SingularSystemError("measurement system is rank deficient")
    coef, *_ = np.linalg.lstsq(A / scale, b, rcond=None)
    coef = coef / scale
    return CoefficientVector(coef, "exact-solve",
                             {"condition": float(s[0] / s[-1]), "residual": float(np.linalg.norm(A @ coef - b))})


def _converged_estimate(estimates, tol: float, patience: int):
    """Walk a sequence of estimates; return (value, t, converged).

    Convergence means ``patience`` consecutive steps with change below
    ``tol``. After that the walk continues while the change keeps shrinking,
    so later peeling steps start from the most accurate value reached.
    """
    prev = None
    quiet = 0
    best = None
    best_change = np.inf
    for t, est in estimates:
        if prev is not None:
            change = float(np.max(np.abs(est - prev))) if est.size else 0.0
            if best is not None:
                if change < best_change:
                    best, best_change = (est, t), change
                else:
                    return best[0], best[1], True
            else:
                quiet = quiet + 1 if change < tol else 0
                if quiet >= patience:
                    best, best_change = (est, t), change
        prev = est
    if best is not None:
        return best[0], best[1], True
    return prev, None, False


def _limit_peel(measurement: np.ndarray, data: InteriorSpectralData, bases_by_group: np.ndarray,
                tol: float, patience: int, t_start: int = 1) -> CoefficientVector:
    """Peel mode groups in order of decreasing ``|base|``.

    Groups whose bases are ``rho`` and ``-rho`` share a level; with
    ``c(t) = R(t) / rho^t`` the averages ``(c(t) + c(t+1)) / 2`` and
    ``(-1)^t (c(t) - c(t+1)) / 2`` isolate the two parts. A zero base is
    filled in from the residual at t = 0.
    """
    _check_visible(data)
    U = np.asarray(measurement, dtype=float)
    T = U.shape[0] - 1
    times = np.arange(T + 1)
    resid = U.copy()
    coef = np.zeros(len(data.eigenvalues))
    stops = {}
    mags = np.abs(bases_by_group)
    order = np.argsort(-mags, kind="stable")
    levels = []
    for gid in order:
        if levels and abs(mags[gid] - mags[levels[-1][0]]) <= 1e-12 * max(1.0, mags[gid]):
            levels[-1].append(gid)
        else:
            levels.append([gid])

    def assign(gid, values):
        grp = data.groups[gid]
        sol, *_ = np.linalg.lstsq(data.phi_B[:, grp], values, rcond=None)
        coef[grp] = sol
        return data.phi_B[:, grp] @ sol

    for level in levels:
        rho = float(mags[level[0]])
        if rho == 0.0:
            for gid in level:
                assign(gid, resid[0])
            continue
        pos = [g for g in level if bases_by_group[g] > 0]
        neg = [g for g in level if bases_by_group[g] < 0]
        with np.errstate(over="ignore", invalid="ignore"):
            c = resid * (rho ** -times.astype(float))[:, None]

        def estimates():
            for t in range(t_start, T):
                a = 0.5 * (c[t] + c[t + 1])
                b = 0.5 * (-1) ** t * (c[t] - c[t + 1])
                est = np.concatenate([a, b])
                if not np.all(np.isfinite(est)):
                    return
                yield t, est

        est, t_stop, ok = _converged_estimate(estimates(), tol, patience)
        if not ok:
            lam = [float(data.eigenvalues[data.groups[g]].mean()) for g in level]
            raise LimitNotConvergedError(f"limit for eigenvalues {lam} not reached within t={T}")
        m = U.shape[1]
        a, b = est[:m], est[m:]
        for gid in pos:
            fit = assign(gid, a)
            resid -= np.outer(rho ** times.astype(float), fit)
        for gid in neg:
            fit = assign(gid, b)
            resid -= np.outer((-rho) ** times.astype(float), fit)
        stops[float(rho)] = t_stop
    return CoefficientVector(coef, "limit", {"stop_times": stops})


def _group_bases(data: InteriorSpectralData, bases: np.ndarray) -> np.ndarray:
    return np.array([bases[grp].mean() for grp in data.groups])


def extract_coefficients_discrete(measurement, data: InteriorSpectralData, method: str = "exact-solve",
                                  t_max: int | None = None, tol: float = LIMIT_TOL,
                                  patience: int = LIMIT_PATIENCE, rank_tol: float = RANK_TOL) -> CoefficientVector:
    """Coefficients of ``w`` from ``U_w(z, t)`` on B, where ``U_w(t) = (I + Delta - q)^t w``.

    ``measurement[t, i]`` is the value at ``data.B[i]`` and time t.
    """
    U = np.asarray(measurement, dtype=float)
    if U.ndim != 2 or U.shape[1] != len(data.B):
        raise ControlError("measurement must have shape (T+1, |B|)")
    if method not in METHODS:
        raise ControlError(f"unknown method {method!r}")
    bases = 1.0 - data.eigenvalues
    if method == "exact-solve":
        if U.shape[0] < len(data.eigenvalues):
            raise ControlError("measurement horizon shorter than the number of modes")
        return _exact_solve(U, data, bases, rank_tol)
    t_max = LIMIT_T_MAX if t_max is None else t_max
    if U.shape[0] < t_max + 1:
        raise ControlError(f"limit method needs t = 0..{t_max}")
    return _limit_peel(U[:t_max + 1], data, _group_bases(data, bases), tol, patience)


def extract_coefficients_continuous(measurement, data: InteriorSpectralData, time_step: float,
                                    method: str = "exact-solve", tol: float = LIMIT_TOL,
                                    patience: int = LIMIT_PATIENCE, rank_tol: float = RANK_TOL) -> CoefficientVector:
    """Coefficients of ``w`` from continuous heat samples ``Phi_w(z, k * time_step)`` on B."""
    U = np.asarray(measurement, dtype=float)
    if U.ndim != 2 or U.shape[1] != len(data.B):
        raise ControlError("measurement must have shape (T+1, |B|)")
    if method not in METHODS:
        raise ControlError(f"unknown method {method!r}")
    bases = np.exp(-data.eigenvalues * time_step)
    if method == "exact-solve":
        return _exact_solve(U, data, bases, rank_tol)
    return _limit_peel(U, data, _group_bases(data, bases), tol, patience)


# -- controllability ---------------------------------------------------------------


def impulse_response_matrix(graph: WeightedGraph, B, T: int) -> np.ndarray:
    """Columns ``U^f(., T)`` for unit sources ``f = delta_b`` at times s = 0..T-1.

    Column ``s * |B| + k`` belongs to time s and vertex ``B[k]``.
    """
    if T < 1:
        raise ControlError("T must be at least 1")
    B = graph.subset(B)
    M = heat_step_matrix(graph)
    cols = np.zeros((graph.n, T, len(B)))
    block = np.eye(graph.n)[:, list(B)]
    for s in range(T - 1, -1, -1):
        cols[:, s, :] = block
        block = M @ block
    return cols.reshape(graph.n, T * len(B))


@dataclass(frozen=True)
class ReachabilityResult:
    rank: int
    dimension: int
    singular_values: np.ndarray

    @property
    def full(self) -> bool:
        return self.rank == self.dimension


def reachability_rank(graph: WeightedGraph, B, T: int, tol: float = RANK_TOL) -> ReachabilityResult:
    """Rank of ``f -> U^f(., T)`` over sources on ``B x {0..T-1}``.

    Columns are normalized before the SVD; singular values above
    ``tol * sigma_max`` count.
    """
    R = impulse_response_matrix(graph, B, T)
    norms = np.linalg.norm(R, axis=0)
    R = R[:, norms > 0] / norms[norms > 0]
    s = np.linalg.svd(R, compute_uv=False) if R.size else np.zeros(0)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return ReachabilityResult(rank, graph.n, s)


def synthesize_control(graph: WeightedGraph, B, T: int, target, tol: float = STEER_TOL) -> SourceTerm:
    """Minimum-norm source on ``B x {0..T-1}`` steering zero to ``target`` at time T.

    The fit minimizes the mu-weighted residual. Raises
    :class:`UnreachableTargetError` carrying the residual when it exceeds
    ``tol``.
    """
    B = graph.subset(B)
    target = np.asarray(target, dtype=float)
    if target.shape != (graph.n,):
        raise ControlError("target must have one value per vertex")
    R = impulse_response_matrix(graph, B, T)
    w = np.sqrt(graph.mu)
    sol, *_ = np.linalg.lstsq(w[:, None] * R, w * target, rcond=None)
    f = SourceTerm(B, sol.reshape(T, len(B)))
    reached = solve_discrete_heat_source(graph, f, T).values[T]
    residual = float(np.sqrt(np.sum(graph.mu * (reached - target) ** 2)))
    if residual > tol:
        raise UnreachableTargetError(f"target not reachable: residual {residual:.3g}", residual)
    return f


def adjoint_backward_solve(graph: WeightedGraph, v, T: int) -> FieldHistory:
    """``psi(T) = v`` and ``psi(t-1) = psi(t) + (Delta - q) psi(t)`` down to t = 0."""
    if T < 1:
        raise ControlError("T must be at least 1")
    M = heat_step_matrix(graph)
    v = np.asarray(v, dtype=float)
    psi = np.zeros((T + 1, graph.n))
    psi[T] = v
    for t in range(T, 0, -1):
        psi[t - 1] = M @ psi[t]
    return FieldHistory(psi)


def adjoint_pairing(graph: WeightedGraph, psi: FieldHistory, f: SourceTerm) -> float:
    """``sum_t <psi(t+1), f(t)>_mu`` over t = 0..T-1."""
    T = psi.T
    F = f.dense(graph.n, T)
    return float(np.sum(graph.mu[None, :] * psi.values[1:] * F))


def write_source_csv(f: SourceTerm, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "z", "value"])
        for t in range(f.horizon):
            for k, z in enumerate(f.support):
                w.writerow([t, z, f"{f.values[t, k]:.17g}"])
