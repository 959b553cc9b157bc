"""Forward solvers: discrete/continuous heat, Schrodinger, discrete wave, and B-restricted kernels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import GraphError, GraphWithBoundary, WeightedGraph
from .spectral import SpectralDecomposition, decompose, laplacian_matrix

MODES = ("discrete", "continuous", "schrodinger")


@dataclass(frozen=True)
class SourceTerm:
    """A source supported on ``support`` x {0..horizon-1}.

    ``values[t, k]`` is the source at vertex ``support[k]`` and time ``t``.
    """

    support: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(int(x) for x in self.support))
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] != len(self.support):
            raise ValueError("values must have shape (horizon, |support|)")
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def dense(self, n: int, T: int | None = None) -> np.ndarray:
        """Values over all vertices as a (T, n) array, zero-padded in time."""
        T = self.horizon if T is None else T
        out = np.zeros((T, n), dtype=self.values.dtype)
        m = min(T, self.horizon)
        out[:m, list(self.support)] = self.values[:m]
        return out

    @classmethod
    def zero(cls, support: Sequence[int], horizon: int) -> "SourceTerm":
        return cls(tuple(support), np.zeros((horizon, len(support))))

    @classmethod
    def impulse(cls, support: Sequence[int], vertex: int, time: int, horizon: int, value=1.0) -> "SourceTerm":
        support = tuple(support)
        v = np.zeros((horizon, len(support)), dtype=np.result_type(value, float))
        v[time, support.index(vertex)] = value
        return cls(support, v)


@dataclass(frozen=True)
class FieldHistory:
    """``values[t, x]`` at times ``t * time_step``."""

    values: np.ndarray
    time_step: float = 1.0

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def on(self, B: Sequence[int]) -> np.ndarray:
        return self.values[:, list(B)]


def heat_step_matrix(graph: WeightedGraph) -> np.ndarray:
    """One step of the discrete heat flow: ``I + Delta_X - q``."""
    return np.eye(graph.n) + laplacian_matrix(graph) - np.diag(graph.q)


def solve_discrete_heat_ivp(graph: WeightedGraph, w, T: int) -> FieldHistory:
    if T < 0:
        raise ValueError("T must be nonnegative")
    M = heat_step_matrix(graph)
    w = np.asarray(w)
    u = np.zeros((T + 1, graph.n), dtype=np.result_type(w, float))
    u[0] = w
    for t in range(T):
        u[t + 1] = M @ u[t]
    return FieldHistory(u)


def _check_support(graph: WeightedGraph, f: SourceTerm) -> None:
    for x in f.support:
        graph.check_vertex(x)


def solve_discrete_heat_source(graph: WeightedGraph, f: SourceTerm, T: int) -> FieldHistory:
    """Zero initial state, ``u(t+1) = u(t) + (Delta - q) u(t) + f(t)``."""
    _check_support(graph, f)
    if f.horizon < T:
        raise ValueError(f"source horizon {f.horizon} shorter than T={T}")
    M = heat_step_matrix(graph)
    F = f.dense(graph.n, T)
    u = np.zeros((T + 1, graph.n), dtype=np.result_type(F, float))
    for t in range(T):
        u[t + 1] = M @ u[t] + F[t]
    return FieldHistory(u)


def duhamel_superpose(graph: WeightedGraph, f: SourceTerm, T: int) -> FieldHistory:
    """Sum of homogeneous flows started at time s from ``f(., s-1)``."""
    _check_support(graph, f)
    if f.horizon < T:
        raise ValueError(f"source horizon {f.horizon} shorter than T={T}")
    M = heat_step_matrix(graph)
    F = f.dense(graph.n, T)
    u = np.zeros((T + 1, graph.n), dtype=np.result_type(F, float))
    for s in range(1, T + 1):
        v = F[s - 1].copy()
        u[s] += v
        for t in range(s + 1, T + 1):
            v = M @ v
            u[t] += v
    return FieldHistory(u)


# -- continuous time via spectral expansion ---------------------------------


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-8
    out[big] = np.expm1(z[big]) / z[big]
    out[~big] = 1 + z[~big] / 2
    return out


def _evolve_spectral(dec: SpectralDecomposition, w, f: SourceTerm | None, T: int, dt: float,
                     schrodinger: bool) -> FieldHistory:
    lam, phi, mu = dec.eigenvalues, dec.eigenvectors, dec.mu
    rate = 1j * lam if schrodinger else -lam.astype(complex)
    prop = np.exp(rate * dt)
    w = np.zeros(dec.n) if w is None else np.asarray(w)
    c = phi.T @ (mu * w) + 0j
    F = None
    if f is not None:
        F = f.dense(dec.n, T)
    gain = dt * _phi1(rate * dt)
    if schrodinger:
        gain = -1j * gain
    out = np.zeros((T + 1, dec.n), dtype=complex)
    out[0] = phi @ c
    for k in range(T):
        c = prop * c
        if F is not None:
            c = c + gain * (phi.T @ (mu * F[k]))
        out[k + 1] = phi @ c
    if not schrodinger:
        out = out.real
    return FieldHistory(out, dt)


def solve_continuous_heat(graph: WeightedGraph, w=None, f: SourceTerm | None = None, T: int = 0,
                          time_step: float = 0.1, dec: SpectralDecomposition | None = None) -> FieldHistory:
    """``d/dt Phi = (Delta - q) Phi + f`` sampled at ``k * time_step``.

    The source is held constant on each sampling interval; the modal
    integration is exact for such sources.
    """
    dec = decompose(graph) if dec is None else dec
    return _evolve_spectral(dec, w, f, T, time_step, schrodinger=False)


def solve_schrodinger(graph: WeightedGraph, w=None, f: SourceTerm | None = None, T: int = 0,
                      time_step: float = 0.1, dec: SpectralDecomposition | None = None) -> FieldHistory:
    """``i d/dt Psi - Delta Psi + q Psi = f`` sampled at ``k * time_step`` (complex values)."""
    dec = decompose(graph) if dec is None else dec
    return _evolve_spectral(dec, w, f, T, time_step, schrodinger=True)


def default_time_step(eigenvalues: np.ndarray, safety: float = 0.9) -> float:
    """Sampling step with ``dt * span < pi/2`` and ``dt * max|lambda| < pi/2``."""
    lam = np.asarray(eigenvalues)
    span = max(float(lam.max() - lam.min()), float(np.abs(lam).max()), 1e-12)
    return safety * (np.pi / 2) / span


# -- B-restricted kernels ------------------------------------------------------


@dataclass(frozen=True)
class HeatKernelTable:
    """Impulse responses ``values[t, i, k] = sum_j base_j^t phi_j(B[i]) phi_j(B[k])``.

    The base is ``1 - lambda`` (discrete), ``exp(-lambda dt)`` (continuous) or
    ``exp(i lambda dt)`` (schrodinger). This is the response at ``B[i]`` to
    the source ``delta_{B[k]} / mu_{B[k]}``; multiplying by ``mu_B[i]`` gives
    the response to a unit initial value at ``B[i]`` observed at ``B[k]``.
    """

    B: tuple[int, ...]
    mode: str
    values: np.ndarray
    time_step: float = 1.0
    mu_B: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "B", tuple(int(b) for b in self.B))
        if self.values.ndim != 3 or self.values.shape[1:] != (len(self.B), len(self.B)):
            raise ValueError("values must have shape (T+1, |B|, |B|)")

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def transition(self) -> np.ndarray:
        """``mu_B[k] * values[t, i, k]``: for discrete walks, P(H_t from B[i] is at B[k])."""
        if self.mu_B is None:
            raise ValueError("table carries no mu_B")
        return self.values * self.mu_B[None, None, :]


def _bases(eigenvalues: np.ndarray, mode: str, dt: float) -> np.ndarray:
    if mode == "discrete":
        return 1.0 - eigenvalues
    if mode == "continuous":
        return np.exp(-eigenvalues * dt)
    return np.exp(1j * eigenvalues * dt)


def kernel_from_modes(bases: np.ndarray, Phi: np.ndarray, T: int) -> np.ndarray:
    """``sum_j bases_j^t Phi[:, j] Phi[:, j]^T`` for t = 0..T."""
    powers = np.power.outer(bases, np.arange(T + 1)).T  # (T+1, N)
    powers[0] = 1.0
    return np.einsum("tj,ij,kj->tik", powers, Phi, Phi)


def heat_kernel_table(graph: WeightedGraph, B: Sequence[int], T: int, mode: str = "discrete",
                      time_step: float = 1.0, dec: SpectralDecomposition | None = None) -> HeatKernelTable:
    """Impulse-response table on B for t in {0, dt, ..., T dt}, via the eigen-expansion."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    B = graph.subset(B)
    if mode != "discrete" and time_step <= 0:
        raise ValueError("time_step must be positive")
    dt = 1.0 if mode == "discrete" else float(time_step)
    dec = decompose(graph) if dec is None else dec
    vals = kernel_from_modes(_bases(dec.eigenvalues, mode, dt), dec.eigenvectors[list(B), :], T)
    if mode != "schrodinger":
        vals = vals.real
    return HeatKernelTable(B, mode, vals, dt, graph.mu[list(B)].copy())


def lambda_d_apply(table: HeatKernelTable, f: SourceTerm) -> np.ndarray:
    """Discrete source-to-solution map on B computed from the kernel table alone.

    Returns ``u[t, i]`` at ``B[i]`` for ``t = 0..table.T + 1``.
    """
    if table.mode != "discrete":
        raise ValueError("lambda_d_apply needs a discrete table")
    if table.mu_B is None:
        raise ValueError("table carries no mu_B")
    pos = {b: i for i, b in enumerate(table.B)}
    for x in f.support:
        if x not in pos:
            raise GraphError(f"source support vertex {x} is outside B")
    T = table.T + 1
    F = np.zeros((T, len(table.B)), dtype=np.result_type(f.values, float))
    m = min(T, f.horizon)
    F[:m, [pos[x] for x in f.support]] = f.values[:m]
    G = F * table.mu_B[None, :]
    u = np.zeros((T + 1, len(table.B)), dtype=G.dtype)
    for t in range(1, T + 1):
        # u(y,t) = sum_{s<t} sum_z K(y,z,t-1-s) mu_z f(z,s)
        lag = table.values[t - 1::-1][:t]  # K(., ., t-1-s) for s = 0..t-1
        u[t] = np.einsum("syz,sz->y", lag, G[:t])
    return u


def write_kernel_csv(table: HeatKernelTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        mu = "" if table.mu_B is None else " ".join(f"{v:.17g}" for v in table.mu_B)
        fh.write(f"# mode={table.mode} time_step={table.time_step:.17g} "
                 f"B={' '.join(map(str, table.B))} mu_B={mu}\n")
        w = csv.writer(fh)
        cplx = table.mode == "schrodinger"
        w.writerow(["y", "z", "t"] + (["re", "im"] if cplx else ["value"]))
        for t in range(table.T + 1):
            for i, y in enumerate(table.B):
                for k, z in enumerate(table.B):
                    v = table.values[t, i, k]
                    row = [f"{v.real:.17g}", f"{v.imag:.17g}"] if cplx else [f"{v:.17g}"]
                    w.writerow([y, z, t] + row)


def read_kernel_csv(path) -> HeatKernelTable:
    with open(path, newline="", encoding="utf-8") as fh:
        meta_line = fh.readline()
        meta = {}
        for part in meta_line.lstrip("# ").strip().split(" "):
            if "=" in part:
                key, _, val = part.partition("=")
                meta[key] = [val] if val else []
                last = key
            else:
                meta[last].append(part)
        rows = list(csv.DictReader(fh))
    mode = meta["mode"][0]
    B = tuple(int(b) for b in meta["B"])
    mu_B = np.array([float(v) for v in meta["mu_B"]]) if meta.get("mu_B") else None
    pos = {b: i for i, b in enumerate(B)}
    T = max(int(r["t"]) for r in rows)
    vals = np.zeros((T + 1, len(B), len(B)), dtype=complex if mode == "schrodinger" else float)
    for r in rows:
        v = complex(float(r["re"]), float(r["im"])) if mode == "schrodinger" else float(r["value"])
        vals[int(r["t"]), pos[int(r["y"])], pos[int(r["z"])]] = v
    return HeatKernelTable(B, mode, vals, float(meta["time_step"][0]), mu_B)


# -- discrete wave with Neumann boundary --------------------------------------


def _neumann_weights(gb: GraphWithBoundary) -> dict[int, tuple[list[int], np.ndarray]]:
    W = gb.graph.weight_matrix
    out = {}
    for z in gb.boundary:
        nb = gb.interior_neighbors(z)
        if not nb:
            raise GraphError(f"boundary vertex {z} has no interior neighbour")
        out[z] = (nb, W[z, nb])
    return out


def neumann_value(gb: GraphWithBoundary, u: np.ndarray) -> np.ndarray:
    """``(1/mu_z) sum_{x~z, x interior} g_xz (u(x) - u(z))`` at each boundary vertex."""
    W = gb.graph.weight_matrix
    out = np.zeros(len(gb.boundary), dtype=u.dtype)
    for k, z in enumerate(gb.boundary):
        nb = gb.interior_neighbors(z)
        out[k] = np.sum(W[z, nb] * (u[nb] - u[z])) / gb.graph.mu[z]
    return out


def solve_discrete_wave(gb: GraphWithBoundary, v, T: int) -> FieldHistory:
    """Discrete wave on the interior with zero Neumann data on the boundary.

    ``W(., 0) = v``; ``W(x, 1) = W(x, 0)`` on the interior; afterwards
    ``W(x, t+1) = 2 W(x, t) - W(x, t-1) + (Delta_G - q) W(x, t)``. Boundary
    values for t >= 1 are the weighted average of interior neighbours, which
    makes the Neumann value vanish.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    G = gb.graph
    nint = gb.interior_count
    weights = _neumann_weights(gb)
    # Delta_G at interior rows uses every neighbour, boundary ones included
    step = (laplacian_matrix(G) - np.diag(G.q))[:nint]
    v = np.asarray(v)
    W = np.zeros((T + 1, G.n), dtype=np.result_type(v, float))
    W[0] = v

    def close_boundary(row):
        for z, (nb, w) in weights.items():
            row[z] = np.dot(w, row[nb]) / w.sum()

    W[1, :nint] = W[0, :nint]
    close_boundary(W[1])
    for t in range(1, T):
        W[t + 1, :nint] = 2 * W[t, :nint] - W[t - 1, :nint] + step @ W[t]
        close_boundary(W[t + 1])
    return FieldHistory(W)


def wave_cauchy_operator(gb: GraphWithBoundary, T: int) -> np.ndarray:
    """Linear map from interior initial data (zero on the boundary) to boundary Cauchy data.

    Rows are the boundary values for t = 0..T followed by the Neumann values
    at t = 0..T; columns index interior vertices.
    """
    nint = gb.interior_count
    cols = []
    for x in range(nint):
        v = np.zeros(gb.graph.n)
        v[x] = 1.0
        W = solve_discrete_wave(gb, v, T).values
        dirichlet = W[:, list(gb.boundary)].ravel()
        neumann = np.concatenate([neumann_value(gb, W[t]) for t in range(T + 1)])
        cols.append(np.concatenate([dirichlet, neumann]))
    return np.array(cols).T
