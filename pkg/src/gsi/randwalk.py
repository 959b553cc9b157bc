"""Reversible random walks: exact passage-time laws, lazy chains, recovery on B and sampling.

Vertices are 0-based. In trajectories observed on ``B`` the unknown-state
symbol is stored as ``Q0 = -1`` and written as ``*`` in files.
"""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np
from scipy.stats import binom

from .evolution import HeatKernelTable, heat_kernel_table
from .graph import GraphError, WeightedGraph

Q0 = -1
T_LIMIT = 2000
CONVERGENCE_TOL = 1e-9
MIN_SAMPLES = 10
ORACLE_MAX_T = 12


class WalkError(ValueError):
    pass


class ConvergenceError(WalkError):
    pass


@dataclass(frozen=True)
class WalkModel:
    """Conductances on edges (aligned with ``graph.edges``) and staying weights per vertex."""

    graph: WeightedGraph
    c: np.ndarray
    c_self: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        cs = np.array(self.c_self, dtype=float).reshape(-1)
        if c.shape != (len(self.graph.edges),):
            raise WalkError("c must have one entry per edge")
        if cs.shape != (self.graph.n,):
            raise WalkError("c_self must have one entry per vertex")
        if np.any(c <= 0):
            raise WalkError("edge conductances must be positive")
        if np.any(cs < 0):
            raise WalkError("staying weights must be nonnegative")
        c.flags.writeable = False
        cs.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "c_self", cs)

    @property
    def n(self) -> int:
        return self.graph.n

    @cached_property
    def conductance_matrix(self) -> np.ndarray:
        """Symmetric matrix with ``c_xy`` off the diagonal and ``c_xx`` on it."""
        C = np.zeros((self.n, self.n))
        for (i, j), w in zip(self.graph.edges, self.c):
            C[i, j] = C[j, i] = w
        C[np.diag_indices(self.n)] = self.c_self
        return C

    @cached_property
    def m(self) -> np.ndarray:
        return self.conductance_matrix.sum(axis=1)

    @cached_property
    def P(self) -> np.ndarray:
        if np.any(self.m <= 0):
            raise WalkError("a vertex has zero mass")
        return self.conductance_matrix / self.m[:, None]

    def as_weighted_graph(self) -> WeightedGraph:
        """Weights ``mu = m``, ``g = c``, ``q = 0`` whose heat step is ``P``."""
        return self.graph.replace(mu=self.m.copy(), g=self.c.copy(), q=np.zeros(self.n))


def walk_from_conductances(graph: WeightedGraph, c, c_self=None) -> WalkModel:
    if c_self is None:
        c_self = np.zeros(graph.n)
    return WalkModel(graph, c, c_self)


def walk_from_weights(graph: WeightedGraph, tol: float = 1e-12) -> WalkModel:
    """Walk with ``p_xy = g_xy / mu_x``; needs ``mu_x >= sum_y g_xy``."""
    deg = graph.weight_matrix.sum(axis=1)
    stay = graph.mu - deg
    if np.any(stay < -tol * np.maximum(1.0, graph.mu)):
        bad = int(np.argmin(stay))
        raise WalkError(f"mu at vertex {bad} is below its total edge weight")
    return WalkModel(graph, graph.g.copy(), np.clip(stay, 0, None))


def occupation_probabilities(model: WalkModel, x0: int, T: int) -> np.ndarray:
    """``out[t, z] = P(H_t = z | H_0 = x0)`` for t = 0..T."""
    model.graph.check_vertex(x0)
    out = np.zeros((T + 1, model.n))
    out[0, x0] = 1.0
    for t in range(T):
        out[t + 1] = out[t] @ model.P
    return out


def first_passage_exact(model: WalkModel, x0: int, y: int, T_max: int) -> np.ndarray:
    """``r[t-1] = P(first visit to y at a time >= 1 is t)``, t = 1..T_max.

    One step of ``P`` followed by powers of ``P`` with row and column ``y``
    removed.
    """
    model.graph.check_vertex(x0)
    model.graph.check_vertex(y)
    P = model.P
    keep = np.array([v for v in range(model.n) if v != y], dtype=int)
    Q = P[np.ix_(keep, keep)]
    into = P[keep, y]
    r = np.zeros(T_max)
    if T_max == 0:
        return r
    r[0] = P[x0, y]
    row = P[x0, keep]
    for t in range(1, T_max):
        r[t] = row @ into
        row = row @ Q
    return r


@dataclass(frozen=True)
class PassingTimeTable:
    """``r[t-1, i, k] = P(tau+(B[i], B[k]) = t)`` for t = 1..T_max."""

    B: tuple[int, ...]
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(int(b) for b in self.B))
        if self.r.ndim != 3 or self.r.shape[1:] != (len(self.B), len(self.B)):
            raise WalkError("r must have shape (T_max, |B|, |B|)")

    @property
    def T_max(self) -> int:
        return self.r.shape[0]

    def index(self, x: int) -> int:
        try:
            return self.B.index(int(x))
        except ValueError:
            raise GraphError(f"vertex {x} is not in B") from None

    def value(self, t: int, x: int, y: int):
        return self.r[t - 1, self.index(x), self.index(y)]


def passing_time_table(model: WalkModel, B: Sequence[int], T_max: int) -> PassingTimeTable:
    B = model.graph.subset(B)
    r = np.zeros((T_max, len(B), len(B)))
    for i, x in enumerate(B):
        for k, y in enumerate(B):
            r[:, i, k] = first_passage_exact(model, x, y, T_max)
    return PassingTimeTable(B, r)


def renewal_occupation(table: PassingTimeTable, x: int, y: int, T: int):
    """``P(H_T^x = y)`` from passage-time laws on B by the renewal recursion.

    Plain Python arithmetic, so exact number types (``Fraction``) pass through.
    """
    if T > table.T_max:
        raise WalkError(f"T={T} exceeds the table horizon {table.T_max}")
    i, k = table.index(x), table.index(y)
    if T == 0:
        return 1 if i == k else 0
    ryy = [table.r[t - 1, k, k] for t in range(1, T + 1)]
    G = [1]
    for s in range(1, T):
        G.append(sum(ryy[t - 1] * G[s - t] for t in range(1, s + 1)))
    return sum(table.r[t - 1, i, k] * G[T - t] for t in range(1, T + 1))


def composition_sum_oracle(table: PassingTimeTable, x: int, y: int, T: int):
    """The same probability as a literal sum over passage-time tuples ``t_1 < ... < t_j = T``."""
    if T > ORACLE_MAX_T:
        raise WalkError(f"oracle enumeration limited to T <= {ORACLE_MAX_T}")
    if T > table.T_max:
        raise WalkError(f"T={T} exceeds the table horizon {table.T_max}")
    i, k = table.index(x), table.index(y)
    if T == 0:
        return 1 if i == k else 0
    total = 0
    for j in range(T):
        for mids in itertools.combinations(range(1, T), j):
            times = (0,) + mids + (T,)
            term = table.r[times[1] - 1, i, k]
            for a, b in zip(times[1:], times[2:]):
                term = term * table.r[b - a - 1, k, k]
            total = total + term
    return total


def occupation_from_passing(table: PassingTimeTable, T: int | None = None) -> np.ndarray:
    """``out[t, i, k] = P(H_t^{B[i]} = B[k])`` for t = 0..T via the renewal recursion."""
    T = table.T_max if T is None else T
    if T > table.T_max:
        raise WalkError(f"T={T} exceeds the table horizon {table.T_max}")
    r = np.asarray(table.r[:T], dtype=float)
    m = len(table.B)
    G = _diagonal_occupation(table, T)
    out = np.zeros((T + 1, m, m))
    out[0] = np.eye(m)
    for s in range(1, T + 1):
        out[s] = np.einsum("tik,tk->ik", r[:s], G[s - 1::-1][:s])
    return out


def _diagonal_occupation(table: PassingTimeTable, T: int) -> np.ndarray:
    """``P(H_t^y = y)`` for t = 0..T and every y in B (renewal sequence only)."""
    r = np.asarray(table.r[:T], dtype=float)
    m = len(table.B)
    diag = r[:, np.arange(m), np.arange(m)]
    G = np.zeros((T + 1, m))
    G[0] = 1.0
    for s in range(1, T + 1):
        G[s] = np.einsum("tk,tk->k", diag[:s], G[s - 1::-1][:s])
    return G


def lazy_transform_model(model: WalkModel) -> WalkModel:
    """``c_xx -> c_xx + m(x)``: the walk that pauses with probability 1/2."""
    return WalkModel(model.graph, model.c.copy(), model.c_self + model.m)


def lazy_weight(t: int, n: int) -> float:
    """``C(t-1, n) 2^-t``: n pauses among the first t-1 steps of a lazy walk of length t."""
    if t < 1 or n < 0 or n > t - 1:
        return 0.0
    if t <= 1000:
        return comb(t - 1, n) * 2.0 ** (-t)
    return float(binom.pmf(n, t - 1, 0.5)) / 2


def lazy_transform_data(table: PassingTimeTable, T_max: int | None = None) -> PassingTimeTable:
    """Passage-time laws of the lazy walk, computed from those of the original walk."""
    T = table.T_max if T_max is None else T_max
    if T > table.T_max:
        raise WalkError(f"lazy data up to {T} needs a table of horizon {T}")
    r = np.asarray(table.r[:T], dtype=float)
    m = len(table.B)
    W = np.zeros((T + 1, T + 1))  # W[t, n] = q(t, n)
    for t in range(1, T + 1):
        W[t, :t] = binom.pmf(np.arange(t), t - 1, 0.5) / 2
    out = np.zeros_like(r)
    off = ~np.eye(m, dtype=bool)
    ii = np.arange(m)
    for t in range(1, T + 1):
        # off-diagonal: sum_n q(t,n) r(t-n)
        lag = r[t - 1::-1][:t]  # r(t-n) for n = 0..t-1
        out[t - 1][off] = np.einsum("n,nik->ik", W[t, :t], lag)[off]
        if t == 1:
            out[0, ii, ii] = 0.5 + 0.5 * r[0, ii, ii]
        else:
            lagd = r[t - 1:0:-1][:t - 1][:, ii, ii]  # r(t-n) for n = 0..t-2
            out[t - 1, ii, ii] = 0.5 * W[t - 1, :t - 1] @ lagd
    return PassingTimeTable(table.B, out)


def stationary_state(model: WalkModel) -> np.ndarray:
    if not model.graph.is_connected:
        raise GraphError("stationary state needs a connected graph")
    return model.m / model.m.sum()


@dataclass(frozen=True)
class RecoveredWalkData:
    """Walk data on B fixed up to the gauge ``A0 = 1 / m~(x0)``.

    ``A0m`` is the gauge-normalized lazy mass (``A0m[x0] = 1``);
    ``A0c[i, k]`` holds ``A0 c_xy`` off the diagonal and ``A0 c_xx`` on it,
    with NaN where ``x`` has neighbours outside B.
    """

    B: tuple[int, ...]
    A0m: np.ndarray
    A0c: np.ndarray
    normalization_vertex: int
    stationary_ratios: np.ndarray

    @property
    def A0m_walk(self) -> np.ndarray:
        """Gauge-normalized mass of the original (non-lazy) walk."""
        return self.A0m / 2.0


def recover_walk_data_on_B(table: PassingTimeTable, T_limit: int = T_LIMIT,
                           tol: float = CONVERGENCE_TOL, row_tol: float = 1e-9) -> RecoveredWalkData:
    if table.T_max < T_limit:
        raise WalkError(f"table horizon {table.T_max} is below T_limit={T_limit}")
    lazy = lazy_transform_data(table, T_limit)
    G = _diagonal_occupation(lazy, T_limit)
    drift = np.abs(G[T_limit] - G[T_limit - 1])
    if np.any(drift >= tol):
        raise ConvergenceError(f"return probabilities still move by {drift.max():.3g} at T={T_limit}")
    s = G[T_limit]
    if np.any(s <= 0):
        raise WalkError("inconsistent table: nonpositive stationary mass")
    A0m = s / s[0]
    p1 = np.asarray(lazy.r[0], dtype=float)
    A0c = p1 * A0m[:, None]
    m_walk = A0m / 2.0
    m = len(table.B)
    for i in range(m):
        c_off = A0c[i].sum() - A0c[i, i]
        if abs(p1[i].sum() - 1.0) <= row_tol:
            A0c[i, i] = m_walk[i] - c_off
        else:
            A0c[i, i] = np.nan
    if np.any(A0c[~np.isnan(A0c)] < -row_tol):
        raise WalkError("inconsistent table: negative recovered conductance")
    return RecoveredWalkData(table.B, A0m, A0c, table.B[0], s)


def simulate(model: WalkModel, x0: int, steps: int, seed: int) -> np.ndarray:
    """Vertex sequence ``H_0 = x0, ..., H_steps``.

    ``numpy.random.default_rng(seed).random(steps)`` drives the chain: step
    ``t`` moves from ``x`` to the first ``y`` whose cumulative row
    probability exceeds the t-th uniform.
    """
    model.graph.check_vertex(x0)
    if steps < 0:
        raise WalkError("steps must be nonnegative")
    u = np.random.default_rng(seed).random(steps)
    cum = np.cumsum(model.P, axis=1)
    cum[:, -1] = 1.0
    nxt = np.stack([np.searchsorted(cum[x], u, side="right") for x in range(model.n)])
    nxt = np.minimum(nxt, model.n - 1)
    table = nxt.tolist()
    out = [int(x0)]
    x = int(x0)
    for t in range(steps):
        x = table[x][t]
        out.append(x)
    return np.array(out, dtype=int)


@dataclass(frozen=True)
class ObservedTrajectory:
    symbols: np.ndarray
    B: tuple[int, ...]
    seed: int | None = None

    @property
    def length(self) -> int:
        return len(self.symbols)


def observe_on_B(traj: Sequence[int], B: Sequence[int], seed: int | None = None) -> ObservedTrajectory:
    traj = np.asarray(traj, dtype=int)
    B = tuple(int(b) for b in B)
    inside = np.isin(traj, np.array(B, dtype=int))
    return ObservedTrajectory(np.where(inside, traj, Q0), B, seed)


@dataclass(frozen=True)
class OccupationEstimate:
    estimate: float
    count: int


def estimate_occupation_from_realization(obs: ObservedTrajectory, y: int, z: int, T: int,
                                         min_samples: int = MIN_SAMPLES) -> OccupationEstimate:
    """Estimate ``P(H_T^y = z)`` from one observed trajectory.

    Uses the passage times ``tau_k`` of ``y`` (times >= 1) at indices
    ``k = 2 T n``, n = 1, 2, ..., so the windows ``[tau, tau + T]`` never
    overlap, and averages the indicator that the symbol at ``tau + T`` is
    ``z``.
    """
    if y not in obs.B or z not in obs.B:
        raise GraphError("y and z must lie in B")
    if T < 1:
        raise WalkError("T must be positive")
    sym = obs.symbols
    tau = np.flatnonzero(sym[1:] == y) + 1
    k = np.arange(2 * T, len(tau) + 1, 2 * T)  # 1-based indices
    starts = tau[k - 1] if len(k) else np.zeros(0, dtype=int)
    starts = starts[starts + T < len(sym)]
    if len(starts) < min_samples:
        raise WalkError(f"only {len(starts)} usable stopping times (need {min_samples})")
    hits = sym[starts + T] == z
    return OccupationEstimate(float(hits.mean()), int(len(starts)))


def replicate_seed(master_seed: int, index: int) -> int:
    """Seed of replicate ``index``; a pure function of ``(master_seed, index)``."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def estimate_replicates(model: WalkModel, x0: int, B: Sequence[int], steps: int, master_seed: int,
                        replicates: int, cells: Sequence[tuple[int, int, int]],
                        workers: int | None = None) -> np.ndarray:
    """Run independent trajectories and estimate each ``(y, z, T)`` cell per replicate.

    Returns ``out[r, c]``; cells with too few stopping times are NaN. Results
    are merged by replicate index, so they do not depend on ``workers``.
    """
    cells = [(int(y), int(z), int(T)) for y, z, T in cells]

    def run(r: int) -> np.ndarray:
        seed = replicate_seed(master_seed, r)
        obs = observe_on_B(simulate(model, x0, steps, seed), B, seed)
        row = np.full(len(cells), np.nan)
        for c, (y, z, T) in enumerate(cells):
            try:
                row[c] = estimate_occupation_from_realization(obs, y, z, T).estimate
            except WalkError:
                pass
        return row

    if workers is None and os.environ.get("GSI_THREADS"):
        workers = max(1, int(os.environ["GSI_THREADS"]))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(run, range(replicates)))
    return np.array(rows).reshape(replicates, len(cells))


def passing_to_heat_table(table: PassingTimeTable, mu_B=None, T: int | None = None,
                          T_limit: int = T_LIMIT) -> HeatKernelTable:
    """Discrete kernel table on B built from passage-time laws alone.

    ``mu_B`` defaults to the recovered gauge-normalized walk masses, which
    needs a table of horizon ``T_limit``.
    """
    if mu_B is None:
        mu_B = recover_walk_data_on_B(table, T_limit).A0m_walk
    mu_B = np.asarray(mu_B, dtype=float)
    occ = occupation_from_passing(table, T)
    return HeatKernelTable(table.B, "discrete", occ / mu_B[None, None, :], 1.0, mu_B)


def brute_force_identify(data: PassingTimeTable | HeatKernelTable, candidates: Sequence[WalkModel],
                         tol: float = 1e-10) -> list[int]:
    """Indices of candidates whose exact data on B match ``data`` in max norm.

    Heat tables are compared through ``transition()``, which does not depend
    on the gauge of the masses.
    """
    if not candidates:
        raise WalkError("no candidates given")
    hits = []
    for idx, model in enumerate(candidates):
        if max(data.B) >= model.n:
            continue
        if isinstance(data, PassingTimeTable):
            ref = passing_time_table(model, data.B, data.T_max).r
            got = data.r
        else:
            tab = heat_kernel_table(model.as_weighted_graph(), data.B, data.T, "discrete")
            ref = tab.transition()
            got = data.transition()
        if np.max(np.abs(ref - got)) <= tol:
            hits.append(idx)
    return hits


# -- file formats ----------------------------------------------------------------


def write_passing_csv(table: PassingTimeTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "r"])
        for t in range(1, table.T_max + 1):
            for i, x in enumerate(table.B):
                for k, y in enumerate(table.B):
                    w.writerow([t, x, y, f"{float(table.r[t - 1, i, k]):.17g}"])


def read_passing_csv(path) -> PassingTimeTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    B = sorted({int(r["x"]) for r in rows} | {int(r["y"]) for r in rows})
    pos = {b: i for i, b in enumerate(B)}
    T = max(int(r["t"]) for r in rows)
    arr = np.zeros((T, len(B), len(B)))
    for r in rows:
        arr[int(r["t"]) - 1, pos[int(r["x"])], pos[int(r["y"])]] = float(r["r"])
    return PassingTimeTable(tuple(B), arr)


def write_trajectory(symbols: Sequence[int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in symbols:
            fh.write("*\n" if s == Q0 else f"{int(s)}\n")


def read_trajectory(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return np.array([Q0 if line.strip() == "*" else int(line) for line in fh if line.strip()], dtype=int)


def read_conductances(graph: WeightedGraph, path) -> WalkModel:
    """CSV with columns x,y,c; rows with x == y give staying weights."""
    C = {}
    stay = np.zeros(graph.n)
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            x, y, c = int(r["x"]), int(r["y"]), float(r["c"])
            if x == y:
                stay[x] = c
            else:
                C[(min(x, y), max(x, y))] = c
    missing = [e for e in graph.edges if tuple(e) not in C]
    if missing:
        raise WalkError(f"no conductance for edges {missing}")
    return WalkModel(graph, [C[tuple(e)] for e in graph.edges], stay)


def write_conductances(model: WalkModel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "c"])
        for (i, j), c in zip(model.graph.edges, model.c):
            w.writerow([i, j, f"{c:.17g}"])
        for x, c in enumerate(model.c_self):
            w.writerow([x, x, f"{c:.17g}"])
