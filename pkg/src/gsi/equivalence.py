"""Recover interior spectral data from B-restricted impulse-response tables.

The transform arguments (Laplace, Fourier, Z) become a finite exponential
fitting problem: the table is a matrix-valued sum of exponentials
``Y(t) = sum_j base_j^t Q_j``. A block Hankel realization gives the bases,
linear least squares gives the residue matrices ``Q_j``, and each ``Q_j``
factors as ``A A^T`` into eigenvector values on B.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .evolution import HeatKernelTable, _bases, kernel_from_modes
from .spectral import InteriorSpectralData

RANK_TOL = 1e-8
GROUP_GAP = 1e-6
PSD_FLOOR = 1e-10


class ExtractionError(ValueError):
    pass


class OrderOverflowError(ExtractionError):
    """More significant modes than ``n_max`` allows."""


class AliasingError(ExtractionError):
    pass


@dataclass
class Mode:
    base: complex
    eigenvalue: float
    residue: np.ndarray
    group: int
    multiplicity: int = 1


@dataclass
class PoleEstimate:
    """Fitted bases with their residue matrices and fit diagnostics."""

    modes: list[Mode]
    n_estimated: int
    conditioning: dict = field(default_factory=dict)


def factor_residue(Q: np.ndarray, rank_tol: float = RANK_TOL, psd_floor: float = PSD_FLOOR) -> np.ndarray:
    """Factor a PSD matrix as ``A A^T`` with ``A`` of numerical rank columns.

    Columns of ``A`` are scaled eigenvectors of ``Q``; the factor is unique
    up to right multiplication by an orthogonal matrix. Eigenvalues below
    ``rank_tol`` (relative to the largest, with an absolute floor of
    ``rank_tol``) are dropped.
    """
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    if Q.size == 0:
        return np.zeros((Q.shape[0], 0))
    w, V = np.linalg.eigh(Q)
    top = max(float(np.abs(w).max()), 1.0)
    if w.min() < -max(psd_floor, rank_tol * top):
        raise ExtractionError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3g})")
    keep = w > rank_tol * top
    A = V[:, keep] * np.sqrt(w[keep])
    return A[:, ::-1]


def _psd_project(Q: np.ndarray) -> tuple[np.ndarray, float]:
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    clipped = np.clip(w, 0, None)
    P = (V * clipped) @ V.T
    return P, float(np.abs(w - clipped).max()) if len(w) else 0.0


def _block_hankel(Y: np.ndarray, rows: int, cols: int, shift: int) -> np.ndarray:
    m = Y.shape[1]
    H = np.empty((rows * m, cols * m), dtype=Y.dtype)
    for i in range(rows):
        for j in range(cols):
            H[i * m:(i + 1) * m, j * m:(j + 1) * m] = Y[i + j + shift]
    return H


# largest growth factor max|base|^(2 rows) tolerated inside one Hankel window
GROWTH_LIMIT = 1e6


def _realize(Y: np.ndarray, rows: int, cols: int, n_max: int, rank_tol: float) -> tuple[np.ndarray, dict]:
    H0 = _block_hankel(Y, rows, cols, 0)
    H1 = _block_hankel(Y, rows, cols, 1)
    U, s, Vh = np.linalg.svd(H0, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(0), {"singular_values": s, "order": 0, "samples_used": rows + cols}
    order = int(np.sum(s > rank_tol * s[0]))
    diag = {"singular_values": s, "order": order, "samples_used": rows + cols}
    if order > n_max:
        raise OrderOverflowError(f"{order} significant modes exceed n_max={n_max}")
    Ur, sr, Vr = U[:, :order], s[:order], Vh[:order].conj().T
    isq = 1.0 / np.sqrt(sr)
    A = (isq[:, None] * (Ur.conj().T @ H1 @ Vr)) * isq[None, :]
    diag["hankel_condition"] = float(sr[0] / sr[-1]) if order else 1.0
    return sla.eigvals(A), diag


def realize_bases(Y: np.ndarray, n_max: int, rank_tol: float = RANK_TOL) -> tuple[np.ndarray, dict]:
    """Bases of ``Y(t) = sum_j b_j^t C_j`` (t = 0..len(Y)-1) by a block Hankel realization.

    The model order is the number of Hankel singular values above
    ``rank_tol`` times the largest one. When some base exceeds 1 in modulus
    the window is shortened so that growing modes do not swamp the others;
    ``diag["samples_used"]`` records how many leading samples entered.
    """
    T = Y.shape[0]
    if T < 3:
        raise ExtractionError("need at least three samples")
    m = Y.shape[1]
    rows = T // 2
    cols = T - rows
    short = max(1, -(-(n_max + 1) // m))
    if rows > short and 2 * short <= T:
        probe, _ = _realize(Y, short, short, n_max, rank_tol)
        R = float(np.abs(probe).max()) if probe.size else 1.0
        if R > 1.0:
            fit = int(np.log(GROWTH_LIMIT) / (2 * np.log(R)))
            rows = min(rows, max(short, fit))
            cols = rows
    return _realize(Y, rows, cols, n_max, rank_tol)


def _cluster(values: np.ndarray, gap: float) -> list[np.ndarray]:
    order = np.argsort(values)
    groups, cur = [], [order[0]]
    for k in order[1:]:
        if values[k] - values[cur[-1]] <= gap:
            cur.append(k)
        else:
            groups.append(np.array(cur))
            cur = [k]
    groups.append(np.array(cur))
    return groups


def _residues(Y: np.ndarray, times: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """Least-squares residue matrices for fixed bases; returns (G, m, m)."""
    V = np.power.outer(bases, times).T
    rhs = Y.reshape(len(times), -1)
    # column scaling keeps growing and decaying modes comparable
    scale = np.abs(V).max(axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(V / scale, rhs, rcond=None)
    coef = coef / scale[:, None]
    m = Y.shape[1]
    return coef.reshape(len(bases), m, m)


def _to_eigenvalue(bases: np.ndarray, mode: str, dt: float) -> np.ndarray:
    if mode == "discrete":
        return (1.0 - bases).real
    if mode == "continuous":
        if np.any(bases.real <= 0) or np.any(np.abs(bases.imag) > 1e-6 * np.abs(bases)):
            raise AliasingError("non-positive base found; the time step is too large")
        return -np.log(bases.real) / dt
    return np.angle(bases) / dt


def fit_poles(table: HeatKernelTable, n_max: int, rank_tol: float = RANK_TOL,
              group_gap: float = GROUP_GAP) -> PoleEstimate:
    """Fit ``table.values`` as a sum of exponentials and group the bases.

    For discrete tables only t >= 1 enters the fit, so eigenvalue 1 (base
    0) is invisible here; see :func:`extract_spectral_discrete`.
    """
    if table.T + 1 < 2 * n_max + 2:
        raise ExtractionError(f"horizon {table.T} too short for n_max={n_max}")
    mode, dt = table.mode, table.time_step
    start = 1 if mode == "discrete" else 0
    Y = table.values[start:]
    times = np.arange(start, table.T + 1)
    raw, diag = realize_bases(Y, n_max, rank_tol)
    Y, times = Y[:diag["samples_used"]], times[:diag["samples_used"]]
    if raw.size == 0:
        return PoleEstimate([], 0, diag)
    if mode == "schrodinger":
        if np.any(np.abs(np.abs(raw) - 1) > 1e-4):
            raise ExtractionError("Schrodinger bases off the unit circle")
        if np.any(np.pi - np.abs(np.angle(raw)) < 1e-6):
            raise AliasingError("a frequency sits at the wrap-around angle pi; reduce the time step")
    elif np.any(np.abs(raw.imag) > 1e-6 * np.maximum(1, np.abs(raw))):
        raise ExtractionError("complex base found in a real table")
    lam_raw = _to_eigenvalue(raw if mode == "schrodinger" else raw.real + 0j, mode, dt)
    groups = _cluster(lam_raw, group_gap)
    lam = np.array([lam_raw[g].mean() for g in groups])
    bases = _bases(lam, mode, dt)
    if mode == "schrodinger" and len(lam) > 1:
        ang = np.sort(np.mod(lam * dt, 2 * np.pi))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        if gaps.min() < rank_tol:
            raise AliasingError("two frequencies coincide modulo 2*pi/dt")
    R = _residues(Y, times, bases)
    modes = []
    proj = 0.0
    for k, g in enumerate(groups):
        Rk = R[k].real if mode == "schrodinger" else R[k]
        Rk, d = _psd_project(np.real(Rk))
        proj = max(proj, d)
        modes.append(Mode(complex(bases[k]), float(lam[k]), Rk, k, len(g)))
    diag["psd_projection"] = proj
    diag["multiplicities"] = [len(g) for g in groups]
    return PoleEstimate(modes, len(raw), diag)


def _data_from_modes(B, lam, residues, rank_tol, mu_B, ranks=None) -> InteriorSpectralData:
    # ranks caps each factor at the number of pencil eigenvalues in its group
    cols, eig, groups = [], [], []
    k = 0
    ranks = [None] * len(lam) if ranks is None else ranks
    for l, Q, r in sorted(zip(lam, residues, ranks), key=lambda p: p[0]):
        A = factor_residue(Q, rank_tol)
        if r is not None:
            A = A[:, :r]
        if A.shape[1] == 0:
            continue
        cols.append(A)
        eig.extend([l] * A.shape[1])
        groups.append(np.arange(k, k + A.shape[1]))
        k += A.shape[1]
    phi = np.hstack(cols) if cols else np.zeros((len(B), 0))
    return InteriorSpectralData(tuple(B), np.array(eig, dtype=float), phi, tuple(groups),
                                None if mu_B is None else np.array(mu_B))


def extract_spectral_discrete(table: HeatKernelTable, n_max: int, rank_tol: float = RANK_TOL,
                              group_gap: float = GROUP_GAP) -> InteriorSpectralData:
    """Interior spectral data from a discrete-time kernel table.

    Eigenvalues other than 1 come from the exponential fit on t >= 1. The
    gap ``Y(0) - sum_j Q_j`` is the Gram block of eigenvalue 1; it is kept
    when its norm exceeds the rank tolerance.
    """
    if table.mode != "discrete":
        raise ExtractionError("expected a discrete table")
    est = fit_poles(table, n_max, rank_tol, group_gap)
    lam = [m.eigenvalue for m in est.modes]
    res = [m.residue for m in est.modes]
    ranks = [m.multiplicity for m in est.modes]
    Y0 = table.values[0]
    gap = Y0 - sum(res, np.zeros_like(Y0))
    gap = 0.5 * (gap + gap.T)
    w = np.linalg.eigvalsh(gap) if gap.size else np.zeros(0)
    top = max(1.0, float(np.abs(Y0).max()) if Y0.size else 1.0)
    if w.size and w.min() < -1e3 * rank_tol * top:
        raise ExtractionError(f"eigenvalue-1 block is not positive semidefinite ({w.min():.3g})")
    if w.size and w.max() > 1e3 * rank_tol * top:
        P, _ = _psd_project(gap)
        near = [k for k, l in enumerate(lam) if abs(l - 1.0) <= group_gap]
        if near:
            res[near[0]] = res[near[0]] + P
            ranks[near[0]] = None
        else:
            lam.append(1.0)
            res.append(P)
            ranks.append(None)
    return _data_from_modes(table.B, lam, res, rank_tol, table.mu_B, ranks)


def extract_spectral_continuous(table: HeatKernelTable, n_max: int, rank_tol: float = RANK_TOL,
                                group_gap: float = GROUP_GAP) -> InteriorSpectralData:
    if table.mode != "continuous":
        raise ExtractionError("expected a continuous heat table")
    est = fit_poles(table, n_max, rank_tol, group_gap)
    return _data_from_modes(table.B, [m.eigenvalue for m in est.modes], [m.residue for m in est.modes],
                            rank_tol, table.mu_B, [m.multiplicity for m in est.modes])


def extract_spectral_schrodinger(table: HeatKernelTable, n_max: int, rank_tol: float = RANK_TOL,
                                 group_gap: float = GROUP_GAP) -> InteriorSpectralData:
    if table.mode != "schrodinger":
        raise ExtractionError("expected a Schrodinger table")
    est = fit_poles(table, n_max, rank_tol, group_gap)
    return _data_from_modes(table.B, [m.eigenvalue for m in est.modes], [m.residue for m in est.modes],
                            rank_tol, table.mu_B, [m.multiplicity for m in est.modes])


EXTRACTORS = {
    "discrete": extract_spectral_discrete,
    "continuous": extract_spectral_continuous,
    "schrodinger": extract_spectral_schrodinger,
}


def extract_spectral(table: HeatKernelTable, n_max: int, rank_tol: float = RANK_TOL) -> InteriorSpectralData:
    return EXTRACTORS[table.mode](table, n_max, rank_tol)


def synthesize_table(data: InteriorSpectralData, mode: str, T: int, time_step: float = 1.0) -> HeatKernelTable:
    """Kernel table on B generated from spectral data alone."""
    dt = 1.0 if mode == "discrete" else float(time_step)
    vals = kernel_from_modes(_bases(data.eigenvalues, mode, dt), data.phi_B, T)
    if mode != "schrodinger":
        vals = vals.real
    return HeatKernelTable(data.B, mode, vals, dt, data.mu_B)


def write_poles_csv(est: PoleEstimate, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        m = est.modes[0].residue.shape[0] if est.modes else 0
        w.writerow(["base_re", "base_im", "eigenvalue", "group"] + [f"Q{i}{k}" for i in range(m) for k in range(m)])
        for md in est.modes:
            w.writerow([f"{md.base.real:.17g}", f"{md.base.imag:.17g}", f"{md.eigenvalue:.17g}", md.group]
                       + [f"{v:.17g}" for v in md.residue.ravel()])
        for key in ("order", "hankel_condition", "psd_projection"):
            if key in est.conditioning:
                w.writerow([f"# {key}", f"{est.conditioning[key]:.17g}"])
