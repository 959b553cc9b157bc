"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines, or
``python3 tests/test_acceptance.py`` for the bare report.
"""

from __future__ import annotations

import time
from fractions import Fraction

import networkx as nx
import numpy as np

from conftest import cycle, path, random_graph, random_stable_graph, random_walk_model
from gsi.control import (LimitNotConvergedError, SingularSystemError, UnreachableTargetError,
                         extract_coefficients_discrete, reachability_rank, synthesize_control)
from gsi.equivalence import extract_spectral
from gsi.evolution import (SourceTerm, default_time_step, duhamel_superpose, heat_kernel_table,
                           neumann_value, solve_discrete_heat_ivp, solve_discrete_heat_source,
                           solve_discrete_wave)
from gsi.fixtures import appendix_pair, walk_return_table
from gsi.graph import GraphWithBoundary, WeightedGraph, two_points_condition_table
from gsi.randwalk import (PassingTimeTable, composition_sum_oracle, estimate_occupation_from_realization,
                          first_passage_exact, lazy_transform_data, lazy_transform_model, lazy_weight,
                          observe_on_B, occupation_from_passing, occupation_probabilities,
                          passing_time_table, recover_walk_data_on_B, renewal_occupation,
                          replicate_seed, simulate, walk_from_conductances)
from gsi.spectral import (decompose, gram_matrices, restrict_to_subset, spectral_data_equal,
                          unique_continuation_check)

SEED = 20240611


def report(k: int, ok: bool, detail: str) -> None:
    print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def atlas_connected(n_max: int):
    for G in nx.graph_atlas_g():
        n = G.number_of_nodes()
        if 1 <= n <= n_max and nx.is_connected(G):
            yield WeightedGraph.from_edges(n, sorted(tuple(sorted(e)) for e in G.edges()))


def random_subset(rng, n, low=1):
    return sorted(rng.choice(n, size=int(rng.integers(low, n + 1)), replace=False).tolist())


def test_01_appendix_regression():
    start = time.perf_counter()
    pair = appendix_pair()
    want = np.sort([0, 2, 3, 3, 3 - np.sqrt(5), 3 + np.sqrt(5)])
    dl, dr = decompose(pair.left), decompose(pair.right)
    eig_err = max(np.abs(dl.eigenvalues - want).max(), np.abs(dr.eigenvalues - want).max())
    equal = spectral_data_equal(restrict_to_subset(dl, pair.B_left), restrict_to_subset(dr, pair.B_right), 1e-10)
    elapsed = time.perf_counter() - start
    report(1, eig_err <= 1e-10 and equal and elapsed < 1.0,
           f"eigenvalue error {eig_err:.1e}, data equal on B: {equal}, {elapsed:.3f} s")


def test_02_counterexample_walks():
    pair = appendix_pair(4.0)
    diff = np.abs(walk_return_table(pair.left, pair.B_left, 50) - walk_return_table(pair.right, pair.B_right, 50)).max()
    report(2, diff <= 1e-12, f"max walk difference over t <= 50: {diff:.1e}")


def test_03_equivalence_round_trip():
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst_eig = worst_gram = 0.0
    ok = True
    done = 0
    while done < 50:
        n = int(rng.integers(1, 11))
        g = random_stable_graph(rng, n)
        B = random_subset(rng, n, max(1, n // 2))
        dec = decompose(g)
        if not unique_continuation_check(dec, B):
            continue
        done += 1
        truth = restrict_to_subset(dec, B)
        for mode in ("discrete", "continuous", "schrodinger"):
            dt = 1.0 if mode == "discrete" else default_time_step(dec.eigenvalues)
            est = extract_spectral(heat_kernel_table(g, B, 2 * n + 2, mode, dt, dec), n)
            if len(est.eigenvalues) != n:
                ok = False
                continue
            worst_eig = max(worst_eig, float(np.abs(np.sort(est.eigenvalues) - truth.eigenvalues).max()))
            same = spectral_data_equal(est, truth, 1e-7, 1e-6)
            ok &= same
            if same:
                for (l1, Q1), (l2, Q2) in zip(_grams(est), _grams(truth)):
                    worst_gram = max(worst_gram, float(np.abs(Q1 - Q2).max()))
    elapsed = time.perf_counter() - start
    report(3, ok and elapsed < 30.0, f"50 graphs x 3 modes, eigenvalue error {worst_eig:.1e}, "
           f"Gram error {worst_gram:.1e}, {elapsed:.1f} s")


def _grams(data):
    return sorted(gram_matrices(data), key=lambda p: p[0])


def test_04_renewal_identity():
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    exact_ok = True
    for k in range(100):
        n = int(rng.integers(1, 7))
        model = random_walk_model(rng, n)
        T = int(rng.integers(1, 51))
        table = PassingTimeTable(tuple(range(n)), np.stack(
            [np.stack([first_passage_exact(model, x, y, T) for y in range(n)], axis=1) for x in range(n)], axis=1))
        occ = occupation_from_passing(table)
        for x in range(n):
            worst = max(worst, float(np.abs(occ[:, x, :] - occupation_probabilities(model, x, T)).max()))
        x, y = int(rng.integers(n)), int(rng.integers(n))
        worst = max(worst, abs(renewal_occupation(table, x, y, T) - occupation_probabilities(model, x, T)[T, y]))
        if k < 20:
            Tf = min(T, 10)
            frac = PassingTimeTable(table.B, np.vectorize(Fraction, otypes=[object])(table.r[:Tf]))
            for x in range(n):
                for y in range(n):
                    for t in range(Tf + 1):
                        exact_ok &= renewal_occupation(frac, x, y, t) == composition_sum_oracle(frac, x, y, t)
    report(4, worst <= 1e-12 and exact_ok,
           f"renewal vs matrix powers {worst:.1e}; exact composition oracle agrees: {exact_ok}")


def test_05_lazy_commutation():
    rng = np.random.default_rng(SEED + 5)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        model = random_walk_model(rng, n)
        B = random_subset(rng, n)
        T = 40
        data = lazy_transform_data(passing_time_table(model, B, T))
        direct = passing_time_table(lazy_transform_model(model), B, T)
        worst = max(worst, float(np.abs(data.r - direct.r).max()))
    q_ok = lazy_weight(2, 1) == 0.25 and lazy_weight(3, 1) == 0.25
    report(5, worst <= 1e-12 and q_ok, f"data-side vs model-side {worst:.1e}; q(2,1) = q(3,1) = 1/4: {q_ok}")


def test_06_walk_recovery():
    rng = np.random.default_rng(SEED + 6)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 6))
        model = random_walk_model(rng, n)
        rec = recover_walk_data_on_B(passing_time_table(model, range(n), 2000), 2000)
        C = model.conductance_matrix
        scale = np.sum(rec.A0c * C) / np.sum(C * C)  # best global scalar
        worst = max(worst, float(np.abs(rec.A0c - scale * C).max()))
    two = walk_from_conductances(path(2), [1.0], [1.0, 0.0])
    rec = recover_walk_data_on_B(passing_time_table(two, [0, 1], 2000), 2000)
    ex = max(np.abs(rec.A0m - [1, 0.5]).max(), abs(rec.A0c[0, 1] - 0.25), abs(rec.A0c[0, 0] - 0.25))
    report(6, worst <= 1e-6 and ex <= 1e-9,
           f"20 models up to one scalar {worst:.1e}; two-vertex example error {ex:.1e}")


def test_07_single_realization_estimator():
    rng = np.random.default_rng(SEED + 7)
    model = random_walk_model(rng, 5, lazy=1.0)  # every vertex can stay: aperiodic
    B = list(range(5))
    cells = [(y, z, T) for y in B for z in B for T in range(1, 6)]
    exact = {(y, T): occupation_probabilities(model, y, T)[T] for y in B for T in range(1, 6)}
    inside = total = 0
    for r in range(20):
        seed = replicate_seed(SEED, r)
        obs = observe_on_B(simulate(model, 0, 1_000_000, seed), B, seed)
        for y, z, T in cells:
            est = estimate_occupation_from_realization(obs, y, z, T)
            total += 1
            inside += abs(est.estimate - exact[y, T][z]) <= 3 / np.sqrt(est.count)
    frac = inside / total
    report(7, frac >= 0.95, f"{inside}/{total} cells within 3/sqrt(N) ({100 * frac:.1f}%)")


def test_08_duhamel():
    # bounded flows carry the absolute tolerance; growing ones are compared relative to their size
    rng = np.random.default_rng(SEED + 8)
    worst = worst_rel = 0.0
    for k in range(200):
        n = int(rng.integers(1, 9))
        g = random_stable_graph(rng, n) if k < 100 else random_graph(rng, n, q_scale=0.5)
        T = int(rng.integers(1, 13))
        support = random_subset(rng, n)
        f = SourceTerm(support, rng.normal(size=(T, len(support))))
        want = solve_discrete_heat_source(g, f, T).values
        diff = float(np.abs(duhamel_superpose(g, f, T).values - want).max())
        if k < 100:
            worst = max(worst, diff)
        else:
            worst_rel = max(worst_rel, diff / max(1.0, float(np.abs(want).max())))
    report(8, worst <= 1e-13 and worst_rel <= 1e-13,
           f"100 bounded pairs, max difference {worst:.1e}; 100 general pairs, relative {worst_rel:.1e}")


def test_09_observability():
    rng = np.random.default_rng(SEED + 9)
    worst = worst_limit = 0.0
    tried = converged = 0
    done = 0
    while done < 50:
        n = int(rng.integers(1, 9))
        g = random_graph(rng, n)
        B = random_subset(rng, n)
        dec = decompose(g)
        if not unique_continuation_check(dec, B):
            continue
        done += 1
        data = restrict_to_subset(dec, B)
        w = rng.normal(size=n)
        truth = dec.eigenvectors.T @ (dec.mu * w)
        U = solve_discrete_heat_ivp(g, w, 3 * n).on(B)
        worst = max(worst, float(np.abs(extract_coefficients_discrete(U, data).values - truth).max()))
    done = 0
    while done < 50:
        n = int(rng.integers(1, 7))
        g = random_stable_graph(rng, n)
        B = random_subset(rng, n)
        dec = decompose(g)
        if not unique_continuation_check(dec, B):
            continue
        done += 1
        w = rng.normal(size=n)
        U = solve_discrete_heat_ivp(g, w, 200).on(B)
        data = restrict_to_subset(dec, B)
        tried += 1
        try:
            lim = extract_coefficients_discrete(U, data, "limit", t_max=200).values
        except LimitNotConvergedError:
            continue
        converged += 1
        worst_limit = max(worst_limit, float(np.abs(lim - extract_coefficients_discrete(U, data).values).max()))
    c4 = cycle(4)
    singular = False
    try:
        extract_coefficients_discrete(solve_discrete_heat_ivp(c4, np.arange(4.0), 20).on([0]),
                                      restrict_to_subset(decompose(c4), [0]))
    except SingularSystemError:
        singular = True
    report(9, worst <= 1e-10 and worst_limit <= 1e-4 and singular and converged > 0,
           f"exact-solve error {worst:.1e}; limit converged {converged}/{tried}, agreement {worst_limit:.1e}; "
           f"C4 with B={{v1}} singular: {singular}")


def test_10_controllability():
    rng = np.random.default_rng(SEED + 10)
    cases = mismatches = 0
    worst = 0.0
    for g in atlas_connected(6):
        n = g.n
        dec = decompose(g)
        for bmask in range(1, 1 << n):
            B = [x for x in range(n) if bmask >> x & 1]
            cases += 1
            uc = unique_continuation_check(dec, B).holds
            rank = reachability_rank(g, B, n).rank
            if uc != (rank == n):
                mismatches += 1
            if uc:
                target = rng.normal(size=n)
            else:
                # a reachable target: the end state of a random source
                f = SourceTerm(B, rng.normal(size=(n, len(B))))
                target = solve_discrete_heat_source(g, f, n).values[n]
            try:
                f = synthesize_control(g, B, n, target)
            except UnreachableTargetError as exc:
                worst = max(worst, exc.residual)
                continue
            reached = solve_discrete_heat_source(g, f, n).values[n]
            worst = max(worst, float(np.sqrt(np.sum(g.mu * (reached - target) ** 2))))
    report(10, mismatches == 0 and worst <= 1e-8,
           f"{cases} (graph, B) cases, UC/rank mismatches {mismatches}, worst steering residual {worst:.1e}")


def test_11_tpc_implies_uc():
    rng = np.random.default_rng(SEED + 11)
    checked = violations = 0
    for g in atlas_connected(7):
        n = g.n
        tpc = two_points_condition_table(g)
        holds = np.flatnonzero(tpc[1:]) + 1
        for _ in range(5):
            dec = decompose(g.replace(q=rng.uniform(-1.0, 1.0, n)))
            for bmask in holds:
                B = [x for x in range(n) if bmask >> x & 1]
                checked += 1
                violations += not unique_continuation_check(dec, B).holds
    p3 = path(3)
    witness = (not two_points_condition_table(p3)[1]) and unique_continuation_check(decompose(p3), [0]).holds
    report(11, violations == 0 and witness,
           f"{checked} TPC instances, UC violations {violations}; P3 with B={{a}}: no TPC but UC: {witness}")


def test_12_wave_fixture():
    g = WeightedGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (2, 4)])
    gb = GraphWithBoundary(g, 4, (4,))
    W = solve_discrete_wave(gb, np.array([0.0, 1.0, 0.0, -1.0, 0.0]), 20).values
    dirichlet = float(np.abs(W[:, 4]).max())
    neumann = max(float(np.abs(neumann_value(gb, W[t])).max()) for t in range(21))
    norm = float(np.sqrt(np.sum(g.mu[:4] * W[:, :4] ** 2, axis=1)).min())
    report(12, dirichlet <= 1e-12 and neumann <= 1e-12 and norm > 1,
           f"max Dirichlet {dirichlet:.1e}, max Neumann {neumann:.1e}, min interior norm {norm:.3f}")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                pass
