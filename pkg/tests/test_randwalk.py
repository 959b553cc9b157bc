from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cycle, path, random_walk_model
from gsi.evolution import heat_kernel_table
from gsi.fixtures import appendix_pair
from gsi.graph import GraphError, WeightedGraph
from gsi.randwalk import (Q0, ConvergenceError, PassingTimeTable, WalkError, WalkModel,
                          brute_force_identify, composition_sum_oracle, estimate_occupation_from_realization,
                          estimate_replicates, first_passage_exact, lazy_transform_data,
                          lazy_transform_model, lazy_weight, observe_on_B, occupation_from_passing,
                          occupation_probabilities, passing_time_table, passing_to_heat_table,
                          read_conductances, read_passing_csv, read_trajectory, recover_walk_data_on_B,
                          renewal_occupation, replicate_seed, simulate, stationary_state,
                          walk_from_conductances, walk_from_weights, write_conductances,
                          write_passing_csv, write_trajectory)


def two_vertex():
    """c12 = 1, c11 = 1, c22 = 0: m = (2, 1)."""
    return walk_from_conductances(path(2), [1.0], [1.0, 0.0])


def swap():
    return walk_from_conductances(path(2), [1.0])


def test_two_vertex_model():
    w = two_vertex()
    assert np.array_equal(w.m, [2, 1])
    assert np.array_equal(w.P, [[0.5, 0.5], [1, 0]])


def test_equal_probability_walk():
    w = walk_from_conductances(cycle(5).replace(edges=((0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (0, 2)),
                                                g=np.ones(6)), np.ones(6))
    deg = w.graph.degrees
    for x in range(5):
        for y in w.graph.neighbors(x):
            assert w.P[x, y] == pytest.approx(1 / deg[x])


def test_single_vertex_walk():
    w = walk_from_conductances(WeightedGraph.from_edges(1, []), [], [1.0])
    assert np.array_equal(w.P, [[1.0]])


def test_walk_from_weights_examples():
    pair = appendix_pair(4.0)
    left = walk_from_weights(pair.left)
    for (i, j) in pair.left.edges:
        assert left.P[i, j] == 0.25
    assert left.P[3, 3] == 0.0  # v4 has degree 4
    tight = walk_from_weights(path(3, mu=[1, 2, 1]))
    assert np.all(tight.c_self == 0)
    assert np.allclose(walk_from_weights(path(2, mu=2.0)).P, 0.5)
    with pytest.raises(WalkError):
        walk_from_weights(path(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_stochastic_and_reversible(n, seed):
    w = random_walk_model(np.random.default_rng(seed), n)
    P = w.P
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(P >= 0)
    A = w.graph.adjacency | np.eye(n, dtype=bool)
    assert np.all(P[~A] == 0)
    assert np.allclose(w.m[:, None] * P, (w.m[:, None] * P).T, atol=1e-14)


def test_occupation_examples():
    w = two_vertex()
    occ = occupation_probabilities(w, 0, 2)
    assert np.array_equal(occ[0], [1, 0])
    assert occ[2, 1] == pytest.approx(0.25)


def test_first_passage_examples():
    w = two_vertex()
    r = first_passage_exact(w, 0, 1, 10)
    assert np.allclose(r, 2.0 ** -np.arange(1, 11))
    r22 = first_passage_exact(w, 1, 1, 3)
    assert r22[0] == 0 and r22[1] == pytest.approx(0.5)
    rnd = random_walk_model(np.random.default_rng(3), 5)
    for x in range(5):
        for y in range(5):
            assert first_passage_exact(rnd, x, y, 1)[0] == rnd.P[x, y]


def test_first_passage_against_path_enumeration():
    w = random_walk_model(np.random.default_rng(9), 4)
    P = w.P
    T = 6

    def walk_prob(x, y, t):
        # probability of paths x -> ... -> y of length t avoiding y before t
        if t == 1:
            return P[x, y]
        return sum(P[x, z] * walk_prob(z, y, t - 1) for z in range(4) if z != y)

    for x in range(4):
        for y in range(4):
            r = first_passage_exact(w, x, y, T)
            assert np.allclose(r, [walk_prob(x, y, t) for t in range(1, T + 1)], atol=1e-15)


def test_renewal_examples():
    w = two_vertex()
    tab = passing_time_table(w, [0, 1], 5)
    assert renewal_occupation(tab, 0, 1, 1) == tab.value(1, 0, 1)
    expect = tab.value(2, 0, 1) + tab.value(1, 0, 1) * tab.value(1, 1, 1)
    assert renewal_occupation(tab, 0, 1, 2) == pytest.approx(0.25)
    assert expect == pytest.approx(0.25)


def test_renewal_composition_exact_fractions(rng):
    for _ in range(5):
        n = int(rng.integers(2, 6))
        w = random_walk_model(rng, n)
        tab = passing_time_table(w, range(n), 8)
        exact = PassingTimeTable(tab.B, np.vectorize(Fraction, otypes=[object])(tab.r))
        for x in range(n):
            for y in range(n):
                for T in range(1, 9):
                    assert renewal_occupation(exact, x, y, T) == composition_sum_oracle(exact, x, y, T)


def test_occupation_from_passing_matches_powers(rng):
    w = random_walk_model(rng, 5)
    B = [0, 2, 4]
    occ = occupation_from_passing(passing_time_table(w, B, 30))
    for i, x in enumerate(B):
        truth = occupation_probabilities(w, x, 30)[:, B]
        assert np.abs(occ[:, i, :] - truth).max() <= 1e-12


def test_lazy_model_examples():
    lz = lazy_transform_model(two_vertex())
    assert np.array_equal(lz.m, [4, 2])
    assert np.allclose(lz.P, [[0.75, 0.25], [0.5, 0.5]])
    twice = lazy_transform_model(lz)
    assert np.allclose(twice.P, (np.eye(2) + lz.P) / 2)
    rnd = random_walk_model(np.random.default_rng(1), 6, lazy=0.0)
    assert np.all(np.diag(lazy_transform_model(rnd).P) >= 0.5)


def test_lazy_weights():
    assert lazy_weight(2, 1) == 0.25
    assert lazy_weight(3, 1) == 0.25
    assert lazy_weight(1, 0) == 0.5
    assert lazy_weight(3, 5) == 0.0
    exact = Fraction(comb(1499, 749), 2 ** 1500)
    assert lazy_weight(1500, 749) == pytest.approx(float(exact), rel=1e-9)


def test_lazy_data_examples():
    tab = lazy_transform_data(passing_time_table(two_vertex(), [0, 1], 4))
    assert tab.value(1, 0, 1) == pytest.approx(0.25)
    assert tab.value(1, 1, 1) == pytest.approx(0.5)


def test_lazy_commutation(rng):
    for _ in range(10):
        n = int(rng.integers(2, 6))
        w = random_walk_model(rng, n)
        B = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        data = lazy_transform_data(passing_time_table(w, B, 40))
        model = passing_time_table(lazy_transform_model(w), B, 40)
        assert np.abs(data.r - model.r).max() <= 1e-12


def test_stationary_examples():
    assert np.allclose(stationary_state(two_vertex()), [2 / 3, 1 / 3])
    assert np.allclose(stationary_state(lazy_transform_model(two_vertex())), [2 / 3, 1 / 3])
    g = WeightedGraph.from_edges(4, [(0, 1), (1, 2), (1, 3), (2, 3)])
    s = stationary_state(walk_from_conductances(g, np.ones(4)))
    assert np.allclose(s, g.degrees / g.degrees.sum())


def test_recovery_two_vertex():
    rec = recover_walk_data_on_B(passing_time_table(two_vertex(), [0, 1], 2000))
    assert np.abs(rec.A0m - [1, 0.5]).max() <= 1e-9
    assert np.abs(rec.A0m_walk - [0.5, 0.25]).max() <= 1e-9
    assert abs(rec.A0c[0, 1] - 0.25) <= 1e-9
    assert abs(rec.A0c[0, 0] - 0.25) <= 1e-9
    assert abs(rec.A0c[1, 1]) <= 1e-9
    assert rec.normalization_vertex == 0


def test_recovery_full_B_gauge(rng):
    for _ in range(5):
        n = int(rng.integers(2, 6))
        w = random_walk_model(rng, n)
        rec = recover_walk_data_on_B(passing_time_table(w, range(n), 2000))
        C = w.conductance_matrix
        assert np.abs(rec.A0c / rec.A0c.sum() - C / C.sum()).max() <= 1e-6


def test_recovery_partial_B_marks_unknown_diagonal():
    w = walk_from_conductances(path(3), [1.0, 1.0])
    rec = recover_walk_data_on_B(passing_time_table(w, [0, 1], 2000))
    assert np.isnan(rec.A0c[1, 1])
    assert not np.isnan(rec.A0c[0, 0])


def test_recovery_appendix_pair_identical():
    pair = appendix_pair(4.0)
    a = recover_walk_data_on_B(passing_time_table(walk_from_weights(pair.left), pair.B_left, 2000))
    b = recover_walk_data_on_B(passing_time_table(walk_from_weights(pair.right), pair.B_right, 2000))
    assert np.allclose(a.A0m, b.A0m, atol=1e-12)
    assert np.allclose(a.A0c, b.A0c, atol=1e-12, equal_nan=True)


def test_recovery_needs_horizon():
    with pytest.raises(WalkError):
        recover_walk_data_on_B(passing_time_table(two_vertex(), [0, 1], 50))


def test_recovery_reports_slow_convergence():
    # a long path mixes too slowly for the default limit horizon
    n = 60
    w = walk_from_conductances(path(n), np.ones(n - 1))
    with pytest.raises(ConvergenceError):
        recover_walk_data_on_B(passing_time_table(w, [0, n - 1], 2000))


def test_simulate_examples():
    single = walk_from_conductances(WeightedGraph.from_edges(1, []), [], [1.0])
    assert np.all(simulate(single, 0, 20, 1) == 0)
    assert list(simulate(swap(), 0, 6, 1)) == [0, 1, 0, 1, 0, 1, 0]


def test_simulate_deterministic():
    w = random_walk_model(np.random.default_rng(2), 5)
    assert np.array_equal(simulate(w, 0, 1000, 42), simulate(w, 0, 1000, 42))
    assert not np.array_equal(simulate(w, 0, 1000, 42), simulate(w, 0, 1000, 43))


def test_simulated_first_passage_histogram():
    w = random_walk_model(np.random.default_rng(4), 4)
    traj = simulate(w, 0, 400_000, 7)
    # successive returns to 0 are i.i.d. passage times tau+(0, 0)
    visits = np.flatnonzero(traj == 0)
    gaps = np.diff(visits)
    T = 8
    exact = first_passage_exact(w, 0, 0, T)
    N = len(gaps)
    for t in range(1, T + 1):
        p = exact[t - 1]
        emp = np.mean(gaps == t)
        assert abs(emp - p) <= 4 * np.sqrt(p * (1 - p) / N) + 1e-12


def test_observe_examples():
    traj = [0, 1, 2, 1, 0]
    assert list(observe_on_B(traj, [0, 1, 2]).symbols) == traj
    assert list(observe_on_B(traj, []).symbols) == [Q0] * 5
    assert list(observe_on_B(traj, [0, 2]).symbols) == [0, Q0, 2, Q0, 0]


def test_estimator_examples():
    obs = observe_on_B(simulate(swap(), 0, 2000, 3), [0, 1])
    assert estimate_occupation_from_realization(obs, 0, 0, 2).estimate == 1.0
    single = walk_from_conductances(WeightedGraph.from_edges(1, []), [], [1.0])
    obs = observe_on_B(simulate(single, 0, 500, 3), [0])
    assert estimate_occupation_from_realization(obs, 0, 0, 3).estimate == 1.0
    with pytest.raises(GraphError):
        estimate_occupation_from_realization(obs, 0, 5, 1)


def test_estimator_two_vertex_lazy():
    lz = lazy_transform_model(two_vertex())
    obs = observe_on_B(simulate(lz, 0, 1_000_000, 11), [0, 1])
    for y, z, T in [(0, 1, 1), (0, 0, 3), (1, 0, 2)]:
        est = estimate_occupation_from_realization(obs, y, z, T)
        exact = occupation_probabilities(lz, y, T)[T, z]
        assert abs(est.estimate - exact) < 5 / np.sqrt(est.count)


def test_estimator_too_short():
    obs = observe_on_B(simulate(two_vertex(), 0, 10, 1), [0, 1])
    with pytest.raises(WalkError):
        estimate_occupation_from_realization(obs, 0, 1, 3)


def test_replicates_are_reproducible():
    w = lazy_transform_model(random_walk_model(np.random.default_rng(5), 4))
    cells = [(0, 1, 1), (1, 1, 2)]
    a = estimate_replicates(w, 0, [0, 1], 20_000, 99, 4, cells, workers=1)
    b = estimate_replicates(w, 0, [0, 1], 20_000, 99, 4, cells, workers=4)
    assert np.array_equal(a, b)
    assert replicate_seed(99, 0) != replicate_seed(99, 1)
    assert replicate_seed(99, 3) == replicate_seed(99, 3)


def test_passing_to_heat_table_consistency(rng):
    w = random_walk_model(rng, 4)
    tab = passing_time_table(w, range(4), 2000)
    heat = passing_to_heat_table(tab, T=12)
    for x in range(4):
        assert np.allclose(heat.transition()[:, x, :], occupation_probabilities(w, x, 12), atol=1e-12)
    direct = heat_kernel_table(w.as_weighted_graph(), range(4), 12)
    assert np.allclose(heat.transition(), direct.transition(), atol=1e-12)


def test_passing_to_heat_single_vertex():
    single = walk_from_conductances(WeightedGraph.from_edges(1, []), [], [1.0])
    heat = passing_to_heat_table(passing_time_table(single, [0], 2000), T=5)
    assert np.allclose(heat.transition(), 1.0)


def test_brute_force_identify():
    def unit(g):
        return walk_from_conductances(g, np.ones(len(g.edges)))

    p2, p3, c4 = unit(path(2)), unit(path(3)), unit(cycle(4))
    data = passing_time_table(p3, [0, 1], 10)
    assert brute_force_identify(data, [p2, p3, c4]) == [1]
    pair = appendix_pair(4.0)
    models = [walk_from_weights(pair.left), walk_from_weights(pair.right)]
    data = passing_time_table(models[0], pair.B_left, 50)
    assert brute_force_identify(data, models, tol=1e-12) == [0, 1]
    heat = heat_kernel_table(pair.left, pair.B_left, 20)
    assert brute_force_identify(heat, models, tol=1e-12) == [0, 1]
    with pytest.raises(WalkError):
        brute_force_identify(data, [])


def test_file_round_trips(tmp_path, rng):
    w = random_walk_model(rng, 4)
    tab = passing_time_table(w, [1, 3], 7)
    write_passing_csv(tab, tmp_path / "r.csv")
    back = read_passing_csv(tmp_path / "r.csv")
    assert back.B == tab.B and np.array_equal(back.r, tab.r)
    sym = observe_on_B(simulate(w, 0, 50, 1), [1, 3]).symbols
    write_trajectory(sym, tmp_path / "traj.txt")
    assert "*" in (tmp_path / "traj.txt").read_text()
    assert np.array_equal(read_trajectory(tmp_path / "traj.txt"), sym)
    write_conductances(w, tmp_path / "c.csv")
    again = read_conductances(w.graph, tmp_path / "c.csv")
    assert np.array_equal(again.c, w.c) and np.array_equal(again.c_self, w.c_self)


def test_model_validation():
    with pytest.raises(WalkError):
        WalkModel(path(2), [0.0], [0.0, 0.0])
    with pytest.raises(WalkError):
        WalkModel(path(2), [1.0], [-1.0, 0.0])
