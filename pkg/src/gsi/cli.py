"""Command-line entry point: ``gsi <subcommand> ...``.

Exit status: 0 when the checked statement holds, 1 when it fails, 2 on
errors (bad input, singular systems, non-convergence).
"""

from __future__ import annotations

import os

_threads = os.environ.get("GSI_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import control, equivalence, evolution, fixtures, graph, randwalk, spectral  # noqa: E402

EXIT_HOLDS, EXIT_FAILS, EXIT_ERROR = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(v) for v in np.asarray(x).ravel()) + "]"
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def emit(key: str, value) -> None:
    print(f"{key}={value if isinstance(value, str) else fmt(value)}")


def parse_list(text: str | None, kind=int):
    if text is None:
        return None
    text = text.strip()
    if not text:
        return []
    if text.startswith("["):
        return [kind(v) for v in json.loads(text)]
    return [kind(v) for v in text.replace(" ", "").split(",")]


def load_inputs(args) -> tuple[graph.WeightedGraph, tuple[int, ...] | None]:
    g, B = graph.load_graph(args.graph)
    if getattr(args, "B", None) is not None:
        B = g.subset(parse_list(args.B))
    return g, B


def require_B(B):
    if B is None:
        raise graph.GraphError("no B given (use --B or a B entry in the graph file)")
    return B


def out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- subcommands -----------------------------------------------------------------


def cmd_tpc(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    res = graph.check_two_points_condition(g, B, cap=args.cap)
    uc = spectral.unique_continuation_check(spectral.decompose(g), B, tol=args.tol or spectral.UC_TOL)
    emit("tpc", res.holds)
    emit("witness", "none" if res.witness is None else fmt(list(res.witness)))
    emit("uc", uc.holds)
    if not uc.holds:
        emit("uc_witness_eigenvalue", uc.witness_eigenvalue)
    name = (lambda x: g.labels[x]) if g.labels is not None else str
    tpc = "holds" if res.holds else "fails"
    if res.witness is not None:
        tpc += ", witness {" + ",".join(name(x) for x in res.witness) + "}"
    print(f"TPC: {tpc}; UC: {'holds' if uc.holds else 'fails'}")
    return EXIT_HOLDS if res.holds else EXIT_FAILS


def cmd_spectrum(args) -> int:
    g, B = load_inputs(args)
    dec = spectral.decompose(g, args.cluster_tol)
    for lam in dec.eigenvalues:
        emit("eigenvalue", lam)
    B = B if B is not None else tuple(range(g.n))
    d = out_dir(args)
    if d is not None:
        spectral.write_spectral_csv(spectral.restrict_to_subset(dec, B), d / "spectrum.csv")
    return EXIT_HOLDS


def cmd_heat(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    dec = spectral.decompose(g)
    dt = args.dt if args.dt is not None else (1.0 if args.mode == "discrete"
                                              else evolution.default_time_step(dec.eigenvalues))
    table = evolution.heat_kernel_table(g, B, args.T, args.mode, dt, dec)
    d = out_dir(args)
    if d is not None:
        evolution.write_kernel_csv(table, d / f"kernel_{args.mode}.csv")
    emit("mode", args.mode)
    emit("time_step", table.time_step)
    emit("samples", table.T + 1)
    return EXIT_HOLDS


def _with_boundary_last(g: graph.WeightedGraph, boundary) -> tuple[graph.GraphWithBoundary, list[int]]:
    """Relabel so boundary vertices come last; returns the graph and old ids in new order."""
    boundary = list(boundary)
    order = [v for v in range(g.n) if v not in boundary] + boundary
    new = {old: k for k, old in enumerate(order)}
    edges = [(new[i], new[j]) for i, j in g.edges]
    h = graph.WeightedGraph.from_edges(g.n, edges, mu=g.mu[order], g=g.g, q=g.q[order])
    return graph.GraphWithBoundary(h, g.n - len(boundary), tuple(range(g.n - len(boundary), g.n))), order


def cmd_wave(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    if args.boundary_copy:
        gb = graph.build_boundary_copy(g, B)
        order = list(range(gb.graph.n))
    else:
        gb, order = _with_boundary_last(g, B)
    v_old = np.zeros(gb.graph.n)
    if args.v is not None:
        vals = parse_list(args.v, float)
        if len(vals) != g.n:
            raise graph.GraphError("--v needs one value per vertex of the input graph")
        v_old[:g.n] = vals
    v = v_old[order]
    W = evolution.solve_discrete_wave(gb, v, args.T).values
    dirichlet = float(np.abs(W[:, list(gb.boundary)]).max())
    neumann = max(float(np.abs(evolution.neumann_value(gb, W[t])).max()) for t in range(args.T + 1))
    norms = np.sqrt(np.sum(gb.graph.mu[None, :gb.interior_count] * W[:, :gb.interior_count] ** 2, axis=1))
    emit("max_dirichlet", dirichlet)
    emit("max_neumann", neumann)
    emit("min_interior_norm", norms.min())
    d = out_dir(args)
    if d is not None:
        with open(d / "wave.csv", "w", encoding="utf-8") as fh:
            fh.write("t,x,value\n")
            for t in range(args.T + 1):
                for k, x in enumerate(order):
                    fh.write(f"{t},{x},{W[t, k]:.17g}\n")
    tol = args.tol or 1e-12
    vanishing = dirichlet <= tol and neumann <= tol
    emit("vanishing_cauchy_data", vanishing)
    return EXIT_HOLDS if vanishing else EXIT_FAILS


def _compare_nonzero_groups(est: spectral.InteriorSpectralData, truth: spectral.InteriorSpectralData):
    """Match groups by eigenvalue, skipping true groups whose values on B vanish.

    Returns (eigenvalue error, Gram error, [(lambda, multiplicity, rank on B, recovered rank)]).
    """
    est_gram = spectral.gram_matrices(est)
    est_vals = np.array([lam for lam, _ in est_gram])
    eig_err, gram_err, ranks = 0.0, 0.0, []
    for grp, (lam, Q) in zip(truth.groups, spectral.gram_matrices(truth)):
        r_true = int(np.linalg.matrix_rank(truth.phi_B[:, grp], tol=1e-9))
        if r_true == 0:
            ranks.append((lam, len(grp), 0, 0))
            continue
        if est_vals.size == 0:
            return np.inf, np.inf, ranks
        k = int(np.argmin(np.abs(est_vals - lam)))
        eig_err = max(eig_err, abs(est_vals[k] - lam))
        gram_err = max(gram_err, float(np.abs(est_gram[k][1] - Q).max()))
        ranks.append((lam, len(grp), r_true, len(est.groups[k])))
    if sum(1 for r in ranks if r[2] > 0) != len(est.groups):
        return np.inf, np.inf, ranks
    return eig_err, gram_err, ranks


def cmd_roundtrip(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    dec = spectral.decompose(g)
    truth = spectral.restrict_to_subset(dec, B)
    uc = spectral.unique_continuation_check(dec, B)
    emit("uc", uc.holds)
    modes = evolution.MODES if args.mode == "all" else (args.mode,)
    n_max = args.nmax or g.n
    tol = args.tol or 1e-7
    ok_all = True
    for mode in modes:
        dt = 1.0 if mode == "discrete" else (args.dt or evolution.default_time_step(dec.eigenvalues))
        T = args.T or 2 * n_max + 2
        table = evolution.heat_kernel_table(g, B, T, mode, dt, dec)
        est = equivalence.extract_spectral(table, n_max, args.rank_tol)
        eig_err, gram_err, ranks = _compare_nonzero_groups(est, truth)
        ok = eig_err <= tol and gram_err <= max(tol, 1e-6)
        ok_all &= ok
        emit(f"{mode}.eigenvalue_error", eig_err)
        emit(f"{mode}.gram_error", gram_err)
        for lam, mult, r_true, r_est in ranks:
            if r_true < mult:
                emit(f"{mode}.rank_deficient_group", f"eigenvalue={fmt(lam)} multiplicity={mult} "
                     f"predicted_rank={r_true} recovered_rank={r_est}")
        emit(f"{mode}.pass", ok)
    return EXIT_HOLDS if ok_all else EXIT_FAILS


def cmd_walk_sim(args) -> int:
    g, B = load_inputs(args)
    model = randwalk.read_conductances(g, args.c) if args.c else randwalk.walk_from_weights(g)
    traj = randwalk.simulate(model, args.start, args.steps, args.seed)
    symbols = randwalk.observe_on_B(traj, B).symbols if B is not None else traj
    d = out_dir(args)
    if d is not None:
        randwalk.write_trajectory(symbols, d / "trajectory.txt")
    emit("steps", args.steps)
    emit("seed", args.seed)
    emit("final_state", int(traj[-1]))
    return EXIT_HOLDS


def _emit_recovered(rec: randwalk.RecoveredWalkData) -> None:
    emit("normalization_vertex", rec.normalization_vertex)
    for i, x in enumerate(rec.B):
        emit(f"A0m[{x}]", rec.A0m[i])
    for i, x in enumerate(rec.B):
        for k, y in enumerate(rec.B):
            if k < i:
                continue
            v = rec.A0c[i, k]
            emit(f"A0c[{x},{y}]", "unknown" if np.isnan(v) else fmt(v))


def cmd_walk_invert(args) -> int:
    table = randwalk.read_passing_csv(args.passing)
    if args.x0 != "auto":
        first = int(args.x0)
        order = [first] + [b for b in table.B if b != first]
        idx = [table.index(b) for b in order]
        table = randwalk.PassingTimeTable(tuple(order), table.r[:, idx][:, :, idx])
    rec = randwalk.recover_walk_data_on_B(table, args.tmax)
    _emit_recovered(rec)
    return EXIT_HOLDS


def _load_walk(path: Path) -> randwalk.WalkModel:
    """A graph file, with conductances from a sibling ``<stem>.csv`` when present."""
    g, _ = graph.load_graph(path)
    c = path.with_suffix(".csv")
    return randwalk.read_conductances(g, c) if c.exists() else randwalk.walk_from_weights(g)


def load_candidates(directory) -> tuple[list[str], list[randwalk.WalkModel]]:
    paths = sorted(Path(directory).glob("*.json"))
    return [p.stem for p in paths], [_load_walk(p) for p in paths]


def cmd_pipeline_walk(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    model = randwalk.read_conductances(g, args.c) if args.c else randwalk.walk_from_weights(g)
    table = randwalk.passing_time_table(model, B, args.tmax)
    rec = randwalk.recover_walk_data_on_B(table, args.tmax)
    _emit_recovered(rec)
    n_max = args.nmax or g.n
    heat = randwalk.passing_to_heat_table(table, rec.A0m_walk, T=2 * n_max + 2)
    est = equivalence.extract_spectral_discrete(heat, n_max, args.rank_tol)
    d = out_dir(args)
    if d is not None:
        randwalk.write_passing_csv(table, d / "passing.csv")
        evolution.write_kernel_csv(heat, d / "kernel_discrete.csv")
        spectral.write_spectral_csv(est, d / "spectrum.csv")
    for lam in est.eigenvalues:
        emit("recovered_eigenvalue", lam)
    ok = True
    if args.candidates is not None:
        names, models = load_candidates(args.candidates)
        hits = randwalk.brute_force_identify(table, models, tol=args.tol or 1e-10)
        emit("matches", "[" + ", ".join(names[i] for i in hits) + "]")
        ok = len(hits) == 1
        emit("unique_match", ok)
    else:
        truth = spectral.decompose(model.as_weighted_graph()).eigenvalues
        visible = len(est.eigenvalues) == len(truth)
        err = float(np.abs(np.sort(est.eigenvalues) - truth).max()) if visible else float("inf")
        emit("eigenvalue_error", err)
        ok = err <= (args.tol or 1e-6)
        emit("pass", ok)
    return EXIT_HOLDS if ok else EXIT_FAILS


def cmd_observe(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    dec = spectral.decompose(g)
    data = spectral.restrict_to_subset(dec, B)
    w = np.array(parse_list(args.w, float))
    if len(w) != g.n:
        raise graph.GraphError("--w needs one value per vertex")
    U = evolution.solve_discrete_heat_ivp(g, w, args.T).on(B)
    coef = control.extract_coefficients_discrete(U, data, args.method, t_max=args.T if args.method == "limit" else None)
    truth = dec.eigenvectors.T @ (dec.mu * w)
    for j, c in enumerate(coef.values):
        emit(f"w_hat[{j}]", c)
    err = float(np.abs(coef.values - truth).max())
    emit("max_error", err)
    tol = args.tol or (1e-10 if args.method == "exact-solve" else 1e-4)
    return EXIT_HOLDS if err <= tol else EXIT_FAILS


def cmd_control_rank(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    res = control.reachability_rank(g, B, args.T, tol=args.tol or control.RANK_TOL)
    emit("rank", res.rank)
    emit("dimension", res.dimension)
    return EXIT_HOLDS if res.full else EXIT_FAILS


def cmd_control_steer(args) -> int:
    g, B = load_inputs(args)
    B = require_B(B)
    if args.target is None:
        raise graph.GraphError("--target is required")
    p = Path(args.target)
    target = json.loads(p.read_text(encoding="utf-8")) if p.exists() else parse_list(args.target, float)
    try:
        f = control.synthesize_control(g, B, args.T, target, tol=args.tol or control.STEER_TOL)
    except control.UnreachableTargetError as exc:
        emit("reachable", False)
        emit("residual", exc.residual)
        return EXIT_FAILS
    reached = evolution.solve_discrete_heat_source(g, f, args.T).values[args.T]
    emit("reachable", True)
    emit("residual", float(np.sqrt(np.sum(g.mu * (reached - np.asarray(target)) ** 2))))
    d = out_dir(args)
    if d is not None:
        control.write_source_csv(f, d / "control.csv")
    return EXIT_HOLDS


def cmd_counterexample(args) -> int:
    C = args.C
    rep = fixtures.verify_isospectral_pair(C, T=args.T, tol=args.tol or 1e-10)
    emit("C", C)
    emit("spectral_equal", rep.spectral_equal)
    emit("max_eigenvalue_diff", rep.max_eigenvalue_diff)
    emit("max_gram_diff", rep.max_gram_diff)
    if rep.walks_checked:
        emit("max_walk_diff", rep.max_walk_diff)
        pair = fixtures.appendix_pair(C)
        models = [randwalk.walk_from_weights(pair.left), randwalk.walk_from_weights(pair.right)]
        data = randwalk.passing_time_table(models[0], pair.B_left, args.T)
        emit("identified_candidates", fmt(randwalk.brute_force_identify(data, models, tol=1e-12)))
    emit("holds", rep.holds)
    return EXIT_HOLDS if rep.holds else EXIT_FAILS


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsi", description="Interior inverse problems for heat flows and walks on graphs.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, graph_required=True):
        p.add_argument("--graph", required=graph_required, help="graph JSON file")
        p.add_argument("--B", help="comma-separated vertex list (overrides the file's B)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory for CSV files")
        p.add_argument("--tol", type=float, default=None)
        return p

    p = common(sub.add_parser("tpc", help="Two-Points Condition and unique continuation"))
    p.add_argument("--cap", type=int, default=graph.TPC_ENUMERATION_CAP)
    p.set_defaults(func=cmd_tpc)

    p = common(sub.add_parser("spectrum", help="eigenvalues and eigenvector values on B"))
    p.add_argument("--cluster-tol", type=float, default=spectral.CLUSTER_TOL)
    p.set_defaults(func=cmd_spectrum)

    p = common(sub.add_parser("heat", help="kernel table on B"))
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--mode", choices=evolution.MODES, default="discrete")
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_heat)

    p = common(sub.add_parser("wave", help="discrete wave with B as the Neumann boundary"))
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--v", help="initial values, one per vertex")
    p.add_argument("--boundary-copy", action="store_true", help="attach pendant copies of B as the boundary")
    p.set_defaults(func=cmd_wave)

    p = common(sub.add_parser("roundtrip", help="forward table, extraction, comparison with ground truth"))
    p.add_argument("--mode", choices=evolution.MODES + ("all",), default="all")
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--rank-tol", type=float, default=equivalence.RANK_TOL)
    p.set_defaults(func=cmd_roundtrip)

    p = common(sub.add_parser("walk-sim", help="simulate a walk and write the observed trajectory"))
    p.add_argument("--c", help="conductance CSV (x,y,c); default walk from the graph weights")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--steps", type=int, default=1000)
    p.set_defaults(func=cmd_walk_sim)

    p = common(sub.add_parser("walk-invert", help="recover gauge-normalized walk data from passage times"),
               graph_required=False)
    p.add_argument("--passing", required=True, help="passage-time CSV (t,x,y,r)")
    p.add_argument("--tmax", type=int, default=randwalk.T_LIMIT)
    p.add_argument("--x0", default="auto")
    p.set_defaults(func=cmd_walk_invert)

    p = common(sub.add_parser("pipeline-walk", help="passage times -> walk data -> heat table -> spectrum"))
    p.add_argument("--c", help="conductance CSV (x,y,c)")
    p.add_argument("--tmax", type=int, default=randwalk.T_LIMIT)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--rank-tol", type=float, default=equivalence.RANK_TOL)
    p.add_argument("--candidates", help="directory of candidate graph files (optional <stem>.csv conductances)")
    p.set_defaults(func=cmd_pipeline_walk)

    p = common(sub.add_parser("observe", help="mode coefficients of an initial state from B-measurements"))
    p.add_argument("--w", required=True, help="initial state, one value per vertex")
    p.add_argument("--T", type=int, default=40)
    p.add_argument("--method", choices=control.METHODS, default="exact-solve")
    p.set_defaults(func=cmd_observe)

    p = common(sub.add_parser("control-rank", help="rank of the source-to-state map"))
    p.add_argument("--T", type=int, required=True)
    p.set_defaults(func=cmd_control_rank)

    p = common(sub.add_parser("control-steer", help="minimum-norm source reaching a target state"))
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--target", help="JSON file or comma-separated values")
    p.set_defaults(func=cmd_control_steer)

    p = common(sub.add_parser("counterexample", help="check the isospectral pair"), graph_required=False)
    p.add_argument("--C", type=float, default=4.0)
    p.add_argument("--T", type=int, default=50)
    p.set_defaults(func=cmd_counterexample)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
