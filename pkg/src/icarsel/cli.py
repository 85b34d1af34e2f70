"""Command-line interface.

Exit codes: 0 success, 1 failed check, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InputError, NumericalError
from .graph import (
    build_precision,
    chain_graph,
    check_alignment,
    grid_graph,
    load_adjacency,
    load_dataset,
    load_design,
    random_connected_graph,
    save_edge_list,
)
from .prior import EigenPrior, TracePrior, WOraclePrior
from .quadrature import QuadConfig
from .selection import SelectionConfig, SelectionResult, enumerate_and_score, write_csv, write_json
from .simulate import SimConfig, default_beta, run_benchmark, simulate_dataset, write_benchmark_csv
from .spectral import decompose

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


# ---- argument helpers -------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _n_grid(text: str) -> list[int]:
    parts = text.split(":")
    try:
        if len(parts) == 3:
            start, stop, step = (int(p) for p in parts)
            if step <= 0 or start <= 0 or stop < start:
                raise ValueError
            return list(range(start, stop + 1, step))
        return _int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step or a comma list, got {text!r}")


def _tau_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        if len(parts) == 3:
            lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
            if not (0 < lo <= hi) or num < 1:
                raise ValueError
            return np.logspace(math.log10(lo), math.log10(hi), num)
        vals = np.array(_float_list(text))
        if vals.size == 0 or np.any(vals <= 0):
            raise ValueError
        return vals
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count (log-spaced) or a comma list of positive values, got {text!r}")


def _b_fraction(text: str):
    if text == "auto":
        return None
    try:
        b = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number in (0, 1], got {text!r}")
    if not 0.0 < b <= 1.0:
        raise argparse.ArgumentTypeError(f"b-fraction must lie in (0, 1], got {b}")
    return b


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise InputError(f"{what} file not found: {path}")


def _require_parent(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise InputError(f"output directory does not exist: {parent}")


def _quad_cfg(args) -> QuadConfig:
    return QuadConfig(rel_tol=args.quad_tol)


def _read_header(path) -> list[str]:
    with open(path, newline="") as fh:
        row = next(csv.reader(fh), None)
    if not row:
        raise InputError(f"{path}: empty data file")
    return [c.strip() for c in row]


# ---- select -----------------------------------------------------------------

def _print_summary(res: SelectionResult, out=None, top: int = 10) -> None:
    out = out or sys.stdout
    order = sorted(range(len(res.models)), key=lambda i: (-res.models[i].log_post, i))
    print(f"{len(res.models)} models scored (b = {res.b_fraction:.6g})", file=out)
    print(f"{'rank':>4}  {'post_prob':>12}  {'log_q':>14}  model", file=out)
    for rank, i in enumerate(order[:top], start=1):
        r = res.models[i]
        print(f"{rank:>4}  {r.post_prob:12.6g}  {r.log_q:14.6f}  {r.spec.label(list(res.names))}", file=out)
    print("", file=out)
    print(f"{'regressor':<20} {'PIP':>10}", file=out)
    for name, v in zip(res.names, res.pip):
        print(f"{name:<20} {v:10.6f}", file=out)
    print(f"{'p_spatial':<20} {res.p_spatial:10.6f}", file=out)
    print(f"MAP model:    {res.map_model.label(list(res.names))}", file=out)
    median = ["1", *res.regressors(res.median_mask)]
    print(f"median model: {'+'.join(median)}", file=out)


def cmd_select(args) -> int:
    _require_file(args.data, "data")
    _require_file(args.adjacency, "adjacency")
    _require_parent(args.output)
    header = _read_header(args.data)
    if args.response not in header:
        raise InputError(f"response column {args.response!r} not in {args.data}")
    if args.regressors == "all":
        regs = [c for c in header if c not in (args.response, "intercept")]
    else:
        regs = [r.strip() for r in args.regressors.split(",") if r.strip()]
    if len(set(regs)) != len(regs):
        raise InputError("duplicate regressor names")
    if args.response in regs:
        raise InputError("the response cannot also be a regressor")
    if len(regs) > args.max_k:
        raise InputError(f"{len(regs)} regressors exceed the exhaustive limit of {args.max_k}")

    g = load_adjacency(args.adjacency, args.adjacency_format)
    ds = load_dataset(args.data, args.response, regs)
    check_alignment(g, ds)
    basis = decompose(build_precision(g), cache_dir=args.cache_dir)
    threads = args.threads or os.cpu_count() or 1
    cfg = SelectionConfig(b_fraction=args.b_fraction, quad=_quad_cfg(args), max_k=args.max_k,
                          threads=threads, path=args.path)
    with threadpool_limits(limits=1 if threads > 1 else None):
        res = enumerate_and_score(basis, ds, cfg)
    if args.format == "json":
        write_json(res, args.output)
    else:
        out = Path(args.output)
        write_csv(res, out, out.with_name(out.stem + "_pip" + (out.suffix or ".csv")))
    _print_summary(res)
    return EXIT_OK


# ---- simulate ---------------------------------------------------------------

def _sim_config(args, n=None) -> SimConfig:
    beta = tuple(args.beta) if args.beta else None
    k = args.k if args.k is not None else (len(beta) - 1 if beta else 5)
    if beta is None:
        beta = default_beta(k)
    return SimConfig(n=n if n is not None else args.n, graph_kind=args.graph, tau=args.tau,
                     sigma2=args.sigma2, beta=beta, k=k, seed=args.seed,
                     adjacency=getattr(args, "adjacency", None),
                     adjacency_format=getattr(args, "adjacency_format", "edge-list"))


def cmd_simulate(args) -> int:
    if args.graph == "file":
        _require_file(args.adjacency, "adjacency")
    out = Path(args.output)
    if out.exists() and not out.is_dir():
        raise InputError(f"output path exists and is not a directory: {out}")
    cfg = _sim_config(args)
    ds, g, truth = simulate_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["intercept", *ds.names, "y"])
        for row, yv in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yv))])
    save_edge_list(g, out / "adjacency.txt")
    (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    print(f"wrote {out / 'data.csv'} ({ds.n} rows, {ds.k} regressors), adjacency.txt, truth.json")
    return EXIT_OK


# ---- benchmark --------------------------------------------------------------

def cmd_benchmark(args) -> int:
    _require_parent(args.output)
    beta = tuple(args.beta) if args.beta else None
    k = args.k if args.k is not None else (len(beta) - 1 if beta else 5)
    if beta is not None and len(beta) != k + 1:
        raise InputError(f"beta has {len(beta)} entries, expected k + 1 = {k + 1}")
    if args.graph == "file":
        raise InputError("benchmark generates its own graphs; use --graph chain or grid")
    rows = run_benchmark(args.n_grid, k, args.method, args.seed, graph_kind=args.graph,
                         tau=args.tau, sigma2=args.sigma2, beta=beta, threads=args.threads,
                         repeats=args.repeats, warmup=args.warmup, kff_max_n=args.kff_max_n,
                         quad=_quad_cfg(args), time_budget=args.time_budget)
    write_benchmark_csv(rows, args.output)
    for r in rows:
        secs = "-" if r.seconds != r.seconds else f"{r.seconds:.3f}"
        print(f"n={r.n:<6} {r.method:<5} {secs:>10} s  {r.status}")
    return EXIT_OK


# ---- prior-eval / prior-check -----------------------------------------------

def _prior_graph(args):
    if args.graph == "file":
        _require_file(args.adjacency, "adjacency")
        return load_adjacency(args.adjacency, args.adjacency_format)
    if args.n is None or args.n < 3:
        raise InputError("--n (>= 3) is required for generated graphs")
    return chain_graph(args.n) if args.graph == "chain" else grid_graph(args.n)


def cmd_prior_eval(args) -> int:
    _require_parent(args.output)
    g = _prior_graph(args)
    if args.data:
        _require_file(args.data, "data")
        if not args.regressors:
            raise InputError("--regressors is required with --data")
        header = _read_header(args.data)
        regs = ([c for c in header if c != "intercept"] if args.regressors == "all"
                else [r.strip() for r in args.regressors.split(",") if r.strip()])
        X = load_design(args.data, regs)
    else:
        X = np.ones((g.n, 1))
    if X.shape[0] != g.n:
        raise InputError(f"graph has {g.n} subregions but the design has {X.shape[0]} rows")
    basis = decompose(build_precision(g))
    if args.variant == "trace":
        ev = TracePrior(basis, basis.P.T @ X)
    elif args.variant == "eigen":
        ev = EigenPrior.from_design(basis, X)
    else:
        ev = WOraclePrior(basis, X)
    vals = ev.log_prior(args.tau_grid)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "log_prior"])
        for t, v in zip(args.tau_grid, vals):
            w.writerow([repr(float(t)), repr(float(v))])
    print(f"wrote {len(vals)} rows to {args.output}")
    return EXIT_OK


def prior_equivalence_sweep(seed: int, instances: int, n_values, p_min: int, p_max: int,
                            tau_grid: np.ndarray, fault: float = 0.0):
    """Max pairwise relative discrepancy of the three prior forms over random instances.

    Returns ``(max_discrepancy, rows)`` with one row per instance.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = []
    for i in range(instances):
        n = int(n_values[i % len(n_values)])
        p = int(rng.integers(p_min, p_max + 1))
        g = random_connected_graph(n, rng)
        basis = decompose(build_precision(g))
        X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
        lt = TracePrior(basis, basis.P.T @ X, fault=fault).log_prior(tau_grid)
        le = EigenPrior.from_design(basis, X).log_prior(tau_grid)
        lw = WOraclePrior(basis, X).log_prior(tau_grid)
        disc = max(np.max(np.abs(np.expm1(a - b))) for a, b in ((lt, le), (lt, lw), (le, lw)))
        worst = max(worst, float(disc))
        rows.append((n, p, float(disc)))
    return worst, rows


def cmd_prior_check(args) -> int:
    if args.p_min < 1 or args.p_max < args.p_min:
        raise InputError("need 1 <= --p-min <= --p-max")
    if min(args.n_values) - args.p_max < 2:
        raise InputError("every n must exceed p_max + 1")
    tau_grid = np.logspace(math.log10(args.tau_min), math.log10(args.tau_max), args.tau_points)
    worst, rows = prior_equivalence_sweep(args.seed, args.instances, args.n_values, args.p_min,
                                          args.p_max, tau_grid, fault=args.inject_fault)
    ok = worst <= args.tol
    print(f"instances: {len(rows)}  tau points: {tau_grid.size}  "
          f"max relative discrepancy: {worst:.3e}  tolerance: {args.tol:.1e}  "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


# ---- parser -----------------------------------------------------------------

def _add_quad(p):
    p.add_argument("--quad-tol", type=_positive_float, default=1e-8,
                   help="relative tolerance of the tau quadrature (default 1e-8)")


def _add_sim(p, with_n=True):
    if with_n:
        p.add_argument("--n", type=_positive_int, default=100, help="number of subregions")
    p.add_argument("--graph", choices=["chain", "grid", "file"], default="chain")
    p.add_argument("--tau", type=_positive_float, default=0.3)
    p.add_argument("--sigma2", type=_positive_float, default=1.0)
    p.add_argument("--beta", type=_float_list, default=None,
                   help="comma list, intercept first (default: 1,1,1 then zeros)")
    p.add_argument("--k", type=int, default=None, help="candidate regressors (default from --beta, else 5)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icarsel", description="Objective Bayesian variable selection for ICAR regression.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="score all models and report posterior probabilities")
    p.add_argument("--data", required=True, help="CSV with a header row; one row per subregion")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--adjacency-format", choices=["edge-list", "matrix-csv"], default="edge-list")
    p.add_argument("--response", required=True)
    p.add_argument("--regressors", default="all", help='comma list or "all"')
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output", default="selection.json")
    _add_quad(p)
    p.add_argument("--b-fraction", type=_b_fraction, default=None, metavar="auto|B")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--path", choices=["fast", "kff"], default="fast")
    p.add_argument("--max-k", type=_positive_int, default=20)
    p.add_argument("--cache-dir", default=None, help="directory for the eigendecomposition cache")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; selection is deterministic")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="write a synthetic dataset, graph and truth record")
    _add_sim(p)
    p.add_argument("--adjacency", default=None, help="graph file for --graph file")
    p.add_argument("--adjacency-format", choices=["edge-list", "matrix-csv"], default="edge-list")
    p.add_argument("--output", default="sim", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="time the fast and baseline selection paths")
    _add_sim(p, with_n=False)
    p.add_argument("--n-grid", type=_n_grid, required=True, help="start:stop:step or comma list")
    p.add_argument("--method", choices=["fast", "kff", "both"], default="both")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--kff-max-n", type=_positive_int, default=1000)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--time-budget", type=_positive_float, default=None, help="seconds before truncating")
    _add_quad(p)
    p.add_argument("--output", default="benchmark.csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("prior-eval", help="write the log prior of tau on a grid")
    p.add_argument("--graph", choices=["chain", "grid", "file"], default="chain")
    p.add_argument("--n", type=_positive_int, default=None)
    p.add_argument("--adjacency", default=None)
    p.add_argument("--adjacency-format", choices=["edge-list", "matrix-csv"], default="edge-list")
    p.add_argument("--data", default=None, help="optional CSV providing model regressors")
    p.add_argument("--regressors", default=None, help='comma list or "all" (with --data)')
    p.add_argument("--tau-grid", type=_tau_grid, default=_tau_grid("1e-3:1e3:50"),
                   help="lo:hi:count (log-spaced) or comma list")
    p.add_argument("--variant", choices=["trace", "eigen", "w-oracle"], default="trace")
    p.add_argument("--output", default="prior.csv")
    p.set_defaults(func=cmd_prior_eval)

    p = sub.add_parser("prior-check", help="three-way prior equivalence sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=_positive_int, default=50)
    p.add_argument("--n-values", type=_int_list, default=[10, 30, 60])
    p.add_argument("--p-min", type=int, default=1)
    p.add_argument("--p-max", type=int, default=5)
    p.add_argument("--tau-min", type=_positive_float, default=1e-4)
    p.add_argument("--tau-max", type=_positive_float, default=1e4)
    p.add_argument("--tau-points", type=_positive_int, default=25)
    p.add_argument("--tol", type=_positive_float, default=1e-8)
    p.add_argument("--inject-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_prior_check)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
