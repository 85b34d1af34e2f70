"""Synthetic ICAR regression data and fast-vs-baseline timing runs."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InputError
from .graph import Dataset, NeighborhoodGraph, build_precision, chain_graph, grid_graph, load_adjacency
from .quadrature import QuadConfig
from .selection import SelectionConfig, enumerate_and_score, kff_path_score
from .spectral import decompose

__all__ = [
    "SimConfig",
    "SimTruth",
    "BenchRow",
    "default_beta",
    "make_graph",
    "simulate_dataset",
    "run_benchmark",
    "write_benchmark_csv",
]


def default_beta(k: int) -> tuple[float, ...]:
    """Intercept and first two regressors active, the rest null."""
    return tuple(1.0 if j < 3 else 0.0 for j in range(k + 1))


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    graph_kind: str = "chain"            # chain | grid | file
    tau: float = 0.3
    sigma2: float = 1.0
    beta: tuple[float, ...] = (1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    k: int = 5
    seed: int = 0
    adjacency: str | None = None         # path when graph_kind == "file"
    adjacency_format: str = "edge-list"

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma2 > 0):
            raise InputError("tau and sigma2 must be positive")
        if len(self.beta) != self.k + 1:
            raise InputError(f"beta has {len(self.beta)} entries, expected k + 1 = {self.k + 1}")
        if self.graph_kind not in ("chain", "grid", "file"):
            raise InputError(f"unknown graph kind {self.graph_kind!r}")
        if self.graph_kind == "file" and not self.adjacency:
            raise InputError("graph kind 'file' needs an adjacency path")
        if self.graph_kind != "file" and self.n < 3:
            raise InputError("need n >= 3")


@dataclass(frozen=True)
class SimTruth:
    beta: np.ndarray
    tau: float
    sigma2: float
    phi: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "tau": self.tau, "sigma2": self.sigma2,
                "seed": self.seed, "phi": self.phi.tolist()}


def make_graph(cfg: SimConfig) -> NeighborhoodGraph:
    if cfg.graph_kind == "chain":
        return chain_graph(cfg.n, 1.0)
    if cfg.graph_kind == "grid":
        return grid_graph(cfg.n)
    return load_adjacency(cfg.adjacency, cfg.adjacency_format)


def simulate_dataset(cfg: SimConfig, basis=None):
    """Draw ``y = X beta + phi + eps`` on the configured graph.

    Regressors are iid standard normal, then column-centered. The ICAR field
    is drawn in spectral coordinates, ``xi_i ~ N(0, sigma2 / (tau d_i))`` with
    ``xi_n = 0``, and rotated back, so it sums to zero exactly.

    Returns ``(Dataset, NeighborhoodGraph, SimTruth)``.
    """
    g = make_graph(cfg)
    n = g.n
    if basis is None:
        basis = decompose(build_precision(g))
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((n, cfg.k))
    Z -= Z.mean(axis=0)
    X = np.column_stack([np.ones(n), Z])
    xi = np.zeros(n)
    xi[:-1] = rng.standard_normal(n - 1) * np.sqrt(cfg.sigma2 / (cfg.tau * basis.d[:-1]))
    phi = basis.P @ xi
    eps = rng.standard_normal(n) * np.sqrt(cfg.sigma2)
    beta = np.asarray(cfg.beta, dtype=np.float64)
    y = X @ beta + phi + eps
    names = tuple(f"x{j}" for j in range(1, cfg.k + 1))
    return Dataset(y, X, names), g, SimTruth(beta, cfg.tau, cfg.sigma2, phi, cfg.seed)


@dataclass(frozen=True)
class BenchRow:
    n: int
    k: int
    method: str
    threads: int
    seconds: float
    seed: int
    status: str = "ok"                   # ok | skipped | truncated


def _time_once(method, ds, g, sel_cfg):
    t0 = time.perf_counter()
    if method == "fast":
        basis = decompose(build_precision(g))
        enumerate_and_score(basis, ds, sel_cfg)
    else:
        kff_path_score(ds, g, sel_cfg)
    return time.perf_counter() - t0


def run_benchmark(n_grid, k: int = 5, methods: str = "both", seed: int = 0, *,
                  graph_kind: str = "chain", tau: float = 0.3, sigma2: float = 1.0,
                  beta=None, threads: int = 1, repeats: int = 3, warmup: int = 1,
                  kff_max_n: int = 1000, quad: QuadConfig | None = None,
                  time_budget: float | None = None) -> list[BenchRow]:
    """Time full selection (eigendecomposition included) per method and n.

    Each cell is the median of ``repeats`` wall-clock runs after ``warmup``
    discarded runs. The baseline is skipped above ``kff_max_n``; once
    ``time_budget`` seconds have elapsed, remaining cells are emitted with
    status ``truncated``.
    """
    which = {"both": ("fast", "kff"), "fast": ("fast",), "kff": ("kff",)}.get(methods)
    if which is None:
        raise InputError(f"unknown benchmark method {methods!r}")
    beta = tuple(beta) if beta is not None else default_beta(k)
    sel_cfg = SelectionConfig(quad=quad or QuadConfig(), threads=threads)
    rows: list[BenchRow] = []
    start = time.perf_counter()
    with threadpool_limits(limits=threads):
        for n in n_grid:
            cfg = SimConfig(n=int(n), graph_kind=graph_kind, tau=tau, sigma2=sigma2,
                            beta=beta, k=k, seed=seed)
            ds, g, _ = simulate_dataset(cfg)
            for method in which:
                row = BenchRow(int(n), k, method, threads, float("nan"), seed)
                if time_budget is not None and time.perf_counter() - start > time_budget:
                    rows.append(replace(row, status="truncated"))
                    continue
                if method == "kff" and n > kff_max_n:
                    rows.append(replace(row, status="skipped"))
                    continue
                for _ in range(warmup):
                    _time_once(method, ds, g, sel_cfg)
                times = [_time_once(method, ds, g, sel_cfg) for _ in range(max(repeats, 1))]
                rows.append(replace(row, seconds=statistics.median(times)))
    return rows


def write_benchmark_csv(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "k", "method", "threads", "seconds", "seed", "status"])
        for r in rows:
            secs = "" if r.seconds != r.seconds else f"{r.seconds:.6f}"
            w.writerow([r.n, r.k, r.method, r.threads, secs, r.seed, r.status])
