"""Neighborhood graphs, the ICAR precision structure H, and observation data.

File indices are 1-based; everything in memory is 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DesignError, DisconnectedGraphError, GraphError, InputError, ParseError

__all__ = [
    "NeighborhoodGraph",
    "PrecisionStructure",
    "Dataset",
    "load_adjacency",
    "save_edge_list",
    "build_precision",
    "check_connected",
    "load_dataset",
    "load_design",
    "chain_graph",
    "grid_graph",
    "random_connected_graph",
    "check_alignment",
]

_SYM_RTOL = 1e-12


@dataclass(frozen=True)
class NeighborhoodGraph:
    """Undirected weighted graph over ``n`` subregions.

    Each undirected edge is stored once with ``i < j``.
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        w = np.asarray(self.w, dtype=np.float64)
        if not (i.shape == j.shape == w.shape) or i.ndim != 1:
            raise GraphError("edge arrays must be 1-D and of equal length")
        if self.n < 1:
            raise GraphError("graph must have at least one vertex")
        if np.any(i == j):
            k = int(np.flatnonzero(i == j)[0])
            raise GraphError(f"self-loop at vertex {i[k] + 1}")
        if i.size and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= self.n):
            raise GraphError(f"edge index out of range for n = {self.n}")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise GraphError("edge weights must be finite and nonnegative")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        for name, arr in (("i", lo), ("j", hi), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n: int, edges, *, source=None) -> "NeighborhoodGraph":
        """Build from ``(i, j[, w])`` tuples with 0-based indices.

        Duplicate undirected edges are merged when their weights agree and
        rejected otherwise.
        """
        seen: dict[tuple[int, int], float] = {}
        for e in edges:
            a, b = int(e[0]), int(e[1])
            wt = float(e[2]) if len(e) > 2 else 1.0
            if a == b:
                raise GraphError(f"self-loop at vertex {a + 1}")
            key = (min(a, b), max(a, b))
            if key in seen and seen[key] != wt:
                raise GraphError(
                    f"conflicting weights for edge {key[0] + 1}-{key[1] + 1}: {seen[key]} vs {wt}"
                    + (f" in {source}" if source else "")
                )
            seen[key] = wt
        keys = sorted(seen)
        if keys:
            ii, jj = map(np.array, zip(*keys))
        else:
            ii = jj = np.zeros(0, dtype=np.int64)
        ww = np.array([seen[k] for k in keys], dtype=np.float64)
        return cls(n, ii, jj, ww)

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    def similarity_matrix(self) -> np.ndarray:
        G = np.zeros((self.n, self.n))
        G[self.i, self.j] = self.w
        G[self.j, self.i] = self.w
        return G


@dataclass(frozen=True)
class PrecisionStructure:
    """The ICAR structure matrix ``H`` (a weighted graph Laplacian)."""

    H: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Response vector and full candidate design (intercept first)."""

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise DesignError(f"design has shape {X.shape}, expected ({y.size}, p)")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DesignError("data contain missing or non-finite values")
        n, p = X.shape
        if not np.all(X[:, 0] == 1.0):
            raise DesignError("first design column must be the intercept (all ones)")
        if n <= p:
            raise DesignError(f"need n > p, got n = {n}, p = {p}")
        if np.linalg.matrix_rank(X) < p:
            raise DesignError("design matrix is rank deficient")
        names = tuple(self.names) if self.names else tuple(f"x{k}" for k in range(1, p))
        if len(names) != p - 1:
            raise DesignError(f"{len(names)} regressor names for {p - 1} regressors")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.X.shape[1] - 1


def _parse_edge_list(path: Path, n: int | None) -> NeighborhoodGraph:
    edges = []
    max_idx = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) not in (2, 3):
                raise ParseError(f"expected 'i j [w]', got {len(tokens)} fields", path, lineno)
            vals = []
            for col, tok in enumerate(tokens, start=1):
                try:
                    v = int(tok) if col < 3 else float(tok)
                except ValueError:
                    raise ParseError(f"cannot parse {tok!r}", path, lineno, col) from None
                vals.append(v)
            a, b = vals[0], vals[1]
            for col, idx in ((1, a), (2, b)):
                if idx < 1 or (n is not None and idx > n):
                    raise ParseError(f"index {idx} out of range", path, lineno, col)
            if a == b:
                raise ParseError(f"self-loop at vertex {a}", path, lineno)
            w = vals[2] if len(vals) == 3 else 1.0
            if not math.isfinite(w) or w < 0:
                raise ParseError(f"invalid weight {w}", path, lineno, 3)
            max_idx = max(max_idx, a, b)
            edges.append((a - 1, b - 1, w))
    return NeighborhoodGraph.from_edges(n if n is not None else max_idx, edges, source=path)


def _parse_matrix_csv(path: Path) -> NeighborhoodGraph:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            row = []
            for col, tok in enumerate(line.split(","), start=1):
                try:
                    row.append(float(tok))
                except ValueError:
                    raise ParseError(f"cannot parse {tok.strip()!r}", path, lineno, col) from None
            rows.append((lineno, row))
    n = len(rows)
    for lineno, row in rows:
        if len(row) != n:
            raise ParseError(f"expected {n} columns, got {len(row)}", path, lineno)
    G = np.array([r for _, r in rows], dtype=np.float64).reshape(n, n)
    if not np.all(np.isfinite(G)):
        raise GraphError(f"{path}: non-finite similarity")
    if np.any(np.diag(G) != 0):
        raise GraphError(f"{path}: diagonal must be zero (self-loop at vertex {int(np.flatnonzero(np.diag(G))[0]) + 1})")
    if np.any(G < 0):
        r, c = np.argwhere(G < 0)[0]
        raise GraphError(f"{path}: negative weight at ({r + 1}, {c + 1})")
    scale = max(np.abs(G).max(), 1e-300)
    if np.abs(G - G.T).max() > _SYM_RTOL * scale:
        raise GraphError(f"{path}: similarity matrix is not symmetric")
    ii, jj = np.nonzero(np.triu(G, 1))
    return NeighborhoodGraph(n, ii, jj, G[ii, jj])


def load_adjacency(path, format: str = "edge-list", *, n: int | None = None,
                   require_connected: bool = True) -> NeighborhoodGraph:
    """Read a neighborhood graph.

    Parameters
    ----------
    path : path-like
        Input file.
    format : {"edge-list", "matrix-csv"}
        ``edge-list``: one ``i j [w]`` per line, 1-based, ``#`` comments,
        weight defaults to 1.0. ``matrix-csv``: the full ``n x n``
        similarity matrix, zero diagonal.
    n : int, optional
        Number of vertices for edge lists; defaults to the largest index seen.
    require_connected : bool
        Reject graphs with more than one component (default).
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    if format == "edge-list":
        g = _parse_edge_list(path, n)
    elif format == "matrix-csv":
        g = _parse_matrix_csv(path)
    else:
        raise InputError(f"unknown adjacency format {format!r}")
    if require_connected and not check_connected(g):
        raise DisconnectedGraphError(f"{path}: graph disconnected (islands are not supported)")
    return g


def save_edge_list(g: NeighborhoodGraph, path) -> None:
    """Write ``i j w`` lines (1-based) readable by ``load_adjacency``."""
    with open(path, "w") as fh:
        fh.write(f"# n = {g.n}\n")
        for a, b, w in zip(g.i, g.j, g.w):
            fh.write(f"{a + 1} {b + 1} {float(w)!r}\n")


def check_connected(g: NeighborhoodGraph) -> bool:
    """True iff the positive-weight edges join all vertices into one component."""
    if g.n == 1:
        return True
    keep = g.w > 0
    A = coo_matrix((np.ones(int(keep.sum())), (g.i[keep], g.j[keep])), shape=(g.n, g.n))
    ncomp, _ = connected_components(A, directed=False)
    return ncomp == 1


def build_precision(g: NeighborhoodGraph) -> PrecisionStructure:
    """H with ``H_ij = -g_ij`` off the diagonal and ``H_ii`` the negated row sum."""
    H = np.zeros((g.n, g.n))
    H[g.i, g.j] = -g.w
    H[g.j, g.i] = -g.w
    # diagonal from the same off-diagonal entries, so rows sum to zero
    np.fill_diagonal(H, -H.sum(axis=1))
    H.setflags(write=False)
    return PrecisionStructure(H)


def chain_graph(n: int, weight: float = 1.0) -> NeighborhoodGraph:
    """Path graph 1-2-...-n."""
    k = np.arange(n - 1)
    return NeighborhoodGraph(n, k, k + 1, np.full(n - 1, float(weight)))


def grid_graph(n: int, ncols: int | None = None) -> NeighborhoodGraph:
    """Rook-adjacency lattice filled row by row; the last row may be partial."""
    if ncols is None:
        ncols = max(1, int(math.ceil(math.sqrt(n))))
    idx = np.arange(n)
    r, c = divmod(idx, ncols)
    right = idx[(c < ncols - 1) & (idx + 1 < n)]
    down = idx[idx + ncols < n]
    ii = np.concatenate([right, down])
    jj = np.concatenate([right + 1, down + ncols])
    return NeighborhoodGraph(n, ii, jj, np.ones(ii.size))


def random_connected_graph(n: int, rng: np.random.Generator, extra_edges: int | None = None,
                           weight_range: tuple[float, float] = (0.2, 3.0)) -> NeighborhoodGraph:
    """Random spanning tree plus ``extra_edges`` random chords, random weights."""
    edges: dict[tuple[int, int], float] = {}
    lo, hi = weight_range
    for v in range(1, n):
        edges[(int(rng.integers(0, v)), v)] = float(rng.uniform(lo, hi))
    for _ in range(n if extra_edges is None else extra_edges):
        a, b = sorted(int(x) for x in rng.choice(n, 2, replace=False))
        edges[(a, b)] = float(rng.uniform(lo, hi))
    pairs = sorted(edges)
    return NeighborhoodGraph(n, np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]),
                             np.array([edges[e] for e in pairs]))


def _read_numeric_columns(path, cols: Sequence[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(str(exc), path) from None
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
    values = {}
    for c in dict.fromkeys(cols):
        num = pd.to_numeric(df[c].str.strip(), errors="coerce")
        bad = num.isna().to_numpy() | ~np.isfinite(num.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"non-numeric or missing value {df[c].iloc[r]!r} in column {c!r}",
                path, line=r + 2, column=list(df.columns).index(c) + 1,
            )
        values[c] = num.to_numpy(dtype=float)
    return values


def load_design(path, regressors: Sequence[str]) -> np.ndarray:
    """Intercept plus the named CSV columns, one row per subregion."""
    values = _read_numeric_columns(path, list(regressors))
    n = len(next(iter(values.values()))) if values else _count_rows(path)
    return np.column_stack([np.ones(n)] + [values[c] for c in regressors])


def _count_rows(path) -> int:
    return len(pd.read_csv(path, dtype=str, keep_default_na=False))


def load_dataset(path, response: str, regressors: Sequence[str]) -> Dataset:
    """Read a CSV (header row, ``.`` decimals) into a :class:`Dataset`.

    Row order is taken as subregion order. An intercept column is prepended.
    """
    values = _read_numeric_columns(path, [response, *regressors])
    y = values[response]
    X = np.column_stack([np.ones(y.size)] + [values[c] for c in regressors])
    return Dataset(y, X, tuple(regressors))


def check_alignment(g: NeighborhoodGraph, ds: Dataset) -> None:
    if g.n != ds.n:
        raise InputError(f"graph has {g.n} subregions but data have {ds.n} rows")
