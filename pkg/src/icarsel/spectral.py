"""One shared eigendecomposition of H and spectral-domain transforms."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DesignError, DisconnectedGraphError, InputError, NumericalError
from .graph import Dataset, PrecisionStructure

__all__ = [
    "SpectralBasis",
    "SpectralData",
    "decompose",
    "transform",
    "projection_eigenvalues",
    "projection_eigensystem",
    "h_hash",
    "save_cache",
    "load_cache",
    "ReducedDesign",
    "reduce_design",
]

ZERO_RTOL = 1e-9
_MAGIC = b"ICARSPB1"


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvalues ``d`` (descending, ``d[-1] == 0``) and eigenvectors ``P`` of H."""

    d: np.ndarray
    P: np.ndarray

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def d_plus(self) -> np.ndarray:
        dp = np.zeros_like(self.d)
        dp[:-1] = 1.0 / self.d[:-1]
        return dp

    def pinv(self) -> np.ndarray:
        """Dense Moore-Penrose inverse ``H+ = P D+ P'``."""
        return (self.P * self.d_plus) @ self.P.T


@dataclass(frozen=True)
class SpectralData:
    y_t: np.ndarray
    X_t: np.ndarray


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def h_hash(H: np.ndarray) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(H, dtype="<f8").tobytes()).digest()


def decompose(H, cache_dir=None) -> SpectralBasis:
    """Full symmetric eigendecomposition of ``H``.

    The smallest eigenvalue is set to exactly zero and its eigenvector to
    ``n**-0.5 * 1``; every column is signed so its first nonzero entry is
    positive. With ``cache_dir`` the result is read from / written to a
    binary cache keyed by the content hash of ``H``.
    """
    if isinstance(H, PrecisionStructure):
        H = H.H
    H = np.asarray(H, dtype=np.float64)
    n = H.shape[0]
    if H.ndim != 2 or H.shape != (n, n):
        raise InputError("H must be square")
    if n < 2:
        raise InputError("need at least two subregions")

    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"basis-{h_hash(H).hex()[:16]}.bin"
        cached = load_cache(cache_path, H)
        if cached is not None:
            return cached

    try:
        w, V = scipy.linalg.eigh(H, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from None
    d = w[::-1].copy()
    P = V[:, ::-1].copy()
    if d[0] <= 0:
        raise DisconnectedGraphError("H has no positive eigenvalue")
    if d[-2] <= ZERO_RTOL * d[0]:
        raise DisconnectedGraphError(
            "null eigenvalue of H has multiplicity > 1 (graph disconnected)"
        )
    d[-1] = 0.0
    P[:, -1] = 1.0 / np.sqrt(n)
    thresh = 1e-10
    for c in range(n - 1):
        col = P[:, c]
        first = np.flatnonzero(np.abs(col) > thresh)[0]
        if col[first] < 0:
            P[:, c] = -col
    _freeze(d, P)
    basis = SpectralBasis(d, P)
    if cache_path is not None:
        save_cache(cache_path, H, basis)
    return basis


def save_cache(path, H: np.ndarray, basis: SpectralBasis) -> None:
    """Write ``(n, hash(H), d, P)``; floats little-endian, ``P`` column-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", basis.n))
        fh.write(h_hash(H))
        fh.write(basis.d.astype("<f8").tobytes())
        fh.write(np.asarray(basis.P, dtype="<f8").tobytes(order="F"))
    tmp.replace(path)


def load_cache(path, H: np.ndarray | None = None) -> SpectralBasis | None:
    """Return the cached basis, or None when missing, corrupt, or stale."""
    path = Path(path)
    if not path.is_file():
        return None
    raw = path.read_bytes()
    head = len(_MAGIC) + 8 + 32
    if len(raw) < head or raw[: len(_MAGIC)] != _MAGIC:
        return None
    (n,) = struct.unpack("<Q", raw[len(_MAGIC): len(_MAGIC) + 8])
    digest = raw[len(_MAGIC) + 8: head]
    if len(raw) != head + 8 * (n + n * n):
        return None
    if H is not None and (H.shape[0] != n or h_hash(H) != digest):
        return None
    d = np.frombuffer(raw, dtype="<f8", count=n, offset=head).astype(np.float64)
    P = np.frombuffer(raw, dtype="<f8", count=n * n, offset=head + 8 * n)
    P = P.reshape((n, n), order="F").astype(np.float64)
    _freeze(d, P)
    return SpectralBasis(d, P)


def transform(basis: SpectralBasis, ds: Dataset) -> SpectralData:
    """``y~ = P'y`` and ``X~ = P'X`` for the full candidate design."""
    if ds.n != basis.n:
        raise InputError(f"dimension mismatch: basis n = {basis.n}, data n = {ds.n}")
    y_t = basis.P.T @ ds.y
    X_t = basis.P.T @ ds.X
    _freeze(y_t, X_t)
    return SpectralData(y_t, X_t)


def projection_eigensystem(basis: SpectralBasis, X_c, H_pinv: np.ndarray | None = None):
    """Eigenvalues (descending) and eigenvectors of ``M*' H+ M*``, mapped back.

    ``M*`` spans the unit-eigenvalue eigenvectors of the residual projector
    ``G = I - X_c (X_c'X_c)^-1 X_c'``. Returns ``(lam, U)`` with
    ``U = M* V`` (``n x (n-p)``, orthonormal columns). Two dense n x n
    eigendecompositions per call; this is the per-model baseline path.
    """
    X_c = np.asarray(X_c, dtype=np.float64)
    if X_c.ndim == 1:
        X_c = X_c[:, None]
    n, p = X_c.shape
    if n != basis.n:
        raise InputError(f"design has {n} rows, basis has n = {basis.n}")
    if p >= n or np.linalg.matrix_rank(X_c) < p:
        raise DesignError("X_c must have full column rank p < n")
    G = np.eye(n) - X_c @ np.linalg.solve(X_c.T @ X_c, X_c.T)
    G = 0.5 * (G + G.T)
    gval, M = scipy.linalg.eigh(G)
    M_star = M[:, gval > 0.5]
    if M_star.shape[1] != n - p:
        raise NumericalError(f"projector has {M_star.shape[1]} unit eigenvalues, expected {n - p}")
    Hp = basis.pinv() if H_pinv is None else H_pinv
    A = M_star.T @ Hp @ M_star
    lam, V = scipy.linalg.eigh(0.5 * (A + A.T))
    return lam[::-1].copy(), M_star @ V[:, ::-1]


def projection_eigenvalues(basis: SpectralBasis, X_c, H_pinv: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues ``lambda_1 >= ... >= lambda_{n-p}`` of ``M*' H+ M*``."""
    return projection_eigensystem(basis, X_c, H_pinv)[0]


@dataclass(frozen=True)
class ReducedDesign:
    """A model design in spectral coordinates with the null direction removed.

    The constant vector spans the last spectral coordinate ``e_n``. When it
    lies in the column space of ``X~_c``, that space splits into ``e_n`` plus
    ``Z`` (``n-1`` rows, ``p-1`` columns, zero last row dropped). Everything
    that depends on ``tau`` only involves coordinates ``i < n``, where
    ``b_i(tau)`` vanishes as ``tau -> 0``, so working with ``Z`` avoids
    cancelling the ``b_n = 1`` contribution against itself.

    ``logdet_offset`` is ``log|X_c'X_c| - log|Z'Z|``, the tau-free constant
    relating ``log|X~_c' B X~_c|`` to ``log|Z' B Z|``.
    """

    d: np.ndarray
    Z: np.ndarray
    logdet_offset: float
    n: int
    p: int


def reduce_design(basis: SpectralBasis, X_t_c, *, atol: float = 1e-8) -> ReducedDesign:
    X_t_c = np.asarray(X_t_c, dtype=np.float64)
    if X_t_c.ndim == 1:
        X_t_c = X_t_c[:, None]
    n, p = X_t_c.shape
    if n != basis.n:
        raise InputError(f"design has {n} rows, basis has n = {basis.n}")
    if p >= n:
        raise DesignError(f"need p < n, got p = {p}, n = {n}")
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    coef, *_ = np.linalg.lstsq(X_t_c, e_n, rcond=None)
    if np.linalg.norm(X_t_c @ coef - e_n) > atol:
        raise DesignError("the constant vector must lie in the column space of X_c (include an intercept)")
    r = X_t_c[-1]
    j = int(np.argmax(np.abs(r)))
    # column operations that zero the last row, then drop the pivot column
    Zfull = X_t_c - np.outer(X_t_c[:, j], r / r[j])
    Z = np.ascontiguousarray(np.delete(Zfull[:-1], j, axis=1))
    sign_x, ld_x = np.linalg.slogdet(X_t_c.T @ X_t_c)
    sign_z, ld_z = np.linalg.slogdet(Z.T @ Z) if Z.shape[1] else (1.0, 0.0)
    if sign_x <= 0 or sign_z <= 0:
        raise DesignError("X_c is rank deficient")
    d = np.ascontiguousarray(basis.d[:-1])
    _freeze(Z)
    return ReducedDesign(d, Z, float(ld_x - ld_z), n, p)
