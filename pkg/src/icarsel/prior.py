"""Marginal reference prior for the noise-to-signal ratio tau.

Three interchangeable evaluators of the (unnormalized) log density:

``TracePrior``
    Traces of small ``p x p`` matrices built from the shared spectral basis;
    ``O(n p^2)`` per tau and no per-model eigendecomposition.
``EigenPrior``
    Classic form in the eigenvalues ``lambda_j`` of ``M*' H+ M*``; needs two
    dense eigendecompositions per model.
``WOraclePrior``
    Dense ``n x n`` construction of ``W_tau = (dSigma/dtau) Sigma^-1 P``; test
    use only.

All three return the same function of tau, including the constant, so values
can be compared pointwise.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import scipy.linalg

from .dense import dense_omega
from .errors import DegeneratePriorError, NumericalError, QuadratureError
from .quadrature import QuadConfig, adaptive_quadrature
from .spectral import ReducedDesign, SpectralBasis, projection_eigenvalues, reduce_design

__all__ = [
    "TauPriorEvaluator",
    "TracePrior",
    "TraceTerms",
    "SpectralGrams",
    "EigenPrior",
    "WOraclePrior",
    "log_prior_trace",
    "log_prior_eigen",
    "log_prior_w_oracle",
    "w_oracle_traces",
    "t1_t2_identities",
    "log_prior_psi",
    "check_properness",
]

NEG_TOL = 1e-12


class SpectralGrams:
    """Batched weighted Grams ``A' diag(w(tau)) A`` on the non-null coordinates.

    For each tau the five diagonal weights of ``Q01, Q02, Q03, Q12, Q23``
    (``b, b^2, b^3, d+ b^2, d+^2 b^3``) are applied to the upper-triangle
    outer products of the rows of ``A``, formed once, so a batch of nodes is
    a single matrix product. Columns ``1, d+, d+^2`` are appended so the
    scalar traces ``tr(B), tr(B^2), tr(D+B), tr((D+B)^2)`` come out of the
    same product.
    """

    def __init__(self, d: np.ndarray, A: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        self.d = np.asarray(d, dtype=np.float64)
        self.r = A.shape[1]
        self.iu, self.ju = np.triu_indices(self.r)
        dplus = 1.0 / self.d
        self.npair = self.iu.size
        self.outer = np.ascontiguousarray(np.column_stack(
            [A[:, self.iu] * A[:, self.ju], np.ones_like(dplus), dplus, dplus * dplus]
        ))

    def __call__(self, tau: np.ndarray):
        """Returns ``(G, sums, logdet_omega)``.

        ``G`` has shape ``(5, m, r, r)``; ``sums`` holds ``sum_b``, ``sum_b2``,
        ``tr_DB``, ``tr_DB_sq``; ``logdet_omega`` is ``log|I + H+/tau|``.
        """
        m, n = tau.size, self.d.size
        t = np.multiply.outer(tau, self.d)
        u = t + 1.0
        np.reciprocal(u, out=u)                          # 1 / (1 + tau d)
        logdet_omega = -np.log1p(-u).sum(axis=1)
        W = np.empty((5, m, n))
        b, b2, b3, w12, w23 = W
        np.multiply(t, u, out=b)
        np.multiply(b, b, out=b2)
        np.multiply(b2, b, out=b3)
        u *= tau[:, None]                                # D+ b = tau / (1 + tau d)
        np.multiply(u, b, out=w12)
        np.multiply(u, w12, out=w23)
        flat = (W.reshape(5 * m, n) @ self.outer).reshape(5, m, -1)
        G = np.empty((5, m, self.r, self.r))
        pairs = flat[..., : self.npair]
        G[..., self.iu, self.ju] = pairs
        G[..., self.ju, self.iu] = pairs
        k = self.npair
        sums = {
            "sum_b": flat[0, :, k],
            "sum_b2": flat[1, :, k],
            "tr_DB": flat[0, :, k + 1],
            "tr_DB_sq": flat[1, :, k + 2],
        }
        return G, sums, logdet_omega


def _as_tau(tau):
    t = np.asarray(tau, dtype=np.float64)
    if np.any(~(t > 0)) or np.any(~np.isfinite(t)):
        raise ValueError("tau must be positive and finite")
    return t


def _finish(log_vals, scalar):
    return float(log_vals[0]) if scalar else log_vals


def _log_from_bracket(bracket, where):
    """log of a variance-like bracket; clamps roundoff-level negatives to -inf."""
    if np.any(bracket < -NEG_TOL):
        bad = int(np.flatnonzero(bracket < -NEG_TOL)[0])
        raise NumericalError(
            f"reference-prior bracket is negative ({bracket[bad]:.3e}) at tau = {where[bad]:.6g}"
        )
    with np.errstate(divide="ignore"):
        return np.where(bracket > 0, np.log(np.maximum(bracket, 1e-300)), -np.inf)


class TauPriorEvaluator:
    """Common interface: ``log_prior(tau)`` and ``log_prior_psi(psi)``."""

    variant: str = ""
    n: int
    p: int

    def log_prior(self, tau):
        raise NotImplementedError

    def log_prior_psi(self, psi):
        psi = np.asarray(psi, dtype=np.float64)
        return psi + self.log_prior(np.exp(psi))

    def _check_dims(self):
        if self.n - self.p < 2:
            raise DegeneratePriorError(
                f"prior vanishes identically when n - p < 2 (n = {self.n}, p = {self.p})"
            )


def trace_terms(sums: dict, G, q: int, extra=None, fault: float = 0.0) -> dict:
    """Trace building blocks from weighted Grams.

    ``G`` holds the ``SpectralGrams`` output (shape ``(5, m, r, r)`` with
    ``r >= q``); only the leading ``q x q`` blocks are used. ``extra`` is an
    optional ``(m, q)`` right-hand side solved against ``Q01`` in the same
    call, returned under ``"solve_extra"``.

    Keys ``tr_DB``, ``tr_DB_sq``, ``tr_Q12``, ``tr_Q12_sq``, ``tr_Q23`` are the
    terms of the displayed trace formula; ``sum_v`` and ``sum_v2`` are the
    complementary sums ``tr(B) - tr(Q01^-1 Q02)`` and
    ``tr(B^2) - 2 tr(Q01^-1 Q03) + tr((Q01^-1 Q02)^2)`` used for small tau.
    """
    out = dict(sums)
    m = out["sum_b"].shape[0]
    if fault:
        out["tr_DB"] = out["tr_DB"] * (1 + fault)
        out["sum_b"] = out["sum_b"] * (1 + fault)
    if q == 0:
        zero = np.zeros(m)
        tr02 = tr03 = tr0202 = tr12 = tr23 = tr1212 = zero
    else:
        blocks = [G[k][:, :q, :q] for k in range(1, 5)]
        if extra is not None:
            blocks.append(extra[:, :, None])
        try:
            S = np.linalg.solve(G[0][:, :q, :q], np.concatenate(blocks, axis=-1))
        except np.linalg.LinAlgError:
            raise NumericalError("Q01(tau) is singular") from None
        if extra is not None:
            out["solve_extra"] = S[..., 4 * q]
        # diagonals of the four q x q blocks in one gather
        idx = np.arange(q)
        traces = S[:, idx[:, None], idx[:, None] + q * np.arange(4)].sum(axis=1)
        tr02, tr03, tr12, tr23 = traces.T
        S02, S12 = S[..., :q], S[..., 2 * q:3 * q]
        tr0202 = np.einsum("mij,mji->m", S02, S02)
        tr1212 = np.einsum("mij,mji->m", S12, S12)
    out.update(tr_Q02=tr02, tr_Q03=tr03, tr_Q02_sq=tr0202,
               tr_Q12=tr12, tr_Q23=tr23, tr_Q12_sq=tr1212)
    out["sum_v"] = out["sum_b"] - tr02
    out["sum_v2"] = out["sum_b2"] - 2 * tr03 + tr0202
    return out


def log_bracket_from_terms(s: dict, dof: int, tau: np.ndarray) -> np.ndarray:
    """log of the braces in the trace formula, picking the stable branch per tau."""
    use_v = s["sum_v"] < 0.5 * dof
    tr_u = s["tr_DB"] - s["tr_Q12"]
    bracket_u = s["tr_DB_sq"] + s["tr_Q12_sq"] - 2 * s["tr_Q23"] - tr_u**2 / dof
    var_v = s["sum_v2"] - s["sum_v"] ** 2 / dof
    # the v-form bracket is var_v * tau^2; keep the factor on the log scale
    chosen = np.where(use_v, var_v, bracket_u)
    log_scale = np.where(use_v, 2.0 * np.log(tau), 0.0)
    if np.any(chosen <= 0):
        with np.errstate(under="ignore"):
            _log_from_bracket(chosen * np.exp(log_scale), tau)
        with np.errstate(divide="ignore"):
            return np.where(chosen > 0, np.log(np.maximum(chosen, 1e-300)) + log_scale, -np.inf)
    return np.log(chosen) + log_scale


class TraceTerms:
    """Trace building blocks of the trace-form prior for one model.

    Works in reduced coordinates (see ``ReducedDesign``): the null direction
    contributes ``b_n = 1`` to ``Q01`` and nothing to the other traces, so it
    is removed exactly rather than carried through the solves.
    """

    def __init__(self, reduced: ReducedDesign, fault: float = 0.0):
        self.reduced = reduced
        self._grams = SpectralGrams(reduced.d, reduced.Z)
        self._fault = float(fault)

    def __call__(self, tau) -> dict:
        tau = np.atleast_1d(_as_tau(tau))
        G, sums, _ = self._grams(tau)
        return trace_terms(sums, G, self._grams.r, fault=self._fault)


class TracePrior(TauPriorEvaluator):
    """Trace-form reference prior.

    With ``Q_ij = X~' (D+)^i B^j X~`` and ``B = diag(b(tau))``::

        pi(tau) = tau^-2 { tr((D+B)^2) + tr((Q01^-1 Q12)^2) - 2 tr(Q01^-1 Q23)
                           - [tr(Q01^-1 Q12) - tr(D+B)]^2 / (n - p) }^(1/2)

    The braces hold ``n - p`` times a variance of numbers clustered near 1
    when tau is small, so there the same variance is evaluated through the
    complementary traces of ``B``, whose terms shrink with tau instead of
    cancelling. The branch is picked per tau by which side of 1/2 the mean
    falls on.
    """

    variant = "trace-form"

    def __init__(self, basis: SpectralBasis | None = None, X_t_c=None, *,
                 reduced: ReducedDesign | None = None, fault: float = 0.0):
        if reduced is None:
            reduced = reduce_design(basis, X_t_c)
        self.reduced = reduced
        self.n, self.p = reduced.n, reduced.p
        self._check_dims()
        self.terms = TraceTerms(reduced, fault)

    def log_bracket(self, tau):
        """log of the braces in the trace formula."""
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(_as_tau(tau))
        return _finish(log_bracket_from_terms(self.terms(tau), self.n - self.p, tau), scalar)

    def log_prior(self, tau):
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(_as_tau(tau))
        return _finish(-2.0 * np.log(tau) + 0.5 * self.log_bracket(tau), scalar)


class EigenPrior(TauPriorEvaluator):
    """Eigenvalue-form reference prior::

        pi(tau) = tau^-1 [ sum_j u_j^2 - (sum_j u_j)^2 / (n - p) ]^(1/2),
        u_j = lambda_j / (tau + lambda_j)

    The bracket is ``(n - p)`` times the variance of ``u``; it is computed by
    two-pass centering of ``u`` or of ``1 - u = tau / (tau + lambda)``,
    whichever is smaller on average.
    """

    variant = "eigenvalue-form"

    def __init__(self, lam, n: int, p: int):
        self.lam = np.asarray(lam, dtype=np.float64)
        self.n, self.p = int(n), int(p)
        if self.lam.size != self.n - self.p:
            raise ValueError(f"expected {self.n - self.p} eigenvalues, got {self.lam.size}")
        self._check_dims()
        if self.lam.min() < -1e-10 * max(self.lam.max(), 1.0):
            raise NumericalError("negative projection eigenvalue")
        if self.lam.max() - self.lam.min() <= 1e-12 * abs(self.lam.max()):
            raise DegeneratePriorError("all projection eigenvalues are equal; the prior vanishes")

    @classmethod
    def from_design(cls, basis: SpectralBasis, X_c, H_pinv=None) -> "EigenPrior":
        X_c = np.asarray(X_c, dtype=np.float64)
        if X_c.ndim == 1:
            X_c = X_c[:, None]
        lam = projection_eigenvalues(basis, X_c, H_pinv)
        return cls(lam, X_c.shape[0], X_c.shape[1])

    def t_sums(self, tau):
        tau = np.atleast_1d(_as_tau(tau))
        u = self.lam[None, :] / (tau[:, None] + self.lam[None, :])
        return u.sum(axis=1), (u * u).sum(axis=1)

    def log_prior(self, tau):
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(_as_tau(tau))
        denom = tau[:, None] + self.lam[None, :]
        u = self.lam[None, :] / denom
        v = tau[:, None] / denom
        w = np.where((v.mean(axis=1) < 0.5)[:, None], v, u)
        centered = w - w.mean(axis=1, keepdims=True)
        var = (centered * centered).sum(axis=1)
        return _finish(-np.log(tau) + 0.5 * _log_from_bracket(var, tau), scalar)


def _dense_inputs(basis: SpectralBasis, H_pinv=None):
    H = (basis.P * basis.d) @ basis.P.T
    H = 0.5 * (H + H.T)
    return H, (basis.pinv() if H_pinv is None else H_pinv)


def w_oracle_traces(basis: SpectralBasis, X_c, tau, H_pinv=None, H=None):
    """Dense ``(tr W, tr W^2 - (tr W)^2 / (n - p))`` at one tau."""
    X_c = np.asarray(X_c, dtype=np.float64)
    if X_c.ndim == 1:
        X_c = X_c[:, None]
    n, p = X_c.shape
    if H is None or H_pinv is None:
        H, H_pinv = _dense_inputs(basis, H_pinv)
    om = dense_omega(H, H_pinv, tau)
    SiX = om.inv @ X_c
    try:
        proj = np.eye(n) - X_c @ scipy.linalg.solve(X_c.T @ SiX, SiX.T, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"dense solve failed at tau = {tau:g}: {exc}") from None
    # dSigma/dtau = -H+ / tau^2
    W = -(om.hp_inv @ proj) / tau**2
    trW = np.trace(W)
    # W P = W and tr P = n - p, so this equals tr(W^2) - tr(W)^2/(n-p)
    Wc = W - (trW / (n - p)) * proj
    return trW, float(np.einsum("ij,ji->", Wc, Wc))


class WOraclePrior(TauPriorEvaluator):
    """``pi(tau) = {tr(W^2) - tr(W)^2 / (n - p)}^(1/2)`` from dense matrices."""

    variant = "w-oracle"

    def __init__(self, basis: SpectralBasis, X_c, H_pinv=None):
        self.basis = basis
        self.X_c = np.asarray(X_c, dtype=np.float64).reshape(basis.n, -1)
        self.n, self.p = self.X_c.shape
        self._check_dims()
        self._H, self._Hp = _dense_inputs(basis, H_pinv)

    def log_prior(self, tau):
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(_as_tau(tau))
        vals = np.array([w_oracle_traces(self.basis, self.X_c, t, self._Hp, self._H)[1] for t in tau])
        return _finish(0.5 * _log_from_bracket(vals, tau), scalar)


def log_prior_trace(ev: TracePrior, tau):
    return ev.log_prior(tau)


def log_prior_eigen(ev: EigenPrior, tau):
    return ev.log_prior(tau)


def log_prior_w_oracle(basis: SpectralBasis, X_c, tau, H_pinv=None):
    return WOraclePrior(basis, X_c, H_pinv).log_prior(tau)


def log_prior_psi(ev: TauPriorEvaluator, psi):
    """Log density of ``psi = log(tau)``: ``psi + log pi(exp(psi))``."""
    return ev.log_prior_psi(psi)


def t1_t2_identities(basis: SpectralBasis, X_c, tau: float, rtol: float = 1e-9):
    """Check the closed trace forms of ``T1 = sum u_j`` and ``T2 = sum u_j^2``.

    Returns ``(T1, T2, passed)`` where T1, T2 come from the eigenvalue sums and
    ``passed`` says whether the trace expressions match them within ``rtol``.
    """
    X_c = np.asarray(X_c, dtype=np.float64).reshape(basis.n, -1)
    lam = projection_eigenvalues(basis, X_c)
    u = lam / (tau + lam)
    t1_eig, t2_eig = float(u.sum()), float((u * u).sum())

    rd = reduce_design(basis, basis.P.T @ X_c)
    s = {k: float(v[0]) for k, v in TraceTerms(rd)(np.array([tau])).items()}
    t1_tr = (s["tr_DB"] - s["tr_Q12"]) / tau
    t2_tr = (s["tr_DB_sq"] + s["tr_Q12_sq"] - 2 * s["tr_Q23"]) / tau**2
    ok = (math.isclose(t1_eig, t1_tr, rel_tol=rtol, abs_tol=0.0)
          and math.isclose(t2_eig, t2_tr, rel_tol=rtol, abs_tol=0.0))
    return t1_eig, t2_eig, ok


def check_properness(ev: TauPriorEvaluator, cfg: QuadConfig | None = None):
    """Numerically integrate the unnormalized prior over tau in (0, inf).

    Returns ``(mass, converged)``; integration runs on the log scale with
    panels expanding outward until a panel adds less than 1e-8 of the mass.
    """
    cfg = replace(cfg or QuadConfig(), tail_tol=1e-8)
    try:
        log_mass, diag = adaptive_quadrature(ev.log_prior_psi, cfg)
    except (QuadratureError, NumericalError):
        return math.nan, False
    mass = math.exp(log_mass)
    return mass, bool(math.isfinite(mass) and diag.est_rel_error <= max(cfg.rel_tol, cfg.tail_tol) * 10)
