"""Fractional integrated likelihoods for ICAR and independent-error models.

For a model with design ``X_c`` (``p`` columns) and training fraction ``b``::

    log q = -(n(1-b)/2) log(2 pi) + (p/2) log b
            + lnGamma((n-p)/2) - lnGamma((nb-p)/2) + log J(1) - log J(b)

    J(a) = integral over psi = log(tau) of
           exp{ -(a/2) log|Omega| - (1/2) log|X_c' Omega^-1 X_c|
                - ((na-p)/2) log(a S^2 / 2) + log pi_psi(psi) }

with ``Omega = I + H+/tau`` and ``S^2`` the generalized residual sum of
squares. The constants come from integrating ``beta`` (Gaussian) and
``sigma^2`` (inverse gamma) out of ``p(y | beta, sigma^2, tau)^a sigma^-2``
in closed form; ``pi(tau)`` need not be normalized since it appears in both
``J(1)`` and ``J(b)``.

``SpectralWorkspace`` evaluates the integrand in ``O(n p^2)`` per node from
the shared eigendecomposition of ``H``. ``KFFWorkspace`` is the per-model
baseline that diagonalizes ``M*' H+ M*`` for every model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .dense import dense_omega
from .errors import DegeneratePriorError, DesignError, NumericalError
from .models import ModelSpec
from .prior import (
    EigenPrior,
    SpectralGrams,
    log_bracket_from_terms,
    trace_terms,
)
from .quadrature import QuadConfig, QuadDiagnostics, adaptive_quadrature
from .spectral import SpectralBasis, SpectralData, projection_eigensystem, reduce_design

__all__ = [
    "FractionalLikelihoodResult",
    "SpectralWorkspace",
    "KFFWorkspace",
    "b_vector",
    "log_det_omega",
    "log_det_xox",
    "s_squared",
    "dense_quantities",
    "fractional_constant",
    "default_b_fraction",
    "log_fractional_marginal",
    "kff_fractional_marginal",
    "ols_rss",
    "log_marginal_independent",
]

S2_RTOL = 1e-10
LOG_2PI = math.log(2.0 * math.pi)

LogPsiPrior = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FractionalLikelihoodResult:
    log_q: float
    log_J1: float
    log_Jb: float
    quad_diagnostics: QuadDiagnostics | None


def b_vector(basis: SpectralBasis, tau: float) -> np.ndarray:
    """``b_i(tau) = tau d_i / (tau d_i + 1)`` for ``i < n`` and ``b_n = 1``."""
    t = tau * basis.d
    b = t / (1.0 + t)
    b[-1] = 1.0
    return b


def log_det_omega(basis_or_d, tau):
    """``log|I + H+/tau| = sum_{i<n} log(1 + 1/(tau d_i))``; vectorized in tau."""
    d = basis_or_d.d[:-1] if isinstance(basis_or_d, SpectralBasis) else np.asarray(basis_or_d)
    scalar = np.ndim(tau) == 0
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    out = np.log1p(1.0 / (tau[:, None] * d[None, :])).sum(axis=1)
    return float(out[0]) if scalar else out


def fractional_constant(n: int, p: int, b: float) -> float:
    """tau-free part of ``log q``; needs ``n b > p``."""
    if not 0.0 < b <= 1.0:
        raise ValueError(f"training fraction must lie in (0, 1], got {b}")
    if n * b <= p:
        raise DesignError(f"n*b = {n * b:g} must exceed p = {p} (Gamma argument)")
    return (-0.5 * n * (1.0 - b) * LOG_2PI + 0.5 * p * math.log(b)
            + gammaln(0.5 * (n - p)) - gammaln(0.5 * (n * b - p)))


def default_b_fraction(n: int, k: int) -> float:
    """``m / n`` with minimal training size ``m = p + 1`` for the full model."""
    return (k + 2) / n


def _check_s2(s2, y_norm2, tau):
    floor = -S2_RTOL * max(y_norm2, np.finfo(float).tiny)
    if np.any(s2 < floor):
        i = int(np.flatnonzero(s2 < floor)[0])
        raise NumericalError(f"S^2 = {s2[i]:.3e} is negative at tau = {tau[i]:.6g}")
    return np.maximum(s2, 0.0)


def _log_integrand(n, p, b, logdet_omega, logdet_xox, s2, log_prior_psi):
    """Rows ``a = 1`` and ``a = b`` of the J(a) log-integrand."""
    if np.any(s2 <= 0):
        raise NumericalError("S^2 vanishes: the response lies in the column space of X_c")
    log_s2 = np.log(s2) - math.log(2.0)
    rows = []
    for a in (1.0, b):
        rows.append(-0.5 * a * logdet_omega - 0.5 * logdet_xox
                    - 0.5 * (n * a - p) * (math.log(a) + log_s2) + log_prior_psi)
    return np.vstack(rows)


class SpectralWorkspace:
    """Per-model evaluator on the shared spectral basis.

    One batched Gram product over ``[Z, y~]`` with the five diagonal weights
    gives every ``p x p`` system the prior and the likelihood need at a node,
    and a single solve against ``Q01`` serves both.
    """

    def __init__(self, basis: SpectralBasis, y_t, X_t_c):
        self.reduced = reduce_design(basis, X_t_c)
        self.n, self.p = self.reduced.n, self.reduced.p
        y_t = np.asarray(y_t, dtype=np.float64)
        self.y_r = y_t[:-1]
        self.y_norm2 = float(y_t @ y_t)
        self.q = self.reduced.Z.shape[1]
        self._grams = SpectralGrams(self.reduced.d, np.column_stack([self.reduced.Z, self.y_r]))

    @classmethod
    def for_model(cls, basis: SpectralBasis, data: SpectralData, model: ModelSpec):
        cols = model.columns()
        return cls(basis, data.y_t, data.X_t[:, cols])

    def quantities(self, tau, with_prior: bool = True) -> dict:
        """``logdet_omega``, ``logdet_xox``, ``s2`` and (optionally) ``log_prior``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        q = self.q
        G, sums, logdet_omega = self._grams(tau)
        G01 = G[0][:, :q, :q]
        g = G[0][:, :q, q]
        yby = G[0][:, q, q]
        out = {"logdet_omega": logdet_omega}
        if q:
            sign, ld = np.linalg.slogdet(G01)
            if np.any(sign <= 0):
                raise NumericalError("X_c' Omega^-1 X_c is not positive definite")
            out["logdet_xox"] = ld + self.reduced.logdet_offset
        else:
            out["logdet_xox"] = np.full(tau.size, self.reduced.logdet_offset)
        if with_prior:
            terms = trace_terms(sums, G, q, extra=g if q else None)
            fit = np.einsum("mi,mi->m", g, terms["solve_extra"]) if q else 0.0
            dof = self.n - self.p
            out["log_prior"] = -2.0 * np.log(tau) + 0.5 * log_bracket_from_terms(terms, dof, tau)
        else:
            if q:
                try:
                    fit = np.einsum("mi,mi->m", g, np.linalg.solve(G01, g[..., None])[..., 0])
                except np.linalg.LinAlgError:
                    raise NumericalError("Q01(tau) is singular") from None
            else:
                fit = 0.0
        out["s2"] = _check_s2(yby - fit, self.y_norm2, tau)
        return out

    def log_integrand(self, b: float, log_prior_psi: LogPsiPrior | None = None):
        """Vectorized ``psi -> (2, m)`` log-integrands of ``J(1)`` and ``J(b)``."""
        n, p = self.n, self.p
        if n - p < 2 and log_prior_psi is None:
            raise DegeneratePriorError(f"prior vanishes identically when n - p < 2 (n = {n}, p = {p})")

        def f(psi):
            tau = np.exp(psi)
            qs = self.quantities(tau, with_prior=log_prior_psi is None)
            lp = psi + qs["log_prior"] if log_prior_psi is None else log_prior_psi(psi)
            return _log_integrand(n, p, b, qs["logdet_omega"], qs["logdet_xox"], qs["s2"], lp)

        return f


class KFFWorkspace:
    """Per-model baseline: diagonalize ``M*' H+ M*`` for each model.

    With ``U = M* V`` and ``w = U'y``, the restricted quantities are diagonal:
    ``|Omega| |X'Omega^-1 X| = |X'X| prod(1 + lambda_j/tau)`` and
    ``S^2 = sum_j w_j^2 tau/(tau + lambda_j)``. ``log|Omega|`` itself is
    model-free and comes from the graph eigenvalues.
    """

    def __init__(self, basis: SpectralBasis, y, X_c, H_pinv=None):
        X_c = np.asarray(X_c, dtype=np.float64)
        self.n, self.p = X_c.shape
        self.lam, U = projection_eigensystem(basis, X_c, H_pinv)
        self.prior = EigenPrior(self.lam, self.n, self.p)
        y = np.asarray(y, dtype=np.float64)
        self.w2 = (U.T @ y) ** 2
        self.y_norm2 = float(y @ y)
        sign, self.logdet_xx = np.linalg.slogdet(X_c.T @ X_c)
        self.d = basis.d[:-1]

    def quantities(self, tau) -> dict:
        tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        ld_omega = log_det_omega(self.d, tau)
        ratio = self.lam[None, :] / tau[:, None]
        ld_restricted = np.log1p(ratio).sum(axis=1)
        s2 = (self.w2[None, :] / (1.0 + ratio)).sum(axis=1)
        return {
            "logdet_omega": ld_omega,
            "logdet_xox": ld_restricted + self.logdet_xx - ld_omega,
            "s2": _check_s2(s2, self.y_norm2, tau),
            "log_prior": self.prior.log_prior(tau),
        }

    def log_integrand(self, b: float):
        n, p = self.n, self.p

        def f(psi):
            qs = self.quantities(np.exp(psi))
            return _log_integrand(n, p, b, qs["logdet_omega"], qs["logdet_xox"], qs["s2"],
                                  psi + qs["log_prior"])

        return f


def log_det_xox(ws: SpectralWorkspace, tau):
    """``log|X_c' Omega^-1 X_c|`` (equal to ``log|X~_c' B X~_c|``)."""
    scalar = np.ndim(tau) == 0
    out = ws.quantities(tau, with_prior=False)["logdet_xox"]
    return float(out[0]) if scalar else out


def s_squared(ws: SpectralWorkspace, tau):
    """``y'(Omega^-1 - Omega^-1 X (X'Omega^-1 X)^-1 X'Omega^-1) y``."""
    scalar = np.ndim(tau) == 0
    out = ws.quantities(tau, with_prior=False)["s2"]
    return float(out[0]) if scalar else out


def dense_quantities(H, y, X_c, tau, H_pinv=None):
    """Dense ``(log|Omega|, log|X'Omega^-1 X|, S^2)`` at one tau; O(n^3)."""
    H = np.asarray(H, dtype=np.float64)
    if H_pinv is None:
        H_pinv = np.linalg.pinv(H, hermitian=True)
    om = dense_omega(H, H_pinv, tau)
    X_c = np.asarray(X_c, dtype=np.float64).reshape(H.shape[0], -1)
    OX = om.inv @ X_c
    XOX = X_c.T @ OX
    sign, ld = np.linalg.slogdet(XOX)
    if sign <= 0:
        raise NumericalError("X' Omega^-1 X is not positive definite")
    Oy = om.inv @ y
    coef = scipy.linalg.solve(XOX, OX.T @ y, assume_a="pos")
    s2 = float(y @ Oy - (OX.T @ y) @ coef)
    return om.logdet, float(ld), s2


def _quad(f, cfg):
    log_int, diag = adaptive_quadrature(f, cfg)
    return np.asarray(log_int), diag


def log_fractional_marginal(basis: SpectralBasis, data: SpectralData, model: ModelSpec,
                            b_frac: float, quad_cfg: QuadConfig | None = None, *,
                            log_prior_psi: LogPsiPrior | None = None,
                            workspace: SpectralWorkspace | None = None) -> FractionalLikelihoodResult:
    """``log q_c(b, y)`` for a spatial model by quadrature over ``psi``.

    ``log_prior_psi`` replaces the reference prior on the ``psi`` scale (used
    for limit checks with a concentrated test prior).
    """
    ws = workspace or SpectralWorkspace.for_model(basis, data, model)
    const = fractional_constant(ws.n, ws.p, b_frac)
    log_J, diag = _quad(ws.log_integrand(b_frac, log_prior_psi), quad_cfg)
    return FractionalLikelihoodResult(float(const + log_J[0] - log_J[1]),
                                      float(log_J[0]), float(log_J[1]), diag)


def kff_fractional_marginal(ws: KFFWorkspace, b_frac: float,
                            quad_cfg: QuadConfig | None = None) -> FractionalLikelihoodResult:
    const = fractional_constant(ws.n, ws.p, b_frac)
    log_J, diag = _quad(ws.log_integrand(b_frac), quad_cfg)
    return FractionalLikelihoodResult(float(const + log_J[0] - log_J[1]),
                                      float(log_J[0]), float(log_J[1]), diag)


def ols_rss(y, X_c) -> float:
    X_c = np.asarray(X_c, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Q, R = np.linalg.qr(X_c)
    if np.min(np.abs(np.diag(R))) <= 1e-12 * np.max(np.abs(np.diag(R))):
        raise DesignError("X_c is rank deficient")
    resid = y - Q @ (Q.T @ y)
    return float(resid @ resid)


def log_marginal_independent(y, X_c, b_frac: float) -> float:
    """Closed-form ``log q_c(b, y)`` with ``Omega = I``."""
    X_c = np.asarray(X_c, dtype=np.float64)
    if X_c.ndim == 1:
        X_c = X_c[:, None]
    n, p = X_c.shape
    const = fractional_constant(n, p, b_frac)
    rss = ols_rss(y, X_c)
    y = np.asarray(y, dtype=np.float64)
    if rss <= S2_RTOL * float(y @ y):
        raise NumericalError("S^2 vanishes: the response lies in the column space of X_c")
    return float(const - 0.5 * (n - p) * math.log(rss / 2.0)
                 + 0.5 * (n * b_frac - p) * math.log(b_frac * rss / 2.0))
