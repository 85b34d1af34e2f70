"""Dense O(n^3) evaluation of ``Omega = I + H+ / tau`` quantities.

Used by the oracles and by the per-model eigenvalue (KFF) path. For small
``tau`` the matrix ``I + H+/tau`` is badly conditioned, so there the same
quantities are formed from ``C = I + tau H`` instead: on the complement of
the constant vector ``Omega^-1 = tau H C^-1`` and ``H+ Omega^-1 = tau C^-1``,
while the constant direction has ``Omega^-1 = 1`` and ``H+ Omega^-1 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError

__all__ = ["DenseOmega", "dense_omega"]


@dataclass(frozen=True)
class DenseOmega:
    inv: np.ndarray
    hp_inv: np.ndarray      # H+ Omega^-1
    logdet: float


def _chol(A, what, tau):
    try:
        return scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise NumericalError(f"Cholesky of {what} failed at tau = {tau:g}") from None


def dense_omega(H: np.ndarray, H_pinv: np.ndarray, tau: float,
                logpdet_H: float | None = None) -> DenseOmega:
    """``Omega^-1``, ``H+ Omega^-1`` and ``log|Omega|`` by dense Cholesky.

    ``logpdet_H`` (log pseudo-determinant of H) is only needed in the small-tau
    regime; it is computed on demand when not supplied.
    """
    n = H.shape[0]
    I = np.eye(n)
    J = np.full((n, n), 1.0 / n)
    dmax_bound = 2.0 * float(np.max(np.diag(H)))
    if tau * dmax_bound <= 1.0:
        C = I + tau * H
        fac = _chol(C, "I + tau H", tau)
        Cinv = scipy.linalg.cho_solve(fac, I, check_finite=False)
        if logpdet_H is None:
            sign, logpdet_H = np.linalg.slogdet(H + J)
            if sign <= 0:
                raise NumericalError("H + J/n is not positive definite")
        logdet_C = 2.0 * np.sum(np.log(np.diag(fac[0])))
        inv = tau * H @ Cinv + J
        hp_inv = tau * (Cinv - J)
        logdet = logdet_C - (n - 1) * np.log(tau) - logpdet_H
    else:
        Omega = I + H_pinv / tau
        fac = _chol(Omega, "Omega", tau)
        inv = scipy.linalg.cho_solve(fac, I, check_finite=False)
        hp_inv = H_pinv @ inv
        logdet = 2.0 * np.sum(np.log(np.diag(fac[0])))
    inv = 0.5 * (inv + inv.T)
    hp_inv = 0.5 * (hp_inv + hp_inv.T)
    return DenseOmega(inv, hp_inv, float(logdet))
