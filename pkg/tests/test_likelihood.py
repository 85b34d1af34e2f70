from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import dense_H, random_instance
from scipy.stats import norm

from icarsel.errors import DesignError, NumericalError
from icarsel.graph import Dataset
from icarsel.likelihood import (
    KFFWorkspace,
    SpectralWorkspace,
    dense_quantities,
    fractional_constant,
    kff_fractional_marginal,
    log_det_omega,
    log_det_xox,
    log_fractional_marginal,
    log_marginal_independent,
    ols_rss,
    s_squared,
)
from icarsel.models import ModelSpec
from icarsel.selection import bayes_factor
from icarsel.spectral import transform


def test_log_det_omega_chain3(chain3):
    assert log_det_omega(chain3, 1.0) == pytest.approx(math.log(8 / 3), rel=1e-14)


def test_intercept_only_xox_is_log_n(rng):
    g, basis, X = random_instance(rng, 12, 1)
    ws = SpectralWorkspace(basis, basis.P.T @ rng.standard_normal(12), basis.P.T @ X)
    np.testing.assert_allclose(log_det_xox(ws, np.logspace(-3, 3, 7)), math.log(12), rtol=1e-13)


@pytest.mark.parametrize("tau", [1e-3, 0.3, 20.0])
def test_spectral_matches_dense(rng, tau):
    g, basis, X = random_instance(rng, 30, 3)
    y = rng.standard_normal(30)
    ws = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ X)
    ld_o, ld_x, s2 = dense_quantities(dense_H(g), y, X, tau)
    qs = ws.quantities(tau)
    assert qs["logdet_omega"][0] == pytest.approx(ld_o, rel=1e-10)
    assert qs["logdet_xox"][0] == pytest.approx(ld_x, rel=1e-10)
    assert qs["s2"][0] == pytest.approx(s2, rel=1e-10)


def test_s2_limits(rng):
    g, basis, X = random_instance(rng, 20, 2)
    y = rng.standard_normal(20)
    ws = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ X)
    # Omega -> I as tau grows
    assert s_squared(ws, 1e12) == pytest.approx(ols_rss(y, X), rel=1e-8)
    # the field absorbs everything off the constant direction as tau -> 0
    assert s_squared(ws, 1e-12) < 1e-9 * s_squared(ws, 1.0)
    s = s_squared(ws, np.logspace(-4, 4, 30))
    assert np.all(np.diff(s) > 0)


def test_fractional_constant_guard():
    with pytest.raises(DesignError):
        fractional_constant(10, 3, 0.2)
    with pytest.raises(ValueError):
        fractional_constant(10, 3, 1.5)


def test_bayes_factor_with_itself(rng):
    g, basis, X = random_instance(rng, 25, 3)
    ds = Dataset(rng.standard_normal(25), X)
    sd = transform(basis, ds)
    r = log_fractional_marginal(basis, sd, ModelSpec(0b11, True), 0.2)
    assert bayes_factor(r.log_q, r.log_q) == 0.0
    assert r.quad_diagnostics.est_rel_error <= 1e-8


def test_invariant_to_reparametrized_design(rng):
    g, basis, X = random_instance(rng, 25, 3)
    y = rng.standard_normal(25)
    A = np.array([[1.0, 0.3, -2.0], [0.0, 2.0, 0.5], [0.0, -1.0, 1.5]])
    ws1 = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ X)
    ws2 = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ (X @ A))
    r1 = log_fractional_marginal(basis, None, None, 0.2, workspace=ws1)
    r2 = log_fractional_marginal(basis, None, None, 0.2, workspace=ws2)
    assert r2.log_q == pytest.approx(r1.log_q, abs=1e-8)


def test_concentrated_prior_recovers_independence(rng):
    g, basis, X = random_instance(rng, 25, 2)
    y = X @ [1.0, 0.5] + rng.standard_normal(25)
    ws = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ X)
    centre = math.log(1e10)

    def log_prior_psi(psi):
        return norm.logpdf(psi, centre, 0.05)

    r = log_fractional_marginal(basis, None, None, 0.16, log_prior_psi=log_prior_psi, workspace=ws)
    assert r.log_q == pytest.approx(log_marginal_independent(y, X, 0.16), abs=1e-3)


def test_kff_matches_fast(rng):
    g, basis, X = random_instance(rng, 30, 3)
    y = X @ [0.5, 1.0, 0.0] + rng.standard_normal(30)
    ws = SpectralWorkspace(basis, basis.P.T @ y, basis.P.T @ X)
    kws = KFFWorkspace(basis, y, X)
    for tau in (1e-2, 1.0, 1e2):
        a, b = ws.quantities(tau), kws.quantities(tau)
        for key in ("logdet_omega", "logdet_xox", "s2", "log_prior"):
            np.testing.assert_allclose(a[key], b[key], rtol=1e-9, err_msg=key)
    r1 = log_fractional_marginal(basis, None, None, 0.2, workspace=ws)
    r2 = kff_fractional_marginal(kws, 0.2)
    assert r1.log_q == pytest.approx(r2.log_q, abs=1e-9)


def test_independent_closed_form_by_hand():
    y = np.array([1.0, 3.0, 2.0, 6.0])
    X = np.ones((4, 1))
    b = 0.5
    rss = float(((y - y.mean()) ** 2).sum())
    expected = (-0.5 * 4 * 0.5 * math.log(2 * math.pi) + 0.5 * math.log(b)
                + math.lgamma(1.5) - math.lgamma(0.5)
                - 1.5 * math.log(rss / 2) + 0.5 * math.log(b * rss / 2))
    assert log_marginal_independent(y, X, b) == pytest.approx(expected, rel=1e-13)


def test_exact_fit_raises(rng):
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    y = X @ [1.0, 2.0]
    with pytest.raises(NumericalError):
        log_marginal_independent(y, X, 0.5)
