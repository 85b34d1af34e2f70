"""Exhaustive model enumeration, posterior model probabilities, and PIPs."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InputError, NumericalError
from .graph import Dataset, NeighborhoodGraph, build_precision
from .likelihood import (
    KFFWorkspace,
    default_b_fraction,
    kff_fractional_marginal,
    log_fractional_marginal,
    log_marginal_independent,
)
from .models import ModelSpec
from .quadrature import QuadConfig
from .spectral import SpectralBasis, decompose, transform

__all__ = [
    "ModelSpec",
    "ModelRecord",
    "SelectionConfig",
    "SelectionResult",
    "model_prior",
    "log_model_prior",
    "enumerate_models",
    "enumerate_and_score",
    "kff_path_score",
    "bayes_factor",
    "to_dict",
    "write_json",
    "write_csv",
]

MAX_K_DEFAULT = 20


def model_prior(k: int, k_c: int) -> float:
    """``P(M_c) = 1 / (2 (k+1) C(k, k_c))``: uniform over sizes, then within size."""
    if not 0 <= k_c <= k:
        raise ValueError(f"need 0 <= k_c <= k, got k_c = {k_c}, k = {k}")
    return 1.0 / (2 * (k + 1) * math.comb(k, k_c))


def log_model_prior(k: int, k_c: int) -> float:
    if not 0 <= k_c <= k:
        raise ValueError(f"need 0 <= k_c <= k, got k_c = {k_c}, k = {k}")
    log_comb = gammaln(k + 1) - gammaln(k_c + 1) - gammaln(k - k_c + 1)
    return -math.log(2 * (k + 1)) - float(log_comb)


def enumerate_models(k: int) -> list[ModelSpec]:
    """All ``2^(k+1)`` models in index order (mask-major, independent first)."""
    return [ModelSpec(mask, spatial) for mask in range(1 << k) for spatial in (False, True)]


def bayes_factor(log_q_c: float, log_q_a: float) -> float:
    """``log BF_ca = log q_c - log q_a``."""
    if not (math.isfinite(log_q_c) and math.isfinite(log_q_a)):
        raise ValueError("Bayes factor needs finite log marginals")
    return log_q_c - log_q_a


@dataclass(frozen=True)
class SelectionConfig:
    b_fraction: float | None = None      # None means (k + 2) / n
    quad: QuadConfig = field(default_factory=QuadConfig)
    max_k: int = MAX_K_DEFAULT
    threads: int = 1
    path: str = "fast"                   # "fast" or "kff"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quad"]["scan_range"] = list(self.quad.scan_range)
        return d


@dataclass(frozen=True)
class ModelRecord:
    spec: ModelSpec
    log_prior: float
    log_q: float
    log_post: float
    post_prob: float
    quad_evaluations: int = 0
    quad_rel_error: float = 0.0


@dataclass(frozen=True)
class SelectionResult:
    models: tuple[ModelRecord, ...]
    names: tuple[str, ...]
    pip: np.ndarray
    p_spatial: float
    map_model: ModelSpec
    median_mask: int
    b_fraction: float
    config: dict

    @property
    def k(self) -> int:
        return len(self.names)

    def log_post(self) -> np.ndarray:
        return np.array([r.log_post for r in self.models])

    def regressors(self, mask: int) -> list[str]:
        return [self.names[j] for j in range(self.k) if mask >> j & 1]


def _tagged(exc: Exception, spec: ModelSpec, names) -> Exception:
    msg = f"model {spec.label(list(names))} (mask {spec.mask}): {exc}"
    if isinstance(exc, NumericalError):
        return type(exc)(msg)
    if isinstance(exc, InputError):
        return InputError(msg)
    return NumericalError(msg)


def _score_fast(basis, sdata, ds, spec, b, quad):
    cols = spec.columns()
    if not spec.spatial:
        return log_marginal_independent(ds.y, ds.X[:, cols], b), 0, 0.0
    res = log_fractional_marginal(basis, sdata, spec, b, quad)
    return res.log_q, res.quad_diagnostics.evaluations, res.quad_diagnostics.est_rel_error


def _score_kff(basis, H_pinv, ds, spec, b, quad):
    cols = spec.columns()
    if not spec.spatial:
        return log_marginal_independent(ds.y, ds.X[:, cols], b), 0, 0.0
    ws = KFFWorkspace(basis, ds.y, ds.X[:, cols], H_pinv)
    res = kff_fractional_marginal(ws, b, quad)
    return res.log_q, res.quad_diagnostics.evaluations, res.quad_diagnostics.est_rel_error


def enumerate_and_score(basis: SpectralBasis, ds: Dataset,
                        cfg: SelectionConfig | None = None) -> SelectionResult:
    """Score every model and combine into posterior probabilities.

    Independent-error models use the closed-form marginal; ICAR models use
    quadrature over ``log(tau)``. Any per-model failure aborts the run.
    """
    cfg = cfg or SelectionConfig()
    k = ds.k
    if k > cfg.max_k:
        raise InputError(f"{k} candidate regressors exceed the exhaustive limit of {cfg.max_k}")
    if basis.n != ds.n:
        raise InputError(f"graph has {basis.n} subregions but the data have {ds.n} rows")
    b = default_b_fraction(ds.n, k) if cfg.b_fraction is None else float(cfg.b_fraction)
    specs = enumerate_models(k)

    if cfg.path == "fast":
        sdata = transform(basis, ds)

        def score(spec):
            return _score_fast(basis, sdata, ds, spec, b, cfg.quad)
    elif cfg.path == "kff":
        H_pinv = basis.pinv()

        def score(spec):
            return _score_kff(basis, H_pinv, ds, spec, b, cfg.quad)
    else:
        raise InputError(f"unknown scoring path {cfg.path!r}")

    def guarded(spec):
        try:
            return score(spec)
        except (NumericalError, InputError, np.linalg.LinAlgError) as exc:
            raise _tagged(exc, spec, ds.names) from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            scores = list(pool.map(guarded, specs))
    else:
        scores = [guarded(s) for s in specs]

    log_prior = np.array([log_model_prior(k, s.k_c) for s in specs])
    log_q = np.array([s[0] for s in scores])
    log_joint = log_prior + log_q
    log_post = log_joint - logsumexp(log_joint)
    post = np.exp(log_post)

    masks = np.array([s.mask for s in specs])
    spatial = np.array([s.spatial for s in specs])
    pip = np.array([post[(masks >> j) & 1 == 1].sum() for j in range(k)])
    p_spatial = float(post[spatial].sum())
    map_idx = int(np.argmax(log_post))
    median_mask = int(sum(1 << j for j in range(k) if pip[j] >= 0.5))

    records = tuple(
        ModelRecord(s, float(lp), float(lq), float(lpo), float(pp), int(sc[1]), float(sc[2]))
        for s, lp, lq, lpo, pp, sc in zip(specs, log_prior, log_q, log_post, post, scores)
    )
    return SelectionResult(
        models=records,
        names=tuple(ds.names),
        pip=pip,
        p_spatial=p_spatial,
        map_model=specs[map_idx],
        median_mask=median_mask,
        b_fraction=b,
        config={**cfg.to_dict(), "b_fraction": b},
    )


def kff_path_score(ds: Dataset, graph: NeighborhoodGraph | SpectralBasis,
                   cfg: SelectionConfig | None = None) -> SelectionResult:
    """Baseline pipeline: per-model eigendecompositions instead of the shared basis."""
    cfg = cfg or SelectionConfig()
    basis = graph if isinstance(graph, SpectralBasis) else decompose(build_precision(graph))
    return enumerate_and_score(basis, ds, replace(cfg, path="kff"))


def _model_dict(res: SelectionResult, spec: ModelSpec) -> dict:
    return {"mask": spec.mask, "spatial": spec.spatial, "regressors": res.regressors(spec.mask)}


def to_dict(res: SelectionResult) -> dict:
    return {
        "config": res.config,
        "models": [
            {
                "mask": r.spec.mask,
                "spatial": r.spec.spatial,
                "regressors": res.regressors(r.spec.mask),
                "log_prior": r.log_prior,
                "log_q": r.log_q,
                "post_prob": r.post_prob,
            }
            for r in res.models
        ],
        "pip": {name: float(v) for name, v in zip(res.names, res.pip)},
        "p_spatial": res.p_spatial,
        "map_model": _model_dict(res, res.map_model),
        "median_model": {"mask": res.median_mask, "regressors": res.regressors(res.median_mask)},
    }


def write_json(res: SelectionResult, path) -> None:
    Path(path).write_text(json.dumps(to_dict(res), indent=2) + "\n")


def write_csv(res: SelectionResult, models_path, pip_path) -> None:
    with open(models_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mask", "spatial", "regressors", "log_prior", "log_q", "post_prob"])
        for r in res.models:
            w.writerow([r.spec.mask, int(r.spec.spatial), " ".join(res.regressors(r.spec.mask)),
                        repr(r.log_prior), repr(r.log_q), repr(r.post_prob)])
    with open(pip_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regressor", "pip"])
        for name, v in zip(res.names, res.pip):
            w.writerow([name, repr(float(v))])
