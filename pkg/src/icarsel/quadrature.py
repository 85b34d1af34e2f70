"""Adaptive quadrature of positive integrands given on the log scale.

Integrates ``exp(f(psi))`` over the whole real line. ``f`` is vectorized: it
takes a 1-D array of nodes and returns either one row of log values or a
``(c, m)`` block, one row per integrand sharing the same nodes. The result is
returned as a log integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, QuadratureError

__all__ = ["QuadConfig", "QuadDiagnostics", "adaptive_quadrature"]

# 15-point Kronrod rule with its embedded 7-point Gauss rule, on [-1, 1]
_XK = np.array([
    -0.991455371120812639206854697526329, -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926, -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013, -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245, 0.0,
    0.207784955007898467600689403773245, 0.405845151377397166906606412076961,
    0.586087235467691130294144845693013, 0.741531185599394439863864773280788,
    0.864864423359769072789712788640926, 0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
    0.204432940075298892414161999234649, 0.190350578064785409913256402421014,
    0.169004726639267902826583426598550, 0.140653259715525918745189590510238,
    0.104790010322250183839876322541518, 0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
_WG = np.zeros(15)
_WG[1::2] = [
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
    0.381830050505118944950369775488975, 0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
]

_PSI_LIMIT = 150.0
_MAX_WIDTH = 4.0
_GOLDEN_STEPS = 5
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_EXTEND = 3            # panels added per side per round


@dataclass(frozen=True)
class QuadConfig:
    rel_tol: float = 1e-8
    max_evals: int = 20000
    scan_range: tuple[float, float] = (-30.0, 30.0)
    scan_points: int = 81
    tail_tol: float = 1e-10


@dataclass(frozen=True)
class QuadDiagnostics:
    evaluations: int
    est_rel_error: float
    mode: float
    lower: float
    upper: float
    segments: int


class _Budget:
    def __init__(self, f, max_evals):
        self.f = f
        self.max_evals = max_evals
        self.count = 0

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        self.count += x.size
        if self.count > self.max_evals:
            raise QuadratureError(f"quadrature budget of {self.max_evals} evaluations exceeded")
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.asarray(self.f(x), dtype=np.float64)
        out = np.atleast_2d(out)
        if out.shape[-1] != x.size:
            raise ValueError("log-integrand returned the wrong number of values")
        if np.isnan(out).any():
            bad = x[np.isnan(out).any(axis=0)][0]
            raise NumericalError(f"log-integrand is NaN at psi = {bad:.6g}")
        if np.isposinf(out).any():
            bad = x[np.isposinf(out).any(axis=0)][0]
            raise NumericalError(f"log-integrand is +inf at psi = {bad:.6g}")
        return out


def _scan(f, lo, hi, npts):
    grid = np.linspace(lo, hi, npts)
    vals = f(grid)
    return grid, vals


def _golden_step(a, c, x1, x2, left):
    """Next golden-section state after keeping the left or right part."""
    if left:
        return a, x2, x2 - _INV_PHI * (x2 - a), x1
    return x1, c, x2, x1 + _INV_PHI * (c - x1)


def _golden_candidates(state, depth, out):
    """Every point the next ``depth`` steps could ask for."""
    if depth == 0:
        return
    for left in (True, False):
        nxt = _golden_step(*state, left)
        out.append(nxt[2] if left else nxt[3])
        _golden_candidates(nxt, depth - 1, out)


def _golden(f, a, c, steps, lookahead=2):
    """Golden-section search for the maximum of the first row of ``f`` on [a, c].

    The mode only anchors the panel grid, so a few steps suffice. Each call
    evaluates all candidate points of the next ``lookahead`` steps, which
    visits the same points as the sequential search in fewer calls.
    """
    state = (a, c, c - _INV_PHI * (c - a), a + _INV_PHI * (c - a))
    known: dict[float, float] = {}
    done = 0
    while True:
        depth = min(lookahead, steps - done)
        pts = [state[2], state[3]]
        _golden_candidates(state, depth, pts)
        new = [x for x in dict.fromkeys(pts) if x not in known]
        if new:
            known.update(zip(new, f(np.array(new))[0]))
        for _ in range(depth):
            state = _golden_step(*state, known[state[2]] >= known[state[3]])
        done += depth
        if done >= steps:
            break
    x1, x2 = state[2], state[3]
    f1, f2 = known[x1], known[x2]
    return (float(x1), float(f1)) if f1 >= f2 else (float(x2), float(f2))


def _find_mode(f, cfg: QuadConfig):
    lo, hi = cfg.scan_range
    for attempt in range(2):
        grid, vals = _scan(f, lo, hi, cfg.scan_points)
        if np.all(np.isneginf(vals[0])):
            raise QuadratureError(f"integrand vanishes on the scan range [{lo}, {hi}]")
        peaks = np.argmax(vals, axis=1)
        at_edge = [k for k, i in enumerate(peaks) if i in (0, grid.size - 1) and np.isfinite(vals[k, i])]
        if not at_edge:
            break
        if attempt == 0:
            half = hi - lo
            lo, hi = lo - half / 2, hi + half / 2
            continue
        raise QuadratureError(
            f"integrand mode lies at the scan boundary ({grid[peaks[at_edge[0]]]:.4g}) "
            f"even after widening to [{lo}, {hi}]"
        )
    i = int(peaks[0])
    best_x, best_v = grid[i], vals[0, i]
    x, v = _golden(f, grid[i - 1], grid[i + 1], _GOLDEN_STEPS)
    if v > best_v:
        best_x, best_v = x, v
    offsets = np.maximum(vals.max(axis=1), -np.inf)
    offsets[0] = max(offsets[0], best_v)
    # local maxima of the scan that matter; panels must reach past all of them
    inner = vals[:, 1:-1]
    peak = ((inner >= vals[:, :-2]) & (inner >= vals[:, 2:])
            & (inner >= offsets[:, None] + math.log(cfg.tail_tol)))
    cols = np.flatnonzero(np.any(peak, axis=0)) + 1
    step = grid[1] - grid[0]
    reach = (grid[cols[0]] - step, grid[cols[-1]] + step) if cols.size else (best_x, best_x)
    return best_x, offsets, reach


def _panel_width(f, mode):
    h = 0.01
    v = f(np.array([mode - h, mode, mode + h]))[0]
    curv = -(v[0] - 2 * v[1] + v[2]) / h**2
    if np.all(np.isfinite(v)) and curv > 0:
        sd = 1.0 / math.sqrt(curv)
    else:
        sd = 1.0
    sd = min(max(sd, 1.0 / 64), _MAX_WIDTH)
    return 2.0 ** math.floor(math.log2(sd))


class _Side:
    """Panel layout outward from the anchor in one direction.

    Widths start at ``w0`` and double (up to ``_MAX_WIDTH``) once the edge is
    aligned to the doubled width, so panel edges stay on a dyadic grid.
    """

    def __init__(self, direction, start, w0, reach):
        self.direction = direction
        self.reach = reach               # must be passed before the side may stop
        self.x = start
        self.w = w0
        self.steps = 0
        self.done = False
        self.outer = -1                  # panel id of the outermost panel

    @property
    def past_reach(self) -> bool:
        return (self.x - self.reach) * self.direction >= 0

    def next_panel(self):
        if abs(self.x) > _PSI_LIMIT:
            raise QuadratureError(f"tail mass did not vanish before |psi| = {_PSI_LIMIT}")
        if self.direction > 0:
            a, b = self.x, self.x + self.w
            self.x = b
        else:
            a, b = self.x - self.w, self.x
            self.x = a
        self.steps += 1
        ratio = self.x / (2 * self.w)
        if self.steps >= 2 and self.w < _MAX_WIDTH and math.isclose(ratio, round(ratio), abs_tol=1e-12):
            self.w *= 2
        return a, b


def _evaluate(f, lo, hi):
    """Log-integrand at the 15 Kronrod nodes of each segment, and half-widths."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * _XK[None, :]).ravel()
    logv = f(nodes)
    return logv.reshape(logv.shape[0], lo.size, 15), half


def adaptive_quadrature(log_f, cfg: QuadConfig | None = None):
    """Integrate ``exp(log_f(psi))`` over the real line.

    The mode is located by a coarse scan over ``cfg.scan_range`` followed by
    golden-section refinement. Gauss-Kronrod panels are laid out from the
    mode in both directions; every round bisects all segments whose error
    estimate misses ``rel_tol`` and extends each unfinished side by a few
    panels, all in one vectorized call. A side stops once it has passed every
    local maximum of the scan above ``tail_tol`` of the peak and its
    outermost panel adds less than ``tail_tol`` of the accumulated mass (for
    every component), so modes separated by a deep trough are kept as long
    as the scan sees them.

    Returns
    -------
    log_integral : float or ndarray
        One value per component (a float when ``log_f`` returns one row).
    diagnostics : QuadDiagnostics
    """
    cfg = cfg or QuadConfig()
    scalar = [None]

    def wrapped(x):
        out = log_f(x)
        if scalar[0] is None:
            scalar[0] = np.ndim(out) == 1
        return out

    f = _Budget(wrapped, cfg.max_evals)
    mode, offsets, reach = _find_mode(f, cfg)
    w0 = _panel_width(f, mode)
    offset = np.where(np.isfinite(offsets), offsets, 0.0)
    c = offset.size

    anchor = math.floor(mode / w0) * w0
    sides = [_Side(-1, anchor, w0, reach[0]), _Side(+1, anchor + w0, w0, reach[1])]
    batch = [(anchor, anchor + w0, 0)]
    n_panels = 1
    for side in sides:
        for _ in range(2):
            a, b = side.next_panel()
            batch.append((a, b, n_panels))
            side.outer = n_panels
            n_panels += 1

    leaf_K = np.zeros((c, 0))
    leaf_err = np.zeros((c, 0))
    leaf_pid = np.zeros(0, dtype=int)
    leaf_ok = np.zeros(0, dtype=bool)
    leaf_lo = np.zeros(0)
    leaf_hi = np.zeros(0)
    tail_rel = 0.0

    while batch:
        lo = np.array([s[0] for s in batch])
        hi = np.array([s[1] for s in batch])
        pid = np.array([s[2] for s in batch], dtype=int)
        logv, half = _evaluate(f, lo, hi)
        bmax = logv.max(axis=(1, 2))
        new_off = np.maximum(offset, np.where(np.isfinite(bmax), bmax, -np.inf))
        shift = np.exp(offset - new_off)[:, None]
        leaf_K, leaf_err, offset = leaf_K * shift, leaf_err * shift, new_off
        vals = np.exp(logv - offset[:, None, None])
        K = (vals @ _WK) * half[None, :]
        G = (vals @ _WG) * half[None, :]
        leaf_K = np.concatenate([leaf_K, K], axis=1)
        leaf_err = np.concatenate([leaf_err, np.abs(K - G)], axis=1)
        leaf_pid = np.concatenate([leaf_pid, pid])
        leaf_lo = np.concatenate([leaf_lo, lo])
        leaf_hi = np.concatenate([leaf_hi, hi])
        leaf_ok = np.concatenate([leaf_ok, np.zeros(lo.size, dtype=bool)])

        total = leaf_K.sum(axis=1)
        ref = np.maximum(leaf_K, 1e-3 * total[:, None])
        good = np.all(leaf_err <= 0.5 * cfg.rel_tol * ref, axis=0) | (leaf_hi - leaf_lo < 1e-9)
        split = ~leaf_ok & ~good
        leaf_ok |= good
        batch = []
        for i in np.flatnonzero(split):
            m = 0.5 * (leaf_lo[i] + leaf_hi[i])
            batch += [(leaf_lo[i], m, leaf_pid[i]), (m, leaf_hi[i], leaf_pid[i])]
        keep = ~split
        leaf_K, leaf_err, leaf_pid = leaf_K[:, keep], leaf_err[:, keep], leaf_pid[keep]
        leaf_lo, leaf_hi, leaf_ok = leaf_lo[keep], leaf_hi[keep], leaf_ok[keep]

        for side in sides:
            if side.done:
                continue
            in_outer = leaf_pid == side.outer
            pending_outer = any(s[2] == side.outer for s in batch)
            contrib = leaf_K[:, in_outer].sum(axis=1)
            if (not pending_outer and side.past_reach
                    and np.all((contrib <= cfg.tail_tol * total) | (total <= 0))):
                side.done = True
                tail_rel += float(np.max(np.where(total > 0, contrib / total, 0.0)))
                continue
            if pending_outer:
                continue
            for _ in range(_EXTEND):
                a, b = side.next_panel()
                batch.append((a, b, n_panels))
                side.outer = n_panels
                n_panels += 1

    total = leaf_K.sum(axis=1)
    if np.any(total <= 0):
        raise QuadratureError("integral underflowed to zero")
    log_int = offset + np.log(total)
    rel_err = float(np.max(leaf_err.sum(axis=1) / total)) + tail_rel
    diag = QuadDiagnostics(
        evaluations=f.count,
        est_rel_error=rel_err,
        mode=float(mode),
        lower=float(sides[0].x),
        upper=float(sides[1].x),
        segments=int(leaf_K.shape[1]),
    )
    if scalar[0]:
        return float(log_int[0]), diag
    return log_int, diag
