"""Affine-in-rho barriers f(theta) + alpha (rho0 - rho) on {rho1 <= rho <= rho0}.

With alpha large and positive the graph is a supersolution (2H <= 2 h0); with
alpha large and negative it is a subsolution (2H >= 2 h0). The slope is found
by doubling and each candidate is certified pointwise on the discrete operator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import resample

from .geometry import ModelParams
from .graph import AnnularGrid, GridSection, mean_curvature

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 60


class BarrierSearchError(RuntimeError):
    def __init__(self, msg, max_violation):
        super().__init__(msg)
        self.max_violation = max_violation


@dataclass(frozen=True)
class BarrierSpec:
    rho0: float
    rho1: float
    f: tuple
    M: float
    alpha: float
    tau: float

    def __post_init__(self):
        if not 0 < self.rho1 < self.rho0:
            raise ValueError("need 0 < rho1 < rho0")
        f = np.asarray(self.f, float)
        if f.ndim != 1 or len(f) < 8 or not np.all(np.isfinite(f)):
            raise ValueError("f must be at least 8 finite periodic samples")
        object.__setattr__(self, "f", tuple(float(v) for v in f))

    def f_on(self, n_theta: int) -> np.ndarray:
        """f at n_theta equispaced angles; trigonometric interpolation if needed."""
        f = np.asarray(self.f)
        return f.copy() if n_theta == len(f) else resample(f, n_theta)

    def values(self, grid: AnnularGrid) -> np.ndarray:
        return self.f_on(grid.n_theta)[None, :] + self.alpha * (self.rho0 - grid.rho)[:, None]

    def section(self, grid: AnnularGrid, h0: float = 0.5) -> GridSection:
        return GridSection(grid, self.values(grid), ModelParams(-1.0, self.tau, h0))


class BarrierReport(NamedTuple):
    direction: str
    min_2H: float
    max_2H: float
    max_violation: float
    trace_error: float
    height_gap: float
    passed: bool

    def to_dict(self):
        return self._asdict()


class BarrierResult(NamedTuple):
    alpha: float
    section: GridSection
    certificates: tuple


def height_bound(f, rho0, rho1, M, direction):
    f = np.asarray(f, float)
    if direction == "above":
        return (M - f.min()) / (rho0 - rho1)
    return (M - f.max()) / (rho0 - rho1)


def _check_direction(direction):
    if direction not in ("above", "below"):
        raise ValueError(f"direction must be 'above' or 'below', got {direction!r}")


def verify_barrier(s: GridSection, direction: str, f=None, M=None, tol: float = 0.0,
                   target: float | None = None) -> BarrierReport:
    """Check 2H[s] <= target ("above") or >= target ("below") at interior nodes.

    With f and M given, also the traces s = f on the outer row and the height
    condition on the inner row (s >= M above, s <= M below)."""
    _check_direction(direction)
    target = 2 * s.params.h0 if target is None else target
    H2 = 2 * mean_curvature(s)[1:-1]
    excess = H2 - target
    viol = float(excess.max()) if direction == "above" else float(-excess.min())
    trace_err, gap = 0.0, 0.0
    ok = viol <= tol
    if f is not None:
        fv = np.asarray(f, float)
        trace_err = float(np.max(np.abs(s.outer - fv)))
        ok = ok and trace_err == 0.0
    if M is not None:
        gap = float(s.inner.min() - M) if direction == "above" else float(M - s.inner.max())
        ok = ok and gap >= 0
    return BarrierReport(direction, float(H2.min()), float(H2.max()), viol, trace_err, gap,
                         bool(ok))


def _padded(grid: AnnularGrid) -> AnnularGrid:
    """Working grid with one ghost row on each side, so every working row is interior."""
    d = grid.d_rho
    if grid.rho_min - d <= 0:
        raise ValueError("inner ghost row would cross the origin")
    return AnnularGrid(grid.rho_min - d, grid.rho_max + d, grid.n_rho + 2, grid.n_theta)


def certify(spec: BarrierSpec, grid: AnnularGrid, direction: str, h0: float = 0.5,
            refine: bool = True):
    """Reports on the working grid and (optionally) its 2x refinement; every
    working node, boundary rows included, is checked."""
    reps = []
    for g in ([grid, grid.refine(2)] if refine else [grid]):
        padded = spec.section(_padded(g), h0)
        rep = verify_barrier(padded, direction, target=2 * h0)
        work = spec.section(g, h0)
        trace = float(np.max(np.abs(work.outer - spec.f_on(g.n_theta))))
        gap = (float(work.inner.min() - spec.M) if direction == "above"
               else float(spec.M - work.inner.max()))
        reps.append(rep._replace(trace_error=trace, height_gap=gap,
                                 passed=rep.passed and trace == 0.0 and gap >= -1e-12))
    return tuple(reps)


def _build(f, rho0, rho1, M, tau, grid, direction, h0=0.5, max_doublings=MAX_DOUBLINGS):
    _check_direction(direction)
    f = np.asarray(f, float)
    if grid.n_theta != len(f):
        raise ValueError("grid.n_theta must match the number of f samples")
    if abs(grid.rho_min - rho1) > 1e-12 or abs(grid.rho_max - rho0) > 1e-12:
        raise ValueError("grid must span [rho1, rho0]")
    sign = 1.0 if direction == "above" else -1.0
    alpha = height_bound(f, rho0, rho1, M, direction)
    if not sign * alpha > 0:
        alpha = sign * 1.0
    worst = np.inf
    for k in range(max_doublings + 1):
        spec = BarrierSpec(rho0, rho1, tuple(f), M, alpha, tau)
        certs = certify(spec, grid, direction, h0)
        if all(c.passed for c in certs):
            log.info("%s barrier certified at alpha=%g after %d doublings", direction, alpha, k)
            return BarrierResult(alpha, spec.section(grid, h0), certs)
        worst = min(worst, max(c.max_violation for c in certs))
        alpha *= 2
    raise BarrierSearchError(f"no certified {direction} barrier after {max_doublings} doublings;"
                             f" smallest max violation {worst:.3e}", worst)


def build_upper_barrier(f, rho0, rho1, M, tau, grid: AnnularGrid, h0: float = 0.5):
    """h = f + alpha (rho0 - rho), alpha > 0, with 2H[h] <= 2 h0 and h >= M on rho1."""
    return _build(f, rho0, rho1, M, tau, grid, "above", h0)


def build_lower_barrier(f, rho0, rho1, M, tau, grid: AnnularGrid, h0: float = 0.5):
    """k = f + alpha (rho0 - rho), alpha < 0, with 2H[k] >= 2 h0 and k <= M on rho1."""
    return _build(f, rho0, rho1, M, tau, grid, "below", h0)


def radial_barrier_curvature(alpha, rho):
    """Closed-form 2H of alpha (rho0 - rho) for tau = 0."""
    return -alpha / np.sqrt(1 + alpha**2) / np.tanh(rho)


def barrier_json(res: BarrierResult) -> dict:
    return {"alpha": res.alpha,
            "max_violation": max(c.max_violation for c in res.certificates),
            "pass": all(c.passed for c in res.certificates)}
