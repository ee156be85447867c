"""Damped Newton solver for Div(G sigma / W) = 2 H0 on annuli, boundary-lift
continuation, and the radial first-integral oracle."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad

from .geometry import ModelParams
from .graph import (AnnularGrid, GridSection, assemble_stiffness, corner_P,
                    corner_chi, gradient_field_polar, mean_curvature, twist)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton failed; the partial report is attached."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class EllipticityError(SolverError):
    pass


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    min_damping: float = 1 / 64
    continuation_steps: int = 4
    max_bisections: int = 6
    fd_epsilon: float = 1e-6
    linear_rtol: float = 1e-12
    min_ellipticity: float = 1e-12

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.min_damping > 0 and self.fd_epsilon > 0):
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1 or self.continuation_steps < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    final_residual: float = float("inf")
    residual_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    ellipticity_floor: float = float("nan")
    min_W: float = float("nan")
    max_W: float = float("nan")
    max_abs_u: float = float("nan")
    max_grad: float = float("nan")
    max_linear_residual: float = 0.0
    wall_time: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


@dataclass
class LinearizedOperator:
    """Discrete Div(P grad v) with P(X) = (X - chi (X, chi)) / W.

    ``stiffness`` is symmetric and satisfies (K v)_i = -Div(P grad v)_i * area_i
    at interior nodes."""
    grid: AnnularGrid
    stiffness: sp.csr_matrix
    area: np.ndarray
    coeff: dict
    ellipticity_floor: float

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = -(self.stiffness @ np.ravel(v)).reshape(self.grid.shape) / self.area[:, None]
        out[0] = out[-1] = np.nan
        return out

    def interior_system(self):
        m = self.grid.n_theta
        return self.stiffness[m:-m, m:-m]

    def symmetry_error(self) -> float:
        K = self.interior_system()
        d = abs(K - K.T)
        return float(d.max() / abs(K).max()) if d.nnz else 0.0


def assemble_linearization(s: GridSection) -> LinearizedOperator:
    coeff = corner_P(s)
    floor = min(float(np.min(1.0 / W**3)) for (_, _, W) in corner_chi(s).values())
    if not floor > 0:
        raise EllipticityError(f"ellipticity floor {floor} <= 0: graph degenerating")
    K = assemble_stiffness(s.grid, coeff)
    return LinearizedOperator(s.grid, K, s.grid.node_area, coeff, floor)


def ellipticity_certificate(s: GridSection) -> float:
    """min over nodes of (1 - |chi|^2) / W."""
    gf = gradient_field_polar(s)
    return float(np.min((1 - gf.chi_rho**2 - gf.chi_theta**2) / gf.W))


def _residual(s: GridSection, rhs) -> np.ndarray:
    return (2 * mean_curvature(s) - rhs)[1:-1]


def _linear_solve(K: sp.spmatrix, b: np.ndarray):
    lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
    x = lu.solve(b)
    r = K @ x - b
    rel = np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300)
    if rel > 1e-13:
        x += lu.solve(-r)
        rel = np.linalg.norm(K @ x - b) / max(np.linalg.norm(b), 1e-300)
    return x, float(rel)


def newton_solve_dirichlet(grid: AnnularGrid, inner, outer, params: ModelParams,
                           config: SolverConfig | None = None,
                           initial: GridSection | np.ndarray | None = None,
                           h0: float | None = None, rhs=None):
    """Solve Div(G sigma / W) = rhs (default 2 h0) with sigma = inner on rho_min
    and sigma = outer on rho_max.

    Returns (GridSection, SolveReport). Raises SolverError on non-convergence.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    h0 = params.h0 if h0 is None else h0
    if rhs is None:
        rhs = 2 * h0
    else:
        rhs = np.asarray(rhs, float)
        if rhs.shape != grid.shape:
            raise ValueError(f"rhs shape {rhs.shape} != grid shape {grid.shape}")
    n, m = grid.shape
    inner = np.broadcast_to(np.asarray(inner, float), (m,))
    outer = np.broadcast_to(np.asarray(outer, float), (m,))
    if not (np.all(np.isfinite(inner)) and np.all(np.isfinite(outer))):
        raise ValueError("boundary traces must be finite")
    if initial is None:
        lam = ((grid.rho - grid.rho_min) / (grid.rho_max - grid.rho_min))[:, None]
        u = (1 - lam) * inner[None, :] + lam * outer[None, :]
    else:
        u = np.array(initial.values if isinstance(initial, GridSection) else initial, float)
    u[0] = inner
    u[-1] = outer
    s = GridSection(grid, u, params)
    rep = SolveReport()

    def finish(converged):
        gf = gradient_field_polar(s)
        rep.converged = converged
        rep.ellipticity_floor = ellipticity_certificate(s)
        rep.min_W = float(gf.W.min())
        rep.max_W = float(gf.W.max())
        rep.max_abs_u = float(np.abs(s.values).max())
        rep.max_grad = float(np.sqrt(gf.W.max() ** 2 - 1))
        rep.wall_time = time.perf_counter() - t0

    R = _residual(s, rhs)
    r = float(np.max(np.abs(R)))
    rep.residual_history.append(r)
    for it in range(cfg.max_newton):
        if r <= cfg.newton_tol:
            break
        try:
            lin = assemble_linearization(s)
        except EllipticityError as e:
            finish(False)
            e.report = rep
            raise
        if lin.ellipticity_floor < cfg.min_ellipticity:
            finish(False)
            raise EllipticityError(f"ellipticity floor {lin.ellipticity_floor:.3e} "
                                   "below threshold", rep)
        b = (grid.node_area[1:-1, None] * R).ravel()
        delta, rel = _linear_solve(lin.interior_system(), b)
        rep.max_linear_residual = max(rep.max_linear_residual, rel)
        delta = delta.reshape(n - 2, m)
        step = 1.0
        while True:
            trial = s.values.copy()
            trial[1:-1] += step * delta
            if np.all(np.isfinite(trial)):
                ts = GridSection(grid, trial, params)
                Rt = _residual(ts, rhs)
                rt = float(np.max(np.abs(Rt)))
                if rt < r or step <= cfg.min_damping:
                    break
            elif step <= cfg.min_damping:
                finish(False)
                raise SolverError("Newton step produced non-finite values", rep)
            step /= 2
        s, R, r = ts, Rt, rt
        rep.iterations = it + 1
        rep.step_history.append(step)
        rep.residual_history.append(r)
        log.debug("newton it=%d step=%g residual=%.3e", it + 1, step, r)
    rep.final_residual = r
    if r > cfg.newton_tol:
        finish(False)
        raise SolverError(f"Newton did not converge: residual {r:.3e} after "
                          f"{rep.iterations} iterations; history {rep.residual_history}", rep)
    finish(True)
    return s, rep


# ---------------------------------------------------------------------------
# radial oracle


@dataclass
class RadialProfile:
    """Rotationally symmetric solution from the first integral
    sinh(rho) u' / W = 2 H0 (cosh rho - 1) + c, W^2 = 1 + u'^2 + 4 tau^2 tanh^2(rho/2)."""
    params: ModelParams
    c: float
    anchor: float
    u0: float
    rho_range: tuple

    def slope_ratio(self, rho):
        rho = np.asarray(rho, float)
        return (2 * self.params.h0 * (np.cosh(rho) - 1) + self.c) / np.sinh(rho)

    def du(self, rho):
        rho = np.asarray(rho, float)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = self.slope_ratio(rho)
        q = np.where(rho == 0, 0.0, q)
        z = twist(self.params.tau, rho)
        return q * np.sqrt(1 + z**2) / np.sqrt(1 - q**2)

    def u(self, rho):
        rho = np.asarray(rho, float)
        flat = np.ravel(rho)
        order = np.argsort(flat)
        out = np.empty_like(flat)
        acc, prev = self.u0, self.anchor
        # integrate outward from the anchor in sorted order
        for idx, r in zip(order, flat[order]):
            if r != prev:
                acc += quad(lambda x: float(self.du(x)), prev, r, epsabs=1e-14, epsrel=1e-13,
                            limit=200)[0]
                prev = r
            out[idx] = acc
        return out.reshape(rho.shape)

    def __call__(self, rho, theta=None):
        vals = self.u(rho)
        if theta is not None:
            vals = np.broadcast_to(vals, np.broadcast(np.asarray(rho), np.asarray(theta)).shape)
        return vals


def radial_ode_oracle(params: ModelParams, rho_range=(0.0, 3.0), regular_at_zero: bool = True,
                      c: float = 0.0, u0: float | None = None) -> RadialProfile:
    """Radial CMC profile. Regular profiles are anchored at rho = 0 with u(0) = u0
    (default 2, so that tau = 0, H0 = 1/2 gives 2 cosh(rho/2)); otherwise the anchor
    is rho_range[0] with u = u0 (default 0)."""
    lo, hi = rho_range
    if regular_at_zero and c != 0:
        raise ValueError("a profile regular at the origin needs c = 0")
    if not regular_at_zero and lo <= 0:
        raise ValueError("non-regular profiles need rho_range[0] > 0")
    anchor = 0.0 if regular_at_zero else lo
    if u0 is None:
        u0 = 2.0 if regular_at_zero else 0.0
    prof = RadialProfile(params, float(c), anchor, float(u0), (lo, hi))
    probe = np.linspace(max(lo, 1e-9), hi, 4001)
    if np.any(np.abs(prof.slope_ratio(probe)) >= 1):
        raise ValueError("|u'/W| reaches 1 on the range: no graph solution for this c")
    return prof


# ---------------------------------------------------------------------------
# continuation in the boundary lift


@dataclass(frozen=True)
class RadiiSchedule:
    """Nested annuli A_n = [radii[0], radii[n]] on a common lattice."""
    radii: tuple
    d_rho: float
    n_theta: int

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii)
        if len(r) < 2 or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("radii must be increasing with at least two entries")
        object.__setattr__(self, "radii", r)
        for x in r[1:]:
            AnnularGrid.from_spacing(r[0], x, self.d_rho, self.n_theta)

    @property
    def n_max(self) -> int:
        return len(self.radii) - 1

    def grid(self, n: int) -> AnnularGrid:
        if not 1 <= n <= self.n_max:
            raise ValueError(f"outer index n={n} outside 1..{self.n_max}")
        return AnnularGrid.from_spacing(self.radii[0], self.radii[n], self.d_rho, self.n_theta)


def sample_section(sigma: Callable, grid: AnnularGrid, params: ModelParams) -> GridSection:
    return GridSection.from_function(grid, sigma, params)


def continuation_solve(sigma: Callable, t: float, n: int, schedule: RadiiSchedule,
                       params: ModelParams, config: SolverConfig | None = None,
                       start: GridSection | None = None, t_start: float = 0.0):
    """u_{t,n}: sigma + t on the inner circle, sigma on the outer circle of A_n.

    The lift is stepped from t_start (solution ``start``, default sigma itself) in
    ``continuation_steps`` increments, each warm-started from the previous
    solution; a failed step is halved up to ``max_bisections`` times.
    Returns (GridSection, list of SolveReport)."""
    cfg = config or SolverConfig()
    grid = schedule.grid(n)
    base = sample_section(sigma, grid, params)
    if start is None and t_start != 0:
        raise ValueError("need a start section when t_start != 0")
    cur, cur_t = (start if start is not None else base), t_start
    ramp = (1 - (grid.rho - grid.rho_min) / (grid.rho_max - grid.rho_min))[:, None]
    dt = (t - t_start) / cfg.continuation_steps
    reports = []
    bisections = 0
    while True:
        nxt = t if abs(t - cur_t) <= abs(dt) * (1 + 1e-12) else cur_t + dt
        guess = cur.values + (nxt - cur_t) * ramp
        try:
            sol, rep = newton_solve_dirichlet(grid, base.inner + nxt, base.outer, params, cfg,
                                              initial=guess)
        except SolverError as e:
            bisections += 1
            if bisections > cfg.max_bisections:
                raise SolverError(f"continuation bisection exhausted at t={cur_t}",
                                  e.report) from e
            dt /= 2
            continue
        reports.append(rep)
        cur, cur_t = sol, nxt
        if cur_t == t:
            return cur, reports


def probe_max_lift(sigma: Callable, schedule: RadiiSchedule, params: ModelParams,
                   t_cap: float, config: SolverConfig | None = None, n: int = 1,
                   bisections: int = 8) -> float:
    """Largest lift in [0, t_cap] (bisection) for which continuation converges on A_n."""
    cfg = config or SolverConfig()

    def ok(t):
        try:
            continuation_solve(sigma, t, n, schedule, params, cfg)
            return True
        except SolverError:
            return False

    if ok(t_cap):
        return t_cap
    lo, hi = 0.0, t_cap
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
