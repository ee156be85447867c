"""Boundary-lift families u_{t,n}, their t-derivative, and the half-space sweep.

Everything here is evidence gathered at finite resolution: limits in n and in
epsilon are replaced by fixed schedules with monotonicity and extrapolation
checks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import ModelParams
from .graph import GridSection, jacobi_residual, mean_curvature
from .solver import (RadiiSchedule, SolverConfig, SolverError, continuation_solve,
                     probe_max_lift, sample_section)

log = logging.getLogger(__name__)

SANDWICH_FACTOR = 10.0


@dataclass
class PairAudit:
    n: int
    t: float
    t_prime: float
    lower_violation: float   # max(u_t - u_t')
    upper_violation: float   # max(u_t' - u_t - (t' - t))
    passed: bool


@dataclass
class ContinuationFamily:
    sigma: Callable
    params: ModelParams
    schedule: RadiiSchedule
    lifts: tuple
    config: SolverConfig
    solutions: dict = field(default_factory=dict)   # (j, n) -> GridSection
    reports: dict = field(default_factory=dict)     # (j, n) -> list of SolveReport
    failures: dict = field(default_factory=dict)    # (j, n) -> message
    audits: list = field(default_factory=list)
    a1_gap: dict = field(default_factory=dict)      # (j, n) -> max |u - (sigma + t)| on A_1

    @property
    def n_values(self):
        return sorted({n for (_, n) in self.solutions})

    def a1_rows(self, n: int) -> int:
        """Number of rows of the A_n grid that lie in A_1."""
        return self.schedule.grid(n).row_of(self.schedule.radii[1]) + 1

    def solution(self, t: float, n: int) -> GridSection:
        for j, tj in enumerate(self.lifts):
            if tj == t and (j, n) in self.solutions:
                return self.solutions[(j, n)]
        u, reps = continuation_solve(self.sigma, t, n, self.schedule, self.params, self.config)
        return u

    @property
    def sandwich_ok(self) -> bool:
        return bool(self.audits) and all(a.passed for a in self.audits)


def sandwich_audit(u: GridSection, up: GridSection, t: float, tp: float, n: int,
                   tol: float) -> PairAudit:
    lo = float(np.max(u.values - up.values))
    hi = float(np.max(up.values - u.values - (tp - t)))
    return PairAudit(n, t, tp, lo, hi, lo <= tol and hi <= tol)


def build_foliation(sigma: Callable, delta: float, schedule: RadiiSchedule, t_count: int,
                    params: ModelParams, config: SolverConfig | None = None,
                    n_values=None) -> ContinuationFamily:
    """Solve u_{t,n} for t in linspace(0, delta, t_count) and every n, stepping
    t upward from the previous lift, then audit all ordered pairs."""
    if t_count < 3:
        raise ValueError("t_count must be >= 3")
    if not delta > 0:
        raise ValueError("delta must be positive")
    cfg = config or SolverConfig()
    lifts = tuple(float(x) for x in np.linspace(0.0, delta, t_count))
    fam = ContinuationFamily(sigma, params, schedule, lifts, cfg)
    tol = SANDWICH_FACTOR * cfg.newton_tol
    ns = list(n_values) if n_values is not None else list(range(1, schedule.n_max + 1))
    for n in ns:
        k1 = fam.a1_rows(n)
        prev, prev_t = None, 0.0
        for j, t in enumerate(lifts):
            try:
                u, reps = continuation_solve(sigma, t, n, schedule, params, cfg,
                                             start=prev, t_start=prev_t)
            except SolverError as e:
                fam.failures[(j, n)] = str(e)
                log.warning("u_{t=%g, n=%d} failed: %s", t, n, e)
                break
            fam.solutions[(j, n)] = u
            fam.reports[(j, n)] = reps
            base = sample_section(sigma, u.grid, params)
            fam.a1_gap[(j, n)] = float(np.max(np.abs(u.values[:k1] - base.values[:k1] - t)))
            prev, prev_t = u, t
        for j in range(len(lifts)):
            for k in range(j + 1, len(lifts)):
                if (j, n) in fam.solutions and (k, n) in fam.solutions:
                    fam.audits.append(sandwich_audit(fam.solutions[(j, n)],
                                                     fam.solutions[(k, n)],
                                                     lifts[j], lifts[k], n, tol))
    return fam


def default_delta(sigma: Callable, schedule: RadiiSchedule, params: ModelParams, t_cap: float,
                  config: SolverConfig | None = None) -> float:
    """Half the largest lift for which continuation converges on every A_n."""
    probes = [probe_max_lift(sigma, schedule, params, t_cap, config, n=n)
              for n in range(1, schedule.n_max + 1)]
    return 0.5 * min(probes)


# ---------------------------------------------------------------------------
# derivative in t


def truncation_estimate(sigma: Callable, grid, params: ModelParams) -> float:
    """max |2H_h[sigma] - 2 h0| at interior nodes for an exact solution sigma:
    the local truncation error of the scheme on this grid."""
    s = sample_section(sigma, grid, params)
    return float(np.max(np.abs(2 * mean_curvature(s)[1:-1] - 2 * params.h0)))


def richardson_first_order(values, eps):
    """Extrapolate a quantity behaving like a + b eps to eps -> 0 from the last two entries."""
    if len(values) < 2:
        return math.nan
    e0, e1 = eps[-2], eps[-1]
    q = e0 / e1
    return (q * values[-1] - values[-2]) / (q - 1)


@dataclass
class DerivativeField:
    t_bar: float
    n: int
    eps: tuple
    residuals: tuple            # max-norm of the linearized operator applied to v_eps
    deviations: tuple           # max |v_eps - 1| on A_1
    noise_floor: tuple          # solver-noise bound on each residual
    flagged: tuple              # True where the residual is inside the noise band
    bracket_violation: float    # max over eps of distance of v_eps outside [0, 1]
    inner_trace_exact: bool
    residual_limit: float
    deviation_limit: float
    truncation: float
    fields: dict = field(default_factory=dict, repr=False)

    def residual_series(self):
        return list(zip(self.eps, self.residuals))

    def residual_decreasing(self) -> bool:
        r = [x for x, f in zip(self.residuals, self.flagged) if not f]
        return len(r) >= 2 and all(b < a for a, b in zip(r, r[1:]))

    def limit_consistent(self, factor: float = 10.0) -> bool:
        return abs(self.residual_limit) <= factor * self.truncation


def numeric_derivative(family: ContinuationFamily, t_bar: float, eps_schedule, n: int | None = None,
                       keep_fields: bool = False) -> DerivativeField:
    """Difference quotients v_eps = (u_{t_bar + eps, n} - u_{t_bar, n}) / eps."""
    eps = tuple(float(e) for e in eps_schedule)
    if len(eps) < 2 or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps schedule must be positive and strictly decreasing")
    n = family.schedule.n_max if n is None else n
    cfg = family.config
    base = family.solution(t_bar, n)
    base_res = _residual_of(base)
    k1 = family.a1_rows(n)
    res, dev, floor, flag, fields = [], [], [], [], {}
    bracket = 0.0
    for e in eps:
        u, reps = continuation_solve(family.sigma, t_bar + e, n, family.schedule, family.params,
                                     cfg, start=base, t_start=t_bar)
        v = (u.values - base.values) / e
        # boundary rows are fixed by the Dirichlet data: exactly 1 inside, 0 outside
        v[0] = 1.0
        v[-1] = 0.0
        r = float(np.max(np.abs(jacobi_residual(base, v)[1:-1])))
        nf = (base_res + _residual_of(u)) / e
        res.append(r)
        floor.append(nf)
        flag.append(r <= 10 * nf)
        dev.append(float(np.max(np.abs(v[:k1] - 1))))
        bracket = max(bracket, float(np.max(-v)), float(np.max(v - 1)))
        if keep_fields:
            fields[e] = v
    good = [i for i, f in enumerate(flag) if not f]
    lim = richardson_first_order([res[i] for i in good], [eps[i] for i in good])
    dlim = richardson_first_order(dev, eps)
    trunc = truncation_estimate(family.sigma, base.grid, family.params)
    return DerivativeField(t_bar, n, eps, tuple(res), tuple(dev), tuple(floor), tuple(flag),
                           bracket, True, lim, dlim, trunc, fields)


def _residual_of(s: GridSection) -> float:
    return float(np.max(np.abs(2 * mean_curvature(s)[1:-1] - 2 * s.params.h0)))


def deviation_by_radius(family: ContinuationFamily, t_bar: float, eps: float):
    """[(n, max |v_eps - 1| on A_1)] over the schedule."""
    out = []
    for n in range(1, family.schedule.n_max + 1):
        d = numeric_derivative(family, t_bar, (2 * eps, eps), n=n)
        out.append((n, d.deviations[-1]))
    return out


# ---------------------------------------------------------------------------
# half-space sweep


@dataclass
class OrderingVerdict:
    n: int
    t: float
    below_sigma: float        # max(u_{delta,n} - delta - sigma), want <= tol
    sigma_below_comp: float   # max(sigma - competitor), want <= tol
    boundary_clearance: float  # min over boundary rows of competitor - (u_{delta,n} - t)
    final_order: float        # max(u_{delta,n} - t - competitor), want <= tol
    passed: bool


@dataclass
class HalfSpaceReport:
    description: str
    delta: float
    contact: bool
    contact_location: tuple | None
    non_cmc: bool
    competitor_residual: float
    well_oriented: bool
    verdicts: list
    gaps: list                # [(n, ||u_{delta,n} - (sigma + delta)||_{A_1})]
    gap_note: str = ("monotonicity of the gap in n is an observation on the full sequence, "
                     "not a theorem")

    @property
    def ordering_ok(self) -> bool:
        return bool(self.verdicts) and all(v.passed for v in self.verdicts)

    def gap_nonincreasing(self, slack: float = 0.0) -> bool:
        g = [x for _, x in self.gaps]
        return all(b <= a + slack for a, b in zip(g, g[1:]))

    def to_dict(self):
        return {"description": self.description, "delta": self.delta, "contact": self.contact,
                "contact_location": self.contact_location, "non_cmc": self.non_cmc,
                "competitor_residual": self.competitor_residual,
                "well_oriented": self.well_oriented,
                "ordering_ok": self.ordering_ok,
                "verdicts": [v.__dict__ for v in self.verdicts],
                "gaps": [list(g) for g in self.gaps], "gap_note": self.gap_note}


def _competitor_values(competitor, sigma, grid, params):
    if isinstance(competitor, (int, float)):
        return sample_section(sigma, grid, params).values + float(competitor)
    if isinstance(competitor, GridSection):
        if competitor.grid != grid:
            raise ValueError("competitor grid differs from the working grid")
        return competitor.values
    return sample_section(competitor, grid, params).values


def halfspace_experiment(sigma: Callable, competitor, delta: float, schedule: RadiiSchedule,
                         params: ModelParams, config: SolverConfig | None = None,
                         sweep_count: int = 5, well_oriented: bool = True,
                         description: str = "") -> HalfSpaceReport:
    """Check, on every A_n, that u_{delta,n} - delta <= sigma <= competitor, that the
    boundary of u_{delta,n} - t stays off the competitor for t in [0, delta], and
    hence u_{delta,n} <= competitor. The competitor is a lift t0 (translate
    sigma + t0), a callable, or a GridSection on the largest annulus."""
    cfg = config or SolverConfig()
    tol = SANDWICH_FACTOR * cfg.newton_tol
    big = schedule.grid(schedule.n_max)
    comp_big = GridSection(big, _competitor_values(competitor, sigma, big, params), params)
    sig_big = sample_section(sigma, big, params)
    diff = comp_big.values - sig_big.values
    idx = np.unravel_index(int(np.argmin(diff)), diff.shape)
    contact = bool(diff[idx] <= tol)
    loc = (float(big.rho[idx[0]]), float(big.theta[idx[1]])) if contact else None
    trunc = truncation_estimate(sigma, big, params)
    comp_res = _residual_of(comp_big)
    non_cmc = comp_res > max(10 * trunc, 1e-8)
    desc = description or (f"translate sigma + {competitor}" if isinstance(competitor, (int, float))
                           else "competitor section")
    rep = HalfSpaceReport(desc, delta, contact, loc, non_cmc, comp_res, well_oriented, [], [])
    if contact:
        # equality case: the surfaces touch, nothing left to sweep
        return rep
    sweep = np.linspace(0.0, delta, sweep_count)
    for n in range(1, schedule.n_max + 1):
        g = schedule.grid(n)
        u, _ = continuation_solve(sigma, delta, n, schedule, params, cfg)
        sig = sample_section(sigma, g, params).values
        comp = comp_big.values[:g.n_rho]
        k1 = g.row_of(schedule.radii[1]) + 1
        rep.gaps.append((n, float(np.max(np.abs(u.values[:k1] - sig[:k1] - delta)))))
        below_sigma = float(np.max(u.values - delta - sig))
        sig_comp = float(np.max(sig - comp))
        for t in sweep:
            lowered = u.values - t
            clear = float(min(np.min(comp[0] - lowered[0]), np.min(comp[-1] - lowered[-1])))
            final = float(np.max(lowered - comp))
            ok = below_sigma <= tol and sig_comp <= tol and clear > 0 and final <= tol
            rep.verdicts.append(OrderingVerdict(n, float(t), below_sigma, sig_comp, clear, final, ok))
    return rep


@dataclass
class GapReport:
    t0: float
    radii: list
    infima: list
    attained: bool
    min_gap: float


def exterior_uniqueness_evidence(u: GridSection, v: GridSection, t0: float,
                                 tol: float = 1e-8) -> GapReport:
    """inf over [r_0, r] of (v + t0 - u) as the outer radius r grows."""
    if u.grid != v.grid:
        raise ValueError("u and v must live on the same grid")
    if np.max(np.abs(u.inner - v.inner)) > tol:
        raise ValueError("u and v must agree on the inner boundary")
    d = v.values + t0 - u.values
    row_min = d.min(axis=1)
    inf = np.minimum.accumulate(row_min)
    return GapReport(t0, [float(r) for r in u.grid.rho], [float(x) for x in inf],
                     bool(inf[-1] <= tol), float(inf[-1]))
