"""Grid-refinement studies against the radial oracle and manufactured solutions."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from .geometry import ModelParams
from .graph import AnnularGrid, resample
from .solver import SolverConfig, newton_solve_dirichlet, radial_ode_oracle


@dataclass
class StudyRow:
    n_rho: int
    n_theta: int
    d_rho: float
    error: float
    order: float
    iterations: int
    final_residual: float


def manufactured_rhs(expr: sympy.Expr, rho: sympy.Symbol, th: sympy.Symbol, tau: float):
    """Exact Div(G sigma / W) for a symbolic sigma(rho, theta), as a numpy function."""
    tau = sympy.nsimplify(tau)
    gr = sympy.diff(expr, rho)
    gt = sympy.diff(expr, th) / sympy.sinh(rho) - 2 * tau * sympy.tanh(rho / 2)
    W = sympy.sqrt(1 + gr**2 + gt**2)
    div = (sympy.diff(sympy.sinh(rho) * gr / W, rho) + sympy.diff(gt / W, th)) / sympy.sinh(rho)
    return sympy.lambdify((rho, th), div, "numpy")


def default_manufactured(tau: float):
    """(sigma, rhs) pair used by the manufactured-solution study."""
    r, t = sympy.symbols("rho theta", real=True)
    expr = 2 * sympy.cosh(r / 2) + sympy.Rational(1, 5) * sympy.sin(r) * sympy.cos(t) \
        + sympy.Rational(1, 10) * r * sympy.sin(2 * t)
    return sympy.lambdify((r, t), expr, "numpy"), manufactured_rhs(expr, r, t, tau)


def observed_orders(errors, spacings):
    out = [math.nan]
    for (e0, h0), (e1, h1) in zip(zip(errors, spacings), zip(errors[1:], spacings[1:])):
        out.append(math.log(e0 / e1) / math.log(h0 / h1) if e0 > 0 and e1 > 0 else math.nan)
    return out


def convergence_study(params: ModelParams, exact: Callable, rho_range=(0.5, 2.0),
                      n_rho: int = 64, n_theta: int = 64, levels: int = 4,
                      rhs: Callable | None = None, config: SolverConfig | None = None,
                      warm_start: bool = True):
    """Solve on ``levels`` successively halved grids with Dirichlet data from
    ``exact`` and report L-infinity errors and observed orders.

    ``rhs(rho, theta)`` overrides the constant right-hand side 2 h0. Each level
    is warm-started from the interpolated previous solution.
    Returns (rows, wall_times)."""
    if levels < 3:
        raise ValueError("a convergence study needs at least 3 refinement levels")
    grid = AnnularGrid(rho_range[0], rho_range[1], n_rho, n_theta)
    rows, errors, spacings, times = [], [], [], []
    prev = None
    for _ in range(levels):
        t0 = time.perf_counter()
        R, T = grid.mesh()
        ex = np.broadcast_to(exact(R, T), grid.shape)
        f = None if rhs is None else np.broadcast_to(rhs(R, T), grid.shape)
        init = resample(prev, grid).values if (warm_start and prev is not None) else None
        sol, rep = newton_solve_dirichlet(grid, ex[0], ex[-1], params, config,
                                          initial=init, rhs=f)
        errors.append(float(np.max(np.abs(sol.values - ex))))
        spacings.append(grid.d_rho)
        rows.append(StudyRow(grid.n_rho, grid.n_theta, grid.d_rho, errors[-1], math.nan,
                             rep.iterations, rep.final_residual))
        times.append(time.perf_counter() - t0)
        prev = sol
        grid = grid.refine(2)
    for row, o in zip(rows, observed_orders(errors, spacings)):
        row.order = o
    return rows, times


def radial_study(params: ModelParams, **kw):
    prof = radial_ode_oracle(params, (0.0, kw.get("rho_range", (0.5, 2.0))[1] + 0.1))
    return convergence_study(params, lambda R, T: prof(R) + 0 * T, **kw)
