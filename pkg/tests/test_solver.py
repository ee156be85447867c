import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmclab.geometry import ModelParams
from cmclab.graph import AnnularGrid, GridSection, assemble_stiffness, mean_curvature
from cmclab.solver import (RadiiSchedule, SolverConfig, SolverError, assemble_linearization,
                           continuation_solve, ellipticity_certificate, newton_solve_dirichlet,
                           probe_max_lift, radial_ode_oracle, sample_section)

GRID = AnnularGrid(0.5, 2.0, 31, 32)


def radial_bc(params, grid):
    prof = radial_ode_oracle(params, (0.0, grid.rho_max + 0.1))
    exact = prof(grid.rho)
    return prof, exact, np.full(grid.n_theta, exact[0]), np.full(grid.n_theta, exact[-1])


# --- radial oracle


def test_radial_oracle_tau_zero_closed_form():
    prof = radial_ode_oracle(ModelParams(-1.0, 0.0), (0.0, 3.0))
    assert float(prof.du(1.0)) == pytest.approx(0.5210953054937474, abs=1e-12)
    assert math.sinh(0.5) == pytest.approx(0.5210953, abs=1e-7)
    rho = np.linspace(0.0, 3.0, 13)
    assert np.allclose(prof.du(rho), np.sinh(rho / 2), atol=1e-14)
    assert np.allclose(prof(rho), 2 * np.cosh(rho / 2), atol=1e-12)


def test_radial_oracle_minimal_is_constant():
    prof = radial_ode_oracle(ModelParams(-1.0, 0.4, 0.0), (0.0, 3.0))
    rho = np.linspace(0.0, 3.0, 7)
    assert np.all(prof.du(rho) == 0)
    assert np.all(prof(rho) == 2.0)


def test_radial_oracle_twisted_slope():
    tau = 0.3
    prof = radial_ode_oracle(ModelParams(-1.0, tau), (0.0, 3.0))
    rho = np.linspace(0.1, 3.0, 30)
    t = np.tanh(rho / 2)
    expected = t * np.sqrt(1 + 4 * tau**2 * t**2) * np.cosh(rho / 2)
    assert np.allclose(prof.du(rho), expected, rtol=1e-13)


def test_radial_oracle_first_integral():
    params = ModelParams(-1.0, 0.3)
    prof = radial_ode_oracle(params, (0.6, 2.5), regular_at_zero=False, c=-0.2)
    rho = np.linspace(0.6, 2.5, 20)
    du = prof.du(rho)
    W = np.sqrt(1 + du**2 + 4 * 0.09 * np.tanh(rho / 2) ** 2)
    assert np.allclose(np.sinh(rho) * du / W, np.cosh(rho) - 1 - 0.2, atol=1e-13)


def test_radial_oracle_errors():
    with pytest.raises(ValueError):
        radial_ode_oracle(ModelParams(), (0.0, 2.0), c=0.1)
    with pytest.raises(ValueError):
        radial_ode_oracle(ModelParams(), (0.0, 2.0), regular_at_zero=False)
    with pytest.raises(ValueError):
        # slope ratio reaches 1 near the inner radius
        radial_ode_oracle(ModelParams(), (0.1, 2.0), regular_at_zero=False, c=0.5)


# --- configuration


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(newton_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_newton=0)


# --- linearization


def test_linearization_structure():
    s = GridSection.from_function(GRID, lambda R, T: 2 * np.cosh(R / 2) + 0.1 * np.cos(T),
                                  ModelParams(-1.0, 0.3))
    op = assemble_linearization(s)
    assert op.symmetry_error() < 1e-12
    assert np.nanmax(np.abs(op.apply(np.ones(GRID.shape)))) < 1e-12
    rng = np.random.default_rng(0)
    v = rng.normal(size=GRID.shape)
    eps = 1e-6
    fd = 2 * (mean_curvature(GridSection(GRID, s.values + eps * v, s.params))
              - mean_curvature(GridSection(GRID, s.values - eps * v, s.params))) / (2 * eps)
    assert np.nanmax(np.abs(fd - op.apply(v))) < 1e-5 * np.nanmax(np.abs(fd))


def test_flat_linearization_is_laplacian():
    s = GridSection(GRID, np.full(GRID.shape, 0.7), ModelParams(-1.0, 0.0))
    op = assemble_linearization(s)
    ident = {k: (np.ones((GRID.n_rho - 1, GRID.n_theta)), np.zeros((GRID.n_rho - 1, GRID.n_theta)),
                 np.ones((GRID.n_rho - 1, GRID.n_theta))) for k in op.coeff}
    assert abs(op.stiffness - assemble_stiffness(GRID, ident)).max() < 1e-14
    assert op.ellipticity_floor == 1.0


def test_ellipticity_certificate_examples():
    assert ellipticity_certificate(GridSection(GRID, np.zeros(GRID.shape), ModelParams())) == 1.0
    # |G sigma| = 1 at every node: sigma = rho, tau = 0
    s = GridSection.from_function(GRID, lambda R, T: R + 0 * T, ModelParams())
    assert ellipticity_certificate(s) == pytest.approx(0.5 / math.sqrt(2), rel=1e-12)


def test_ellipticity_bounds_rayleigh_quotients():
    s = GridSection.from_function(GRID, lambda R, T: np.sinh(R) * np.cos(T), ModelParams(-1.0, 0.3))
    op = assemble_linearization(s)
    ident = {k: tuple(np.ones_like(c[0]) if i != 1 else np.zeros_like(c[0]) for i in range(3))
             for k, c in op.coeff.items()}
    K0 = assemble_stiffness(GRID, ident)
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.normal(size=GRID.n_rho * GRID.n_theta)
        assert v @ (op.stiffness @ v) >= op.ellipticity_floor * (v @ (K0 @ v)) * (1 - 1e-12)
    assert ellipticity_certificate(s) > 0


# --- Newton


@pytest.mark.parametrize("tau", [0.0, 0.3])
def test_newton_recovers_radial_solution(tau):
    params = ModelParams(-1.0, tau)
    errs = []
    for grid in (AnnularGrid(0.5, 2.0, 31, 32), AnnularGrid(0.5, 2.0, 61, 64)):
        _, exact, inner, outer = radial_bc(params, grid)
        s, rep = newton_solve_dirichlet(grid, inner, outer, params)
        assert rep.converged and rep.final_residual <= 1e-10
        assert rep.ellipticity_floor > 0
        assert np.all(s.inner == inner) and np.all(s.outer == outer)
        errs.append(np.abs(s.values - exact[:, None]).max())
    assert errs[0] < 5e-3
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_newton_minimal_constant_in_one_step():
    params = ModelParams(-1.0, 0.0, 0.0)
    c = np.full(GRID.n_theta, 1.25)
    s, rep = newton_solve_dirichlet(GRID, c, c, params)
    assert rep.iterations <= 1
    assert np.all(s.values == 1.25)


def test_newton_quadratic_tail():
    params = ModelParams(-1.0, 0.3)
    _, _, inner, outer = radial_bc(params, GRID)
    _, rep = newton_solve_dirichlet(GRID, inner + 0.2 * np.cos(GRID.theta), outer, params)
    r = rep.residual_history
    tail = [(b / a**2) for a, b in zip(r, r[1:]) if a < 1e-2 and b > 1e-10]
    assert tail and max(tail) < 50


def test_newton_failure_carries_report():
    params = ModelParams(-1.0, 0.3)
    _, _, inner, outer = radial_bc(params, GRID)
    with pytest.raises(SolverError) as info:
        newton_solve_dirichlet(GRID, inner, outer, params, SolverConfig(max_newton=1))
    assert info.value.report is not None and not info.value.report.converged


def test_report_serialization_omits_timing():
    params = ModelParams(-1.0, 0.0)
    _, _, inner, outer = radial_bc(params, GRID)
    _, rep = newton_solve_dirichlet(GRID, inner, outer, params)
    assert "wall_time" not in rep.to_dict() and "wall_time" in rep.to_dict(timing=True)


def test_rhs_shape_checked():
    params = ModelParams(-1.0, 0.0)
    _, _, inner, outer = radial_bc(params, GRID)
    with pytest.raises(ValueError):
        newton_solve_dirichlet(GRID, inner, outer, params, rhs=np.ones((3, 3)))


@settings(max_examples=8, deadline=None)
@given(c=st.floats(-5, 5), tau=st.sampled_from([0.0, 0.3]))
def test_translation_equivariance(c, tau):
    params = ModelParams(-1.0, tau)
    _, _, inner, outer = radial_bc(params, GRID)
    bump = 0.1 * np.cos(GRID.theta)
    cfg = SolverConfig()
    u, _ = newton_solve_dirichlet(GRID, inner + bump, outer, params, cfg)
    v, _ = newton_solve_dirichlet(GRID, inner + bump + c, outer + c, params, cfg)
    assert np.abs(v.values - (u.values + c)).max() <= 10 * cfg.newton_tol


@settings(max_examples=6, deadline=None)
@given(a=st.floats(0.0, 0.3), b=st.floats(0.0, 0.3), k=st.integers(1, 3))
def test_comparison_principle(a, b, k):
    params = ModelParams(-1.0, 0.3)
    _, _, inner, outer = radial_bc(params, GRID)
    cfg = SolverConfig()
    wave = np.cos(k * GRID.theta)
    u1, _ = newton_solve_dirichlet(GRID, inner + 0.1 * wave, outer, params, cfg)
    # larger boundary data on both circles
    u2, _ = newton_solve_dirichlet(GRID, inner + 0.1 * wave + a, outer + b, params, cfg)
    assert np.all(u1.values <= u2.values + 10 * cfg.newton_tol)


def test_rotational_symmetry_preserved():
    params = ModelParams(-1.0, 0.3)
    _, _, inner, outer = radial_bc(params, GRID)
    u, _ = newton_solve_dirichlet(GRID, inner, outer, params)
    assert np.abs(u.values - u.values[:, :1]).max() < 1e-11


# --- continuation


def _sigma():
    params = ModelParams(-1.0, 0.3)
    prof = radial_ode_oracle(params, (0.0, 3.0))
    return params, (lambda R, T: prof(R) + 0 * T)


SCHEDULE = RadiiSchedule((0.5, 1.0, 1.5), 0.05, 16)


def test_schedule_validation():
    with pytest.raises(ValueError):
        RadiiSchedule((1.0, 0.5), 0.05, 16)
    with pytest.raises(ValueError):
        RadiiSchedule((0.5, 1.03), 0.05, 16)
    assert SCHEDULE.n_max == 2
    with pytest.raises(ValueError):
        SCHEDULE.grid(3)


def test_continuation_zero_lift_is_sigma():
    cfg = SolverConfig()
    # a discrete solution is reproduced to solver tolerance
    flat = ModelParams(-1.0, 0.3, 0.0)
    u, _ = continuation_solve(lambda R, T: 0 * R + 1.5, 0.0, 2, SCHEDULE, flat, cfg)
    assert np.abs(u.values - 1.5).max() <= 10 * cfg.newton_tol
    # a sampled continuum solution is reproduced to truncation error
    params, sigma = _sigma()
    u, _ = continuation_solve(sigma, 0.0, 2, SCHEDULE, params, cfg)
    base = sample_section(sigma, SCHEDULE.grid(2), params)
    assert np.abs(u.values - base.values).max() < 1e-4


def test_continuation_lift_ordering():
    params, sigma = _sigma()
    cfg = SolverConfig()
    base = sample_section(sigma, SCHEDULE.grid(2), params)
    u1, _ = continuation_solve(sigma, 0.05, 2, SCHEDULE, params, cfg)
    u2, reps = continuation_solve(sigma, 0.1, 2, SCHEDULE, params, cfg)
    assert len(reps) == cfg.continuation_steps
    assert np.all(u1.inner == base.inner + 0.05) and np.all(u1.outer == base.outer)
    assert np.abs(u2.values - u1.values).max() <= 0.05 + 10 * cfg.newton_tol
    assert np.all(u1.values <= u2.values + 10 * cfg.newton_tol)
    assert np.all(base.values <= u1.values + 10 * cfg.newton_tol)


def test_continuation_requires_start_for_nonzero_origin():
    params, sigma = _sigma()
    with pytest.raises(ValueError):
        continuation_solve(sigma, 0.1, 1, SCHEDULE, params, t_start=0.05)


def test_probe_returns_cap_when_solvable():
    params, sigma = _sigma()
    assert probe_max_lift(sigma, SCHEDULE, params, 0.2) == 0.2
