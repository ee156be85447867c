"""Numerical audits of the gradient estimates for CMC graphs.

The analytic constants in those estimates are existence-only. Here they are
replaced by measured quantities on the working grid, and each audit checks the
logical step that matters: the sign of L applied to the auxiliary function on
the region where nu is small, and where the discrete maximum lands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (ModelPoint, PolarPoint, TangentVector, grad_z, hyperbolic_distance,
                       metric_eval, polar_to_cartesian)
from .graph import GridSection, gradient_field_polar, laplace_beltrami, nodal_gradient
from .sister import extract_surface_data, jacobi_potential, sister, unit_normal_model


@dataclass
class EstimateReport:
    name: str
    certified: bool
    params: dict
    measured: float
    bound: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "certified": self.certified, "params": self.params,
                "measured": self.measured, "bound": self.bound, "details": self.details}


# ---------------------------------------------------------------------------
# surface calculus in the graph chart


def surface_inner(s: GridSection, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(grad_Sigma a, grad_Sigma b) for functions pulled back by the chart."""
    gf = gradient_field_polar(s)
    ar, at = nodal_gradient(s.grid, a)
    br, bt = nodal_gradient(s.grid, b)
    # g^{-1} = I - chi chi^T in the unit polar frame
    ca = gf.chi_rho * ar + gf.chi_theta * at
    cb = gf.chi_rho * br + gf.chi_theta * bt
    return ar * br + at * bt - ca * cb


def operator_L(s: GridSection, u: np.ndarray) -> np.ndarray:
    """L u = Delta_Sigma u - 2 nu (grad_Sigma (1/nu), grad_Sigma u)."""
    gf = gradient_field_polar(s)
    return laplace_beltrami(s, u) - 2 * gf.nu * surface_inner(s, gf.W, u)


def ricci_normal(nu, tau: float):
    return -(1 + 2 * tau**2) + np.asarray(nu) ** 2 * (1 + 4 * tau**2)


def jacobi_check_nu(s: GridSection, via_sister: bool = False, margin: int = 2) -> np.ndarray:
    """Delta_Sigma nu + (Ric(N, N) + ||S||^2) nu; with via_sister the potential of the
    sister data is used instead. NaN within ``margin`` rows of the boundary."""
    data = extract_surface_data(s)
    nu = data.nu
    lb = laplace_beltrami(s, nu)
    if via_sister:
        sis = sister(data)
        pot = jacobi_potential(sis, sis.tau_prime, is_sister=True)
    else:
        pot = jacobi_potential(data, s.params.tau)
    res = lb + pot * nu
    if margin:
        res[:margin] = np.nan
        res[-margin:] = np.nan
    return res


# ---------------------------------------------------------------------------
# boundary gradient estimate


def _interior_mask(s: GridSection) -> np.ndarray:
    m = np.zeros(s.grid.shape, bool)
    m[1:-1] = True
    return m


def boundary_gradient_audit(s: GridSection, alphas=(0.25, 0.5, 1.0, 2.0, 4.0, 8.0),
                            nu0s=None) -> EstimateReport:
    """Sweep (alpha, nu0). A pair is certified when L(eta/nu) >= 0 wherever
    nu <= nu0 in the interior and the discrete max of eta/nu sits on the boundary
    or in {nu >= nu0}; it then implies
        sup W <= max(sup_bdry eta/nu, sup eta / nu0) / inf eta."""
    gf = gradient_field_polar(s)
    nu = gf.nu
    h = s.values
    inner = _interior_mask(s)
    if nu0s is None:
        nu0s = np.unique(np.round(np.linspace(nu.min(), 1.0, 9), 12))
    measured = float(gf.W.max())
    pairs, best = [], None
    for a in alphas:
        # scaling eta by a constant changes neither the sign of L nor the argmax
        eta = np.exp(a * (h - h.max()))
        u = eta / nu
        Lu = operator_L(s, u)
        imax = np.unravel_index(int(np.argmax(u)), u.shape)
        on_bdry = imax[0] in (0, s.grid.n_rho - 1)
        for nu0 in nu0s:
            small = inner & (nu <= nu0)
            sign_ok = bool(np.all(Lu[small] >= 0)) if small.any() else True
            loc_ok = on_bdry or nu[imax] >= nu0
            bdry = np.concatenate([u[0], u[-1]])
            bound = float(max(bdry.max(), eta.max() / nu0) / eta.min())
            ok = sign_ok and loc_ok
            rec = {"alpha": float(a), "nu0": float(nu0), "sign_ok": sign_ok,
                   "max_on_boundary_or_regular": bool(loc_ok), "bound": bound,
                   "small_nu_nodes": int(small.sum()),
                   "min_L_on_region": float(Lu[small].min()) if small.any() else None}
            pairs.append(rec)
            if ok and (best is None or bound < best["bound"]):
                best = rec
    certified = best is not None
    return EstimateReport("boundary_gradient", certified,
                          {"alpha": best["alpha"], "nu0": best["nu0"]} if certified else {},
                          measured, best["bound"] if certified else math.inf,
                          {"sweep": pairs})


# ---------------------------------------------------------------------------
# interior gradient estimate


def interior_bound(K, nu1):
    """(1/nu1) (e^{3K/4} - 1) / (e^{K/4} - 1) = (e^{K/2} + e^{K/4} + 1) / nu1."""
    K = np.asarray(K, float)
    return (np.exp(K / 2) + np.exp(K / 4) + 1) / nu1


def _center_node(s: GridSection, center):
    rho_c, th_c = center
    i = int(np.argmin(np.abs(s.grid.rho - rho_c)))
    dth = np.angle(np.exp(1j * (s.grid.theta - th_c)))
    j = int(np.argmin(np.abs(dth)))
    return i, j


def distance_from(s: GridSection, i: int, j: int) -> np.ndarray:
    x, y = s.grid.cartesian()
    xp, yp = polar_to_cartesian(PolarPoint(s.grid.rho[i], s.grid.theta[j]))
    return hyperbolic_distance(x, y, xp, yp)


def cutoff(h: np.ndarray, d: np.ndarray, h0: float, R: float) -> np.ndarray:
    """phi = max(0, -h / (2 h0) + 3/4 - (d / R)^2)."""
    return np.maximum(0.0, -h / (2 * h0) + 0.75 - (d / R) ** 2)


def interior_gradient_audit(s: GridSection, center, R: float,
                            Ks=(0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
                            nu1s=None) -> EstimateReport:
    """Sweep (K, nu1) for u = (e^{K phi} - 1)/nu. A pair is certified when L u > 0
    on the open support of phi where nu <= nu1 and the discrete max of u sits in
    {nu >= nu1}; it implies W(center) <= interior_bound(K, nu1).
    ``center`` is (rho, theta), snapped to the nearest node."""
    i, j = _center_node(s, center)
    h = s.values
    gf = gradient_field_polar(s)
    nu = gf.nu
    d = distance_from(s, i, j)
    h0 = float(h[i, j])
    if h0 <= 0:
        raise ValueError("interior audit needs a positive graph at the center")
    phi = cutoff(h, d, h0, R)
    supp = phi > 0
    if supp[0].any() or supp[-1].any():
        raise ValueError("the support of the cutoff reaches the radial boundary")
    if np.any(h[supp] < 0):
        raise ValueError("the graph must be positive on the support of the cutoff")
    # nodes whose stencil lies inside the support, where u is smooth
    core = supp.copy()
    core[1:] &= supp[:-1]
    core[:-1] &= supp[1:]
    core &= np.roll(supp, 1, axis=1) & np.roll(supp, -1, axis=1)
    if nu1s is None:
        nu1s = np.unique(np.round(np.linspace(nu[supp].min(), 1.0, 9), 12))
    measured = float(gf.W[i, j])
    pairs, best = [], None
    for K in Ks:
        u = np.expm1(K * phi) / nu
        Lu = operator_L(s, u)
        imax = np.unravel_index(int(np.argmax(u)), u.shape)
        for nu1 in nu1s:
            small = core & (nu <= nu1)
            sign_ok = bool(np.all(Lu[small] > 0)) if small.any() else True
            loc_ok = bool(nu[imax] >= nu1)
            bound = float(interior_bound(K, nu1))
            ok = sign_ok and loc_ok
            rec = {"K": float(K), "nu1": float(nu1), "sign_ok": sign_ok, "max_regular": loc_ok,
                   "bound": bound, "small_nu_nodes": int(small.sum())}
            pairs.append(rec)
            if ok and (best is None or bound < best["bound"]):
                best = rec
    certified = best is not None
    return EstimateReport("interior_gradient", certified,
                          {"K": best["K"], "nu1": best["nu1"], "R": R,
                           "center": [float(s.grid.rho[i]), float(s.grid.theta[j])]}
                          if certified else {"R": R},
                          measured, best["bound"] if certified else math.inf,
                          {"sweep": pairs, "phi_center": float(phi[i, j]), "h0": h0})


# ---------------------------------------------------------------------------
# height and distance estimates


def height_gradient_estimates(s: GridSection, center=None) -> EstimateReport:
    """Audit ||zeta^T||^2 = ||zeta||^2 - (zeta, N)^2 nodewise against the chart
    value ||grad_Sigma h||^2, and ||grad_Sigma d^2|| <= 2 d."""
    params = s.params
    tau = params.tau
    gf = gradient_field_polar(s)
    nu = gf.nu
    x, y = s.grid.cartesian()
    p = ModelPoint(x, y, s.values)
    zeta = grad_z(params, p)
    N = TangentVector.from_array(unit_normal_model(s)[0])
    zeta2 = metric_eval(params, p, zeta, zeta)
    zn = metric_eval(params, p, zeta, N)
    # dz(X_a) = (sigma_rho, sigma_theta / sinh rho): the vertical part of the lift of
    # e_theta cancels the twist carried by G sigma
    zt2 = surface_inner(s, s.values, s.values)
    identity = float(np.max(np.abs(zt2 + zn**2 - zeta2)))
    c1 = float(np.max(np.maximum(0.0, (1 - nu**2 - zt2) / nu)))
    i, j = (s.grid.n_rho // 2, 0) if center is None else _center_node(s, center)
    d = distance_from(s, i, j)
    d2 = d**2
    gd2 = np.sqrt(np.maximum(surface_inner(s, d2, d2), 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d > 0, gd2 / (2 * d), 0.0)
    defect = float(max(0.0, np.max(ratio[1:-1]) - 1))
    lap_h = laplace_beltrami(s, s.values)
    lap_d2 = laplace_beltrami(s, d2)
    certified = identity < 1e-10
    return EstimateReport(
        "height_gradient", certified, {"tau": tau, "center": [float(s.grid.rho[i]),
                                                             float(s.grid.theta[j])]},
        identity, 1e-10,
        {"zeta_identity_residual": identity, "c1_measured": c1,
         "d2_gradient_ratio_max": float(np.max(ratio[1:-1])), "d2_defect": defect,
         "d2_gradient_at_center": float(gd2[i, j]),
         "lap_h_max": float(np.nanmax(np.abs(lap_h))),
         "lap_d2_max": float(np.nanmax(np.abs(lap_d2)))})
