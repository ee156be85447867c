"""Surface data (g, S, nu, T) of graphs, the sister rotation, and the flat chart.

Tangent vectors of the graph are written in the frame X_a = d sigma(e_a), where
(e_1, e_2) = (d_rho, d_theta / sinh rho) is the orthonormal polar basis of H^2.
Matrices of endomorphisms act on component columns in that frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .geometry import ModelParams, christoffel, ModelPoint, metric_matrix, conformal_factor
from .graph import (CartesianSection, GridSection, gradient_field_cartesian, gradient_field_polar,
                    nodal_derivatives)


class SurfaceError(ValueError):
    pass


@dataclass
class SurfaceData:
    g: np.ndarray        # (..., 2, 2)
    S: np.ndarray        # (..., 2, 2), S[b, a] = component b of S X_a
    nu: np.ndarray       # (...)
    T: np.ndarray        # (..., 2)
    params: ModelParams
    rho: np.ndarray | None = None
    theta: np.ndarray | None = None
    asymmetry: float = 0.0   # max |B - B^T| before symmetrization

    @property
    def trace_S(self):
        return np.trace(self.S, axis1=-2, axis2=-1)

    def norm_S2(self):
        return shape_norm2(self.g, self.S)

    def T_norm2(self):
        return np.einsum("...a,...ab,...b->...", self.T, self.g, self.T)


@dataclass
class SisterData:
    g: np.ndarray
    S: np.ndarray
    nu: np.ndarray
    T: np.ndarray
    theta: float
    tau_prime: float
    rho: np.ndarray | None = None
    theta_ang: np.ndarray | None = None

    def norm_S2(self):
        return shape_norm2(self.g, self.S)


class FlatChart(NamedTuple):
    g0: np.ndarray       # (..., 2, 2)
    G: np.ndarray        # (..., 2)
    chi: np.ndarray      # (..., 2)
    G_norm2: np.ndarray  # ||G||_0^2


# ---------------------------------------------------------------------------
# orthonormal gauge


def orthonormal_gauge(g: np.ndarray):
    """C with C^T g C = I and det C > 0 (frame orientation kept)."""
    L = np.linalg.cholesky(g)
    return np.linalg.inv(np.swapaxes(L, -1, -2))


def rotation(angle) -> np.ndarray:
    """Rotation matrix R(angle); an array of angles gives a stack of shape (..., 2, 2)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def shape_norm2(g: np.ndarray, S: np.ndarray) -> np.ndarray:
    """||S||^2 = tr(S^* S) for the g-adjoint, i.e. the Frobenius norm in an
    orthonormal gauge."""
    C = orthonormal_gauge(g)
    Sh = np.linalg.inv(C) @ S @ C
    return np.sum(Sh**2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# extraction from a solved graph


def _lift(tau, lam, x, y, a, b):
    """Model components of the horizontal lift of a d_x + b d_y."""
    return np.stack([a, b, -2 * tau * lam * (y * a - x * b)], axis=-1)


def unit_normal_model(s: GridSection):
    """Model components of N = (-lift(G sigma) + xi) / W and of the chart frame
    X_a = lift(e_a) + G_a xi at every node."""
    params = s.params
    gf = gradient_field_polar(s)
    _, Th = s.grid.mesh()
    x, y = s.grid.cartesian()
    lam = conformal_factor(params, x, y)
    c, sn = np.cos(Th), np.sin(Th)
    e_r = _lift(params.tau, lam, x, y, c / lam, sn / lam)
    e_t = _lift(params.tau, lam, x, y, -sn / lam, c / lam)
    xi = np.zeros_like(e_r)
    xi[..., 2] = 1.0
    Gr, Gt, W = gf.g_rho, gf.g_theta, gf.W
    N = (-(Gr[..., None] * e_r + Gt[..., None] * e_t) + xi) / W[..., None]
    return N, [e_r + Gr[..., None] * xi, e_t + Gt[..., None] * xi]


def extract_surface_data(s: GridSection, fd_step: float = 1e-5) -> SurfaceData:
    """(g, S, nu, T) at every node. S X_a = -nabla_{X_a} N with N extended
    vertically invariantly, so X_a(N) = e_a(N) is a base derivative."""
    grid, params = s.grid, s.params
    gf = gradient_field_polar(s)
    if np.any(gf.nu <= 0):
        raise SurfaceError("nu <= 0 at some node: not a graph")
    R, Th = grid.mesh()
    x, y = grid.cartesian()
    N, X = unit_normal_model(s)
    d_rho, d_th = [], []
    for k in range(3):
        a, b = nodal_derivatives(grid, N[..., k])
        d_rho.append(a)
        d_th.append(b / np.sinh(R))
    dN = [np.stack(d_rho, axis=-1), np.stack(d_th, axis=-1)]

    gam = christoffel(params, ModelPoint(x, y, np.zeros_like(x)), fd_step)
    gm = metric_matrix(params, x, y)
    B = np.empty(grid.shape + (2, 2))
    for a_ in range(2):
        cov = dN[a_] + np.einsum("...kij,...i,...j->...k", gam, X[a_], N)
        for c_ in range(2):
            B[..., c_, a_] = -np.einsum("...i,...ij,...j->...", cov, gm, X[c_])
    asym = float(np.max(np.abs(B[..., 0, 1] - B[..., 1, 0])))
    B = 0.5 * (B + np.swapaxes(B, -1, -2))
    G = np.stack([gf.g_rho, gf.g_theta], axis=-1)
    g = np.eye(2) + G[..., :, None] * G[..., None, :]
    ginv = np.linalg.inv(g)
    S = ginv @ B
    T = np.einsum("...ab,...b->...a", ginv, G)
    return SurfaceData(g, S, gf.nu, T, params, R, Th, asym)


def surface_data_cartesian(s: CartesianSection):
    """(g, T, nu) of a graph over a Cartesian patch, g in the coordinate basis
    (d_x, d_y). Used for flat-chart checks on graphs in E(0, tau)."""
    X, Y = np.meshgrid(s.x, s.y, indexing="ij")
    lam = conformal_factor(s.params, X, Y)
    Gx, Gy, norm = gradient_field_cartesian(s)
    # (G sigma, d_i) in the base metric = lam^2 G^i
    Gl = np.stack([lam**2 * Gx, lam**2 * Gy], axis=-1)
    g = lam[..., None, None] ** 2 * np.eye(2) + Gl[..., :, None] * Gl[..., None, :]
    T = np.einsum("...ab,...b->...a", np.linalg.inv(g), Gl)
    nu = 1 / np.sqrt(1 + norm**2)
    return g, T, nu


# ---------------------------------------------------------------------------
# sister correspondence


# J is the rotation by pi/2 taking X_theta to X_rho. With the metric's
# (y dx - x dy) convention this is the orientation under which the rotated data
# close up (flat g0); the opposite choice does not.
J_SIGN = -1.0


def sister(data: SurfaceData, params: ModelParams | None = None, h0_tol: float = 1e-12) -> SisterData:
    """g' = g, S' = e^{theta J}(S - I/2), nu' = nu, T' = e^{theta J} T."""
    params = params or data.params
    if abs(params.h0 - 0.5) > h0_tol:
        raise ValueError(f"the sister correspondence needs H0 = 1/2, got {params.h0}")
    C = orthonormal_gauge(data.g)
    Ci = np.linalg.inv(C)
    R = rotation(J_SIGN * params.theta)
    Sh = Ci @ data.S @ C
    Sp = C @ (R @ (Sh - 0.5 * np.eye(2))) @ Ci
    Th = np.einsum("...ab,...b->...a", Ci, data.T)
    Tp = np.einsum("...ab,...b->...a", C, Th @ R.T)
    return SisterData(data.g, Sp, data.nu, Tp, params.theta, params.tau_prime,
                      data.rho, data.theta)


def jacobi_potential(data, tau: float, is_sister: bool = False) -> np.ndarray:
    """Zero-order term of the Jacobi operator. With is_sister, tau is the sister
    parameter tau'."""
    nu2 = np.asarray(data.nu) ** 2
    s2 = data.norm_S2() if hasattr(data, "norm_S2") else np.asarray(data)
    if is_sister:
        return -2 * tau**2 + 4 * tau**2 * nu2 + s2
    return -(1 + 2 * tau**2) + (1 + 4 * tau**2) * nu2 + s2


def potential_identity_residual(S_hat: np.ndarray, nu, tau):
    """Sister minus original potential for orthonormal-gauge shape operators S_hat
    (no trace assumption); vanishes when tr S = 1."""
    nu2 = np.asarray(nu) ** 2
    tau = np.asarray(tau, float)
    tp2 = tau**2 + 0.25
    theta = np.arctan2(0.5, tau)
    Sp = rotation(J_SIGN * theta) @ (S_hat - 0.5 * np.eye(2))
    sis = -2 * tp2 + 4 * tp2 * nu2 + np.sum(Sp**2, axis=(-2, -1))
    orig = -(1 + 2 * tau**2) + (1 + 4 * tau**2) * nu2 + np.sum(S_hat**2, axis=(-2, -1))
    return sis - orig


# ---------------------------------------------------------------------------
# flat chart


def flat_metric(g: np.ndarray, T: np.ndarray, nu) -> FlatChart:
    """g0 = g - (g T)(g T)^T, the pullback of the base metric through the
    projection, and the quotient field G = g0^{-1} g T."""
    if np.any(np.asarray(nu) <= 0):
        raise SurfaceError("flat chart needs nu > 0 everywhere")
    gT = np.einsum("...ab,...b->...a", g, T)
    g0 = g - gT[..., :, None] * gT[..., None, :]
    G = np.linalg.solve(g0, gT[..., None])[..., 0]
    n2 = np.einsum("...a,...ab,...b->...", G, g0, G)
    chi = G / np.sqrt(1 + n2)[..., None]
    return FlatChart(g0, G, chi, n2)


def flat_chart(data: SisterData) -> FlatChart:
    return flat_metric(data.g, data.T, data.nu)


def polar_coordinate_metric(m: np.ndarray, rho: np.ndarray):
    """(E, F, G) of a tensor given in the unit polar frame, in coordinates (rho, theta)."""
    sh = np.sinh(rho)
    return m[..., 0, 0], sh * m[..., 0, 1], sh**2 * m[..., 1, 1]


def gauss_curvature_fd(E, F, G, h_u, h_v, periodic_v: bool = False):
    """Gauss curvature from the Brioschi formula with second-order differences.
    Axis 0 is u, axis 1 is v. Non-periodic edges use one-sided differences."""
    def du(a):
        return np.gradient(a, h_u, axis=0, edge_order=2)

    def dv(a):
        if periodic_v:
            return (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2 * h_v)
        return np.gradient(a, h_v, axis=1, edge_order=2)

    Eu, Ev, Fu, Fv, Gu, Gv = du(E), dv(E), du(F), dv(F), du(G), dv(G)
    Evv, Guu, Fuv = dv(Ev), du(Gu), du(Fv)
    m1 = np.stack([
        np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], axis=-1),
        np.stack([Fv - 0.5 * Gu, E, F], axis=-1),
        np.stack([0.5 * Gv, F, G], axis=-1)], axis=-2)
    z = np.zeros_like(E)
    m2 = np.stack([
        np.stack([z, 0.5 * Ev, 0.5 * Gu], axis=-1),
        np.stack([0.5 * Ev, E, F], axis=-1),
        np.stack([0.5 * Gu, F, G], axis=-1)], axis=-2)
    return (np.linalg.det(m1) - np.linalg.det(m2)) / (E * G - F**2) ** 2


def flat_chart_curvature(chart: FlatChart, s: GridSection, margin: int = 2) -> np.ndarray:
    """FD Gauss curvature of g0 on the polar grid of s; NaN within ``margin``
    rows of the radial boundary."""
    E, F, G = polar_coordinate_metric(chart.g0, s.grid.rho[:, None])
    K = gauss_curvature_fd(E, F, G, s.grid.d_rho, s.grid.d_theta, periodic_v=True)
    if margin:
        K[:margin] = np.nan
        K[-margin:] = np.nan
    return K


def interior_band(grid, inset: float) -> np.ndarray:
    """Row mask of nodes at hyperbolic distance >= inset from both boundary
    circles. Fixed in physical terms so that it is comparable across grids."""
    return (grid.rho >= grid.rho_min + inset - 1e-12) & (grid.rho <= grid.rho_max - inset + 1e-12)


def band_max(field: np.ndarray, grid, inset: float) -> float:
    """max |field| over the interior band, ignoring NaN."""
    return float(np.nanmax(np.abs(field[interior_band(grid, inset)])))


# ---------------------------------------------------------------------------
# length bound


def curve_lengths(chart: FlatChart, nu: np.ndarray, s: GridSection, rho_pts, theta_pts):
    """(length in g0, integral of nu dl_{H^2}) along the polyline through the
    given polar points, with fields interpolated at segment midpoints."""
    grid = s.grid
    pad = 3
    th = np.concatenate([grid.theta[-pad:] - 2 * np.pi, grid.theta, grid.theta[:pad] + 2 * np.pi])

    def interp(f):
        v = np.concatenate([f[:, -pad:], f, f[:, :pad]], axis=1)
        return RectBivariateSpline(grid.rho, th, v, kx=3, ky=3)

    rp = np.asarray(rho_pts, float)
    tp = np.asarray(theta_pts, float)
    rm, tm = 0.5 * (rp[1:] + rp[:-1]), np.mod(0.5 * (tp[1:] + tp[:-1]), 2 * np.pi)
    dr, dt = np.diff(rp), np.diff(tp)
    sh = np.sinh(rm)
    # displacement in the unit polar frame
    v1, v2 = dr, sh * dt
    g00 = interp(chart.g0[..., 0, 0]).ev(rm, tm)
    g01 = interp(chart.g0[..., 0, 1]).ev(rm, tm)
    g11 = interp(chart.g0[..., 1, 1]).ev(rm, tm)
    nu_m = interp(nu).ev(rm, tm)
    l0 = np.sum(np.sqrt(g00 * v1**2 + 2 * g01 * v1 * v2 + g11 * v2**2))
    lh = np.sum(nu_m * np.sqrt(v1**2 + v2**2))
    return float(l0), float(lh)


def radial_length_floor(nu_min: float, rho_a: float, rho_b: float) -> float:
    """nu_0 times the hyperbolic width of the annulus {rho_a <= rho <= rho_b}."""
    return nu_min * (rho_b - rho_a)


SURFACE_DUMP_COLUMNS = ("rho", "theta", "g11", "g12", "g22", "S11", "S12", "S21", "S22",
                        "nu", "T1", "T2")


def surface_dump_rows(data: SurfaceData, sis: SisterData | None = None):
    cols = [data.rho, data.theta, data.g[..., 0, 0], data.g[..., 0, 1], data.g[..., 1, 1],
            data.S[..., 0, 0], data.S[..., 0, 1], data.S[..., 1, 0], data.S[..., 1, 1],
            data.nu, data.T[..., 0], data.T[..., 1]]
    if sis is not None:
        cols += [sis.g[..., 0, 0], sis.g[..., 0, 1], sis.g[..., 1, 1],
                 sis.S[..., 0, 0], sis.S[..., 0, 1], sis.S[..., 1, 0], sis.S[..., 1, 1],
                 sis.nu, sis.T[..., 0], sis.T[..., 1]]
    flat = [np.ravel(c) for c in cols]
    return [tuple(float(c[i]) for c in flat) for i in range(flat[0].size)]


def surface_dump_columns(with_sister: bool):
    cols = list(SURFACE_DUMP_COLUMNS)
    if with_sister:
        cols += [c + "_p" for c in SURFACE_DUMP_COLUMNS[2:]]
    return tuple(cols)
