"""Sections over annuli of H^2 and the divergence-form mean curvature operator.

Discretization
--------------
Nodes sit on a uniform (rho, theta) lattice, theta periodic. Each cell
[rho_i, rho_i+1] x [theta_j, theta_j+1] carries four corner gradients, one per
corner, each built from the two cell edges meeting there (a one-sided
difference along rho and along theta). The discrete operator is the gradient of

    F(sigma) = sum_cells sum_corners (A_cell / 4) * sqrt(1 + |G_corner sigma|^2)

divided by the nodal area, so that

    Div_h(G sigma / W)_i = -(dF / d sigma_i) / area_i.

All fluxes are edge differences, so the scheme is conservative, and the
linearization is the Hessian of F, which is symmetric. Vectors on H^2 are
stored in the orthonormal polar basis (d_rho, d_theta / sinh rho).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline

from .geometry import ModelParams, DomainError

CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class AnnularGrid:
    rho_min: float
    rho_max: float
    n_rho: int
    n_theta: int

    def __post_init__(self):
        if not 0 < self.rho_min < self.rho_max:
            raise ValueError("need 0 < rho_min < rho_max")
        if self.n_rho < 3 or self.n_theta < 8:
            raise ValueError("need n_rho >= 3 and n_theta >= 8")

    @classmethod
    def from_spacing(cls, rho_min, rho_max, d_rho, n_theta):
        """Grid whose radial spacing is exactly d_rho; rho_max must lie on the lattice."""
        k = (rho_max - rho_min) / d_rho
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"rho_max={rho_max} is not on the lattice rho_min + k*{d_rho}")
        return cls(rho_min, rho_min + round(k) * d_rho, int(round(k)) + 1, n_theta)

    @cached_property
    def d_rho(self) -> float:
        return (self.rho_max - self.rho_min) / (self.n_rho - 1)

    @cached_property
    def d_theta(self) -> float:
        return 2 * np.pi / self.n_theta

    @cached_property
    def rho(self) -> np.ndarray:
        return self.rho_min + self.d_rho * np.arange(self.n_rho)

    @cached_property
    def theta(self) -> np.ndarray:
        return self.d_theta * np.arange(self.n_theta)

    @cached_property
    def rho_mid(self) -> np.ndarray:
        return 0.5 * (self.rho[1:] + self.rho[:-1])

    @cached_property
    def node_area(self) -> np.ndarray:
        """Dual-cell area per node row; consistent with the corner quadrature."""
        cell = np.sinh(self.rho_mid) * self.d_rho * self.d_theta
        a = np.zeros(self.n_rho)
        a[:-1] += cell / 2
        a[1:] += cell / 2
        return a

    @property
    def shape(self):
        return (self.n_rho, self.n_theta)

    def mesh(self):
        return np.meshgrid(self.rho, self.theta, indexing="ij")

    def cartesian(self):
        R, T = self.mesh()
        r = np.tanh(R / 2)
        return r * np.cos(T), r * np.sin(T)

    def refine(self, factor: int = 2) -> "AnnularGrid":
        return AnnularGrid(self.rho_min, self.rho_max,
                           factor * (self.n_rho - 1) + 1, factor * self.n_theta)

    def row_of(self, rho: float) -> int:
        k = (rho - self.rho_min) / self.d_rho
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) < self.n_rho:
            raise ValueError(f"rho={rho} is not a grid row")
        return int(round(k))


@dataclass
class GridSection:
    grid: AnnularGrid
    values: np.ndarray
    params: ModelParams

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("section values must be finite")

    @classmethod
    def from_function(cls, grid: AnnularGrid, fn: Callable, params: ModelParams):
        R, T = grid.mesh()
        return cls(grid, np.broadcast_to(fn(R, T), grid.shape).copy(), params)

    def shifted(self, c: float) -> "GridSection":
        return GridSection(self.grid, self.values + c, self.params)

    @property
    def inner(self):
        return self.values[0]

    @property
    def outer(self):
        return self.values[-1]


def resample(s: GridSection, grid: AnnularGrid) -> GridSection:
    """Bicubic interpolation of s onto another grid covering a sub-range of rho."""
    if grid.rho_min < s.grid.rho_min - 1e-12 or grid.rho_max > s.grid.rho_max + 1e-12:
        raise ValueError("target grid leaves the source annulus")
    g = s.grid
    pad = 3
    th = np.concatenate([g.theta[-pad:] - 2 * np.pi, g.theta, g.theta[:pad] + 2 * np.pi])
    vals = np.concatenate([s.values[:, -pad:], s.values, s.values[:, :pad]], axis=1)
    spl = RectBivariateSpline(g.rho, th, vals, kx=3, ky=3)
    rho = np.clip(grid.rho, g.rho_min, g.rho_max)
    return GridSection(grid, spl(rho, grid.theta), s.params)


class GradientField(NamedTuple):
    g_rho: np.ndarray
    g_theta: np.ndarray
    W: np.ndarray
    chi_rho: np.ndarray
    chi_theta: np.ndarray
    nu: np.ndarray


def twist(tau: float, rho):
    """theta-offset 2 tau tanh(rho/2) carried by G sigma in the unit polar basis."""
    return 2 * tau * np.tanh(np.asarray(rho) / 2)


def nodal_derivatives(grid: AnnularGrid, v: np.ndarray):
    """(v_rho, v_theta) at nodes: central in the interior, one-sided second order
    at the radial boundaries, periodic central in theta."""
    v_r = np.gradient(v, grid.d_rho, axis=0, edge_order=2)
    v_t = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * grid.d_theta)
    return v_r, v_t


def nodal_gradient(grid: AnnularGrid, v: np.ndarray):
    """H^2 gradient of a scalar in the orthonormal polar basis."""
    v_r, v_t = nodal_derivatives(grid, v)
    return v_r, v_t / np.sinh(grid.rho)[:, None]


def gradient_field_polar(s: GridSection) -> GradientField:
    g_r, g_t = nodal_gradient(s.grid, s.values)
    g_t = g_t - twist(s.params.tau, s.grid.rho)[:, None]
    W = np.sqrt(1 + g_r**2 + g_t**2)
    return GradientField(g_r, g_t, W, g_r / W, g_t / W, 1 / W)


# ---------------------------------------------------------------------------
# corner machinery


def corner_gradients(grid: AnnularGrid, v: np.ndarray, tau: float | None = None):
    """Per-corner gradients {(a, b): (g_rho, g_theta)} on cells, arrays of shape
    (n_rho - 1, n_theta). With tau given, the twist term of G sigma is included."""
    s = np.sinh(grid.rho_mid)[:, None]
    dr = (v[1:] - v[:-1]) / grid.d_rho
    dt = (np.roll(v, -1, axis=1) - v) / grid.d_theta
    shift = 0.0 if tau is None else twist(tau, grid.rho_mid)[:, None]
    dr_b = (dr, np.roll(dr, -1, axis=1))
    dt_a = (dt[:-1] / s - shift, dt[1:] / s - shift)
    return {(a, b): (dr_b[b], dt_a[a]) for a, b in CORNERS}


def _cell_weight(grid: AnnularGrid):
    return (np.sinh(grid.rho_mid) * grid.d_rho * grid.d_theta / 4)[:, None]


def corner_flux_gradient(grid: AnnularGrid, fields) -> np.ndarray:
    """d/dv of sum_corners w (Y, D_corner v) for corner fields Y; the discrete
    weak-form counterpart of -Div(Y) * area."""
    n, m = grid.shape
    out = np.zeros((n, m))
    w = _cell_weight(grid)
    s = np.sinh(grid.rho_mid)[:, None]
    for (a, b), (yr, yt) in fields.items():
        qr = np.roll(w * yr / grid.d_rho, b, axis=1)
        out[1:] += qr
        out[:-1] -= qr
        qt = w * yt / (grid.d_theta * s)
        out[a:n - 1 + a] += np.roll(qt, 1, axis=1) - qt
    return out


def corner_divergence(grid: AnnularGrid, fields) -> np.ndarray:
    """Nodal divergence of a corner vector field; NaN on the boundary rows."""
    div = -corner_flux_gradient(grid, fields) / grid.node_area[:, None]
    div[0] = np.nan
    div[-1] = np.nan
    return div


def corner_chi(s: GridSection):
    """{corner: (chi_rho, chi_theta, W)} of G sigma / W."""
    out = {}
    for k, (gr, gt) in corner_gradients(s.grid, s.values, s.params.tau).items():
        W = np.sqrt(1 + gr**2 + gt**2)
        out[k] = (gr / W, gt / W, W)
    return out


def corner_P(s: GridSection):
    """{corner: (P_rr, P_rt, P_tt)} of P(X) = (X - chi (X, chi)) / W."""
    out = {}
    for k, (cr, ct, W) in corner_chi(s).items():
        out[k] = ((1 - cr * cr) / W, -cr * ct / W, (1 - ct * ct) / W)
    return out


def _apply_coeff(coeff, gr, gt):
    crr, crt, ctt = coeff
    return crr * gr + crt * gt, crt * gr + ctt * gt


def div_coeff_grad(grid: AnnularGrid, coeff, v: np.ndarray) -> np.ndarray:
    """Nodal Div(C grad v) for a per-corner symmetric coefficient field C."""
    grads = corner_gradients(grid, v)
    fields = {k: _apply_coeff(coeff[k], *grads[k]) for k in CORNERS}
    return corner_divergence(grid, fields)


def mean_curvature(s: GridSection) -> np.ndarray:
    """H[sigma] = 1/2 Div(G sigma / W) at interior nodes (NaN on boundary rows)."""
    fields = {k: (cr, ct) for k, (cr, ct, _) in corner_chi(s).items()}
    return 0.5 * corner_divergence(s.grid, fields)


def area_energy(s: GridSection) -> float:
    w = _cell_weight(s.grid)
    return float(sum(np.sum(w * W) for (_, _, W) in corner_chi(s).values()))


def jacobi_residual(base: GridSection, v: np.ndarray) -> np.ndarray:
    """Div((grad v - chi (grad v, chi)) / W) linearized about base."""
    return div_coeff_grad(base.grid, corner_P(base), np.asarray(v, float))


def laplace_beltrami(s: GridSection, f: np.ndarray) -> np.ndarray:
    """Delta_Sigma f = (1/W) Div(W (I - chi chi^T) grad f), NaN on boundary rows."""
    coeff = {k: (W * (1 - cr * cr), -W * cr * ct, W * (1 - ct * ct))
             for k, (cr, ct, W) in corner_chi(s).items()}
    return div_coeff_grad(s.grid, coeff, np.asarray(f, float)) / gradient_field_polar(s).W


# stencil matrices: local node labels 0:(i,j) 1:(i+1,j) 2:(i,j+1) 3:(i+1,j+1)
def _stencil_mats(grid: AnnularGrid):
    dr, dt = grid.d_rho, grid.d_theta
    R, T = {}, {}
    for b in (0, 1):
        br = np.zeros(4)
        br[2 * b], br[2 * b + 1] = -1 / dr, 1 / dr
        R[b] = br
    for a in (0, 1):
        bt = np.zeros(4)
        bt[a], bt[a + 2] = -1 / dt, 1 / dt
        T[a] = bt
    mats = {}
    for a, b in CORNERS:
        mats[(a, b)] = (np.outer(R[b], R[b]),
                        np.outer(R[b], T[a]) + np.outer(T[a], R[b]),
                        np.outer(T[a], T[a]))
    return mats


def assemble_stiffness(grid: AnnularGrid, coeff) -> sp.csr_matrix:
    """Symmetric matrix K with (K v)_i = -Div(C grad v)_i * area_i at interior nodes."""
    n, m = grid.shape
    w = _cell_weight(grid)
    s = np.sinh(grid.rho_mid)[:, None]
    mats = _stencil_mats(grid)
    loc = np.zeros((n - 1, m, 4, 4))
    for k in CORNERS:
        crr, crt, ctt = coeff[k]
        Rm, Xm, Tm = mats[k]
        loc += (w * crr)[..., None, None] * Rm
        loc += (w * crt / s)[..., None, None] * Xm
        loc += (w * ctt / s**2)[..., None, None] * Tm
    I = np.arange(n - 1)[:, None]
    J = np.arange(m)[None, :]
    Jp = (J + 1) % m
    nodes = np.stack(np.broadcast_arrays(I * m + J, (I + 1) * m + J,
                                         I * m + Jp, (I + 1) * m + Jp), axis=-1)
    rows = np.broadcast_to(nodes[..., :, None], loc.shape).ravel()
    cols = np.broadcast_to(nodes[..., None, :], loc.shape).ravel()
    N = n * m
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def induced_metric(s: GridSection) -> np.ndarray:
    """g = I + G G^T in the orthonormal polar basis, shape (n_rho, n_theta, 2, 2)."""
    gf = gradient_field_polar(s)
    G = np.stack([gf.g_rho, gf.g_theta], axis=-1)
    return np.eye(2) + G[..., :, None] * G[..., None, :]


def _central_divergence(grid: AnnularGrid, Yr, Yt):
    sh = np.sinh(grid.rho)[:, None]
    a = sh * Yr
    div = np.full(grid.shape, np.nan)
    div[1:-1] = (a[2:] - a[:-2]) / (2 * grid.d_rho)
    div[1:-1] += ((np.roll(Yt, -1, axis=1) - np.roll(Yt, 1, axis=1))[1:-1]
                  / (2 * grid.d_theta))
    div[1:-1] /= sh[1:-1]
    return div


def divergence_g(s: GridSection, X) -> np.ndarray:
    """Div_g X = (1/W) Div(W X) for a nodal vector field X = (X_rho, X_theta)."""
    W = gradient_field_polar(s).W
    Xr, Xt = X
    return _central_divergence(s.grid, W * Xr, W * Xt) / W


def integration_by_parts_audit(s: GridSection, X, phi: np.ndarray):
    """Discrete Stokes check for divergence_g:
    sum Div_g(X) phi W dA + sum (X, grad phi) W dA == boundary flux."""
    g = s.grid
    W = gradient_field_polar(s).W
    Xr, Xt = X
    sh = np.sinh(g.rho)[:, None]
    dA = sh * g.d_rho * g.d_theta
    lhs = np.sum((divergence_g(s, X) * phi * W * dA)[1:-1])
    p_r = np.zeros(g.shape)
    p_r[1:-1] = (phi[2:] - phi[:-2]) / (2 * g.d_rho)
    p_t = (np.roll(phi, -1, axis=1) - np.roll(phi, 1, axis=1)) / (2 * g.d_theta) / sh
    rhs = np.sum(((Xr * p_r + Xt * p_t) * W * dA)[1:-1])
    a = sh * W * Xr
    bdry = 0.5 * g.d_theta * np.sum(a[-1] * phi[-2] + a[-2] * phi[-1]
                                    - a[1] * phi[0] - a[0] * phi[1])
    return {"lhs": float(lhs), "rhs": float(rhs), "boundary_flux": float(bdry),
            "residual": float(lhs + rhs - bdry)}


def flux_conservation_audit(s: GridSection, phi: np.ndarray):
    """sum H phi area against -1/2 sum_corners (chi, D phi) w."""
    H = mean_curvature(s)
    lhs = np.sum((H * phi * s.grid.node_area[:, None])[1:-1])
    w = _cell_weight(s.grid)
    grads = corner_gradients(s.grid, phi)
    rhs = 0.0
    for k, (cr, ct, _) in corner_chi(s).items():
        gr, gt = grads[k]
        rhs += np.sum(w * (cr * gr + ct * gt))
    return float(lhs), float(-0.5 * rhs)


# ---------------------------------------------------------------------------
# Cartesian chart (patches of the disk), used for chart cross-checks


@dataclass
class CartesianSection:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # indexed [ix, iy]
    params: ModelParams
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.y = np.asarray(self.y, float)
        self.values = np.asarray(self.values, float)
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        if np.any(X**2 + Y**2 >= 1):
            raise DomainError("Cartesian patch leaves the unit disk")
        self.hx = float(self.x[1] - self.x[0])
        self.hy = float(self.y[1] - self.y[0])

    @classmethod
    def from_function(cls, x, y, fn, params):
        X, Y = np.meshgrid(x, y, indexing="ij")
        return cls(x, y, fn(X, Y), params)


def gradient_field_cartesian(s: CartesianSection):
    """G sigma in coordinate components (d_x, d_y) and its H^2 norm."""
    X, Y = np.meshgrid(s.x, s.y, indexing="ij")
    lam = 2 / (1 - X**2 - Y**2)
    tau = s.params.tau
    s_x = np.gradient(s.values, s.hx, axis=0, edge_order=2)
    s_y = np.gradient(s.values, s.hy, axis=1, edge_order=2)
    Gx = (s_x + 2 * tau * lam * Y) / lam**2
    Gy = (s_y - 2 * tau * lam * X) / lam**2
    norm = lam * np.hypot(Gx, Gy)
    return Gx, Gy, norm


def mean_curvature_cartesian(s: CartesianSection) -> np.ndarray:
    """H = 1/2 (1/lam^2) [d_x(lam^2 chi^x) + d_y(lam^2 chi^y)] by staggered fluxes;
    NaN on the outer layer of the patch."""
    v, hx, hy, tau = s.values, s.hx, s.hy, s.params.tau
    X, Y = np.meshgrid(s.x, s.y, indexing="ij")
    cy = np.full_like(v, np.nan)
    cy[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * hy)
    cx = np.full_like(v, np.nan)
    cx[1:-1] = (v[2:] - v[:-2]) / (2 * hx)

    # x-faces between ix and ix+1
    xf = 0.5 * (X[1:] + X[:-1])
    yf = Y[1:]
    lam = 2 / (1 - xf**2 - yf**2)
    a = (v[1:] - v[:-1]) / hx + 2 * tau * lam * yf
    b = 0.5 * (cy[1:] + cy[:-1]) - 2 * tau * lam * xf
    Fx = a / np.sqrt(1 + (a**2 + b**2) / lam**2)
    # y-faces between iy and iy+1
    xf = X[:, 1:]
    yf = 0.5 * (Y[:, 1:] + Y[:, :-1])
    lam = 2 / (1 - xf**2 - yf**2)
    a = 0.5 * (cx[:, 1:] + cx[:, :-1]) + 2 * tau * lam * yf
    b = (v[:, 1:] - v[:, :-1]) / hy - 2 * tau * lam * xf
    Fy = b / np.sqrt(1 + (a**2 + b**2) / lam**2)

    lam_n = 2 / (1 - X**2 - Y**2)
    H = np.full_like(v, np.nan)
    H[1:-1, 1:-1] = ((Fx[1:, 1:-1] - Fx[:-1, 1:-1]) / hx
                     + (Fy[1:-1, 1:] - Fy[1:-1, :-1]) / hy) / lam_n[1:-1, 1:-1] ** 2
    return 0.5 * H


# ---------------------------------------------------------------------------
# dumps

GRID_DUMP_COLUMNS = ("rho", "theta", "sigma", "G_rho", "G_theta", "W", "nu", "H")


def grid_dump_rows(s: GridSection):
    gf = gradient_field_polar(s)
    H = mean_curvature(s)
    R, T = s.grid.mesh()
    cols = [R, T, s.values, gf.g_rho, gf.g_theta, gf.W, gf.nu, H]
    flat = [c.ravel() for c in cols]
    return [tuple(float(c[i]) for c in flat) for i in range(flat[0].size)]
