"""Explicit Riemannian model of E(kappa, tau) on D_kappa x R.

Points and vectors are carried as named tuples whose fields may be floats or
numpy arrays of a common shape, so every routine here evaluates pointwise over
whole point clouds at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

DEFAULT_FD_STEP = 1e-5


class DomainError(ValueError):
    """Raised when a point leaves the disk 1 + kappa (x^2 + y^2) > 0."""


@dataclass(frozen=True)
class ModelParams:
    kappa: float = -1.0
    tau: float = 0.0
    h0: float = 0.5
    theta: float = field(init=False)
    tau_prime: float = field(init=False)

    def __post_init__(self):
        if not self.kappa <= 0:
            raise ValueError(f"kappa must be <= 0, got {self.kappa}")
        tp = math.sqrt(self.tau**2 + 0.25)
        object.__setattr__(self, "tau_prime", tp)
        # tau + i/2 = exp(i theta) tau'
        object.__setattr__(self, "theta", math.atan2(0.5, self.tau))

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


class ModelPoint(NamedTuple):
    x: float
    y: float
    z: float = 0.0


class TangentVector(NamedTuple):
    vx: float
    vy: float
    vz: float

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.vx, self.vy, self.vz), axis=-1)

    @classmethod
    def from_array(cls, a) -> "TangentVector":
        a = np.asarray(a, dtype=float)
        return cls(a[..., 0], a[..., 1], a[..., 2])


class Frame(NamedTuple):
    f1: TangentVector
    f2: TangentVector
    xi: TangentVector


class PolarPoint(NamedTuple):
    rho: float
    theta_ang: float


def _check_domain(kappa, x, y):
    d = 1.0 + kappa * (np.square(x) + np.square(y))
    if np.any(~(d > 0)):
        raise DomainError("point outside D_kappa: 1 + kappa (x^2 + y^2) <= 0")
    return d


def conformal_factor(params: ModelParams, x, y):
    """lambda_kappa = 2 / (1 + kappa (x^2 + y^2))."""
    d = _check_domain(params.kappa, x, y)
    return 2.0 / d


def metric_matrix(params: ModelParams, x, y):
    """Coordinate matrix of ds^2 in the basis (d_x, d_y, d_z), shape (..., 3, 3)."""
    lam = conformal_factor(params, x, y)
    x, y, lam = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), lam)
    # vertical 1-form: 2 tau lam (y dx - x dy) + dz
    a = np.stack([2 * params.tau * lam * y, -2 * params.tau * lam * x, np.ones_like(x)], axis=-1)
    g = a[..., :, None] * a[..., None, :]
    g[..., 0, 0] += lam**2
    g[..., 1, 1] += lam**2
    return g


def metric_eval(params: ModelParams, p: ModelPoint, u: TangentVector, v: TangentVector):
    lam = conformal_factor(params, p.x, p.y)
    c = 2 * params.tau * lam
    vu = c * (p.y * u.vx - p.x * u.vy) + u.vz
    vv = c * (p.y * v.vx - p.x * v.vy) + v.vz
    return lam**2 * (u.vx * v.vx + u.vy * v.vy) + vu * vv


def orthonormal_frame(params: ModelParams, p: ModelPoint) -> Frame:
    lam = conformal_factor(params, p.x, p.y)
    zero = np.zeros_like(lam)
    one = np.ones_like(lam)
    tau = params.tau
    f1 = TangentVector(1.0 / lam, zero, -2 * tau * p.y * one)
    f2 = TangentVector(zero, 1.0 / lam, 2 * tau * p.x * one)
    return Frame(f1, f2, TangentVector(zero, zero, one))


def horizontal_lift(params: ModelParams, p: ModelPoint, a, b) -> TangentVector:
    """Horizontal lift of the base vector a d_x + b d_y at p."""
    lam = conformal_factor(params, p.x, p.y)
    vz = -2 * params.tau * lam * (p.y * a - p.x * b)
    return TangentVector(a + 0 * vz, b + 0 * vz, vz)


def grad_z(params: ModelParams, p: ModelPoint) -> TangentVector:
    """zeta = -2 tau y F1 + 2 tau x F2 + xi, the gradient of the height coordinate."""
    f1, f2, xi = orthonormal_frame(params, p)
    a = -2 * params.tau * p.y
    b = 2 * params.tau * p.x
    return TangentVector(
        a * f1.vx + b * f2.vx + xi.vx,
        a * f1.vy + b * f2.vy + xi.vy,
        a * f1.vz + b * f2.vz + xi.vz,
    )


def scaling_map(mu: float, p: ModelPoint, params: ModelParams):
    """h_mu: E(k, t) -> E(k / mu^2, t / mu), (x, y, z) -> mu (x, y, z)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    target = params.with_(kappa=params.kappa / mu**2, tau=params.tau / mu)
    q = ModelPoint(mu * np.asarray(p.x), mu * np.asarray(p.y), mu * np.asarray(p.z))
    _check_domain(target.kappa, q.x, q.y)
    return q, target


def pullback_metric_fd(target: ModelParams, mapping: Callable, p: ModelPoint,
                       u: TangentVector, v: TangentVector, step: float = 1e-4):
    """(mapping^* ds_target^2)(u, v) with the differential taken by central differences."""
    base = np.array(p, dtype=float)

    def push(w):
        w = np.array(w, dtype=float)
        plus = np.array(mapping(ModelPoint(*(base + step * w))), dtype=float)
        minus = np.array(mapping(ModelPoint(*(base - step * w))), dtype=float)
        return TangentVector(*((plus - minus) / (2 * step)))

    q = ModelPoint(*np.array(mapping(p), dtype=float))
    return metric_eval(target, q, push(u), push(v))


def vertical_translate(p: ModelPoint, t: float) -> ModelPoint:
    return ModelPoint(p.x, p.y, p.z + t)


def christoffel(params: ModelParams, p: ModelPoint, step: float = DEFAULT_FD_STEP):
    """Christoffel symbols Gamma[..., k, i, j] from central differences of the metric."""
    if not step > 1e-12:
        raise ValueError(f"finite-difference step underflow: {step}")
    x, y = np.asarray(p.x, float), np.asarray(p.y, float)
    dg = []
    for dx, dy in ((step, 0.0), (0.0, step)):
        dg.append((metric_matrix(params, x + dx, y + dy)
                   - metric_matrix(params, x - dx, y - dy)) / (2 * step))
    # the metric has no z dependence; the z-difference is identically zero
    dg.append(np.zeros_like(dg[0]))
    dg = np.stack(dg, axis=-3)  # dg[..., a, b, c] = d_a g_bc
    ginv = np.linalg.inv(metric_matrix(params, x, y))
    # low[..., i, j, l] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    low = 0.5 * (dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1))
    return np.einsum("...kl,...ijl->...kij", ginv, low)


def connection_term(params: ModelParams, p: ModelPoint, X, Y, step: float = DEFAULT_FD_STEP):
    """Gamma^k_ij X^i Y^j for component arrays X, Y of shape (..., 3)."""
    gam = christoffel(params, p, step)
    return np.einsum("...kij,...i,...j->...k", gam, X, Y)


def _directional_derivative(Y: Callable, p: np.ndarray, X: np.ndarray, step: float):
    out = np.zeros(3)
    for i in range(3):
        if X[i] == 0.0:
            continue
        e = np.zeros(3)
        e[i] = step
        dYi = (np.asarray(Y(ModelPoint(*(p + e))), float)
               - np.asarray(Y(ModelPoint(*(p - e))), float)) / (2 * step)
        out += X[i] * dYi
    return out


def covariant_derivative(params: ModelParams, X: Callable, Y: Callable, p: ModelPoint,
                         step: float = DEFAULT_FD_STEP) -> TangentVector:
    """nabla_X Y at p; X and Y map a ModelPoint to a length-3 component sequence."""
    if not step > 1e-12:
        raise ValueError(f"finite-difference step underflow: {step}")
    base = np.array(p, dtype=float)
    for sign in (-1, 1):
        for dx, dy in ((step, 0), (0, step)):
            _check_domain(params.kappa, base[0] + sign * dx, base[1] + sign * dy)
    Xp = np.asarray(X(p), float)
    Yp = np.asarray(Y(p), float)
    val = _directional_derivative(Y, base, Xp, step) + connection_term(params, p, Xp, Yp, step)
    return TangentVector(*val)


def lie_bracket(X: Callable, Y: Callable, p: ModelPoint, step: float = DEFAULT_FD_STEP):
    base = np.array(p, dtype=float)
    Xp = np.asarray(X(p), float)
    Yp = np.asarray(Y(p), float)
    return TangentVector(*(_directional_derivative(Y, base, Xp, step)
                           - _directional_derivative(X, base, Yp, step)))


def frame_fields(params: ModelParams):
    """F1, F2, xi as samplers usable by covariant_derivative."""
    def f1(q):
        return orthonormal_frame(params, q).f1

    def f2(q):
        return orthonormal_frame(params, q).f2

    def xi(q):
        return (0.0, 0.0, 1.0)

    return f1, f2, xi


def bundle_curvature(params: ModelParams, p: ModelPoint, step: float = DEFAULT_FD_STEP):
    """omega(E1, E2) measured three ways: via the connection on (F1, F2), via the
    connection on (F1, xi), and from the vertical part of [F1, F2]."""
    f1, f2, xi = frame_fields(params)
    via_levi1 = 2 * metric_eval(params, p, covariant_derivative(params, f1, f2, p, step),
                                TangentVector(0.0, 0.0, 1.0))
    via_levi2 = -2 * metric_eval(params, p, covariant_derivative(params, f1, xi, p, step),
                                 TangentVector(*f2(p)))
    br = lie_bracket(f1, f2, p, step)
    via_bracket = metric_eval(params, p, br, TangentVector(0.0, 0.0, 1.0))
    return via_levi1, via_levi2, via_bracket


def polar_to_cartesian(q: PolarPoint):
    if np.any(np.asarray(q.rho) < 0):
        raise ValueError("rho must be >= 0")
    r = np.tanh(np.asarray(q.rho) / 2)
    return r * np.cos(q.theta_ang), r * np.sin(q.theta_ang)


def cartesian_to_polar(x, y) -> PolarPoint:
    r = np.hypot(x, y)
    if np.any(r >= 1):
        raise DomainError("point outside the unit disk")
    rho = 2 * np.arctanh(r)
    ang = np.where(r > 0, np.mod(np.arctan2(y, x), 2 * np.pi), 0.0)
    if np.ndim(ang) == 0:
        ang = float(ang)
        rho = float(rho)
    return PolarPoint(rho, ang)


def hyperbolic_distance(x1, y1, x2, y2):
    """Distance in the disk model with metric 4 (dx^2 + dy^2) / (1 - r^2)^2."""
    num = 2 * ((x1 - x2) ** 2 + (y1 - y2) ** 2)
    den = (1 - x1**2 - y1**2) * (1 - x2**2 - y2**2)
    return np.arccosh(1 + num / den)


FRAME_DUMP_COLUMNS = ("x", "y", "z", "lambda", "g11", "g12", "g22", "g13", "g23", "g33")


def frame_dump_rows(params: ModelParams, x, y, z):
    """Rows for the metric debug CSV."""
    x, y, z = (np.atleast_1d(np.asarray(a, float)) for a in (x, y, z))
    lam = conformal_factor(params, x, y)
    g = metric_matrix(params, x, y)
    cols = [x, y, z, lam, g[:, 0, 0], g[:, 0, 1], g[:, 1, 1], g[:, 0, 2], g[:, 1, 2], g[:, 2, 2]]
    return [tuple(float(c[i]) for c in cols) for i in range(len(x))]
