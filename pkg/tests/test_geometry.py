import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from cmclab.geometry import (DomainError, ModelParams, ModelPoint, PolarPoint, TangentVector,
                             bundle_curvature, cartesian_to_polar, christoffel, conformal_factor,
                             covariant_derivative, frame_dump_rows, frame_fields, grad_z,
                             hyperbolic_distance, lie_bracket, metric_eval, metric_matrix,
                             orthonormal_frame, polar_to_cartesian, pullback_metric_fd,
                             scaling_map, vertical_translate)

PARAM_SETS = [ModelParams(-1.0, 0.0), ModelParams(-1.0, 0.5), ModelParams(0.0, 0.5)]

DZ = TangentVector(0.0, 0.0, 1.0)
DX = TangentVector(1.0, 0.0, 0.0)


def random_points(rng, n, kappa, rmax=0.9):
    r = rmax * np.sqrt(rng.uniform(size=n))
    a = rng.uniform(0, 2 * np.pi, size=n)
    scale = 1.0 if kappa < 0 else 3.0
    return ModelPoint(scale * r * np.cos(a), scale * r * np.sin(a), rng.normal(size=n))


def random_vectors(rng, n):
    return TangentVector(*rng.normal(size=(3, n)))


def gram(params, p, frame):
    return np.array([[metric_eval(params, p, u, v) for v in frame] for u in frame])


# --- model parameters


def test_params_derived_quantities():
    p = ModelParams(-1.0, 0.3)
    assert p.tau_prime == math.sqrt(0.3**2 + 0.25)
    assert math.isclose(math.cos(p.theta), 0.3 / p.tau_prime, rel_tol=1e-15)
    assert math.isclose(math.sin(p.theta), 0.5 / p.tau_prime, rel_tol=1e-15)


@pytest.mark.parametrize("tau, theta, tau_prime", [
    (0.0, math.pi / 2, 0.5),
    (0.5, math.pi / 4, math.sqrt(0.5)),
])
def test_sister_angle_examples(tau, theta, tau_prime):
    p = ModelParams(-1.0, tau)
    assert p.theta == pytest.approx(theta, abs=1e-15)
    assert p.tau_prime == pytest.approx(tau_prime, abs=1e-15)


@given(st.floats(-50, 50, allow_nan=False))
def test_theta_in_range(tau):
    p = ModelParams(-1.0, tau)
    assert 0 < p.theta <= math.pi


def test_positive_kappa_rejected():
    with pytest.raises(ValueError):
        ModelParams(1.0, 0.0)


# --- conformal factor and metric


@pytest.mark.parametrize("kappa, x, y, expected", [
    (-1.0, 0.0, 0.0, 2.0),
    (0.0, 0.7, -0.3, 2.0),
    (-1.0, 0.5, 0.5, 4.0),
])
def test_conformal_factor_examples(kappa, x, y, expected):
    assert conformal_factor(ModelParams(kappa, 0.0), x, y) == pytest.approx(expected, rel=1e-15)


def test_conformal_factor_domain_error():
    with pytest.raises(DomainError):
        conformal_factor(ModelParams(-1.0, 0.0), 0.8, 0.7)


def test_metric_eval_examples():
    p0 = ModelPoint(0.0, 0.0, 0.0)
    for params in PARAM_SETS:
        assert metric_eval(params, ModelPoint(0.2, -0.1, 3.0), DZ, DZ) == pytest.approx(1.0)
    assert metric_eval(ModelParams(-1.0, 0.0), p0, DX, DX) == pytest.approx(4.0)
    assert metric_eval(ModelParams(-1.0, 0.5), ModelPoint(0.3, 0.0, 0.0), DX, DZ) == 0.0


def test_metric_matrix_agrees_with_bilinear_form():
    rng = np.random.default_rng(1)
    for params in PARAM_SETS:
        p = random_points(rng, 200, params.kappa)
        u, v = random_vectors(rng, 200), random_vectors(rng, 200)
        g = metric_matrix(params, p.x, p.y)
        via_matrix = np.einsum("ni,nij,nj->n", u.as_array(), g, v.as_array())
        assert np.allclose(via_matrix, metric_eval(params, p, u, v), rtol=1e-13, atol=1e-13)


def test_frame_dump_rows():
    params = ModelParams(-1.0, 0.5)
    rows = frame_dump_rows(params, [0.1, 0.0], [0.2, 0.0], [0.0, 1.0])
    assert len(rows) == 2 and len(rows[0]) == 10
    assert rows[1][3] == 2.0  # lambda at the origin
    assert rows[1][9] == 1.0  # g33


# --- frame


def test_frame_at_origin():
    f1, f2, xi = orthonormal_frame(ModelParams(-1.0, 0.0), ModelPoint(0.0, 0.0, 0.0))
    assert tuple(map(float, f1)) == (0.5, 0.0, 0.0)
    assert tuple(map(float, f2)) == (0.0, 0.5, 0.0)
    assert tuple(map(float, xi)) == (0.0, 0.0, 1.0)


def test_frame_vertical_component_example():
    f1 = orthonormal_frame(ModelParams(-1.0, 1.0), ModelPoint(0.0, 0.5, 0.0)).f1
    assert float(f1.vz) == -1.0


@pytest.mark.parametrize("params", PARAM_SETS)
def test_frame_gram_is_identity_on_a_cloud(params):
    rng = np.random.default_rng(2)
    p = random_points(rng, 10**6, params.kappa)
    G = gram(params, p, orthonormal_frame(params, p))
    err = np.abs(np.moveaxis(G, -1, 0) - np.eye(3)).max()
    assert err < 1e-12


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.0, 0.95), a=st.floats(0, 2 * math.pi), z=st.floats(-10, 10),
       tau=st.floats(-3, 3))
def test_frame_gram_property(r, a, z, tau):
    params = ModelParams(-1.0, tau)
    p = ModelPoint(r * math.cos(a), r * math.sin(a), z)
    G = gram(params, p, orthonormal_frame(params, p))
    assert np.allclose(G, np.eye(3), atol=1e-12 * max(1.0, tau**2))


# --- gradient of the height


@pytest.mark.parametrize("params", PARAM_SETS)
def test_grad_z_duality(params):
    rng = np.random.default_rng(3)
    p = random_points(rng, 10**4, params.kappa)
    v = random_vectors(rng, 10**4)
    assert np.abs(metric_eval(params, p, grad_z(params, p), v) - v.vz).max() < 1e-12


def test_grad_z_norm_and_origin():
    rng = np.random.default_rng(4)
    params = ModelParams(-1.0, 0.7)
    p = random_points(rng, 1000, -1.0)
    z = grad_z(params, p)
    expected = 1 + 4 * params.tau**2 * (p.x**2 + p.y**2)
    assert np.allclose(metric_eval(params, p, z, z), expected, rtol=1e-13)
    z0 = grad_z(params, ModelPoint(0.0, 0.0, 2.0))
    assert tuple(map(float, z0)) == (0.0, 0.0, 1.0)


def test_grad_z_is_xi_when_tau_vanishes():
    rng = np.random.default_rng(5)
    p = random_points(rng, 100, -1.0)
    z = grad_z(ModelParams(-1.0, 0.0), p)
    assert np.all(z.vx == 0) and np.all(z.vy == 0) and np.all(z.vz == 1)


# --- scaling and translation


def test_scaling_identity_and_parameters():
    params = ModelParams(-1.0, 0.4)
    p = ModelPoint(0.1, 0.2, 0.3)
    q, target = scaling_map(1.0, p, params)
    assert tuple(map(float, q)) == tuple(p) and target == params
    _, target = scaling_map(2.0, p, ModelParams(-4.0, 1.0))
    assert (target.kappa, target.tau) == (-1.0, 0.5)


def test_scaling_rejects_bad_mu_and_target_domain():
    with pytest.raises(ValueError):
        scaling_map(0.0, ModelPoint(0, 0, 0), ModelParams())
    with pytest.raises(DomainError):
        # mu p must lie in the target disk: |mu p|^2 < mu^2 / |kappa|
        scaling_map(2.0, ModelPoint(0.99, 0.2, 0.0), ModelParams(-1.0, 0.0))


@pytest.mark.parametrize("mu", [0.5, 2.0, 3.0])
@pytest.mark.parametrize("params", PARAM_SETS)
def test_scaling_pullback(mu, params):
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = ModelPoint(*random_points(rng, 1, params.kappa, 0.8))
        p = ModelPoint(*(float(c[0]) for c in p))
        u = TangentVector(*rng.normal(size=3))
        v = TangentVector(*rng.normal(size=3))
        _, target = scaling_map(mu, p, params)
        pulled = pullback_metric_fd(target, lambda q: scaling_map(mu, q, params)[0], p, u, v)
        assert pulled == pytest.approx(mu**2 * metric_eval(params, p, u, v), abs=1e-8)


def test_vertical_translate():
    p = ModelPoint(0.1, 0.2, 0.3)
    assert vertical_translate(p, 0.0) == p
    assert vertical_translate(p, 1.5) == pytest.approx((0.1, 0.2, 1.8))
    rng = np.random.default_rng(7)
    params = ModelParams(-1.0, 0.6)
    u, v = TangentVector(*rng.normal(size=3)), TangentVector(*rng.normal(size=3))
    assert metric_eval(params, vertical_translate(p, 2.7), u, v) == metric_eval(params, p, u, v)


# --- polar chart


def test_polar_examples():
    assert polar_to_cartesian(PolarPoint(0.0, 1.3)) == (0.0, 0.0)
    x, y = polar_to_cartesian(PolarPoint(2.0, 0.0))
    assert x == pytest.approx(0.761594, abs=1e-6) and y == 0.0
    assert hyperbolic_distance(0.0, 0.0, math.tanh(1.1 / 2), 0.0) == pytest.approx(1.1, rel=1e-14)
    assert cartesian_to_polar(0.0, 0.0) == (0.0, 0.0)


@given(st.floats(1e-3, 8.0), st.floats(0.0, 2 * math.pi, exclude_max=True))
def test_polar_round_trip(rho, th):
    x, y = polar_to_cartesian(PolarPoint(rho, th))
    back = cartesian_to_polar(x, y)
    assert back.rho == pytest.approx(rho, rel=1e-12)
    d = abs(math.remainder(back.theta_ang - th, 2 * math.pi))
    assert d < 1e-12


# --- connection


def symbolic_christoffel(tau):
    """Exact Christoffel symbols of the model metric for kappa = -1."""
    x, y, z = sympy.symbols("x y z", real=True)
    t = sympy.nsimplify(tau)
    lam = 2 / (1 - x**2 - y**2)
    a = sympy.Matrix([2 * t * lam * y, -2 * t * lam * x, 1])
    g = a * a.T + sympy.diag(lam**2, lam**2, 0)
    ginv = g.inv()
    X = (x, y, z)
    gam = [[[sum(ginv[k, l] * (sympy.diff(g[j, l], X[i]) + sympy.diff(g[i, l], X[j])
                                - sympy.diff(g[i, j], X[l])) for l in range(3)) / 2
             for j in range(3)] for i in range(3)] for k in range(3)]
    return sympy.lambdify((x, y), sympy.Array(gam), "numpy")


@pytest.mark.parametrize("tau", [0.0, 0.5])
def test_christoffel_against_symbolic_oracle(tau):
    oracle = symbolic_christoffel(tau)
    params = ModelParams(-1.0, tau)
    for x, y in [(0.1, -0.2), (0.5, 0.3), (-0.6, 0.1)]:
        exact = np.array(oracle(x, y), dtype=float)
        assert np.allclose(christoffel(params, ModelPoint(x, y, 0.0)), exact, atol=1e-7)


def test_christoffel_symmetric_lower_indices():
    gam = christoffel(ModelParams(-1.0, 0.8), ModelPoint(0.3, -0.4, 0.0))
    assert np.abs(gam - np.swapaxes(gam, -1, -2)).max() < 1e-14


def test_christoffel_rejects_step_underflow():
    with pytest.raises(ValueError):
        christoffel(ModelParams(), ModelPoint(0.1, 0.1, 0.0), step=1e-14)


def test_xi_is_parallel_along_itself():
    xi = frame_fields(ModelParams(-1.0, 0.5))[2]
    for params in PARAM_SETS:
        v = covariant_derivative(params, xi, xi, ModelPoint(0.3, 0.1, 0.0))
        assert np.abs(np.array(v, float)).max() < 1e-10


def test_nabla_f1_xi_vanishes_for_product_metric():
    params = ModelParams(-1.0, 0.0)
    f1, _, xi = frame_fields(params)
    v = covariant_derivative(params, f1, xi, ModelPoint(0.2, -0.3, 0.0))
    assert np.abs(np.array(v, float)).max() < 1e-10


@pytest.mark.parametrize("tau", [0.0, 0.25, 0.5, 1.0])
def test_bundle_curvature_is_twice_tau(tau):
    params = ModelParams(-1.0, tau)
    vals = bundle_curvature(params, ModelPoint(0.2, -0.3, 0.1))
    assert np.allclose(vals, 2 * tau, atol=1e-8)
    vals0 = bundle_curvature(ModelParams(0.0, tau), ModelPoint(0.4, 0.7, 0.0))
    assert np.allclose(vals0, 2 * tau, atol=1e-8)


def _torsion(params, p, h):
    f1, f2, _ = frame_fields(params)
    a = np.array(covariant_derivative(params, f1, f2, p, h), float)
    b = np.array(covariant_derivative(params, f2, f1, p, h), float)
    return np.abs(a - b - np.array(lie_bracket(f1, f2, p, h), float)).max()


def _compat(params, p, h):
    """X (Y, Z) - (nabla_X Y, Z) - (Y, nabla_X Z) with X = F1, Y = F2, Z = d_x."""
    f1, f2, _ = frame_fields(params)
    Zc = lambda q: (1.0 + q.y, q.x, 0.0)  # noqa: E731
    X = np.array(f1(p), float)
    base = np.array(p, float)

    def g_yz(q):
        return metric_eval(params, q, TangentVector(*f2(q)), TangentVector(*Zc(q)))

    d = (g_yz(ModelPoint(*(base + h * X))) - g_yz(ModelPoint(*(base - h * X)))) / (2 * h)
    t1 = metric_eval(params, p, covariant_derivative(params, f1, f2, p, h), TangentVector(*Zc(p)))
    t2 = metric_eval(params, p, TangentVector(*f2(p)), covariant_derivative(params, f1, Zc, p, h))
    return abs(d - t1 - t2)


@pytest.mark.parametrize("check", [_torsion, _compat])
def test_connection_residuals_are_second_order(check):
    params = ModelParams(-1.0, 0.5)
    p = ModelPoint(0.35, -0.25, 0.0)
    errs = [check(params, p, h) for h in (4e-2, 2e-2, 1e-2)]
    assert errs[-1] < 1e-3
    for e0, e1 in zip(errs, errs[1:]):
        if e1 > 1e-11:
            assert math.log2(e0 / e1) > 1.9
