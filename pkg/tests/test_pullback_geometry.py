import dataclasses
import math

import numpy as np
import pytest

from magtrace.discretization import Gaussian
from magtrace.field_model import (
    Polynomial, constant_field, gauge_transform, landau_field, polynomial_field, polynomial_gauge,
    random_polynomial, zero_field,
)
from magtrace.inequality_lab import loglog_slope
from magtrace.pullback_geometry import (
    AntipodalError, ChartDomainError, azimuthal_field, chain_rule_residual,
    generic_tangential_field, geodesic_distance, geodesic_potential, gradient_field,
    identity_chart, linear_chart, pullback_potential, quadratic_chart, stereographic_circle,
    stereographic_sphere, transport_gap,
)

SPHERE = stereographic_sphere(1.0)
U = Gaussian([0.1, -0.2], 0.7, wavevector=[1.0, 0.5])


def test_pullback_identity_and_linear():
    A = landau_field(1.0, 2)
    x = np.array([[0.3, -0.4], [0.1, 0.2]])
    assert np.array_equal(pullback_potential(identity_chart(2), A)(x), A(x))
    M = np.array([[2.0, 1.0], [-0.5, 3.0]])
    a = np.array([0.7, -1.1])
    got = pullback_potential(linear_chart(M), constant_field(a))(x)
    assert np.allclose(got, M.T @ a, atol=1e-15)


def test_pullback_sphere_origin():
    A = generic_tangential_field(SPHERE, np.random.default_rng(3))
    z0 = SPHERE.forward(np.zeros(2))
    assert np.allclose(z0, 0, atol=1e-15)
    # D psi(0) maps e_1 -> 2 e_1 and e_2 -> 2 e_2 in the tangent plane at the origin
    assert np.allclose(pullback_potential(SPHERE, A)(np.zeros(2)), 2 * A(z0)[1:], atol=1e-10)


def test_differential_matches_fd():
    rng = np.random.default_rng(0)
    for chart in (SPHERE, quadratic_chart(3, 0.2)):
        x = rng.uniform(-0.3, 0.3, chart.dim)
        errs = []
        for h in (1e-2, 5e-3):
            fd = np.stack([(chart.forward(x + h * e) - chart.forward(x - h * e)) / (2 * h)
                           for e in np.eye(chart.dim)], -1)
            errs.append(np.max(np.abs(fd - chart.differential(x))))
        # central differences are exact for the quadratic chart
        assert errs[0] / errs[1] > 3.5 if chart is SPHERE else max(errs) < 1e-12


def test_chain_rule_residuals():
    rng = np.random.default_rng(1)
    assert chain_rule_residual(identity_chart(2), landau_field(1.0, 2), U, [0.2, 0.1]) < 1e-6
    Q = quadratic_chart(2, 0.2)
    assert chain_rule_residual(Q, zero_field(2), U, [0.3, -0.5]) <= 1e-6
    pts = rng.uniform(-0.7, 0.7, (20, 2))
    assert max(chain_rule_residual(Q, landau_field(1.0, 2), U, x) for x in pts) <= 1e-6


def test_chain_rule_rejects_sphere():
    G3 = Gaussian([0.0, 0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        chain_rule_residual(SPHERE, zero_field(3), G3, [0.1, 0.1])


def test_pullback_commutes_with_gauge():
    rng = np.random.default_rng(2)
    Q = quadratic_chart(2, 0.15)
    A = polynomial_field([random_polynomial(2, 2, rng) for _ in range(2)])
    phi = random_polynomial(2, 3, rng)
    G = polynomial_gauge(phi)
    x = rng.uniform(-0.6, 0.6, (10, 2))
    lhs = pullback_potential(Q, gauge_transform(A, G))(x)
    h = 1e-5
    grad_comp = np.stack([(phi(Q.forward(x + h * e)) - phi(Q.forward(x - h * e))) / (2 * h)
                          for e in np.eye(2)], -1)
    rhs = pullback_potential(Q, A)(x) + grad_comp
    assert np.max(np.abs(lhs - rhs)) < 1e-8
    exact = pullback_potential(Q, A)(x) + np.einsum("nab,na->nb", Q.differential(x), G.gradient(Q.forward(x)))
    assert np.max(np.abs(lhs - exact)) < 1e-10


def test_geodesic_examples():
    A = generic_tangential_field(SPHERE, np.random.default_rng(4))
    x = np.array([0.1, 0.2])
    assert geodesic_potential(SPHERE, A, x, x) == 0
    assert geodesic_potential(SPHERE, zero_field(3), x, [-0.2, 0.3]) == 0
    c = 1.7
    for a, b in ((-0.3, 0.4), (0.05, 0.5)):
        za, zb = SPHERE.forward([a, 0.0]), SPHERE.forward([b, 0.0])
        alpha = math.acos(np.dot(za - SPHERE.center, zb - SPHERE.center))
        assert abs(geodesic_potential(SPHERE, azimuthal_field(SPHERE, c), [a, 0.0], [b, 0.0])) == \
            pytest.approx(c * alpha, rel=1e-12)
    assert SPHERE.injectivity_radius == pytest.approx(math.pi)


def test_geodesic_additive():
    A = generic_tangential_field(SPHERE, np.random.default_rng(5))
    x, y = np.array([-0.3, 0.2]), np.array([0.4, -0.1])
    za, zb = SPHERE.forward(x) - SPHERE.center, SPHERE.forward(y) - SPHERE.center
    om = math.acos(np.dot(za, zb))
    zm = SPHERE.center + (math.sin(0.4 * om) * za + math.sin(0.6 * om) * zb) / math.sin(om)
    m = SPHERE.inverse(zm)
    whole = geodesic_potential(SPHERE, A, x, y)
    parts = geodesic_potential(SPHERE, A, x, m) + geodesic_potential(SPHERE, A, m, y)
    assert abs(whole - parts) <= 1e-10
    assert geodesic_distance(SPHERE, x, m) + geodesic_distance(SPHERE, m, y) == \
        pytest.approx(geodesic_distance(SPHERE, x, y), rel=1e-12)


def test_antipodal_and_domain_errors():
    wide = dataclasses.replace(SPHERE, domain_radius=1.5)
    with pytest.raises(AntipodalError):
        geodesic_potential(wide, azimuthal_field(wide, 1.0), [1.0, 0.0], [-1.0, 0.0])
    with pytest.raises(ChartDomainError):
        transport_gap(SPHERE, azimuthal_field(SPHERE, 1.0), [0.0, 0.0], [0.7, 0.0])


def test_transport_gap_examples():
    A = generic_tangential_field(SPHERE, np.random.default_rng(6))
    x = np.array([0.05, -0.1])
    assert transport_gap(SPHERE, A, x, x) == 0
    closed = gradient_field(SPHERE, Polynomial.from_dict(3, {(1, 1, 0): 1.0, (0, 0, 2): -0.5, (0, 1, 0): 2.0}))
    rng = np.random.default_rng(7)
    for a, b in rng.uniform(-0.4, 0.4, (5, 2, 2)):
        assert transport_gap(SPHERE, closed, a, b) <= 1e-10


def test_transport_cubic_law():
    A = generic_tangential_field(SPHERE, np.random.default_rng(42))
    x = np.array([0.05, -0.1])
    d = np.array([0.6, 0.8])
    r = np.geomspace(0.2, 0.005, 8)
    gaps = [transport_gap(SPHERE, A, x, x + t * d) for t in r]
    assert loglog_slope(list(zip(r, gaps))).slope >= 2.85


def test_circle_transport_vanishes():
    circ = stereographic_circle(1.3)
    rng = np.random.default_rng(9)
    A = polynomial_field([random_polynomial(2, 3, rng) for _ in range(2)])
    for a, b in rng.uniform(-0.5, 0.5, (10, 2)):
        assert transport_gap(circ, A, [a], [b]) <= 1e-10
