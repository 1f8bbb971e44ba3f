import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magtrace.field_model import (
    DimensionError, Polynomial, TwoForm, constant_field, eval_potential, exterior_derivative,
    fd_jacobian, gauge_transform, is_constant_dA, landau_field, polynomial_field, polynomial_gauge,
    random_polynomial, random_polynomial_gauge, sup_norm_dA, zero_field, reflected_field,
    parallel_field,
)


def test_eval_examples():
    assert np.all(eval_potential(zero_field(2), [3.0, -1.0]) == 0)
    assert np.allclose(eval_potential(constant_field([1.0, 2.0]), [5.0, 5.0]), [1, 2])
    assert np.allclose(eval_potential(landau_field(1.0, 2), [3.0, 7.0]), [0, 3])


def test_eval_dimension_mismatch():
    with pytest.raises(DimensionError):
        eval_potential(zero_field(2), [1.0, 2.0, 3.0])


def test_exterior_derivative_examples():
    assert TwoForm(exterior_derivative(zero_field(3), np.zeros(3)).components).norm() == 0
    rng = np.random.default_rng(0)
    A = landau_field(1.0, 2)
    for x in rng.uniform(-3, 3, (5, 2)):
        F = exterior_derivative(A, x).components
        assert F[0, 1] == pytest.approx(1.0, abs=1e-14)
        assert F[1, 0] == pytest.approx(-1.0, abs=1e-14)
    phi = random_polynomial(3, 3, rng)
    grad = polynomial_field([phi.derivative(i) for i in range(3)])
    assert np.abs(exterior_derivative(grad, rng.uniform(-1, 1, 3)).components).max() < 1e-10


def test_fd_exterior_derivative_second_order():
    rng = np.random.default_rng(1)
    A = polynomial_field([random_polynomial(2, 3, rng) for _ in range(2)])
    x = rng.uniform(-1, 1, 2)
    exact = A.jacobian(x)
    errs = [np.abs(fd_jacobian(A, x, h) - exact).max() for h in (1e-2, 5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_fd_matches_analytic_on_random_points():
    rng = np.random.default_rng(2)
    A = polynomial_field([random_polynomial(3, 3, rng) for _ in range(3)])
    h = 1e-4
    for x in rng.uniform(-1, 1, (100, 3)):
        num = exterior_derivative(A, x, h=h).components
        ana = exterior_derivative(A, x).components
        assert np.abs(num - ana).max() < 1e-6


def test_gauge_examples():
    z = zero_field(2)
    c = polynomial_gauge(Polynomial.constant(2, 3.0))
    assert np.allclose(gauge_transform(z, c)(np.array([[1.0, 2.0], [0.0, 0.5]])), 0)
    lin = polynomial_gauge(Polynomial.linear([2.0, -1.0]))
    assert np.allclose(gauge_transform(z, lin)(np.array([4.0, 5.0])), [2, -1])
    rng = np.random.default_rng(3)
    A = landau_field(2.0, 2)
    G = random_polynomial_gauge(2, 2, rng)
    B = gauge_transform(A, G)
    for x in rng.uniform(-2, 2, (10, 2)):
        assert np.abs(exterior_derivative(A, x).components - exterior_derivative(B, x).components).max() <= 1e-10


def test_sup_norm_examples():
    assert sup_norm_dA(zero_field(2), [[-1, 1], [-1, 1]], 3) == 0
    assert sup_norm_dA(landau_field(1.0, 2), [[-5, 5], [0, 2]], 4) == pytest.approx(1.0)
    A = polynomial_field([Polynomial(2), Polynomial.from_dict(2, {(2, 0): 1.0})])
    assert sup_norm_dA(A, [[0, 2], [0, 2]], 9) == pytest.approx(4.0)


def test_sup_norm_monotone_nested():
    A = polynomial_field([Polynomial(2), Polynomial.from_dict(2, {(3, 0): 1.0, (0, 1): 1.0})])
    box = [[-0.7, 1.3], [0, 1]]
    vals = [sup_norm_dA(A, box, n) for n in (3, 5, 9, 17)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_sup_norm_rejects_empty_box():
    with pytest.raises(ValueError):
        sup_norm_dA(zero_field(2), [[1, 1], [0, 1]], 3)


@pytest.mark.parametrize("gauge", ["standard", "symmetric", "halfspace"])
def test_landau_constant_two_form(gauge):
    A = landau_field(3.0, 3, (0, 2), gauge)
    assert is_constant_dA(A, [[-1, 1]] * 3)
    F = exterior_derivative(A, np.array([0.3, -0.2, 0.5])).components
    assert TwoForm(F).norm() == pytest.approx(3.0)


def test_reflected_and_parallel():
    A = landau_field(2.0, 2, (0, 1), "halfspace")
    R = reflected_field(A)
    assert np.allclose(R(np.array([0.3, 0.4])), [0.8, 0.0])
    assert np.allclose(parallel_field(A)(np.array([[0.5]])), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gauge_never_changes_dA(seed):
    rng = np.random.default_rng(seed)
    A = polynomial_field([random_polynomial(3, 2, rng) for _ in range(3)])
    G = random_polynomial_gauge(3, 3, rng)
    x = rng.uniform(-1, 1, 3)
    assert np.abs(exterior_derivative(A, x).components
                  - exterior_derivative(gauge_transform(A, G), x).components).max() <= 1e-10


def test_polynomial_json_roundtrip():
    rng = np.random.default_rng(4)
    P = random_polynomial(2, 3, rng)
    assert Polynomial.from_json(2, P.to_json()) == P
