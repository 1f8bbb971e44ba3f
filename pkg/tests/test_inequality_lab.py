from fractions import Fraction

import numpy as np
import pytest

from magtrace.discretization import (
    BoundaryGrid, Cutoff, HalfSpaceGrid, HalfSpaceProduct, PairQuadrature, make_bump,
    make_modulated_bump,
)
from magtrace.field_model import (
    Polynomial, landau_field, polynomial_field, random_polynomial_gauge, zero_field,
)
from magtrace.inequality_lab import (
    RatioReport, _assemble, constant_field_trace_report, extension_inequality_report, loglog_slope,
    measure_moments, phase_gap_constant, poincare_scaling, refinement_ladder,
    trace_inequality_report, variant_gap,
)
from magtrace.potential import LEBESGUE, MIDPOINT, SIMPSON, NonConstantFieldError

U_DATUM = make_modulated_bump([0.0], 1.0, [2.0])


def landau(beta):
    return landau_field(beta, 2, (0, 1), "halfspace")


def ladder(a, n=64, levels=2):
    return refinement_ladder(HalfSpaceGrid(BoundaryGrid(1, 2.0, n), T=a, K=80, r=0.9), levels)


def _poly1(coeffs):
    return polynomial_field([Polynomial.from_dict(1, {(k,): c for k, c in enumerate(coeffs)})])


# --- slope fitting and moments


def test_loglog_examples():
    x = np.geomspace(0.1, 10, 6)
    assert loglog_slope(list(zip(x, x ** 2))).slope == pytest.approx(2.0, abs=1e-10)
    rep = loglog_slope(list(zip(x, np.full(6, 3.0))))
    assert rep.slope == pytest.approx(0.0, abs=1e-12) and 0 <= rep.r_squared <= 1
    rng = np.random.default_rng(2024)
    y = 3 * x ** 0.5 * (1 + 0.01 * rng.standard_normal(6))
    assert 0.45 <= loglog_slope(list(zip(x, y))).slope <= 0.55


def test_loglog_errors():
    with pytest.raises(ValueError):
        loglog_slope([(1, 1), (2, 2), (3, 3)])
    with pytest.raises(ValueError):
        loglog_slope([(1, 1), (2, 0), (3, 3), (4, 4)])


def test_measure_moments():
    assert measure_moments(LEBESGUE, 2, exact=True) == [1, Fraction(1, 2), Fraction(1, 3)]
    assert measure_moments(MIDPOINT, 2, exact=True) == [1, Fraction(1, 2), Fraction(1, 4)]
    assert measure_moments(SIMPSON, 4, exact=True) == [1, Fraction(1, 2), Fraction(1, 3),
                                                       Fraction(1, 4), Fraction(5, 24)]
    with pytest.raises(ValueError):
        measure_moments(LEBESGUE, -1)


# --- ratio reports


def test_ratio_report_status():
    rep = _assemble([(32, 1.0, 2.0), (64, 1.1, 2.0)], {})
    assert rep.status == "CONVERGED" and rep.ratio == 0.55
    bad = _assemble([(32, 1.0, 2.0), (64, 2.0, 2.0)], {})
    assert bad.status == "UNCONVERGED"
    single = _assemble([(32, 1.0, 2.0)], {})
    assert single.status == "UNCONVERGED"
    zero = _assemble([(32, 0.0, 0.0), (64, 0.0, 0.0)], {})
    assert zero.ratio == 0 and "ZERO_DATA" in zero.flags
    assert isinstance(rep, RatioReport) and rep.to_dict()["refinement_trace"] == [[32, 0.5], [64, 0.55]]


def test_trace_report_zero_data():
    zero = make_bump([0.0], 1.0, scale=0.0)
    rep = trace_inequality_report(zero, landau(1.0), 0.5, 2.0, 1.0, ladder(1.0, 32))
    assert rep.lhs == rep.rhs == 0 and rep.ratio == 0 and "ZERO_DATA" in rep.flags


def test_trace_report_zero_field_sanity():
    U = HalfSpaceProduct(make_bump([0.0], 1.0), Cutoff(0.5))
    rep = trace_inequality_report(U, zero_field(2), 0.5, 2.0, 0.0, ladder(0.5))
    assert 0.01 <= rep.ratio <= 100
    assert rep.drift < 0.10 and rep.status == "CONVERGED"


def test_trace_report_beta_robustness():
    ratios = [trace_inequality_report(U_DATUM, landau(b), 0.5, 2.0, b, ladder(b ** -0.5)).ratio
              for b in (1.0, 4.0, 16.0)]
    assert max(ratios) <= 3 * ratios[0]


def test_trace_report_rejects_small_beta():
    with pytest.raises(ValueError):
        trace_inequality_report(U_DATUM, landau(4.0), 0.5, 2.0, 1.0, ladder(1.0, 32))


def test_extension_report_examples():
    zero = make_bump([0.0], 1.0, scale=0.0)
    z = extension_inequality_report(zero, landau(1.0), 0.5, 2.0, 1.0, ladder(1.0, 32))
    assert z.ratio == 0 and "ZERO_DATA" in z.flags
    rep = extension_inequality_report(make_bump([0.0], 1.0), landau(1.0), 0.5, 2.0, 1.0, ladder(1.0))
    assert np.isfinite(rep.ratio) and np.isfinite(rep.secondary.ratio)
    assert rep.drift <= 0.10 and rep.secondary.drift <= 0.10


def test_extension_report_lp_side_bounded_in_beta():
    sec = [extension_inequality_report(U_DATUM, landau(b), 0.5, 2.0, b, ladder(b ** -0.5)).secondary.ratio
           for b in (1.0, 4.0, 16.0)]
    assert max(sec) / min(sec) <= 3


def test_reports_gauge_invariant():
    rng = np.random.default_rng(8)
    G = random_polynomial_gauge(2, 2, rng)
    for fn in (trace_inequality_report, extension_inequality_report):
        a = fn(U_DATUM, landau(4.0), 0.5, 2.0, 4.0, ladder(0.5, 32))
        b = fn(U_DATUM, landau(4.0), 0.5, 2.0, 4.0, ladder(0.5, 32), gauge=G)
        assert b.lhs == pytest.approx(a.lhs, rel=1e-8) and b.rhs == pytest.approx(a.rhs, rel=1e-8)


# --- constant-field trace


def test_constant_field_report():
    rep = constant_field_trace_report(U_DATUM, landau(4.0), 0.5, 2.0, ladder(0.5))
    assert np.isfinite(rep.ratio) and rep.drift <= 0.15
    assert "COMBINATION_CHECK_FAILED" not in rep.flags
    shifted = rep.details["levels"][-1]["shifted"]
    assert shifted["1.0"] != shifted["2.0"]


def test_constant_field_zero_dA():
    rep = constant_field_trace_report(U_DATUM, zero_field(2), 0.5, 2.0, ladder(1.0, 32))
    ref = trace_inequality_report(U_DATUM, zero_field(2), 0.5, 2.0, 0.0, ladder(1.0, 32))
    assert rep.params["beta"] == 0
    assert rep.lhs == pytest.approx(ref.lhs, rel=1e-12)
    assert phase_gap_constant(np.zeros(1), 0.5, 2.0) == 0


def test_constant_field_rejects_nonconstant():
    F = polynomial_field([Polynomial.from_dict(2, {(0, 2): 1.0}), Polynomial(2)])
    with pytest.raises(NonConstantFieldError):
        constant_field_trace_report(U_DATUM, F, 0.5, 2.0, ladder(1.0, 32))


# --- scaling laws


def test_poincare_scaling_d2():
    g = BoundaryGrid(2, 3.5, 64)
    sc = PairQuadrature.for_grid(g, method="mc", seed=7)
    u = make_bump([0.0, 0.0], 3.0)
    rep = poincare_scaling(u, lambda b: landau_field(b, 2, (0, 1), "symmetric"), 0.5, 2.0,
                           [1.0, 2.0, 4.0, 8.0, 16.0], g, sc)
    assert rep.threshold == pytest.approx(0.35)
    assert rep.passed and rep.r_squared >= 0.9


def test_poincare_rejects_nonconstant_family():
    g = BoundaryGrid(2, 2.0, 16)
    quad = lambda b: polynomial_field([Polynomial(2), Polynomial.from_dict(2, {(2, 0): b})])
    with pytest.raises(NonConstantFieldError):
        poincare_scaling(make_bump([0.0, 0.0], 1.0), quad, 0.5, 2.0, [1, 2, 4, 8, 16], g)


SCALES = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0]


def test_variant_gap_identical_measures():
    rep = variant_gap(U_DATUM, _poly1([0.0, 0.0, 1.0]), MIDPOINT, MIDPOINT, 0.5, 2.0, SCALES,
                      BoundaryGrid(1, 2.0, 32))
    assert "ZERO_GAP" in rep.flags and rep.passed


def test_variant_gap_affine_zero():
    rep = variant_gap(U_DATUM, _poly1([0.5, 1.0]), LEBESGUE, MIDPOINT, 0.5, 2.0, SCALES,
                      BoundaryGrid(1, 2.0, 32))
    assert all(e["gap"] <= 1e-10 for e in rep.details["levels"])


@pytest.mark.parametrize("mu2,field,k", [(MIDPOINT, [0.0, 0.0, 1.0], 2),
                                         (SIMPSON, [0.0, 0.0, 0.0, 0.0, 1.0], 4)])
def test_variant_gap_slopes(mu2, field, k):
    rep = variant_gap(U_DATUM, _poly1(field), LEBESGUE, mu2, 0.5, 2.0, SCALES, BoundaryGrid(1, 2.0, 64))
    assert rep.params["k"] == k
    assert rep.threshold == pytest.approx(0.5 / (k + 1) - 0.15)
    assert rep.passed


def test_variant_gap_validation():
    g = BoundaryGrid(1, 2.0, 32)
    with pytest.raises(ValueError):
        variant_gap(U_DATUM, _poly1([0.0, 0.0, 1.0]), LEBESGUE, MIDPOINT, 0.5, 2.0, SCALES, g, k=3)
    with pytest.raises(ValueError):
        variant_gap(U_DATUM, _poly1([0.0, 0.0, 1.0]), LEBESGUE, MIDPOINT, 0.5, 2.0, [0.1, 0.2, 0.4, 0.8], g)


def test_poincare_gauge_invariant():
    g = BoundaryGrid(2, 3.5, 32)
    sc = PairQuadrature.for_grid(g, method="mc", seed=7)
    fam = lambda b: landau_field(b, 2, (0, 1), "symmetric")
    G = random_polynomial_gauge(2, 2, np.random.default_rng(3))
    betas = [1.0, 2.0, 4.0, 8.0, 16.0]
    a = poincare_scaling(make_bump([0.0, 0.0], 3.0), fam, 0.5, 2.0, betas, g, sc)
    b = poincare_scaling(make_bump([0.0, 0.0], 3.0), fam, 0.5, 2.0, betas, g, sc, gauge=G)
    assert b.slope == pytest.approx(a.slope, abs=1e-8)
    assert b.slope > 0
