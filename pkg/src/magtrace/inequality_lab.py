"""Both sides of each inequality, their ratios under refinement, and exponent fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .discretization import (
    BoundaryGrid,
    Gauged,
    HalfSpaceGrid,
    PairQuadrature,
    Restriction,
    TestFunction,
    sample,
)
from .field_model import (
    PotentialField,
    gauge_transform,
    is_constant_dA,
    parallel_field,
    sup_norm_dA,
    exterior_derivative,
)
from .norms import lp_norm, magnetic_gagliardo, shifted_gagliardo, weighted_energies
from .potential import LEBESGUE, QuadratureMeasure, SegmentRule, constant_two_form, NonConstantFieldError
from .trace_extension import ExtensionKernel, extend_grid

DRIFT_TOL = 0.15
SLOPE_TOL = 0.15


# ---------------------------------------------------------------------------
# report types


@dataclass
class RatioReport:
    lhs: float
    rhs: float
    ratio: float
    params: dict
    refinement_trace: List[Tuple[int, float]]
    status: str = "UNCONVERGED"
    flags: List[str] = dc_field(default_factory=list)
    secondary: Optional["RatioReport"] = None
    details: dict = dc_field(default_factory=dict)

    @property
    def drift(self) -> float:
        tr = self.refinement_trace
        if len(tr) < 2:
            return math.inf
        last, prev = tr[-1][1], tr[-2][1]
        if last == prev:
            return 0.0
        return abs(last - prev) / abs(last) if last else math.inf

    @property
    def converged(self) -> bool:
        own = self.status == "CONVERGED"
        return own and (self.secondary is None or self.secondary.converged)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "params": self.params,
                "refinement_trace": [list(t) for t in self.refinement_trace],
                "drift": self.drift if math.isfinite(self.drift) else None,
                "status": self.status, "flags": list(self.flags),
                "secondary": self.secondary.to_dict() if self.secondary else None,
                "details": self.details}


def _ratio(lhs: float, rhs: float, flags: List[str]) -> float:
    if rhs == 0:
        if lhs == 0:
            if "ZERO_DATA" not in flags:
                flags.append("ZERO_DATA")
            return 0.0
        return math.inf
    return lhs / rhs


def _assemble(rows, params, details=None) -> RatioReport:
    """rows: list of (resolution, lhs, rhs)."""
    flags: List[str] = []
    trace = [(int(n), _ratio(l, r, flags)) for n, l, r in rows]
    n, lhs, rhs = rows[-1]
    rep = RatioReport(lhs, rhs, trace[-1][1], params, trace, flags=flags, details=details or {})
    finite = all(math.isfinite(t[1]) for t in trace)
    rep.status = "CONVERGED" if finite and len(trace) >= 2 and rep.drift <= DRIFT_TOL else "UNCONVERGED"
    return rep


@dataclass
class SlopeReport:
    points: List[Tuple[float, float]]
    slope: Optional[float]
    r_squared: Optional[float]
    intercept: Optional[float] = None
    params: dict = dc_field(default_factory=dict)
    threshold: Optional[float] = None
    flags: List[str] = dc_field(default_factory=list)
    details: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> Optional[bool]:
        if self.threshold is None:
            return None
        if "ZERO_GAP" in self.flags:
            return True
        return self.slope is not None and self.slope >= self.threshold

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "slope": self.slope,
                "r_squared": self.r_squared, "intercept": self.intercept, "params": self.params,
                "threshold": self.threshold, "passed": self.passed, "flags": list(self.flags),
                "details": self.details}


def loglog_slope(points: Sequence[Tuple[float, float]]) -> SlopeReport:
    """Ordinary least squares of log y against log x."""
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least four points")
    if np.any(pts <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return SlopeReport([(float(a), float(b)) for a, b in zip(lx, ly)], float(slope), r2, float(icpt),
                       details={"raw": pts.tolist()})


def measure_moments(mu: QuadratureMeasure, up_to: int, exact: bool = False) -> list:
    if up_to < 0:
        raise ValueError("up_to must be >= 0")
    return [mu.moment(j, exact=exact) for j in range(up_to + 1)]


def matching_moments(mu1: QuadratureMeasure, mu2: QuadratureMeasure, limit: int = 12) -> int:
    """Number k such that moments 0..k-1 agree."""
    for j in range(limit):
        a, b = mu1.moment(j, exact=True), mu2.moment(j, exact=True)
        if abs(float(a) - float(b)) > 1e-14 * max(1.0, abs(float(a))):
            return j
    return limit


# ---------------------------------------------------------------------------
# helpers


def weight_exponent(s: float, p: float) -> float:
    return 1.0 - (1.0 - s) * p


def refinement_ladder(grid, levels: int = 2) -> list:
    out = [grid]
    for _ in range(levels - 1):
        out.append(out[-1].refine())
    return out


def _with_gamma(grid: HalfSpaceGrid, s: float, p: float) -> HalfSpaceGrid:
    g = weight_exponent(s, p)
    return grid if grid.gamma == g else replace(grid, gamma=g)


def _check_beta(field: PotentialField, beta: float, grid: HalfSpaceGrid) -> float:
    box = np.concatenate([grid.base.box(), [[0.0, grid.T]]])
    measured = sup_norm_dA(field, box, 5)
    if beta < measured * (1 - 1e-9):
        raise ValueError(f"beta={beta} is below the measured sup of |dA| ({measured})")
    return measured


def _kernel(beta: float, d: int) -> ExtensionKernel:
    return ExtensionKernel.from_beta(beta, d) if beta > 0 else ExtensionKernel(d, 1.0)


# ---------------------------------------------------------------------------
# trace and extension inequalities


def trace_inequality_report(datum, field: PotentialField, s: float, p: float, beta: float,
                            grids: Sequence[HalfSpaceGrid], mu: QuadratureMeasure = LEBESGUE,
                            rule: Optional[SegmentRule] = None, threads: Optional[int] = None,
                            gauge=None) -> RatioReport:
    """lhs = |U(.,0)|^p_{W^{s,p}}; rhs = int (|grad_A U|^p + beta^{p/2}|U|^p) t^gamma.

    ``datum`` is either a half-space test function U or boundary data u, in which case
    U is the phase extension of u.  Secondary ratio: ||u||_p^p against
    (int |grad_A U|^p t^gamma)^{1-s} (int |U|^p t^gamma)^s.
    """
    grids = [_with_gamma(g, s, p) for g in grids]
    d = grids[0].base.d
    if gauge is not None:
        field = gauge_transform(field, gauge)
        datum = Gauged(datum, gauge) if datum.dimension == d + 1 else Gauged(datum, _boundary(gauge))
    measured = _check_beta(field, beta, grids[-1])
    par = parallel_field(field)
    analytic = datum.dimension == d + 1
    u = Restriction(datum) if analytic else datum
    rows, rows2, per = [], [], []
    for g in grids:
        sem = magnetic_gagliardo(u, par, s, p, mu, grid=g.base, rule=rule, beta=beta, threads=threads)
        if analytic:
            eg, e0 = weighted_energies(datum, field, p, g, rule)
        else:
            U = extend_grid(u, field, _kernel(beta, d), g, rule, threads)
            eg, e0 = weighted_energies(U, field, p, rule=rule)
        up = lp_norm(u, p, g.base) ** p
        rhs = eg + beta ** (p / 2) * e0
        rows.append((g.base.n, sem.value_p, rhs))
        rows2.append((g.base.n, up, eg ** (1 - s) * e0 ** s))
        per.append({"n": g.base.n, "seminorm_p": sem.value_p, "tail_bound": sem.tail_bound,
                    "energy_grad": eg, "energy_zero": e0, "lp_p": up})
    params = {"s": s, "p": p, "beta": beta, "gamma": weight_exponent(s, p), "mu": mu.name_tag,
              "field": field.label, "datum": datum.describe(), "grids": [g.describe() for g in grids],
              "measured_sup_dA": measured, "extension": not analytic}
    rep = _assemble(rows, params, {"levels": per})
    rep.secondary = _assemble(rows2, {"inequality": "boundary L^p interpolation"})
    return rep


def _boundary(gauge):
    from .discretization import BoundaryGauge
    return BoundaryGauge(gauge)


def extension_inequality_report(u: TestFunction, field: PotentialField, s: float, p: float,
                                beta: float, grids: Sequence[HalfSpaceGrid],
                                rule: Optional[SegmentRule] = None, threads: Optional[int] = None,
                                gauge=None) -> RatioReport:
    """lhs = int |grad_A Ext u|^p t^gamma; rhs = |u|^p_{W^{s,p}} + beta^{sp/2}||u||^p.
    Secondary: int |Ext u|^p t^gamma against beta^{-(1-s)p/2}||u||^p."""
    grids = [_with_gamma(g, s, p) for g in grids]
    d = grids[0].base.d
    if gauge is not None:
        field = gauge_transform(field, gauge)
        u = Gauged(u, _boundary(gauge))
    measured = _check_beta(field, beta, grids[-1])
    par = parallel_field(field)
    rows, rows2, per = [], [], []
    for g in grids:
        U = extend_grid(u, field, _kernel(beta, d), g, rule, threads)
        eg, e0 = weighted_energies(U, field, p, rule=rule)
        sem = magnetic_gagliardo(u, par, s, p, grid=g.base, rule=rule, beta=beta, threads=threads)
        up = lp_norm(u, p, g.base) ** p
        rows.append((g.base.n, eg, sem.value_p + beta ** (s * p / 2) * up))
        rows2.append((g.base.n, e0, (beta ** (-(1 - s) * p / 2) if beta > 0 else 1.0) * up))
        per.append({"n": g.base.n, "seminorm_p": sem.value_p, "energy_grad": eg, "energy_zero": e0,
                    "lp_p": up})
    params = {"s": s, "p": p, "beta": beta, "gamma": weight_exponent(s, p), "field": field.label,
              "datum": u.describe(), "grids": [g.describe() for g in grids],
              "measured_sup_dA": measured}
    rep = _assemble(rows, params, {"levels": per})
    rep.secondary = _assemble(rows2, {"inequality": "L^p bound of the extension"})
    return rep


# ---------------------------------------------------------------------------
# constant magnetic field


@lru_cache(maxsize=None)
def _oscillation_integral(p: float, alpha: float, periods: int = 4000) -> float:
    """M = int_0^inf (2|sin tau|)^p tau^{-1-alpha} d tau."""
    from scipy.integrate import quad
    first = quad(lambda t: (2 * abs(math.sin(t))) ** p * t ** (-1 - alpha), 0, math.pi,
                 limit=200, epsabs=1e-14, epsrel=1e-13)[0]
    x, w = np.polynomial.legendre.leggauss(64)
    k = np.arange(1, periods)[:, None]
    tt = (k + (x[None] + 1) / 2) * math.pi
    mid = float(np.sum((2 * np.abs(np.sin(tt))) ** p * tt ** (-1 - alpha) * w[None] * math.pi / 2))
    mean = 2 ** p * math.gamma((p + 1) / 2) / (math.sqrt(math.pi) * math.gamma(p / 2 + 1))
    tail = mean * (periods * math.pi) ** (-alpha) / alpha
    return first + mid + tail


def phase_gap_constant(b: np.ndarray, s: float, p: float) -> float:
    """K(b) = int_{R^d} |e^{i|h| b.h} - 1|^p |h|^{-d-sp} dh."""
    b = np.asarray(b, float)
    d = b.size
    alpha = s * p / 2
    nb = float(np.linalg.norm(b))
    if nb == 0:
        return 0.0
    M = _oscillation_integral(float(p), float(alpha))
    if d == 1:
        ang = 2 * nb ** alpha
    else:
        n = 4096
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        ang = float(np.mean(np.abs(np.cos(th)) ** alpha)) * 2 * np.pi * nb ** alpha
    return 0.5 * 2 ** (-alpha) * M * ang


def constant_field_trace_report(datum: TestFunction, field: PotentialField, s: float, p: float,
                                grids: Sequence[HalfSpaceGrid], lambdas=(1.0, 2.0),
                                rule: Optional[SegmentRule] = None, threads: Optional[int] = None,
                                gauge=None) -> RatioReport:
    """lhs = |u|^p_{W^{s,p}_{A^par}} + ||dA||^{sp/2} ||u||^p; rhs = int |grad_A U|^p t^gamma
    with U the phase extension at scale ||dA||^{-1/2}.

    Details carry the shifted seminorms S_lambda, the phase-gap term G = K(b)||u||^p
    and the two triangle-combination checks of the proof.
    """
    grids = [_with_gamma(g, s, p) for g in grids]
    d = grids[0].base.d
    if gauge is not None:
        field = gauge_transform(field, gauge)
        datum = Gauged(datum, _boundary(gauge))
    box = np.concatenate([grids[-1].base.box(), [[0.0, grids[-1].T]]])
    F = constant_two_form(field, box)
    beta = float(np.max(np.abs(F)))
    par = parallel_field(field)
    b = F[:d, d]
    Kb = phase_gap_constant(b, s, p)
    c = 2 ** (p - 1)
    rows, per = [], []
    for g in grids:
        base = g.base
        S0 = magnetic_gagliardo(datum, par, s, p, grid=base, rule=rule, threads=threads).value_p
        S = {lam: shifted_gagliardo(datum, field, lam, s, p, grid=base, rule=rule, threads=threads).value_p
             for lam in lambdas}
        up = lp_norm(datum, p, base) ** p
        G = Kb * up
        P = beta ** (s * p / 2) * up
        U = extend_grid(datum, field, _kernel(beta, d), g, rule, threads)
        eg, _ = weighted_energies(U, field, p, rule=rule)
        lhs = S0 + P
        rows.append((base.n, lhs, eg))
        entry = {"n": base.n, "seminorm_p": S0, "phase_gap": G, "poincare_term": P, "energy_grad": eg,
                 "shifted": {str(k): v for k, v in S.items()}}
        l1, l2 = lambdas[0], lambdas[1] if len(lambdas) > 1 else None
        entry["unshift_check"] = S0 <= c * (S[l1] + G) * (1 + 1e-9)
        if l2 is not None:
            entry["gap_check"] = G <= c * (S[l1] + S[l2]) * (1 + 1e-9)
        per.append(entry)
    params = {"s": s, "p": p, "beta": beta, "gamma": weight_exponent(s, p), "lambdas": list(lambdas),
              "field": field.label, "datum": datum.describe(), "grids": [g.describe() for g in grids],
              "normal_component": b.tolist()}
    rep = _assemble(rows, params, {"levels": per, "phase_gap_constant": Kb})
    if not all(e["unshift_check"] and e.get("gap_check", True) for e in per):
        rep.flags.append("COMBINATION_CHECK_FAILED")
    return rep


# ---------------------------------------------------------------------------
# scaling laws


def poincare_scaling(u: TestFunction, landau_family: Callable[[float], PotentialField], s: float,
                     p: float, betas: Sequence[float], grid: BoundaryGrid,
                     scheme: Optional[PairQuadrature] = None, gauge=None,
                     rule: Optional[SegmentRule] = None, threads: Optional[int] = None) -> SlopeReport:
    """Fit log(|u|^p_{W^{s,p}_A} / ||u||_p^p) against log beta."""
    if len(betas) < 5:
        raise ValueError("need at least five beta values")
    lp = lp_norm(u, p, grid) ** p
    pts, per = [], []
    for beta in betas:
        A = landau_family(beta)
        if not is_constant_dA(A, grid.box()):
            raise NonConstantFieldError(f"family member at beta={beta} has non-constant dA")
        fb = float(np.max(np.abs(exterior_derivative(A, np.zeros(A.dimension)).components)))
        uu = u
        if gauge is not None:
            A = gauge_transform(A, gauge)
            uu = Gauged(u, gauge)
        rep = magnetic_gagliardo(uu, A, s, p, scheme=scheme, grid=grid, rule=rule, beta=beta,
                                 threads=threads)
        pts.append((beta, rep.value_p / lp))
        per.append({"beta": beta, "dA": fb, "seminorm_p": rep.value_p, "tail_bound": rep.tail_bound})
    sl = loglog_slope(pts)
    sl.threshold = s * p / 2 - SLOPE_TOL
    sl.params = {"s": s, "p": p, "betas": list(betas), "grid": grid.describe(), "lp_p": lp,
                 "scheme": (scheme or PairQuadrature.for_grid(grid)).describe(),
                 "datum": u.describe(), "gauged": gauge is not None}
    sl.details.update({"levels": per})
    return sl


def variant_gap(u: TestFunction, base_field: PotentialField, mu1: QuadratureMeasure,
                mu2: QuadratureMeasure, s: float, p: float, scales: Sequence[float],
                grid: BoundaryGrid, k: Optional[int] = None, scheme: Optional[PairQuadrature] = None,
                rule: Optional[SegmentRule] = None, threads: Optional[int] = None) -> SlopeReport:
    """gap(lambda) = | |u|_{mu2}(lambda A) - |u|_{mu1}(lambda A) |, fitted against lambda."""
    matched = matching_moments(mu1, mu2)
    if k is None:
        k = matched
    elif matched < k:
        raise ValueError(f"moments differ at order {matched} < k={k}")
    sc = np.asarray(scales, float)
    if sc.size < 4 or np.any(sc <= 0):
        raise ValueError("need at least four positive scales")
    if sc.max() / sc.min() < 100 * (1 - 1e-9):
        raise ValueError("scales must span at least two decades")
    gaps, per = [], []
    from .field_model import polynomial_field
    for lam in sc:
        if base_field.components is not None:
            A = polynomial_field([c.scale(float(lam)) for c in base_field.components], "polynomial")
        else:
            A = type(base_field)(base_field.dimension, lambda x, f=base_field, l=lam: l * f(x),
                                 None, "custom")
        v1 = magnetic_gagliardo(u, A, s, p, mu1, scheme, grid, rule, threads=threads).value
        v2 = magnetic_gagliardo(u, A, s, p, mu2, scheme, grid, rule, threads=threads).value
        gaps.append(abs(v2 - v1))
        per.append({"lambda": float(lam), "value_mu1": v1, "value_mu2": v2, "gap": abs(v2 - v1)})
    params = {"s": s, "p": p, "k": k, "mu1": mu1.name_tag, "mu2": mu2.name_tag,
              "scales": sc.tolist(), "grid": grid.describe(), "datum": u.describe()}
    threshold = s / (k + 1) - SLOPE_TOL
    if max(gaps) <= 1e-10 * max(1.0, max(abs(e["value_mu1"]) for e in per)):
        rep = SlopeReport([(math.log(l), -math.inf) for l in sc], None, None, None, params, threshold,
                          ["ZERO_GAP"], {"levels": per})
        return rep
    if min(gaps) <= 0:
        raise ValueError("some gaps vanish exactly; the log-log fit is undefined")
    rep = loglog_slope(list(zip(sc.tolist(), gaps)))
    rep.params = params
    rep.threshold = threshold
    rep.details.update({"levels": per})
    return rep
