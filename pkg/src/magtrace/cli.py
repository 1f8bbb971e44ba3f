"""Configuration-driven experiment runner: ``magtrace run|sweep|list``."""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import _parallel
from .discretization import (
    BoundaryGauge,
    BoundaryGrid,
    Cutoff,
    Gauged,
    Gaussian,
    HalfSpaceGrid,
    HalfSpaceProduct,
    PairQuadrature,
    make_bump,
    make_modulated_bump,
)
from .field_model import (
    Polynomial,
    constant_field,
    gauge_transform,
    landau_field,
    parallel_field,
    polynomial_field,
    polynomial_gauge,
    random_polynomial,
    random_polynomial_gauge,
    zero_field,
)
from .potential import SegmentRule, covariant_ftc_residual, measure_from_spec, triangle_residual

EXIT_OK, EXIT_INVALID, EXIT_UNCONVERGED = 0, 1, 2
DEFAULT_SEED = 42


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"invalid config field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# config parsing


def _num(cfg, key, default=None, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(key, "missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(key, "expected an integer")
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(key, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(key, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return int(v) if integer else float(v)


def _sp(cfg):
    s = _num(cfg, "s", 0.5, 0, 1, True, True)
    p = _num(cfg, "p", 2.0, 1)
    return s, p


def _field(spec, dim_default: int, rng: Optional[np.random.Generator] = None, key="field"):
    if spec is None:
        spec = {"kind": "zero"}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(key, "needs an object with a 'kind'")
    kind = spec["kind"]
    D = int(spec.get("dimension", dim_default))
    if kind == "zero":
        return zero_field(D)
    if kind == "constant":
        return constant_field(spec["value"])
    if kind == "landau":
        plane = tuple(spec.get("plane", (0, D - 1)))
        return landau_field(_num(spec, "beta", 1.0), D, plane, spec.get("gauge", "standard"))
    if kind == "polynomial":
        if "coefficients" not in spec:
            raise ConfigError(key, "polynomial field needs 'coefficients'")
        return polynomial_field([Polynomial.from_json(D, c) for c in spec["coefficients"]])
    if kind == "random_polynomial":
        r = np.random.default_rng(int(spec.get("seed", DEFAULT_SEED))) if "seed" in spec else rng
        deg = int(spec.get("degree", 3))
        return polynomial_field([random_polynomial(D, deg, r, float(spec.get("scale", 1.0)))
                                 for _ in range(D)])
    raise ConfigError(key, f"unknown field kind {kind!r}")


def _gauge(spec, D: int):
    if spec is None:
        return None
    if "coefficients" in spec:
        return polynomial_gauge(Polynomial.from_json(D, spec["coefficients"]))
    rng = np.random.default_rng(int(spec.get("seed", DEFAULT_SEED)))
    return random_polynomial_gauge(D, int(spec.get("degree", 3)), rng, float(spec.get("scale", 1.0)))


def _test_function(spec, d: int):
    spec = spec or {}
    kind = spec.get("kind", "bump")
    center = spec.get("center", [0.0] * d)
    if len(center) != d:
        raise ConfigError("test_function.center", f"needs {d} coordinates")
    radius = _num(spec, "radius", 1.0, 0, lo_open=True)
    if kind == "bump":
        return make_bump(center, radius)
    if kind == "modulated_bump":
        return make_modulated_bump(center, radius, spec.get("wavevector", [0.0] * d))
    if kind == "gaussian":
        return Gaussian(center, radius, spec.get("wavevector"))
    raise ConfigError("test_function.kind", f"unknown test function {kind!r}")


def _boundary_grid(cfg, mult: int, d_default: int = 1) -> BoundaryGrid:
    g = cfg.get("grid", {})
    d = int(g.get("d", d_default))
    if d not in (1, 2):
        raise ConfigError("grid.d", "must be 1 or 2")
    n = _num(g, "n", 128, 8, integer=True)
    return BoundaryGrid(d, _num(g, "L", 2.0, 0, lo_open=True), n * mult)


def _halfspace_grid(cfg, mult: int, s: float, p: float, a: float) -> HalfSpaceGrid:
    g = cfg.get("grid", {})
    base = _boundary_grid(cfg, mult)
    gamma = 1 - (1 - s) * p
    if "gamma" in g:
        if not g.get("gamma_override", False):
            raise ConfigError("grid.gamma", "gamma is derived from (s, p); set gamma_override to force it")
        gamma = _num(g, "gamma", lo=-1, lo_open=True)
    T = _num(g, "T", a, 0, lo_open=True)
    return HalfSpaceGrid(base, T, _num(g, "t_count", 80, 2, integer=True),
                         _num(g, "r", 0.9, 0, 1, True, True), gamma)


def _levels(cfg) -> int:
    return _num(cfg, "levels", 2, 2, integer=True)


def _betas(cfg) -> List[float]:
    if "beta_list" in cfg:
        bl = cfg["beta_list"]
        if not isinstance(bl, list) or not bl:
            raise ConfigError("beta_list", "must be a non-empty list")
        return [_num({"beta_list": b}, "beta_list", lo=0) for b in bl]
    return [_num(cfg, "beta", 1.0, 0)]


def _halfspace_landau(beta: float, d: int):
    return landau_field(beta, d + 1, (0, d), "halfspace")


# ---------------------------------------------------------------------------
# experiments; each returns (passed, converged, result dict, ledger rows)


@dataclass
class Experiment:
    name: str
    description: str
    keys: List[str]
    fn: Callable
    sweep_axis: Optional[str] = None


def _exp_stokes(cfg, mult, rng):
    D = _num(cfg, "dimension", 3, 2, integer=True)
    count = _num(cfg, "count", 100, 1, integer=True)
    tol = _num(cfg, "tolerance", 1e-10, 0, lo_open=True)
    deg = _num(cfg, "degree", 3, 0, integer=True)
    worst = 0.0
    for _ in range(count):
        A = polynomial_field([random_polynomial(D, deg, rng) for _ in range(D)])
        X, Y, Z = rng.uniform(-1, 1, (3, D))
        worst = max(worst, float(triangle_residual(A, X, Y, Z)))
    ok = worst <= tol
    return ok, True, {"max_residual": worst, "tolerance": tol, "count": count}, [(count, worst, tol, worst)]


def _exp_ftc(cfg, mult, rng):
    D = _num(cfg, "dimension", 2, 1, integer=True)
    count = _num(cfg, "count", 50, 1, integer=True)
    tol = _num(cfg, "tolerance", 1e-8, 0, lo_open=True)
    order = _num(cfg, "order", 32, 1, integer=True)
    A = _field(cfg.get("field", {"kind": "landau", "beta": 2.0}), D, rng)
    U = _test_function(cfg.get("test_function"), D)
    X = rng.uniform(-1, 1, (count, D))
    Y = rng.uniform(-1, 1, (count, D))
    res = covariant_ftc_residual(A, U, X, Y, SegmentRule(order))
    worst = float(np.max(res))
    return worst <= tol, True, {"max_residual": worst, "tolerance": tol, "order": order}, [(order, worst, tol, worst)]


def _trace_setup(cfg, mult):
    s, p = _sp(cfg)
    d = int(cfg.get("grid", {}).get("d", 1))
    u = _test_function(cfg.get("test_function", {"kind": "modulated_bump", "wavevector": [2.0] * d}), d)
    return s, p, d, u


def _exp_trace_like(report_fn, cfg, mult, rng):
    from .inequality_lab import refinement_ladder
    s, p, d, u = _trace_setup(cfg, mult)
    betas = _betas(cfg)
    factor = _num(cfg, "cross_beta_factor", 3.0, 1)
    gauge = _gauge(cfg.get("gauge"), d + 1)
    out, rows = [], []
    for beta in betas:
        A = _field(cfg["field"], d + 1, rng) if "field" in cfg else _halfspace_landau(beta, d)
        a = beta ** -0.5 if beta > 0 else 1.0
        g = _halfspace_grid(cfg, mult, s, p, a)
        rep = report_fn(u, A, s, p, beta, refinement_ladder(g, _levels(cfg)), gauge=gauge)
        out.append({"beta": beta, **rep.to_dict()})
        rows.append((g.base.n * 2 ** (_levels(cfg) - 1), rep.lhs, rep.rhs, rep.ratio))
    ratios = [o["ratio"] for o in out]
    converged = all(o["status"] == "CONVERGED" and (o["secondary"] is None or o["secondary"]["status"] == "CONVERGED")
                    for o in out)
    finite = all(math.isfinite(r) for r in ratios)
    spread = (max(ratios) / min(ratios)) if finite and min(ratios) > 0 else math.inf
    ok = finite and (len(ratios) == 1 or spread <= factor)
    res = {"reports": out, "ratios": ratios, "cross_beta_spread": spread, "cross_beta_factor": factor}
    return ok, converged, res, rows


def _exp_trace(cfg, mult, rng):
    from .inequality_lab import trace_inequality_report
    return _exp_trace_like(trace_inequality_report, cfg, mult, rng)


def _exp_extension(cfg, mult, rng):
    from .inequality_lab import extension_inequality_report
    return _exp_trace_like(extension_inequality_report, cfg, mult, rng)


def _exp_constant_trace(cfg, mult, rng):
    from .inequality_lab import constant_field_trace_report, refinement_ladder
    s, p, d, u = _trace_setup(cfg, mult)
    beta = _num(cfg, "beta", 4.0, 0)
    A = _field(cfg["field"], d + 1, rng) if "field" in cfg else _halfspace_landau(beta, d)
    g = _halfspace_grid(cfg, mult, s, p, beta ** -0.5 if beta > 0 else 1.0)
    lams = cfg.get("lambdas", [1.0, 2.0])
    rep = constant_field_trace_report(u, A, s, p, refinement_ladder(g, _levels(cfg)), tuple(lams),
                                      gauge=_gauge(cfg.get("gauge"), d + 1))
    ok = math.isfinite(rep.ratio) and "COMBINATION_CHECK_FAILED" not in rep.flags
    return ok, rep.converged, rep.to_dict(), [(g.base.n * 2 ** (_levels(cfg) - 1), rep.lhs, rep.rhs, rep.ratio)]


def _exp_seminorm(cfg, mult, rng):
    from .norms import magnetic_gagliardo
    s, p = _sp(cfg)
    grid = _boundary_grid(cfg, mult)
    d = grid.d
    u = _test_function(cfg.get("test_function"), d)
    A = _field(cfg.get("field"), d, rng)
    mu = measure_from_spec(cfg.get("mu", "lebesgue"))
    reps = [magnetic_gagliardo(u, A, s, p, mu, grid=grid.refine(2 ** k)) for k in range(_levels(cfg))]
    vals = [r.value for r in reps]
    drift = abs(vals[-1] - vals[-2]) / abs(vals[-1]) if vals[-1] else 0.0
    res = {"values": vals, "tail_bounds": [r.tail_bound for r in reps], "drift": drift,
           "report": reps[-1].to_dict()}
    return math.isfinite(vals[-1]), drift <= 0.15, res, [(reps[-1].grid["n"], vals[-1], reps[-1].tail_bound, drift)]


def _exp_gauge_check(cfg, mult, rng):
    from .inequality_lab import extension_inequality_report, refinement_ladder, trace_inequality_report
    from .norms import magnetic_gagliardo, weighted_w1p_norm
    s, p, d, u = _trace_setup(cfg, mult)
    beta = _num(cfg, "beta", 4.0, 0)
    count = _num(cfg, "count", 5, 1, integer=True)
    deg = _num(cfg, "degree", 3, 1, integer=True)
    tol = _num(cfg, "tolerance", 1e-8, 0, lo_open=True)
    A = _field(cfg["field"], d + 1, rng) if "field" in cfg else _halfspace_landau(beta, d)
    g = _halfspace_grid(cfg, mult, s, p, beta ** -0.5 if beta > 0 else 1.0)
    grids = refinement_ladder(g, 2)
    U = HalfSpaceProduct(u, Cutoff(min(g.T, 1.0) / 2))

    def measure(G):
        Ag = A if G is None else gauge_transform(A, G)
        ub = u if G is None else Gauged(u, BoundaryGauge(G))
        UU = U if G is None else Gauged(U, G)
        tr = trace_inequality_report(u, A, s, p, beta, grids, gauge=G)
        ex = extension_inequality_report(u, A, s, p, beta, grids, gauge=G)
        return {"seminorm": magnetic_gagliardo(ub, parallel_field(Ag), s, p, grid=g.base).value,
                "weighted_norm": weighted_w1p_norm(UU, Ag, p, g),
                "trace_lhs": tr.lhs, "trace_rhs": tr.rhs, "extension_lhs": ex.lhs, "extension_rhs": ex.rhs}

    ref = measure(None)
    drifts = []
    for _ in range(count):
        G = random_polynomial_gauge(d + 1, deg, rng)
        m = measure(G)
        drifts.append({k: abs(m[k] - ref[k]) / abs(ref[k]) if ref[k] else abs(m[k]) for k in ref})
    worst = max(max(x.values()) for x in drifts)
    return worst < tol, True, {"reference": ref, "relative_drifts": drifts, "max_relative_drift": worst,
                               "tolerance": tol}, [(g.base.n, worst, tol, worst)]


def _exp_poincare(cfg, mult, rng, override=None):
    from .inequality_lab import poincare_scaling
    s, p = _sp(cfg)
    cfg2 = copy.deepcopy(cfg)
    cfg2.setdefault("grid", {}).setdefault("d", 2)
    grid = _boundary_grid(cfg2, mult, 2)
    if grid.d != 2:
        raise ConfigError("grid.d", "the scaling experiment needs a two-dimensional boundary")
    betas = override if override is not None else _betas(cfg)
    if len(betas) < 5:
        raise ConfigError("beta_list", "need at least five beta values")
    u = _test_function(cfg.get("test_function", {"kind": "bump", "radius": 3.0}), 2)
    method = cfg.get("pairs", "mc")
    scheme = PairQuadrature.for_grid(grid, method=method, seed=int(cfg.get("seed", DEFAULT_SEED)))
    gauge = _gauge(cfg.get("gauge"), 2)
    fam = cfg.get("landau_gauge", "symmetric")
    rep = poincare_scaling(u, lambda b: landau_field(b, 2, (0, 1), fam), s, p, betas, grid, scheme, gauge)
    r2min = _num(cfg, "min_r_squared", 0.9, 0, 1)
    ok = bool(rep.passed) and rep.r_squared >= r2min
    res = rep.to_dict()
    res["min_r_squared"] = r2min
    return ok, True, res, [(grid.n, rep.slope, rep.threshold, rep.slope)]


def _exp_variant_gap(cfg, mult, rng, override=None):
    from .inequality_lab import variant_gap
    s, p = _sp(cfg)
    grid = _boundary_grid(cfg, mult)
    u = _test_function(cfg.get("test_function", {"kind": "modulated_bump", "wavevector": [1.0] * grid.d}),
                       grid.d)
    A = _field(cfg.get("field"), grid.d, rng)
    mu1 = measure_from_spec(cfg.get("mu1", "lebesgue"))
    mu2 = measure_from_spec(cfg.get("mu2", "midpoint"))
    scales = override if override is not None else cfg.get("scales", [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0])
    if not isinstance(scales, list) or len(scales) < 4:
        raise ConfigError("scales", "need at least four scales")
    try:
        rep = variant_gap(u, A, mu1, mu2, s, p, scales, grid, cfg.get("k"))
    except ValueError as e:
        raise ConfigError("scales" if "scale" in str(e) else "k", str(e)) from None
    ok = bool(rep.passed)
    return ok, True, rep.to_dict(), [(grid.n, rep.slope, rep.threshold, rep.slope)]


def _exp_transport(cfg, mult, rng):
    from .inequality_lab import loglog_slope
    from .pullback_geometry import (generic_tangential_field, stereographic_circle,
                                    stereographic_sphere, transport_gap)
    R = _num(cfg, "radius", 1.0, 0, lo_open=True)
    chart = stereographic_sphere(R)
    field = generic_tangential_field(chart, rng, int(cfg.get("degree", 2)))
    x = np.asarray(cfg.get("start", [0.05, -0.1]), float)
    direction = np.asarray(cfg.get("direction", [0.6, 0.8]), float)
    direction = direction / np.linalg.norm(direction)
    lengths = cfg.get("lengths", np.geomspace(0.2, 0.005, 8).tolist())
    gaps = [transport_gap(chart, field, x, x + r * direction) for r in lengths]
    fit = loglog_slope(list(zip(lengths, gaps)))
    circ = stereographic_circle(R)
    cfield = polynomial_field([random_polynomial(2, 2, rng) for _ in range(2)])
    cgap = max(transport_gap(circ, cfield, np.array([a]), np.array([b]))
               for a, b in rng.uniform(-0.5, 0.5, (10, 2)))
    thr = _num(cfg, "min_slope", 2.85)
    ctol = _num(cfg, "circle_tolerance", 1e-10, 0, lo_open=True)
    ok = fit.slope >= thr and cgap <= ctol
    return ok, True, {"lengths": list(lengths), "gaps": gaps, "slope": fit.slope, "r_squared": fit.r_squared,
                      "min_slope": thr, "circle_max_gap": cgap, "circle_tolerance": ctol}, \
        [(len(lengths), fit.slope, thr, fit.slope)]


def _exp_trace_recovery(cfg, mult, rng):
    from .trace_extension import ExtensionKernel, trace_recovery
    s, p, d, u = _trace_setup(cfg, mult)
    beta = _num(cfg, "beta", 4.0, 0)
    A = _field(cfg["field"], d + 1, rng) if "field" in cfg else _halfspace_landau(beta, d)
    grid = _boundary_grid(cfg, mult)
    ts = cfg.get("t_values", np.geomspace(0.1, 0.001, 6).tolist())
    r = trace_recovery(u, A, ExtensionKernel.from_beta(beta, d) if beta > 0 else ExtensionKernel(d, 1.0),
                       grid, ts)
    ok = r["sup_error_t0"] <= 1e-8 and r["rate"] is not None and r["rate"] >= 0.9
    return ok, True, r, [(grid.n, r["sup_error_t0"], 1e-8, r["rate"])]


def _exp_whole_space(cfg, mult, rng):
    from .norms import lp_norm
    from .discretization import GridFunction
    from .trace_extension import ExtensionKernel, extend_grid, extend_point, extend_whole_space, trace
    from .field_model import reflected_field
    s, p, d, u = _trace_setup(cfg, mult)
    beta = _num(cfg, "beta", 4.0, 0, lo_open=True)
    A = _field(cfg["field"], d + 1, rng) if "field" in cfg else _halfspace_landau(beta, d)
    k = ExtensionKernel.from_beta(beta, d)
    g = _halfspace_grid(cfg, mult, s, p, k.a)
    U = extend_grid(u, A, k, g)
    W = extend_whole_space(U, A, k)
    X = g.base.points()
    zero = np.zeros(X.shape[:-1])
    up0 = extend_point(u, A, k, X, zero)
    lo0 = extend_point(u, reflected_field(A), k, X, zero)
    agree = float(np.max(np.abs(up0 - lo0)))
    stored = float(np.max(np.abs(trace(W.upper).values - trace(W.lower).values)))
    first = [float(np.max(np.abs(W.upper.values[0] - up0))), float(np.max(np.abs(W.lower.values[0] - lo0)))]
    tol = _num(cfg, "tolerance", 1e-8, 0, lo_open=True)
    ok = max(agree, stored) <= tol
    return ok, True, {"trace_agreement": agree, "stored_trace_agreement": stored,
                      "first_row_distance": first, "t_first": float(g.t_nodes[0]), "tolerance": tol}, \
        [(g.base.n, agree, tol, agree)]


def _exp_reflection(cfg, mult, rng):
    from .trace_extension import (ExtensionKernel, extend_grid, extend_whole_space,
                                  reflection_extension, two_sided_energies)
    s, p, d, u = _trace_setup(cfg, mult)
    betas = _betas(cfg) if ("beta_list" in cfg or "beta" in cfg) else [4.0, 16.0]
    out, rows, ok = [], [], True
    for beta in betas:
        A = _halfspace_landau(beta, d)
        k = ExtensionKernel.from_beta(beta, d)
        g = _halfspace_grid(cfg, mult, s, p, k.a)
        U = extend_grid(u, A, k, g)
        ph = two_sided_energies(extend_whole_space(U, A, k), A, p)
        rf = two_sided_energies(reflection_extension(U, A), A, p)
        e_ph = ph["upper_grad"] + ph["lower_grad"]
        e_rf = rf["upper_grad"] + rf["lower_grad"]
        ratio = e_ph / e_rf
        out.append({"beta": beta, "phase_energy": e_ph, "reflection_energy": e_rf, "ratio": ratio,
                    "phase": ph, "reflection": rf})
        rows.append((g.base.n, e_ph, e_rf, ratio))
        ok = ok and (ratio < 1 if beta >= 4 else True)
    return ok, True, {"results": out}, rows


def _exp_moments(cfg, mult, rng):
    from .inequality_lab import measure_moments
    mu = measure_from_spec(cfg.get("mu", "simpson"))
    up_to = _num(cfg, "up_to", 4, 0, integer=True)
    m = measure_moments(mu, up_to, exact=True)
    table = [str(v) for v in m]
    ok = True
    if "expected" in cfg:
        from fractions import Fraction
        ok = [Fraction(str(e)) for e in cfg["expected"]] == [v if not isinstance(v, float) else Fraction(v) for v in m]
    return ok, True, {"measure": mu.to_json(), "moments": table,
                      "moments_float": [float(v) for v in m]}, [(up_to, None, None, None)]


REGISTRY: Dict[str, Experiment] = {e.name: e for e in [
    Experiment("constant_field_trace", "improved trace bound for constant dA with shifted seminorms",
               ["s", "p", "beta", "lambdas", "test_function", "grid"], _exp_constant_trace),
    Experiment("covariant_ftc", "segment fundamental theorem for the covariant gradient",
               ["dimension", "count", "order", "field", "test_function"], _exp_ftc),
    Experiment("extension_ineq", "weighted energy of the phase extension against the boundary norm",
               ["s", "p", "beta|beta_list", "test_function", "grid"], _exp_extension, "beta_list"),
    Experiment("gauge_check", "relative drift of all norms and reports under random gauges",
               ["s", "p", "beta", "count", "degree", "grid"], _exp_gauge_check),
    Experiment("moments", "exact moment table of a quadrature measure", ["mu", "up_to"], _exp_moments),
    Experiment("poincare", "log-log slope of seminorm against beta for a Landau family",
               ["s", "p", "beta_list", "test_function", "grid"], _exp_poincare, "beta_list"),
    Experiment("reflection_demo", "phase extension against reflection for an odd-in-t field",
               ["s", "p", "beta_list", "test_function", "grid"], _exp_reflection),
    Experiment("seminorm", "magnetic Gagliardo seminorm with refinement drift",
               ["s", "p", "field", "mu", "test_function", "grid"], _exp_seminorm),
    Experiment("stokes_triangle", "loop potential against enclosed flux on random triangles",
               ["dimension", "count", "degree"], _exp_stokes),
    Experiment("trace_ineq", "boundary seminorm against the weighted half-space energy",
               ["s", "p", "beta|beta_list", "test_function", "grid"], _exp_trace, "beta_list"),
    Experiment("trace_recovery", "extension converges to its datum as t -> 0",
               ["beta", "test_function", "grid", "t_values"], _exp_trace_recovery),
    Experiment("transport_gap", "cubic law of segment against geodesic potential on the sphere",
               ["radius", "lengths", "direction", "start"], _exp_transport),
    Experiment("variant_gap", "gap between two measure variants of the seminorm under field scaling",
               ["s", "p", "field", "mu1", "mu2", "scales", "grid"], _exp_variant_gap, "scales"),
    Experiment("whole_space_ext", "two-sided extension and agreement of both traces",
               ["s", "p", "beta", "test_function", "grid"], _exp_whole_space),
]}


def list_experiments() -> List[dict]:
    return [{"name": e.name, "description": e.description, "keys": e.keys} for e in
            sorted(REGISTRY.values(), key=lambda e: e.name)]


# ---------------------------------------------------------------------------
# running and outputs


def bundled_config(name: str) -> dict:
    ref = resources.files("magtrace") / "configs" / f"{name}.json"
    return json.loads(ref.read_text())


def bundled_names() -> List[str]:
    d = resources.files("magtrace") / "configs"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


def load_config(path: str) -> dict:
    p = Path(path)
    if p.exists():
        return json.loads(p.read_text())
    if path in bundled_names():
        return bundled_config(path)
    raise ConfigError("config", f"no such file or bundled config: {path}")


def canonical(cfg: dict) -> str:
    c = {k: v for k, v in cfg.items() if k != "output_dir"}
    return json.dumps(c, sort_keys=True, separators=(",", ":"))


def params_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _validate(cfg: dict) -> Experiment:
    if not isinstance(cfg, dict):
        raise ConfigError("config", "must be a JSON object")
    name = cfg.get("experiment")
    if name not in REGISTRY:
        raise ConfigError("experiment", f"unknown experiment {name!r}")
    if "s" in cfg or "p" in cfg:
        _sp(cfg)
    if "seed" in cfg:
        _num(cfg, "seed", integer=True)
    return REGISTRY[name]


def execute(cfg: dict, multiplier: int = 1, threads: Optional[int] = None) -> dict:
    """Run one experiment and return the report (without writing files)."""
    exp = _validate(cfg)
    if multiplier < 1:
        raise ConfigError("resolution-multiplier", "must be >= 1")
    prev = _parallel.get_threads()
    if threads is not None:
        _parallel.set_threads(threads)
    try:
        rng = np.random.default_rng(int(cfg.get("seed", DEFAULT_SEED)))
        passed, converged, result, rows = exp.fn(cfg, multiplier, rng)
    except (KeyError, TypeError) as e:
        raise ConfigError(str(e).strip("'"), "missing or malformed") from None
    finally:
        _parallel.set_threads(prev)
    status = "CONVERGED" if converged else "UNCONVERGED"
    code = EXIT_OK if passed and converged else EXIT_UNCONVERGED
    return _clean({"experiment": exp.name, "config": cfg, "params_hash": params_hash(cfg),
                   "resolution_multiplier": multiplier, "status": status, "passed": bool(passed),
                   "exit_code": code, "result": result, "ledger_rows": [list(r) for r in rows]})


def execute_sweep(cfg: dict, multiplier: int = 1, threads: Optional[int] = None) -> dict:
    exp = _validate(cfg)
    axes = [k for k in ("beta_list", "scales") if isinstance(cfg.get(k), list)]
    if len(axes) != 1:
        raise ConfigError("beta_list" if not axes else ",".join(axes),
                          "a sweep needs exactly one list-valued axis among beta_list, scales")
    axis = axes[0]
    if len(cfg[axis]) < 4:
        raise ConfigError(axis, "a sweep needs at least four points")
    if exp.sweep_axis != axis:
        raise ConfigError(axis, f"experiment {exp.name} does not sweep over {axis}")
    if exp.name in ("poincare", "variant_gap"):
        return execute(cfg, multiplier, threads)
    from .inequality_lab import loglog_slope
    rep = execute(cfg, multiplier, threads)
    ratios = rep["result"]["ratios"]
    fit = loglog_slope(list(zip(cfg[axis], ratios)))
    rep["result"]["sweep_fit"] = _clean(fit.to_dict())
    return rep


def write_outputs(report: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path = out_dir / f"{report['experiment']}-{report['params_hash'][:12]}.json"
    body = dict(report)
    body["timestamp"] = stamp
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
    ledger = out_dir / "ledger.csv"
    new = not ledger.exists()
    with ledger.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["timestamp", "experiment", "params_hash", "resolution", "lhs", "rhs",
                        "ratio_or_slope", "converged"])
        for res, lhs, rhs, val in report["ledger_rows"]:
            w.writerow([stamp, report["experiment"], report["params_hash"], res, lhs, rhs, val,
                        report["status"] == "CONVERGED"])
    return path


def report_bytes(report: dict) -> bytes:
    """Canonical bytes of a report, excluding the timestamp."""
    body = {k: v for k, v in report.items() if k != "timestamp"}
    return json.dumps(body, sort_keys=True).encode()


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magtrace", description="magnetic trace and extension experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="config JSON path or bundled config name")
        sp.add_argument("--out", default=None, help="output directory (default: config output_dir or ./results)")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--resolution-multiplier", type=int, default=1)
        sp.add_argument("--json", action="store_true", help="print the report JSON to stdout")
    lp = sub.add_parser("list")
    lp.add_argument("--json", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list":
        items = list_experiments()
        if args.json:
            print(json.dumps(items, indent=2))
        else:
            for it in items:
                print(f"{it['name']:<22} {it['description']}  [keys: {', '.join(it['keys'])}]")
        return EXIT_OK
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg = load_config(args.config)
        fn = execute if args.command == "run" else execute_sweep
        report = fn(cfg, args.resolution_multiplier, args.threads)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as e:
        print(f"invalid config field 'config': not valid JSON ({e})", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or cfg.get("output_dir", "results"))
    path = write_outputs(report, out)
    if args.json:
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        print(f"{report['experiment']}: {report['status']} passed={report['passed']} -> {path}")
    return report["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
