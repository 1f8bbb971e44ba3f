"""Phase-corrected mollifier extension, numerical trace, whole-space and reflection
extensions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import _parallel
from .discretization import (
    Cutoff,
    GridFunction,
    GridInterpolant,
    HalfSpaceGrid,
    TestFunction,
    TwoSidedFunction,
    bump_mass,
)
from .field_model import PotentialField, reflected_field
from .norms import lp_norm, weighted_energies
from .potential import SegmentRule, _gauss_01, segment_potential


class TraceDiscontinuityError(ValueError):
    """The two smallest t rows disagree by more than 10% in L^p."""


@lru_cache(maxsize=None)
def _ball_rule(d: int, order: int, angles: int):
    """Nodes z and weights w (phi(z) folded in, discretely normalised) on the unit ball."""
    if d == 1:
        x, w = np.polynomial.legendre.leggauss(order)
        z = x[:, None]
        wt = w
    else:
        # Gauss in the radius, uniform in the angle (see decisions ledger)
        tr, wr = _gauss_01(order)
        th = 2 * np.pi * (np.arange(angles) + 0.5) / angles
        z = (tr[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]).reshape(-1, 2)
        wt = np.repeat(wr * tr * 2 * np.pi / angles, angles)
    q = np.sum(z * z, -1)
    inside = q < 1
    phi = np.where(inside, np.exp(-1.0 / (1.0 - np.where(inside, q, 0.0))), 0.0)
    m = wt * phi
    keep = m > 0
    z, m = z[keep], m[keep]
    disc = float(np.sum(m))
    m = m / disc
    for a in (z, m):
        a.setflags(write=False)
    return z, m, disc / bump_mass(d) - 1.0


@dataclass(frozen=True)
class ExtensionKernel:
    """Mollifier phi (unit support, unit mass), cutoff theta and scale a = beta^{-1/2}."""

    d: int
    a: float
    order: int = 48
    angles: int = 32

    @classmethod
    def from_beta(cls, beta: float, d: int, **kw) -> "ExtensionKernel":
        if not beta > 0:
            raise ValueError("beta must be positive")
        return cls(d, beta ** -0.5, **kw)

    @property
    def cutoff(self) -> Cutoff:
        return Cutoff(self.a)

    def theta(self, t):
        return self.cutoff(t)

    def theta_prime(self, t):
        return self.cutoff.derivative(t)

    def phi(self, z):
        z = np.asarray(z, float)
        q = np.sum(z * z, -1)
        inside = q < 1
        return np.where(inside, np.exp(-1.0 / (1.0 - np.where(inside, q, 0.0))), 0.0) / bump_mass(self.d)

    def nodes(self):
        return _ball_rule(self.d, self.order, self.angles)

    @property
    def mass_error(self) -> float:
        """Relative gap between the discrete and the exact mollifier mass."""
        return self.nodes()[2]

    def describe(self) -> dict:
        return {"d": self.d, "a": self.a, "order": self.order, "angles": self.angles,
                "theta_slope_constant": self.cutoff.slope_constant()}


def extend_point(u, field: PotentialField, kernel: ExtensionKernel, x, t,
                 rule: Optional[SegmentRule] = None, chunk: int = 4096) -> np.ndarray:
    """U(x,t) = theta(t) int phi_t(x-y) e^{i I_A((x,t),(y,0))} u(y) dy; U(x,0) = u(x)."""
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    d = kernel.d
    if x.shape[-1] != d or field.dimension != d + 1:
        raise ValueError("dimension mismatch between data, kernel and field")
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    xf = np.broadcast_to(x, shape + (d,)).reshape(-1, d)
    tf = np.broadcast_to(t, shape).reshape(-1)
    out = np.zeros(xf.shape[0], complex)
    z, m, _ = kernel.nodes()
    theta = kernel.theta(tf)
    zero = tf == 0
    out[zero] = u(xf[zero]) if np.any(zero) else out[zero]
    live = np.nonzero(~zero & (theta > 0))[0]
    for s in range(0, live.size, chunk):
        idx = live[s:s + chunk]
        xs, ts = xf[idx], tf[idx]
        Y = xs[:, None, :] - ts[:, None, None] * z[None]
        uy = u(Y)
        X0 = np.concatenate([xs, ts[:, None]], -1)
        Y0 = np.concatenate([Y, np.zeros(Y.shape[:-1] + (1,))], -1)
        nz = uy != 0
        acc = np.zeros(uy.shape, complex)
        if np.any(nz):
            Xb = np.broadcast_to(X0[:, None, :], Y0.shape)
            acc[nz] = np.exp(1j * segment_potential(field, Xb[nz], Y0[nz], rule)) * uy[nz]
        out[idx] = theta[idx] * (acc @ m)
    out = out.reshape(shape)
    return out if out.ndim else complex(out)


def extend_grid(u, field: PotentialField, kernel: ExtensionKernel, grid: HalfSpaceGrid,
                rule: Optional[SegmentRule] = None, threads: Optional[int] = None) -> GridFunction:
    """Sample the extension on every t node; the t=0 row stores u itself."""
    if grid.T < kernel.a * (1 - 1e-12):
        raise ValueError(f"grid T={grid.T} does not cover the cutoff support a={kernel.a}")
    X = grid.base.points()
    ts = grid.t_nodes

    def row(k):
        if ts[k] >= kernel.a:
            return np.zeros(grid.base.shape, complex)
        return extend_point(u, field, kernel, X, np.full(X.shape[:-1], ts[k]), rule)

    rows = _parallel.pmap(row, range(grid.K), threads)
    return GridFunction(grid, np.stack(rows), boundary=u(X), source=u)


def trace(U: GridFunction, p: float = 2.0) -> GridFunction:
    """Boundary values: the stored t=0 row, else linear extrapolation from t_1, t_2."""
    if not U.is_halfspace:
        raise ValueError("trace needs a half-space grid function")
    grid = U.grid
    base = grid.base
    r1 = GridFunction(base, U.values[0])
    r2 = GridFunction(base, U.values[1])
    n1, n2 = lp_norm(r1, p), lp_norm(r2, p)
    diff = lp_norm(GridFunction(base, U.values[0] - U.values[1]), p)
    if diff > 0.1 * max(n1, n2) and max(n1, n2) > 0:
        raise TraceDiscontinuityError("the two smallest t rows differ by more than 10%")
    if U.boundary is not None:
        return GridFunction(base, U.boundary.copy())
    t1, t2 = grid.t_nodes[:2]
    b = U.values[0] - t1 * (U.values[1] - U.values[0]) / (t2 - t1)
    return GridFunction(base, b)


def _datum_of(U: GridFunction):
    src = U.source
    if isinstance(src, TestFunction) and src.dimension == U.grid.base.d:
        return src
    return GridInterpolant(trace(U))


def extend_whole_space(U: GridFunction, field: PotentialField, kernel: ExtensionKernel,
                       rule: Optional[SegmentRule] = None, threads: Optional[int] = None) -> TwoSidedFunction:
    """Upper side U; lower side is the extension of trace(U) under the reflected field,
    stored in the coordinate tau = -t."""
    lower_field = reflected_field(field)
    lower = extend_grid(_datum_of(U), lower_field, kernel, U.grid, rule, threads)
    b = U.boundary if U.boundary is not None else trace(U).values
    lower.boundary = np.array(b, copy=True)
    return TwoSidedFunction(U, lower, lower_field)


def reflection_extension(U: GridFunction, field: Optional[PotentialField] = None) -> TwoSidedFunction:
    """U_bar(x,-t) = U(x,t): the lower side holds the same samples."""
    lower = GridFunction(U.grid, U.values.copy(),
                         None if U.boundary is None else U.boundary.copy(), U.source)
    return TwoSidedFunction(U, lower, reflected_field(field) if field is not None else None)


def two_sided_energies(W: TwoSidedFunction, field: PotentialField, p: float,
                       rule: Optional[SegmentRule] = None) -> dict:
    """Weighted energies of both sides; the lower side is differentiated against the
    reflected field, which is the pull-back of A under (x,t) -> (x,-t)."""
    lf = W.lower_field if W.lower_field is not None else reflected_field(field)
    ug, u0 = weighted_energies(W.upper, field, p, rule=rule)
    lg, l0 = weighted_energies(W.lower, lf, p, rule=rule)
    return {"upper_grad": ug, "upper_zero": u0, "lower_grad": lg, "lower_zero": l0}


def trace_recovery(u, field: PotentialField, kernel: ExtensionKernel, grid, ts,
                   rule: Optional[SegmentRule] = None) -> dict:
    """sup_x |U(x,t) - u(x)| on the boundary lattice for each t, the t=0 error and the
    fitted log-log rate of the error as t -> 0."""
    X = grid.points()
    ux = u(X)
    err0 = float(np.max(np.abs(extend_point(u, field, kernel, X, np.zeros(X.shape[:-1]), rule) - ux)))
    ts = np.asarray(ts, float)
    if ts.size < 4 or np.any(ts <= 0):
        raise ValueError("need at least four positive t values")
    errs = np.array([np.max(np.abs(extend_point(u, field, kernel, X, np.full(X.shape[:-1], t), rule) - ux))
                     for t in ts])
    good = errs > 0
    rate = None
    if good.sum() >= 2:
        rate = float(np.polyfit(np.log(ts[good]), np.log(errs[good]), 1)[0])
    return {"sup_error_t0": err0, "t": ts.tolist(), "sup_error": errs.tolist(), "rate": rate}
