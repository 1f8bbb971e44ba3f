"""Line-integral phase potentials and the residuals of the identities built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .field_model import (
    PotentialField,
    DimensionError,
    exterior_derivative,
    is_constant_dA,
    parallel_field,
    sup_norm_dA,
)

ADAPTIVE_START = 16
ADAPTIVE_MAX = 1024
ADAPTIVE_RTOL = 1e-12


@lru_cache(maxsize=None)
def _gauss_01(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0,1] with nodes mirrored exactly about 1/2."""
    x, w = np.polynomial.legendre.leggauss(order)
    t = (x + 1.0) / 2.0
    w = w / 2.0
    half = order // 2
    t[order - half:] = 1.0 - t[:half][::-1]
    w[order - half:] = w[:half][::-1]
    if order % 2:
        t[half] = 0.5
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


@dataclass(frozen=True)
class SegmentRule:
    """Composite Gauss-Legendre rule on [0,1]."""

    order: int = 16
    panels: int = 1

    def __post_init__(self):
        if self.order < 1 or self.panels < 1:
            raise ValueError("order and panels must be >= 1")

    @property
    def size(self) -> int:
        return self.order * self.panels

    def nodes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (a, b, w) with node point = a*X + b*Y and a[k] == b[K-1-k] exactly."""
        return _composite(self.order, self.panels)


@lru_cache(maxsize=None)
def _composite(order: int, panels: int):
    t0, w0 = _gauss_01(order)
    t = np.concatenate([(j + t0) / panels for j in range(panels)])
    w = np.tile(w0 / panels, panels)
    K = t.size
    half = K // 2
    t[K - half:] = 1.0 - t[:half][::-1]
    if K % 2:
        t[half] = 0.5
    w[K - half:] = w[:half][::-1]
    b = t.copy()
    a = b[::-1].copy()
    for arr in (a, b, w):
        arr.setflags(write=False)
    return a, b, w


def exact_rule_for(field: PotentialField, extra_degree: int = 0) -> Optional[SegmentRule]:
    """Smallest Gauss rule integrating A(segment)·v exactly, or None for non-polynomial fields."""
    deg = field.degree
    if deg is None:
        return None
    return SegmentRule(order=max(1, math.ceil((deg + extra_degree + 1) / 2)))


def _symmetric_sum(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_k w_k f_k, pairing node k with its mirror so that reversal only flips signs."""
    K = w.size
    half = K // 2
    paired = f[..., :half] + f[..., ::-1][..., :half]
    out = np.sum(paired * w[:half], axis=-1) if half else np.zeros(f.shape[:-1])
    if K % 2:
        out = out + w[half] * f[..., half]
    return out


def _fixed_segment(field: PotentialField, X: np.ndarray, Y: np.ndarray, rule: SegmentRule,
                   chunk: int = 200_000) -> np.ndarray:
    a, b, w = rule.nodes()
    X, Y = np.broadcast_arrays(X, Y)
    shape = X.shape[:-1]
    D = X.shape[-1]
    Xf = X.reshape(-1, D)
    Yf = Y.reshape(-1, D)
    V = Yf - Xf
    out = np.empty(Xf.shape[0])
    step = max(1, chunk // max(1, a.size))
    for s in range(0, Xf.shape[0], step):
        xs, ys, vs = Xf[s:s + step], Yf[s:s + step], V[s:s + step]
        pts = a[None, :, None] * xs[:, None, :] + b[None, :, None] * ys[:, None, :]
        A = field(pts)
        f = np.sum(A * vs[:, None, :], axis=-1)
        out[s:s + step] = _symmetric_sum(f, w)
    return out.reshape(shape)


def segment_potential(field: PotentialField, X, Y, rule: Optional[SegmentRule] = None) -> np.ndarray:
    """I_A(X,Y) = int_0^1 A((1-t)X + tY)·(Y-X) dt.

    With ``rule=None`` the order is the exact one for polynomial fields, otherwise
    Gauss order 16 doubled until successive values agree to 1e-12 relative.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-1] != field.dimension or Y.shape[-1] != field.dimension:
        raise DimensionError("segment endpoints do not match the field dimension")
    if rule is None:
        rule = exact_rule_for(field)
    if rule is not None:
        out = _fixed_segment(field, X, Y, rule)
        return out if out.ndim else float(out)
    return _adaptive_segment(field, X, Y)


def _adaptive_segment(field, X, Y):
    order = ADAPTIVE_START
    prev = _fixed_segment(field, X, Y, SegmentRule(order))
    while order < ADAPTIVE_MAX:
        order *= 2
        cur = _fixed_segment(field, X, Y, SegmentRule(order))
        scale = float(np.max(np.abs(cur))) if np.size(cur) else 0.0
        if np.max(np.abs(cur - prev), initial=0.0) <= ADAPTIVE_RTOL * max(scale, 1e-300):
            return cur if cur.ndim else float(cur)
        prev = cur
    return cur if cur.ndim else float(cur)


# ---------------------------------------------------------------------------
# measures on [0,1]


Number = Union[float, Fraction]


@dataclass(frozen=True)
class QuadratureMeasure:
    atoms: Tuple[Tuple[Number, Number], ...] = ()
    continuous_weight: Number = 0
    name_tag: str = "custom"

    def __post_init__(self):
        for t, _ in self.atoms:
            if not 0 <= t <= 1:
                raise ValueError("atom nodes must lie in [0,1]")
        if self.continuous_weight < 0:
            raise ValueError("continuous weight must be >= 0")

    @property
    def mass(self) -> float:
        return float(sum(Fraction(w) if isinstance(w, (int, Fraction)) else w
                         for _, w in self.atoms) + self.continuous_weight)

    def moment(self, j: int, exact: bool = False):
        exact_ok = all(isinstance(v, (int, Fraction)) for a in self.atoms for v in a) and \
            isinstance(self.continuous_weight, (int, Fraction))
        if exact_ok:
            m = sum((Fraction(w) * Fraction(t) ** j for t, w in self.atoms), Fraction(0))
            m += Fraction(self.continuous_weight) / (j + 1)
            return m if exact else float(m)
        m = math.fsum(float(w) * float(t) ** j for t, w in self.atoms)
        return m + float(self.continuous_weight) / (j + 1)

    def to_json(self) -> dict:
        return {"name": self.name_tag,
                "atoms": [[float(t), float(w)] for t, w in self.atoms],
                "continuous_weight": float(self.continuous_weight)}


LEBESGUE = QuadratureMeasure((), 1, "lebesgue")
MIDPOINT = QuadratureMeasure(((Fraction(1, 2), 1),), 0, "midpoint")
ENDPOINTS = QuadratureMeasure(((0, Fraction(1, 2)), (1, Fraction(1, 2))), 0, "endpoints")
SIMPSON = QuadratureMeasure(((0, Fraction(1, 6)), (Fraction(1, 2), Fraction(2, 3)),
                             (1, Fraction(1, 6))), 0, "simpson")
NAMED_MEASURES = {m.name_tag: m for m in (LEBESGUE, MIDPOINT, ENDPOINTS, SIMPSON)}


def measure_from_spec(spec) -> QuadratureMeasure:
    if isinstance(spec, QuadratureMeasure):
        return spec
    if isinstance(spec, str):
        if spec not in NAMED_MEASURES:
            raise ValueError(f"unknown measure {spec!r}")
        return NAMED_MEASURES[spec]
    atoms = tuple((float(t), float(w)) for t, w in spec.get("atoms", []))
    return QuadratureMeasure(atoms, float(spec.get("continuous_weight", 0.0)),
                             spec.get("name", "custom"))


def measure_potential(field: PotentialField, mu: QuadratureMeasure, x, y,
                      rule: Optional[SegmentRule] = None):
    """I^mu(x,y) = int A((1-t)x + t y)·(y-x) dmu(t)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not mu.atoms:
        if mu.continuous_weight == 1:
            return segment_potential(field, x, y, rule)
        return float(mu.continuous_weight) * segment_potential(field, x, y, rule)
    v = y - x
    out = 0.0
    for t, w in mu.atoms:
        t = float(t)
        pt = (1.0 - t) * x + t * y if 0.0 < t < 1.0 else (x if t == 0.0 else y)
        out = out + float(w) * np.sum(field(pt) * v, axis=-1)
    if mu.continuous_weight:
        out = out + float(mu.continuous_weight) * segment_potential(field, x, y, rule)
    return out


# ---------------------------------------------------------------------------
# identities


def _triangle_order(field: PotentialField, rule: Optional[SegmentRule]) -> int:
    # the Duffy integrand has degree <= deg in each variable
    deg = field.degree
    base = rule.order if rule is not None else 1
    if deg is None:
        return max(base, 32)
    return max(base, math.ceil((deg + 1) / 2))


def simplex_flux(field: PotentialField, X, Y, Z, order: int) -> np.ndarray:
    """int over {s,t>=0, s+t<=1} of dA((1-t-s)X + tY + sZ)[Y-X, Z-X], via a Duffy map."""
    X, Y, Z = (np.asarray(v, float) for v in (X, Y, Z))
    t, w = _gauss_01(order)
    sig = t[:, None]
    tau = t[None, :]
    s_ = np.broadcast_to(sig, (order, order))
    t_ = (1.0 - sig) * tau
    wt = (w[:, None] * w[None, :]) * (1.0 - sig)
    u = Y - X
    v = Z - X
    P = (X[..., None, None, :] + t_[..., None] * u[..., None, None, :]
         + s_[..., None] * v[..., None, None, :])
    F = exterior_derivative(field, P).components
    vals = np.einsum("...i,...ij,...j->...", u[..., None, None, :], F, v[..., None, None, :])
    return np.sum(vals * wt, axis=(-2, -1))


def triangle_residual(field: PotentialField, X, Y, Z, rule: Optional[SegmentRule] = None):
    """|I(X,Y) + I(Y,Z) + I(Z,X) - flux| for the oriented triangle XYZ."""
    loop = (segment_potential(field, X, Y, rule) + segment_potential(field, Y, Z, rule)
            + segment_potential(field, Z, X, rule))
    S = simplex_flux(field, X, Y, Z, _triangle_order(field, rule))
    out = np.abs(loop - S)
    return out if np.ndim(out) else float(out)


def covariant_ftc_residual(field: PotentialField, U, X, Y, rule: SegmentRule = SegmentRule(32),
                           inner: Optional[SegmentRule] = None):
    """Residual of e^{iI(X,Y)}U(Y) - U(X) = int_0^1 e^{iI(X,g(t))} grad_A U(g(t))·(Y-X) dt."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    a, b, w = rule.nodes()
    pts = a[:, None] * X[..., None, :] + b[:, None] * Y[..., None, :]
    Xb = np.broadcast_to(X[..., None, :], pts.shape)
    phase = segment_potential(field, Xb, pts, inner)
    grad = U.gradient(pts) + 1j * field(pts) * U(pts)[..., None]
    integrand = np.exp(1j * phase) * np.sum(grad * (Y - X)[..., None, :], axis=-1)
    rhs = np.sum(integrand * w, axis=-1)
    lhs = np.exp(1j * segment_potential(field, X, Y, inner)) * U(Y) - U(X)
    out = np.abs(lhs - rhs)
    return out if np.ndim(out) else float(out)


def wedge_l1(u, v) -> np.ndarray:
    """sum_{i<j} |u_i v_j - u_j v_i|, the norm dual to the max-entry norm on two-forms."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    D = u.shape[-1]
    tot = np.zeros(np.broadcast_shapes(u.shape, v.shape)[:-1])
    for i in range(D):
        for j in range(i + 1, D):
            tot = tot + np.abs(u[..., i] * v[..., j] - u[..., j] * v[..., i])
    return tot


def three_point_gap(field: PotentialField, X, Y, Z, U, rule: Optional[SegmentRule] = None,
                    beta: Optional[float] = None, cap: float = 2.0):
    """(lhs, rhs) of the three-point estimate.

    rhs = |e^{iI(Z,Y)}U(Y) - U(Z)| + |e^{iI(Z,X)}U(X) - U(Z)|
          + |U(Z)| min{cap, ||dA|| |(X-Z)^(Y-Z)| / 2}.
    ``cap=2`` is the sharp bound on |e^{i theta} - 1|.
    """
    X, Y, Z = (np.asarray(v, float) for v in (X, Y, Z))
    if beta is None:
        pts = np.stack(np.broadcast_arrays(X, Y, Z))
        lo = pts.min(axis=0).reshape(-1, field.dimension)
        hi = pts.max(axis=0).reshape(-1, field.dimension)
        hi = np.where(hi > lo, hi, lo + 1e-9)
        beta = np.array([sup_norm_dA(field, np.stack([a, b], -1), 5) for a, b in zip(lo, hi)])
        beta = beta.reshape(pts.shape[1:-1]) if pts.ndim > 2 else float(beta[0])
    uX, uY, uZ = U(X), U(Y), U(Z)
    lhs = np.abs(np.exp(1j * segment_potential(field, X, Y, rule)) * uY - uX)
    r1 = np.abs(np.exp(1j * segment_potential(field, Z, Y, rule)) * uY - uZ)
    r2 = np.abs(np.exp(1j * segment_potential(field, Z, X, rule)) * uX - uZ)
    r3 = np.abs(uZ) * np.minimum(cap, 0.5 * beta * wedge_l1(X - Z, Y - Z))
    return lhs, r1 + r2 + r3


# ---------------------------------------------------------------------------
# constant-field shift


class NonConstantFieldError(ValueError):
    """The exterior derivative varies over the sampled box."""


def constant_two_form(field: PotentialField, box=None) -> np.ndarray:
    """Return the constant matrix F of dA, after checking constancy by sampling."""
    D = field.dimension
    if box is None:
        box = np.array([[-1.0, 1.0]] * D)
    if not is_constant_dA(field, box):
        raise NonConstantFieldError("exterior derivative is not constant")
    return exterior_derivative(field, np.zeros(D)).components


def shift_term(F: np.ndarray, h) -> np.ndarray:
    """|h| dA[(h,0), e_{d+1}] for a constant two-form F on R^{d+1}."""
    h = np.asarray(h, float)
    d = h.shape[-1]
    b = F[:d, d]
    return np.linalg.norm(h, axis=-1) * (h @ b)


def shifted_boundary_potential(field: PotentialField, lam: float, x, y,
                               rule: Optional[SegmentRule] = None, F: Optional[np.ndarray] = None):
    """I_{A^par}(x,y) + lam |y-x| dA[(y-x,0), e_{d+1}] for a field with constant dA."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape[-1] != field.dimension - 1:
        raise DimensionError("boundary points must have d = field.dimension - 1 coordinates")
    if F is None:
        lo = np.minimum(x.reshape(-1, x.shape[-1]).min(0), y.reshape(-1, y.shape[-1]).min(0)) - 1
        hi = np.maximum(x.reshape(-1, x.shape[-1]).max(0), y.reshape(-1, y.shape[-1]).max(0)) + 1
        box = np.concatenate([np.stack([lo, hi], -1), [[0.0, 1.0]]])
        F = constant_two_form(field, box)
    par = parallel_field(field)
    base = segment_potential(par, x, y, rule)
    if lam == 0:
        return base
    return base + lam * shift_term(F, y - x)


def boundary_flux_phase(F: np.ndarray, h) -> np.ndarray:
    """Phase gap nu(h) = |h| dA[(h,0), e_{d+1}] appearing in the constant-field estimate."""
    return shift_term(F, h)
