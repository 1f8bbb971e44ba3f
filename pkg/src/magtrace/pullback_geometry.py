"""Chart pull-backs of potentials, the covariant chain rule, and geodesic potentials on
round spheres and circles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .field_model import Polynomial, PotentialField, custom_field, polynomial_field
from .potential import ADAPTIVE_MAX, ADAPTIVE_RTOL, ADAPTIVE_START, SegmentRule, _composite, segment_potential

CAP_HALF_ANGLE = math.pi / 3


class ChartDomainError(ValueError):
    """Point outside the declared chart domain."""


class AntipodalError(ValueError):
    """The minimising geodesic is not unique."""


@dataclass(frozen=True)
class ChartMap:
    """psi: chart domain in R^n -> ambient R^m with differential Dpsi (m x n)."""

    kind: str
    dim: int
    ambient_dim: int
    forward_fn: Callable
    differential_fn: Callable
    domain_radius: float = math.inf
    radius: Optional[float] = None
    center: Optional[np.ndarray] = None
    inverse_fn: Optional[Callable] = None
    label: str = ""
    meta: dict = dc_field(default_factory=dict, compare=False)

    @property
    def injectivity_radius(self) -> float:
        return math.pi * self.radius if self.radius is not None else math.inf

    def check_domain(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.shape[-1] != self.dim:
            raise ChartDomainError(f"chart points need {self.dim} coordinates")
        if np.any(np.linalg.norm(x, axis=-1) > self.domain_radius * (1 + 1e-12)):
            raise ChartDomainError(f"point outside the chart domain |x| <= {self.domain_radius}")
        return x

    def forward(self, x) -> np.ndarray:
        return self.forward_fn(self.check_domain(x))

    def differential(self, x) -> np.ndarray:
        return self.differential_fn(self.check_domain(x))

    def inverse(self, z) -> np.ndarray:
        if self.inverse_fn is None:
            raise ValueError("chart has no inverse")
        return self.inverse_fn(np.asarray(z, float))

    def normal(self, z) -> np.ndarray:
        """Outward unit normal of the sphere or circle at ambient z."""
        if self.radius is None:
            raise ValueError("flat charts carry no normal")
        return (np.asarray(z, float) - self.center) / self.radius


# ---------------------------------------------------------------------------
# flat diffeomorphisms


def identity_chart(D: int) -> ChartMap:
    eye = np.eye(D)
    return ChartMap("flat_diffeo", D, D, lambda x: x.copy(),
                    lambda x: np.broadcast_to(eye, x.shape[:-1] + (D, D)).copy(),
                    inverse_fn=lambda z: z.copy(), label="identity")


def linear_chart(M, b=None) -> ChartMap:
    M = np.asarray(M, float)
    D = M.shape[0]
    if M.shape != (D, D) or abs(np.linalg.det(M)) < 1e-12:
        raise ValueError("linear chart needs an invertible square matrix")
    b = np.zeros(D) if b is None else np.asarray(b, float)
    Minv = np.linalg.inv(M)
    return ChartMap("flat_diffeo", D, D, lambda x: x @ M.T + b,
                    lambda x: np.broadcast_to(M, x.shape[:-1] + (D, D)).copy(),
                    inverse_fn=lambda z: (z - b) @ Minv.T, label="linear")


def quadratic_chart(D: int, strength: float = 0.1, domain_radius: float = 1.0) -> ChartMap:
    """psi_i(x) = x_i + strength x_{i+1}^2 (indices mod D), injective for small strength."""
    if D < 2:
        raise ValueError("quadratic chart needs D >= 2")
    if 2 * abs(strength) * domain_radius >= 0.5:
        raise ValueError("strength too large for injectivity on the domain")
    nxt = (np.arange(D) + 1) % D

    def fwd(x):
        return x + strength * x[..., nxt] ** 2

    def diff(x):
        J = np.broadcast_to(np.eye(D), x.shape[:-1] + (D, D)).copy()
        for i in range(D):
            J[..., i, nxt[i]] += 2 * strength * x[..., nxt[i]]
        return J

    return ChartMap("flat_diffeo", D, D, fwd, diff, domain_radius, label=f"quadratic({strength})")


# ---------------------------------------------------------------------------
# stereographic charts; the chart origin maps to the ambient origin, the pole axis is e_0


def _stereo(w, R, c):
    q = np.sum(w * w, -1, keepdims=True)
    D = 1 + q
    return c + R * np.concatenate([(q - 1) / D, 2 * w / D], -1)


def _stereo_diff(w, R):
    n = w.shape[-1]
    q = np.sum(w * w, -1)[..., None]
    D = 1 + q
    top = 4 * w / D ** 2
    rest = 2 * np.eye(n) / D[..., None] - 4 * w[..., :, None] * w[..., None, :] / D[..., None] ** 2
    return R * np.concatenate([top[..., None, :], rest], -2)


def _stereo_inv(z, R, c):
    v = (z - c) / R
    return v[..., 1:] / (1 - v[..., :1])


def stereographic_sphere(radius: float = 1.0) -> ChartMap:
    """Sphere of the given radius centred at (radius,0,0); cap of angular radius pi/3
    around the ambient origin."""
    return _stereographic(2, radius)


def stereographic_circle(radius: float = 1.0) -> ChartMap:
    return _stereographic(1, radius)


def _stereographic(n: int, R: float) -> ChartMap:
    if not R > 0:
        raise ValueError("radius must be positive")
    c = np.zeros(n + 1)
    c[0] = R
    kind = "stereographic_sphere" if n == 2 else "stereographic_circle"
    return ChartMap(kind, n, n + 1, lambda w: _stereo(w, R, c), lambda w: _stereo_diff(w, R),
                    math.tan(CAP_HALF_ANGLE / 2), R, c, lambda z: _stereo_inv(z, R, c),
                    f"{kind}(R={R})")


# ---------------------------------------------------------------------------
# pull-back and chain rule


def pullback_potential(chart: ChartMap, field: PotentialField) -> PotentialField:
    """(psi^*A)(x) = Dpsi(x)^T A(psi(x))."""
    if field.dimension != chart.ambient_dim:
        raise ValueError("field must live on the ambient space of the chart")
    if chart.kind == "flat_diffeo" and chart.label == "identity":
        return field

    def ev(x):
        x = np.asarray(x, float)
        J = chart.differential(x)
        return np.einsum("...ab,...a->...b", J, field(chart.forward(x)))

    return custom_field(chart.dim, ev, label=f"pullback({field.label},{chart.label})")


def chain_rule_residual(chart: ChartMap, field: PotentialField, U, point, h: float = 1e-4) -> float:
    """|grad_{psi*A}(U o psi)(x) - Dpsi(x)^T (grad_A U)(psi(x))| with the left side by
    central differences."""
    if chart.kind != "flat_diffeo":
        raise ValueError("chain rule residual needs a flat diffeomorphism")
    x = chart.check_domain(point)
    D = chart.dim
    steps = h * np.eye(D)
    comp = lambda y: U(chart.forward(y))
    fd = np.array([(comp(x + e) - comp(x - e)) / (2 * h) for e in steps])
    z = chart.forward(x)
    uz = U(z)
    lhs = fd + 1j * pullback_potential(chart, field)(x) * uz
    rhs = chart.differential(x).T @ (U.gradient(z) + 1j * field(z) * uz)
    return float(np.linalg.norm(lhs - rhs))


# ---------------------------------------------------------------------------
# tangential fields on spheres


def _spherical(chart: ChartMap, z):
    v = (np.asarray(z, float) - chart.center) / chart.radius
    theta = np.arccos(np.clip(v[..., 2], -1, 1))
    phi = np.arctan2(v[..., 1], v[..., 0])
    return v, theta, phi


def _frames(theta, phi):
    e_t = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)], -1)
    e_p = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], -1)
    return e_t, e_p


def _require_sphere(chart: ChartMap):
    if chart.kind != "stereographic_sphere":
        raise ValueError("needs a stereographic sphere chart")


def from_spherical(chart: ChartMap, a_theta: Callable, a_phi: Callable, label: str = "spherical") -> PotentialField:
    """A = a_theta dtheta + a_phi dphi in spherical coordinates about the sphere centre
    (polar axis e_2), returned as an ambient covector field."""
    _require_sphere(chart)
    R = chart.radius

    def ev(z):
        _, th, ph = _spherical(chart, z)
        e_t, e_p = _frames(th, ph)
        return (a_theta(th, ph)[..., None] * e_t / R
                + (a_phi(th, ph) / (R * np.sin(th)))[..., None] * e_p)

    return custom_field(3, ev, label=label)


def azimuthal_field(chart: ChartMap, c: float) -> PotentialField:
    """c times the unit azimuthal form; an equatorial arc of angle alpha carries c R alpha."""
    _require_sphere(chart)
    R = chart.radius
    return from_spherical(chart, lambda th, ph: np.zeros_like(th),
                          lambda th, ph: c * R * np.sin(th), f"azimuthal({c})")


def tangential_projection(chart: ChartMap, ambient: PotentialField) -> PotentialField:
    """A - (A.nu) nu, with nu the outward radial direction."""
    _require_sphere(chart)

    def ev(z):
        z = np.asarray(z, float)
        nu = chart.normal(z)
        nu = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
        a = ambient(z)
        return a - np.sum(a * nu, -1, keepdims=True) * nu

    return custom_field(3, ev, label=f"tan({ambient.label})")


def gradient_field(chart: ChartMap, phi: Polynomial) -> PotentialField:
    """Tangential part of grad Phi for an ambient polynomial Phi (a closed field)."""
    return tangential_projection(chart, polynomial_field([phi.derivative(i) for i in range(3)]))


def generic_tangential_field(chart: ChartMap, rng: np.random.Generator, degree: int = 2,
                             scale: float = 1.0) -> PotentialField:
    from .field_model import random_polynomial
    comps = [random_polynomial(3, degree, rng, scale) for _ in range(3)]
    return tangential_projection(chart, polynomial_field(comps))


# ---------------------------------------------------------------------------
# geodesic potential


def _arc(chart: ChartMap, x, y):
    zx, zy = chart.forward(x), chart.forward(y)
    a = (zx - chart.center) / chart.radius
    b = (zy - chart.center) / chart.radius
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    dot = float(np.dot(a, b))
    perp = float(np.linalg.norm(b - dot * a))
    omega = math.atan2(perp, dot)
    return a, b, omega


def geodesic_distance(chart: ChartMap, x, y) -> float:
    return chart.radius * _arc(chart, x, y)[2]


def _arc_integral(chart, field, a, b, omega, order):
    _, t, w = _composite(order, 1)
    R, c = chart.radius, chart.center
    s = math.sin(omega)
    ca, cb = np.sin((1 - t) * omega) / s, np.sin(t * omega) / s
    da, db = -omega * np.cos((1 - t) * omega) / s, omega * np.cos(t * omega) / s
    pts = c + R * (ca[:, None] * a + cb[:, None] * b)
    vel = R * (da[:, None] * a + db[:, None] * b)
    return math.fsum(w * np.sum(field(pts) * vel, -1))


def geodesic_potential(chart: ChartMap, field: PotentialField, x, y,
                       rule: Optional[SegmentRule] = None) -> float:
    """Line integral of A along the minimising great-circle arc from psi(x) to psi(y)."""
    if chart.radius is None:
        raise ValueError("geodesic potential needs a sphere or circle chart")
    a, b, omega = _arc(chart, x, y)
    if omega == 0:
        return 0.0
    if omega >= math.pi * (1 - 1e-12):
        raise AntipodalError("antipodal points have no unique minimising geodesic")
    if rule is not None:
        return _arc_integral(chart, field, a, b, omega, rule.size)
    order = ADAPTIVE_START
    prev = _arc_integral(chart, field, a, b, omega, order)
    while order < ADAPTIVE_MAX:
        order *= 2
        cur = _arc_integral(chart, field, a, b, omega, order)
        if abs(cur - prev) <= ADAPTIVE_RTOL * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return cur


def transport_gap(chart: ChartMap, field: PotentialField, x, y,
                  rule: Optional[SegmentRule] = None) -> float:
    """|I_{psi*A}(x,y) - geodesic potential of A between psi(x) and psi(y)|."""
    x = chart.check_domain(x)
    y = chart.check_domain(y)
    flat = segment_potential(pullback_potential(chart, field), x, y, rule)
    return abs(float(flat) - geodesic_potential(chart, field, x, y, rule))
