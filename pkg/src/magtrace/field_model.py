"""Vector potentials, their exterior derivatives and gauge changes.

Points are numpy arrays whose trailing axis is the coordinate axis, so every
evaluator works on single points and on batches alike.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

KINDS = ("zero", "constant", "landau", "polynomial", "custom")


class DimensionError(ValueError):
    """Point and field live in different dimensions."""


class NonFiniteError(ValueError):
    """A field evaluation produced inf or nan."""


# ---------------------------------------------------------------------------
# polynomials


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial in ``dimension`` variables stored as a coefficient table.

    ``terms`` maps a multi-index (tuple of exponents) to its coefficient.
    """

    dimension: int
    terms: Tuple[Tuple[Tuple[int, ...], float], ...] = ()

    @classmethod
    def from_dict(cls, dimension: int, table: Dict[Tuple[int, ...], float]) -> "Polynomial":
        merged: Dict[Tuple[int, ...], float] = {}
        for powers, coef in table.items():
            powers = tuple(int(a) for a in powers)
            if len(powers) != dimension or min(powers, default=0) < 0:
                raise ValueError(f"bad multi-index {powers} for dimension {dimension}")
            merged[powers] = merged.get(powers, 0.0) + float(coef)
        items = tuple(sorted((k, v) for k, v in merged.items() if v != 0.0))
        return cls(dimension, items)

    @classmethod
    def constant(cls, dimension: int, value: float) -> "Polynomial":
        return cls.from_dict(dimension, {(0,) * dimension: value})

    @classmethod
    def linear(cls, coeffs: Sequence[float], offset: float = 0.0) -> "Polynomial":
        d = len(coeffs)
        table = {(0,) * d: offset}
        for i, c in enumerate(coeffs):
            e = [0] * d
            e[i] = 1
            table[tuple(e)] = table.get(tuple(e), 0.0) + c
        return cls.from_dict(d, table)

    def as_dict(self) -> Dict[Tuple[int, ...], float]:
        return dict(self.terms)

    @property
    def degree(self) -> int:
        return max((sum(k) for k, _ in self.terms), default=0)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        if not self.terms:
            return out
        top = max(max(k) for k, _ in self.terms)
        # powers[a][..., i] = x_i ** a
        powers = [np.ones_like(x)]
        for _ in range(top):
            powers.append(powers[-1] * x)
        for k, c in self.terms:
            term = np.full(x.shape[:-1], c)
            for i, a in enumerate(k):
                if a:
                    term = term * powers[a][..., i]
            out = out + term
        return out

    def derivative(self, axis: int) -> "Polynomial":
        table: Dict[Tuple[int, ...], float] = {}
        for k, c in self.terms:
            if k[axis] == 0:
                continue
            e = list(k)
            e[axis] -= 1
            table[tuple(e)] = table.get(tuple(e), 0.0) + c * k[axis]
        return Polynomial.from_dict(self.dimension, table)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if other.dimension != self.dimension:
            raise DimensionError("polynomial dimensions differ")
        table = self.as_dict()
        for k, c in other.terms:
            table[k] = table.get(k, 0.0) + c
        return Polynomial.from_dict(self.dimension, table)

    def scale(self, c: float) -> "Polynomial":
        return Polynomial.from_dict(self.dimension, {k: c * v for k, v in self.terms})

    def restrict_last(self) -> "Polynomial":
        """Set the last variable to zero and drop it."""
        table = {k[:-1]: c for k, c in self.terms if k[-1] == 0}
        return Polynomial.from_dict(self.dimension - 1, table)

    def to_json(self) -> list:
        return [{"powers": list(k), "coef": c} for k, c in self.terms]

    @classmethod
    def from_json(cls, dimension: int, data) -> "Polynomial":
        table: Dict[Tuple[int, ...], float] = {}
        for item in data:
            k = tuple(item["powers"])
            table[k] = table.get(k, 0.0) + float(item["coef"])
        return cls.from_dict(dimension, table)


def random_polynomial(dimension: int, degree: int, rng: np.random.Generator,
                      scale: float = 1.0, min_degree: int = 0) -> Polynomial:
    table = {}
    for k in itertools.product(range(degree + 1), repeat=dimension):
        if min_degree <= sum(k) <= degree:
            table[k] = scale * rng.uniform(-1.0, 1.0)
    return Polynomial.from_dict(dimension, table)


# ---------------------------------------------------------------------------
# two-forms


@dataclass(frozen=True)
class TwoForm:
    """Antisymmetric matrix (or a batch of them on the last two axes)."""

    components: np.ndarray

    def norm(self) -> float:
        c = np.asarray(self.components)
        return float(np.max(np.abs(c))) if c.size else 0.0

    def apply(self, u, v) -> np.ndarray:
        """dA[u, v] = u^T F v."""
        return np.einsum("...i,...ij,...j->...", np.asarray(u, float),
                         self.components, np.asarray(v, float))


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialField:
    """Real covector field A on R^dimension."""

    dimension: int
    eval_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kind_tag: str = "custom"
    components: Optional[Tuple[Polynomial, ...]] = None
    label: str = ""
    meta: dict = dc_field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind_tag not in KINDS:
            raise ValueError(f"unknown kind_tag {self.kind_tag!r}")

    def __call__(self, x) -> np.ndarray:
        return self.eval_fn(np.asarray(x, dtype=float))

    def jacobian(self, x) -> np.ndarray:
        """J[..., a, b] = d A_a / d x_b."""
        if self.jacobian_fn is None:
            raise ValueError("field has no analytic jacobian")
        return self.jacobian_fn(np.asarray(x, dtype=float))

    @property
    def polynomial(self) -> bool:
        return self.components is not None

    @property
    def degree(self) -> Optional[int]:
        if self.components is None:
            return None
        return max(c.degree for c in self.components)

    def to_json(self) -> dict:
        out = {"kind": self.kind_tag, "dimension": self.dimension, "label": self.label}
        if self.components is not None:
            out["coefficients"] = [c.to_json() for c in self.components]
        return out


def polynomial_field(components: Sequence[Polynomial], kind_tag: str = "polynomial",
                     label: str = "") -> PotentialField:
    comps = tuple(components)
    D = len(comps)
    if any(c.dimension != D for c in comps):
        raise DimensionError("each component must be a polynomial in D variables")
    derivs = tuple(tuple(c.derivative(b) for b in range(D)) for c in comps)

    def ev(x):
        _check_dim(x, D)
        return np.stack([c(x) for c in comps], axis=-1)

    def jac(x):
        _check_dim(x, D)
        rows = [np.stack([derivs[a][b](x) for b in range(D)], axis=-1) for a in range(D)]
        return np.stack(rows, axis=-2)

    return PotentialField(D, ev, jac, kind_tag, comps, label)


def _check_dim(x: np.ndarray, D: int) -> None:
    if x.shape[-1:] != (D,):
        raise DimensionError(f"expected points with {D} coordinates, got shape {x.shape}")


def zero_field(dimension: int) -> PotentialField:
    return polynomial_field([Polynomial(dimension) for _ in range(dimension)], "zero", "zero")


def constant_field(value: Sequence[float]) -> PotentialField:
    D = len(value)
    return polynomial_field([Polynomial.constant(D, v) for v in value], "constant",
                            f"constant{tuple(value)}")


def landau_field(beta: float, dimension: int = 2, plane: Tuple[int, int] = (0, 1),
                 gauge: str = "standard") -> PotentialField:
    """Linear potential whose two-form is beta in the (i, j) entry and zero elsewhere.

    gauge ``standard``: A_j = beta x_i.  ``symmetric``: A_i = -beta x_j/2, A_j = beta x_i/2.
    ``halfspace``: A_i = -beta x_j (with j the normal axis this is A = (-beta t, 0)).
    """
    i, j = plane
    if i == j or not (0 <= i < dimension and 0 <= j < dimension):
        raise ValueError("plane must name two distinct axes")
    comps = [Polynomial(dimension) for _ in range(dimension)]

    def lin(axis, c):
        e = [0.0] * dimension
        e[axis] = c
        return Polynomial.linear(e)

    if gauge == "standard":
        comps[j] = lin(i, beta)
    elif gauge == "symmetric":
        comps[i] = lin(j, -beta / 2)
        comps[j] = lin(i, beta / 2)
    elif gauge == "halfspace":
        comps[i] = lin(j, -beta)
    else:
        raise ValueError(f"unknown gauge {gauge!r}")
    f = polynomial_field(comps, "landau", f"landau(beta={beta},{gauge})")
    f.meta["beta"] = beta
    return f


def custom_field(dimension: int, eval_fn, jacobian_fn=None, label: str = "custom") -> PotentialField:
    return PotentialField(dimension, eval_fn, jacobian_fn, "custom", None, label)


def eval_potential(field: PotentialField, point) -> np.ndarray:
    x = np.asarray(point, dtype=float)
    _check_dim(x, field.dimension)
    out = field(x)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("field evaluation is not finite")
    return out


def parallel_field(field: PotentialField) -> PotentialField:
    """A^par(x) = (A_1, ..., A_d)(x, 0) on the boundary hyperplane."""
    D = field.dimension
    if D < 2:
        raise DimensionError("need at least two dimensions to restrict")
    if field.components is not None:
        kind = field.kind_tag if field.kind_tag in ("zero", "constant") else "polynomial"
        return polynomial_field([c.restrict_last() for c in field.components[:-1]], kind,
                                f"par({field.label})")

    def lift(x):
        x = np.asarray(x, float)
        return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)

    def ev(x):
        return field(lift(x))[..., :-1]

    jac = None
    if field.jacobian_fn is not None:
        def jac(x):
            return field.jacobian(lift(x))[..., :-1, :-1]
    return PotentialField(D - 1, ev, jac, "custom", None, f"par({field.label})")


def reflected_field(field: PotentialField) -> PotentialField:
    """Pull-back by (x, t) -> (x, -t): (A_1..A_d, -A_{d+1})(x, -t)."""
    D = field.dimension
    flip = np.ones(D)
    flip[-1] = -1.0
    if field.components is not None:
        comps = []
        for a, c in enumerate(field.components):
            table = {k: v * ((-1) ** k[-1]) * flip[a] for k, v in c.terms}
            comps.append(Polynomial.from_dict(D, table))
        kind = field.kind_tag if field.kind_tag != "landau" else "landau"
        return polynomial_field(comps, kind, f"refl({field.label})")

    def ev(x):
        return field(np.asarray(x, float) * flip) * flip

    jac = None
    if field.jacobian_fn is not None:
        def jac(x):
            J = field.jacobian(np.asarray(x, float) * flip)
            return J * flip[:, None] * flip[None, :]
    return PotentialField(D, ev, jac, "custom", None, f"refl({field.label})")


# ---------------------------------------------------------------------------
# exterior derivative


def default_fd_step(box=None) -> float:
    if box is None:
        return 1e-4
    box = np.asarray(box, float)
    return 1e-4 * float(np.linalg.norm(box[:, 1] - box[:, 0]))


def exterior_derivative(field: PotentialField, point, h: Optional[float] = None,
                        box=None) -> TwoForm:
    """F_ij = d_i A_j - d_j A_i; analytic when a jacobian exists and no step is given."""
    x = np.asarray(point, dtype=float)
    _check_dim(x, field.dimension)
    if field.jacobian_fn is not None and h is None:
        J = field.jacobian(x)
    else:
        step = h if h is not None else default_fd_step(box)
        J = fd_jacobian(field, x, step)
    if not np.all(np.isfinite(J)):
        raise NonFiniteError("non-finite derivative; point may be near the box edge")
    F = np.swapaxes(J, -1, -2) - J
    return TwoForm(F)


def fd_jacobian(field: PotentialField, x: np.ndarray, h: float) -> np.ndarray:
    D = field.dimension
    cols = []
    for b in range(D):
        e = np.zeros(D)
        e[b] = h
        cols.append((field(x + e) - field(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def sup_norm_dA(field: PotentialField, box, samples: int) -> float:
    """Max of the max-entry norm of dA over a lattice with ``samples`` points per axis."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if samples < 2:
        raise ValueError("samples must be >= 2 per axis")
    if box.shape[0] != field.dimension:
        raise DimensionError("box dimension differs from field dimension")
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("empty box")
    axes = [np.linspace(lo, hi, samples) for lo, hi in box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.dimension)
    F = exterior_derivative(field, pts, box=box).components
    return float(np.max(np.abs(F))) if F.size else 0.0


def is_constant_dA(field: PotentialField, box, tol: float = 1e-9, samples: int = 3) -> bool:
    box = np.asarray(box, float).reshape(-1, 2)
    axes = [np.linspace(lo, hi, samples) for lo, hi in box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.dimension)
    F = exterior_derivative(field, pts, box=box).components
    scale = max(1.0, float(np.max(np.abs(F))))
    return bool(np.max(np.abs(F - F[0])) <= tol * scale)


# ---------------------------------------------------------------------------
# gauges


@dataclass(frozen=True)
class GaugeFunction:
    dimension: int
    eval_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    polynomial: Optional[Polynomial] = None

    def __call__(self, x) -> np.ndarray:
        return self.eval_fn(np.asarray(x, dtype=float))

    def gradient(self, x) -> np.ndarray:
        return self.gradient_fn(np.asarray(x, dtype=float))

    def to_json(self) -> dict:
        return {"kind": "polynomial", "coefficients": self.polynomial.to_json()} \
            if self.polynomial is not None else {"kind": "custom"}


def polynomial_gauge(poly: Polynomial) -> GaugeFunction:
    grads = [poly.derivative(b) for b in range(poly.dimension)]

    def grad(x):
        return np.stack([g(x) for g in grads], axis=-1)

    return GaugeFunction(poly.dimension, poly, grad, poly)


def random_polynomial_gauge(dimension: int, degree: int, rng: np.random.Generator,
                            scale: float = 1.0) -> GaugeFunction:
    return polynomial_gauge(random_polynomial(dimension, degree, rng, scale, min_degree=1))


def gauge_transform(field: PotentialField, gauge: GaugeFunction) -> PotentialField:
    """A + grad(Phi); stays polynomial when both inputs are."""
    if gauge.dimension != field.dimension:
        raise DimensionError("gauge and field dimensions differ")
    if field.components is not None and gauge.polynomial is not None:
        comps = [c + gauge.polynomial.derivative(a) for a, c in enumerate(field.components)]
        return polynomial_field(comps, "polynomial", f"{field.label}+grad(phi)")

    def ev(x):
        return field(x) + gauge.gradient(x)

    jac = None
    if field.jacobian_fn is not None and gauge.polynomial is not None:
        P = gauge.polynomial
        hess = [[P.derivative(a).derivative(b) for b in range(P.dimension)]
                for a in range(P.dimension)]

        def jac(x):
            H = np.stack([np.stack([hess[a][b](x) for b in range(P.dimension)], -1)
                          for a in range(P.dimension)], -2)
            return field.jacobian(x) + H
    return PotentialField(field.dimension, ev, jac, "custom", None, f"{field.label}+grad(phi)")
