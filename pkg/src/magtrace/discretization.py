"""Grids, smooth test functions and offset quadrature for singular double integrals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .potential import _gauss_01


class SupportError(ValueError):
    """Test data reaches the edge of the working grid."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class BoundaryGrid:
    """Cell-centred lattice on [-L, L]^d with n points per axis."""

    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("boundary dimension must be 1 or 2")
        if self.n < 8:
            raise ValueError("need n >= 8 points per axis")
        if not self.L > 0:
            raise ValueError("extent must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def axis(self) -> np.ndarray:
        h = self.spacing
        return -self.L + (np.arange(self.n) + 0.5) * h

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    @property
    def diameter(self) -> float:
        return 2.0 * self.L * math.sqrt(self.d)

    def points(self) -> np.ndarray:
        """Lattice points, shape shape + (d,)."""
        ax = self.axis
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(-1, self.d)

    def box(self) -> np.ndarray:
        return np.array([[-self.L, self.L]] * self.d)

    def refine(self, factor: int = 2) -> "BoundaryGrid":
        return replace(self, n=self.n * factor)

    def describe(self) -> dict:
        return {"d": self.d, "n": self.n, "L": self.L}


def product_trapezoid_weights(nodes: np.ndarray, gamma: float) -> np.ndarray:
    """Weights w_k with sum w_k f(t_k) = int (piecewise-linear f) t^gamma dt exactly."""
    t = np.asarray(nodes, float)
    w = np.zeros_like(t)
    g1, g2 = gamma + 1.0, gamma + 2.0
    for k in range(t.size - 1):
        ta, tb = t[k], t[k + 1]
        dt = tb - ta
        m0 = (tb ** g1 - ta ** g1) / g1
        m1 = (tb ** g2 - ta ** g2) / g2
        w[k] += (tb * m0 - m1) / dt
        w[k + 1] += (m1 - ta * m0) / dt
    return w


@dataclass(frozen=True)
class HalfSpaceGrid:
    """Boundary lattice times geometrically graded t nodes t_k = T r^(K-k), k = 1..K.

    The t=0 row is carried separately; quadrature in t uses product-trapezoid
    weights for t^gamma on the nodes [0, t_1, ..., t_K].
    """

    base: BoundaryGrid
    T: float = 1.0
    K: int = 64
    r: float = 0.85
    gamma: float = 0.0

    def __post_init__(self):
        if not self.gamma > -1:
            raise ValueError("weight exponent gamma must exceed -1")
        if not 0 < self.r < 1:
            raise ValueError("grading ratio must lie in (0,1)")
        if self.K < 2:
            raise ValueError("need at least two t nodes")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def t_nodes(self) -> np.ndarray:
        k = np.arange(1, self.K + 1)
        return self.T * self.r ** (self.K - k)

    @property
    def all_t(self) -> np.ndarray:
        return np.concatenate([[0.0], self.t_nodes])

    @property
    def t_weights(self) -> np.ndarray:
        """Weights on all_t (first entry belongs to t = 0)."""
        return product_trapezoid_weights(self.all_t, self.gamma)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.K,) + self.base.shape

    def refine(self, factor: int = 2) -> "HalfSpaceGrid":
        """Double n and interleave t nodes (old nodes are kept)."""
        return replace(self, base=self.base.refine(factor),
                       K=factor * (self.K - 1) + 1, r=self.r ** (1.0 / factor))

    def describe(self) -> dict:
        return {**self.base.describe(), "T": self.T, "K": self.K, "r": self.r, "gamma": self.gamma}


def default_T(beta: float) -> float:
    return max(1.0, 2.0 * beta ** -0.5) if beta > 0 else 1.0


@dataclass
class GridFunction:
    """Complex samples on a grid; half-space functions may also carry their t=0 row."""

    grid: object
    values: np.ndarray
    boundary: Optional[np.ndarray] = None
    source: object = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"value shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")
        if self.boundary is not None:
            self.boundary = np.asarray(self.boundary, dtype=complex)
            if self.boundary.shape != self.grid.base.shape:
                raise ValueError("boundary row has the wrong shape")

    @property
    def is_halfspace(self) -> bool:
        return isinstance(self.grid, HalfSpaceGrid)


def sample(fn, grid: BoundaryGrid) -> GridFunction:
    return GridFunction(grid, fn(grid.points()), source=fn)


def sample_halfspace(fn, grid: HalfSpaceGrid) -> GridFunction:
    """Sample U(x,t) on all t nodes; the t=0 row is stored as the boundary row."""
    X = grid.base.points()
    rows = []
    for t in grid.all_t:
        P = np.concatenate([X, np.full(X.shape[:-1] + (1,), t)], axis=-1)
        rows.append(fn(P))
    return GridFunction(grid, np.stack(rows[1:]), boundary=rows[0], source=fn)


@dataclass
class TwoSidedFunction:
    """Upper and lower half-space samples; the lower side is stored in the reflected
    coordinate tau = -t together with the field it must be differentiated against."""

    upper: GridFunction
    lower: GridFunction
    lower_field: object = None


# ---------------------------------------------------------------------------
# CSV


def write_grid_csv(gf, path) -> None:
    """Columns: side (two-sided only), i0[, i1], t_index (half-space), re, im.
    t_index 0 is the stored t=0 row when present; t nodes are numbered from 1."""
    sides = [("+", gf.upper), ("-", gf.lower)] if isinstance(gf, TwoSidedFunction) else [(None, gf)]
    first = sides[0][1]
    d = first.grid.base.d if first.is_halfspace else first.grid.d
    header = (["side"] if sides[0][0] else []) + [f"i{j}" for j in range(d)]
    if first.is_halfspace:
        header.append("t_index")
    header += ["re", "im"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for side, g in sides:
            pre = [side] if side else []
            if g.is_halfspace:
                blocks = ([(0, g.boundary)] if g.boundary is not None else []) + \
                         [(k + 1, g.values[k]) for k in range(g.grid.K)]
            else:
                blocks = [(None, g.values)]
            for tk, arr in blocks:
                for idx in np.ndindex(arr.shape):
                    v = arr[idx]
                    row = pre + list(idx) + ([tk] if tk is not None else []) + \
                        [repr(float(v.real)), repr(float(v.imag))]
                    w.writerow(row)


def read_grid_csv(path, grid):
    """Inverse of write_grid_csv; returns a GridFunction or TwoSidedFunction."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    half = isinstance(grid, HalfSpaceGrid)
    d = grid.base.d if half else grid.d
    two = bool(rows) and "side" in rows[0]

    def build(sel):
        vals = np.zeros(grid.shape, complex)
        bnd = None
        seen = np.zeros(grid.shape, bool)
        for r in sel:
            idx = tuple(int(r[f"i{j}"]) for j in range(d))
            v = complex(float(r["re"]), float(r["im"]))
            if half:
                tk = int(r["t_index"])
                if tk == 0:
                    if bnd is None:
                        bnd = np.zeros(grid.base.shape, complex)
                    bnd[idx] = v
                    continue
                idx = (tk - 1,) + idx
            vals[idx] = v
            seen[idx] = True
        if not seen.all():
            raise ValueError("CSV does not cover the full lattice")
        return GridFunction(grid, vals, boundary=bnd)

    if two:
        return TwoSidedFunction(build([r for r in rows if r["side"] == "+"]),
                                build([r for r in rows if r["side"] == "-"]))
    return build(rows)


# ---------------------------------------------------------------------------
# test functions


class TestFunction:
    """Smooth complex function with an analytic gradient.  Points have shape (..., D)."""

    __test__ = False  # not a pytest class
    dimension: int = 1
    center: Optional[np.ndarray] = None
    support_radius: Optional[float] = None

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def sup_bound(self) -> float:
        return math.inf

    def lip_bound(self) -> float:
        return math.inf

    def describe(self) -> dict:
        return {"kind": type(self).__name__}

    def __mul__(self, c):
        return Combination(((complex(c), self),))

    __rmul__ = __mul__

    def __add__(self, other):
        return Combination(((1.0, self), (1.0, other)))


@lru_cache(maxsize=None)
def _bump_profile_lip() -> float:
    r = np.linspace(0.0, 1.0, 200001)[1:-1]
    g = np.exp(-1.0 / (1.0 - r * r)) * 2 * r / (1.0 - r * r) ** 2
    return float(g.max()) * 1.001


@lru_cache(maxsize=None)
def bump_mass(d: int) -> float:
    """int_{|z|<1} exp(-1/(1-|z|^2)) dz."""
    import warnings
    from scipy.integrate import IntegrationWarning, quad
    f = lambda r: r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val = quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-14, limit=200)[0]
    sphere = 2.0 if d == 1 else 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
    return sphere * val


class Bump(TestFunction):
    """c exp(-1/(1-|x-center|^2/R^2)) inside the ball, 0 outside."""

    def __init__(self, center, radius: float, scale: complex = 1.0, normalized: bool = False):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.center = np.atleast_1d(np.asarray(center, float))
        self.dimension = self.center.size
        self.support_radius = float(radius)
        if normalized:
            scale = scale / (bump_mass(self.dimension) * radius ** self.dimension)
        self.scale = complex(scale)
        self.normalized = normalized

    def _q(self, x):
        z = (np.asarray(x, float) - self.center) / self.support_radius
        return z, np.sum(z * z, axis=-1)

    def __call__(self, x):
        _, q = self._q(x)
        inside = q < 1.0
        qq = np.where(inside, q, 0.0)
        return np.where(inside, self.scale * np.exp(-1.0 / (1.0 - qq)), 0.0)

    def gradient(self, x):
        z, q = self._q(x)
        inside = q < 1.0
        qq = np.where(inside, q, 0.0)
        g = np.where(inside, np.exp(-1.0 / (1.0 - qq)) * (-2.0) / (1.0 - qq) ** 2, 0.0)
        return self.scale * g[..., None] * z / self.support_radius

    def sup_bound(self):
        return abs(self.scale) * math.exp(-1.0)

    def lip_bound(self):
        return abs(self.scale) * _bump_profile_lip() / self.support_radius

    def describe(self):
        return {"kind": "bump", "center": self.center.tolist(), "radius": self.support_radius,
                "scale": [self.scale.real, self.scale.imag], "normalized": self.normalized}


class ModulatedBump(TestFunction):
    """bump(x) e^{i k·x}."""

    def __init__(self, center, radius, wavevector, scale: complex = 1.0):
        self.bump = Bump(center, radius, scale)
        self.k = np.atleast_1d(np.asarray(wavevector, float))
        self.center = self.bump.center
        self.dimension = self.bump.dimension
        self.support_radius = self.bump.support_radius
        if self.k.size != self.dimension:
            raise ValueError("wavevector dimension mismatch")

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.bump(x) * np.exp(1j * (x @ self.k))

    def gradient(self, x):
        x = np.asarray(x, float)
        ph = np.exp(1j * (x @ self.k))
        return (self.bump.gradient(x) + 1j * self.k * self.bump(x)[..., None]) * ph[..., None]

    def sup_bound(self):
        return self.bump.sup_bound()

    def lip_bound(self):
        return self.bump.lip_bound() + float(np.linalg.norm(self.k)) * self.bump.sup_bound()

    def describe(self):
        return {**self.bump.describe(), "kind": "modulated_bump", "wavevector": self.k.tolist()}


def make_bump(center, radius: float, normalized: bool = False, scale: complex = 1.0) -> Bump:
    return Bump(center, radius, scale, normalized)


def make_modulated_bump(center, radius: float, wavevector) -> TestFunction:
    k = np.atleast_1d(np.asarray(wavevector, float))
    if not np.any(k):
        return Bump(center, radius)
    return ModulatedBump(center, radius, k)


class Gaussian(TestFunction):
    """c exp(-|x-center|^2 / (2 sigma^2)) e^{i k·x} (not compactly supported)."""

    def __init__(self, center, sigma: float, wavevector=None, scale: complex = 1.0):
        self.center = np.atleast_1d(np.asarray(center, float))
        self.dimension = self.center.size
        self.sigma = float(sigma)
        self.k = np.zeros(self.dimension) if wavevector is None else np.asarray(wavevector, float)
        self.scale = complex(scale)

    def __call__(self, x):
        x = np.asarray(x, float)
        z = x - self.center
        return self.scale * np.exp(-np.sum(z * z, -1) / (2 * self.sigma ** 2) + 1j * (x @ self.k))

    def gradient(self, x):
        x = np.asarray(x, float)
        z = x - self.center
        return self(x)[..., None] * (-z / self.sigma ** 2 + 1j * self.k)

    def sup_bound(self):
        return abs(self.scale)

    def describe(self):
        return {"kind": "gaussian", "center": self.center.tolist(), "sigma": self.sigma,
                "wavevector": self.k.tolist()}


class PlaneWave(TestFunction):
    """c e^{-i a·x}; covariantly constant under the constant potential a."""

    def __init__(self, a, scale: complex = 1.0):
        self.a = np.atleast_1d(np.asarray(a, float))
        self.dimension = self.a.size
        self.scale = complex(scale)

    def __call__(self, x):
        return self.scale * np.exp(-1j * (np.asarray(x, float) @ self.a))

    def gradient(self, x):
        return -1j * self.a * self(x)[..., None]


class ConstantFunction(TestFunction):
    def __init__(self, dimension: int, value: complex = 1.0):
        self.dimension = dimension
        self.value = complex(value)

    def __call__(self, x):
        x = np.asarray(x, float)
        return np.full(x.shape[:-1], self.value, dtype=complex)

    def gradient(self, x):
        x = np.asarray(x, float)
        return np.zeros(x.shape, dtype=complex)

    def sup_bound(self):
        return abs(self.value)

    def lip_bound(self):
        return 0.0


class Combination(TestFunction):
    """Finite linear combination sum c_i f_i."""

    def __init__(self, terms):
        self.terms = tuple((complex(c), f) for c, f in terms)
        self.dimension = self.terms[0][1].dimension
        sup = [f.support_radius for _, f in self.terms]
        if all(r is not None for r in sup):
            lo = np.min([f.center - f.support_radius for _, f in self.terms], axis=0)
            hi = np.max([f.center + f.support_radius for _, f in self.terms], axis=0)
            self.center = (lo + hi) / 2
            self.support_radius = float(np.linalg.norm(hi - lo) / 2)

    def __call__(self, x):
        return sum(c * f(x) for c, f in self.terms)

    def gradient(self, x):
        return sum(c * f.gradient(x) for c, f in self.terms)

    def sup_bound(self):
        return sum(abs(c) * f.sup_bound() for c, f in self.terms)

    def lip_bound(self):
        return sum(abs(c) * f.lip_bound() for c, f in self.terms)


class Gauged(TestFunction):
    """e^{-i Phi} f, the partner of f under A -> A + grad Phi."""

    def __init__(self, fn: TestFunction, gauge):
        self.fn = fn
        self.gauge = gauge
        self.dimension = fn.dimension
        self.center = getattr(fn, "center", None)
        self.support_radius = getattr(fn, "support_radius", None)

    def __call__(self, x):
        return np.exp(-1j * self.gauge(x)) * self.fn(x)

    def gradient(self, x):
        ph = np.exp(-1j * self.gauge(x))[..., None]
        return ph * (self.fn.gradient(x) - 1j * self.gauge.gradient(x) * self.fn(x)[..., None])

    def sup_bound(self):
        return self.fn.sup_bound()

    def describe(self):
        return {"kind": "gauged", "base": self.fn.describe()}


class BoundaryGauge:
    """Restriction of a gauge on R^{d+1} to t = 0, as a gauge on R^d."""

    def __init__(self, gauge):
        self.gauge = gauge
        self.polynomial = gauge.polynomial.restrict_last() if gauge.polynomial is not None else None
        self.dimension = gauge.dimension - 1

    def _lift(self, x):
        x = np.asarray(x, float)
        return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], -1)

    def __call__(self, x):
        return self.gauge(self._lift(x))

    def gradient(self, x):
        return self.gauge.gradient(self._lift(x))[..., :-1]


def smoothstep_profile():
    """(psi, Z): bump on [0,1] and its integral, the building block of the cutoff."""
    def psi(sig):
        sig = np.asarray(sig, float)
        q = (2 * sig - 1) ** 2
        inside = q < 1
        return np.where(inside, np.exp(-1.0 / (1.0 - np.where(inside, q, 0.0))), 0.0)
    return psi, bump_mass(1) / 2.0


class Cutoff:
    """theta(t) = 1 on [0, a/2], 0 on [a, inf), smooth monotone transition built from
    the integral of the bump."""

    def __init__(self, a: float, order: int = 64):
        if not a > 0:
            raise ValueError("cutoff scale must be positive")
        self.a = float(a)
        self._psi, self._Z = smoothstep_profile()
        self._t, self._w = _gauss_01(order)

    def _sigma(self, t):
        return np.clip((np.asarray(t, float) - self.a / 2) / (self.a / 2), 0.0, 1.0)

    def __call__(self, t):
        sig = self._sigma(t)
        integral = np.sum(self._psi(sig[..., None] * self._t) * self._w, -1) * sig / self._Z
        return np.clip(1.0 - integral, 0.0, 1.0)

    def derivative(self, t):
        sig = self._sigma(t)
        return -(2.0 / self.a) * self._psi(sig) / self._Z

    def slope_constant(self) -> float:
        """sup |theta'| * a."""
        return 2.0 * math.exp(-1.0) / self._Z


class HalfSpaceProduct(TestFunction):
    """U(x,t) = b(x) c(t) with c a Cutoff (or any object with __call__/derivative)."""

    def __init__(self, boundary_fn: TestFunction, profile):
        self.b = boundary_fn
        self.c = profile
        self.dimension = boundary_fn.dimension + 1

    def __call__(self, X):
        X = np.asarray(X, float)
        return self.b(X[..., :-1]) * self.c(X[..., -1])

    def gradient(self, X):
        X = np.asarray(X, float)
        gx = self.b.gradient(X[..., :-1]) * self.c(X[..., -1])[..., None]
        gt = self.b(X[..., :-1]) * self.c.derivative(X[..., -1])
        return np.concatenate([gx, gt[..., None]], -1)

    def describe(self):
        return {"kind": "halfspace_product", "boundary": self.b.describe(),
                "cutoff_a": getattr(self.c, "a", None)}


class Restriction(TestFunction):
    """u(x) = U(x, 0)."""

    def __init__(self, U: TestFunction):
        self.U = U
        self.dimension = U.dimension - 1
        inner = getattr(U, "b", None)
        self.center = getattr(inner, "center", None)
        self.support_radius = getattr(inner, "support_radius", None)
        self._inner = inner

    def _lift(self, x):
        x = np.asarray(x, float)
        return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], -1)

    def __call__(self, x):
        return self.U(self._lift(x))

    def gradient(self, x):
        return self.U.gradient(self._lift(x))[..., :-1]

    def sup_bound(self):
        return self._inner.sup_bound() if self._inner is not None else math.inf

    def lip_bound(self):
        return self._inner.lip_bound() if self._inner is not None else math.inf


class GridInterpolant(TestFunction):
    """Multilinear interpolation of boundary samples, zero outside the lattice hull."""

    def __init__(self, gf: GridFunction):
        g = gf.grid
        self.grid = g
        self.dimension = g.d
        ax = g.axis
        self._re = RegularGridInterpolator([ax] * g.d, gf.values.real, bounds_error=False, fill_value=0.0)
        self._im = RegularGridInterpolator([ax] * g.d, gf.values.imag, bounds_error=False, fill_value=0.0)
        self._grad = np.stack(np.gradient(gf.values, g.spacing, edge_order=2), -1) if g.d > 1 \
            else np.gradient(gf.values, g.spacing, edge_order=2)[..., None]
        self._gre = [RegularGridInterpolator([ax] * g.d, self._grad[..., j].real, bounds_error=False,
                                             fill_value=0.0) for j in range(g.d)]
        self._gim = [RegularGridInterpolator([ax] * g.d, self._grad[..., j].imag, bounds_error=False,
                                             fill_value=0.0) for j in range(g.d)]
        self.values = gf.values
        self.lattice_gradient = self._grad
        d2 = 0.0
        for j in range(g.d):
            sl = np.diff(gf.values, 2, axis=j)
            d2 = max(d2, float(np.max(np.abs(sl), initial=0.0)) / g.spacing ** 2)
        self.second_derivative_bound = d2
        self._sup = float(np.max(np.abs(gf.values), initial=0.0))
        self._lip = float(np.max(np.linalg.norm(self._grad, axis=-1), initial=0.0))

    def __call__(self, x):
        x = np.asarray(x, float)
        flat = x.reshape(-1, self.dimension)
        v = self._re(flat) + 1j * self._im(flat)
        return v.reshape(x.shape[:-1])

    def gradient(self, x):
        x = np.asarray(x, float)
        flat = x.reshape(-1, self.dimension)
        cols = [self._gre[j](flat) + 1j * self._gim[j](flat) for j in range(self.dimension)]
        return np.stack(cols, -1).reshape(x.shape)

    def sup_bound(self):
        return self._sup

    def lip_bound(self):
        return self._lip * 1.05


def check_support(u, grid: BoundaryGrid) -> None:
    """Raise SupportError unless u vanishes on the outermost ring of the lattice."""
    if isinstance(u, GridFunction):
        vals = u.values
    elif isinstance(u, GridInterpolant):
        vals = u.values
    else:
        r = getattr(u, "support_radius", None)
        c = getattr(u, "center", None)
        if r is not None and c is not None:
            inner = grid.L - grid.spacing
            if np.any(np.abs(np.asarray(c)) + r > inner + 1e-12):
                raise SupportError("support reaches the outer lattice ring")
            return
        vals = u(grid.points())
    ring = np.ones(vals.shape, bool)
    ring[(slice(1, -1),) * vals.ndim] = False
    if np.max(np.abs(vals[ring]), initial=0.0) > 1e-14 * max(1.0, float(np.max(np.abs(vals), initial=0.0))):
        raise SupportError("data does not vanish on the outer lattice ring")


# ---------------------------------------------------------------------------
# offset quadrature


@dataclass(frozen=True)
class PairQuadrature:
    """Offsets |h| in geometric bands [h_min 2^k, h_min 2^{k+1}] up to ``outer`` times the
    grid diameter; Gauss in the radius, uniform angles in d = 2."""

    h_min: float
    growth: float = 2.0
    radial_order: int = 8
    angular_count: int = 64
    outer: float = 2.0
    method: str = "tensor"
    mc_per_band: int = 64
    seed: int = 42

    def __post_init__(self):
        if not self.h_min > 0 or not self.growth > 1:
            raise ValueError("need h_min > 0 and growth > 1")
        if self.method not in ("tensor", "mc"):
            raise ValueError("method must be 'tensor' or 'mc'")

    @classmethod
    def for_grid(cls, grid: BoundaryGrid, **kw) -> "PairQuadrature":
        return cls(h_min=grid.spacing / 2, **kw)

    def refine(self, factor: int = 2) -> "PairQuadrature":
        return replace(self, h_min=self.h_min / factor,
                       angular_count=self.angular_count * factor)

    def bands(self, diameter: float) -> List[Tuple[float, float]]:
        R = self.outer * diameter
        out = []
        a = self.h_min
        while a < R * (1 - 1e-12):
            b = min(a * self.growth, R)
            out.append((a, b))
            a = b
        if len(out) < 4:
            raise ValueError("fewer than four offset bands; reduce h_min")
        return out

    def outer_radius(self, diameter: float) -> float:
        return self.outer * diameter

    def offset_shells(self, d: int, diameter: float):
        """List of (band, offsets (M,d), weights (M,)) for the unclipped scheme."""
        tr, wr = _gauss_01(self.radial_order)
        shells = []
        for a, b in self.bands(diameter):
            r = a + (b - a) * tr
            w = (b - a) * wr
            if d == 1:
                off = np.concatenate([r, -r])[:, None]
                wt = np.concatenate([w, w])
            else:
                n = self.angular_count
                th = 2 * np.pi * (np.arange(n) + 0.5) / n
                om = np.stack([np.cos(th), np.sin(th)], -1)
                off = (r[:, None, None] * om[None]).reshape(-1, 2)
                wt = np.repeat(w * r * (2 * np.pi / n), n)
            shells.append(((a, b), off, wt))
        return shells

    def describe(self) -> dict:
        return {"h_min": self.h_min, "growth": self.growth, "radial_order": self.radial_order,
                "angular_count": self.angular_count, "outer": self.outer, "method": self.method,
                "mc_per_band": self.mc_per_band, "seed": self.seed}


def annulus_measure(d: int, a: float, b: float) -> float:
    return 2 * (b - a) if d == 1 else math.pi * (b * b - a * a)


def unit_sphere_area(d: int) -> float:
    return 2.0 if d == 1 else 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def ray_to_box(x: np.ndarray, omega: np.ndarray, L: float) -> np.ndarray:
    """Distance from x (inside [-L,L]^d) to the boundary along unit direction omega."""
    x = np.asarray(x, float)
    omega = np.asarray(omega, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where(omega > 0, (L - x) / omega, np.where(omega < 0, (-L - x) / omega, np.inf))
    return np.min(tt, axis=-1)


def mc_offsets(rng: np.random.Generator, count: int, d: int, bands, per_band: int):
    """Area-uniform random offsets in each band; returns offsets (count, M, d), weights (M,)."""
    offs = []
    wts = []
    for a, b in bands:
        u = rng.random((count, per_band))
        if d == 1:
            r = a + (b - a) * u
            sgn = np.where(rng.random((count, per_band)) < 0.5, -1.0, 1.0)
            offs.append((r * sgn)[..., None])
        else:
            r = np.sqrt(a * a + u * (b * b - a * a))
            th = 2 * np.pi * rng.random((count, per_band))
            offs.append(np.stack([r * np.cos(th), r * np.sin(th)], -1))
        wts.append(np.full(per_band, annulus_measure(d, a, b) / per_band))
    return np.concatenate(offs, axis=1), np.concatenate(wts)


def pair_nodes(grid: BoundaryGrid, scheme: PairQuadrature, clip: bool = True,
               chunk: int = 256) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Stream (x, y, w) node blocks for int int f(x,y) dx dy over |y-x| >= h_min.

    With ``clip`` both points stay in the box (radial intervals are cut at the box
    edge); without it y ranges over the full bands.
    """
    if scheme.h_min < grid.spacing / 2 * (1 - 1e-12):
        raise ValueError("h_min must be at least half the grid spacing")
    X = grid.flat_points()
    cell = grid.cell_volume
    tr, wr = _gauss_01(scheme.radial_order)
    bands = scheme.bands(grid.diameter)
    if grid.d == 1:
        dirs = np.array([[1.0], [-1.0]])
        dw = np.array([1.0, 1.0])
    else:
        n = scheme.angular_count
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        dirs = np.stack([np.cos(th), np.sin(th)], -1)
        dw = np.full(n, 2 * np.pi / n)
    for s in range(0, X.shape[0], chunk):
        xs = X[s:s + chunk]
        rho = ray_to_box(xs[:, None, :], dirs[None], grid.L) if clip else \
            np.full((xs.shape[0], dirs.shape[0]), np.inf)
        for a, b in bands:
            hi = np.minimum(b, rho)                                  # (c, ndir)
            ok = hi > a
            span = np.where(ok, hi - a, 0.0)
            r = a + span[..., None] * tr                             # (c, ndir, m)
            w = span[..., None] * wr * (r ** (grid.d - 1)) * dw[None, :, None] * cell
            y = xs[:, None, None, :] + r[..., None] * dirs[None, :, None, :]
            keep = w > 0
            if not np.any(keep):
                continue
            xx = np.broadcast_to(xs[:, None, None, :], y.shape)
            yield xx[keep], y[keep], w[keep]


def exterior_mass(grid: BoundaryGrid, x: np.ndarray, s: float, p: float, order: int = 24) -> np.ndarray:
    """E(x) = int_{y outside the box} |y-x|^{-d-sp} dy for x inside the box."""
    x = np.asarray(x, float)
    sp = s * p
    L = grid.L
    if grid.d == 1:
        xi = x[..., 0]
        return ((L - xi) ** -sp + (L + xi) ** -sp) / sp
    # split the angle at the four corner directions so each arc sees one flat side
    corners = np.array([[L, L], [-L, L], [-L, -L], [L, -L]])
    ang = np.arctan2(corners[None, :, 1] - x[..., None, 1], corners[None, :, 0] - x[..., None, 0])
    ang = np.sort(np.mod(ang, 2 * np.pi), axis=-1)
    ends = np.concatenate([ang, ang[..., :1] + 2 * np.pi], -1)
    tq, wq = _gauss_01(order)
    a0 = ends[..., :-1, None]
    span = ends[..., 1:, None] - ends[..., :-1, None]
    th = a0 + span * tq
    om = np.stack([np.cos(th), np.sin(th)], -1)
    rho = ray_to_box(x[..., None, None, :], om, L)
    return np.sum(rho ** -sp * span * wq, axis=(-2, -1)) / sp
