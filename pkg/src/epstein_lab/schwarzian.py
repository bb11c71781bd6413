"""Schwarzian derivatives of maps and Schwarzian tensors of conformal metrics on planar grids.

Wirtinger derivatives are taken with fourth-order central stencils.  The two
outermost layers of a grid fall back to one-sided stencils; they are flagged
by :meth:`Grid.interior_mask` and excluded from norms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geom import MoebiusTransform

BOUNDARY_LAYERS = 2

# (offsets, weights) for first and second derivatives, fourth order
_D1_CENTRAL = ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12))
_D2_CENTRAL = ((-2, -1, 0, 1, 2), (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12))
_D1_EDGE0 = ((0, 1, 2, 3, 4), (-25 / 12, 48 / 12, -36 / 12, 16 / 12, -3 / 12))
_D1_EDGE1 = ((-1, 0, 1, 2, 3), (-3 / 12, -10 / 12, 18 / 12, -6 / 12, 1 / 12))
_D2_EDGE0 = ((0, 1, 2, 3, 4, 5), (45 / 12, -154 / 12, 214 / 12, -156 / 12, 61 / 12, -10 / 12))
_D2_EDGE1 = ((-1, 0, 1, 2, 3, 4), (10 / 12, -15 / 12, -4 / 12, 14 / 12, -6 / 12, 1 / 12))


class ChartMismatch(ValueError):
    pass


class SingularMapError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid; arrays are indexed [i, j] with x = x0 + i*h, y = y0 + j*h."""

    origin: complex
    spacing: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.nx < 6 or self.ny < 6:
            raise ValueError("need at least 6 nodes per direction for the stencils")

    @classmethod
    def square(cls, center: complex, half_width: float, n: int) -> "Grid":
        h = 2 * half_width / (n - 1)
        return cls(complex(center) - half_width * (1 + 1j), h, n, n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.origin.real + self.spacing * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin.imag + self.spacing * np.arange(self.ny)

    @property
    def z(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return X + 1j * Y

    def interior_mask(self, layers: int = BOUNDARY_LAYERS) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[layers : self.nx - layers, layers : self.ny - layers] = True
        return m

    def same_as(self, other: "Grid") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and abs(self.spacing - other.spacing) < 1e-14
            and abs(self.origin - other.origin) < 1e-14
        )


def diff_matrix_1d(n: int, h: float, order: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    if order == 1:
        central, e0, e1 = _D1_CENTRAL, _D1_EDGE0, _D1_EDGE1
        scale = 1.0 / h
    elif order == 2:
        central, e0, e1 = _D2_CENTRAL, _D2_EDGE0, _D2_EDGE1
        scale = 1.0 / h**2
    else:
        raise ValueError("order must be 1 or 2")
    for i in range(n):
        if i == 0:
            offs, w = e0
        elif i == 1:
            offs, w = e1
        elif i == n - 2:
            offs, w = e1
            offs, w = tuple(-o for o in offs), tuple(-c if order == 1 else c for c in w)
        elif i == n - 1:
            offs, w = e0
            offs, w = tuple(-o for o in offs), tuple(-c if order == 1 else c for c in w)
        else:
            offs, w = central
        for o, c in zip(offs, w):
            rows.append(i)
            cols.append(i + o)
            vals.append(c * scale)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _apply_1d(a: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    D = diff_matrix_1d(a.shape[axis], h, order)
    moved = np.moveaxis(a, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    out = (D @ flat).reshape(moved.shape)
    return np.moveaxis(out, 0, axis)


@dataclass
class Derivatives:
    fx: np.ndarray
    fy: np.ndarray
    fxx: np.ndarray
    fxy: np.ndarray
    fyy: np.ndarray

    @property
    def dz(self):
        return 0.5 * (self.fx - 1j * self.fy)

    @property
    def dzbar(self):
        return 0.5 * (self.fx + 1j * self.fy)

    @property
    def dzz(self):
        return 0.25 * (self.fxx - self.fyy - 2j * self.fxy)

    @property
    def laplacian(self):
        return self.fxx + self.fyy


def grid_derivatives(f: np.ndarray, grid: Grid) -> Derivatives:
    h = grid.spacing
    fx = _apply_1d(f, 0, h, 1)
    fy = _apply_1d(f, 1, h, 1)
    return Derivatives(
        fx=fx,
        fy=fy,
        fxx=_apply_1d(f, 0, h, 2),
        fxy=_apply_1d(fx, 1, h, 1),
        fyy=_apply_1d(f, 1, h, 2),
    )


def derivatives_at(fn: Callable, z, h: float = 1e-2) -> Derivatives:
    """Fourth-order stencils of a real callable centred at arbitrary points."""
    z = np.asarray(z, dtype=complex)

    def d1(direction):
        return sum(c * fn(z + o * h * direction) for o, c in zip(*_D1_CENTRAL)) / h

    def d2(direction):
        return sum(c * fn(z + o * h * direction) for o, c in zip(*_D2_CENTRAL)) / h**2

    fxy = sum(
        ci * cj * fn(z + oi * h + 1j * oj * h)
        for oi, ci in zip(*_D1_CENTRAL)
        for oj, cj in zip(*_D1_CENTRAL)
    ) / h**2
    return Derivatives(fx=d1(1), fy=d1(1j), fxx=d2(1), fxy=fxy, fyy=d2(1j))


@dataclass
class ConformalMetric:
    """sigma = e^{2 eta} |dz|^2 sampled on a grid."""

    grid: Grid
    eta: np.ndarray
    _derivs: Derivatives | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if self.eta.shape != self.grid.shape:
            raise ValueError(f"eta shape {self.eta.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("eta must be finite everywhere")

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "ConformalMetric":
        return cls(grid, fn(grid.z))

    @classmethod
    def flat(cls, grid: Grid, t: float = 0.0) -> "ConformalMetric":
        return cls(grid, np.full(grid.shape, float(t)))

    @classmethod
    def poincare_disk(cls, grid: Grid, t: float = 0.0) -> "ConformalMetric":
        z = grid.z
        if np.max(np.abs(z)) >= 1:
            raise ValueError("grid must lie inside the unit disk")
        return cls(grid, t + np.log(2.0) - np.log1p(-np.abs(z) ** 2))

    @property
    def derivs(self) -> Derivatives:
        if self._derivs is None:
            self._derivs = grid_derivatives(self.eta, self.grid)
        return self._derivs

    def scaled(self, t: float) -> "ConformalMetric":
        """e^{2t} sigma."""
        return ConformalMetric(self.grid, self.eta + t)

    def curvature(self) -> np.ndarray:
        return -np.exp(-2 * self.eta) * self.derivs.laplacian


@dataclass
class QuadDifferential:
    """phi = lam(z) dz^2 on a grid."""

    grid: Grid
    lam: np.ndarray
    holomorphic: bool = False
    tol: float = 1e-6

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=complex)
        if self.lam.shape != self.grid.shape:
            raise ValueError("coefficient shape does not match grid")
        if self.holomorphic:
            defect = self.dbar_defect()
            scale = max(np.max(np.abs(self.lam)), 1e-300)
            if defect > self.tol * scale:
                raise ValueError(f"coefficient not holomorphic: |d_zbar lam| = {defect:.3e}")

    def dbar_defect(self) -> float:
        mask = self.grid.interior_mask()
        re = grid_derivatives(self.lam.real, self.grid)
        im = grid_derivatives(self.lam.imag, self.grid)
        dbar = 0.5 * ((re.fx - im.fy) + 1j * (im.fx + re.fy))
        return float(np.max(np.abs(dbar[mask])))

    def __add__(self, other: "QuadDifferential") -> "QuadDifferential":
        _check_chart(self.grid, other.grid)
        return QuadDifferential(self.grid, self.lam + other.lam)

    def __sub__(self, other: "QuadDifferential") -> "QuadDifferential":
        _check_chart(self.grid, other.grid)
        return QuadDifferential(self.grid, self.lam - other.lam)

    def __mul__(self, c) -> "QuadDifferential":
        return QuadDifferential(self.grid, self.lam * c)

    __rmul__ = __mul__

    def __neg__(self) -> "QuadDifferential":
        return QuadDifferential(self.grid, -self.lam)

    def max_abs(self, interior: bool = True) -> float:
        a = np.abs(self.lam)
        if interior:
            a = a[self.grid.interior_mask()]
        return float(np.max(a))


@dataclass
class HolomorphicMap:
    """A locally injective holomorphic map, optionally with analytic derivatives."""

    f: Callable
    df: Callable | None = None
    d2f: Callable | None = None
    d3f: Callable | None = None
    fd_step: float = 1e-3

    @classmethod
    def moebius(cls, m: MoebiusTransform) -> "HolomorphicMap":
        return cls(m, lambda z: m.derivative(z, 1), lambda z: m.derivative(z, 2), lambda z: m.derivative(z, 3))

    @classmethod
    def exp_map(cls, a: complex) -> "HolomorphicMap":
        """z -> (e^{az} - 1)/a, a near-identity map with S(f) = -a^2/2."""
        a = complex(a)
        if a == 0:
            return cls(lambda z: np.asarray(z, dtype=complex), lambda z: np.ones_like(z, dtype=complex),
                       lambda z: np.zeros_like(z, dtype=complex), lambda z: np.zeros_like(z, dtype=complex))
        return cls(
            lambda z: np.expm1(a * np.asarray(z, dtype=complex)) / a,
            lambda z: np.exp(a * np.asarray(z, dtype=complex)),
            lambda z: a * np.exp(a * np.asarray(z, dtype=complex)),
            lambda z: a * a * np.exp(a * np.asarray(z, dtype=complex)),
        )

    def _fd(self, z, order):
        # holomorphic: d/dz equals d/dx
        h = self.fd_step
        if order == 1:
            offs, w = _D1_CENTRAL
        elif order == 2:
            offs, w = _D2_CENTRAL
        else:
            offs, w = (-3, -2, -1, 1, 2, 3), (1 / 8, -1, 13 / 8, -13 / 8, 1, -1 / 8)
        return sum(c * self.f(z + o * h) for o, c in zip(offs, w)) / h**order

    def derivative(self, z, order: int):
        z = np.asarray(z, dtype=complex)
        fn = {1: self.df, 2: self.d2f, 3: self.d3f}[order]
        if fn is not None:
            return np.asarray(fn(z), dtype=complex)
        return self._fd(z, order)


def _check_chart(g1: Grid, g2: Grid):
    if not g1.same_as(g2):
        raise ChartMismatch("fields live on different charts")


def schwarzian_values(f: HolomorphicMap, z) -> np.ndarray:
    d1 = f.derivative(z, 1)
    if np.any(np.abs(d1) < 1e-10):
        raise SingularMapError("|f'| below 1e-10: map is not locally injective on the chart")
    d2 = f.derivative(z, 2)
    d3 = f.derivative(z, 3)
    r = d2 / d1
    return d3 / d1 - 1.5 * r * r


def schwarzian_derivative(f: HolomorphicMap, chart: Grid) -> QuadDifferential:
    return QuadDifferential(chart, schwarzian_values(f, chart.z))


def schwarzian_tensor_from_derivs(d1: Derivatives, d2: Derivatives) -> np.ndarray:
    return (d2.dzz - d2.dz**2) - (d1.dzz - d1.dz**2)


def schwarzian_tensor(s1: ConformalMetric, s2: ConformalMetric) -> QuadDifferential:
    """B(s1, s2) = ((eta2)_zz - (eta2)_z^2 - (eta1)_zz + (eta1)_z^2) dz^2."""
    _check_chart(s1.grid, s2.grid)
    return QuadDifferential(s1.grid, schwarzian_tensor_from_derivs(s1.derivs, s2.derivs))


def mobius_flat_deviation(s: ConformalMetric) -> QuadDifferential:
    """B(sigma) against the reference |dz|^2 of the planar chart."""
    d = s.derivs
    return QuadDifferential(s.grid, d.dzz - d.dz**2)


def qd_norm(phi: QuadDifferential, s: ConformalMetric) -> np.ndarray:
    _check_chart(phi.grid, s.grid)
    return np.exp(-2 * s.eta) * np.abs(phi.lam)


def pullback_metric(f: HolomorphicMap, eta_fn: Callable, z) -> np.ndarray:
    """log-density of f^* sigma at z for sigma = e^{2 eta_fn}|dw|^2."""
    return eta_fn(f.f(z)) + np.log(np.abs(f.derivative(z, 1)))


def pullback_qd(f: HolomorphicMap, lam_fn: Callable, z) -> np.ndarray:
    return lam_fn(f.f(z)) * f.derivative(z, 1) ** 2


# --- CSV field exchange: header line with the chart, then row-major complex pairs ---

def write_field_csv(path, grid: Grid, values) -> None:
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# chart", repr(grid.origin.real), repr(grid.origin.imag), repr(grid.spacing), grid.nx, grid.ny])
        w.writerow(["i", "j", "re", "im"])
        for i in range(grid.nx):
            for j in range(grid.ny):
                v = values[i, j]
                w.writerow([i, j, repr(float(v.real)), repr(float(v.imag))])


def read_field_csv(path) -> tuple[Grid, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    grid = Grid(complex(float(head[1]), float(head[2])), float(head[3]), int(head[4]), int(head[5]))
    out = np.zeros(grid.shape, dtype=complex)
    for r in rows[2:]:
        out[int(r[0]), int(r[1])] = complex(float(r[2]), float(r[3]))
    return grid, out
