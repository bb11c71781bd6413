"""Upper half-space and hyperboloid models of H^3 with the Moebius action on both.

Points of H^3 are written in upper half-space coordinates ``(z, t)`` with
``z`` complex and ``t > 0``.  Most functions accept numpy arrays and
broadcast, so a whole sampled surface can be pushed through at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MoebiusTransform:
    """z -> (az + b)/(cz + d), stored with ad - bc = 1 (up to a global sign)."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if abs(det) < 1e-300:
            raise GeometryError("singular Moebius matrix")
        if abs(det - 1) > NORM_TOL:
            s = np.sqrt(complex(det))
            for name in "abcd":
                object.__setattr__(self, name, complex(getattr(self, name)) / s)
        else:
            for name in "abcd":
                object.__setattr__(self, name, complex(getattr(self, name)))

    @classmethod
    def identity(cls) -> "MoebiusTransform":
        return cls(1, 0, 0, 1)

    @classmethod
    def from_matrix(cls, m) -> "MoebiusTransform":
        m = np.asarray(m, dtype=complex)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "MoebiusTransform":
        while True:
            m = scale * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
            m[0, 0] += 1
            m[1, 1] += 1
            if abs(np.linalg.det(m)) > 1e-2:
                return cls.from_matrix(m)

    @classmethod
    def disk_automorphism(cls, a: complex, theta: float = 0.0) -> "MoebiusTransform":
        """z -> e^{i theta} (z - a)/(1 - conj(a) z), |a| < 1."""
        if abs(a) >= 1:
            raise GeometryError("disk automorphism needs |a| < 1")
        e = np.exp(1j * theta)
        return cls(e, -e * a, -np.conj(a), 1)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def compose(self, other: "MoebiusTransform") -> "MoebiusTransform":
        """self o other."""
        return MoebiusTransform.from_matrix(self.matrix @ other.matrix)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self) -> "MoebiusTransform":
        return MoebiusTransform(self.d, -self.b, -self.c, self.a)

    def equals(self, other: "MoebiusTransform", tol: float = 1e-12) -> bool:
        m, n = self.matrix, other.matrix
        return bool(np.max(np.abs(m - n)) < tol or np.max(np.abs(m + n)) < tol)

    # holomorphic data of the fractional linear map on finite points
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return (self.a * z + self.b) / (self.c * z + self.d)

    def derivative(self, z, order: int = 1):
        z = np.asarray(z, dtype=complex)
        den = self.c * z + self.d
        if order == 1:
            return 1.0 / den**2
        if order == 2:
            return -2.0 * self.c / den**3
        if order == 3:
            return 6.0 * self.c**2 / den**4
        raise ValueError("order must be 1, 2 or 3")


@dataclass(frozen=True)
class H3Point:
    horizontal: complex
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise GeometryError(f"height must be positive, got {self.height}")
        object.__setattr__(self, "horizontal", complex(self.horizontal))
        object.__setattr__(self, "height", float(self.height))


@dataclass(frozen=True)
class BoundaryPoint:
    value: complex | None = None
    infinite: bool = False

    def __post_init__(self):
        if self.infinite == (self.value is not None):
            raise GeometryError("exactly one of value / infinite must be set")
        if self.value is not None:
            object.__setattr__(self, "value", complex(self.value))

    @classmethod
    def infinity(cls) -> "BoundaryPoint":
        return cls(None, True)


def apply_boundary(m: MoebiusTransform, z: BoundaryPoint) -> BoundaryPoint:
    if z.infinite:
        if m.c == 0:
            return BoundaryPoint.infinity()
        return BoundaryPoint(m.a / m.c)
    den = m.c * z.value + m.d
    if den == 0:
        return BoundaryPoint.infinity()
    return BoundaryPoint((m.a * z.value + m.b) / den)


def act_h3(m: MoebiusTransform, z, t):
    """Vectorized isometric extension of ``m`` to upper half-space.

    Uses the quaternion form (a q + b)(c q + d)^{-1} with q = z + t j.
    """
    z = np.asarray(z, dtype=complex)
    t = np.asarray(t, dtype=float)
    w = m.c * z + m.d
    den = np.abs(w) ** 2 + np.abs(m.c) ** 2 * t**2
    num = (m.a * z + m.b) * np.conj(w) + m.a * np.conj(m.c) * t**2
    return num / den, t / den


def apply_h3(m: MoebiusTransform, p: H3Point) -> H3Point:
    z, t = act_h3(m, p.horizontal, p.height)
    return H3Point(complex(z), float(t))


def cosh_distance(z1, t1, z2, t2):
    return 1.0 + (np.abs(np.asarray(z1) - np.asarray(z2)) ** 2 + (np.asarray(t1) - np.asarray(t2)) ** 2) / (
        2.0 * np.asarray(t1) * np.asarray(t2)
    )


def distance_arrays(z1, t1, z2, t2):
    # 2 asinh(sqrt(delta/2)) stays accurate for nearby points, unlike arccosh
    delta = (np.abs(np.asarray(z1) - np.asarray(z2)) ** 2 + (np.asarray(t1) - np.asarray(t2)) ** 2) / (
        2.0 * np.asarray(t1) * np.asarray(t2)
    )
    return 2.0 * np.arcsinh(np.sqrt(delta / 2.0))


def distance(p: H3Point, q: H3Point) -> float:
    return float(distance_arrays(p.horizontal, p.height, q.horizontal, q.height))


def visual_density_arrays(w, t, z):
    """e^{eta} of V_p at z for p = (w, t); the spherical metric seen from p."""
    return 2.0 * np.asarray(t) / (np.asarray(t) ** 2 + np.abs(np.asarray(z) - np.asarray(w)) ** 2)


def visual_metric_density(p: H3Point, z: BoundaryPoint) -> float:
    if z.infinite:
        raise GeometryError("visual metric density is chart-based; rotate the chart to make z finite")
    return float(visual_density_arrays(p.horizontal, p.height, z.value))


# --- hyperboloid model in R^{3,1}, signature (-,+,+,+) ---

MINKOWSKI = np.diag([-1.0, 1.0, 1.0, 1.0])


def minkowski(u, v):
    u = np.asarray(u)
    v = np.asarray(v)
    return -u[..., 0] * v[..., 0] + np.sum(u[..., 1:] * v[..., 1:], axis=-1)


def to_hyperboloid(z, t):
    z = np.asarray(z, dtype=complex)
    t = np.asarray(t, dtype=float)
    r2 = np.abs(z) ** 2 + t**2
    return np.stack([(1 + r2) / (2 * t), z.real / t, z.imag / t, (1 - r2) / (2 * t)], axis=-1)


def from_hyperboloid(X):
    X = np.asarray(X)
    s = X[..., 0] + X[..., 3]
    return (X[..., 1] + 1j * X[..., 2]) / s, 1.0 / s


def boundary_from_null(n):
    n = np.asarray(n)
    return (n[..., 1] + 1j * n[..., 2]) / (n[..., 0] + n[..., 3])


def pushforward_tangent(z, t, dvec):
    """Hyperboloid image of an upper half-space tangent vector (dx, dy, dt) at (z, t)."""
    z = np.asarray(z, dtype=complex)
    t = np.asarray(t, dtype=float)
    dvec = np.asarray(dvec, dtype=float)
    x, y = z.real, z.imag
    dx, dy, dt = dvec[..., 0], dvec[..., 1], dvec[..., 2]
    r2 = x**2 + y**2 + t**2
    dr2 = 2 * (x * dx + y * dy + t * dt)
    d0 = dr2 / (2 * t) - (1 + r2) * dt / (2 * t**2)
    d1 = dx / t - x * dt / t**2
    d2 = dy / t - y * dt / t**2
    d3 = -dr2 / (2 * t) - (1 - r2) * dt / (2 * t**2)
    return np.stack([d0, d1, d2, d3], axis=-1)


def toward_boundary(w, t, z):
    """Unit tangent (hyperboloid coordinates) at (w, t) of the geodesic ending at z."""
    w = np.asarray(w, dtype=complex)
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=complex)
    delta = w - z
    # circle through p orthogonal to the boundary, traversed toward z
    horiz = -2.0 * t * delta
    vert = np.abs(delta) ** 2 - t**2
    dvec = np.stack([horiz.real, horiz.imag, vert], axis=-1)
    V = pushforward_tangent(w, t, dvec)
    return V / np.sqrt(minkowski(V, V))[..., None]


def exp_map(X, V, r):
    """Point at distance r along the unit tangent V from X (hyperboloid)."""
    r = np.asarray(r, dtype=float)[..., None]
    return np.cosh(r) * X + np.sinh(r) * V


def geodesic_endpoint(X, V):
    """Boundary point reached by the geodesic from X with unit tangent V."""
    return boundary_from_null(np.asarray(X) + np.asarray(V))
