"""Measured foliations at desk scale: flat tori and flat polygon surfaces.

Torus conventions.  X_tau = C / (Z + tau Z).  A foliation of class (m, n) has
closed leaves parallel to m + n tau, and i(F, a + b tau) = w |m b - n a|.  Its
Hubbard-Masur differential is q = c dz^2 with

    c = l^2 / (m + n tau)^2,   l = w |m + n tau|^2 / Im tau,

so ||q||_1 = |c| Im tau = w^2 |m + n tau|^2 / Im tau.  A deformation
delta tau is carried by the Beltrami differential mu = i delta tau / (2 Im tau),
and with the pairing <q, mu> = 2 int q mu dx dy we get
d ext(delta tau) = Re <q, mu> = Re(i c delta tau).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class NotFillingError(ValueError):
    pass


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class TorusPoint:
    tau: complex

    def __post_init__(self):
        object.__setattr__(self, "tau", complex(self.tau))
        if not self.tau.imag > 0:
            raise ValueError(f"Im tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class TorusFoliation:
    m: int
    n: int
    weight: float = 1.0
    sign: int = 1  # -1 realises the foliation as the vertical foliation (q^{-F} = -q^F)

    def __post_init__(self):
        if self.m == 0 and self.n == 0:
            raise ValueError("class (0, 0) is not a foliation")
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def reduced(self) -> tuple[int, int, float]:
        """Primitive class and the weight absorbing the multiplicity."""
        g = math.gcd(self.m, self.n)
        return self.m // g, self.n // g, self.weight * g

    def scaled(self, t: float) -> "TorusFoliation":
        return TorusFoliation(self.m, self.n, self.weight * t, self.sign)

    def negated(self) -> "TorusFoliation":
        return TorusFoliation(self.m, self.n, self.weight, -self.sign)


def _period(p: TorusPoint, m, n) -> complex:
    return m + n * p.tau


def hm_section_torus(p: TorusPoint, F: TorusFoliation) -> complex:
    """Coefficient c of q = c dz^2 whose horizontal foliation is F."""
    z = _period(p, F.m, F.n)
    ell = F.weight * abs(z) ** 2 / p.tau.imag
    return F.sign * ell**2 / z**2


def extremal_length(p: TorusPoint, F: TorusFoliation) -> float:
    """||q^F||_1 = |c| * area."""
    return float(abs(hm_section_torus(p, F)) * p.tau.imag)


def extremal_length_oracle(p: TorusPoint, F: TorusFoliation, samples: int = 2001) -> float:
    """length^2 / area for the flat metric, by direct quadrature.

    The flat metric realises the supremum for a simple closed curve on a torus;
    the length is integrated along the straight representative and the area is
    the shoelace area of the period parallelogram.
    """
    m, n, w = F.reduced
    s = np.linspace(0.0, 1.0, samples)
    path = s * _period(p, m, n)
    length = np.sum(np.abs(np.diff(path)))
    corners = np.array([0, 1, 1 + p.tau, p.tau])
    x, y = corners.real, corners.imag
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return float(w**2 * length**2 / area)


def intersection_number(target, curve, which: str = "horizontal") -> float:
    """i(hor(q) or ver(q), curve).

    target: (TorusPoint, c) for q = c dz^2, with curve an integer pair (a, b);
    or a FlatSurface, with curve an edge path.
    """
    if which not in ("horizontal", "vertical"):
        raise ValueError("which must be 'horizontal' or 'vertical'")
    if isinstance(target, FlatSurface):
        hol = target.holonomy(curve)
        if hol == 0:
            raise ValueError("zero class")
    else:
        p, c = target
        a, b = curve
        if a == 0 and b == 0:
            raise ValueError("zero class")
        hol = np.sqrt(complex(c)) * _period(p, a, b)
    return float(abs(hol.imag) if which == "horizontal" else abs(hol.real))


def gardiner_gradient(p: TorusPoint, F: TorusFoliation) -> complex:
    """Covector g with d ext(delta tau) = Re(g * delta tau)."""
    return 1j * F.sign * hm_section_torus(p, F)


def beltrami(p: TorusPoint, dtau: complex) -> complex:
    return 1j * dtau / (2 * p.tau.imag)


def pairing(p: TorusPoint, c: complex, mu: complex) -> complex:
    """<q, mu> = 2 * integral of q mu over the torus."""
    return 2 * c * mu * p.tau.imag


def _check_filling(F: TorusFoliation, G: TorusFoliation):
    if F.m * G.n - F.n * G.m == 0:
        raise NotFillingError(f"classes ({F.m},{F.n}) and ({G.m},{G.n}) are proportional and do not fill")


def _energy(tau, F, G):
    p = TorusPoint(tau)
    return extremal_length(p, F) + extremal_length(p, G)


def _grad_norm(tau, F, G):
    p = TorusPoint(tau)
    return abs(gardiner_gradient(p, F) + gardiner_gradient(p, G))


@dataclass
class CriticalPoint:
    point: TorusPoint
    grad_norm: float
    certificate: float  # |q^F + q^G|
    iterations: int


def critical_point(F: TorusFoliation, G: TorusFoliation, tau0: complex = 0.25 + 1.25j, gtol: float = 1e-10,
                   max_iter: int = 10_000) -> CriticalPoint:
    """Minimise ext(F) + ext(G) by gradient descent with Armijo backtracking.

    The descent direction is the gradient for the hyperbolic metric on the
    upper half-plane (the Euclidean one scaled by Im(tau)^2); convergence is
    still judged on the Euclidean gradient norm.
    """
    _check_filling(F, G)
    Fp = TorusFoliation(F.m, F.n, F.weight)
    Gp = TorusFoliation(G.m, G.n, G.weight)
    tau = complex(tau0)
    for it in range(max_iter):
        p = TorusPoint(tau)
        g = gardiner_gradient(p, Fp) + gardiner_gradient(p, Gp)
        grad = np.conj(g)  # (d/dx, d/dy) as a complex number
        gn = abs(grad)
        if gn < gtol:
            break
        # steepest descent for the hyperbolic metric |dtau|^2 / Im(tau)^2
        direction = tau.imag**2 * grad
        slope = tau.imag**2 * gn * gn
        e0 = _energy(tau, Fp, Gp)
        noise = 64 * np.finfo(float).eps * abs(e0)
        step = 0.5
        while True:
            cand = tau - step * direction
            if cand.imag > 0:
                e1 = _energy(cand, Fp, Gp)
                # energy differences below rounding carry no information; there
                # the step must shrink the gradient instead (approximate Armijo)
                if e0 - e1 > noise and e1 <= e0 - 1e-4 * step * slope:
                    break
                if abs(e1 - e0) <= noise and _grad_norm(cand, Fp, Gp) < gn:
                    break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            # Armijo cannot make progress: rounding floor reached
            break
        tau = cand
    else:
        it = max_iter
    p = TorusPoint(tau)
    gn = abs(gardiner_gradient(p, Fp) + gardiner_gradient(p, Gp))
    cert = abs(hm_section_torus(p, Fp) + hm_section_torus(p, Gp))
    return CriticalPoint(p, gn, cert, it)


@dataclass
class TeichLine:
    ts: np.ndarray
    points: list[TorusPoint]
    geodesic: tuple  # ("vertical", x0) or ("circle", center, radius)
    collinearity: float  # max hyperbolic distance from the fitted geodesic
    metric_factor: float = 0.5  # Teichmuller metric = factor * curvature -1 metric on the upper half-plane


def _fit_geodesic(taus: np.ndarray):
    """Best of a vertical line and a semicircle centred on the real axis."""
    x, y = taus.real, taus.imag
    fits = [("vertical", float(np.mean(x)))]
    # |tau|^2 = 2 x0 x - C,  C = x0^2 - R^2
    A = np.stack([2 * x, -np.ones_like(x)], -1)
    (x0, C), *_ = np.linalg.lstsq(A, x * x + y * y, rcond=None)
    if x0 * x0 - C > 0:
        fits.append(("circle", float(x0), float(np.sqrt(x0 * x0 - C))))
    errs = [float(np.max(distance_to_geodesic(taus, g))) for g in fits]
    # a huge circle mimics a vertical line; prefer the line unless the circle is clearly better
    if len(fits) == 2 and errs[1] < errs[0] - 1e-9:
        return fits[1]
    return fits[0]


def distance_to_geodesic(tau, geo) -> np.ndarray:
    tau = np.asarray(tau, dtype=complex)
    if geo[0] == "vertical":
        w = tau - geo[1]
    else:
        _, x0, R = geo
        # Moebius map sending the semicircle to the imaginary axis
        w = (tau - (x0 - R)) / (-(tau - (x0 + R)))
    return np.arcsinh(np.abs(w.real) / w.imag)


def teich_line(F: TorusFoliation, G: TorusFoliation, t_grid, **kw) -> TeichLine:
    """Points p(sqrt(t) F, G / sqrt(t))."""
    _check_filling(F, G)
    ts = np.asarray(t_grid, dtype=float)
    pts = [critical_point(F.scaled(np.sqrt(t)), G.scaled(1 / np.sqrt(t)), **kw).point for t in ts]
    taus = np.array([p.tau for p in pts])
    geo = _fit_geodesic(taus)
    coll = float(np.max(distance_to_geodesic(taus, geo)))
    return TeichLine(ts, pts, geo, coll)


# --- flat polygon surfaces ---


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class FlatSurface:
    """Polygons (counterclockwise vertex lists) glued edge to edge.

    pairings: list of ((p, e), (p2, e2)); edge e of polygon p runs from vertex
    e to e + 1.  Gluing is by translation when the edge vectors are opposite,
    by a half-turn when they are equal.
    """

    polygons: list[np.ndarray]
    pairings: list[tuple]
    partner: dict = field(init=False, repr=False)
    vertex_class: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.polygons = [np.asarray(P, dtype=complex) for P in self.polygons]
        for i, P in enumerate(self.polygons):
            if abs(np.sum(self.edge_vectors(i))) > 1e-9:
                raise ValueError(f"polygon {i} does not close")
        self.partner = {}
        for (a, b) in self.pairings:
            a, b = tuple(a), tuple(b)
            if a in self.partner or b in self.partner or a == b:
                raise ValueError(f"pairing of {a} and {b} is not an involution")
            self.partner[a] = b
            self.partner[b] = a
        n_edges = sum(len(P) for P in self.polygons)
        if len(self.partner) != n_edges:
            raise ValueError("every edge must be paired exactly once")
        uf = _UnionFind()
        for (p, e), (p2, e2) in self.partner.items():
            v1, v2 = self.edge_vector(p, e), self.edge_vector(p2, e2)
            if abs(v1 + v2) > 1e-9 and abs(v1 - v2) > 1e-9:
                raise ValueError(f"edges {(p, e)} and {(p2, e2)} are not related by translation or half-turn")
            k, k2 = len(self.polygons[p]), len(self.polygons[p2])
            uf.union((p, e), (p2, (e2 + 1) % k2))
            uf.union((p, (e + 1) % k), (p2, e2))
        self.vertex_class = {}
        labels = {}
        for p, P in enumerate(self.polygons):
            for v in range(len(P)):
                r = uf.find((p, v))
                self.vertex_class[(p, v)] = labels.setdefault(r, len(labels))

    @classmethod
    def from_json(cls, text_or_obj) -> "FlatSurface":
        obj = json.loads(text_or_obj) if isinstance(text_or_obj, str) else text_or_obj
        polys = [[complex(x, y) for x, y in P] for P in obj["polygons"]]
        pairs = [((a[0], a[1]), (b[0], b[1])) for a, b in obj["pairings"]]
        return cls(polys, pairs)

    def to_json(self) -> dict:
        return {
            "polygons": [[[float(z.real), float(z.imag)] for z in P] for P in self.polygons],
            "pairings": [[list(a), list(b)] for a, b in self.pairings],
        }

    def edge_vectors(self, p: int) -> np.ndarray:
        P = self.polygons[p]
        return np.roll(P, -1) - P

    def edge_vector(self, p: int, e: int) -> complex:
        return complex(self.edge_vectors(p)[e])

    @property
    def is_translation(self) -> bool:
        return all(abs(self.edge_vector(*a) + self.edge_vector(*b)) < 1e-9 for a, b in self.partner.items())

    @property
    def n_vertices(self) -> int:
        return len(set(self.vertex_class.values()))

    @property
    def genus(self) -> int:
        V = self.n_vertices
        E = len(self.partner) // 2
        F = len(self.polygons)
        chi = V - E + F
        return (2 - chi) // 2

    def cone_angles(self) -> np.ndarray:
        ang = np.zeros(self.n_vertices)
        for p, P in enumerate(self.polygons):
            k = len(P)
            for v in range(k):
                out = P[(v + 1) % k] - P[v]
                back = P[v - 1] - P[v]
                a = np.angle(back / out) % (2 * np.pi)
                ang[self.vertex_class[(p, v)]] += a
        return ang

    def zero_orders(self) -> np.ndarray:
        """Order k of the quadratic differential at each vertex: cone angle (k + 2) pi."""
        return np.rint(self.cone_angles() / np.pi).astype(int) - 2

    def check_stratum(self) -> bool:
        return int(self.zero_orders().sum()) == 4 * self.genus - 4

    def holonomy(self, path) -> complex:
        """Sum of edge vectors along a closed edge path [(p, e, +-1), ...]."""
        if not path:
            raise PathError("empty path")
        total = 0j
        ends = []
        for item in path:
            p, e = item[0], item[1]
            d = item[2] if len(item) > 2 else 1
            k = len(self.polygons[p])
            a, b = self.vertex_class[(p, e)], self.vertex_class[(p, (e + 1) % k)]
            if d < 0:
                a, b = b, a
            ends.append((a, b))
            total += d * self.edge_vector(p, e)
        for (a0, b0), (a1, b1) in zip(ends, ends[1:] + ends[:1]):
            if b0 != a1:
                raise PathError("edge path is not closed on the surface")
        return complex(total)


def periods(s: FlatSurface, cycles) -> np.ndarray:
    if not s.is_translation:
        raise ValueError("periods need a translation surface (pass to the orientation double cover first)")
    return np.array([s.holonomy(c) for c in cycles])


def square_torus(tau: complex = 1j) -> FlatSurface:
    P = [0, 1, 1 + tau, tau]
    return FlatSurface([P], [((0, 0), (0, 2)), ((0, 1), (0, 3))])


def regular_octagon_surface() -> FlatSurface:
    """Euclidean regular octagon with opposite sides glued by translation (genus 2)."""
    P = np.exp(1j * (np.pi / 8 + np.arange(8) * np.pi / 4))
    return FlatSurface([P], [((0, k), (0, k + 4)) for k in range(4)])
