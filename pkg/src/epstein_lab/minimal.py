"""The Gauss-equation path of almost-Fuchsian minimal surfaces and its data at infinity.

Along the path s -> (I_s, II_s) = (e^{2 u_s} h, s Re q) the Gauss equation
K(I) = -1 + det B becomes

    F(u, s) = -Delta u - 1 + e^{2u} - e^{-2u} s^2 detq = 0,

with detq = det_h(Re q) <= 0 for a traceless form.  Forms are stored per
vertex in h-orthonormal frames, so h is the identity and Re q is the
traceless matrix [[a, b], [b, -a]].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .epstein import ImmersionData
from .surface import HyperbolicMesh, ScalarField, laplacian, solve_helmholtz


class GaussDivergence(RuntimeError):
    def __init__(self, s, msg):
        self.s = s
        super().__init__(f"Gauss equation Newton failed at s={s:g} (outside the empirical range): {msg}")


class ExtrapolationError(RuntimeError):
    pass


@dataclass
class TracelessField:
    """Re q per vertex as (a, b) with Re q = [[a, b], [b, -a]] in an h-orthonormal frame."""

    a: np.ndarray
    b: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.stack([np.stack([a, b], -1), np.stack([b, -a], -1)], -2)

    @property
    def detq(self) -> ScalarField:
        return ScalarField(-(self.a**2 + self.b**2))

    def scaled(self, c: float) -> "TracelessField":
        return TracelessField(c * self.a, c * self.b)

    @classmethod
    def synthetic(cls, m: HyperbolicMesh | None, scale: float = 1.0) -> "TracelessField":
        """A smooth non-vanishing pattern built from vertex positions (a test load, not holomorphic)."""
        if m is None:
            return cls(np.array([0.6 * scale]), np.array([0.8 * scale]))
        x, y = m.vertices[:, 0], m.vertices[:, 1]
        return cls(scale * (0.6 + 0.3 * np.cos(np.pi * x)), scale * (0.8 + 0.3 * np.sin(np.pi * y)))


@dataclass
class MinimalPathPoint:
    s: float
    u: ScalarField
    detq: ScalarField
    q: TracelessField
    residual: float
    newton_iters: int

    @property
    def t(self) -> float:
        """Half-pipe parameter with s = t^2."""
        return float(np.sqrt(self.s))

    @property
    def immersion(self) -> ImmersionData:
        e = np.exp(2 * self.u.values)[:, None, None] * np.eye(2)
        return ImmersionData.from_forms(e, self.s * self.q.matrix)


@dataclass
class FormsAtInfinity:
    Istar: np.ndarray
    IIstar: np.ndarray
    Kstar: np.ndarray
    Hstar: np.ndarray
    IIstar_traceless: np.ndarray


@dataclass
class HolonomyPath4:
    """Samples t -> rho_t(gamma) in block form (A, w; v, a) with A 3x3."""

    ts: np.ndarray
    mats: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (T, 4, 4)

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        for name, M in self.mats.items():
            M = np.asarray(M, dtype=float)
            if M.shape != (len(self.ts), 4, 4):
                raise ValueError(f"generator {name}: expected shape {(len(self.ts), 4, 4)}, got {M.shape}")
            if np.any(np.abs(np.linalg.det(M)) < 1e-14):
                raise ValueError(f"generator {name}: singular sample")
            self.mats[name] = M


J21 = np.diag([1.0, 1.0, -1.0])


def gauss_residual(m: HyperbolicMesh | None, u: np.ndarray, detq: np.ndarray, s: float) -> np.ndarray:
    """e^{-2u}(-Delta u - 1) - (-1 + e^{-4u} s^2 detq)."""
    lap = laplacian(m).apply(u) if m is not None else 0.0
    return np.exp(-2 * u) * (-lap - 1) - (-1 + np.exp(-4 * u) * s * s * detq)


def solve_gauss_equation(m: HyperbolicMesh | None, q: TracelessField, s: float, tol: float = 1e-12,
                         max_iter: int = 30, u0: ScalarField | None = None) -> MinimalPathPoint:
    """Newton on F(u, s); m = None is the homogeneous (constant field) backend."""
    detq = q.detq.values
    u = np.zeros(len(detq)) if u0 is None else u0.values.copy()
    it = 0
    while True:
        res = float(np.max(np.abs(gauss_residual(m, u, detq, s))))
        if res < tol:
            break
        if it >= max_iter or not np.isfinite(res):
            raise GaussDivergence(s, f"residual {res:.3e} after {it} iterations")
        lap = laplacian(m).apply(u) if m is not None else 0.0
        F = -lap - 1 + np.exp(2 * u) - np.exp(-2 * u) * s * s * detq
        f = 2 * np.exp(2 * u) + 2 * np.exp(-2 * u) * s * s * detq
        if np.any(f <= 0):
            raise GaussDivergence(s, "linearization lost positivity")
        if m is None:
            du = -F / f
        else:
            du = solve_helmholtz(m, ScalarField(f), ScalarField(-F)).values
        u = u + du
        it += 1
    return MinimalPathPoint(float(s), ScalarField(u), ScalarField(detq), q, res, it)


def gauss_scalar_oracle(c: float, s: float) -> float:
    """Constant solution of -1 + e^{2u} - e^{-2u} s^2 c = 0 by bracketing.

    For c < 0 there are two roots when 4 s^2 |c| < 1; the branch through
    u = 0 at s = 0 has e^{2u} > 1/2, which fixes the bracket.
    """
    g = lambda u: -1 + np.exp(2 * u) - np.exp(-2 * u) * s * s * c
    return float(brentq(g, 0.5 * np.log(0.5), 5.0, xtol=1e-15, rtol=1e-15))


def gauss_path(m: HyperbolicMesh | None, q: TracelessField, s_list, tol: float = 1e-12) -> list[MinimalPathPoint]:
    out = []
    for s in sorted(set(float(x) for x in s_list) | {0.0}):
        out.append(solve_gauss_equation(m, q, s, tol))
    return out


def forms_at_infinity(d: ImmersionData, end: int = 1) -> FormsAtInfinity:
    """I* = 1/2 (I +- 2 II + III), II* = 1/2 (I - III), K* = K / det(E +- B)."""
    if end not in (1, -1):
        raise ValueError("end must be +1 or -1")
    E = np.broadcast_to(np.eye(2), d.B.shape)
    P = E + end * d.B
    detP = np.linalg.det(P)
    if np.any(np.abs(detP) < 1e-12):
        raise ValueError("det(E + B) vanishes at a sample")
    Istar = 0.5 * (d.I + 2 * end * d.II + d.III)
    IIstar = 0.5 * (d.I - d.III)
    K = -1 + np.linalg.det(d.B)
    Kstar = K / detP
    Hstar = 0.5 * np.trace(np.linalg.solve(Istar, IIstar), axis1=-2, axis2=-1)
    II0 = IIstar - Hstar[..., None, None] * Istar
    return FormsAtInfinity(Istar, IIstar, Kstar, Hstar, II0)


def fit_exponent(s, y) -> float:
    """Slope of log|y| against log s (least squares)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(s), np.log(np.abs(y)), 1)[0])


@dataclass
class FirstOrderEstimate:
    dIstar: np.ndarray
    dIIstar0: np.ndarray
    dKstar: np.ndarray
    steps: tuple

    @property
    def halfpipe_schwarzians(self):
        return -self.dIIstar0, self.dIIstar0


def first_order_schwarzian(path: list[MinimalPathPoint], end: int = 1) -> FirstOrderEstimate:
    """One-sided Richardson estimates of d/ds at s = 0 from the two smallest positive steps."""
    pts = sorted(path, key=lambda p: p.s)
    if len(pts) < 3 or pts[0].s != 0.0:
        raise ValueError("need the s = 0 point and at least two positive steps")
    s1, s2 = pts[1].s, pts[2].s
    f0, f1, f2 = (forms_at_infinity(p.immersion, end) for p in pts[:3])

    def d(get):
        D1 = (get(f1) - get(f0)) / s1
        D2 = (get(f2) - get(f0)) / s2
        return (s2 * D1 - s1 * D2) / (s2 - s1)

    return FirstOrderEstimate(d(lambda f: f.Istar), d(lambda f: f.IIstar_traceless), d(lambda f: f.Kstar), (s1, s2))


def neville(ts, ys, t0: float = 0.0) -> np.ndarray:
    """Polynomial extrapolation of samples ys[k] (arrays) at ts[k] to t0."""
    ts = np.asarray(ts, dtype=float)
    P = [np.asarray(y, dtype=float) for y in ys]
    n = len(ts)
    if n < 2:
        raise ExtrapolationError("need at least two samples")
    for k in range(1, n):
        for i in range(n - k):
            P[i] = ((t0 - ts[i + k]) * P[i] + (ts[i] - t0) * P[i + 1]) / (ts[i] - ts[i + k])
    return P[0]


def _extrapolate(ts, ys, tol):
    order = np.argsort(ts)
    ts = np.asarray(ts)[order]
    ys = [ys[i] for i in order]
    if len(ts) < 3:
        raise ExtrapolationError("need at least three samples to estimate convergence")
    full = neville(ts, ys)
    # convergence: dropping the coarsest sample must not move the limit
    err = float(np.max(np.abs(full - neville(ts[:-1], ys[:-1]))))
    scale = max(1.0, float(np.max(np.abs(full))))
    if err > tol * scale:
        raise ExtrapolationError(f"extrapolation did not converge (change {err:.2e})")
    return full, err


@dataclass
class HalfpipeLimit:
    matrix: np.ndarray
    error: float
    block_defect: float


def halfpipe_block_defect(M: np.ndarray) -> float:
    """Distance from the block form (A, 0; v, 1) with A in O(2,1)."""
    A = M[:3, :3]
    return float(max(np.max(np.abs(A.T @ J21 @ A - J21)), np.max(np.abs(M[:3, 3])), abs(M[3, 3] - 1)))


def halfpipe_limit_holonomy(p: HolonomyPath4, tol: float = 1e-3) -> dict[str, HalfpipeLimit]:
    """lim_{t->0} G_t rho_t G_t^{-1} with G_t = diag(1, 1, 1, 1/t)."""
    out = {}
    g = np.ones((len(p.ts), 4))
    g[:, 3] = 1.0 / p.ts
    for name, M in p.mats.items():
        conj = g[:, :, None] * M / g[:, None, :]
        lim, err = _extrapolate(p.ts, list(conj), tol)
        out[name] = HalfpipeLimit(lim, err, halfpipe_block_defect(lim))
    return out


def lorentz_sample(rng: np.random.Generator) -> np.ndarray:
    """A random element of SO(2,1): rotation composed with a boost."""
    th, b, ph = rng.uniform(0, 2 * np.pi), rng.uniform(-1, 1), rng.uniform(0, 2 * np.pi)

    def rot(a):
        return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])

    boost = np.array([[np.cosh(b), 0, np.sinh(b)], [0, 1, 0], [np.sinh(b), 0, np.cosh(b)]])
    return rot(th) @ boost @ rot(ph)


def synthetic_holonomy_path(A0, w0, v0, ts) -> HolonomyPath4:
    """rho_t = (A0, t w0; t v0, 1)."""
    ts = np.asarray(ts, dtype=float)
    M = np.zeros((len(ts), 4, 4))
    M[:, :3, :3] = A0
    M[:, :3, 3] = ts[:, None] * np.asarray(w0)
    M[:, 3, :3] = ts[:, None] * np.asarray(v0)
    M[:, 3, 3] = 1.0
    return HolonomyPath4(ts, {"gamma": M})


@dataclass
class HalfpipeImmersion:
    I: np.ndarray
    II: np.ndarray
    I_exponent: float
    II_error: float
    schwarzians: tuple


def halfpipe_limit_immersion(path: list[MinimalPathPoint], tol: float = 1e-3) -> HalfpipeImmersion:
    """(lim I_t, lim II_t / t) over the positive samples, with the O(t^2) fit of I_t - h."""
    pts = sorted([p for p in path if p.s > 0], key=lambda p: p.s)
    if len(pts) < 3:
        raise ValueError("need at least three positive samples")
    ts = np.array([p.s for p in pts])
    Is = [p.immersion.I for p in pts]
    IIs = [p.immersion.II / p.s for p in pts]
    I0, _ = _extrapolate(ts, Is, tol)
    II0, err = _extrapolate(ts, IIs, tol)
    dev = [np.max(np.abs(I - np.eye(2))) for I in Is]
    expo = fit_exponent(ts, dev)
    tr = 0.5 * np.trace(np.linalg.solve(I0, II0), axis1=-2, axis2=-1)
    II0_traceless = II0 - tr[..., None, None] * I0
    return HalfpipeImmersion(I0, II0, expo, err, (II0_traceless, -II0_traceless))
