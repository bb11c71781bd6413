"""Epstein surfaces of conformal metrics at infinity and their curvature.

The unit normal of a leaf points toward the domain at infinity (for an
Epstein surface this is the geodesic from Eps(z) down to the boundary point
it was built from).  Shape operators use S = -nabla N, so the horosphere of
the flat metric has B = -Id and mean curvature -1.  Mean curvature is half
the trace throughout.  Equidistant flow at positive r moves along -N, i.e.
away from the domain at infinity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import geom
from .schwarzian import (
    BOUNDARY_LAYERS,
    ConformalMetric,
    Grid,
    HolomorphicMap,
    QuadDifferential,
    _apply_1d,
    mobius_flat_deviation,
)


class DegenerateCurvature(ValueError):
    def __init__(self, indices):
        self.indices = indices
        super().__init__(f"mean curvature denominator vanishes at {len(indices)} samples, first {indices[:5]}")


class ProbeError(ValueError):
    pass


@dataclass
class ImmersionData:
    """Per-sample 2x2 forms; arrays have shape (..., 2, 2)."""

    I: np.ndarray
    II: np.ndarray
    III: np.ndarray
    B: np.ndarray

    @classmethod
    def from_forms(cls, I, II) -> "ImmersionData":
        I = np.asarray(I, dtype=float)
        II = np.asarray(II, dtype=float)
        Iinv = np.linalg.inv(I)
        B = Iinv @ II
        return cls(I, II, II @ Iinv @ II, B)

    @property
    def mean_curvature(self) -> np.ndarray:
        return 0.5 * np.trace(self.B, axis1=-2, axis2=-1)

    @property
    def principal_curvatures(self) -> tuple[np.ndarray, np.ndarray]:
        H = self.mean_curvature
        det = np.linalg.det(self.B)
        disc = np.sqrt(np.maximum(H * H - det, 0.0))
        return H - disc, H + disc

    def self_adjoint_defect(self) -> float:
        IB = self.I @ self.B
        return float(np.max(np.abs(IB - np.swapaxes(IB, -1, -2))))


@dataclass
class EpsteinSurface:
    grid: Grid
    z: np.ndarray  # horizontal coordinate of the samples
    t: np.ndarray  # height
    ends: np.ndarray  # boundary point each sample was built from
    metric: ConformalMetric
    phi: QuadDifferential | None = None
    immersion: bool = False

    @property
    def normal(self) -> np.ndarray:
        """Unit normal toward the domain at infinity, hyperboloid coordinates."""
        return geom.toward_boundary(self.z, self.t, self.ends)

    @property
    def hyperboloid(self) -> np.ndarray:
        return geom.to_hyperboloid(self.z, self.t)

    def interior_mask(self, layers: int = 2 * BOUNDARY_LAYERS) -> np.ndarray:
        return self.grid.interior_mask(layers)


def _epstein_point(zeta, eta, eta_z):
    # (zeta, 0) + 2/(e^{2 eta} + 4|eta_z|^2) * (2 conj(eta_z), e^{eta})
    den = np.exp(2 * eta) + 4 * np.abs(eta_z) ** 2
    return zeta + 4 * np.conj(eta_z) / den, 2 * np.exp(eta) / den


def epstein_map(s: ConformalMetric, develop: HolomorphicMap | None = None, phi: QuadDifferential | None = None,
                check_immersion: bool = True) -> EpsteinSurface:
    """Eps of sigma = e^{2 eta}|dz|^2, optionally composed with a developing map."""
    if not np.all(np.isfinite(s.eta)):
        raise ValueError("non-finite log-density")
    z = s.grid.z
    eta = s.eta
    eta_z = s.derivs.dz
    if develop is None:
        ends = z
        w, t = _epstein_point(z, eta, eta_z)
    else:
        d1 = develop.derivative(z, 1)
        d2 = develop.derivative(z, 2)
        ends = develop.f(z)
        # push sigma forward through the developing map
        eta_hat = eta - np.log(np.abs(d1))
        eta_hat_w = (eta_z - 0.5 * d2 / d1) / d1
        w, t = _epstein_point(ends, eta_hat, eta_hat_w)
    surf = EpsteinSurface(s.grid, w, t, ends, s, phi)
    if check_immersion:
        I = first_form_fd(surf)
        mask = s.grid.interior_mask()
        surf.immersion = bool(np.all(np.linalg.det(I[mask]) > 0) and np.all(I[mask][:, 0, 0] > 0))
    return surf


def defining_property_defect(e: EpsteinSurface, develop: HolomorphicMap | None = None) -> np.ndarray:
    """log(visual density of Eps(z) at z, pulled back) - eta(z)."""
    dens = geom.visual_density_arrays(e.z, e.t, e.ends)
    if develop is not None:
        dens = dens * np.abs(develop.derivative(e.grid.z, 1))
    return np.log(dens) - e.metric.eta


def mean_curvature_formula(s: ConformalMetric, phi: QuadDifferential | None = None,
                           raise_on_degenerate: bool = True) -> np.ndarray:
    K = s.curvature()
    B = mobius_flat_deviation(s).lam
    if phi is not None:
        B = B - 0.5 * phi.lam
    n2 = (np.exp(-2 * s.eta) * np.abs(B)) ** 2
    num = K * K - 1 - 16 * n2
    den = (K - 1) ** 2 - 16 * n2
    bad = np.argwhere(np.abs(den) < 1e-12)
    if len(bad) and raise_on_degenerate:
        raise DegenerateCurvature([tuple(int(i) for i in b) for b in bad])
    return num / den


def _hyperboloid_derivs(e: EpsteinSurface):
    X = e.hyperboloid
    h = e.grid.spacing
    Xu = _apply_1d(X, 0, h, 1)
    Xv = _apply_1d(X, 1, h, 1)
    Xuu = _apply_1d(X, 0, h, 2)
    Xvv = _apply_1d(X, 1, h, 2)
    Xuv = _apply_1d(Xu, 1, h, 1)
    return X, Xu, Xv, Xuu, Xuv, Xvv


def first_form_fd(e: EpsteinSurface) -> np.ndarray:
    _, Xu, Xv, *_ = _hyperboloid_derivs(e)
    return _gram(Xu, Xv)


def _gram(Xu, Xv):
    E = geom.minkowski(Xu, Xu)
    F = geom.minkowski(Xu, Xv)
    G = geom.minkowski(Xv, Xv)
    return np.stack([np.stack([E, F], -1), np.stack([F, G], -1)], -2)


def _unit_normal(X, Xu, Xv, orient):
    """Spacelike unit vector Minkowski-orthogonal to X, Xu, Xv, sign fixed by orient."""
    J = geom.MINKOWSKI
    A = np.stack([X @ J, Xu @ J, Xv @ J], axis=-2)  # (..., 3, 4)
    # generalized cross product: cofactors of the 3x4 system
    N = np.empty(X.shape)
    for k in range(4):
        cols = [c for c in range(4) if c != k]
        N[..., k] = (-1) ** k * np.linalg.det(A[..., cols])
    N = N / np.sqrt(np.abs(geom.minkowski(N, N)))[..., None]
    sign = np.sign(geom.minkowski(N, orient))
    sign[sign == 0] = 1
    return N * sign[..., None]


def fundamental_forms_fd(e: EpsteinSurface) -> ImmersionData:
    """Differentiate the sampled embedding; independent of the curvature formula."""
    X, Xu, Xv, Xuu, Xuv, Xvv = _hyperboloid_derivs(e)
    I = _gram(Xu, Xv)
    if np.any(np.linalg.det(I[e.grid.interior_mask()]) <= 0):
        raise ValueError("first fundamental form degenerate at an interior sample")
    N = _unit_normal(X, Xu, Xv, e.normal)
    L = geom.minkowski(Xuu, N)
    M = geom.minkowski(Xuv, N)
    Nn = geom.minkowski(Xvv, N)
    II = np.stack([np.stack([L, M], -1), np.stack([M, Nn], -1)], -2)
    with np.errstate(all="ignore"):
        return ImmersionData.from_forms(I, II)


def equidistant_flow(d: ImmersionData, r: float) -> ImmersionData:
    E = np.broadcast_to(np.eye(2), d.B.shape)
    P = np.cosh(r) * E + np.sinh(r) * d.B
    detP = np.linalg.det(P)
    if np.any(np.abs(detP) < 1e-12):
        raise ValueError("cosh(r)E + sinh(r)B not invertible: a principal curvature equals -coth(r)")
    Ir = np.swapaxes(P, -1, -2) @ d.I @ P
    Br = np.linalg.solve(P, np.sinh(r) * E + np.cosh(r) * d.B)
    IIr = Ir @ Br
    IIIr = IIr @ Br
    return ImmersionData(Ir, IIr, IIIr, Br)


def normal_flow_point(e: EpsteinSurface, index, r: float):
    """Point at oriented distance r from sample ``index`` (r > 0 away from infinity)."""
    X = e.hyperboloid[index]
    N = e.normal[index]
    return geom.from_hyperboloid(geom.exp_map(X, -N, r))


class _LeafInterpolant:
    def __init__(self, e: EpsteinSurface):
        g = e.grid
        self.x, self.y = g.x, g.y
        self.sx = RectBivariateSpline(g.x, g.y, e.z.real)
        self.sy = RectBivariateSpline(g.x, g.y, e.z.imag)
        self.st = RectBivariateSpline(g.x, g.y, e.t)
        self.ex = RectBivariateSpline(g.x, g.y, e.ends.real)
        self.ey = RectBivariateSpline(g.x, g.y, e.ends.imag)

    def point(self, u, v, du=0, dv=0):
        return (
            self.sx.ev(u, v, dx=du, dy=dv),
            self.sy.ev(u, v, dx=du, dy=dv),
            self.st.ev(u, v, dx=du, dy=dv),
        )

    def end(self, u, v):
        return self.ex.ev(u, v) + 1j * self.ey.ev(u, v)


def _delta_and_grad(interp, u, v, pz, pt):
    """delta = cosh d - 1 and its gradient in the chart parameters."""
    x, y, t = interp.point(u, v)
    D = (x - pz.real) ** 2 + (y - pz.imag) ** 2 + (t - pt) ** 2
    delta = D / (2 * pt * t)
    grads = []
    for du, dv in ((1, 0), (0, 1)):
        xd, yd, td = interp.point(u, v, du, dv)
        Dd = 2 * ((x - pz.real) * xd + (y - pz.imag) * yd + (t - pt) * td)
        grads.append((Dd * t - D * td) / (2 * pt * t * t))
    return delta, np.stack(grads, -1)


def signed_distance_probe(leaf: EpsteinSurface, pz, pt, max_iter: int = 40, tol: float = 1e-6) -> np.ndarray:
    """Signed distance from points (pz, pt) to the sampled leaf, positive away from infinity.

    Nearest-sample search, then damped Newton on cosh(d) over the interpolated
    leaf parameter.  Points whose foot would leave the sampled chart raise
    :class:`ProbeError`.
    """
    pz = np.atleast_1d(np.asarray(pz, dtype=complex))
    pt = np.atleast_1d(np.asarray(pt, dtype=float))
    g = leaf.grid
    interp = _LeafInterpolant(leaf)
    # coarse: nearest sample
    flat_z = leaf.z.ravel()
    flat_t = leaf.t.ravel()
    uu, vv = np.meshgrid(g.x, g.y, indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    u = np.empty(pz.shape)
    v = np.empty(pz.shape)
    for k in range(pz.size):
        c = geom.cosh_distance(flat_z, flat_t, pz[k], pt[k])
        i = int(np.argmin(c))
        u[k], v[k] = uu[i], vv[i]
    lo_u, hi_u = g.x[0], g.x[-1]
    lo_v, hi_v = g.y[0], g.y[-1]
    eps = 1e-4 * g.spacing
    for _ in range(max_iter):
        delta, grad = _delta_and_grad(interp, u, v, pz, pt)
        # Hessian by central differences of the analytic gradient
        _, gpu = _delta_and_grad(interp, u + eps, v, pz, pt)
        _, gmu = _delta_and_grad(interp, u - eps, v, pz, pt)
        _, gpv = _delta_and_grad(interp, u, v + eps, pz, pt)
        _, gmv = _delta_and_grad(interp, u, v - eps, pz, pt)
        H = np.stack([(gpu - gmu) / (2 * eps), (gpv - gmv) / (2 * eps)], -1)
        H = 0.5 * (H + np.swapaxes(H, -1, -2))
        det = H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] ** 2
        pd = (det > 0) & (H[..., 0, 0] > 0)
        step = np.empty_like(grad)
        safe_det = np.where(pd, det, 1.0)
        step[..., 0] = np.where(pd, (H[..., 1, 1] * grad[..., 0] - H[..., 0, 1] * grad[..., 1]) / safe_det, 0)
        step[..., 1] = np.where(pd, (H[..., 0, 0] * grad[..., 1] - H[..., 0, 1] * grad[..., 0]) / safe_det, 0)
        # gradient fallback where the Hessian is not positive definite
        gn = np.linalg.norm(grad, axis=-1)
        fallback = 0.5 * g.spacing * grad / np.maximum(gn, 1e-300)[..., None]
        step = np.where(pd[..., None], step, fallback)
        # cap steps at one grid cell
        sn = np.linalg.norm(step, axis=-1)
        step = step * np.minimum(1.0, g.spacing / np.maximum(sn, 1e-300))[..., None]
        u = np.clip(u - step[..., 0], lo_u, hi_u)
        v = np.clip(v - step[..., 1], lo_v, hi_v)
        if np.max(np.linalg.norm(step, axis=-1)) < 1e-12 * max(1.0, g.spacing):
            break
    delta, grad = _delta_and_grad(interp, u, v, pz, pt)
    on_edge = (u <= lo_u) | (u >= hi_u) | (v <= lo_v) | (v >= hi_v)
    if np.any(on_edge & (np.linalg.norm(grad, axis=-1) > tol)):
        raise ProbeError("probe point outside the normal-flow collar covered by the samples")
    dist = 2.0 * np.arcsinh(np.sqrt(np.maximum(delta, 0.0) / 2.0))
    # sign: which side of the leaf, relative to the normal at the foot
    fx, fy, ft = interp.point(u, v)
    fz = fx + 1j * fy
    Xf = geom.to_hyperboloid(fz, ft)
    Nf = geom.toward_boundary(fz, ft, interp.end(u, v))
    Xp = geom.to_hyperboloid(pz, pt)
    tangent = Xp + geom.minkowski(Xp, Xf)[..., None] * Xf
    side = -np.sign(geom.minkowski(tangent, Nf))
    side[dist < 1e-12] = 0.0
    return side * dist


def write_obj(path, e: EpsteinSurface) -> None:
    nx, ny = e.grid.shape
    with open(path, "w") as fh:
        for i in range(nx):
            for j in range(ny):
                fh.write(f"v {float(e.z[i, j].real)!r} {float(e.z[i, j].imag)!r} {float(e.t[i, j])!r}\n")
        for i in range(nx - 1):
            for j in range(ny - 1):
                a = i * ny + j + 1
                b = (i + 1) * ny + j + 1
                fh.write(f"f {a} {b} {b + 1}\nf {a} {b + 1} {a + 1}\n")


def write_surface_csv(path, e: EpsteinSurface, data: ImmersionData | None = None) -> None:
    import csv

    if data is None:
        data = fundamental_forms_fd(e)
    k1, k2 = data.principal_curvatures
    H = data.mean_curvature
    mask = e.interior_mask()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_re", "z_im", "height", "H", "lambda1", "lambda2"])
        for idx in zip(*np.nonzero(mask)):
            w.writerow([repr(float(e.z[idx].real)), repr(float(e.z[idx].imag)), repr(float(e.t[idx])),
                        repr(float(H[idx])), repr(float(k1[idx])), repr(float(k2[idx]))])
