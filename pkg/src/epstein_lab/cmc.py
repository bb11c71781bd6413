"""CMC foliations near the Fuchsian locus by Newton continuation in H.

Unknown: v with tau_h(v) = e^{2v} h.  The renormalized equation is

    G(H, v) = 1 - H - 2 H K - (1 + H)(K^2 - 16 N^2),
    K = K(tau_h(v)),  N = ||B(tau_h(v)) - phi/2||_tau,

and the conformal factor of the leaf at infinity is u = v - artanh(H).
Three backends share the algebra; they differ in how Delta_h and B(tau) are
discretized:

* homogeneous: a single constant value (Delta = 0, B = 0), exact scalar algebra;
* mesh: a closed genus-2 HyperbolicMesh, B from one-ring fits in fan charts;
* disk: a square patch of the Poincare disk with v = 0 on two boundary
  layers, phi realised as S(f) of a developing map so leaves are Epstein
  surfaces that can be probed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import epstein as eps
from .schwarzian import BOUNDARY_LAYERS, ConformalMetric, Grid, HolomorphicMap, QuadDifferential, \
    diff_matrix_1d, schwarzian_values
from .surface import HyperbolicMesh, LinearOperator, ScalarField, chart_derivatives

log = logging.getLogger(__name__)

BACKENDS = ("homogeneous", "mesh", "disk")


class NewtonDivergence(RuntimeError):
    pass


class ContinuationFailure(RuntimeError):
    def __init__(self, H, msg):
        self.H = H
        super().__init__(f"continuation failed at H={H:.6g}: {msg}")


class MonotonicityViolation(RuntimeError):
    def __init__(self, pair, sep):
        self.pair = pair
        super().__init__(f"non-positive separation {sep:.3e} between leaves H={pair[0]:.4g} and H={pair[1]:.4g}")


@dataclass
class _Discretization:
    n: int
    mass: np.ndarray
    lap: sp.csr_matrix  # strong-form Delta_h
    Dz: sp.csr_matrix | None  # complex; None means B(tau) = 0
    Dzz: sp.csr_matrix | None
    rho: np.ndarray  # h = e^{2 rho}|dz|^2 in the chart where B and phi live
    rho_z: np.ndarray
    active: np.ndarray  # boolean, unknowns; others pinned at v = 0
    weak: sp.csr_matrix | None = None  # symmetric -W with lap = M^{-1} weak, when available


@dataclass
class CmcProblem:
    backend: str
    disc: _Discretization
    phi: np.ndarray  # complex coefficient per point, in the chart of disc
    grid: Grid | None = None
    mesh: HyperbolicMesh | None = None
    develop: HolomorphicMap | None = None
    orientation: int = 1
    meta: dict = field(default_factory=dict)

    @classmethod
    def homogeneous(cls, phi_norm: float = 0.0) -> "CmcProblem":
        """All fields constant; phi_norm = ||phi||_h."""
        d = _Discretization(1, np.array([4 * np.pi]), sp.csr_matrix((1, 1)), None, None,
                            np.zeros(1), np.zeros(1, dtype=complex), np.ones(1, dtype=bool))
        return cls("homogeneous", d, np.array([complex(phi_norm)]), meta={"phi_norm": phi_norm})

    @classmethod
    def on_mesh(cls, mesh: HyperbolicMesh, phi) -> "CmcProblem":
        """phi: per-vertex coefficient in each vertex's fan chart (h = |dw|^2 at the centre)."""
        phi = np.broadcast_to(np.asarray(phi, dtype=complex), (mesh.n_vertices,)).copy()
        cd = chart_derivatives(mesh)
        W = mesh.stiffness()
        d = _Discretization(mesh.n_vertices, mesh.mass, (-sp.diags(1.0 / mesh.mass) @ W).tocsr(),
                            cd.Dz.tocsr(), cd.Dzz.tocsr(), np.zeros(mesh.n_vertices),
                            np.zeros(mesh.n_vertices, dtype=complex), np.ones(mesh.n_vertices, dtype=bool),
                            weak=(-W).tocsr())
        return cls("mesh", d, phi, mesh=mesh)

    @classmethod
    def disk(cls, half_width: float = 0.5, n: int = 81, phi_scale: float = 0.0,
             direction: complex = 1.0 + 0.5j) -> "CmcProblem":
        """Square patch of the Poincare disk with phi = S(f), f = (e^{az} - 1)/a.

        a = sqrt(phi_scale) * direction, so S(f) = -phi_scale * direction^2 / 2.
        """
        if half_width >= 1 / np.sqrt(2):
            raise ValueError("patch must lie inside the unit disk")
        grid = Grid.square(0.0, half_width, n)
        a = np.sqrt(phi_scale) * complex(direction)
        f = HolomorphicMap.exp_map(a)
        phi = np.full(n * n, -a * a / 2)
        # the developing map must realise phi on the whole chart
        dev = np.max(np.abs(schwarzian_values(f, grid.z).ravel() - phi))
        if dev > 1e-6:
            raise ValueError(f"developing map inconsistent with phi on the chart ({dev:.2e})")
        h = grid.spacing
        I = sp.identity(n, format="csr")
        D1 = diff_matrix_1d(n, h, 1)
        D2 = diff_matrix_1d(n, h, 2)
        Dx, Dy = sp.kron(D1, I), sp.kron(I, D1)
        Dxx, Dyy = sp.kron(D2, I), sp.kron(I, D2)
        Dxy = Dx @ Dy
        z = grid.z.ravel()
        rho = np.log(2.0) - np.log1p(-np.abs(z) ** 2)
        rho_z = np.conj(z) / (1 - np.abs(z) ** 2)
        lap = (sp.diags(np.exp(-2 * rho)) @ (Dxx + Dyy)).tocsr()
        Dz = (0.5 * (Dx - 1j * Dy)).tocsr()
        Dzz = (0.25 * (Dxx - Dyy - 2j * Dxy)).tocsr()
        active = grid.interior_mask(BOUNDARY_LAYERS).ravel()
        mass = h * h * np.exp(2 * rho)
        d = _Discretization(n * n, mass, lap, Dz, Dzz, rho, rho_z, active)
        return cls("disk", d, phi, grid=grid, develop=f, meta={"a": a, "phi_scale": phi_scale})

    @property
    def n(self) -> int:
        return self.disc.n

    def zero(self) -> ScalarField:
        return ScalarField(np.zeros(self.n))


@dataclass
class CmcSolution:
    H: float
    v: ScalarField
    u: ScalarField
    residual_norm: float
    newton_iters: int
    history: list = field(default_factory=list)


@dataclass
class LeafCertificate:
    H: float
    residual: float
    H_fd_error: float
    kmin: float
    kmax: float
    separation: float | None  # min signed distance to the previous leaf


@dataclass
class CmcLeafFamily:
    problem: CmcProblem
    solutions: list[CmcSolution]
    leaves: list = field(default_factory=list)
    certificates: list[LeafCertificate] = field(default_factory=list)
    certified: bool = False

    @property
    def H(self) -> np.ndarray:
        return np.array([s.H for s in self.solutions])


def change_variables(u: ScalarField, H: float, orientation: int = 1) -> ScalarField:
    """v = u + orientation * 1/2 log((1+H)/(1-H))."""
    if not abs(H) < 1:
        raise ValueError(f"|H| must be < 1, got {H}")
    return ScalarField(u.values + orientation * np.arctanh(H))


def inverse_change_variables(v: ScalarField, H: float, orientation: int = 1) -> ScalarField:
    if not abs(H) < 1:
        raise ValueError(f"|H| must be < 1, got {H}")
    return ScalarField(v.values - orientation * np.arctanh(H))


def _state(p: CmcProblem, v: np.ndarray):
    d = p.disc
    lapv = d.lap @ v
    e2 = np.exp(-2 * v)
    K = e2 * (-lapv - 1.0)
    if d.Dz is None:
        vz = np.zeros(d.n, dtype=complex)
        Bphi = -0.5 * p.phi
    else:
        vz = d.Dz @ v
        Bphi = d.Dzz @ v - vz * vz - 2 * d.rho_z * vz - 0.5 * p.phi
    wgt = np.exp(-4 * (d.rho + v))
    N2 = wgt * np.abs(Bphi) ** 2
    return K, N2, Bphi, vz, wgt, e2


def residual_G(p: CmcProblem, H: float, v: ScalarField) -> ScalarField:
    K, N2, *_ = _state(p, v.values)
    G = 1 - H - 2 * H * K - (1 + H) * (K * K - 16 * N2)
    G[~p.disc.active] = 0.0
    return ScalarField(G)


def _jacobian(p: CmcProblem, H: float, v: np.ndarray, weak: bool = False) -> sp.csr_matrix:
    """dG/dv, analytic in every term; with weak=True rows are scaled by the mass."""
    d = p.disc
    K, N2, Bphi, vz, wgt, e2 = _state(p, v)
    mass = d.mass if weak else np.ones(d.n)
    if weak and d.weak is not None:
        # mass * Delta is the assembled symmetric matrix; avoid the round trip through M^{-1}
        lapw = d.weak
    else:
        lapw = sp.diags(mass) @ d.lap
    dK = sp.diags(-2 * K * mass) - sp.diags(e2) @ lapw
    dN2 = sp.diags(-4 * N2)
    if d.Dz is not None:
        dB = d.Dzz - sp.diags(2 * vz + 2 * d.rho_z) @ d.Dz
        dN2 = dN2 + (sp.diags(2 * wgt * np.conj(Bphi)) @ dB).real
    c1 = -2 * H - 2 * (1 + H) * K
    return (sp.diags(c1) @ dK + sp.diags(16 * (1 + H) * mass) @ dN2).tocsr()


def linearize_G(p: CmcProblem, H: float, v: ScalarField) -> LinearOperator:
    """Weak form of dG/dv; at (H, 0, phi = 0) it is 2 (2 M + W) for every H."""
    if H >= 1:
        raise ValueError("linearization degenerates at H = 1")
    return LinearOperator(_jacobian(p, H, v.values, weak=True), p.disc.mass, "jacobian")


def newton_solve(p: CmcProblem, H: float, v0: ScalarField | None = None, tol: float = 1e-10,
                 max_iter: int = 30) -> CmcSolution:
    if not -1 <= H < 1:
        raise ValueError(f"H must lie in [-1, 1), got {H}")
    act = p.disc.active
    v = (v0.values if v0 is not None else np.zeros(p.n)).copy()
    v[~act] = 0.0
    G = residual_G(p, H, ScalarField(v)).values
    res = float(np.max(np.abs(G)))
    hist = [res]
    rises = 0
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NewtonDivergence(f"no convergence in {max_iter} iterations at H={H} (residual {res:.3e})")
        J = _jacobian(p, H, v)[act][:, act].tocsc()
        try:
            step = spla.spsolve(J, -G[act])
        except RuntimeError as exc:
            raise NewtonDivergence(f"linear solve failed at H={H}: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise NewtonDivergence(f"singular Jacobian at H={H}")
        v[act] += step
        it += 1
        G = residual_G(p, H, ScalarField(v)).values
        new = float(np.max(np.abs(G)))
        rises = rises + 1 if new > res else 0
        if rises >= 2 or not np.isfinite(new):
            raise NewtonDivergence(f"residual increased twice in a row at H={H} ({res:.3e} -> {new:.3e})")
        res = new
        hist.append(res)
    vs = ScalarField(v)
    u = inverse_change_variables(vs, H, p.orientation) if abs(H) < 1 else None
    return CmcSolution(H, vs, u, res, it, hist)


def continuation(p: CmcProblem, H_lo: float, H_hi: float, steps: int, tol: float = 1e-10,
                 min_step: float = 1e-4) -> CmcLeafFamily:
    """Solutions on linspace(H_lo, H_hi, steps), each seeded by the previous one.

    H_lo > H_hi runs the sweep downward.  A failed step is retried through
    intermediate H values, halving down to ``min_step``.
    """
    if not (-1 < H_lo < 1 and -1 < H_hi < 1) or H_lo == H_hi or steps < 1:
        raise ValueError("need -1 < H_lo, H_hi < 1, H_lo != H_hi and steps >= 1")
    Hs = np.linspace(H_lo, H_hi, steps) if steps > 1 else np.array([H_lo])
    sols = []
    v = p.zero()
    Hcur = None
    for Ht in Hs:
        if Hcur is None:
            sol = _try_reach(p, Ht, v, tol, None, min_step)
        else:
            sol = _try_reach(p, Ht, v, tol, Hcur, min_step)
        sols.append(sol)
        v, Hcur = sol.v, sol.H
        log.debug("H=%.4f residual=%.2e iters=%d", sol.H, sol.residual_norm, sol.newton_iters)
    return CmcLeafFamily(p, sols)


def _try_reach(p, Ht, v, tol, Hfrom, min_step):
    try:
        return newton_solve(p, Ht, v, tol)
    except NewtonDivergence as exc:
        if Hfrom is None or abs(Ht - Hfrom) / 2 < min_step:
            raise ContinuationFailure(Ht, str(exc)) from exc
    mid = 0.5 * (Ht + Hfrom)
    sol = _try_reach(p, mid, v, tol, Hfrom, min_step)
    return _try_reach(p, Ht, sol.v, tol, mid, min_step)


def leaf_metric(p: CmcProblem, sol: CmcSolution) -> ConformalMetric:
    if p.backend != "disk":
        raise ValueError("Epstein leaves need the disk backend")
    eta = sol.u.values + p.disc.rho
    return ConformalMetric(p.grid, eta.reshape(p.grid.shape))


def leaf_surface(p: CmcProblem, sol: CmcSolution) -> eps.EpsteinSurface:
    phi = QuadDifferential(p.grid, p.phi.reshape(p.grid.shape), holomorphic=True)
    return eps.epstein_map(leaf_metric(p, sol), develop=p.develop, phi=phi)


def _probe_points(leaf: eps.EpsteinSurface, margin: int, stride: int):
    nx, ny = leaf.grid.shape
    ii = np.arange(margin, nx - margin, stride)
    jj = np.arange(margin, ny - margin, stride)
    I, J = np.meshgrid(ii, jj, indexing="ij")
    return leaf.z[I, J].ravel(), leaf.t[I, J].ravel()


def assemble_foliation(fam: CmcLeafFamily, layers: int = 2 * BOUNDARY_LAYERS + 2, probe_margin: int | None = None,
                       probe_stride: int = 4, raise_on_failure: bool = True) -> CmcLeafFamily:
    """Build Epstein leaves and certify each one against its curvature and separation bounds."""
    p = fam.problem
    g = p.grid
    if probe_margin is None:
        probe_margin = g.nx // 4
    mask = g.interior_mask(layers)
    leaves, certs = [], []
    ok = True
    for k, sol in enumerate(fam.solutions):
        leaf = leaf_surface(p, sol)
        data = eps.fundamental_forms_fd(leaf)
        k1, k2 = data.principal_curvatures
        Herr = float(np.max(np.abs(data.mean_curvature[mask] - sol.H)))
        sep = None
        if k > 0:
            pz, pt = _probe_points(leaf, probe_margin, probe_stride)
            sep = float(np.min(eps.signed_distance_probe(leaves[-1], pz, pt)))
        c = LeafCertificate(sol.H, sol.residual_norm, Herr, float(k1[mask].min()), float(k2[mask].max()), sep)
        leaves.append(leaf)
        certs.append(c)
        if sep is not None and not sep > 0:
            ok = False
            if raise_on_failure:
                raise MonotonicityViolation((fam.solutions[k - 1].H, sol.H), sep)
        if not (-1 < c.kmin and c.kmax < 1):
            ok = False
    fam.leaves = leaves
    fam.certificates = certs
    fam.certified = ok
    return fam


def separations(fam: CmcLeafFamily) -> np.ndarray:
    return np.array([c.separation for c in fam.certificates[1:]])


def homogeneous_oracle(H: float, phi_norm: float) -> float:
    """Exact constant solution v of G = 0 on the homogeneous backend.

    With x = e^{-2v}: (1+H)(1-4p^2) x^2 - 2H x - (1-H) = 0, root nearest 1.
    """
    a = (1 + H) * (1 - 4 * phi_norm**2)
    if abs(a) < 1e-15:
        x = -(1 - H) / (2 * H)
    else:
        roots = np.roots([a, -2 * H, -(1 - H)])
        roots = roots[np.isreal(roots) & (roots.real > 0)].real
        x = roots[np.argmin(np.abs(roots - 1))]
    return float(-0.5 * np.log(x))
