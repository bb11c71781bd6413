"""Discrete closed hyperbolic surfaces and the elliptic operators living on them.

A mesh carries its metric as per-triangle edge lengths (hyperbolic lengths of
geodesic triangles).  Operators are the P1 finite-element ones of the
piecewise-flat metric with the same edge lengths, so the Laplacian is the
usual cotangent matrix and areas come from Heron's formula; the smooth K = -1
surface is the refinement limit.

Conventions: Delta = div grad (negative semidefinite).  A LinearOperator stores
the symmetric weak-form matrix A and the lumped mass vector; its strong-form
action is M^{-1} A.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MeshError(ValueError):
    pass


class PositivityError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


# side k of the octagon is glued to side PAIRING[k] with reversed parameter
PAIRING = {0: 2, 2: 0, 1: 3, 3: 1, 4: 6, 6: 4, 5: 7, 7: 5}


def klein_distance(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    num = 1.0 - np.sum(p * q, axis=-1)
    den = np.sqrt((1.0 - np.sum(p * p, axis=-1)) * (1.0 - np.sum(q * q, axis=-1)))
    return np.arccosh(np.maximum(num / den, 1.0))


def hyperbolic_angles(lengths: np.ndarray) -> np.ndarray:
    """Angles of geodesic triangles; lengths[..., k] is the side opposite corner k."""
    a, b, c = (lengths[..., k] for k in range(3))
    out = np.empty(lengths.shape)
    for k, (x, y, z) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        cosang = (np.cosh(y) * np.cosh(z) - np.cosh(x)) / (np.sinh(y) * np.sinh(z))
        out[..., k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return out


def euclidean_angles(lengths: np.ndarray) -> np.ndarray:
    a, b, c = (lengths[..., k] for k in range(3))
    out = np.empty(lengths.shape)
    for k, (x, y, z) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        out[..., k] = np.arccos(np.clip((y * y + z * z - x * x) / (2 * y * z), -1.0, 1.0))
    return out


def heron_area(lengths: np.ndarray) -> np.ndarray:
    # numerically stable ordering a >= b >= c
    s = -np.sort(-lengths, axis=-1)
    a, b, c = s[..., 0], s[..., 1], s[..., 2]
    prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    if np.any(prod <= 0):
        raise MeshError("degenerate triangle (triangle inequality violated)")
    return 0.25 * np.sqrt(prod)


@dataclass
class ScalarField:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("scalar field must be one value per vertex")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field has non-finite entries")

    def __len__(self):
        return len(self.values)

    @classmethod
    def constant(cls, n: int, c: float) -> "ScalarField":
        return cls(np.full(n, float(c)))


@dataclass
class LinearOperator:
    matrix: sp.csr_matrix
    mass: np.ndarray
    kind: str  # laplacian | helmholtz | jacobian

    def apply(self, u) -> np.ndarray:
        u = u.values if isinstance(u, ScalarField) else np.asarray(u)
        return (self.matrix @ u) / self.mass

    def strong(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.mass) @ self.matrix

    def symmetry_defect(self) -> float:
        d = self.matrix - self.matrix.T
        return float(abs(d).max()) if d.nnz else 0.0


@dataclass
class FanChart:
    """One-ring of a vertex laid out in a conformal disk chart centred at it.

    The chart coordinate w has h = (1 - |w|^2/4)^{-2}|dw|^2, so h is the
    Euclidean metric at w = 0 and its Christoffel symbols vanish there.
    """

    neighbors: np.ndarray
    w: np.ndarray


@dataclass
class HyperbolicMesh:
    genus: int
    vertices: np.ndarray  # (V, 2) Klein coordinates of a representative, for export
    triangles: np.ndarray  # (F, 3), counterclockwise
    tri_lengths: np.ndarray  # (F, 3) length of the side opposite each corner
    triangle_edges: np.ndarray  # (F, 3) edge id of the side opposite each corner
    n_edges: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + len(self.triangles)

    @property
    def triangle_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = heron_area(self.tri_lengths)
        return self._cache["areas"]

    @property
    def total_area(self) -> float:
        return float(np.sum(self.triangle_areas))

    @property
    def hyperbolic_area(self) -> float:
        return float(np.sum(np.pi - hyperbolic_angles(self.tri_lengths).sum(axis=1)))

    @property
    def mass(self) -> np.ndarray:
        if "mass" not in self._cache:
            m = np.zeros(self.n_vertices)
            np.add.at(m, self.triangles.ravel(), np.repeat(self.triangle_areas / 3.0, 3))
            self._cache["mass"] = m
        return self._cache["mass"]

    @property
    def vertex_angle_defect(self) -> np.ndarray:
        """2 pi minus the piecewise-flat cone angle; sums to 2 pi chi."""
        ang = euclidean_angles(self.tri_lengths)
        tot = np.zeros(self.n_vertices)
        np.add.at(tot, self.triangles.ravel(), ang.ravel())
        return 2 * np.pi - tot

    def stiffness(self) -> sp.csr_matrix:
        """Cotangent matrix W >= 0 with W 1 = 0."""
        if "W" not in self._cache:
            L = self.tri_lengths
            area = self.triangle_areas
            rows, cols, vals = [], [], []
            for k in range(3):
                a, b, c = L[:, k], L[:, (k + 1) % 3], L[:, (k + 2) % 3]
                w = 0.5 * (b * b + c * c - a * a) / (4 * area)  # half cot of the angle at corner k
                i = self.triangles[:, (k + 1) % 3]
                j = self.triangles[:, (k + 2) % 3]
                rows += [i, j, i, j]
                cols += [j, i, i, j]
                vals += [-w, -w, w, w]
            n = self.n_vertices
            W = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
            self._cache["W"] = W.tocsr()
        return self._cache["W"]

    def fan_charts(self) -> list[FanChart]:
        if "fans" not in self._cache:
            self._cache["fans"] = _build_fans(self)
        return self._cache["fans"]


def _octagon_corners() -> np.ndarray:
    # regular octagon with interior angles pi/4: cosh R = cot^2(pi/8)
    R = np.arccosh(1.0 / np.tan(np.pi / 8) ** 2)
    rk = np.tanh(R)
    th = np.pi / 8 + np.arange(8) * np.pi / 4
    return rk * np.stack([np.cos(th), np.sin(th)], axis=-1)


def _to_hyperboloid2(p):
    p = np.asarray(p, dtype=float)
    s = 1.0 / np.sqrt(1.0 - p @ p)
    return np.array([s, s * p[0], s * p[1]])


def _midpoint_lattice(p1, p2, levels: int) -> dict:
    """Klein coordinates of (a, b) -> point of the triangle (0, p1, p2), a + b <= 2**levels."""
    pts = {(0, 0): _to_hyperboloid2((0.0, 0.0)), (1, 0): _to_hyperboloid2(p1), (0, 1): _to_hyperboloid2(p2)}
    n = 1
    for _ in range(levels):
        new = {(2 * a, 2 * b): X for (a, b), X in pts.items()}
        n *= 2
        for a in range(n + 1):
            for b in range(n + 1 - a):
                if (a, b) in new:
                    continue
                if a % 2 and not b % 2:
                    u, v = (a - 1, b), (a + 1, b)
                elif b % 2 and not a % 2:
                    u, v = (a, b - 1), (a, b + 1)
                else:
                    u, v = (a - 1, b + 1), (a + 1, b - 1)
                X = new[u] + new[v]
                new[(a, b)] = X / np.sqrt(X[0] ** 2 - X[1] ** 2 - X[2] ** 2)
        pts = new
    return {k: X[1:] / X[0] for k, X in pts.items()}


def build_genus2_octagon(subdiv: int) -> HyperbolicMesh:
    """Regular octagon with sides glued as a b a^-1 b^-1 c d c^-1 d^-1.

    Each of the 8 centre-to-side fan triangles is split subdiv times by
    joining hyperbolic edge midpoints, giving n = 2**subdiv segments per
    side; every level halves the mesh size.  All sub-triangles are geodesic,
    so the edge lengths are exact hyperbolic lengths.
    """
    if subdiv < 0:
        raise ValueError("subdiv must be >= 0")
    n = 2**subdiv
    P = _octagon_corners()

    index: dict = {}
    pos: list = []

    def key(k, a, b):
        if a + b == n:
            if b == 0 or b == n:
                return ("C",)
            side, j = k, b
            partner = PAIRING[side]
            return ("S", side, j) if side < partner else ("S", partner, n - j)
        if a == 0 and b == 0:
            return ("O",)
        if b == 0:
            return ("R", k, a)
        if a == 0:
            return ("R", (k + 1) % 8, b)
        return ("I", k, a, b)

    lattice = [_midpoint_lattice(P[k], P[(k + 1) % 8], subdiv) for k in range(8)]

    def point(k, a, b):
        return lattice[k][(a, b)]

    def vid(k, a, b):
        kk = key(k, a, b)
        if kk not in index:
            index[kk] = len(pos)
            pos.append(point(k, a, b))
        return index[kk]

    def ekey(k, p, q):
        (a1, b1), (a2, b2) = sorted([p, q])
        if a1 + b1 == n and a2 + b2 == n:
            side, j = k, min(b1, b2)
            partner = PAIRING[side]
            return ("S", side, j) if side < partner else ("S", partner, n - 1 - j)
        if b1 == 0 and b2 == 0:
            return ("R", k, min(a1, a2))
        if a1 == 0 and a2 == 0:
            return ("R", (k + 1) % 8, min(b1, b2))
        return ("I", k, (a1, b1), (a2, b2))

    tris, lens, ekeys = [], [], []
    for k in range(8):
        for a in range(n):
            for b in range(n - a):
                cand = [((a, b), (a + 1, b), (a, b + 1))]
                if a + b + 2 <= n:
                    cand.append(((a + 1, b), (a + 1, b + 1), (a, b + 1)))
                for corners in cand:
                    tris.append([vid(k, *c) for c in corners])
                    xyz = [point(k, *c) for c in corners]
                    lens.append([klein_distance(xyz[(i + 1) % 3], xyz[(i + 2) % 3]) for i in range(3)])
                    ekeys.append([ekey(k, corners[(i + 1) % 3], corners[(i + 2) % 3]) for i in range(3)])
    edge_index: dict = {}
    tri_edges = np.empty((len(tris), 3), dtype=np.int64)
    for t, ks in enumerate(ekeys):
        for i, kk in enumerate(ks):
            tri_edges[t, i] = edge_index.setdefault(kk, len(edge_index))
    # triangles are counterclockwise by construction (P[k+1] follows P[k])
    return HyperbolicMesh(2, np.array(pos), np.array(tris, dtype=np.int64), np.array(lens), tri_edges,
                          len(edge_index))


def laplacian(m: HyperbolicMesh) -> LinearOperator:
    return LinearOperator(-m.stiffness(), m.mass, "laplacian")


def helmholtz(m: HyperbolicMesh, f) -> LinearOperator:
    """Weak form of T = f - Delta."""
    f = f.values if isinstance(f, ScalarField) else np.broadcast_to(np.asarray(f, dtype=float), (m.n_vertices,))
    return LinearOperator((sp.diags(f * m.mass) + m.stiffness()).tocsr(), m.mass, "helmholtz")


def curvature_of_conformal(m: HyperbolicMesh, u: ScalarField) -> ScalarField:
    """K(e^{2u} h) = e^{-2u}(-Delta u - 1) with h the K = -1 mesh metric."""
    lap = laplacian(m).apply(u)
    return ScalarField(np.exp(-2 * u.values) * (-lap - 1.0))


def total_curvature(m: HyperbolicMesh, u: ScalarField) -> float:
    """Integral of K(e^{2u}h) against the area form of e^{2u}h."""
    K = curvature_of_conformal(m, u).values
    return float(np.sum(K * np.exp(2 * u.values) * m.mass))


def solve_helmholtz(m: HyperbolicMesh, f: ScalarField, lam: ScalarField, tol: float = 1e-12,
                    x0: np.ndarray | None = None) -> ScalarField:
    """Solve f u - Delta u = lam by preconditioned CG on the weak form."""
    fv = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)
    if np.any(fv <= 0):
        raise PositivityError(f"f must be positive; min f = {fv.min():.3e}")
    T = helmholtz(m, fv)
    rhs = m.mass * lam.values
    prec = sp.diags(1.0 / T.matrix.diagonal())
    n = m.n_vertices
    u, info = spla.cg(T.matrix, rhs, x0=x0, rtol=tol, atol=0.0, M=prec, maxiter=10 * n)
    if info != 0:
        raise ConvergenceError(f"CG did not converge in {10 * n} iterations")
    return ScalarField(u)


def helmholtz_residual(m: HyperbolicMesh, f: ScalarField, lam: ScalarField, u: ScalarField) -> float:
    Tu = helmholtz(m, f.values).apply(u)
    return float(np.linalg.norm(Tu - lam.values) / np.linalg.norm(lam.values))


def _build_fans(m: HyperbolicMesh) -> list[FanChart]:
    """Unfold each one-ring with hyperbolic angles (exact for geodesic triangles)."""
    ang = hyperbolic_angles(m.tri_lengths)
    corners: list[list] = [[] for _ in range(m.n_vertices)]
    for t, tri in enumerate(m.triangles):
        for k in range(3):
            corners[tri[k]].append((t, k))
    fans = []
    for v, cs in enumerate(corners):
        # corner (t, k): edges toward corner k+1 ("first") and k+2 ("second")
        by_first = {}
        for t, k in cs:
            by_first.setdefault(m.triangle_edges[t, (k + 2) % 3], []).append((t, k))
        order = [cs[0]]
        used = {cs[0]}
        while len(order) < len(cs):
            t, k = order[-1]
            nxt = [c for c in by_first.get(m.triangle_edges[t, (k + 1) % 3], []) if c not in used]
            if len(nxt) != 1:
                raise MeshError(f"one-ring of vertex {v} is not a simple fan")
            order.append(nxt[0])
            used.add(nxt[0])
        total = sum(ang[t, k] for t, k in order)
        scale = 2 * np.pi / total
        theta = 0.0
        nb, ws = [], []
        for t, k in order:
            j = m.triangles[t, (k + 1) % 3]
            d = m.tri_lengths[t, (k + 2) % 3]
            nb.append(j)
            ws.append(2 * np.tanh(d / 2) * np.exp(1j * theta))
            theta += ang[t, k] * scale
        fans.append(FanChart(np.array(nb), np.array(ws)))
    return fans


@dataclass
class ChartDerivatives:
    """Sparse per-vertex first/second derivative operators in fan charts."""

    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    Dxx: sp.csr_matrix
    Dxy: sp.csr_matrix
    Dyy: sp.csr_matrix

    @property
    def Dz(self):
        return 0.5 * (self.Dx - 1j * self.Dy)

    @property
    def Dzz(self):
        return 0.25 * (self.Dxx - self.Dyy - 2j * self.Dxy)


def chart_derivatives(m: HyperbolicMesh) -> ChartDerivatives:
    """Least-squares quadratic fit over each one-ring."""
    if "chartd" in m._cache:
        return m._cache["chartd"]
    rows = [[] for _ in range(5)]
    cols = [[] for _ in range(5)]
    vals = [[] for _ in range(5)]
    for v, fan in enumerate(m.fan_charts()):
        x, y = fan.w.real, fan.w.imag
        A = np.stack([x, y, 0.5 * x * x, x * y, 0.5 * y * y], axis=-1)
        P = np.linalg.pinv(A)  # (5, k)
        for r in range(5):
            rows[r] += [v] * (len(fan.neighbors) + 1)
            cols[r] += list(fan.neighbors) + [v]
            vals[r] += list(P[r]) + [-P[r].sum()]
    n = m.n_vertices
    ops = [sp.coo_matrix((vals[r], (rows[r], cols[r])), shape=(n, n)).tocsr() for r in range(5)]
    out = ChartDerivatives(*ops)
    m._cache["chartd"] = out
    return out


# --- I/O ---

def write_mesh(m: HyperbolicMesh, obj_path, lengths_path) -> None:
    with open(obj_path, "w") as fh:
        fh.write(f"# genus {m.genus}\n")
        for x, y in m.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} 0.0\n")
        for a, b, c in m.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")
    with open(lengths_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face", "side", "edge", "length"])
        for t in range(len(m.triangles)):
            for k in range(3):
                w.writerow([t, k, int(m.triangle_edges[t, k]), repr(float(m.tri_lengths[t, k]))])


def read_mesh(obj_path, lengths_path) -> HyperbolicMesh:
    verts, faces, genus = [], [], None
    with open(obj_path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#" and len(parts) >= 3 and parts[1] == "genus":
                genus = int(parts[2])
            elif parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2])])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    faces = np.array(faces, dtype=np.int64)
    lens = np.zeros(faces.shape)
    tedges = np.zeros(faces.shape, dtype=np.int64)
    with open(lengths_path, newline="") as fh:
        for row in csv.DictReader(fh):
            t, k = int(row["face"]), int(row["side"])
            lens[t, k] = float(row["length"])
            tedges[t, k] = int(row["edge"])
    n_edges = len(np.unique(tedges))
    m = HyperbolicMesh(0, np.array(verts), faces, lens, tedges, n_edges)
    chi = m.euler_characteristic
    m.genus = genus if genus is not None else (2 - chi) // 2
    if m.genus < 2:
        raise MeshError("closed hyperbolic surfaces need genus >= 2")
    return m


def write_vertex_csv(path, field: ScalarField | np.ndarray, name: str = "value") -> None:
    vals = field.values if isinstance(field, ScalarField) else np.asarray(field)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", name])
        for i, x in enumerate(vals):
            w.writerow([i, repr(float(x))])


def read_vertex_csv(path) -> ScalarField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    vals = np.zeros(len(rows))
    for r in rows:
        vals[int(r[0])] = float(r[1])
    return ScalarField(vals)
