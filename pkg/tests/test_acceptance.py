"""Acceptance criteria, each at its stated tolerance.

Run under pytest (a summary line per criterion is printed at the end of the
session) or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from epstein_lab import cli, cmc, epstein as eps, foliation as fol, minimal as mini, surface as surf
from epstein_lab.geom import MoebiusTransform
from epstein_lab.schwarzian import (ConformalMetric, Grid, HolomorphicMap, QuadDifferential, mobius_flat_deviation,
                                    pullback_metric, pullback_qd, qd_norm, schwarzian_tensor, schwarzian_values)

RESULTS: dict[int, tuple[bool, str]] = {}


def _record(n: int, checks: dict[str, tuple[float, float]]) -> tuple[bool, str]:
    """checks: name -> (value, bound); passes when every value < bound."""
    ok = all(v < b for v, b in checks.values())
    detail = "; ".join(f"{k} {v:.2e} (< {b:.0e})" for k, (v, b) in checks.items())
    RESULTS[n] = (ok, detail)
    return ok, detail


def _flag(n: int, ok: bool, detail: str) -> tuple[bool, str]:
    RESULTS[n] = (bool(ok), detail)
    return bool(ok), detail


# 1. horosphere identity

def criterion_1():
    g = Grid.square(0.0, 0.5, 41)
    s = ConformalMetric.flat(g)
    e = eps.epstein_map(s)
    mask = e.interior_mask()
    Hf = eps.mean_curvature_formula(s)
    Hfd = eps.fundamental_forms_fd(e).mean_curvature[mask]
    return _record(1, {
        "height-2 plane": (float(np.max(np.abs(e.t - 2.0)) + np.max(np.abs(e.z - g.z))), 1e-12),
        "formula H+1": (float(np.max(np.abs(Hf + 1))), 1e-12),
        "FD H+1": (float(np.max(np.abs(Hfd + 1))), 1e-6),
        "visual-metric defect": (float(np.max(np.abs(eps.defining_property_defect(e)))), 1e-12),
    })


# 2. Fuchsian umbilical family

def criterion_2():
    g = Grid.square(0.0, 0.3, 81)
    worst_tanh, worst_fd, signs = 0.0, 0.0, set()
    for t in (0.1, 0.5, 1.0):
        s = ConformalMetric.poincare_disk(g, t)
        e = eps.epstein_map(s)
        mask = e.interior_mask()
        Hf = eps.mean_curvature_formula(s)[mask]
        Hfd = eps.fundamental_forms_fd(e).mean_curvature[mask]
        worst_tanh = max(worst_tanh, float(np.max(np.abs(np.abs(Hf) - np.tanh(t)))))
        worst_fd = max(worst_fd, float(np.max(np.abs(Hf - Hfd))))
        signs |= set(np.sign(np.concatenate([Hf, Hfd])).tolist())
    ok, detail = _record(2, {"||H|-tanh t|": (worst_tanh, 1e-6), "formula vs FD": (worst_fd, 1e-3)})
    return _flag(2, ok and len(signs) == 1, detail + f"; signs {sorted(signs)}")


# 3. anchor identity on all three backends

def criterion_3():
    Hs = np.linspace(-1, 1, 21)
    out = {}
    m = surf.build_genus2_octagon(3)
    for name, p, bound in (("homogeneous", cmc.CmcProblem.homogeneous(0.0), 1e-14),
                           ("disk", cmc.CmcProblem.disk(0.5, 41, 0.0), 1e-14),
                           ("mesh", cmc.CmcProblem.on_mesh(m, 0.0), 1e-10)):
        r = max(float(np.max(np.abs(cmc.residual_G(p, H, p.zero()).values))) for H in Hs)
        out[name] = (r, bound)
    return _record(3, out)


# 4. linearization

def criterion_4():
    m = surf.build_genus2_octagon(3)
    p0 = cmc.CmcProblem.on_mesh(m, 0.0)
    target = 2 * surf.helmholtz(m, 2.0 * np.ones(m.n_vertices)).matrix
    L = cmc.linearize_G(p0, -1.0, p0.zero())
    weak_err = float(abs(L.matrix - target).max())
    strong_err = float(abs(L.strong() - 2 * (2 * np.eye(m.n_vertices) - surf.laplacian(m).strong().toarray())).max())
    rng = np.random.default_rng(4)
    phi = 0.05 * (rng.standard_normal(m.n_vertices) + 1j * rng.standard_normal(m.n_vertices))
    p = cmc.CmcProblem.on_mesh(m, phi)
    worst = 0.0
    for _ in range(5):
        H = float(rng.uniform(-0.8, 0.8))
        v = surf.ScalarField(0.05 * rng.standard_normal(m.n_vertices))
        w = rng.standard_normal(m.n_vertices)
        eps_ = 1e-6
        Gp = cmc.residual_G(p, H, surf.ScalarField(v.values + eps_ * w)).values
        Gm = cmc.residual_G(p, H, surf.ScalarField(v.values - eps_ * w)).values
        fd = (Gp - Gm) / (2 * eps_)
        Jw = cmc.linearize_G(p, H, v).apply(w)
        worst = max(worst, float(np.max(np.abs(fd - Jw)) / np.max(np.abs(Jw))))
    return _record(4, {"weak vs 2(2M+W)": (weak_err, 1e-12), "strong vs 2(2id-Lap)": (strong_err, 1e-12),
                       "directional FD": (worst, 1e-5)})


# 5. continuation on the disk patch

def criterion_5():
    p = cmc.CmcProblem.disk(0.5, 61, 0.01)
    fam = cmc.continuation(p, -0.9, 0.9, 19, tol=1e-10)
    cmc.assemble_foliation(fam, raise_on_failure=False)
    c = fam.certificates
    res = max(s.residual_norm for s in fam.solutions)
    herr = max(x.H_fd_error for x in c)
    kmin, kmax = min(x.kmin for x in c), max(x.kmax for x in c)
    seps = [x.separation for x in c[1:]]
    ok, detail = _record(5, {"Newton residual": (res, 1e-8), "FD H error": (herr, 2e-3)})
    ok = ok and -1 < kmin and kmax < 1 and min(seps) > 0
    return _flag(5, ok, detail + f"; k in [{kmin:.4f}, {kmax:.4f}]; min separation {min(seps):.4f}")


# 6. Gauss path

def _gauss_path():
    m = surf.build_genus2_octagon(3)
    q = mini.TracelessField.synthetic(m, 0.5)
    return m, q, mini.gauss_path(m, q, [1e-2, 5e-3, 2.5e-3])


def criterion_6():
    m, q, path = _gauss_path()
    pos = [pt for pt in path if pt.s > 0]
    s = [pt.s for pt in pos]
    eu = mini.fit_exponent(s, [np.max(np.abs(pt.u.values)) for pt in pos])
    ek = mini.fit_exponent(s, [np.max(np.abs(mini.forms_at_infinity(pt.immersion).Kstar + 1)) for pt in pos])
    est = mini.first_order_schwarzian(path)
    rel = float(np.max(np.abs(est.dIIstar0 + q.matrix)) / np.max(np.abs(q.matrix)))
    ok = eu >= 2 and ek >= 2 and rel < 0.05
    return _flag(6, ok, f"u exponent {eu:.5f} (>= 2); K*+1 exponent {ek:.5f} (>= 2); "
                        f"d(II*)0/ds vs -Re q {rel:.2e} (< 5e-02)")


# 7. half-pipe limits

def criterion_7():
    rng = np.random.default_rng(7)
    A0 = mini.lorentz_sample(rng)
    w0, v0 = rng.standard_normal(3), rng.standard_normal(3)
    lim = mini.halfpipe_limit_holonomy(mini.synthetic_holonomy_path(A0, w0, v0, [0.1, 0.05, 0.025, 0.0125]))
    M = lim["gamma"].matrix
    expect = np.zeros((4, 4))
    expect[:3, :3], expect[3, :3], expect[3, 3] = A0, v0, 1.0
    herr = float(np.max(np.abs(M - expect)))
    _, q, path = _gauss_path()
    hp = mini.halfpipe_limit_immersion(path)
    Ierr = float(np.max(np.abs(hp.I - np.eye(2))))
    IIerr = float(np.max(np.abs(hp.II - q.matrix)))
    ok, detail = _record(7, {"holonomy limit": (herr, 1e-8), "II_t/t": (IIerr, 1e-12), "lim I_t - h": (Ierr, 1e-8)})
    return _flag(7, ok and hp.I_exponent >= 1.99, detail + f"; I_t - h exponent {hp.I_exponent:.5f} (>= 1.99)")


# 8. Schwarzian suite

def _compose(f: HolomorphicMap, g: HolomorphicMap) -> HolomorphicMap:
    def d(z, k):
        gz = g.f(z)
        g1, g2, g3 = (g.derivative(z, j) for j in (1, 2, 3))
        f1, f2, f3 = (f.derivative(gz, j) for j in (1, 2, 3))
        return (f1 * g1, f2 * g1**2 + f1 * g2, f3 * g1**3 + 3 * f2 * g1 * g2 + f1 * g3)[k - 1]

    return HolomorphicMap(lambda z: f.f(g.f(z)), lambda z: d(z, 1), lambda z: d(z, 2), lambda z: d(z, 3))


def _moebius_away(rng, z, margin=0.5):
    while True:
        m = MoebiusTransform.random(rng, 0.4)
        if m.c == 0 or np.min(np.abs(z + m.d / m.c)) > margin:
            return m


def criterion_8():
    rng = np.random.default_rng(8)
    g = Grid.square(0.0, 0.3, 161)
    mask = g.interior_mask()
    z = g.z
    S_mob = max(float(np.max(np.abs(schwarzian_values(HolomorphicMap.moebius(_moebius_away(rng, z)), z))))
                for _ in range(5))
    f = HolomorphicMap.exp_map(0.7 + 0.3j)
    coc = 0.0
    for _ in range(5):
        gm = HolomorphicMap.moebius(_moebius_away(rng, z))
        lhs = schwarzian_values(_compose(f, gm), z)
        rhs = schwarzian_values(f, gm.f(z)) * gm.derivative(z, 1) ** 2 + schwarzian_values(gm, z)
        coc = max(coc, float(np.max(np.abs(lhs - rhs))))
    Bp = mobius_flat_deviation(ConformalMetric.poincare_disk(g)).max_abs()
    # random smooth metric
    c = rng.standard_normal(4)
    x, y = z.real, z.imag
    s = ConformalMetric(g, c[0] * x**2 + c[1] * x * y + c[2] * np.sin(y) + c[3] * x)
    scale = float(np.max(np.abs((mobius_flat_deviation(s.scaled(0.7)).lam - mobius_flat_deviation(s).lam)[mask])))
    phi = QuadDifferential(g, np.exp(z) + z**2, holomorphic=True)
    n0, n1 = qd_norm(phi, s), qd_norm(phi, s.scaled(0.3))
    norm_scale = float(np.max(np.abs(n1 - np.exp(-0.6) * n0) / n0))
    # naturality of the norm under a Moebius pullback, with analytic sigma and phi
    eta_fn = lambda w: 0.5 * np.abs(w) ** 2
    lam_fn = lambda w: np.exp(w) + w**2
    mob = HolomorphicMap.moebius(_moebius_away(rng, z))
    lhs = np.exp(-2 * pullback_metric(mob, eta_fn, z)) * np.abs(pullback_qd(mob, lam_fn, z))
    rhs = np.exp(-2 * eta_fn(mob.f(z))) * np.abs(lam_fn(mob.f(z)))
    natural = float(np.max(np.abs(lhs - rhs)))
    # B(f* sigma) = f* B(sigma): B(sigma) = -(conj w / 2)^2 dw^2 for eta = |w|^2 / 2
    Bpull = mobius_flat_deviation(ConformalMetric(g, pullback_metric(mob, eta_fn, z))).lam
    Bnat = -0.25 * np.conj(mob.f(z)) ** 2 * mob.derivative(z, 1) ** 2
    Bmob = float(np.max(np.abs((Bpull - Bnat)[mask])))
    # S(f) = 2 B(|dz|^2, f*|dz|^2)
    flat = ConformalMetric.flat(g)
    pulled = ConformalMetric(g, np.log(np.abs(f.derivative(z, 1))))
    SB = float(np.max(np.abs((schwarzian_values(f, z) - 2 * schwarzian_tensor(flat, pulled).lam)[mask])))
    return _record(8, {"S(Moebius)": (S_mob, 1e-9), "cocycle": (coc, 1e-7), "B(Poincare)": (Bp, 1e-8),
                       "B scale": (scale, 1e-10), "norm scale": (norm_scale, 1e-12),
                       "norm naturality": (natural, 1e-8), "B Moebius": (Bmob, 1e-6), "S = 2B": (SB, 1e-6)})


# 9. torus suite

def criterion_9():
    rng = np.random.default_rng(9)
    ext_err, grad_err = 0.0, 0.0
    for _ in range(10):
        p = fol.TorusPoint(complex(rng.uniform(-1, 1), rng.uniform(0.5, 2)))
        F = fol.TorusFoliation(int(rng.integers(-5, 6)) or 1, int(rng.integers(-5, 6)), float(rng.uniform(0.5, 2)))
        e = fol.extremal_length(p, F)
        ext_err = max(ext_err, abs(e - fol.extremal_length_oracle(p, F)) / e)
        h = 1e-6
        dx = (fol.extremal_length(fol.TorusPoint(p.tau + h), F) - fol.extremal_length(fol.TorusPoint(p.tau - h), F))
        dy = (fol.extremal_length(fol.TorusPoint(p.tau + 1j * h), F)
              - fol.extremal_length(fol.TorusPoint(p.tau - 1j * h), F))
        fd = complex(dx, dy) / (2 * h)
        grad_err = max(grad_err, abs(np.conj(fol.gardiner_gradient(p, F)) - fd) / abs(fd))
    cp = fol.critical_point(fol.TorusFoliation(1, 0), fol.TorusFoliation(0, 1))
    F, G = fol.TorusFoliation(2, 1, 1.3), fol.TorusFoliation(-1, 3, 0.7)
    scal = abs(fol.critical_point(F, G).point.tau - fol.critical_point(F.scaled(2), G.scaled(2)).point.tau)
    line = fol.teich_line(F, G, [0.25, 0.5, 1.0, 2.0, 4.0])
    # filling: every simple class meets F or G
    fill = np.inf
    for FF, GG in (((1, 0), (0, 1)), ((2, 1), (-1, 3))):
        Fo, Go = fol.TorusFoliation(*FF), fol.TorusFoliation(*GG)
        pt = fol.critical_point(Fo, Go).point
        cF, cG = fol.hm_section_torus(pt, Fo), fol.hm_section_torus(pt, Go)
        for a in range(-20, 21):
            for b in range(-20, 21):
                if (a, b) != (0, 0):
                    fill = min(fill, fol.intersection_number((pt, cF), (a, b)) +
                               fol.intersection_number((pt, cG), (a, b)))
    ok, detail = _record(9, {"ext vs oracle": (ext_err, 1e-10), "Gardiner vs FD": (grad_err, 1e-6),
                             "tau* - i": (abs(cp.point.tau - 1j), 1e-8), "q^F + q^G": (cp.certificate, 1e-10),
                             "p(2F,2G) - p(F,G)": (scal, 1e-8), "collinearity": (line.collinearity, 1e-6)})
    return _flag(9, ok and fill > 0, detail + f"; min filling sum {fill:.3f} (> 0)")


# 10. mesh convergence

def criterion_10():
    rng = np.random.default_rng(10)
    area_err, curv_err, hres = [], [], 0.0
    for k in (3, 4, 5):
        m = surf.build_genus2_octagon(k)
        area_err.append(abs(m.total_area - 4 * np.pi))
        curv_err.append(abs(surf.total_curvature(m, surf.ScalarField(np.zeros(m.n_vertices))) + 4 * np.pi))
        f = surf.ScalarField(1 + rng.uniform(0, 1, m.n_vertices))
        lam = surf.ScalarField(rng.standard_normal(m.n_vertices))
        hres = max(hres, surf.helmholtz_residual(m, f, lam, surf.solve_helmholtz(m, f, lam)))
    ratios = [a / b for e in (area_err, curv_err) for a, b in zip(e, e[1:])]
    ok = min(ratios) >= 2 and hres < 1e-10
    return _flag(10, ok, f"area errors {', '.join(f'{e:.2e}' for e in area_err)}; "
                         f"curvature errors {', '.join(f'{e:.2e}' for e in curv_err)}; "
                         f"min ratio {min(ratios):.2f} (>= 2); Helmholtz residual {hres:.2e} (< 1e-10)")


# 11. determinism

def criterion_11():
    with tempfile.TemporaryDirectory() as d:
        outs = []
        for k in range(2):
            o = Path(d) / f"run{k}"
            rc = cli.main(["selftest", "--seed", "11", "--out", str(o)])
            outs.append((rc, {f.name: f.read_bytes() for f in sorted(o.iterdir())}))
    (rc0, a), (rc1, b) = outs
    ok = rc0 == 0 and rc1 == 0 and a == b
    return _flag(11, ok, f"exit codes {rc0}, {rc1}; identical files {sorted(a) if a == b else 'no'}")


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 12)}


@pytest.mark.parametrize("n", list(CRITERIA))
def test_criterion(n):
    ok, detail = CRITERIA[n]()
    assert ok, f"criterion {n}: {detail}"


def summary_lines() -> list[str]:
    return [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}" for n, (ok, detail) in sorted(RESULTS.items())]


if __name__ == "__main__":
    failed = 0
    for n, fn in CRITERIA.items():
        try:
            ok, _ = fn()
        except Exception as exc:  # report and keep going
            RESULTS[n] = (False, f"{type(exc).__name__}: {exc}")
            ok = False
        failed += not ok
        ok, detail = RESULTS[n]
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
