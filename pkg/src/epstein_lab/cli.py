"""Command-line runs that write certified outputs and a checksummed JSON manifest.

Every run compiles its flags into a single JSON config
``{"command", "out", "params", "seed"}``.  ``--config FILE`` supplies a
config document; flags given explicitly on the command line override it.
Manifests are written with sorted keys and two-space indentation so runs
diff cleanly.  The output directory is not echoed, so two runs of the same
config in different places produce identical manifests.

Exit status: 0 when every certificate passes, 1 when a certificate fails or
a pipeline stage raises, 2 for an invalid config.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import cmc, epstein as eps, foliation as fol, minimal as mini, surface as surf
from .geom import MoebiusTransform
from .schwarzian import ConformalMetric, Grid, HolomorphicMap, mobius_flat_deviation, schwarzian_values

log = logging.getLogger(__name__)

THREADS_ENV = "EPSTEIN_LAB_THREADS"


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"invalid config field '{field_name}': {msg}")
        self.field = field_name


# --- parameter schema ---

# command -> {param: (kind, default)}; kinds drive both parsing and validation
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "epstein-surface": {
        "metric": ("choice:flat,poincare", "flat"),
        "t": ("float", 0.0),
        "half_width": ("pos", 0.3),
        "n": ("int>=9", 81),
        "fd_tol": ("pos", 1e-3),
    },
    "cmc-foliate": {
        "backend": ("choice:homogeneous,mesh,disk", "homogeneous"),
        "phi_scale": ("nonneg", 0.0),
        "h_lo": ("float", -0.9),
        "h_hi": ("float", 0.9),
        "steps": ("int>=2", 19),
        "tol": ("pos", 1e-10),
        "subdiv": ("int>=1", 3),
        "n": ("int>=9", 61),
        "half_width": ("pos", 0.5),
        "fd_tol": ("pos", 2e-3),
    },
    "minimal-path": {
        "detq_scale": ("nonneg", 0.25),
        "s_list": ("floats", [0.01, 0.005, 0.0025]),
        "subdiv": ("int>=1", 3),
        "tol": ("pos", 1e-12),
        "min_exponent": ("pos", 1.99),
        "rel_tol": ("pos", 0.05),
    },
    "halfpipe-limit": {
        "t_list": ("floats", [0.05, 0.025, 0.0125, 0.00625]),
        "detq_scale": ("nonneg", 0.25),
        "s_list": ("floats", [0.01, 0.005, 0.0025]),
        "subdiv": ("int>=1", 3),
        "tol": ("pos", 1e-8),
    },
    "torus-critical": {
        "F": ("foliation", [1, 0, 1.0]),
        "G": ("foliation", [0, 1, 1.0]),
        "tau0": ("complex", [0.25, 1.25]),
        "gtol": ("pos", 1e-10),
        "cert_tol": ("pos", 1e-10),
    },
    "torus-line": {
        "F": ("foliation", [1, 0, 1.0]),
        "G": ("foliation", [0, 1, 1.0]),
        "t_grid": ("floats", [0.25, 0.5, 1.0, 2.0, 4.0]),
        "gtol": ("pos", 1e-10),
        "collinearity_tol": ("pos", 1e-6),
    },
    "flat-periods": {
        "surface": ("path", None),
        "cycles": ("path", None),
    },
    "selftest": {},
}

COMMANDS = tuple(SCHEMA)


def _check_value(name: str, kind: str, value):
    """Coerce a config value to its kind or raise ConfigError naming the field."""
    def num(x):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(name, f"expected a number, got {x!r}")
        if not np.isfinite(x):
            raise ConfigError(name, "must be finite")
        return float(x)

    if kind.startswith("choice:"):
        opts = kind.split(":", 1)[1].split(",")
        if value not in opts:
            raise ConfigError(name, f"must be one of {opts}, got {value!r}")
        return value
    if kind == "float":
        return num(value)
    if kind == "pos":
        v = num(value)
        if not v > 0:
            raise ConfigError(name, f"must be > 0, got {v!r}")
        return v
    if kind == "nonneg":
        v = num(value)
        if v < 0:
            raise ConfigError(name, f"must be >= 0, got {v!r}")
        return v
    if kind.startswith("int>="):
        lo = int(kind[5:])
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        if value < lo:
            raise ConfigError(name, f"must be >= {lo}, got {value}")
        return value
    if kind == "floats":
        if not isinstance(value, list) or not value:
            raise ConfigError(name, "expected a non-empty list of numbers")
        vals = [num(x) for x in value]
        if any(v <= 0 for v in vals):
            raise ConfigError(name, "entries must be > 0")
        if len(set(vals)) != len(vals):
            raise ConfigError(name, "entries must be distinct")
        return vals
    if kind == "complex":
        if not isinstance(value, list) or len(value) != 2:
            raise ConfigError(name, "expected [re, im]")
        re, im = num(value[0]), num(value[1])
        if not im > 0:
            raise ConfigError(name, "imaginary part must be > 0")
        return [re, im]
    if kind == "foliation":
        if not isinstance(value, list) or len(value) != 3:
            raise ConfigError(name, "expected [m, n, weight]")
        m, n = value[0], value[1]
        for x in (m, n):
            if isinstance(x, bool) or not isinstance(x, int):
                raise ConfigError(name, f"m and n must be integers, got {x!r}")
        if m == 0 and n == 0:
            raise ConfigError(name, "(m, n) must be nonzero")
        w = num(value[2])
        if not w > 0:
            raise ConfigError(name, "weight must be > 0")
        return [m, n, w]
    if kind == "path":
        if not isinstance(value, str) or not value:
            raise ConfigError(name, "a file path is required")
        return value
    raise AssertionError(kind)


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "run"

    @classmethod
    def from_dict(cls, obj) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        extra = set(obj) - {"command", "params", "seed", "out"}
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown top-level field")
        cmd = obj.get("command")
        if cmd not in SCHEMA:
            raise ConfigError("command", f"unknown command {cmd!r}")
        seed = obj.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
        out = obj.get("out", "run")
        if not isinstance(out, str) or not out:
            raise ConfigError("out", "must be a non-empty path")
        given = obj.get("params", {})
        if not isinstance(given, dict):
            raise ConfigError("params", "must be a JSON object")
        schema = SCHEMA[cmd]
        for k in given:
            if k not in schema:
                raise ConfigError(f"params.{k}", f"not a parameter of {cmd}")
        params = {}
        for k, (kind, default) in schema.items():
            v = given.get(k, default)
            if v is None:
                raise ConfigError(f"params.{k}", "is required")
            params[k] = _check_value(f"params.{k}", kind, v)
        cfg = cls(cmd, params, seed, out)
        cfg._check_ranges()
        return cfg

    def _check_ranges(self):
        p = self.params
        if self.command == "cmc-foliate":
            for k in ("h_lo", "h_hi"):
                if not -1 < p[k] < 1:
                    raise ConfigError(f"params.{k}", f"must lie in (-1, 1), got {p[k]!r}")
            if not p["h_lo"] < p["h_hi"]:
                raise ConfigError("params.h_hi", "must be greater than h_lo")
            if p["backend"] == "disk" and p["half_width"] >= 1 / np.sqrt(2):
                raise ConfigError("params.half_width", "patch must lie inside the unit disk")
        if self.command == "epstein-surface" and p["metric"] == "poincare" and p["half_width"] >= 1 / np.sqrt(2):
            raise ConfigError("params.half_width", "grid must lie inside the unit disk")
        if self.command in ("minimal-path", "halfpipe-limit"):
            if len(p["s_list"]) < 2:
                raise ConfigError("params.s_list", "need at least two positive steps")
        if self.command == "halfpipe-limit" and len(p["t_list"]) < 3:
            raise ConfigError("params.t_list", "need at least three samples")

    def to_dict(self, with_out: bool = True) -> dict:
        d = {"command": self.command, "params": dict(self.params), "seed": self.seed}
        if with_out:
            d["out"] = self.out
        return d


@dataclass
class RunManifest:
    config: dict
    version: str
    stages: list = field(default_factory=list)
    files: list = field(default_factory=list)
    wall_clock: float = 0.0  # reported on stderr, kept out of the written manifest

    @property
    def certified(self) -> bool:
        return all(s["passed"] for s in self.stages)

    def to_dict(self) -> dict:
        return {"certified": self.certified, "config": self.config, "files": self.files,
                "stages": self.stages, "version": self.version}


# --- helpers ---


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(THREADS_ENV, f"must be a positive integer, got {raw!r}")
    return n


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else repr(float(x))
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([cell(v) for v in r])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage(name: str, passed: bool, **metrics) -> dict:
    return {"name": name, "passed": bool(passed), **metrics}


# --- pipelines; each returns a list of stage records ---


def _epstein_surface(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    grid = Grid.square(0.0, p["half_width"], p["n"])
    if p["metric"] == "flat":
        s = ConformalMetric.flat(grid, p["t"])
    else:
        s = ConformalMetric.poincare_disk(grid, p["t"])
    e = eps.epstein_map(s)
    data = eps.fundamental_forms_fd(e)
    mask = e.interior_mask()
    Hf = eps.mean_curvature_formula(s)
    err = float(np.max(np.abs(data.mean_curvature[mask] - Hf[mask])))
    defect = float(np.max(np.abs(eps.defining_property_defect(e))))
    eps.write_surface_csv(out / "surface.csv", e, data)
    eps.write_obj(out / "surface.obj", e)
    return [
        _stage("immersion", bool(e.immersion)),
        _stage("defining_property", defect < 1e-9, max_defect=defect),
        _stage("mean_curvature", err < p["fd_tol"], formula_vs_fd=err,
               H_min=float(Hf[mask].min()), H_max=float(Hf[mask].max())),
    ]


def _cmc_problem(cfg: RunConfig):
    p = cfg.params
    if p["backend"] == "homogeneous":
        return cmc.CmcProblem.homogeneous(p["phi_scale"])
    if p["backend"] == "mesh":
        m = surf.build_genus2_octagon(p["subdiv"])
        rng = np.random.default_rng(cfg.seed)
        phi = p["phi_scale"] * (rng.standard_normal(m.n_vertices) + 1j * rng.standard_normal(m.n_vertices))
        return cmc.CmcProblem.on_mesh(m, phi)
    return cmc.CmcProblem.disk(p["half_width"], p["n"], p["phi_scale"])


def _cmc_foliate(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    prob = _cmc_problem(cfg)
    fam = cmc.continuation(prob, p["h_lo"], p["h_hi"], p["steps"], tol=p["tol"])
    res = [s.residual_norm for s in fam.solutions]
    stages = [_stage("continuation", max(res) < p["tol"], max_residual=max(res), leaves=len(res),
                     newton_iters=sum(s.newton_iters for s in fam.solutions))]
    rows = []
    if prob.backend == "disk":
        cmc.assemble_foliation(fam, raise_on_failure=False)
        for k, (s, c) in enumerate(zip(fam.solutions, fam.certificates)):
            rows.append([s.H, s.residual_norm, s.newton_iters, c.kmin, c.kmax, c.H_fd_error, c.separation])
            eps.write_obj(out / f"leaf_{k:03d}.obj", fam.leaves[k])
        certs = fam.certificates
        herr = max(c.H_fd_error for c in certs)
        seps = [c.separation for c in certs[1:]]
        stages.append(_stage("fd_mean_curvature", herr < p["fd_tol"], max_error=herr))
        stages.append(_stage("principal_curvatures", all(-1 < c.kmin and c.kmax < 1 for c in certs),
                             kmin=min(c.kmin for c in certs), kmax=max(c.kmax for c in certs)))
        stages.append(_stage("monotone_separation", all(s > 0 for s in seps), min_separation=min(seps)))
    else:
        for s in fam.solutions:
            rows.append([s.H, s.residual_norm, s.newton_iters, None, None, None, None])
    _write_csv(out / "leaves.csv", ["H", "residual", "newton_iters", "kmin", "kmax", "H_fd_error", "separation"],
               rows)
    return stages


def _gauss_run(p):
    m = surf.build_genus2_octagon(p["subdiv"])
    q = mini.TracelessField.synthetic(m, np.sqrt(p["detq_scale"]))
    return m, q, mini.gauss_path(m, q, p["s_list"], p.get("tol", 1e-12))


def _minimal_path(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    m, q, path = _gauss_run(p)
    pos = [pt for pt in path if pt.s > 0]
    rows = []
    for pt in path:
        fa = mini.forms_at_infinity(pt.immersion)
        rows.append([pt.s, float(np.max(np.abs(pt.u.values))), float(fa.Kstar.min()), float(fa.Kstar.max()),
                     float(np.sum(fa.Kstar * m.mass) / np.sum(m.mass)), pt.residual, pt.newton_iters])
    _write_csv(out / "path.csv", ["s", "u_inf", "Kstar_min", "Kstar_max", "Kstar_mean", "residual", "newton_iters"],
               rows)
    s = [pt.s for pt in pos]
    eu = mini.fit_exponent(s, [np.max(np.abs(pt.u.values)) for pt in pos])
    ek = mini.fit_exponent(s, [np.max(np.abs(mini.forms_at_infinity(pt.immersion).Kstar + 1)) for pt in pos])
    est = mini.first_order_schwarzian(path)
    target = -q.matrix
    rel = float(np.max(np.abs(est.dIIstar0 - target)) / np.max(np.abs(target)))
    report = {"u_exponent": eu, "Kstar_exponent": ek, "dIIstar0_relative_error": rel,
              "steps": list(est.steps), "dKstar_max": float(np.max(np.abs(est.dKstar)))}
    _dump_json(out / "extrapolation.json", report)
    return [
        _stage("gauss_newton", max(pt.residual for pt in path) < p["tol"],
               max_residual=max(pt.residual for pt in path)),
        _stage("u_exponent", eu >= p["min_exponent"], exponent=eu),
        _stage("Kstar_exponent", ek >= p["min_exponent"], exponent=ek),
        _stage("first_order_schwarzian", rel < p["rel_tol"], relative_error=rel),
    ]


def _halfpipe(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    A0 = mini.lorentz_sample(rng)
    w0, v0 = rng.standard_normal(3), rng.standard_normal(3)
    lim = mini.halfpipe_limit_holonomy(mini.synthetic_holonomy_path(A0, w0, v0, p["t_list"]))["gamma"]
    expect = np.zeros((4, 4))
    expect[:3, :3] = A0
    expect[3, :3] = v0
    expect[3, 3] = 1.0
    herr = float(np.max(np.abs(lim.matrix - expect)))
    _, q, path = _gauss_run(p)
    hp = mini.halfpipe_limit_immersion(path)
    qerr = float(np.max(np.abs(hp.II - q.matrix)))
    _dump_json(out / "halfpipe.json", {"holonomy_limit": lim.matrix, "holonomy_error": herr,
                                       "block_defect": lim.block_defect, "I_exponent": hp.I_exponent,
                                       "II_error": qerr})
    return [
        _stage("holonomy_limit", herr < p["tol"] and lim.block_defect < p["tol"], error=herr,
               block_defect=lim.block_defect),
        _stage("immersion_II", qerr < p["tol"], error=qerr),
        _stage("immersion_I", hp.I_exponent >= 1.99, exponent=hp.I_exponent),
    ]


def _foliation(v) -> fol.TorusFoliation:
    return fol.TorusFoliation(int(v[0]), int(v[1]), float(v[2]))


def _torus_critical(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    F, G = _foliation(p["F"]), _foliation(p["G"])
    cp = fol.critical_point(F, G, complex(*p["tau0"]), gtol=p["gtol"])
    tau = cp.point.tau
    _dump_json(out / "critical.json", {"tau": tau, "grad_norm": cp.grad_norm, "certificate": cp.certificate,
                                       "iterations": cp.iterations,
                                       "ext_F": fol.extremal_length(cp.point, F),
                                       "ext_G": fol.extremal_length(cp.point, G)})
    return [_stage("critical_point", cp.certificate < p["cert_tol"], tau=tau, certificate=cp.certificate,
                   iterations=cp.iterations)]


def _torus_line(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    F, G = _foliation(p["F"]), _foliation(p["G"])
    ts = sorted(p["t_grid"])

    def one(t):
        return fol.critical_point(F.scaled(np.sqrt(t)), G.scaled(1 / np.sqrt(t)), gtol=p["gtol"]).point.tau

    with ThreadPoolExecutor(max_workers=thread_cap()) as ex:
        taus = np.array(list(ex.map(one, ts)))
    geo = fol._fit_geodesic(taus)
    dist = fol.distance_to_geodesic(taus, geo)
    coll = float(np.max(dist))
    _write_csv(out / "line.csv", ["t", "tau_re", "tau_im", "distance_to_geodesic"],
               [[t, float(z.real), float(z.imag), float(d)] for t, z, d in zip(ts, taus, dist)])
    _dump_json(out / "line.json", {"geodesic": list(geo), "collinearity": coll, "metric_factor": 0.5})
    return [_stage("geodesic_collinearity", coll < p["collinearity_tol"], collinearity=coll)]


def _flat_periods(cfg: RunConfig, out: Path) -> list:
    p = cfg.params
    try:
        s = fol.FlatSurface.from_json(Path(p["surface"]).read_text())
    except OSError as exc:
        raise ConfigError("params.surface", str(exc)) from None
    try:
        cycles = json.loads(Path(p["cycles"]).read_text())
    except OSError as exc:
        raise ConfigError("params.cycles", str(exc)) from None
    per = fol.periods(s, cycles)
    _write_csv(out / "periods.csv", ["cycle", "re", "im"],
               [[k, float(z.real), float(z.imag)] for k, z in enumerate(per)])
    _dump_json(out / "surface_summary.json", {"genus": s.genus, "cone_angles": s.cone_angles(),
                                              "zero_orders": s.zero_orders(), "translation": s.is_translation})
    return [_stage("stratum", s.check_stratum(), genus=s.genus),
            _stage("periods", bool(np.all(np.isfinite(per))), count=len(per))]


# selftest: small, fast checks of every module


def _st_schwarzian(rng):
    a, b, c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    d = (1 + b * c) / a
    g = Grid.square(0.0, 0.3, 41)
    mob = HolomorphicMap.moebius(MoebiusTransform(a, b, c, d))
    s_err = float(np.max(np.abs(schwarzian_values(mob, g.z))))
    B = float(np.max(np.abs(mobius_flat_deviation(ConformalMetric.poincare_disk(g)).lam[4:-4, 4:-4])))
    return [_stage("schwarzian_moebius", s_err < 1e-9, max_abs=s_err),
            _stage("B_poincare", B < 1e-6, max_abs=B)]


def _st_epstein(rng):
    g = Grid.square(0.0, 0.5, 41)
    e = eps.epstein_map(ConformalMetric.flat(g))
    H = eps.fundamental_forms_fd(e).mean_curvature[e.interior_mask()]
    err = float(np.max(np.abs(H + 1)))
    return [_stage("horosphere", err < 1e-6, fd_error=err)]


def _st_cmc(rng):
    prob = cmc.CmcProblem.homogeneous(0.0)
    fam = cmc.continuation(prob, -0.9, 0.9, 19)
    r = max(s.residual_norm for s in fam.solutions)
    return [_stage("cmc_homogeneous", r < 1e-12, max_residual=r)]


def _st_surface(rng):
    m = surf.build_genus2_octagon(2)
    f = surf.ScalarField(1.0 + rng.uniform(0, 1, m.n_vertices))
    lam = surf.ScalarField(rng.standard_normal(m.n_vertices))
    u = surf.solve_helmholtz(m, f, lam)
    r = surf.helmholtz_residual(m, f, lam, u)
    return [_stage("helmholtz", r < 1e-10, residual=r, chi=m.euler_characteristic)]


def _st_minimal(rng):
    c = -float(rng.uniform(0.1, 0.5))
    q = mini.TracelessField(np.array([np.sqrt(-c)]), np.array([0.0]))
    pt = mini.solve_gauss_equation(None, q, 0.1)
    err = abs(float(pt.u.values[0]) - mini.gauss_scalar_oracle(c, 0.1))
    A0 = mini.lorentz_sample(rng)
    w0, v0 = rng.standard_normal(3), rng.standard_normal(3)
    lim = mini.halfpipe_limit_holonomy(mini.synthetic_holonomy_path(A0, w0, v0, [0.1, 0.05, 0.025, 0.0125]))["gamma"]
    return [_stage("gauss_scalar", err < 1e-12, error=err),
            _stage("halfpipe_holonomy", lim.block_defect < 1e-8, block_defect=lim.block_defect)]


def _st_torus(rng):
    cp = fol.critical_point(fol.TorusFoliation(1, 0), fol.TorusFoliation(0, 1))
    err = abs(cp.point.tau - 1j)
    return [_stage("torus_critical", err < 1e-8, error=err)]


SELFTEST = (_st_schwarzian, _st_epstein, _st_surface, _st_cmc, _st_minimal, _st_torus)


def _selftest(cfg: RunConfig, out: Path) -> list:
    # one child generator per check so results do not depend on scheduling
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(SELFTEST))

    def one(fs):
        fn, seed = fs
        try:
            return fn(np.random.default_rng(seed))
        except Exception as exc:
            return [_stage(fn.__name__[4:], False, error=f"{type(exc).__name__}: {exc}")]

    with ThreadPoolExecutor(max_workers=thread_cap()) as ex:
        results = list(ex.map(one, zip(SELFTEST, seeds)))
    stages = [s for r in results for s in r]
    _write_csv(out / "selftest.csv", ["stage", "passed"], [[s["name"], int(s["passed"])] for s in stages])
    return stages


PIPELINES = {
    "epstein-surface": _epstein_surface,
    "cmc-foliate": _cmc_foliate,
    "minimal-path": _minimal_path,
    "halfpipe-limit": _halfpipe,
    "torus-critical": _torus_critical,
    "torus-line": _torus_line,
    "flat-periods": _flat_periods,
    "selftest": _selftest,
}


def run(cfg: RunConfig) -> RunManifest:
    """Execute the pipeline, write outputs and manifest.json into cfg.out."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.to_dict(with_out=False), __version__)
    t0 = time.perf_counter()
    try:
        man.stages = PIPELINES[cfg.command](cfg, out)
    except ConfigError:
        raise
    except Exception as exc:
        log.debug("pipeline error", exc_info=True)
        msg = f"{type(exc).__name__}: {exc}"
        print(f"error: stage '{cfg.command}' failed: {msg}", file=sys.stderr)
        man.stages = [_stage(cfg.command, False, error=msg)]
    man.wall_clock = time.perf_counter() - t0
    _dump_json(out / "config.json", cfg.to_dict(with_out=False))
    names = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    man.files = [{"path": n, "sha256": _sha256(out / n), "bytes": (out / n).stat().st_size} for n in names]
    _dump_json(out / "manifest.json", man.to_dict())
    return man


# --- argument parsing ---

FLAG_HELP = {
    "metric": "boundary metric", "t": "log-scale of the metric", "half_width": "chart half-width",
    "n": "grid points per side", "fd_tol": "FD mean-curvature tolerance", "backend": "discretization",
    "phi_scale": "size of the quadratic differential", "h_lo": "lowest H", "h_hi": "highest H",
    "steps": "number of leaves", "tol": "residual tolerance", "subdiv": "mesh subdivision level",
    "detq_scale": "|det Re q| of the test load", "s_list": "positive path parameters",
    "min_exponent": "minimal accepted fit exponent", "rel_tol": "relative tolerance",
    "t_list": "half-pipe parameters", "F": "foliation m n weight", "G": "foliation m n weight",
    "tau0": "start point re im", "gtol": "gradient tolerance", "cert_tol": "|q^F + q^G| tolerance",
    "t_grid": "scaling parameters", "collinearity_tol": "hyperbolic distance tolerance",
    "surface": "flat surface JSON", "cycles": "cycle list JSON",
}


def _add_flag(sp, name: str, kind: str):
    flag = "--" + name.replace("_", "-")
    kw = {"dest": name, "default": None, "help": FLAG_HELP.get(name)}
    if kind.startswith("choice:"):
        sp.add_argument(flag, choices=kind.split(":", 1)[1].split(","), **kw)
    elif kind in ("float", "pos", "nonneg"):
        sp.add_argument(flag, type=float, **kw)
    elif kind.startswith("int"):
        sp.add_argument(flag, type=int, **kw)
    elif kind == "floats":
        sp.add_argument(flag, type=float, nargs="+", **kw)
    elif kind == "complex":
        sp.add_argument(flag, type=float, nargs=2, metavar=("RE", "IM"), **kw)
    elif kind == "foliation":
        sp.add_argument(flag, nargs=3, metavar=("M", "N", "W"), **kw)
    else:
        sp.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epstein-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd, schema in SCHEMA.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="JSON config; explicit flags override it")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
        for name, (kind, _) in schema.items():
            _add_flag(sp, name, kind)
    return ap


def _foliation_flag(name, vals):
    try:
        return [int(vals[0]), int(vals[1]), float(vals[2])]
    except ValueError:
        raise ConfigError(f"params.{name}", f"expected integers m n and a number weight, got {vals}") from None


def compile_config(ns: argparse.Namespace) -> RunConfig:
    """Merge the --config document with explicit flags and validate."""
    obj = {"command": ns.command}
    if ns.config:
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"not valid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        if loaded.get("command", ns.command) != ns.command:
            raise ConfigError("command", f"config is for {loaded.get('command')!r}, not {ns.command!r}")
        obj.update(loaded)
    params = dict(obj.get("params") or {}) if isinstance(obj.get("params", {}), dict) else obj.get("params")
    if isinstance(params, dict):
        for name, (kind, _) in SCHEMA[ns.command].items():
            v = getattr(ns, name, None)
            if v is None:
                continue
            params[name] = _foliation_flag(name, v) if kind == "foliation" else v
        obj["params"] = params
    if ns.seed is not None:
        obj["seed"] = ns.seed
    if ns.out is not None:
        obj["out"] = ns.out
    obj.setdefault("out", f"run-{ns.command}")
    return RunConfig.from_dict(obj)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = compile_config(ns)
        thread_cap()
        man = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for s in man.stages:
        print(f"{'PASS' if s['passed'] else 'FAIL'} {s['name']}")
    print(f"wall-clock {man.wall_clock:.3f} s; manifest {Path(cfg.out) / 'manifest.json'}", file=sys.stderr)
    return 0 if man.certified else 1


def _entry(cmd: str):
    def f() -> int:
        return main([cmd] + sys.argv[1:])
    return f


epstein_surface = _entry("epstein-surface")
cmc_foliate = _entry("cmc-foliate")
minimal_path = _entry("minimal-path")
halfpipe_limit = _entry("halfpipe-limit")
torus_critical = _entry("torus-critical")
torus_line = _entry("torus-line")
flat_periods = _entry("flat-periods")
selftest = _entry("selftest")


if __name__ == "__main__":
    sys.exit(main())
