"""Configuration-driven experiment runner.

A config is one flat JSON document naming the domain, tensor, mesh, time
grid, mollifier widths, source points and the suites to run.  ``run``
executes the suites in dependency order.  It writes ``report.json`` plus
CSV data and returns the report.  A failing suite is recorded and the run
moves on to the next one.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assembly import assemble, estimate_constants, load_vector, solve_static
from .domain import PolygonalDomain, Mesh, l_shape, refine, triangulate, unit_square
from .elasticity import make_lame_tensor, read_tensor_spec
from .green import (InsufficientRange, build_green, green_bounds, green_symmetry,
                    spectral_gap, static_crosscheck, write_green_csv)
from .kernel import (EstimateReport, boundary_distance, build_kernel_field, diagonal_slope,
                     estimate_suite, flat_tail, gaussian_fit, holder_probe, initial_trace,
                     mesh_diameter, symmetry_check, write_kernel_samples)
from .parabolic import (TimeGrid, decay_rate, rigid_moments, step_parabolic,
                        write_energy_csv, write_trajectory_csv)

SCHEMA_VERSION = 1
SUITES = ("korn", "parabolic", "kernel", "gaussian", "holder", "green")
OUT_ENV = "ELASTOKERNEL_OUT"
TIMING_KEYS = ("timing", "seconds")


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


# --------------------------------------------------------------------------
# config

@dataclass
class ExperimentConfig:
    domain: dict
    tensor: dict
    mesh: dict
    time: dict
    eps: list
    sources: list
    suites: list
    probes: list = field(default_factory=list)
    seed: int = 0
    solver: str = "direct"
    output: str | None = None
    options: dict = field(default_factory=dict)
    base_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        missing = [k for k in ("domain", "tensor", "mesh") if k not in d]
        if missing:
            raise ConfigError(f"config lacks {missing}")
        suites = list(d.get("suites", []))
        bad = [s for s in suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites {bad}")
        if len(set(suites)) != len(suites):
            raise ConfigError("suite listed twice")
        cfg = cls(domain=d["domain"], tensor=d["tensor"], mesh=dict(d["mesh"]),
                  time=dict(d.get("time", {})), eps=list(d.get("eps", [])),
                  sources=[list(map(float, y)) for y in d.get("sources", [])],
                  suites=suites, probes=[list(map(float, p)) for p in d.get("probes", [])],
                  seed=int(d.get("seed", 0)), solver=d.get("solver", "direct"),
                  output=d.get("output"), options=dict(d.get("options", {})),
                  base_dir=str(base_dir), raw=d)
        if "target_h" not in cfg.mesh:
            raise ConfigError("mesh.target_h is required")
        if cfg.solver not in ("cg", "direct"):
            raise ConfigError(f"unknown solver {cfg.solver!r}")
        needs_source = {"kernel", "gaussian", "green"} & set(suites)
        if needs_source and not (cfg.sources and cfg.eps):
            raise ConfigError(f"suites {sorted(needs_source)} need sources and eps")
        for key in ("domain", "tensor"):
            spec = getattr(cfg, key)
            if isinstance(spec, dict) and "file" in spec and not cfg.path(spec["file"]).exists():
                raise ConfigError(f"{key} file {spec['file']} not found")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            bundled = resources.files("elastokernel") / "configs" / path.name
            if not bundled.is_file():
                raise ConfigError(f"config {path} not found")
            return cls.from_dict(json.loads(bundled.read_text()), ".")
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def digest(self) -> str:
        raw = {k: v for k, v in self.raw.items() if k != "output"}
        return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()

    def opt(self, suite: str, key: str, default=None):
        return self.options.get(suite, {}).get(key, default)


def parse_domain(spec, base_dir=".") -> PolygonalDomain | Mesh:
    """Domain from a config entry: a dict, a named shape or a JSON file."""
    if isinstance(spec, str):
        name, _, labels = spec.partition(":")
        if name == "unit_square":
            return unit_square(tuple(labels) if labels else ("D",) * 4)
        if name == "l_shape":
            return l_shape(labels or "D")
        p = Path(spec) if Path(spec).is_absolute() else Path(base_dir) / spec
        if not p.exists():
            raise ConfigError(f"unknown domain {spec!r}")
        if p.suffix == ".mesh":
            return Mesh.read(p)
        d = json.loads(p.read_text())
        return parse_domain(d.get("domain", d), p.parent)
    kind = spec.get("kind")
    if "file" in spec:
        return parse_domain(str(spec["file"]), base_dir)
    if kind == "unit_square":
        return unit_square(tuple(spec.get("labels", "DDDD")), bool(spec.get("centered", False)))
    if kind == "l_shape":
        return l_shape(spec.get("label", "D"))
    if kind == "polygon":
        return PolygonalDomain(np.asarray(spec["outer"], dtype=float),
                               tuple(np.asarray(h, dtype=float) for h in spec.get("holes", [])),
                               tuple(spec.get("labels", ())))
    raise ConfigError(f"unknown domain kind {kind!r}")


def parse_tensor(spec, mesh, base_dir="."):
    if isinstance(spec, str):
        return read_tensor_spec(spec, mesh)
    if "file" in spec:
        p = Path(spec["file"])
        p = p if p.is_absolute() else Path(base_dir) / p
        return read_tensor_spec(p.read_text(), mesh)
    if spec.get("kind") == "lame":
        return make_lame_tensor(float(spec["mu"]), float(spec["lambda"]))
    raise ConfigError(f"unknown tensor spec {spec!r}")


# --------------------------------------------------------------------------
# serialization

def _clean(o):
    if isinstance(o, EstimateReport):
        return _clean(o.to_dict())
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return float(o)
    return o


def dumps(obj, indent: int = 1) -> str:
    """JSON with every float written as ``%.17g``; non-finite floats become null."""
    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            return "%.17g" % o if math.isfinite(o) else "null"
        if isinstance(o, (int, str)):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if not o:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
            return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
        return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
    return enc(_clean(obj), 0) + "\n"


def strip_timing(obj):
    """Copy of a report without timing fields."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# suites

@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    jobs: int
    domain: object = None
    mesh: Mesh = None
    op: object = None
    state: dict = field(default_factory=dict)

    @property
    def rng(self):
        return np.random.default_rng(self.cfg.seed)

    def kernel_field(self):
        if "kernel_field" not in self.state:
            cfg = self.cfg
            y = cfg.sources[0]
            d_y = float(boundary_distance(self.mesh, np.asarray([y]))[0])
            r_ladder = cfg.opt("kernel", "r_ladder", [d_y / 8, d_y / 4, d_y / 2])
            eps = cfg.eps[0]
            t_hi = min(16 * eps * eps, (d_y / 2) ** 2)
            hit = sorted(set(list(cfg.time.get("hit", [])) + [r * r for r in r_ladder]
                             + [2 * eps * eps, t_hi]))
            t = cfg.time
            grid = TimeGrid.graded(float(t.get("t_end", 4.0)), float(t.get("tau_min", 1e-5)),
                                   float(t.get("ratio", 1.2)), tau_max=t.get("tau_max"),
                                   hit=hit, scheme=t.get("scheme", "be"))
            self.state["kernel_field"] = build_kernel_field(self.op, y, cfg.eps[0], grid,
                                                            solver=cfg.solver)
            self.state["kernel_ladder"] = (d_y, r_ladder)
        return self.state["kernel_field"]


def _smooth_field(rng, n_modes: int = 4):
    """Random smooth vector field on the plane, reproducible from ``rng``."""
    k = rng.integers(1, 4, size=(n_modes, 2))
    c = rng.normal(size=(n_modes, 2))
    ph = rng.uniform(0, 2 * np.pi, size=(n_modes, 2))

    def f(x):
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 2))
        for j in range(n_modes):
            arg = np.pi * (k[j, 0] * x[:, 0] + k[j, 1] * x[:, 1])
            out += c[j] * np.sin(arg[:, None] + ph[j])
        return out
    return f


def suite_korn(ctx: Context) -> list:
    op, cfg = ctx.op, ctx.cfg
    depth = int(cfg.mesh.get("depth", 3))
    rep = estimate_constants(op, depth)
    d = rep.to_dict()
    consts = {k: d[k] for k in ("korn2_constant", "friedrichs_constant", "coercivity_rho",
                                "coercivity_c", "first_korn_ratio")}
    positive = all(v is None or (math.isfinite(v) and v > 0) for v in consts.values())
    out = [EstimateReport("korn-constants", consts, bool(positive and rep.converged),
                          f"{depth} mesh levels", None,
                          {"relative_changes": d["relative_changes"],
                           "ladder": d["mesh_ladder"]})]
    if rep.first_korn_ratio is not None:
        worst = max(lv["first_korn_ratio"] for lv in d["mesh_ladder"])
        out.append(EstimateReport("first-korn", {"max_ratio": worst, "bound": 2.0},
                                  bool(worst <= 2.0 + 1e-9), f"{depth} mesh levels"))
    ctx.state["rho"] = rep.coercivity_rho
    return out


def suite_parabolic(ctx: Context) -> list:
    op, cfg = ctx.op, ctx.cfg
    f = _smooth_field(ctx.rng)
    psi = op.constrain(f(ctx.mesh.nodes).reshape(-1))
    lam = spectral_gap(op)
    t_end = float(cfg.opt("parabolic", "t_end", 10.0))
    n = int(cfg.opt("parabolic", "n_steps", 200))
    grid = TimeGrid.uniform(t_end, n, cfg.opt("parabolic", "scheme", "be"))
    psi_v = psi
    if op.pure_neumann:
        R = op.modes
        psi_v = psi - R @ (R.T @ (op.mass @ psi))
    traj = step_parabolic(op, grid, psi_v, v_mode=op.pure_neumann, solver=cfg.solver)
    fit = decay_rate(op, traj, lambda1=lam)
    rel = abs(fit.rate - lam) / lam
    out = [EstimateReport("decay", {"rate": fit.rate, "raw_rate": fit.raw_rate,
                                    "lambda1": lam, "relative_error": rel},
                          bool(rel <= 0.05), f"{n} steps to t={t_end:g}")]
    write_trajectory_csv(traj, ctx.out / "parabolic_trajectory.csv")
    write_energy_csv(traj, ctx.out / "parabolic_energy.csv")
    if op.pure_neumann:
        # untouched data keeps its rigid part; it must be conserved
        traj2 = step_parabolic(op, grid, psi, v_mode=False, solver=cfg.solver)
        mom = traj2.rigid_moments
        scale = np.abs(mom[0]).max()
        drift = float(np.abs(np.diff(mom, axis=0)).max() / scale)
        out.append(EstimateReport("conservation", {"max_step_drift": drift},
                                  bool(drift <= 1e-12), f"{n} steps"))
    return out


def suite_kernel(ctx: Context) -> list:
    cfg = ctx.cfg
    fld = ctx.kernel_field()
    d_y, r_ladder = ctx.state["kernel_ladder"]
    out = estimate_suite(fld, d_y, r_ladder=r_ladder,
                         p_grid=tuple(cfg.opt("kernel", "p_grid", (1.0, 1.3, 1.6))),
                         pgrad_grid=tuple(cfg.opt("kernel", "pgrad_grid", (1.0, 1.1))),
                         mu1=float(ctx.state.get("mu1", cfg.opt("kernel", "mu1", 0.5))))
    eps = cfg.eps[0]
    t_lo = cfg.opt("kernel", "diag_t_lo", 2 * eps * eps)
    t_hi = cfg.opt("kernel", "diag_t_hi", min(16 * eps * eps, (d_y / 2) ** 2))
    out.append(diagonal_slope(fld, t_lo, t_hi))
    if len(cfg.sources) >= 2 and cfg.probes:
        grid = TimeGrid.uniform(float(cfg.opt("kernel", "sym_t_end", 0.1)),
                                int(cfg.opt("kernel", "sym_steps", 20)))
        out.append(symmetry_check(ctx.op, cfg.sources[:2], cfg.probes,
                                  cfg.opt("kernel", "sym_times", [0.05, 0.1]), eps, grid,
                                  solver=cfg.solver))
    y = np.asarray(cfg.sources[0])
    x0 = ctx.mesh.nodes[np.argmin(np.linalg.norm(ctx.mesh.nodes - y, axis=1))]
    f = _smooth_field(ctx.rng)
    out.append(initial_trace(ctx.op, f, cfg.opt("kernel", "trace_x0", x0.tolist()),
                             solver=cfg.solver))
    pts = cfg.probes or [cfg.sources[0]]
    write_kernel_samples(fld, pts, fld.times[1:], ctx.out / "kernel_samples.csv")
    return out


def suite_gaussian(ctx: Context) -> list:
    fld = ctx.kernel_field()
    diam = mesh_diameter(ctx.mesh)
    g = gaussian_fit(fld, q_max=float(ctx.cfg.opt("gaussian", "q_max", 16.0)), diam=diam)
    out = [g]
    if g.passed:
        out.append(flat_tail(fld, g.constants["C"], diam))
    else:
        out.append(EstimateReport("Thm3-tail", {}, False, "no fitted constant"))
    return out


def _dirichlet_point(domain):
    for a, b, lab in domain.edges():
        if lab == "D":
            return 0.5 * (a + b)
    return None


def suite_holder(ctx: Context) -> list:
    cfg = ctx.cfg
    f = _smooth_field(ctx.rng)
    x_int = np.asarray(cfg.opt("holder", "interior", cfg.sources[0] if cfg.sources
                               else ctx.mesh.nodes.mean(axis=0)))
    r_int = float(cfg.opt("holder", "r_interior",
                          0.5 * boundary_distance(ctx.mesh, x_int[None])[0]))
    x_bd = cfg.opt("holder", "boundary", None)
    if x_bd is None and isinstance(ctx.domain, PolygonalDomain):
        x_bd = _dirichlet_point(ctx.domain)
    r_bd = float(cfg.opt("holder", "r_boundary", 0.25))
    levels = int(cfg.opt("holder", "levels", 3))

    def probe(op):
        u, _, _ = solve_static(op, load_vector(op, f), compat="project")
        reps = [holder_probe(op, u, "interior", x_int, r_int, levels=levels)]
        if x_bd is not None:
            reps.append(holder_probe(op, u, "boundary", x_bd, r_bd, levels=levels))
        return reps

    ops = [ctx.op, assemble(refine(ctx.mesh), ctx.op.tensor)]
    with ThreadPoolExecutor(max_workers=max(1, min(ctx.jobs, 2))) as ex:
        coarse, fine = list(ex.map(probe, ops))
    out = []
    for a, b in zip(coarse, fine):
        m0, m1 = a.constants.get("mu0"), b.constants.get("mu0")
        stable = m0 is not None and m1 is not None and abs(m1 - m0) <= 0.2 * abs(m0)
        out.append(EstimateReport(a.estimate_id, {"mu0": m1, "mu0_coarse": m0},
                                  bool(a.passed and b.passed and stable),
                                  "two mesh levels", None,
                                  {"coarse": a.constants, "fine": b.constants}))
    fits = [r.constants["mu0"] for r in out if r.constants["mu0"] is not None]
    if fits:
        ctx.state["mu1"] = float(min(min(fits), 1.0))
    return out


def suite_green(ctx: Context) -> list:
    cfg, op = ctx.cfg, ctx.op
    eps = cfg.eps[0]
    lam = spectral_gap(op)
    tol = float(cfg.opt("green", "tail_tol", 1e-6))

    def one(y):
        return build_green(op, y, eps, tail_tol=tol, solver=cfg.solver, lambda1=lam,
                           ratio=float(cfg.opt("green", "ratio", 2.0)))

    with ThreadPoolExecutor(max_workers=max(1, ctx.jobs)) as ex:
        greens = list(ex.map(one, cfg.sources))
    f = _smooth_field(ctx.rng)
    cc = static_crosscheck(greens, op, f)
    out = [EstimateReport("green-static", {"rel_error": cc["rel_error"],
                                           "rel_error_point": cc["rel_error_point"],
                                           "lambda1": lam,
                                           "tail_bound": max(g.tail_bound for g in greens)},
                          bool(cc["rel_error"] <= 1e-2), f"{len(greens)} sources")]
    if len(greens) >= 2:
        out.append(EstimateReport("green-symmetry", {"mismatch": green_symmetry(greens)}, True,
                                  f"{len(greens)} sources"))
    if op.pure_neumann:
        mom = max(float(np.abs(g.rigid_moments()).max()) for g in greens)
        out.append(EstimateReport("green-rigid", {"max_moment": mom}, bool(mom <= 1e-9),
                                  f"{len(greens)} sources"))
    if cfg.opt("green", "bounds", True):
        mu1 = float(ctx.state.get("mu1", cfg.opt("green", "mu1", 0.5)))
        try:
            out.extend(green_bounds(greens, mu1=mu1))
        except InsufficientRange as e:
            out.append(EstimateReport("Thm4-log", {}, False, f"rejected: {e}"))
    write_green_csv(greens, ctx.out / "green_samples.csv", cfg.probes or None)
    return out


SUITE_FUNCS = {"korn": suite_korn, "parabolic": suite_parabolic, "kernel": suite_kernel,
               "gaussian": suite_gaussian, "holder": suite_holder, "green": suite_green}


# --------------------------------------------------------------------------
# run / compare

def output_dir(cfg: ExperimentConfig, out=None) -> Path:
    if out is not None:
        return Path(out)
    if cfg.output:
        return cfg.path(cfg.output)
    return Path(os.environ.get(OUT_ENV, "elastokernel-out"))


def versions() -> dict:
    return {"elastokernel": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg: ExperimentConfig, *, jobs: int = 1, out=None) -> dict:
    """Execute the configured suites; returns the report (also written to disk)."""
    t_start = time.perf_counter()
    out = output_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, max(1, int(jobs)))
    report = {"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest(),
              "versions": versions(), "seed": cfg.seed, "mesh": None, "suites": {},
              "passed": True, "timing": {}}
    setup_error = None
    if cfg.suites:
        try:
            t0 = time.perf_counter()
            ctx.domain = parse_domain(cfg.domain, cfg.base_dir)
            ctx.mesh = ctx.domain if isinstance(ctx.domain, Mesh) else \
                triangulate(ctx.domain, float(cfg.mesh["target_h"]))
            ctx.op = assemble(ctx.mesh, parse_tensor(cfg.tensor, ctx.mesh, cfg.base_dir))
            report["mesh"] = {"n_nodes": ctx.mesh.n_nodes, "n_triangles": ctx.mesh.n_triangles,
                              "h_max": ctx.mesh.h_max, "n_dofs": ctx.op.n_dofs,
                              "pure_neumann": ctx.op.pure_neumann}
            report["timing"]["setup"] = time.perf_counter() - t0
        except Exception as e:  # recorded, every suite then fails
            setup_error = f"{type(e).__name__}: {e}"
    for name in (s for s in SUITES if s in cfg.suites):
        t0 = time.perf_counter()
        entry = {"passed": False, "reports": [], "error": None}
        if setup_error:
            entry["error"] = setup_error
        else:
            try:
                reps = SUITE_FUNCS[name](ctx)
                entry["reports"] = [r.to_dict() for r in reps]
                entry["passed"] = all(r.passed for r in reps)
            except Exception as e:
                entry["error"] = f"{type(e).__name__}: {e}"
                entry["traceback"] = traceback.format_exc(limit=3).splitlines()[-1]
        entry["timing"] = time.perf_counter() - t0
        report["suites"][name] = entry
        report["passed"] &= entry["passed"]
    report["timing"]["total"] = time.perf_counter() - t_start
    (out / "report.json").write_text(dumps(report))
    return report


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}/{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        yield prefix, float(obj)


def _constants(report: dict) -> dict:
    out = {}
    for sname, entry in report.get("suites", {}).items():
        for rep in entry.get("reports", []):
            for path, v in _flatten(rep.get("constants", {}), f"{sname}/{rep['estimate_id']}"):
                out[path] = v
    return out


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def compare(report_a: dict, report_b: dict, rel_tol: float = 0.0) -> list:
    """Field-wise relative differences of fitted constants above ``rel_tol``."""
    va, vb = report_a.get("schema_version"), report_b.get("schema_version")
    if va != vb:
        raise SchemaError(f"schema versions differ: {va} vs {vb}")
    if va != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {va}")
    ca, cb = _constants(report_a), _constants(report_b)
    diff = []
    for key in sorted(set(ca) | set(cb)):
        a, b = ca.get(key), cb.get(key)
        if a is None or b is None:
            diff.append({"field": key, "a": a, "b": b, "rel": None})
            continue
        rel = 0.0 if a == b else abs(a - b) / max(abs(a), abs(b))
        if rel > rel_tol:
            diff.append({"field": key, "a": a, "b": b, "rel": rel})
    return diff


def mesh_info(spec: str, target_h: float | None = None) -> dict:
    dom = parse_domain(spec)
    if isinstance(dom, Mesh):
        mesh = dom
        info = {}
    else:
        h = target_h if target_h is not None else dom.diameter / 16
        mesh = triangulate(dom, h)
        info = {"n_edges": dom.n_edges, "labels": "".join(dom.labels), "area": dom.area,
                "diameter": dom.diameter, "target_h": h}
    labels = np.asarray(mesh.edge_labels)
    info.update({"n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles, "h_max": mesh.h_max,
                 "boundary_edges": int(len(mesh.boundary_edges)),
                 "dirichlet_edges": int(np.sum(labels == "D")),
                 "neumann_edges": int(np.sum(labels == "N")),
                 "dirichlet_nodes": int(len(mesh.dirichlet_nodes)),
                 "min_area": float(mesh.areas.min())})
    return info


# --------------------------------------------------------------------------
# command line

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="elastokernel",
                                 description="Heat kernel and Green function experiments "
                                             "for elliptic systems on polygons.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run a config")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV})")
    p = sub.add_parser("compare", help="diff the fitted constants of two reports")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--rel-tol", type=float, default=0.0)
    p = sub.add_parser("mesh-info", help="mesh a domain and print its statistics")
    p.add_argument("domain", help="unit_square[:DNNN], l_shape[:D|N], a .mesh or JSON file")
    p.add_argument("--h", type=float, default=None)
    args = ap.parse_args(argv)

    if args.cmd == "run":
        try:
            cfg = ExperimentConfig.load(args.config)
        except (ConfigError, json.JSONDecodeError) as e:
            print(f"config error: {e}", file=sys.stderr)
            return 2
        rep = run(cfg, jobs=args.jobs, out=args.out)
        for name, entry in rep["suites"].items():
            status = "pass" if entry["passed"] else "FAIL"
            extra = f"  ({entry['error']})" if entry["error"] else ""
            print(f"{name:10s} {status}{extra}")
        print(f"report: {output_dir(cfg, args.out) / 'report.json'}")
        return 0 if rep["passed"] else 1
    if args.cmd == "compare":
        try:
            diff = compare(load_report(args.a), load_report(args.b), args.rel_tol)
        except SchemaError as e:
            print(f"schema error: {e}", file=sys.stderr)
            return 2
        for d in diff:
            rel = "missing" if d["rel"] is None else f"{d['rel']:.3e}"
            print(f"{d['field']}: {d['a']} -> {d['b']} ({rel})")
        return 0
    info = mesh_info(args.domain, args.h)
    print(dumps(info), end="")
    return 0
