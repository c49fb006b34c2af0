"""Mollified heat kernel columns, their rigid-corrected variant, and the
numerical estimate suite (cylinder norms, pole and Gaussian bounds,
symmetry, Hölder probes, initial trace).

A kernel column is the discrete parabolic solution started from the
mollified point mass ``Phi_{y,eps} e_k``.  Column ``k`` sampled at ``x``
gives ``K[:, k](x, y, t)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.spatial.distance import pdist

from .assembly import DiscreteOperator, gradient_gram
from .domain import DomainError, Mesh
from .parabolic import BE, StepSolver, TimeGrid, Trajectory, step_parabolic


class ResolutionError(ValueError):
    pass


# --------------------------------------------------------------------------
# mollifier

@lru_cache(maxsize=None)
def bump_normalization(n: int = 2) -> float:
    """``1 / int_{B(0,1)} exp(-1 / (1 - |z|^2)) dz``."""
    surface = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)
    val, _ = integrate.quad(lambda r: r ** (n - 1) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return 1.0 / (surface * val)


@dataclass(frozen=True)
class Mollifier:
    """``Phi_{y,eps}(x) = eps^-n Phi((x - y) / eps)`` with a smooth unit-mass bump."""

    y: np.ndarray
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @staticmethod
    def profile(z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        r2 = np.sum(z * z, axis=1)
        out = np.zeros(len(z))
        inside = r2 < 1.0
        out[inside] = bump_normalization(z.shape[1]) * np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[1]
        return self.profile((x - self.y) / self.eps) / self.eps ** n

    def nodal(self, mesh: Mesh) -> np.ndarray:
        """Nodal interpolant rescaled to unit discrete integral."""
        v = self(mesh.nodes)
        total = float(mesh.lumped_masses() @ v)
        if total <= 0:
            raise ResolutionError("mollifier support contains no mesh nodes")
        return v / total


def boundary_distance(mesh: Mesh, points) -> np.ndarray:
    """Exact distance from points to the polygonal mesh boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    ab = b - a
    den = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    s = np.clip(np.einsum("pkd,kd->pk", pts[:, None, :] - a[None], ab) / den, 0.0, 1.0)
    proj = a[None] + s[..., None] * ab[None]
    return np.linalg.norm(pts[:, None, :] - proj, axis=2).min(axis=1)


def mesh_diameter(mesh: Mesh) -> float:
    b = mesh.nodes[np.unique(mesh.boundary_edges)]
    return float(pdist(b).max())


def _inside(mesh: Mesh, pts) -> np.ndarray:
    tri, _ = mesh.locator().locate(pts)
    return tri >= 0


# --------------------------------------------------------------------------
# kernel columns and fields

@dataclass
class KernelColumn:
    k: int
    trajectory: Trajectory
    psi: np.ndarray
    rigid_part: np.ndarray


def initial_column(op: DiscreteOperator, y, eps: float, k: int, corrected: bool = True,
                   check: bool = True):
    """Mollified delta ``Phi_{y,eps} e_k`` (and its rigid projection)."""
    y = np.asarray(y, dtype=float)
    mesh = op.mesh
    if check:
        if not _inside(mesh, y[None])[0]:
            raise DomainError("source point outside the domain")
        if eps < 2.0 * op.h * (1 - 1e-12):
            raise ResolutionError(f"mollifier under-resolved: eps={eps:g} < 2h={2 * op.h:g}")
        if boundary_distance(mesh, y[None])[0] < eps:
            raise DomainError("source point closer to the boundary than eps")
    phi = Mollifier(y, eps).nodal(mesh)
    psi = np.zeros(op.n_dofs)
    psi[k::2] = phi
    psi = op.constrain(psi)
    rigid = np.zeros_like(psi)
    if op.pure_neumann:
        R = op.modes
        rigid = R @ (R.T @ (op.mass @ psi))
        if corrected:
            psi = psi - rigid
    return psi, rigid


def build_kernel_column(op: DiscreteOperator, y, eps: float, k: int, grid: TimeGrid, *,
                        corrected: bool = True, solver: str = "cg", tol: float = 1e-12,
                        store: bool = True, check: bool = True, callback=None,
                        solver_obj: StepSolver | None = None) -> KernelColumn:
    """Column ``k`` of the mollified kernel with source ``y``.

    ``corrected`` subtracts the rigid projection of the initial data in the
    pure-traction case and keeps every slice deflated; with Dirichlet data
    both variants coincide.
    """
    psi, rigid = initial_column(op, y, eps, k, corrected, check)
    traj = step_parabolic(op, grid, psi, v_mode=corrected and op.pure_neumann, solver=solver,
                          tol=tol, store=store, callback=callback, solver_obj=solver_obj)
    return KernelColumn(k, traj, psi, rigid)


@dataclass
class KernelField:
    """Both columns of ``K^eps(., y, .)`` on a shared time grid."""

    y: np.ndarray
    eps: float
    columns: list
    corrected: bool
    op: DiscreteOperator = field(repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.columns[0].trajectory.times

    @property
    def mesh(self) -> Mesh:
        return self.op.mesh

    def slice(self, idx: int) -> np.ndarray:
        """Nodal matrix field ``K[node, i, k]`` at stored time index ``idx``."""
        cols = [c.trajectory.states[idx].reshape(-1, 2) for c in self.columns]
        return np.stack(cols, axis=-1)

    def slices(self) -> np.ndarray:
        """All slices, shape (n_times, N, 2, 2)."""
        S = np.stack([c.trajectory.states for c in self.columns], axis=-1)
        return S.reshape(S.shape[0], -1, 2, S.shape[-1])

    def nodal_at_time(self, t: float) -> np.ndarray:
        cols = [c.trajectory.state_at(t).reshape(-1, 2) for c in self.columns]
        return np.stack(cols, axis=-1)

    def at(self, x, t: float) -> np.ndarray:
        """``K^eps(x, y, t)`` for points ``x``; shape (P, 2, 2)."""
        return self.mesh.interpolate(self.nodal_at_time(t), np.atleast_2d(x))

    def rigid_limit(self, x) -> np.ndarray:
        """``sum_i omega_i(x) omega_i(y)^T`` (pure traction only)."""
        basis = self.op.rigid_modes
        if basis is None:
            return np.zeros((len(np.atleast_2d(x)), 2, 2))
        wx = basis.evaluate(np.atleast_2d(x))  # (P, mode, component)
        wy = basis.evaluate(self.y[None])[0]
        return np.einsum("pmj,mk->pjk", wx, wy)


def build_kernel_field(op: DiscreteOperator, y, eps: float, grid: TimeGrid, *,
                       corrected: bool = True, solver: str = "cg", tol: float = 1e-12,
                       check: bool = True, solver_obj=None) -> KernelField:
    S = solver_obj or StepSolver(op, solver, tol)
    cols = [build_kernel_column(op, y, eps, k, grid, corrected=corrected, solver=solver, tol=tol,
                                check=check, solver_obj=S) for k in range(2)]
    return KernelField(np.asarray(y, dtype=float), eps, cols, corrected, op,
                       {"mesh": op.provenance[0], "tensor": op.provenance[1],
                        "labels": "".join(sorted(set(op.mesh.edge_labels)))})


def kernel_at(fld: KernelField, x, t: float) -> np.ndarray:
    """2x2 matrix ``K^eps(x, y, t)``."""
    return fld.at(np.asarray(x, dtype=float)[None], t)[0]


# --------------------------------------------------------------------------
# reports

@dataclass
class EstimateReport:
    estimate_id: str
    constants: dict
    passed: bool
    samples: str
    worst: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimate_id": self.estimate_id, "constants": self.constants,
                "passed": bool(self.passed), "samples": self.samples, "worst": self.worst,
                "details": self.details}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def reports_to_json(reports, path=None) -> str:
    text = json.dumps([r.to_dict() for r in reports], indent=1, default=_json_default)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def write_kernel_samples(fld: KernelField, points, times, path) -> None:
    """CSV ``xi, yi, t, K11, K12, K21, K22`` (``xi``: sample point, ``yi``: source)."""
    pts = np.atleast_2d(points)
    with open(path, "w") as fh:
        fh.write("x1,x2,y1,y2,t,K11,K12,K21,K22\n")
        for t in times:
            vals = fld.at(pts, t)
            for p, v in zip(pts, vals):
                row = [*p, *fld.y, t, v[0, 0], v[0, 1], v[1, 0], v[1, 1]]
                fh.write(",".join(f"{c:.17g}" for c in row) + "\n")


# --------------------------------------------------------------------------
# epsilon ladder

def epsilon_extrapolate(op: DiscreteOperator, y, k: int, grid: TimeGrid, eps_ladder, probes,
                        t_floor: float = 0.0, corrected: bool = True, solver: str = "cg"):
    """Columns for a decreasing eps ladder and their Cauchy differences.

    ``probes`` is a list of ``(x, t)`` with ``t >= t_floor``.  Returns the
    finest column and a report dict; ``cauchy`` is True when successive
    differences decrease at every probe.
    """
    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ValueError("eps ladder must be decreasing")
    if eps_ladder[-1] < 2 * op.h * (1 - 1e-12):
        raise ResolutionError("smallest eps below 2h")
    for _, t in probes:
        if t < t_floor:
            raise ValueError("probe time below t_floor")
    S = StepSolver(op, solver)
    values, moments, cols = [], [], []
    for eps in eps_ladder:
        col = build_kernel_column(op, y, eps, k, grid, corrected=corrected, solver_obj=S)
        cols.append(col)
        vals = []
        for x, t in probes:
            u = col.trajectory.state_at(t).reshape(-1, 2)
            vals.append(op.mesh.interpolate(u, np.asarray(x, dtype=float)[None])[0])
        values.append(np.array(vals))
        moments.append(col.trajectory.rigid_moments.copy())
    values = np.array(values)  # (L, P, 2)
    diffs = np.linalg.norm(values[1:] - values[:-1], axis=2)  # (L-1, P)
    cauchy = bool(np.all(diffs[1:] <= diffs[:-1] + 1e-14)) if len(diffs) > 1 else True
    ratios = (diffs[:-1] / np.maximum(diffs[1:], 1e-300)).tolist() if len(diffs) > 1 else []
    moment_spread = 0.0
    if op.pure_neumann:
        moment_spread = float(max(np.abs(m - moments[0]).max() for m in moments))
    report = {"eps": eps_ladder, "values": values.tolist(), "differences": diffs.tolist(),
              "ratios": ratios, "cauchy": cauchy, "error_bar": diffs[-1].tolist(),
              "moment_spread": moment_spread}
    return cols[-1], report


# --------------------------------------------------------------------------
# symmetry

def symmetry_check(op: DiscreteOperator, y_list, x_list, t_list, eps: float, grid: TimeGrid,
                   solver: str = "cg", corrected: bool = False) -> EstimateReport:
    """Duality pairing and pointwise symmetry of the mollified kernel.

    Pairing: ``psi_{x,l}^T M u_{y,k}(t)`` against ``psi_{y,k}^T M u_{x,l}(t)``.
    Pointwise: ``|K(x, y, t) - K(y, x, t)^T|`` from P1 interpolation.
    """
    pts = {}
    for p in list(y_list) + list(x_list):
        pts.setdefault(tuple(np.asarray(p, dtype=float)), None)
    S = StepSolver(op, solver)
    hit = sorted(set(float(t) for t in t_list))
    for key in pts:
        pts[key] = build_kernel_field(op, np.array(key), eps, grid, corrected=corrected,
                                      solver_obj=S)
    worst_pair, worst_point, worst = 0.0, 0.0, None
    rows = []
    for y in y_list:
        fy = pts[tuple(np.asarray(y, dtype=float))]
        for x in x_list:
            fx = pts[tuple(np.asarray(x, dtype=float))]
            for t in hit:
                uy = np.column_stack([c.trajectory.state_at(t) for c in fy.columns])
                ux = np.column_stack([c.trajectory.state_at(t) for c in fx.columns])
                px = np.column_stack([c.psi for c in fx.columns])
                py = np.column_stack([c.psi for c in fy.columns])
                P1 = px.T @ (op.mass @ uy)    # [l, k]
                P2 = py.T @ (op.mass @ ux)    # [k, l]
                scale = max(np.abs(P1).max(), np.abs(P2).max(), 1e-300)
                rel = float(np.abs(P1 - P2.T).max() / scale)
                Kxy = fy.at(np.asarray(x, dtype=float)[None], t)[0]
                Kyx = fx.at(np.asarray(y, dtype=float)[None], t)[0]
                pw = float(np.abs(Kxy - Kyx.T).max())
                rows.append({"x": list(map(float, x)), "y": list(map(float, y)), "t": t,
                             "pairing_rel": rel, "pointwise": pw,
                             "pointwise_rel": pw / max(np.abs(Kxy).max(), 1e-300)})
                if rel > worst_pair:
                    worst_pair = rel
                    worst = rows[-1]
                worst_point = max(worst_point, pw)
    return EstimateReport("symmetry", {"pairing_max_rel": worst_pair,
                                       "pointwise_max": worst_point},
                          worst_pair <= 1e-9, f"{len(rows)} (x, y, t) triples, eps={eps:g}",
                          worst, {"rows": rows, "h": op.h})


# --------------------------------------------------------------------------
# quadrature on sub-triangles

@dataclass
class SubQuadrature:
    """``s^2`` equal-area sub-triangle centroids per element.

    ``points`` (T*s^2, 2), ``weights`` (T*s^2,), ``bary`` (s^2, 3) shared by
    all elements, ``tri`` element index per point.
    """

    points: np.ndarray
    weights: np.ndarray
    bary: np.ndarray
    tri: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh, s: int = 2) -> "SubQuadrature":
        bary = []
        for i in range(s):
            for j in range(s - i):
                # upward sub-triangle
                bary.append([(i + 1 / 3) / s, (j + 1 / 3) / s])
                if i + j < s - 1:
                    bary.append([(i + 2 / 3) / s, (j + 2 / 3) / s])
        b = np.array(bary)
        b = np.column_stack([1 - b.sum(1), b])
        p = mesh.nodes[mesh.triangles]
        pts = np.einsum("qk,tkd->tqd", b, p).reshape(-1, 2)
        w = np.repeat(mesh.areas / len(b), len(b))
        tri = np.repeat(np.arange(mesh.n_triangles), len(b))
        return cls(pts, w, b, tri)

    def values(self, mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
        """P1 values at the points; ``nodal`` shape (N, ...)."""
        v = nodal[mesh.triangles]  # (T, 3, ...)
        out = np.einsum("qk,tk...->tq...", self.bary, v)
        return out.reshape((-1,) + nodal.shape[1:])

    def gradients(self, mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
        """Element gradients repeated per point: (P, ..., 2)."""
        g = mesh.gradients()
        d = np.einsum("tka,tk...->t...a", g, nodal[mesh.triangles])
        return np.repeat(d, len(self.bary), axis=0)


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    w = np.zeros(len(t))
    tau = np.diff(t)
    w[:-1] += 0.5 * tau
    w[1:] += 0.5 * tau
    return w


def _slope(x, y):
    A = np.column_stack([np.log(x), np.ones(len(x))])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(coef[0]), float(math.exp(coef[1]))


def _cut_times(times, t_max):
    """Times in [0, t_max] with ``t_max`` required to be a breakpoint."""
    idx = np.flatnonzero(times <= t_max * (1 + 1e-12))
    if abs(times[idx[-1]] - t_max) > 1e-12 * max(t_max, 1e-300):
        raise ValueError(f"time {t_max:g} is not a grid breakpoint")
    return idx


def cylinder_norms(fld: KernelField, r: float, p_list, quad: SubQuadrature, gradient=False,
                   subtract_rigid=False):
    """``L_p`` norms over ``Q_+((y, 0), r) = B(y, r) x (0, r^2)`` of ``|K|`` or ``|D_x K|``."""
    mesh = fld.mesh
    times = fld.times
    idx = _cut_times(times, r * r)
    inball = np.linalg.norm(quad.points - fld.y, axis=1) < r
    wq = quad.weights[inball]
    wt = _trapezoid_weights(times[idx])
    acc = np.zeros(len(p_list))
    for wk, k in zip(wt, idx):
        nod = fld.slice(k)
        if gradient:
            g = quad.gradients(mesh, nod)[inball]
            mag = np.sqrt(np.sum(g * g, axis=(1, 2, 3)))
        else:
            v = quad.values(mesh, nod)[inball]
            mag = np.sqrt(np.sum(v * v, axis=(1, 2)))
        for j, p in enumerate(p_list):
            acc[j] += wk * float(wq @ mag ** p)
    return acc ** (1.0 / np.asarray(p_list, dtype=float))


def _outside_norms(fld: KernelField, r: float, quad: SubQuadrature, q: float):
    """``L_q`` norm and energy norm of K over ``Q \\ Q_+((y, 0), r)``."""
    mesh = fld.mesh
    times = fld.times
    wt = _trapezoid_weights(times)
    d = np.linalg.norm(quad.points - fld.y, axis=1)
    lq = 0.0
    sup_l2 = 0.0
    grad_sq = 0.0
    g_all = gradient_gram(mesh)
    for wk, (k, t) in zip(wt, enumerate(times)):
        nod = fld.slice(k)
        mask = (d >= r) if t < r * r else np.ones(len(d), dtype=bool)
        v = quad.values(mesh, nod)
        mag2 = np.sum(v * v, axis=(1, 2))
        lq += wk * float(quad.weights[mask] @ mag2[mask] ** (q / 2))
        sup_l2 = max(sup_l2, float(quad.weights[mask] @ mag2[mask]))
        if t >= r * r:
            U = np.stack([c.trajectory.states[k] for c in fld.columns], axis=1)
            grad_sq += wk * float(np.einsum("dk,dk->", U, g_all @ U))
        else:
            g = quad.gradients(mesh, nod)
            gm = np.sum(g * g, axis=(1, 2, 3))
            grad_sq += wk * float(quad.weights[mask] @ gm[mask])
    return lq ** (1 / q), math.sqrt(sup_l2) + math.sqrt(grad_sq)


def estimate_suite(fld: KernelField, d_y: float, *, r_ladder=None, p_grid=(1.0, 1.3, 1.6),
                   pgrad_grid=(1.0, 1.1), slope_tol: float = 0.3, quad_level: int = 2,
                   mu1: float = 0.5) -> list:
    """Scaling checks of the kernel estimates on an r-ladder inside ``d_y``.

    The time grid of ``fld`` must contain every ``r^2`` as a breakpoint.
    """
    n = 2
    r_ladder = [d_y / 8, d_y / 4, d_y / 2] if r_ladder is None else list(r_ladder)
    if len(r_ladder) < 3:
        raise ValueError("r-ladder needs at least 3 points")
    if fld.op.pure_neumann and not fld.corrected:
        raise ValueError("pure traction: use the corrected kernel")
    mesh = fld.mesh
    quad = SubQuadrature.build(mesh, quad_level)
    r = np.array(r_ladder)
    reports = []

    # L_p of K and D_x K on Q_+
    for grad, pl, ident in ((False, p_grid, "Thm1-1"), (True, pgrad_grid, "Thm1-3")):
        if not len(pl):
            continue
        norms = np.array([cylinder_norms(fld, ri, pl, quad, gradient=grad) for ri in r])
        slopes, consts, ok = {}, {}, True
        for j, p in enumerate(pl):
            expected = -n + (n + 2) / p - (1 if grad else 0)
            s, c = _slope(r, norms[:, j])
            slopes[f"p={p:g}"] = {"slope": s, "expected": expected,
                                  "C_p": float(np.max(norms[:, j] / r ** expected))}
            ok &= abs(s - expected) <= slope_tol
        reports.append(EstimateReport(ident, slopes, bool(ok), f"r in {list(map(float, r))}",
                                      None, {"norms": norms.tolist()}))

    # distribution tails
    S = fld.slices()
    times = fld.times
    wt = _trapezoid_weights(times)
    mesh_mass = mesh.lumped_masses()
    mags = np.sqrt(np.sum(S * S, axis=(2, 3)))  # (T, N)
    lam = d_y ** -n * np.geomspace(1.0, 1e3, 12)
    meas = np.array([float(np.sum(wt[:, None] * mesh_mass[None] * (mags > L))) for L in lam])
    live = meas > 0
    C2 = float(np.max(meas * lam ** ((n + 2) / n))) if live.any() else 0.0
    reports.append(EstimateReport("Thm1-2", {"C": C2}, bool(np.isfinite(C2)),
                                  f"{len(lam)} levels above d_y^-n", None,
                                  {"levels": lam.tolist(), "measure": meas.tolist()}))
    g = mesh.gradients()
    tri = mesh.triangles
    gm = []
    for k in range(len(times)):
        d = np.einsum("tka,tkic->tica", g, S[k][tri])
        gm.append(np.sqrt(np.sum(d * d, axis=(1, 2, 3))))
    gm = np.array(gm)
    lamg = d_y ** (-n - 1) * np.geomspace(1.0, 1e3, 12)
    measg = np.array([float(np.sum(wt[:, None] * mesh.areas[None] * (gm > L))) for L in lamg])
    C4 = float(np.max(measg * lamg ** ((n + 2) / (n + 1)))) if (measg > 0).any() else 0.0
    reports.append(EstimateReport("Thm1-4", {"C": C4}, bool(np.isfinite(C4)),
                                  f"{len(lamg)} levels above d_y^-n-1", None,
                                  {"levels": lamg.tolist(), "measure": measg.tolist()}))

    # pole bound on nodes x slices with |X - Y|_P < d_y / 2 (t > 0)
    dist = np.linalg.norm(mesh.nodes - fld.y, axis=1)
    par = np.maximum(dist[None, :], np.sqrt(times)[:, None])
    sel = (par < d_y / 2) & (times[:, None] > 0)
    vals = np.where(sel, mags * par ** n, 0.0)
    kt, kn = np.unravel_index(int(np.argmax(vals)), vals.shape)
    C5 = float(vals.max())
    reports.append(EstimateReport("Thm1-5", {"C": C5}, bool(np.isfinite(C5) and C5 > 0),
                                  f"{int(sel.sum())} node/time samples",
                                  {"x": mesh.nodes[kn].tolist(), "t": float(times[kt])}))

    # Hölder quotient on node pairs sharing a time slice
    C6 = 0.0
    worst6 = None
    edges = mesh.edges()
    for k in range(1, len(times)):
        a, b = edges[:, 0], edges[:, 1]
        dx = np.linalg.norm(mesh.nodes[a] - mesh.nodes[b], axis=1)
        pa = par[k, a]
        okp = (2 * dx < pa) & (pa < d_y / 2)
        if not okp.any():
            continue
        diff = np.sqrt(np.sum((S[k][a] - S[k][b]) ** 2, axis=(1, 2)))
        q = np.where(okp, diff * dx ** -mu1 * pa ** (n + mu1), 0.0)
        j = int(np.argmax(q))
        if q[j] > C6:
            C6 = float(q[j])
            worst6 = {"x": mesh.nodes[a[j]].tolist(), "t": float(times[k])}
    reports.append(EstimateReport("Thm1-6", {"C": C6, "mu1": mu1}, bool(np.isfinite(C6)),
                                  "mesh-edge pairs", worst6))

    # tail norms outside the cylinder
    q = 2 * (n + 2) / n
    out = np.array([_outside_norms(fld, ri, quad, q) for ri in r])
    for j, ident in enumerate(("Rmk-7", "Rmk-8")):
        s, _ = _slope(r, out[:, j])
        C = float(np.max(out[:, j] * r ** (n / 2)))
        reports.append(EstimateReport(ident, {"C": C, "slope": s, "bound_slope": -n / 2},
                                      bool(s >= -n / 2 - slope_tol), f"r in {list(map(float, r))}",
                                      None, {"norms": out[:, j].tolist()}))
    return reports


# --------------------------------------------------------------------------
# Gaussian bound

def gaussian_samples(fld: KernelField, *, q_max: float = 16.0, t_min: float | None = None,
                     stride: int = 1):
    """Node/time samples ``(|x - y|^2 / t, t, |K|)`` with ``q <= q_max``."""
    mesh = fld.mesh
    times = fld.times
    t_min = 4 * fld.eps ** 2 if t_min is None else t_min
    S = fld.slices()
    d2 = np.sum((mesh.nodes - fld.y) ** 2, axis=1)
    rows = []
    for k in range(0, len(times), stride):
        t = times[k]
        if t < t_min:
            continue
        q = d2 / t
        sel = q <= q_max
        mag = np.sqrt(np.sum(S[k][sel] ** 2, axis=(1, 2)))
        rows.append(np.column_stack([q[sel], np.full(sel.sum(), t), mag]))
    return np.vstack(rows) if rows else np.zeros((0, 3))


def gaussian_fit(fld: KernelField, *, q_max: float = 16.0, ceiling: float | None = None,
                 ceiling_factor: float = 4.0, t_min: float | None = None,
                 theta_max: float = 10.0, diam: float | None = None) -> EstimateReport:
    """Linear program in ``(log C, theta)`` for
    ``|K| <= C (sqrt(t) ^ diam)^-n exp(-theta |x - y|^2 / t)``.

    Maximizes ``theta`` subject to zero violations and ``C <= ceiling``.
    The default ceiling is ``ceiling_factor`` times the smallest ``C``
    admissible at ``theta = 0``.
    """
    n = 2
    diam = mesh_diameter(fld.mesh) if diam is None else float(diam)
    samp = gaussian_samples(fld, q_max=q_max, t_min=t_min)
    samp = samp[samp[:, 2] > 0]
    if len(samp) == 0:
        return EstimateReport("Thm3-Gaussian", {}, False, "no samples")
    q, t, mag = samp.T
    scale = np.minimum(np.sqrt(t), diam)
    logb = np.log(mag) + n * np.log(scale)
    c0 = float(np.exp(logb.max()))
    ceil = ceiling_factor * c0 if ceiling is None else ceiling
    # variables z = (log C, theta); constraint: -logC + theta q <= -logb
    A = np.column_stack([-np.ones(len(q)), q])
    res = optimize.linprog(c=[0.0, -1.0], A_ub=A, b_ub=-logb,
                           bounds=[(None, math.log(ceil)), (0.0, theta_max)], method="highs")
    if res.status != 0:
        return EstimateReport("Thm3-Gaussian", {"ceiling": ceil}, False,
                              f"{len(q)} samples", {"message": res.message})
    logC, theta = res.x
    # tie-break: the smallest C for this theta
    logC = float(np.max(logb + theta * q))
    C = math.exp(logC)
    viol = logb - (logC - theta * q)
    j = int(np.argmax(viol))
    passed = bool(theta > 0 and viol.max() <= 1e-9 and C <= ceil * (1 + 1e-12))
    details = {"q_range": [float(q.min()), float(q.max())], "n_samples": int(len(q)),
               "C_theta0": c0}
    return EstimateReport("Thm3-Gaussian", {"C": C, "theta": float(theta), "ceiling": ceil},
                          passed, f"{len(q)} node/time samples, q in [0, {q_max:g}]",
                          {"q": float(q[j]), "t": float(t[j]), "K": float(mag[j])}, details)


def diagonal_slope(fld: KernelField, t_lo: float, t_hi: float, expected: float = -1.0,
                   tol: float = 0.15) -> EstimateReport:
    """Log-log slope of ``|K(y, y, t)|`` over the stored times in ``[t_lo, t_hi]``."""
    times = fld.times
    sel = (times >= t_lo * (1 - 1e-12)) & (times <= t_hi * (1 + 1e-12))
    ts = times[sel]
    vals = np.array([np.linalg.norm(fld.at(fld.y[None], t)[0]) for t in ts])
    s, c = _slope(ts, vals)
    return EstimateReport("Thm3-diagonal", {"slope": s, "expected": expected, "C": c},
                          bool(abs(s - expected) <= tol), f"{len(ts)} times in [{t_lo:g}, {t_hi:g}]",
                          None, {"t": ts.tolist(), "K": vals.tolist()})


def flat_tail(fld: KernelField, C: float, diam: float) -> EstimateReport:
    """``|K| <= C diam^-n`` at every stored time ``t > diam^2``."""
    times = fld.times
    sel = np.flatnonzero(times > diam ** 2)
    if len(sel) == 0:
        return EstimateReport("Thm3-tail", {}, False, "no times beyond diam^2")
    S = fld.slices()
    mx = np.array([np.sqrt(np.sum(S[k] ** 2, axis=(1, 2))).max() for k in sel])
    bound = float(C * diam ** -2)
    return EstimateReport("Thm3-tail", {"max_K": float(mx.max()), "bound": bound},
                          bool(mx.max() <= bound), f"{len(sel)} slices with t > diam^2",
                          None, {"t": times[sel].tolist(), "max": mx.tolist()})


# --------------------------------------------------------------------------
# Hölder probes

def _ball_mask(points, x0, rho):
    return np.linalg.norm(points - x0, axis=1) < rho


def holder_probe(op: DiscreteOperator, u: np.ndarray, region: str, x0, r: float,
                 levels: int = 4, quad_level: int = 4) -> EstimateReport:
    """Fitted Hölder exponent of a nodal field near ``x0``.

    ``interior``: slope of the oscillation on ``B(x0, rho)`` against rho.
    ``boundary``: slope ``s`` of the Dirichlet integral on ``B(x0, rho)``
    with ``s = n - 2 + 2 mu0``.  The ladder is ``rho = r 2^-j``.
    """
    mesh = op.mesh
    x0 = np.asarray(x0, dtype=float)
    rho = r * 0.5 ** np.arange(levels)
    if rho[-1] < 2 * mesh.h_max:
        raise ResolutionError("ladder under-resolved by the mesh")
    U = np.asarray(u, dtype=float).reshape(-1, 2)
    if region == "interior":
        if boundary_distance(mesh, x0[None])[0] < r:
            raise DomainError("interior ladder leaves the domain")
        osc = []
        for rh in rho:
            sel = _ball_mask(mesh.nodes, x0, rh)
            v = U[sel]
            osc.append(float(np.max(v.max(axis=0) - v.min(axis=0))))
        osc = np.array(osc)
        if osc.max() <= 1e-14 * max(np.abs(U).max(), 1e-300):
            return EstimateReport("H2-interior", {"mu0": None}, True, "constant field")
        s, c = _slope(rho, osc)
        mu0 = min(s, 1.0)
        sel = _ball_mask(mesh.nodes, x0, r)
        avg = math.sqrt(float(np.mean(np.sum(U[sel] ** 2, axis=1))))
        half = _ball_mask(mesh.nodes, x0, r / 2)
        P = mesh.nodes[half]
        V = U[half]
        dd = np.linalg.norm(P[:, None] - P[None], axis=2)
        dv = np.linalg.norm(V[:, None] - V[None], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            semi = float(np.nanmax(np.where(dd > 0, dv / dd ** max(mu0, 1e-3), 0.0)))
        A0 = semi * r ** max(mu0, 0) / max(avg, 1e-300)
        return EstimateReport("H2-interior", {"mu0": mu0, "slope": s, "A0": A0},
                              bool(mu0 > 0), f"rho ladder {rho.tolist()}", None,
                              {"oscillation": osc.tolist()})
    if region != "boundary":
        raise ValueError("region must be 'interior' or 'boundary'")
    quad = SubQuadrature.build(mesh, quad_level)
    grads = quad.gradients(mesh, U)
    dens = np.sum(grads * grads, axis=(1, 2))
    integ = np.array([float(quad.weights[m] @ dens[m]) for m in
                      (_ball_mask(quad.points, x0, rh) for rh in rho)])
    if integ.max() <= 0:
        return EstimateReport("H3-boundary", {"mu0": None}, True, "constant field")
    s, c = _slope(rho, integ)
    mu0 = 0.5 * (s - (2 - 2))
    return EstimateReport("H3-boundary", {"mu0": mu0, "slope": s, "ratio_C": c},
                          bool(mu0 > 0), f"rho ladder {rho.tolist()}", None,
                          {"dirichlet_integral": integ.tolist()})


# --------------------------------------------------------------------------
# initial trace

def initial_trace(op: DiscreteOperator, psi, x0, fractions=(1e-2, 1e-3, 1e-4), *,
                  n_steps: int = 64, scheme: str = BE, solver: str = "cg") -> EstimateReport:
    """``|int K(x0, ., t) psi - psi(x0)|`` along ``t = fraction * d(x0)^2``.

    By symmetry of the kernel the integral is the parabolic solution from
    ``psi`` evaluated at ``x0``.
    """
    mesh = op.mesh
    x0 = np.asarray(x0, dtype=float)
    dx0 = float(boundary_distance(mesh, x0[None])[0])
    vals = np.asarray(psi(mesh.nodes), dtype=float) if callable(psi) else np.asarray(psi)
    vals = op.constrain(vals.reshape(-1))
    if callable(psi):
        target = np.asarray(psi(x0[None]), dtype=float).reshape(-1)
    else:
        target = mesh.interpolate(vals.reshape(-1, 2), x0[None])[0]
    sup = float(np.abs(vals).max())
    errs = []
    S = StepSolver(op, solver)
    for fr in fractions:
        t = fr * dx0 ** 2
        traj = step_parabolic(op, TimeGrid.uniform(t, n_steps, scheme), vals, store=False,
                              solver_obj=S)
        ux = mesh.interpolate(traj.final.reshape(-1, 2), x0[None])[0]
        errs.append(float(np.linalg.norm(ux - target)))
    errs = np.array(errs)
    mono = bool(np.all(np.diff(errs) < 0))
    final_ok = bool(errs[-1] <= 1e-2 * sup)
    return EstimateReport("initial-trace", {"errors": errs.tolist(), "sup_psi": sup},
                          mono and final_ok, f"t = {list(fractions)} * d(x0)^2", None,
                          {"monotone": mono, "final_ok": final_ok, "d_x0": dx0})
