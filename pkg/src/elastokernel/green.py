"""Elliptic Green's function as the time integral of the mollified kernel.

Each column is marched with the parabolic stepper and summed with the time
weights that match the scheme: right endpoint for backward Euler,
trapezoid for Crank-Nicolson.  With these weights the sum telescopes to
``A^{-1} M (psi - u_K)``, so the quadrature adds no error of its own.  The
only thing left out is ``A^{-1} M u_K``, and its size is certified by
``||u_K||_M / lambda_1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import DiscreteOperator, _min_eig, load_vector, rigid_defect, solve_static
from .kernel import EstimateReport, Mollifier, initial_column, mesh_diameter
from .parabolic import BE, CN, CN_BE, StepSolver


class GreenError(RuntimeError):
    pass


class InsufficientRange(ValueError):
    pass


def spectral_gap(op: DiscreteOperator, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of ``(A, M)`` on V_h."""
    lam, _ = _min_eig(op.stiffness.csr, op.mass.csr, op.free_dofs, op.modes,
                      op.mass.csr if op.pure_neumann else None, tol=tol)
    return lam


def pointwise_factor(op: DiscreteOperator) -> float:
    """``c`` with ``max_i |v_i| <= c ||v||_M`` for nodal P1 fields.

    The consistent P1 mass dominates a quarter of the lumped mass.
    """
    return math.sqrt(4.0 / op.mesh.lumped_masses().min())


@dataclass
class GreenField:
    """``G(., y)`` on the mesh: ``nodal[:, i, k]`` is component ``i`` of column ``k``."""

    y: np.ndarray
    eps: float
    nodal: np.ndarray
    truncation_T: float
    tail_bound: float
    quadrature: dict
    op: DiscreteOperator = field(repr=False)
    tail_mass_norm: np.ndarray = None
    rate: float = None
    measured_rate: float = None
    corrected: bool = True

    @property
    def mesh(self):
        return self.op.mesh

    def column(self, k: int) -> np.ndarray:
        """Interleaved dof vector of column ``k``."""
        return self.nodal[:, :, k].reshape(-1)

    def at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.mesh.interpolate(self.nodal, x)

    def rigid_moments(self) -> np.ndarray:
        """``int v^T G(., y)`` for the rigid basis, shape (3, 2)."""
        op = self.op
        if op.modes is None:
            return np.zeros((0, 2))
        return np.stack([op.modes.T @ (op.mass @ self.column(k)) for k in range(2)], axis=1)


def _geometric_steps(tau_min: float, ratio: float, tau_max: float) -> list:
    steps = []
    tau = tau_min
    while tau < tau_max * (1 - 1e-12):
        steps.append(tau)
        tau *= ratio
    return steps


def build_green(op: DiscreteOperator, y, eps: float, *, tail_tol: float = 1e-6,
                tau_min: float | None = None, ratio: float = 2.0, tau_max: float | None = None,
                scheme: str = BE, solver: str = "cg", tol: float = 1e-12,
                lambda1: float | None = None, max_steps: int = 10_000, check: bool = True,
                corrected: bool = True, solver_obj: StepSolver | None = None,
                t_min_total: float = 0.0) -> GreenField:
    """Integrate both kernel columns of source ``y`` from 0 to a certified ``T``.

    Steps grow geometrically from ``tau_min`` (default ``eps^2/16``) by
    ``ratio`` up to ``tau_max`` (default ``1/lambda_1``) and then stay at
    ``tau_max``.  A repeated step size reuses its factorization in direct
    mode.  Marching stops once the certified tail is at most
    ``tail_tol`` times ``||G||_M`` for every column and ``t >= t_min_total``.
    """
    if scheme not in (BE, CN, CN_BE):
        raise ValueError(f"unknown scheme {scheme!r}")
    y = np.asarray(y, dtype=float)
    lam = spectral_gap(op) if lambda1 is None else float(lambda1)
    if not lam > 0:
        raise GreenError(f"non-positive decay rate {lam:g}; the operator is not coercive on V_h")
    tau_min = eps * eps / 16.0 if tau_min is None else tau_min
    tau_max = 1.0 / lam if tau_max is None else tau_max
    ramp = _geometric_steps(tau_min, ratio, tau_max)
    S = solver_obj or StepSolver(op, solver=solver, tol=tol)
    M, A = op.mass, op.stiffness

    cols, psis = [], []
    for k in range(2):
        psi, _ = initial_column(op, y, eps, k, corrected, check)
        psis.append(psi)
    u = [p.copy() for p in psis]
    G = [np.zeros(op.n_dofs) for _ in range(2)]
    times, weights = [0.0], [0.0]
    norms = [[math.sqrt(max(M.quad(p, p), 0.0))] for p in psis]
    t = 0.0
    cert = np.full(2, np.inf)
    n = 0
    while True:
        tau = ramp[n] if n < len(ramp) else tau_max
        first = n == 0
        for k in range(2):
            w = u[k]
            if scheme == BE or (scheme == CN_BE and first):
                if scheme == CN_BE:
                    h = 0.5 * tau
                    mid = S.solve(h, M @ w, x0=w)
                    new = S.solve(h, M @ mid, x0=mid)
                    G[k] += h * (mid + new)
                else:
                    new = S.solve(tau, M @ w, x0=w)
                    G[k] += tau * new
            else:
                rhs = M @ w - 0.5 * tau * (A @ w)
                new = S.solve(0.5 * tau, rhs, x0=w)
                G[k] += 0.5 * tau * (w + new)
            u[k] = new
            norms[k].append(math.sqrt(max(M.quad(new, new), 0.0)))
        t += tau
        times.append(t)
        weights.append(tau)
        n += 1
        gn = np.array([math.sqrt(max(M.quad(g, g), 0.0)) for g in G])
        cert = np.array([norms[k][-1] for k in range(2)]) / lam
        if n >= len(ramp) and t >= t_min_total and np.all(cert <= tail_tol * np.maximum(gn, 1e-300)):
            break
        if n >= max_steps:
            raise GreenError(f"tail certificate not reached after {n} steps "
                             f"(tail/|G| = {float(np.max(cert / gn)):.2e})")
    measured = None
    tail = np.asarray(norms[0][-6:]) + np.asarray(norms[1][-6:])
    if n > len(ramp) + 2 and tail[-1] > 0:
        # per-step contraction over the constant-step tail, mapped back
        # through the backward Euler amplification factor
        m = min(5, n - len(ramp))
        q = (tail[-1] / tail[-1 - m]) ** (1.0 / m)
        measured = (1.0 / q - 1.0) / tau_max if 0 < q < 1 else 0.0
    nodal = np.stack([g.reshape(-1, 2) for g in G], axis=2)
    fac = pointwise_factor(op)
    rec = {"scheme": scheme, "times": np.asarray(times), "weights": np.asarray(weights),
           "tau_min": tau_min, "tau_max": tau_max, "ratio": ratio, "n_steps": n,
           "lambda1": lam}
    return GreenField(y, eps, nodal, t, float(cert.max() * fac), rec, op,
                      tail_mass_norm=cert, rate=lam, measured_rate=measured,
                      corrected=corrected)


def discrete_delta_solve(op: DiscreteOperator, y, eps: float, k: int, *, tol: float = 1e-13,
                         check: bool = True) -> np.ndarray:
    """Static oracle ``A^{-1} M psi`` for the mollified point mass on V_h."""
    psi, _ = initial_column(op, y, eps, k, True, check)
    u, res, _ = solve_static(op, op.mass @ psi, tol=tol, compat="project")
    if not res.converged:
        raise GreenError("static oracle did not converge")
    return u


def static_crosscheck(greens, op: DiscreteOperator, f, *, tol: float = 1e-12) -> dict:
    """Compare ``u(x) = int G(.,x)^T f`` with the direct static solve of ``A u = M f``.

    ``greens`` are fields with sources ``x``.  The mollified comparison pairs
    the static solution against the same mollifier the field was built from
    and measures only the truncation and solver error.  The point comparison
    also includes the mollification error.  A load with rigid moments in the
    pure-traction case is flagged and projected before either side is formed.
    """
    greens = list(greens) if isinstance(greens, (list, tuple)) else [greens]
    b = load_vector(op, f)
    b_scale = float(np.abs(b).max())
    defect = rigid_defect(op, b)
    compatible = defect <= 1e-12
    u, _, _ = solve_static(op, b, tol=tol, compat="project")
    if op.pure_neumann:
        R = op.modes
        b = b - op.mass @ (R @ (R.T @ b))
    got, ref_m, ref_p = [], [], []
    for g in greens:
        got.append([g.column(k) @ b for k in range(2)])
        phi = Mollifier(g.y, g.eps).nodal(op.mesh)
        ref_m.append([phi @ (op.mass_scalar @ u[k::2]) for k in range(2)])
        ref_p.append(op.mesh.interpolate(u.reshape(-1, 2), g.y[None])[0])
    got, ref_m, ref_p = map(np.asarray, (got, ref_m, ref_p))
    scale = max(np.abs(ref_m).max(), np.abs(ref_p).max())
    if scale <= 1e-12 * b_scale:
        err_m = float(np.abs(got).max())
        err_p = err_m
    else:
        err_m = float(np.abs(got - ref_m).max() / scale)
        err_p = float(np.abs(got - ref_p).max() / scale)
    return {"rel_error": err_m, "rel_error_point": err_p, "compatible": bool(compatible),
            "rigid_defect": defect, "symmetry": green_symmetry(greens) if len(greens) > 1 else 0.0,
            "values": got, "reference": ref_m}


def green_symmetry(greens) -> float:
    """Max over source pairs of ``|G(y_a, y_b) - G(y_b, y_a)^T|``, relative."""
    worst, scale = 0.0, 0.0
    for a in range(len(greens)):
        for b in range(a + 1, len(greens)):
            gab = greens[a].at(greens[b].y)[0]
            gba = greens[b].at(greens[a].y)[0]
            worst = max(worst, float(np.abs(gab - gba.T).max()))
            scale = max(scale, float(np.abs(gab).max()), float(np.abs(gba).max()))
    return worst / scale if scale > 0 else 0.0


def _samples(g: GreenField, r_lo: float, r_hi: float):
    x = g.mesh.nodes
    r = np.linalg.norm(x - g.y, axis=1)
    sel = (r >= r_lo) & (r <= r_hi)
    vals = np.linalg.norm(g.nodal[sel].reshape(-1, 4), axis=1)
    return r[sel], vals, np.flatnonzero(sel)


def _r2(x, y, slope, icpt) -> float:
    res = y - (slope * x + icpt)
    return 1.0 - float(np.sum(res ** 2) / np.sum((y - y.mean()) ** 2))


def _ring_samples(g: GreenField, r_lo: float, r_hi: float, n_r: int, n_a: int):
    """``|G|`` on ``n_r`` log-spaced circles of ``n_a`` points around ``y``."""
    rad = np.geomspace(r_lo, r_hi, n_r)
    ang = 2 * np.pi * (np.arange(n_a) + 0.5) / n_a
    pts = g.y + (rad[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], -1)[None]).reshape(-1, 2)
    r = np.repeat(rad, n_a)
    ok = _inside_mesh(g.mesh, pts)
    vals = np.linalg.norm(g.at(pts[ok]).reshape(-1, 4), axis=1)
    return r[ok], vals


def green_bounds(greens, *, mu1: float, r_min: float | None = None, r_max: float | None = None,
                 min_decades: float = 1.5, r2_min: float = 0.95, far_band=(0.35, 0.6),
                 far_factor: float = 2.0,
                 n_rings: int = 16, n_angles: int = 24, holder_levels: int = 4,
                 holder_growth: float = 1.2, seed: int = 0) -> list:
    """Log-growth, far-field and Hölder checks for fields ``G(., y)``.

    The near cloud lies on log-spaced circles with ``r_min <= |x-y| <= r_max``.
    The defaults are ``eps`` and the source's boundary distance, so every
    decade carries the same weight.  ``|G|`` is the Frobenius norm.  The
    regression of the ring means of ``|G|`` on ``ln(1/r)`` must have a
    positive slope and ``R^2 >= r2_min``.  ``C`` is the smallest constant
    with ``|G| <= C (1 + ln(diam/r))`` on the near cloud.  Far samples are
    mesh nodes with ``|x-y|/diam`` in ``far_band``.  There the log term is
    O(1), and ``|G|`` must stay within ``far_factor`` of the same bound.
    """
    greens = list(greens) if isinstance(greens, (list, tuple)) else [greens]
    from .kernel import boundary_distance
    mesh = greens[0].mesh
    diam = mesh_diameter(mesh)
    rs, vs, ids = [], [], []
    for g in greens:
        lo = g.eps if r_min is None else r_min
        hi = float(boundary_distance(mesh, g.y[None])[0]) if r_max is None else r_max
        if hi <= lo or math.log10(hi / lo) < min_decades - 1e-9:
            span = math.log10(hi / lo) if hi > lo else 0.0
            raise InsufficientRange(f"|x-y| spans {span:.2f} decades, need {min_decades}")
        r, v = _ring_samples(g, lo, hi, n_rings, n_angles)
        rs.append(r)
        vs.append(v)
        ids.append(_samples(g, lo, hi)[2])
    r = np.concatenate(rs)
    v = np.concatenate(vs)
    # ring means cancel the linear part of the regular term around y
    keys = [(i, q) for i, rr in enumerate(rs) for q in np.unique(rr)]
    rad = np.array([q for _, q in keys])
    mean = np.array([vs[i][rs[i] == q].mean() for i, q in keys])
    X = np.log(1.0 / rad)
    slope, icpt = np.polyfit(X, mean, 1)
    r2 = _r2(X, mean, slope, icpt)
    r2_pts = _r2(np.log(1.0 / r), v, slope, icpt)

    far_r, far_v = [], []
    for g in greens:
        rr, vv, _ = _samples(g, far_band[0] * diam, far_band[1] * diam)
        far_r.append(rr)
        far_v.append(vv)
    far_r, far_v = np.concatenate(far_r), np.concatenate(far_v)
    C = float(np.max(v / (1.0 + np.log(diam / r))))
    log_ok = slope > 0 and r2 >= r2_min
    reports = [EstimateReport("Thm4-log", {"slope": float(slope), "intercept": float(icpt),
                                           "r2": r2, "r2_points": r2_pts, "C": C}, bool(log_ok),
                              f"{len(r)} ring points, |x-y| in [{r.min():.3g}, {r.max():.3g}] "
                              f"({math.log10(r.max() / r.min()):.2f} decades)")]
    if len(far_r):
        ratio = float(np.max(far_v / (C * (1.0 + np.log(diam / far_r)))))
        reports.append(EstimateReport("Thm4-far", {"max_ratio": ratio, "max": float(far_v.max()),
                                                   "far_factor": far_factor},
                                      bool(ratio <= far_factor), f"{len(far_r)} far nodes"))
    else:
        reports.append(EstimateReport("Thm4-far", {}, False, "no far samples"))

    # Hölder quotient |G(x')-G(x)| |x-x'|^-mu |x-y|^mu over |x-x'| = s |x-y|
    rng = np.random.default_rng(seed)
    h = greens[0].op.h
    levels = []
    for j in range(holder_levels):
        s = 0.25 / 2 ** j
        qs = []
        for g, idx in zip(greens, ids):
            if len(idx) == 0:
                continue
            pick = rng.choice(idx, size=min(200, len(idx)), replace=False)
            xs = mesh.nodes[pick]
            d = np.linalg.norm(xs - g.y, axis=1)
            ang = rng.uniform(0, 2 * np.pi, len(pick))
            step = (s * d)[:, None] * np.c_[np.cos(ang), np.sin(ang)]
            keep = s * d >= 2 * h
            if not keep.any():
                continue
            xp = xs[keep] + step[keep]
            ok = _inside_mesh(mesh, xp)
            if not ok.any():
                continue
            a = g.at(xs[keep][ok]).reshape(-1, 4)
            b = g.at(xp[ok]).reshape(-1, 4)
            dist = np.linalg.norm(step[keep][ok], axis=1)
            dd = d[keep][ok]
            qs.append(np.linalg.norm(a - b, axis=1) * dist ** (-mu1) * dd ** mu1)
        if qs:
            levels.append((s, float(np.concatenate(qs).max())))
    if len(levels) >= 2:
        qmax = np.array([q for _, q in levels])
        growth = float(qmax.max() / qmax[0])
        reports.append(EstimateReport("Thm4-holder", {"mu1": mu1, "growth": growth,
                                                       "levels": [list(p) for p in levels]},
                                      bool(growth <= holder_growth),
                                      f"{len(levels)} ratio levels"))
    else:
        reports.append(EstimateReport("Thm4-holder", {"mu1": mu1}, False,
                                      "ratio levels not resolved on this mesh"))
    return reports


def _inside_mesh(mesh, pts) -> np.ndarray:
    return mesh.locator().locate(pts)[0] >= 0


def doubling_check(g: GreenField, probes, **kw) -> dict:
    """Re-integrate to twice the certified ``T``; change at probes vs ``tail_bound``."""
    q = g.quadrature
    g2 = build_green(g.op, g.y, g.eps, tail_tol=np.inf, tau_min=q["tau_min"], ratio=q["ratio"],
                     tau_max=q["tau_max"], scheme=q["scheme"], lambda1=g.rate,
                     t_min_total=2 * g.truncation_T, check=False, corrected=g.corrected, **kw)
    change = float(np.abs(g2.at(probes) - g.at(probes)).max())
    return {"change": change, "tail_bound": g.tail_bound, "ok": change <= g.tail_bound,
            "T2": g2.truncation_T}


def write_green_csv(greens, path, points=None) -> None:
    """``x1, x2, y1, y2, G11, G12, G21, G22, tail_bound`` per sample."""
    greens = list(greens) if isinstance(greens, (list, tuple)) else [greens]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "y1", "y2", "G11", "G12", "G21", "G22", "tail_bound"])
        for g in greens:
            xs = g.mesh.nodes if points is None else np.atleast_2d(points)
            vals = g.nodal if points is None else g.at(xs)
            for x, gv in zip(xs, vals):
                w.writerow([f"{x[0]:.17g}", f"{x[1]:.17g}", f"{g.y[0]:.17g}", f"{g.y[1]:.17g}",
                            *(f"{c:.17g}" for c in gv.reshape(-1)), f"{g.tail_bound:.17g}"])
