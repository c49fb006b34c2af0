"""Acceptance criteria, one test and one printed pass/fail line each.

Run on its own with ``pytest tests/test_acceptance.py -v`` (about 3 minutes).
"""
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from elastokernel import harness as H
from elastokernel.assembly import estimate_constants
from elastokernel.green import build_green, discrete_delta_solve, green_bounds, green_symmetry
from elastokernel.green import spectral_gap
from elastokernel.kernel import (diagonal_slope, estimate_suite, flat_tail, gaussian_fit,
                                 initial_column, initial_trace, mesh_diameter, symmetry_check)
from elastokernel.linalg import dense_expm_action, dense_spectral
from elastokernel.parabolic import BE, CN, TimeGrid, decay_rate, step_parabolic

from conftest import record, square_op

pytestmark = pytest.mark.slow

SOURCES = [(0.4, 0.5), (0.6, 0.55), (0.5, 0.7)]


def smooth(x):
    return np.c_[np.sin(np.pi * x[:, 0]) * np.cos(0.5 * np.pi * x[:, 1]) + 0.3,
                 x[:, 0] * x[:, 1] - 0.2 * np.cos(np.pi * x[:, 1])]


def context(n, eps, sources=((0.5, 0.5),), **opts):
    d = {"domain": "unit_square:DNNN", "tensor": {"kind": "lame", "mu": 1.0, "lambda": 1.0},
         "mesh": {"target_h": np.sqrt(2) / n}, "eps": [eps], "sources": sources,
         "suites": [], "seed": 7, "solver": "direct",
         "time": {"t_end": 4.0, "tau_min": 1e-5, "ratio": 1.2, "tau_max": 0.1},
         "options": opts}
    cfg = H.ExperimentConfig.from_dict(d)
    ctx = H.Context(cfg, None, 1)
    ctx.domain = H.parse_domain(cfg.domain)
    ctx.op = square_op("DNNN", n)
    ctx.mesh = ctx.op.mesh
    return ctx


@pytest.fixture(scope="module")
def fine():
    """Mixed square at h = 1/128 with the kernel field for eps = 0.025."""
    t0 = time.perf_counter()
    ctx = context(128, 0.025)
    fld = ctx.kernel_field()
    return ctx, fld, time.perf_counter() - t0


def test_c01_semigroup_oracle():
    t0 = time.perf_counter()
    op = square_op("DNNN", 12)
    psi = [initial_column(op, (0.5, 0.5), 2 * op.h, k)[0] for k in range(2)]
    spec = dense_spectral(op.stiffness, op.mass, op.free_dofs)
    # baseline steps per target time; t = 1 is dominated by the second mode for k = 1
    base = {BE: {0.01: 256, 0.1: 512, 1.0: 16384}, CN: {0.01: 32, 0.1: 64, 1.0: 256}}
    order = {BE: 1.0, CN: 2.0}
    worst_err, worst_dev, rows = 0.0, 0.0, []
    for scheme, plan in base.items():
        for t, n0 in plan.items():
            errs = []
            for n in (n0, 2 * n0, 4 * n0):
                e = 0.0
                for p in psi:
                    ref = dense_expm_action(op.stiffness, op.mass, t, p, spectral=spec)
                    u = step_parabolic(op, TimeGrid.uniform(t, n, scheme), p, solver="direct",
                                       store=False).final
                    e = max(e, op.mass_norm(u - ref) / op.mass_norm(ref))
                errs.append(e)
            rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
            worst_err = max(worst_err, errs[0])
            worst_dev = max(worst_dev, float(np.abs(rates - order[scheme]).max()))
            rows.append(f"{scheme}@{t:g}:{rates.mean():.2f}")
    dt = time.perf_counter() - t0
    ok = worst_err <= 2e-3 and worst_dev <= 0.2 and dt <= 30 and op.n_dofs <= 600
    assert record(1, "semigroup oracle", ok,
                  f"{op.n_dofs} dofs, max baseline err {worst_err:.2e} (<=2e-3), "
                  f"orders {' '.join(rows)} (dev {worst_dev:.3f} <= 0.2), {dt:.1f}s <= 30s")


def test_c02_green_oracle():
    t0 = time.perf_counter()
    op = square_op("DDDD", 16)
    y, eps = (0.5, 0.5), 0.2
    g = build_green(op, y, eps, tail_tol=1e-10, tol=1e-13, solver="direct")
    err = 0.0
    for k in range(2):
        ref = discrete_delta_solve(op, y, eps, k)
        err = max(err, op.mass_norm(g.column(k) - ref) / op.mass_norm(ref))
    dt = time.perf_counter() - t0
    ok = err <= 1e-6 and dt <= 60 and len(op.free_dofs) <= 600
    assert record(2, "Green oracle (pure Dirichlet)", ok,
                  f"{len(op.free_dofs)} free dofs, rel err {err:.2e} (<=1e-6), "
                  f"{g.quadrature['n_steps']} steps, {dt:.1f}s <= 60s")


def test_c03_conservation():
    op = square_op("NNNN", 12)
    psi = smooth(op.mesh.nodes).reshape(-1)
    tr = step_parabolic(op, TimeGrid.uniform(2.0, 1000, BE), psi, solver="direct", store=False)
    mom = tr.rigid_moments
    drift = float(np.abs(np.diff(mom, axis=0)).max() / np.abs(mom[0]).max())
    ok = drift <= 1e-12 and len(mom) >= 1001 and np.abs(mom[0]).min() > 1e-3
    assert record(3, "rigid moment conservation", ok,
                  f"{len(mom) - 1} steps, 3 moments, max per-step drift {drift:.1e} (<=1e-12)")


def test_c04_symmetry():
    grid = TimeGrid.uniform(0.05, 20)
    pair = {}
    for labels in ("DNNN", "NNNN", "DDDD"):
        op = square_op(labels, 16)
        rep = symmetry_check(op, SOURCES[:2], SOURCES[2:], [0.02, 0.05], 2 * op.h, grid,
                             solver="direct")
        pair[labels] = rep.constants["pairing_max_rel"]
    kern, green = [], []
    for n in (16, 32, 64):
        op = square_op("DNNN", n)
        eps = 2 * op.h
        rep = symmetry_check(op, SOURCES[:2], SOURCES[2:], [0.02, 0.05], eps, grid,
                             solver="direct")
        pair[f"DNNN/{n}"] = rep.constants["pairing_max_rel"]
        kern.append(rep.constants["pointwise_max"])
        gs = [build_green(op, y, eps, tail_tol=1e-8, solver="direct") for y in SOURCES]
        green.append(green_symmetry(gs))
    worst = max(pair.values())
    mono = bool(np.all(np.diff(kern) < 0) and np.all(np.diff(green) < 0))
    ok = worst <= 1e-9 and mono
    assert record(4, "symmetry", ok,
                  f"max pairing {worst:.1e} (<=1e-9) on {len(pair)} meshes; pointwise kernel "
                  f"{' > '.join(f'{v:.1e}' for v in kern)}, Green "
                  f"{' > '.join(f'{v:.1e}' for v in green)}")


def test_c05_kernel_scalings(fine):
    ctx, fld, t_build = fine
    t0 = time.perf_counter()
    d_y, r_ladder = ctx.state["kernel_ladder"]
    reps = {r.estimate_id: r for r in estimate_suite(fld, d_y, r_ladder=r_ladder,
                                                     p_grid=(1.0,), pgrad_grid=())}
    s1 = reps["Thm1-1"].constants["p=1"]["slope"]
    eps = ctx.cfg.eps[0]
    diag = diagonal_slope(fld, 2 * eps * eps, min(16 * eps * eps, (d_y / 2) ** 2))
    sd = diag.constants["slope"]
    dt = t_build + time.perf_counter() - t0
    ok = abs(s1 - 2.0) <= 0.3 and abs(sd + 1.0) <= 0.15 and dt <= 300
    assert record(5, "kernel scalings", ok,
                  f"h=1/128 eps={eps:g}, L1 slope {s1:.3f} (2+-0.3), "
                  f"diagonal slope {sd:.3f} (-1+-0.15), {dt:.0f}s <= 300s")


def test_c06_gaussian(fine):
    ctx, fld, _ = fine
    diam = mesh_diameter(ctx.mesh)
    g = gaussian_fit(fld, q_max=16.0, diam=diam)
    tail = flat_tail(fld, g.constants["C"], diam) if g.passed else None
    qr = g.details.get("q_range", [np.nan, np.nan])
    ok = bool(g.passed and tail is not None and tail.passed and qr[0] == 0.0 and qr[1] >= 15)
    detail = (f"theta {g.constants.get('theta', float('nan')):.3f} > 0, C "
              f"{g.constants.get('C', float('nan')):.3f}, zero violations over "
              f"{g.details.get('n_samples', 0)} samples with q in [{qr[0]:.1f}, {qr[1]:.1f}]")
    if tail is not None:
        detail += f"; tail max {tail.constants['max_K']:.3f} <= {tail.constants['bound']:.3f}"
    assert record(6, "Gaussian fit", ok, detail)


def test_c07_green_log_bound():
    op = square_op("DNNN", 256)
    eps = 2 * op.h
    g = build_green(op, (0.5, 0.5), eps, tail_tol=1e-4, ratio=4.0, solver="direct",
                    lambda1=spectral_gap(op))
    reps = {r.estimate_id: r for r in green_bounds([g], mu1=0.5)}
    lg, far = reps["Thm4-log"], reps["Thm4-far"]
    c = lg.constants
    ok = bool(lg.passed and far.passed and c["slope"] > 0 and c["r2"] >= 0.95)
    assert record(7, "Green log bound", ok,
                  f"h=1/256, {lg.samples}, slope {c['slope']:.3f} > 0, "
                  f"R2 {c['r2']:.3f} (>=0.95), far ratio {far.constants['max_ratio']:.2f} "
                  f"(<= {far.constants['far_factor']:g})")


def test_c08_korn():
    dr = estimate_constants(square_op("DDDD", 8), 3)
    worst = max(lv.first_korn_ratio for lv in dr.mesh_ladder)
    nr = estimate_constants(square_op("NNNN", 8), 3)
    # the deflated constant rho: min ||eps(u)|| / ||u|| off the rigid modes
    cs = [lv.coercivity_rho for lv in nr.mesh_ladder]
    change = nr.relative_changes["coercivity_rho"][-1]
    ok = worst <= 2.0 + 1e-9 and min(cs) > 0 and change < 0.1
    assert record(8, "Korn suite", ok,
                  f"first-Korn max {worst:.6f} (<=2+1e-9) on 3 levels; Neumann rho "
                  f"{' '.join(f'{c:.4f}' for c in cs)}, last change {change:.3f} (<0.1)")


def test_c09_decay():
    rows, ok = [], True
    for labels in ("DNNN", "NNNN"):
        op = square_op(labels, 32)
        lam = spectral_gap(op)
        psi = op.constrain(smooth(op.mesh.nodes).reshape(-1))
        if op.pure_neumann:
            psi -= op.modes @ (op.modes.T @ (op.mass @ psi))
        tr = step_parabolic(op, TimeGrid.uniform(10.0, 200, BE), psi, solver="direct",
                            v_mode=op.pure_neumann, store=False)
        fit = decay_rate(op, tr, lambda1=lam)
        rel = abs(fit.rate - lam) / lam
        ok &= rel <= 0.05
        rows.append(f"{labels} rate {fit.rate:.4f} vs lambda1 {lam:.4f} ({rel:.1e})")
    assert record(9, "decay rate", ok, "; ".join(rows) + " (<=5%)")


def test_c10_initial_trace(fine):
    ctx, _, _ = fine
    x0 = (0.5, 0.5)
    rep = initial_trace(ctx.op, smooth, x0, fractions=(1e-2, 1e-3, 1e-4), solver="direct")
    e = rep.constants["errors"]
    ok = rep.passed and e[-1] <= 1e-2 * rep.constants["sup_psi"]
    assert record(10, "initial trace", ok,
                  f"errors {' > '.join(f'{v:.1e}' for v in e)}, final <= "
                  f"{1e-2 * rep.constants['sup_psi']:.1e}")


def test_c11_holder():
    ctx = context(64, 0.05, interior=[0.5, 0.5], r_interior=0.25, boundary=[0.5, 0.0],
                  r_boundary=0.25)
    reps = H.suite_holder(ctx)
    ok = all(r.passed and r.constants["mu0"] > 0 for r in reps) and len(reps) == 2
    assert record(11, "Holder probes", ok, "; ".join(
        f"{r.estimate_id} mu0 {r.constants['mu0_coarse']:.3f} -> {r.constants['mu0']:.3f}"
        for r in reps) + " (>0, +-20%)")


def test_c12_determinism(tmp_path):
    reports = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        proc = subprocess.run([sys.executable, "-m", "elastokernel", "run", "square_mixed.cfg",
                               "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode in (0, 1), proc.stderr
        reports.append(json.loads((out / "report.json").read_text()))
    a, b = (H.dumps(H.strip_timing(r)) for r in reports)
    ok = a == b and reports[0]["passed"]
    assert record(12, "determinism", ok,
                  f"two CLI runs, {len(a)} bytes after removing timing, identical: {a == b}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
