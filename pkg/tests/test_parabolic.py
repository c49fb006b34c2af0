import numpy as np
import pytest

from elastokernel.green import spectral_gap
from elastokernel.linalg import dense_expm_action, dense_spectral
from elastokernel.parabolic import (BE, CN, CN_BE, StepSolver, TimeGrid, backward_solve,
                                    decay_rate, step_parabolic, weak_residual,
                                    write_energy_csv, write_trajectory_csv)


def bump(op, c=(0.5, 0.5), w=0.3):
    x = op.mesh.nodes
    g = np.exp(-np.sum((x - c) ** 2, axis=1) / w ** 2)
    return op.constrain(np.c_[g, 0.5 * g].ravel())


def rel_err(op, u, v):
    d = u - v
    return op.mass_norm(d) / op.mass_norm(v)


def test_time_grid_graded_hits_marks():
    g = TimeGrid.graded(1.0, 1e-4, 1.3, tau_max=0.05, hit=[0.01, 0.1])
    assert g.t_end == 1.0
    for m in (0.01, 0.1):
        assert np.any(g.times == m)
    assert np.all(g.steps <= 0.05 + 1e-15)
    h = g.halved()
    assert len(h) == 2 * len(g)


def test_time_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.1, 0.1]))
    with pytest.raises(ValueError):
        TimeGrid.uniform(1.0, 4, scheme="rk4")


@pytest.mark.parametrize("scheme,order", [(BE, 1.0), (CN_BE, 2.0)])
def test_convergence_order_against_oracle(mixed8, scheme, order):
    op = mixed8
    psi = bump(op)
    spec = dense_spectral(op.stiffness, op.mass, op.free_dofs)
    t = 0.1
    ref = dense_expm_action(op.stiffness, op.mass, t, psi, spectral=spec)
    errs = []
    for n in (20, 40, 80):
        tr = step_parabolic(op, TimeGrid.uniform(t, n, scheme), psi, solver="direct")
        errs.append(rel_err(op, tr.final, ref))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) < 0.2)


def test_direct_and_cg_agree(mixed8):
    psi = bump(mixed8)
    g = TimeGrid.uniform(0.2, 10, CN)
    a = step_parabolic(mixed8, g, psi, solver="direct").final
    b = step_parabolic(mixed8, g, psi, solver="cg", tol=1e-13).final
    assert rel_err(mixed8, a, b) < 1e-10


def test_step_solver_caches_factorizations(mixed8):
    S = StepSolver(mixed8, "direct")
    rhs = mixed8.mass @ bump(mixed8)
    S.solve(0.1, rhs)
    S.solve(0.1, rhs)
    S.solve(0.2, rhs)
    assert sum(1 for k in S._cache if k[0] == "lu") == 2


def test_rigid_moments_conserved(neumann8):
    op = neumann8
    psi = bump(op, (0.4, 0.6))
    tr = step_parabolic(op, TimeGrid.uniform(2.0, 1000, BE), psi, solver="direct", store=False)
    mom = tr.rigid_moments
    drift = np.abs(np.diff(mom, axis=0)).max() / np.abs(mom[0]).max()
    assert drift <= 1e-12
    assert np.abs(mom).max() > 1e-3


def test_v_mode_rejects_rigid_data(neumann8):
    with pytest.raises(ValueError):
        step_parabolic(neumann8, TimeGrid.uniform(0.1, 2), bump(neumann8), v_mode=True)


@pytest.mark.parametrize("scheme,order", [(BE, 1.0), (CN, 2.0)])
def test_weak_residual_order(mixed8, scheme, order):
    op = mixed8
    psi = bump(op)
    x = op.mesh.nodes
    phi0 = op.constrain(np.c_[x[:, 1] * (1 - x[:, 0]), x[:, 0] * x[:, 1]].ravel())
    tests = [lambda t: (0.5 - t) * phi0, lambda t: np.sin(2 * np.pi * t) * phi0]
    res = []
    for n in (100, 200, 400):
        tr = step_parabolic(op, TimeGrid.uniform(0.5, n, scheme), psi, solver="direct")
        res.append(np.abs(weak_residual(tr, op, None, tests)).max())
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(np.abs(rates - order) < 0.1)


def test_stationary_rigid_state_has_zero_residual(neumann8):
    op = neumann8
    psi = op.modes[:, 2]
    tr = step_parabolic(op, TimeGrid.uniform(0.3, 6), psi, solver="direct")
    assert rel_err(op, tr.final, psi) < 1e-12
    res = weak_residual(tr, op, None, [lambda t: (0.3 - t) * op.modes[:, 0]])
    assert abs(res[0]) < 1e-13


def test_scaling_equivariance(mixed8):
    # L -> 2L with t -> t/2 yields the same discrete states
    op, op2 = mixed8, mixed8.scaled(2.0)
    psi = bump(op)
    a = step_parabolic(op, TimeGrid.uniform(0.4, 8, BE), psi, solver="direct")
    b = step_parabolic(op2, TimeGrid.uniform(0.2, 8, BE), psi, solver="direct")
    assert np.abs(a.states - b.states).max() < 1e-12 * np.abs(a.states).max()


def test_duhamel_forcing_matches_oracle(mixed8):
    # constant forcing: u(t) = e^{-tL} psi + L^{-1} (I - e^{-tL}) f
    op = mixed8
    psi = bump(op)
    fvec = op.constrain(np.tile([0.0, -1.0], op.mesh.n_nodes))
    spec = dense_spectral(op.stiffness, op.mass, op.free_dofs)
    t = 0.3
    lam, V = spec.eigenvalues, spec.vectors
    M = op.mass.toarray()[np.ix_(op.free_dofs, op.free_dofs)]
    cp = V.T @ (M @ psi[op.free_dofs])
    cf = V.T @ (M @ fvec[op.free_dofs])
    ref = np.zeros(op.n_dofs)
    ref[op.free_dofs] = V @ (np.exp(-t * lam) * cp + (1 - np.exp(-t * lam)) / lam * cf)
    errs = []
    for n in (40, 80):
        tr = step_parabolic(op, TimeGrid.uniform(t, n, CN_BE), psi, lambda s: fvec,
                            solver="direct")
        errs.append(rel_err(op, tr.final, ref))
    assert errs[1] < 2e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_backward_solve_times(mixed8):
    g = TimeGrid.uniform(0.2, 4)
    tr = backward_solve(mixed8, g, bump(mixed8), b=1.0, solver="direct")
    assert tr.times[0] == 1.0 and tr.times[-1] == pytest.approx(0.8)


def test_decay_rate_matches_lambda1(mixed8):
    op = mixed8
    lam = spectral_gap(op)
    rng = np.random.default_rng(5)
    psi = op.constrain(rng.standard_normal(op.n_dofs))
    tr = step_parabolic(op, TimeGrid.uniform(12.0, 240, BE), psi, solver="direct", store=False)
    fit = decay_rate(op, tr, lambda1=lam)
    assert fit.relative_error < 1e-6
    assert fit.raw_rate < fit.rate


def test_csv_export(tmp_path, mixed8):
    tr = step_parabolic(mixed8, TimeGrid.uniform(0.1, 3), bump(mixed8), solver="direct")
    write_trajectory_csv(tr, tmp_path / "t.csv")
    write_energy_csv(tr, tmp_path / "e.csv")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 5
    assert (tmp_path / "t.csv").stat().st_size > 0
