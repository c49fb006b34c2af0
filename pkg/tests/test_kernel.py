import math

import numpy as np
import pytest
from scipy import integrate

from elastokernel.domain import DomainError
from elastokernel.kernel import (Mollifier, ResolutionError, boundary_distance,
                                 bump_normalization, build_kernel_column, build_kernel_field,
                                 diagonal_slope, epsilon_extrapolate, gaussian_fit, holder_probe,
                                 initial_column, initial_trace, mesh_diameter, symmetry_check,
                                 write_kernel_samples)
from elastokernel.linalg import dense_expm_action
from elastokernel.parabolic import BE, CN_BE, TimeGrid

from conftest import square_op


def test_bump_normalization():
    c = bump_normalization(2)
    val, _ = integrate.dblquad(lambda r, th: r * math.exp(-1 / (1 - r * r)), 0, 2 * math.pi,
                               0, 1)
    assert c * val == pytest.approx(1.0, rel=1e-10)
    assert c == pytest.approx(2.1436, abs=1e-4)


def test_mollifier_nodal_unit_mass(mixed16):
    phi = Mollifier([0.5, 0.5], 0.2).nodal(mixed16.mesh)
    assert mixed16.mesh.lumped_masses() @ phi == pytest.approx(1.0, rel=1e-14)
    assert phi[np.linalg.norm(mixed16.mesh.nodes - 0.5, axis=1) >= 0.2].max() == 0.0


def test_initial_column_checks(mixed16):
    with pytest.raises(ResolutionError):
        initial_column(mixed16, [0.5, 0.5], 0.1, 0)
    with pytest.raises(DomainError):
        initial_column(mixed16, [0.5, 0.1], 0.2, 0)
    with pytest.raises(DomainError):
        initial_column(mixed16, [1.5, 0.5], 0.2, 0)


def test_boundary_distance_and_diameter(mixed16):
    d = boundary_distance(mixed16.mesh, [[0.5, 0.5], [0.1, 0.7]])
    assert np.allclose(d, [0.5, 0.1])
    assert mesh_diameter(mixed16.mesh) == pytest.approx(math.sqrt(2))


def test_column_matches_semigroup_oracle(mixed16):
    op = mixed16
    grid = TimeGrid.uniform(0.1, 200, CN_BE)
    col = build_kernel_column(op, [0.5, 0.5], 0.2, 1, grid, solver="direct")
    ref = dense_expm_action(op.stiffness, op.mass, 0.1, col.psi, free=op.free_dofs)
    d = col.trajectory.final - ref
    assert op.mass_norm(d) / op.mass_norm(ref) < 1e-5


def test_corrected_kernel_stays_deflated(neumann8):
    op = neumann8
    grid = TimeGrid.uniform(0.5, 10)
    fld = build_kernel_field(op, [0.5, 0.5], 0.36, grid, solver="direct")
    S = fld.slices()
    for k in range(2):
        mom = op.modes.T @ (op.mass @ S[:, :, :, k].reshape(len(S), -1).T)
        assert np.abs(mom).max() < 1e-12


def test_uncorrected_kernel_tends_to_rigid_limit(neumann8):
    op = neumann8
    grid = TimeGrid.uniform(40.0, 200)
    fld = build_kernel_field(op, [0.5, 0.5], 0.36, grid, corrected=False, solver="direct")
    x = np.array([[0.3, 0.3], [0.8, 0.6]])
    lim = fld.rigid_limit(x)
    # the mollified limit averages omega(y) over the bump; affine fields are exact
    assert np.abs(fld.at(x, 40.0) - lim).max() < 1e-6 * np.abs(lim).max()


def test_symmetry_pairing(mixed16):
    grid = TimeGrid.uniform(0.05, 10)
    rep = symmetry_check(mixed16, [[0.4, 0.5], [0.6, 0.6]], [[0.3, 0.7]], [0.02, 0.05], 0.2,
                         grid, solver="direct")
    assert rep.constants["pairing_max_rel"] <= 1e-9


def test_field_shapes_and_samples(tmp_path, mixed16):
    grid = TimeGrid.uniform(0.05, 5)
    fld = build_kernel_field(mixed16, [0.5, 0.5], 0.2, grid, solver="direct")
    assert fld.slices().shape == (6, mixed16.mesh.n_nodes, 2, 2)
    assert fld.at([[0.5, 0.5], [0.2, 0.3]], 0.03).shape == (2, 2, 2)
    write_kernel_samples(fld, [[0.5, 0.5]], fld.times[1:], tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0].startswith("x1,x2,y1,y2,t") and len(lines) == 6


def test_epsilon_ladder_cauchy(mixed16):
    grid = TimeGrid.uniform(0.1, 20)
    col, rep = epsilon_extrapolate(mixed16, [0.5, 0.5], 0, grid, [0.36, 0.27, 0.18],
                                   [([0.3, 0.7], 0.1)], t_floor=0.05, solver="direct")
    assert rep["cauchy"]
    assert col.psi.shape == (mixed16.n_dofs,)


def test_gaussian_fit_on_small_field(mixed16):
    grid = TimeGrid.graded(4.0, 1e-3, 1.3, tau_max=0.1)
    fld = build_kernel_field(mixed16, [0.5, 0.5], 0.2, grid, solver="direct")
    rep = gaussian_fit(fld)
    assert rep.passed and rep.constants["theta"] > 0
    assert rep.constants["C"] <= rep.constants["ceiling"] * (1 + 1e-12)


def test_diagonal_slope_report(mixed16):
    grid = TimeGrid.graded(0.2, 1e-3, 1.2)
    fld = build_kernel_field(mixed16, [0.5, 0.5], 0.2, grid, solver="direct")
    rep = diagonal_slope(fld, 0.05, 0.2)
    assert rep.constants["slope"] < 0


def test_holder_probe_affine_fields():
    op = square_op("DNNN", 32)
    x = op.mesh.nodes
    # affine field: oscillation on B(x0, rho) is linear in rho, exponent 1
    u = op.constrain(np.c_[x[:, 0] + 2 * x[:, 1], -x[:, 1]].ravel())
    rep = holder_probe(op, u, "interior", [0.5, 0.5], 0.4, levels=3)
    assert rep.constants["mu0"] == pytest.approx(1.0, abs=0.05)
    # field vanishing on the bottom edge: Dirichlet integral on half balls ~ rho^2
    v = np.c_[x[:, 1], 0 * x[:, 1]].ravel()
    rep = holder_probe(op, v, "boundary", [0.5, 0.0], 0.4, levels=3)
    assert rep.constants["mu0"] == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ResolutionError):
        holder_probe(op, u, "interior", [0.5, 0.5], 0.3, levels=6)


def test_initial_trace_decreases(mixed16):
    psi = lambda x: np.c_[np.sin(np.pi * x[:, 0]) * x[:, 1] ** 2, np.cos(x[:, 0])]
    rep = initial_trace(mixed16, psi, [0.5, 0.5], fractions=(1e-1, 1e-2, 1e-3),
                        solver="direct")
    errs = rep.constants["errors"]
    assert errs[0] > errs[1] > errs[2]
