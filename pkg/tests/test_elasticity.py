import numpy as np
import pytest

from elastokernel.domain import triangulate, unit_square, l_shape
from elastokernel.elasticity import (TensorError, cellwise_tensor, lame_array, make_lame_tensor,
                                     nodal_gradients, project_rigid, quadratic_form,
                                     read_tensor_spec, rigid_basis, scalar_mass, strain,
                                     symmetry_residual, vector_mass_apply)


def test_lame_entries():
    a = lame_array(mu=1.0, lam=2.0)
    assert a[0, 0, 0, 0] == 4.0          # 2 mu + lambda
    assert a[0, 1, 0, 1] == 2.0          # lambda
    assert a[0, 0, 1, 1] == 1.0          # mu
    assert a[0, 1, 1, 0] == 1.0          # mu
    assert symmetry_residual(a) == 0.0


def test_lame_quadratic_form_on_symmetric_matrices():
    a = lame_array(0.7, 1.3)
    rng = np.random.default_rng(3)
    xi = rng.standard_normal((50, 2, 2))
    xi = 0.5 * (xi + np.swapaxes(xi, 1, 2))
    want = 2 * 0.7 * np.sum(xi * xi, axis=(1, 2)) + 1.3 * np.trace(xi, axis1=1, axis2=2) ** 2
    assert np.allclose(quadratic_form(a, xi), want, rtol=1e-13)


def test_lame_ellipticity_constants():
    t = make_lame_tensor(1.0, 1.0)
    assert (t.kappa1, t.kappa2) == (2.0, 4.0)
    rep = t.check()
    assert rep["ok"] and rep["symmetry_residual"] == 0.0


def test_lame_rejects_nonpositive_mu():
    with pytest.raises(TensorError):
        make_lame_tensor(0.0, 1.0)
    with pytest.warns(UserWarning):
        make_lame_tensor(0.5, 0.0)


def test_cellwise_rejects_asymmetric():
    mesh = triangulate(unit_square(), 0.5)
    vals = np.broadcast_to(lame_array(1, 1), (mesh.n_triangles, 2, 2, 2, 2)).copy()
    vals[0, 0, 1, 0, 0] += 0.1
    with pytest.raises(TensorError):
        cellwise_tensor(vals, 1.0, 5.0)


def test_read_tensor_spec():
    mesh = triangulate(unit_square(), 0.5)
    t = read_tensor_spec("lame 1 2")
    assert np.array_equal(t.at([[0, 0]])[0], lame_array(1, 2))
    entries = " ".join(map(str, lame_array(1, 1).ravel()))
    t = read_tensor_spec(f"cells {mesh.n_triangles}\nkappa 2 4\ndefault {entries}\n", mesh)
    assert t.cell_values.shape == (mesh.n_triangles, 2, 2, 2, 2)
    with pytest.raises(TensorError):
        read_tensor_spec(f"cells 1\nkappa 2 4\n0 {entries}\n", mesh)


def test_scaled_tensor():
    t = make_lame_tensor(1.0, 1.0).scaled(3.0)
    assert t.kappa1 == 6.0
    assert np.allclose(t.at([[0.1, 0.2]])[0], 3 * lame_array(1, 1))


def test_rigid_basis_orthonormal_and_strain_free():
    mesh = triangulate(l_shape(), 0.3)
    Ms = scalar_mass(mesh)
    R = rigid_basis(mesh, Ms)
    G = R.nodal.T @ vector_mass_apply(Ms, R.nodal)
    assert np.allclose(G, np.eye(3), atol=1e-13)
    for k in range(3):
        assert np.abs(strain(mesh, R.nodal[:, k])).max() < 1e-12
    # nodal vectors are the affine fields evaluated at the nodes
    assert np.allclose(R.evaluate(mesh.nodes)[:, 0, :].ravel(), R.nodal[:, 0], atol=1e-13)


def test_project_rigid_idempotent():
    mesh = triangulate(unit_square(), 0.3)
    R = rigid_basis(mesh)
    u = np.random.default_rng(0).standard_normal(2 * mesh.n_nodes)
    p = project_rigid(u, R)
    assert np.allclose(project_rigid(p, R), p, atol=1e-12)
    assert np.allclose(project_rigid(R.nodal[:, 2], R), R.nodal[:, 2], atol=1e-12)


def test_gradients_of_affine_field_are_exact():
    mesh = triangulate(l_shape(), 0.3)
    B = np.array([[0.3, -1.0], [2.0, 0.5]])
    u = (mesh.nodes @ B.T).ravel()
    g = nodal_gradients(mesh, u)
    assert np.allclose(g, B[None], atol=1e-12)
    eps = strain(mesh, u)
    assert np.allclose(eps, 0.5 * (B + B.T)[None], atol=1e-12)
