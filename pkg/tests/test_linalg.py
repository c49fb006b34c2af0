import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import eigh, expm

from elastokernel.linalg import (IndefiniteError, OracleCapError, SparseSym, cg_solve,
                                 dense_expm_action, dense_spectral, smallest_eigs)


def laplace_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_sparse_sym_rejects_asymmetry():
    m = laplace_1d(5).tolil()
    m[0, 1] = -1.5
    with pytest.raises(ValueError):
        SparseSym(m)
    s = SparseSym.symmetrized(m)
    assert s.csr[0, 1] == s.csr[1, 0] == -1.25


def test_sparse_sym_basic_ops():
    A = SparseSym(laplace_1d(6))
    x = np.arange(6.0)
    assert np.allclose(A @ x, laplace_1d(6) @ x)
    assert A.quad(x) == pytest.approx(x @ (laplace_1d(6) @ x))
    assert A.norm() == 4.0
    assert A.submatrix([0, 1]).toarray().tolist() == [[2, -1], [-1, 2]]
    lines = A.to_coo_text().splitlines()
    assert len(lines) == A.csr.nnz and lines[0] == "0 0 2"


def test_cg_matches_direct():
    A = laplace_1d(200)
    b = np.sin(np.linspace(0, 3, 200))
    res = cg_solve(A, b, tol=1e-12)
    assert res.converged
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(res.x - ref) / np.linalg.norm(ref) < 1e-9


def test_cg_zero_rhs():
    res = cg_solve(laplace_1d(10), np.zeros(10))
    assert res.converged and res.iterations == 0 and not res.x.any()


def test_cg_detects_indefinite():
    A = sp.diags([1.0, -1.0, 2.0]).tocsr()
    with pytest.raises(IndefiniteError):
        cg_solve(A, np.ones(3), precondition=False)


def test_cg_energy_decreases():
    res = cg_solve(laplace_1d(50), np.ones(50), tol=1e-12, track=True)
    e = np.asarray(res.energies)
    assert np.all(np.diff(e) <= 1e-12 * abs(e).max())


def test_deflated_cg_on_singular_operator():
    # periodic Laplacian: kernel spanned by the constant vector
    n = 40
    L = laplace_1d(n).tolil()
    L[0, n - 1] = L[n - 1, 0] = -1
    L = L.tocsr()
    M = sp.identity(n, format="csr")
    modes = np.ones((n, 1)) / np.sqrt(n)
    b = np.cos(2 * np.pi * np.arange(n) / n) + 0.3      # has a kernel component
    res = cg_solve(L, b, tol=1e-12, modes=modes, mass=M)
    assert res.converged
    assert abs(modes[:, 0] @ res.x) < 1e-12
    assert np.allclose(L @ res.x, b - 0.3, atol=1e-9)


def test_dense_spectral_cap():
    with pytest.raises(OracleCapError):
        dense_spectral(laplace_1d(50), cap=10)


def test_dense_expm_action_against_expm():
    n = 30
    A = laplace_1d(n).toarray()
    M = np.diag(np.linspace(1, 2, n))
    B = np.random.default_rng(1).standard_normal(n)
    got = dense_expm_action(A, M, 0.3, B)
    want = expm(-0.3 * np.linalg.solve(M, A)) @ B
    assert np.allclose(got, want, atol=1e-12)


def test_dense_expm_action_keeps_constrained_rows_zero():
    A = laplace_1d(10)
    B = np.ones(10)
    free = np.arange(1, 9)
    out = dense_expm_action(A, sp.identity(10), 0.1, B, free=free)
    assert out[0] == 0 and out[-1] == 0


def test_smallest_eigs_match_dense():
    n = 400
    A = laplace_1d(n)
    M = sp.diags(np.linspace(1, 3, n)).tocsr()
    ref = eigh(A.toarray(), M.toarray(), eigvals_only=True)[:4]
    got = smallest_eigs(A, M, 4, tol=1e-11)
    assert np.allclose(got.eigenvalues, ref, rtol=1e-8)
    assert got.residual < 1e-8
