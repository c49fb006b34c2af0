"""Sparse symmetric storage, deflated Jacobi-preconditioned conjugate
gradients, and dense/iterative symmetric-pencil eigensolvers.

The dense routines are oracles: they refuse systems larger than
``ORACLE_CAP`` free unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

ORACLE_CAP = 600


class IndefiniteError(ArithmeticError):
    """CG met a direction with negative curvature."""


class OracleCapError(ValueError):
    pass


class SparseSym:
    """Symmetric matrix in compressed-row form.

    Construction sums duplicates, sorts column indices, drops explicit
    zeros off the diagonal and checks exact symmetry of pattern and values.
    """

    def __init__(self, matrix, check: bool = True):
        csr = sp.csr_matrix(matrix, dtype=float, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError("matrix must be square")
        if check:
            diff = csr - csr.T
            if diff.nnz and np.abs(diff.data).max() != 0.0:
                raise ValueError("matrix is not exactly symmetric")
        self.csr = csr

    @classmethod
    def symmetrized(cls, matrix) -> "SparseSym":
        m = sp.csr_matrix(matrix, dtype=float)
        return cls(0.5 * (m + m.T))

    @property
    def dim(self) -> int:
        return self.csr.shape[0]

    @property
    def shape(self):
        return self.csr.shape

    @property
    def indptr(self):
        return self.csr.indptr

    @property
    def indices(self):
        return self.csr.indices

    @property
    def data(self):
        return self.csr.data

    def __matmul__(self, x):
        return self.csr @ x

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def norm(self) -> float:
        """Max absolute row sum, an upper bound for the spectral norm."""
        return float(np.abs(self.csr).sum(axis=1).max()) if self.csr.nnz else 0.0

    def submatrix(self, idx) -> "SparseSym":
        idx = np.asarray(idx)
        return SparseSym(self.csr[idx][:, idx], check=False)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def quad(self, x, y=None) -> float:
        y = x if y is None else y
        return float(y @ (self.csr @ x))

    def to_coo_text(self) -> str:
        c = self.csr.tocoo()
        order = np.lexsort((c.col, c.row))
        return "".join(f"{c.row[k]} {c.col[k]} {c.data[k]:.17g}\n" for k in order)


def _as_csr(A):
    if isinstance(A, SparseSym):
        return A.csr
    return sp.csr_matrix(A)


# --------------------------------------------------------------------------
# conjugate gradients

@dataclass
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    relres: float
    energies: list = field(default_factory=list)
    mode_drift: float = 0.0


class Deflation:
    """M-orthogonal projector onto the complement of ``modes``.

    ``modes`` must be M-orthonormal.  ``solution(x)`` removes the mode
    components of an iterate; ``residual(r)`` removes the components of a
    dual vector that lie outside the range of the singular operator.
    """

    def __init__(self, modes: np.ndarray, mass):
        self.R = np.asarray(modes, dtype=float)
        self.M = _as_csr(mass)
        self.MR = self.M @ self.R

    def solution(self, x):
        return x - self.R @ (self.MR.T @ x)

    def residual(self, r):
        return r - self.MR @ (self.R.T @ r)

    def moments(self, x):
        return self.MR.T @ x


def cg_solve(A, b, *, tol: float = 1e-10, maxit: int | None = None, modes=None, mass=None,
             x0=None, precondition: bool = True, track: bool = False) -> CGResult:
    """Jacobi-preconditioned CG with optional rigid-mode deflation.

    With ``modes`` (M-orthonormal columns) the right-hand side is made
    compatible, and every iterate and search direction is re-projected onto
    the M-orthogonal complement.  The returned ``x`` is the best iterate;
    ``converged`` flags whether ``relres <= tol`` was reached in ``maxit``.
    """
    Acsr = _as_csr(A)
    n = Acsr.shape[0]
    b = np.asarray(b, dtype=float)
    maxit = 10 * n if maxit is None else maxit
    defl = Deflation(modes, mass) if modes is not None else None
    if defl is not None:
        b = defl.residual(b)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return CGResult(np.zeros(n), True, 0, 0.0)
    diag = Acsr.diagonal()
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0) if precondition \
        else np.ones(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if defl is not None:
        x = defl.solution(x)
    r = b - Acsr @ x
    if defl is not None:
        r = defl.residual(r)
    z = dinv * r
    if defl is not None:
        z = defl.solution(z)
    p = z.copy()
    rz = float(r @ z)
    energies = []
    relres = float(np.linalg.norm(r)) / nb
    it = 0
    anorm = None
    while relres > tol and it < maxit:
        Ap = Acsr @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            if anorm is None:
                anorm = float(abs(Acsr).sum(axis=1).max())
            if pAp < -1e-13 * anorm * float(p @ p):
                raise IndefiniteError(f"negative curvature p'Ap = {pAp:.3e} at iteration {it}")
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if defl is not None:
            x = defl.solution(x)
            r = defl.residual(r)
        it += 1
        relres = float(np.linalg.norm(r)) / nb
        if track:
            energies.append(-0.5 * float(x @ b + x @ r))
        if relres <= tol:
            break
        z = dinv * r
        if defl is not None:
            z = defl.solution(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    drift = 0.0
    if defl is not None:
        drift = float(np.abs(defl.moments(x)).max())
    return CGResult(x, relres <= tol, it, relres, energies, drift)


# --------------------------------------------------------------------------
# dense oracle

@dataclass
class DenseSpectral:
    """Generalized eigenpairs ``A v = lambda M v`` on the index set ``free``.

    ``vectors`` are M-orthonormal columns over ``free``; ``residual`` is
    ``||A V - M V diag(lambda)|| / ||A||``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    free: np.ndarray
    tag: str
    residual: float


def dense_spectral(A, M=None, free=None, cap: int = ORACLE_CAP, kernel_tol: float = 1e-10
                   ) -> DenseSpectral:
    Acsr = _as_csr(A)
    n = Acsr.shape[0]
    free = np.arange(n) if free is None else np.asarray(free)
    if len(free) > cap:
        raise OracleCapError(f"{len(free)} free unknowns exceed the oracle cap {cap}")
    Af = Acsr[free][:, free].toarray()
    Af = 0.5 * (Af + Af.T)
    if M is None:
        Mf = np.eye(len(free))
        tag = "A"
    else:
        Mf = _as_csr(M)[free][:, free].toarray()
        Mf = 0.5 * (Mf + Mf.T)
        tag = "(A, M)"
    lam, V = sla.eigh(Af, Mf)
    anorm = max(np.abs(Af).sum(axis=1).max(), 1e-300)
    res = float(np.abs(Af @ V - Mf @ V * lam).max() / anorm)
    mnorm = max(np.abs(Mf).sum(axis=1).max(), 1e-300)
    lam = np.where(np.abs(lam) <= kernel_tol * anorm / mnorm, 0.0, lam)
    return DenseSpectral(lam, V, free, tag, res)


def dense_expm_action(A, M, t: float, B, free=None, cap: int = ORACLE_CAP,
                      spectral: DenseSpectral | None = None) -> np.ndarray:
    """``exp(-t M^{-1} A) B`` on the free unknowns; constrained rows stay zero."""
    if t < 0:
        raise ValueError("t must be non-negative")
    B = np.asarray(B, dtype=float)
    spec = dense_spectral(A, M, free, cap) if spectral is None else spectral
    free = spec.free
    Mcsr = _as_csr(M)
    out = np.zeros_like(B)
    if t == 0:
        out[free] = B[free]
        return out
    Mf = Mcsr[free][:, free]
    coeff = spec.vectors.T @ (Mf @ B[free])
    decay = np.exp(-t * spec.eigenvalues)
    if coeff.ndim == 1:
        out[free] = spec.vectors @ (decay * coeff)
    else:
        out[free] = spec.vectors @ (decay[:, None] * coeff)
    return out


# --------------------------------------------------------------------------
# iterative smallest eigenpairs

def _m_orthonormalize(Y, M):
    G = Y.T @ (M @ Y)
    G = 0.5 * (G + G.T)
    w, U = np.linalg.eigh(G)
    keep = w > 1e-14 * w.max()
    return Y @ (U[:, keep] / np.sqrt(w[keep]))


def smallest_eigs(A, M, k: int, *, free=None, modes=None, deflation_mass=None,
                  shift: float | None = None, tol: float = 1e-10, maxit: int = 80,
                  block: int | None = None, seed: int = 0) -> DenseSpectral:
    """k smallest eigenpairs of the pencil (A, M) on ``free`` unknowns.

    Shift-and-invert block subspace iteration with Rayleigh-Ritz on the
    full block each sweep (full M-reorthogonalization).  When ``modes``
    (given on the free unknowns) are supplied the pencil is restricted to
    their orthogonal complement in the ``deflation_mass`` inner product
    (default ``M``); the shifted solves are then bordered by the mode
    constraints, so iterates stay in the complement exactly.

    Clustered spectra stall subspace iteration; after ``maxit`` sweeps the
    same shifted solver drives an implicitly restarted Lanczos run (ARPACK)
    started from the current Ritz block.
    """
    Acsr, Mcsr = _as_csr(A), _as_csr(M)
    n = Acsr.shape[0]
    free = np.arange(n) if free is None else np.asarray(free)
    Af = Acsr[free][:, free].tocsc()
    Mf = Mcsr[free][:, free].tocsc()
    d = len(free)
    nm = 0 if modes is None else modes.shape[1]
    if k > d - nm:
        raise ValueError("k exceeds the dimension")
    if shift is None:
        # a small negative shift keeps singular pencils invertible
        shift = -1e-6 * float(Af.diagonal().max() / Mf.diagonal().max())
    K = (Af - shift * Mf).tocsc()
    if modes is None:
        defl = None
        lu = spla.splu(K)
        solve = lu.solve
    else:
        Dm = Mf if deflation_mass is None else _as_csr(deflation_mass)[free][:, free]
        defl = Deflation(modes, Dm)
        C = sp.csc_matrix(defl.MR)
        lu = spla.splu(sp.bmat([[K, C], [C.T, None]], format="csc"))

        def solve(rhs):
            pad = np.zeros((nm,) + rhs.shape[1:])
            return lu.solve(np.concatenate([rhs, pad]))[:d]
    p = min(d - nm, block or (2 * k + 8))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, p))
    if defl is not None:
        X = defl.solution(X)
    X = _m_orthonormalize(X, Mf)
    anorm = float(abs(Af).sum(axis=1).max())
    theta = None
    res = np.inf
    for _ in range(maxit):
        Y = solve(Mf @ X)
        if defl is not None:
            Y = defl.solution(Y)
        Y = _m_orthonormalize(Y, Mf)
        As = Y.T @ (Af @ Y)
        As = 0.5 * (As + As.T)
        theta, W = np.linalg.eigh(As)
        X = Y @ W
        R = Af @ X[:, :k] - (Mf @ X[:, :k]) * theta[:k]
        if defl is not None:
            R = defl.residual(R)
        res = float((np.linalg.norm(R, axis=0) / (anorm * np.linalg.norm(X[:, :k], axis=0))).max())
        if res <= tol:
            break
    if res > tol:
        op = spla.LinearOperator((d, d), matvec=lambda v: solve(v[:, None])[:, 0]
                                 if defl is None else defl.solution(solve(v[:, None])[:, 0]))
        v0 = X[:, :k].sum(axis=1)
        w, V = spla.eigsh(Af, k=k, M=Mf, sigma=shift, which="LM", OPinv=op, v0=v0,
                          tol=min(tol, 1e-12), ncv=min(d - nm, max(2 * k + 1, 20)))
        if defl is not None:
            V = defl.solution(V)
        X = _m_orthonormalize(V, Mf)
        As = X.T @ (Af @ X)
        theta, W = np.linalg.eigh(0.5 * (As + As.T))
        X = X @ W
        R = Af @ X - (Mf @ X) * theta
        if defl is not None:
            R = defl.residual(R)
        res = float((np.linalg.norm(R, axis=0) / (anorm * np.linalg.norm(X, axis=0))).max())
    return DenseSpectral(theta[:k], X[:, :k], free, "(A, M) smallest", res)


def generalized_extreme(A, M, free=None, which: str = "min", cap: int = ORACLE_CAP, **kw) -> float:
    """Smallest or largest generalized eigenvalue; dense under the cap."""
    free_n = _as_csr(A).shape[0] if free is None else len(free)
    if free_n <= cap:
        lam = dense_spectral(A, M, free).eigenvalues
        return float(lam[0] if which == "min" else lam[-1])
    if which == "min":
        return float(smallest_eigs(A, M, 1, free=free, **kw).eigenvalues[0])
    # largest of (A, M) = 1 / smallest of (M, A) for A SPD
    return 1.0 / float(smallest_eigs(M, A, 1, free=free, shift=0.0, **kw).eigenvalues[0])


def norm2_est(A) -> float:
    return float(abs(_as_csr(A)).sum(axis=1).max())


def is_close_rel(a, b, rtol) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


__all__ = [
    "SparseSym", "CGResult", "Deflation", "cg_solve", "DenseSpectral", "dense_spectral",
    "dense_expm_action", "smallest_eigs", "generalized_extreme", "IndefiniteError",
    "OracleCapError", "ORACLE_CAP",
]
