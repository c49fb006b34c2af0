"""Coefficient tensors, strain, the bilinear-form density and the space of
rigid displacements with its L2 projection.

Tensor entries are stored as ``a[alpha, beta, i, j]`` so that the form
density reads ``a[alpha, beta, i, j] * gu[j, beta] * gv[i, alpha]`` with
``g[i, alpha] = d u^i / d x_alpha``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import DomainError, Mesh


class TensorError(ValueError):
    pass


def symmetry_residual(a: np.ndarray) -> float:
    """max of |a^{ab}_{ij} - a^{ba}_{ji}| and |a^{ab}_{ij} - a^{ib}_{aj}|."""
    a = np.asarray(a)
    r1 = np.abs(a - np.einsum("...abij->...baji", a)).max()
    r2 = np.abs(a - np.einsum("...abij->...ibaj", a)).max()
    return float(max(r1, r2))


def quadratic_form(a: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``a^{ab}_{ij} xi^j_b xi^i_a`` for one tensor and a stack of matrices ``xi[..., i, a]``."""
    return np.einsum("abij,...jb,...ia->...", a, xi, xi)


@dataclass(frozen=True)
class ElasticityTensor:
    """Coefficient field with caller-declared ellipticity constants.

    ``evaluate(x)`` maps points of shape ``(P, n)`` to ``(P, n, n, n, n)``.
    When ``cell_values`` is set the field is piecewise constant per mesh
    triangle and ``evaluate`` is not used for assembly.
    """

    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    kappa1: float
    kappa2: float
    cell_values: np.ndarray | None = None
    constant: bool = False
    name: str = "tensor"

    def at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self.evaluate(pts), dtype=float)

    def scaled(self, c: float) -> "ElasticityTensor":
        ev = self.evaluate
        cells = None if self.cell_values is None else c * self.cell_values
        return ElasticityTensor(self.dim, lambda x: c * ev(x), c * self.kappa1, c * self.kappa2,
                                cells, self.constant, f"{c:g}*{self.name}")

    def check(self, points=None, n_probes: int = 1000, rng=None, tol: float = 1e-12) -> dict:
        """Symmetry residual and the ellipticity sandwich on random probes."""
        rng = np.random.default_rng(0) if rng is None else rng
        if self.cell_values is not None:
            tensors = self.cell_values
        else:
            if points is None:
                points = np.zeros((1, self.dim))
            tensors = self.at(points)
        sym = symmetry_residual(tensors)
        xi = rng.standard_normal((n_probes, self.dim, self.dim))
        s = 0.25 * np.sum((xi + np.swapaxes(xi, 1, 2)) ** 2, axis=(1, 2))
        worst_lo, worst_hi = math.inf, -math.inf
        for a in tensors.reshape(-1, *tensors.shape[-4:]):
            q = quadratic_form(a, xi)
            worst_lo = min(worst_lo, float(np.min(q - self.kappa1 * s)))
            worst_hi = max(worst_hi, float(np.max(q - self.kappa2 * s)))
        scale = float(np.abs(tensors).max())
        ok = sym <= tol * max(1.0, scale) and worst_lo >= -tol * scale * s.max() \
            and worst_hi <= tol * scale * s.max()
        return {"symmetry_residual": sym, "lower_margin": worst_lo, "upper_margin": worst_hi,
                "ok": bool(ok)}


def lame_array(mu: float, lam: float, n: int = 2) -> np.ndarray:
    d = np.eye(n)
    # a^{ab}_{ij} = lam d_{ia} d_{jb} + mu (d_{ij} d_{ab} + d_{ib} d_{ja})
    return (lam * np.einsum("ia,jb->abij", d, d)
            + mu * (np.einsum("ij,ab->abij", d, d) + np.einsum("ib,ja->abij", d, d)))


def make_lame_tensor(mu: float, lam: float, n: int = 2) -> ElasticityTensor:
    """Homogeneous isotropic tensor with kappa1 = 2 mu, kappa2 = 2 mu + n lam."""
    if not mu > 0:
        raise TensorError("mu must be positive (ellipticity fails)")
    if lam < 0:
        raise TensorError("lambda must be non-negative")
    if lam == 0:
        warnings.warn("lambda = 0: degenerate Lamé tensor", stacklevel=2)
    a = lame_array(mu, lam, n)

    def evaluate(x):
        return np.broadcast_to(a, (len(x),) + a.shape)

    return ElasticityTensor(n, evaluate, 2.0 * mu, 2.0 * mu + n * lam, constant=True,
                            name=f"lame(mu={mu:g},lambda={lam:g})")


def cellwise_tensor(values: np.ndarray, kappa1: float, kappa2: float,
                    name: str = "cellwise") -> ElasticityTensor:
    """Piecewise-constant tensor, one ``(n, n, n, n)`` block per triangle."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if symmetry_residual(values) > 1e-12 * max(1.0, np.abs(values).max()):
        raise TensorError("cell tensor violates the required symmetry")

    def evaluate(x):
        raise TensorError("cellwise tensor has no point evaluation; use cell_values")

    return ElasticityTensor(n, evaluate, kappa1, kappa2, cell_values=values, name=name)


def read_tensor_spec(text: str, mesh: Mesh | None = None) -> ElasticityTensor:
    """Parse ``lame mu lambda`` or a ``cells`` table.

    Cell table layout::

        cells <count>
        kappa <kappa1> <kappa2>
        default <16 entries>        (optional)
        <tri index> <16 entries>
    """
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0]
    if head[0] == "lame":
        return make_lame_tensor(float(head[1]), float(head[2]))
    if head[0] != "cells":
        raise TensorError(f"unknown tensor spec '{head[0]}'")
    if mesh is None:
        raise TensorError("cell tables need the mesh")
    k1, k2 = map(float, lines[1][1:3])
    values = np.full((mesh.n_triangles, 2, 2, 2, 2), np.nan)
    for ln in lines[2:]:
        entries = np.array(list(map(float, ln[1:])))
        if ln[0] == "default":
            values[:] = entries.reshape(2, 2, 2, 2)
        else:
            values[int(ln[0])] = entries.reshape(2, 2, 2, 2)
    if np.isnan(values).any():
        raise TensorError("cell table leaves triangles without coefficients")
    return cellwise_tensor(values, k1, k2)


# --------------------------------------------------------------------------
# strain and form density

def nodal_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Per-triangle gradient ``g[t, i, alpha]`` of a nodal vector field ``u[N, n]``."""
    u = np.asarray(u, dtype=float).reshape(mesh.n_nodes, -1)
    grads = mesh.gradients()
    return np.einsum("tka,tki->tia", grads, u[mesh.triangles])


def strain(mesh: Mesh, u: np.ndarray, triangle: int | None = None) -> np.ndarray:
    """Symmetrized gradient on one triangle (or all when ``triangle`` is None)."""
    if triangle is not None and mesh.signed_areas()[triangle] <= 0:
        raise DomainError("degenerate triangle")
    g = nodal_gradients(mesh, u)
    e = 0.5 * (g + np.swapaxes(g, 1, 2))
    return e if triangle is None else e[triangle]


def bform_density(a, gu: np.ndarray, gv: np.ndarray, x=None) -> np.ndarray:
    """``a^{ab}_{ij}(x) gu[j, b] gv[i, a]``; ``a`` is a tensor object or array."""
    if isinstance(a, ElasticityTensor):
        if x is None:
            raise TensorError("point required to evaluate a tensor field")
        arr = a.at(x)[0]
    else:
        arr = np.asarray(a)
    gu, gv = np.asarray(gu), np.asarray(gv)
    n = arr.shape[-1]
    if gu.shape[-2:] != (n, n) or gv.shape[-2:] != (n, n):
        raise TensorError("gradient shape does not match tensor dimension")
    return np.einsum("abij,...jb,...ia->...", arr, gu, gv)


# --------------------------------------------------------------------------
# rigid displacements

def scalar_mass(mesh: Mesh):
    """Consistent P1 mass matrix for scalar fields (CSR)."""
    import scipy.sparse as sp

    t = mesh.triangles
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = mesh.areas[:, None, None] * local[None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)


def _raw_rigid_fields(n: int = 2):
    """Affine maps x -> A x + b spanning R: translations, then rotations."""
    fields = []
    for k in range(n):
        b = np.zeros(n)
        b[k] = 1.0
        fields.append((np.zeros((n, n)), b))
    for i in range(n):
        for j in range(i + 1, n):
            A = np.zeros((n, n))
            A[i, j], A[j, i] = -1.0, 1.0
            fields.append((A, np.zeros(n)))
    return fields


@dataclass(frozen=True)
class RigidBasis:
    """L2(Omega)-orthonormal basis of rigid displacements on a mesh.

    Each element is the affine field ``x -> A[i] x + b[i]``; ``nodal`` holds
    the interleaved nodal vectors (shape ``(2N, N_R)``).
    """

    dim: int
    A: np.ndarray
    b: np.ndarray
    nodal: np.ndarray
    mesh: Mesh

    @property
    def size(self) -> int:
        return len(self.b)

    def evaluate(self, points) -> np.ndarray:
        """Values ``w[p, i, k] = omega_i^k(x_p)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.einsum("ikl,pl->pik", self.A, pts) + self.b[None]


def vector_mass_apply(mass_s, u: np.ndarray) -> np.ndarray:
    """Apply the block-diagonal vector mass to an interleaved nodal vector."""
    U = np.asarray(u).reshape(-1, 2, *np.shape(u)[1:])
    out = np.stack([mass_s @ U[:, c] for c in range(2)], axis=1)
    return out.reshape(np.shape(u))


def rigid_basis(mesh: Mesh, mass_s=None) -> RigidBasis:
    """Gram-Schmidt (twice) of translations and rotation in the consistent
    L2 inner product, which integrates affine products exactly."""
    if mesh.total_area <= 0:
        raise DomainError("zero-area mesh")
    n = 2
    mass_s = scalar_mass(mesh) if mass_s is None else mass_s
    raw = _raw_rigid_fields(n)
    X = mesh.nodes
    nodal = np.stack([(X @ A.T + b).ravel() for A, b in raw], axis=1)
    coef = np.eye(len(raw))

    def ip(u, v):
        return float(u @ vector_mass_apply(mass_s, v))

    for _ in range(2):
        for i in range(len(raw)):
            for j in range(i):
                c = ip(nodal[:, j], nodal[:, i])
                nodal[:, i] -= c * nodal[:, j]
                coef[i] -= c * coef[j]
            nrm = math.sqrt(ip(nodal[:, i], nodal[:, i]))
            nodal[:, i] /= nrm
            coef[i] /= nrm
    A = np.einsum("ij,jkl->ikl", coef, np.array([r[0] for r in raw]))
    b = coef @ np.array([r[1] for r in raw])
    return RigidBasis(n, A, b, nodal, mesh)


def project_rigid(u: np.ndarray, basis: RigidBasis, mass_s=None) -> np.ndarray:
    """Orthogonal L2 projection of an interleaved nodal field onto R."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.nodal.shape[0]:
        raise DomainError("field does not live on the basis mesh")
    mass_s = scalar_mass(basis.mesh) if mass_s is None else mass_s
    coeffs = basis.nodal.T @ vector_mass_apply(mass_s, u)
    return basis.nodal @ coeffs


def point_rigid_projection(y, basis: RigidBasis, d_flag: bool, domain=None) -> np.ndarray:
    """Nodal matrix field of the projection of ``delta_y I`` onto R.

    Returns shape ``(2N, n)``; column ``k`` is ``sum_i omega_i^k(y) omega_i``
    when D is empty and zero otherwise.
    """
    y = np.asarray(y, dtype=float)
    if domain is not None and not domain.contains(y[None])[0]:
        raise DomainError("y outside the domain")
    if domain is None:
        tri, _ = basis.mesh.locator().locate(y[None])
        if tri[0] < 0:
            raise DomainError("y outside the mesh")
    if d_flag:
        return np.zeros((basis.nodal.shape[0], basis.dim))
    w = basis.evaluate(y[None])[0]  # (N_R, n)
    return basis.nodal @ w
