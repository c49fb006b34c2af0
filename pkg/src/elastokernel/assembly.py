"""P1 vector finite-element assembly, boundary constraints, static solves
and measured Korn / Friedrichs / coercivity constants.

Degrees of freedom are interleaved: dof ``2 * node + c`` carries component
``c`` of the displacement at ``node``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .domain import Mesh, refine
from .elasticity import (ElasticityTensor, RigidBasis, TensorError, lame_array, rigid_basis,
                         scalar_mass)
from .linalg import SparseSym, cg_solve, dense_spectral, smallest_eigs, ORACLE_CAP

# midpoint rule, exact for quadratics
_EDGE_MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class IncompatibleRHS(ValueError):
    """Right-hand side has a rigid component where the problem needs none."""


def mesh_id(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.nodes).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    h.update("".join(mesh.edge_labels).encode())
    return h.hexdigest()[:16]


def cell_tensors(mesh: Mesh, tensor: ElasticityTensor) -> np.ndarray:
    """Per-triangle averaged tensor, shape (T, 2, 2, 2, 2)."""
    if tensor.cell_values is not None:
        vals = np.asarray(tensor.cell_values, dtype=float)
        if vals.shape[0] != mesh.n_triangles:
            raise TensorError("cell table size does not match the mesh")
        return vals
    if tensor.dim != 2:
        raise TensorError("tensor dimension does not match the 2D mesh")
    if tensor.constant:
        a = tensor.at(mesh.nodes[:1])[0]
        return np.broadcast_to(a, (mesh.n_triangles,) + a.shape)
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", _EDGE_MIDPOINTS, p).reshape(-1, 2)
    try:
        vals = tensor.at(pts)
    except Exception as exc:  # locate the offending triangle
        for t in range(mesh.n_triangles):
            try:
                tensor.at(pts[3 * t:3 * t + 3])
            except Exception:
                raise TensorError(f"tensor evaluation failed on triangle {t}: {exc}") from exc
        raise
    vals = vals.reshape(mesh.n_triangles, 3, 2, 2, 2, 2)
    bad = ~np.isfinite(vals).all(axis=(1, 2, 3, 4, 5))
    if bad.any():
        raise TensorError(f"non-finite tensor entries on triangle {int(np.flatnonzero(bad)[0])}")
    return vals.mean(axis=1)


def stiffness_matrix(mesh: Mesh, cells: np.ndarray) -> SparseSym:
    """Exact P1 stiffness for piecewise-constant coefficients ``cells[t, a, b, i, j]``."""
    g = mesh.gradients()  # (T, 3, 2): node k, direction alpha
    cells = np.broadcast_to(cells, (mesh.n_triangles, 2, 2, 2, 2))
    # K[t, k, c, l, d] = area * a[alpha, beta, c, d] g[k, alpha] g[l, beta]
    local = np.einsum("t,tabcd,tka,tlb->tkcld", mesh.areas, cells, g, g)
    dofs = (2 * mesh.triangles[:, :, None] + np.arange(2)).reshape(-1, 6)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    return SparseSym.symmetrized(K)


def strain_gram(mesh: Mesh) -> SparseSym:
    """Matrix of ``(u, v) -> int eps(u) : eps(v)``."""
    return stiffness_matrix(mesh, lame_array(0.5, 0.0))


def gradient_gram(mesh: Mesh) -> SparseSym:
    """Matrix of ``(u, v) -> int Du : Dv``."""
    d = np.eye(2)
    return stiffness_matrix(mesh, np.einsum("ij,ab->abij", d, d))


def vector_mass(mass_s) -> SparseSym:
    return SparseSym.symmetrized(sp.kron(mass_s, sp.eye(2), format="csr"))


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled stiffness/mass pair with constraints and rigid modes."""

    stiffness: SparseSym
    mass: SparseSym
    constrained_dofs: np.ndarray
    rigid_modes: RigidBasis | None
    h: float
    provenance: tuple
    mesh: Mesh = field(repr=False)
    tensor: ElasticityTensor = field(repr=False)
    mass_scalar: object = field(repr=False, default=None)

    @property
    def n_dofs(self) -> int:
        return self.stiffness.dim

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    @property
    def pure_neumann(self) -> bool:
        return self.rigid_modes is not None

    @property
    def modes(self) -> np.ndarray | None:
        """Nodal rigid modes (2N, 3), M-orthonormal, or None."""
        return None if self.rigid_modes is None else self.rigid_modes.nodal

    def constrain(self, u: np.ndarray) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[self.constrained_dofs] = 0.0
        return u

    def mass_norm(self, u) -> float:
        return math.sqrt(max(self.mass.quad(u), 0.0))

    def energy(self, u) -> float:
        return self.stiffness.quad(u)

    def scaled(self, c: float) -> "DiscreteOperator":
        """Operator of the tensor ``c * a`` (stiffness scaled, same mass)."""
        return DiscreteOperator(SparseSym(c * self.stiffness.csr, check=False), self.mass,
                                self.constrained_dofs, self.rigid_modes, self.h,
                                (self.provenance[0], f"{c:g}*{self.provenance[1]}"), self.mesh,
                                self.tensor.scaled(c), self.mass_scalar)


def assemble(mesh: Mesh, tensor: ElasticityTensor, labels=None) -> DiscreteOperator:
    """Assemble ``A`` (bilinear form) and the consistent vector mass ``M``.

    ``labels`` optionally overrides the boundary-edge labels of ``mesh``.
    """
    if labels is not None:
        mesh = Mesh(mesh.nodes, mesh.triangles, mesh.boundary_edges, tuple(labels))
    A = stiffness_matrix(mesh, cell_tensors(mesh, tensor))
    ms = scalar_mass(mesh)
    M = vector_mass(ms)
    dnodes = mesh.dirichlet_nodes
    constrained = np.sort((2 * dnodes[:, None] + np.arange(2)).ravel())
    modes = rigid_basis(mesh, ms) if len(dnodes) == 0 else None
    return DiscreteOperator(A, M, constrained, modes, mesh.h_max, (mesh_id(mesh), tensor.name),
                            mesh, tensor, ms)


def check_operator(op: DiscreteOperator, n_probes: int = 20, seed: int = 0) -> dict:
    """Numerical check of the operator invariants."""
    rng = np.random.default_rng(seed)
    A, M = op.stiffness, op.mass
    anorm = A.norm()
    X = rng.standard_normal((op.n_dofs, n_probes))
    quad = np.einsum("ij,ij->j", X, A @ X)
    out = {
        "symmetric": bool(abs(A.csr - A.csr.T).sum() == 0),
        "min_probe_energy": float(quad.min() / anorm),
        "mass_total": float(M.csr.sum()),
        "mass_total_expected": 2.0 * op.mesh.total_area,
    }
    rows = np.asarray(op.mass_scalar.sum(axis=1)).ravel()
    out["mass_row_error"] = float(np.abs(rows - op.mesh.lumped_masses()).max())
    if op.pure_neumann:
        out["kernel_residual"] = float(np.abs(A @ op.modes).max() / anorm)
    return out


# --------------------------------------------------------------------------
# constraints and static solves

@dataclass
class ReducedSystem:
    matrix: SparseSym
    rhs: np.ndarray
    free: np.ndarray
    modes: np.ndarray | None
    mass: SparseSym
    compatible: bool
    rigid_defect: float

    def extend(self, x_free: np.ndarray, n: int) -> np.ndarray:
        u = np.zeros(n)
        u[self.free] = x_free
        return u


def rigid_defect(op: DiscreteOperator, rhs: np.ndarray) -> float:
    """Relative size of the rigid moments ``R^T rhs`` of a load vector."""
    if not op.pure_neumann:
        return 0.0
    mom = op.modes.T @ rhs
    scale = np.linalg.norm(rhs) * math.sqrt(op.mesh.lumped_masses().max() * 2) + 1e-300
    return float(np.linalg.norm(mom) / scale)


def project_load(op: DiscreteOperator, rhs: np.ndarray) -> np.ndarray:
    """Remove the rigid moments of a load vector (``rhs - M R R^T rhs``)."""
    if not op.pure_neumann:
        return np.asarray(rhs, dtype=float)
    R = op.modes
    return rhs - op.mass @ (R @ (R.T @ rhs))


def apply_constraints(op: DiscreteOperator, rhs, compat: str = "flag", tol: float = 1e-12
                      ) -> ReducedSystem:
    """Eliminate constrained dofs; in the pure-traction case set up deflation.

    ``compat`` decides what to do with a load that has rigid moments:
    ``"flag"`` records it, ``"project"`` removes the moments and
    ``"reject"`` raises :class:`IncompatibleRHS`.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.n_dofs,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({op.n_dofs},)")
    defect = rigid_defect(op, rhs)
    compatible = defect <= tol
    if not compatible:
        if compat == "reject":
            raise IncompatibleRHS(f"load has rigid moments (relative size {defect:.3e})")
        if compat == "project":
            rhs = project_load(op, rhs)
    free = op.free_dofs
    if op.pure_neumann:
        return ReducedSystem(op.stiffness, rhs, free, op.modes, op.mass, compatible, defect)
    return ReducedSystem(op.stiffness.submatrix(free), rhs[free], free, None,
                         op.mass.submatrix(free), compatible, defect)


def solve_static(op: DiscreteOperator, rhs, tol: float = 1e-12, compat: str = "project",
                 maxit: int | None = None):
    """Solve ``A u = rhs`` in V_h; returns ``(u, CGResult, ReducedSystem)``."""
    red = apply_constraints(op, rhs, compat=compat)
    res = cg_solve(red.matrix, red.rhs, tol=tol, modes=red.modes, mass=red.mass, maxit=maxit)
    u = red.extend(res.x, op.n_dofs) if not op.pure_neumann else res.x
    return u, res, red


def load_vector(op: DiscreteOperator, f) -> np.ndarray:
    """Consistent load ``M f_h`` of a body force given as callable or nodal field."""
    if callable(f):
        vals = np.asarray(f(op.mesh.nodes), dtype=float).reshape(-1)
    else:
        vals = np.asarray(f, dtype=float).reshape(-1)
    return op.mass @ vals


# --------------------------------------------------------------------------
# constants

@dataclass
class KornLevel:
    h: float
    n_dofs: int
    korn2_constant: float
    friedrichs_constant: float
    coercivity_rho: float
    coercivity_c: float
    first_korn_ratio: float | None
    residual: float


@dataclass
class KornReport:
    korn2_constant: float
    friedrichs_constant: float
    coercivity_rho: float
    coercivity_c: float
    first_korn_ratio: float | None
    mesh_ladder: list
    relative_changes: dict
    converged: bool

    def to_dict(self) -> dict:
        return {
            "korn2_constant": self.korn2_constant,
            "friedrichs_constant": self.friedrichs_constant,
            "coercivity_rho": self.coercivity_rho,
            "coercivity_c": self.coercivity_c,
            "first_korn_ratio": self.first_korn_ratio,
            "relative_changes": self.relative_changes,
            "converged": self.converged,
            "mesh_ladder": [vars(lv) for lv in self.mesh_ladder],
        }


def _min_eig(A, B, free, modes=None, mass=None, tol=1e-10):
    """Smallest eigenvalue of the pencil (A, B) on ``free`` dofs, restricted
    to the ``mass``-orthogonal complement of ``modes`` when given."""
    if len(free) <= ORACLE_CAP:
        if modes is None:
            spec = dense_spectral(A, B, free)
            return float(spec.eigenvalues[0]), spec.residual
        Ad = A.toarray()[np.ix_(free, free)]
        Bd = B.toarray()[np.ix_(free, free)]
        MR = (mass @ modes)[free]
        q, _ = np.linalg.qr(MR, mode="complete")
        Z = q[:, MR.shape[1]:]
        spec = dense_spectral(Z.T @ Ad @ Z, Z.T @ Bd @ Z)
        return float(spec.eigenvalues[0]), spec.residual
    spec = smallest_eigs(A, B, 1, free=free, modes=None if modes is None else modes[free],
                         deflation_mass=mass, tol=tol)
    return float(spec.eigenvalues[0]), spec.residual


def korn_level(op: DiscreteOperator) -> KornLevel:
    mesh = op.mesh
    M, E, G = op.mass.csr, strain_gram(mesh).csr, gradient_gram(mesh).csr
    free = op.free_dofs
    modes = op.modes
    # korn2: max (|u|^2 + |Du|^2) / (|u|^2 + |eps u|^2), no restriction to V_h
    rho2, r1 = _min_eig(M + E, M + G, free)
    k2 = math.sqrt(1.0 / rho2)
    lg, r2 = _min_eig(G, M, free, modes, M)
    le, r3 = _min_eig(E, M, free, modes, M)
    lc, r4 = _min_eig(op.stiffness.csr, G, free, modes, M)
    first = None
    if all(lab == "D" for lab in mesh.edge_labels):
        lk, r5 = _min_eig(E, G, free)
        first = 1.0 / lk
    return KornLevel(mesh.h_max, len(free), k2, 1.0 / math.sqrt(lg), 1.0 / math.sqrt(le), lc,
                     first, max(r1, r2, r3, r4))


def _aitken(v):
    if len(v) < 3:
        return v[-1]
    d1, d2 = v[-1] - v[-2], v[-2] - v[-3]
    den = d1 - d2
    if den == 0 or d1 * d2 <= 0:
        return v[-1]
    return v[-1] - d1 * d1 / den


def estimate_constants(op: DiscreteOperator, mesh_ladder_depth: int = 3) -> KornReport:
    """Measured constants on ``op.mesh`` and its uniform refinements.

    ``mesh_ladder_depth`` counts levels including the starting mesh.  The
    reported constants are Aitken-extrapolated when the ladder is monotone.
    """
    if mesh_ladder_depth < 2:
        raise ValueError("need at least 2 ladder levels")
    levels, mesh = [], op.mesh
    for lv in range(mesh_ladder_depth):
        if lv:
            mesh = refine(mesh)
        cur = op if lv == 0 else assemble(mesh, op.tensor)
        levels.append(korn_level(cur))
    keys = ["korn2_constant", "friedrichs_constant", "coercivity_rho", "coercivity_c"]
    if levels[0].first_korn_ratio is not None:
        keys.append("first_korn_ratio")
    extrap, rel = {}, {}
    for k in keys:
        v = [getattr(lv, k) for lv in levels]
        extrap[k] = _aitken(v)
        rel[k] = [abs(v[i + 1] - v[i]) / abs(v[i + 1]) for i in range(len(v) - 1)]
    ok = all(np.isfinite(extrap[k]) and extrap[k] > 0 for k in keys)
    return KornReport(extrap["korn2_constant"], extrap["friedrichs_constant"],
                      extrap["coercivity_rho"], extrap["coercivity_c"],
                      extrap.get("first_korn_ratio"), levels, rel, bool(ok))
