"""Heat kernel of the Lame system on the mixed square.

Builds the mollified kernel column by column, checks it against the dense
matrix exponential on a small mesh, then reads off the on-diagonal decay and
a Gaussian upper bound on a finer one.

Run: python3 demos/heat_kernel.py
"""
import numpy as np

from elastokernel.assembly import assemble
from elastokernel.domain import triangulate, unit_square
from elastokernel.elasticity import make_lame_tensor
from elastokernel.kernel import (build_kernel_column, build_kernel_field, diagonal_slope,
                                 flat_tail, gaussian_fit, mesh_diameter)
from elastokernel.linalg import dense_expm_action
from elastokernel.parabolic import CN_BE, TimeGrid

lame = make_lame_tensor(1.0, 1.0)
dom = unit_square(("D", "N", "N", "N"))
y = np.array([0.5, 0.5])

# 1. small mesh: time stepping against e^{-tL} from the full eigendecomposition
op = assemble(triangulate(dom, np.sqrt(2) / 12), lame)
eps = 2 * op.h
print(f"small mesh: {op.n_dofs} dofs, eps = {eps:.3f}")
for n in (25, 50, 100):
    col = build_kernel_column(op, y, eps, 0, TimeGrid.uniform(0.1, n, CN_BE), solver="direct")
    ref = dense_expm_action(op.stiffness, op.mass, 0.1, col.psi, free=op.free_dofs)
    err = op.mass_norm(col.trajectory.final - ref) / op.mass_norm(ref)
    print(f"  {n:4d} steps to t=0.1: relative M-norm error {err:.2e}")

# 2. finer mesh, graded time grid
op = assemble(triangulate(dom, np.sqrt(2) / 48), lame)
eps = 2 * op.h
grid = TimeGrid.graded(4.0, 1e-4, 1.25, tau_max=0.1, hit=[2 * eps ** 2, 0.0625])
fld = build_kernel_field(op, y, eps, grid, solver="direct")
print(f"\nfine mesh: {op.n_dofs} dofs, {len(grid)} time steps, eps = {eps:.3f}")

# |K(y, y, t)| ~ t^-1 in two dimensions once t is well above eps^2
d = diagonal_slope(fld, 2 * eps ** 2, 0.0625)
print(f"on-diagonal slope {d.constants['slope']:.3f} (expected -1)")
for t in (0.005, 0.01, 0.02, 0.04):
    print(f"  t={t:5.3f}  |K(y,y,t)| = {np.linalg.norm(fld.at(y[None], t)[0]):8.3f}")

# Largest theta such that |K| <= C max(sqrt t, diam)^-2 exp(-theta |x-y|^2/t) holds everywhere
diam = mesh_diameter(op.mesh)
g = gaussian_fit(fld, diam=diam)
print(f"\nGaussian fit: theta = {g.constants['theta']:.3f}, C = {g.constants['C']:.3f}, "
      f"passed = {g.passed}")
tail = flat_tail(fld, g.constants["C"], diam)
print(f"for t > diam^2: max |K| = {tail.constants['max_K']:.4f} <= {tail.constants['bound']:.4f}")
