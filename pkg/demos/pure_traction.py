"""Pure traction problem: rigid modes, conservation and decay.

With no Dirichlet edge the stiffness matrix has the three rigid motions in
its kernel.  Their moments are conserved by the heat flow, and the part of
the data orthogonal to them decays at the first nonzero eigenvalue.

Run: python3 demos/pure_traction.py
"""
import numpy as np

from elastokernel.assembly import assemble
from elastokernel.domain import triangulate, unit_square
from elastokernel.elasticity import make_lame_tensor
from elastokernel.green import spectral_gap
from elastokernel.parabolic import BE, TimeGrid, decay_rate, step_parabolic

op = assemble(triangulate(unit_square(("N", "N", "N", "N")), np.sqrt(2) / 24),
              make_lame_tensor(1.0, 1.0))
R = op.modes
print(f"{op.n_dofs} dofs, {R.shape[1]} rigid modes, |A R| = {np.abs(op.stiffness @ R).max():.1e}")

x = op.mesh.nodes
psi = np.c_[1 + np.sin(3 * x[:, 0]) * x[:, 1], 0.5 - x[:, 0] ** 2].reshape(-1)

tr = step_parabolic(op, TimeGrid.uniform(2.0, 1000, BE), psi, solver="direct", store=False)
m = tr.rigid_moments
print("rigid moments at t=0:", np.round(m[0], 6))
print("rigid moments at t=2:", np.round(m[-1], 6))
print(f"largest change per step relative to |m|: {np.abs(np.diff(m, axis=0)).max() / np.abs(m[0]).max():.1e}")

# remove the rigid part and watch the rest decay
w = psi - R @ (R.T @ (op.mass @ psi))
lam = spectral_gap(op)
tr = step_parabolic(op, TimeGrid.uniform(10.0, 200, BE), w, v_mode=True, solver="direct",
                    store=False)
fit = decay_rate(op, tr, lambda1=lam)
print(f"\nlambda_1 = {lam:.5f}, fitted decay rate {fit.rate:.5f} "
      f"(uncorrected {fit.raw_rate:.5f}), relative error {fit.relative_error:.1e}")
