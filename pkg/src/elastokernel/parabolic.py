"""Time integration of ``M u' + A u = M f`` with backward Euler or
Crank-Nicolson, energy logging, weak residuals and decay-rate fits.

In the pure-traction case the state is split as ``u = R c + w`` with
``w`` M-orthogonal to the rigid modes ``R``.  Since ``A R = 0`` the rigid
coefficients obey ``c' = R^T M f`` and are advanced exactly; ``w`` comes
from a deflated solve.  This makes rigid-moment conservation exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperator
from .linalg import SparseSym, cg_solve

BE, CN, CN_BE = "be", "cn", "cn-be"
SCHEMES = (BE, CN, CN_BE)


class StepError(RuntimeError):
    def __init__(self, step: int, msg: str):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    """Breakpoints ``times[0] = t0 < ... < times[-1] = t_end`` and a scheme."""

    times: np.ndarray
    scheme: str = BE

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{self.scheme}'")
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("time steps must be strictly positive")

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self) -> int:
        return len(self.times) - 1

    @classmethod
    def uniform(cls, t_end: float, n_steps: int, scheme: str = BE, t0: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t0, t_end, n_steps + 1), scheme)

    @classmethod
    def graded(cls, t_end: float, tau_min: float, ratio: float = 1.2, tau_max: float | None = None,
               hit=(), scheme: str = BE, t0: float = 0.0) -> "TimeGrid":
        """Steps growing geometrically from ``tau_min`` (capped by ``tau_max``);
        every time in ``hit`` and ``t_end`` is a breakpoint."""
        if tau_min <= 0 or ratio < 1:
            raise ValueError("need tau_min > 0 and ratio >= 1")
        tau_max = math.inf if tau_max is None else tau_max
        marks = sorted({float(h) for h in hit if t0 < h < t_end} | {float(t_end)})
        times, t, tau = [t0], t0, tau_min
        for mark in marks:
            while t < mark:
                nxt = t + min(tau, tau_max)
                if nxt > mark - 0.25 * min(tau, tau_max):
                    nxt = mark
                times.append(nxt)
                t = nxt
                tau *= ratio
        return cls(np.array(times), scheme)

    def with_scheme(self, scheme: str) -> "TimeGrid":
        return TimeGrid(self.times, scheme)

    def halved(self) -> "TimeGrid":
        """Every step split in two (same breakpoints plus midpoints)."""
        t = self.times
        out = np.empty(2 * len(t) - 1)
        out[0::2] = t
        out[1::2] = 0.5 * (t[:-1] + t[1:])
        return TimeGrid(out, self.scheme)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    mass_norm_sq: np.ndarray
    stiffness_energy: np.ndarray
    rigid_moments: np.ndarray
    scheme: str
    iterations: list = field(default_factory=list)
    energy_constant: float = math.nan
    final: np.ndarray | None = None

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation between stored slices."""
        if self.states is None:
            raise ValueError("trajectory was run without storing states")
        t = float(t)
        if t < self.times[0] - 1e-15 or t > self.times[-1] + 1e-12 * max(1.0, abs(self.times[-1])):
            raise ValueError("t outside the trajectory")
        k = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1 - w) * self.states[k] + w * self.states[k + 1]

    def energy_rows(self):
        for k, t in enumerate(self.times):
            yield [t, self.mass_norm_sq[k], self.stiffness_energy[k], *self.rigid_moments[k]]


class StepSolver:
    """Solves ``(M + s A) x = rhs`` on V_h, caching one factorization per ``s``
    in direct mode."""

    def __init__(self, op: DiscreteOperator, solver: str = "cg", tol: float = 1e-12):
        self.op = op
        self.solver = solver
        self.tol = tol
        self.free = op.free_dofs
        self._cache: dict = {}
        self.iterations: list = []

    def _matrix(self, s: float):
        m = self._cache.get(("m", s))
        if m is None:
            full = self.op.mass.csr + s * self.op.stiffness.csr
            m = SparseSym(full if self.op.pure_neumann else full[self.free][:, self.free],
                          check=False)
            self._cache[("m", s)] = m
        return m

    def solve(self, s: float, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        op = self.op
        mat = self._matrix(s)
        neumann = op.pure_neumann
        b = rhs if neumann else rhs[self.free]
        if self.solver == "direct":
            lu = self._cache.get(("lu", s))
            if lu is None:
                lu = spla.splu(sp.csc_matrix(mat.csr))
                self._cache[("lu", s)] = lu
            x = lu.solve(b)
            if neumann:
                R = op.modes
                x = x - R @ (R.T @ (op.mass @ x))
            self.iterations.append(0)
        else:
            guess = None if x0 is None else (x0 if neumann else x0[self.free])
            res = cg_solve(mat, b, tol=self.tol, x0=guess,
                           modes=op.modes if neumann else None,
                           mass=op.mass if neumann else None)
            if not res.converged:
                raise RuntimeError(f"CG did not converge (relres {res.relres:.2e})")
            x = res.x
            self.iterations.append(res.iterations)
        if neumann:
            return x
        out = np.zeros(op.n_dofs)
        out[self.free] = x
        return out


def rigid_moments(op: DiscreteOperator, u: np.ndarray) -> np.ndarray:
    if not op.pure_neumann:
        return np.zeros(0)
    return op.modes.T @ (op.mass @ u)


def step_parabolic(op: DiscreteOperator, grid: TimeGrid, psi: np.ndarray,
                   f: Callable[[float], np.ndarray] | None = None, *, v_mode: bool = False,
                   solver: str = "cg", tol: float = 1e-12, store: bool = True,
                   callback: Callable | None = None, solver_obj: StepSolver | None = None
                   ) -> Trajectory:
    """Integrate from ``psi`` over ``grid``.

    ``f(t)`` returns a nodal body force.  ``callback(k, t, u)`` is called
    at every breakpoint (``k = 0`` included).  With ``v_mode`` and a pure
    traction problem ``psi`` must be M-orthogonal to the rigid modes.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (op.n_dofs,):
        raise ValueError("psi has the wrong length")
    if np.any(psi[op.constrained_dofs] != 0.0):
        raise ValueError("psi does not vanish on the Dirichlet dofs")
    neumann = op.pure_neumann
    R = op.modes
    scale = op.mass_norm(psi)
    if neumann and v_mode:
        mom = R.T @ (op.mass @ psi)
        if np.abs(mom).max() > 1e-10 * max(scale, 1e-300):
            raise ValueError("psi is not orthogonal to the rigid modes (incompatible in V)")
    S = solver_obj or StepSolver(op, solver, tol)
    M, A = op.mass, op.stiffness
    times = grid.times
    K = len(times) - 1
    nm = 0 if R is None else R.shape[1]
    msq = np.empty(K + 1)
    aen = np.empty(K + 1)
    moms = np.empty((K + 1, nm))
    states = np.empty((K + 1, op.n_dofs)) if store else None

    if neumann:
        c = R.T @ (M @ psi)
        w = psi - R @ c
        if v_mode:
            # data lies in V; drop the roundoff rigid part so decay has no floor
            c = np.zeros_like(c)
    else:
        c = np.zeros(0)
        w = psi.copy()

    def record(k, u):
        Mu = M @ u
        msq[k] = float(u @ Mu)
        aen[k] = float(u @ (A @ u))
        if nm:
            moms[k] = R.T @ Mu
        if store:
            states[k] = u
        if callback is not None:
            callback(k, times[k], u)

    def compose():
        return w + R @ c if neumann else w

    record(0, compose())
    dissip = 0.0
    force_int = 0.0
    for k in range(K):
        t, tau = times[k], times[k + 1] - times[k]
        try:
            substeps = [(BE, 0.5 * tau), (BE, 0.5 * tau)] if (grid.scheme == CN_BE and k == 0) \
                else [(BE if grid.scheme == BE else CN, tau)]
            ts = t
            for kind, dt in substeps:
                if kind == BE:
                    fv = None if f is None else np.asarray(f(ts + dt), dtype=float)
                    rhs = M @ w
                    if fv is not None:
                        rhs = rhs + dt * (M @ fv)
                    s = dt
                else:
                    fv = None if f is None else np.asarray(f(ts + 0.5 * dt), dtype=float)
                    rhs = M @ w - 0.5 * dt * (A @ w)
                    if fv is not None:
                        rhs = rhs + dt * (M @ fv)
                    s = 0.5 * dt
                if fv is not None:
                    force_int += dt * op.mass_norm(fv)
                if neumann:
                    if fv is not None:
                        dc = dt * (R.T @ (M @ fv))
                        c = c + dc
                        rhs = rhs - M @ (R @ dc)
                    rhs = rhs - M @ (R @ (R.T @ rhs))
                w_old = w
                w = S.solve(s, rhs, x0=w)
                if kind == BE:
                    dissip += dt * float(w @ (A @ w))
                else:
                    wm = 0.5 * (w + w_old)
                    dissip += dt * float(wm @ (A @ wm))
                ts += dt
        except (RuntimeError, ArithmeticError) as exc:
            raise StepError(k, str(exc)) from exc
        record(k + 1, compose())
    traj = Trajectory(times.copy(), states, msq, aen, moms, grid.scheme, S.iterations)
    traj.final = compose()
    lhs = msq.max() + dissip
    rhs_scale = msq[0] + force_int ** 2
    traj.energy_constant = lhs / rhs_scale if rhs_scale > 0 else (0.0 if lhs == 0 else math.inf)
    return traj


def backward_solve(op: DiscreteOperator, grid: TimeGrid, psi_final: np.ndarray, b: float,
                   f=None, **kw) -> Trajectory:
    """Backward problem ending at time ``b`` as a forward run in ``s = b - t``.

    Valid because ``A`` is symmetric.  Returned times are physical times,
    in decreasing order.
    """
    g = None if f is None else (lambda s: f(b - s))
    traj = step_parabolic(op, grid, psi_final, g, **kw)
    traj.times = b - traj.times
    return traj


# --------------------------------------------------------------------------
# verification

def _test_values(phi, times):
    if callable(phi):
        return np.array([phi(t) for t in times])
    return np.asarray(phi, dtype=float)


def weak_residual(traj: Trajectory, op: DiscreteOperator, f, test_fields, psi=None) -> np.ndarray:
    """Residual of the space-time weak identity for each test field.

    ``test_fields`` are callables ``t -> nodal field`` or arrays of slices
    at ``traj.times``; they should vanish on Dirichlet dofs and at the final
    time.  Time integrals use trapezoid weights; the ``u . phi_t`` term uses
    interval averages of ``u`` against exact increments of ``phi``.
    """
    if traj.states is None:
        raise ValueError("trajectory has no stored states")
    U = traj.states
    t = traj.times
    tau = np.diff(t)
    w = np.zeros(len(t))
    w[:-1] += 0.5 * tau
    w[1:] += 0.5 * tau
    psi = U[0] if psi is None else np.asarray(psi, dtype=float)
    F = None
    if f is not None:
        F = np.array([f(tk) for tk in t])
    M, A = op.mass, op.stiffness
    Ubar = 0.5 * (U[:-1] + U[1:])
    out = []
    for phi in test_fields:
        P = _test_values(phi, t)
        if not np.any(P):
            out.append(0.0)
            continue
        MP = (M @ P.T).T
        term_t = -np.sum(Ubar * (MP[1:] - MP[:-1]))
        term_b = float(np.sum(w * np.einsum("kd,kd->k", U, (A @ P.T).T)))
        term_f = 0.0 if F is None else float(np.sum(w * np.einsum("kd,kd->k", F, MP)))
        out.append(term_t + term_b - term_f - float(psi @ MP[0]))
    return np.array(out)


@dataclass
class DecayFit:
    rate: float
    raw_rate: float
    window: tuple
    n_samples: int
    lambda1: float | None = None

    @property
    def relative_error(self) -> float | None:
        if self.lambda1 is None or self.lambda1 == 0:
            return None
        return abs(self.rate - self.lambda1) / self.lambda1


def decay_rate(op: DiscreteOperator | None, traj: Trajectory, *, tail: float = 0.5,
               floor: float = 1e-250, lambda1: float | None = None) -> DecayFit:
    """Exponential decay rate of ``||u(t)||_M`` over the trajectory tail.

    ``raw_rate`` is the least-squares slope of ``-log ||u||_M``.  On uniform
    tail steps the per-step factor is mapped back through the scheme's
    amplification function, which removes the time-discretization bias
    (``rate``); otherwise ``rate = raw_rate``.
    """
    nrm = np.sqrt(np.maximum(traj.mass_norm_sq, 0.0))
    t = traj.times
    keep = nrm > floor * max(nrm[0], 1e-300)
    last = int(np.flatnonzero(keep).max()) if keep.any() else 0
    start = int(round((1 - tail) * last))
    idx = np.arange(start, last + 1)
    if len(idx) < 2:
        raise ValueError("trajectory too short for a fit")
    tt, y = t[idx], np.log(nrm[idx])
    slope = np.polyfit(tt, y, 1)[0]
    raw = -float(slope)
    rate = raw
    tau = np.diff(tt)
    if np.ptp(tau) <= 1e-9 * tau.mean():
        q = math.exp(-raw * tau.mean())
        h = tau.mean()
        rate = (1.0 / q - 1.0) / h if traj.scheme == BE else 2.0 * (1.0 - q) / (h * (1.0 + q))
    if abs(rate) < 1e-13 * max(1.0, 1.0 / (tt[-1] - tt[0])):
        rate = 0.0
    return DecayFit(rate, raw, (float(tt[0]), float(tt[-1])), len(idx), lambda1)


# --------------------------------------------------------------------------
# export

def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "dof", "value"])
        for t, u in zip(traj.times, traj.states):
            for d, v in enumerate(u):
                wr.writerow([f"{t:.17g}", d, f"{v:.17g}"])


def write_energy_csv(traj: Trajectory, path) -> None:
    nm = traj.rigid_moments.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass_norm_sq", "stiffness_energy"] + [f"rigid_{i}" for i in range(nm)])
        for row in traj.energy_rows():
            wr.writerow([f"{v:.17g}" for v in row])
