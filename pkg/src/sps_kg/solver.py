"""Implicit time stepping: solve the coupled phi/psi update of one form.

psi_new is eliminated with the phi update, leaving one equation for the
increment d = phi_new - phi_old:

    A d + N(phi_old + d) = R,
    A = 1/(dt^2 kin) + m^2 pot - grad * L,
    R = 2 psi_old/dt + 2 grad L phi_old - 2 m^2 pot phi_old,

where L is the form's Laplacian and N its nonlinear term.  A is constant
within a step and diagonal in Fourier space, so Picard iteration inverts it
exactly with an FFT; Newton adds diag(N') and solves a sparse periodic system.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import laplacian
from .scheme import (
    DG_EPS,
    FieldState,
    FormKind,
    StepCoefficients,
    nonlinear_term,
    nonlinear_term_derivative,
    phi_residual,
    psi_residual,
    step_times,
)


class Method(enum.Enum):
    PICARD = "picard"
    NEWTON = "newton"


class NonConvergence(RuntimeError):
    """The implicit solve exhausted its iterations above tolerance."""

    def __init__(self, message, stats=None, time=None):
        super().__init__(message)
        self.stats = stats
        self.time = time


class Divergence(FloatingPointError):
    """Field values overflowed to a non-finite number."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_iter: int = 200
    method: Method = Method.PICARD
    dg_eps: float = DG_EPS

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if not 1 <= self.max_iter <= 10_000:
            raise ValueError("max_iter must lie in [1, 10000]")
        if not self.dg_eps > 0.0:
            raise ValueError("dg_eps must be positive")


@dataclass(frozen=True)
class StepStats:
    iterations: int
    final_residual: float
    converged: bool


def eliminate_psi(phi_new, state_old, dt, params):
    """The psi_new that makes ``phi_residual`` vanish for a given phi_new."""
    t0, t1 = step_times(state_old, dt)
    kin = StepCoefficients.for_step(t0, t1, params.hubble).kin
    return (phi_new - state_old.phi) / (dt * kin) - state_old.psi


def initial_guess(state, dt, params):
    """Explicit Euler predictor phi_old + dt e^{-3Ht} psi_old."""
    return state.phi + dt * np.exp(-3.0 * params.hubble * state.time) * state.psi


def scaled_residual(phi_res, psi_res, phi_new, psi_new, dt):
    """Convergence measure: both residuals times dt, each relative to max(1, |field|)."""
    r_phi = dt * np.max(np.abs(phi_res)) / max(1.0, np.max(np.abs(phi_new)))
    r_psi = dt * np.max(np.abs(psi_res)) / max(1.0, np.max(np.abs(psi_new)))
    return float(max(r_phi, r_psi))


def residual_norm(form, phi_new, psi_new, state_old, dt, params, grid, eps=DG_EPS):
    rp = phi_residual(phi_new, psi_new, state_old, dt, params)
    rs = psi_residual(form, phi_new, psi_new, state_old, dt, params, grid, eps)
    return scaled_residual(rp, rs, phi_new, psi_new, dt)


class _StepSystem:
    """Reduced increment equation for one step."""

    def __init__(self, form, state, dt, params, grid):
        self.form = form
        self.state = state
        self.dt = dt
        self.params = params
        self.grid = grid
        t0, t1 = step_times(state, dt)
        self.coef = c = StepCoefficients.for_step(t0, t1, params.hubble)
        self.diag = 1.0 / (dt * dt * c.kin) + params.mass**2 * c.pot
        m2 = params.mass**2
        lap_old = laplacian(state.phi, grid, form.laplacian_kind)
        self.rhs = 2.0 * state.psi / dt + 2.0 * c.grad * lap_old - 2.0 * m2 * c.pot * state.phi

    def nonlinear(self, d, eps):
        phi = self.state.phi
        return nonlinear_term(self.form, phi + d, phi, self.params, self.coef, eps)

    def nonlinear_derivative(self, d, eps):
        phi = self.state.phi
        return nonlinear_term_derivative(self.form, phi + d, phi, self.params, self.coef, eps)

    def psi_scale(self, d):
        # |psi_new| scale for the reduced residual
        psi_new = d / (self.dt * self.coef.kin) - self.state.psi
        return max(1.0, float(np.max(np.abs(psi_new))))


class CirculantSolver:
    """Exact solver for (diag - grad * L) x = b with L a periodic constant-coefficient Laplacian.

    The operator is diagonal in Fourier space, so a solve is one forward and
    one inverse real FFT.
    """

    def __init__(self, grid, kind, diag, grad):
        self.grid = grid
        self.inv_symbol = 1.0 / (diag - grad * grid.laplacian_symbol(kind))
        per_axis = 1.0 if kind == "wide" else 4.0
        # max row sum of |entries| of the operator
        self.norm = diag + grad * sum(per_axis / grid.spacings[a] ** 2 for a in grid.active_axes)

    def solve(self, b):
        return self.grid.irfft(self.grid.rfft(b) * self.inv_symbol)


_solver_cache = {}


def _linear_solver(system):
    key = (system.grid, system.form.laplacian_kind, system.diag, system.coef.grad)
    solver = _solver_cache.get(key)
    if solver is None:
        if len(_solver_cache) > 8:
            _solver_cache.clear()
        solver = _solver_cache[key] = CirculantSolver(*key)
    return solver


def _laplacian_matrix(grid, kind):
    mats = []
    for axis in range(3):
        n = grid.counts[axis]
        if axis not in grid.active_axes:
            mats.append(None)
            continue
        h = grid.spacings[axis]
        if kind == "wide":
            offsets, weights = (-2, 0, 2), (1.0, -2.0, 1.0)
            scale = 1.0 / (4.0 * h * h)
        else:
            offsets, weights = (-1, 0, 1), (1.0, -2.0, 1.0)
            scale = 1.0 / (h * h)
        m = sp.lil_matrix((n, n))
        for k in range(n):
            for off, w in zip(offsets, weights):
                m[k, (k + off) % n] += w * scale
        mats.append(m.tocsr())
    total = sp.csr_matrix((grid.size, grid.size))
    for axis, m in enumerate(mats):
        if m is None:
            continue
        factors = [sp.identity(grid.counts[a], format="csr") if a != axis else m for a in range(3)]
        total = total + sp.kron(sp.kron(factors[0], factors[1]), factors[2], format="csr")
    return total.tocsc()


_matrix_cache = {}


def _operator_matrix(grid, kind):
    key = (grid, kind)
    if key not in _matrix_cache:
        _matrix_cache[key] = _laplacian_matrix(grid, kind)
    return _matrix_cache[key]


def _picard(system, cfg, d):
    lin = _linear_solver(system)
    # A (d - d_new) is the reduced residual of d; bound it by |A|_inf |d - d_new|_inf
    factor = system.dt * lin.norm / max(1.0, float(np.abs(system.state.psi).max()))
    for it in range(1, cfg.max_iter + 1):
        d_new = lin.solve(system.rhs - system.nonlinear(d, cfg.dg_eps))
        change = float(np.abs(d_new - d).max())
        d = d_new
        if not math.isfinite(change):
            raise Divergence("non-finite iterate in Picard solve", time=system.state.time + system.dt)
        if factor * change <= cfg.tol:
            return d, it
    return d, cfg.max_iter


def _newton(system, cfg, d):
    grid = system.grid
    lap = _operator_matrix(grid, system.form.laplacian_kind)
    base = sp.identity(grid.size, format="csc") * system.diag - system.coef.grad * lap
    dt = system.dt
    for it in range(1, cfg.max_iter + 1):
        nl = system.nonlinear(d, cfg.dg_eps)
        res = (base @ d.ravel()).reshape(grid.shape) + nl - system.rhs
        r = dt * float(np.max(np.abs(res))) / system.psi_scale(d)
        if not np.isfinite(r):
            raise Divergence("non-finite residual in Newton solve", time=system.state.time + dt)
        if r <= cfg.tol and it > 1:
            return d, it - 1
        jac = base + sp.diags(system.nonlinear_derivative(d, cfg.dg_eps).ravel(), format="csc")
        delta = spla.spsolve(jac, res.ravel()).reshape(grid.shape)
        d = d - delta
        if r <= cfg.tol:
            return d, it
    return d, cfg.max_iter


def step(state, form, dt, params, cfg, grid):
    """Advance one time level; returns ``(new_state, StepStats)``.

    Raises ``NonConvergence`` when the iteration budget runs out above
    ``cfg.tol`` and ``Divergence`` when values stop being finite.
    """
    form = FormKind.parse(form)
    system = _StepSystem(form, state, dt, params, grid)
    d = initial_guess(state, dt, params) - state.phi
    total = 0
    final = np.inf
    # the in-loop measure is the reduced residual; accept only after the
    # residual functions of the scheme confirm it
    for _ in range(3):
        budget = cfg.max_iter - total
        if budget <= 0:
            break
        sub = SolverConfig(cfg.tol, budget, cfg.method, cfg.dg_eps)
        # overflow is detected explicitly below and reported as Divergence
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.method is Method.PICARD:
                d, its = _picard(system, sub, d)
            else:
                d, its = _newton(system, sub, d)
        total += its
        phi_new = state.phi + d
        psi_new = eliminate_psi(phi_new, state, dt, params)
        if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(psi_new))):
            raise Divergence("non-finite field after solve", time=state.time + dt)
        final = residual_norm(form, phi_new, psi_new, state, dt, params, grid, cfg.dg_eps)
        if final <= cfg.tol:
            new = FieldState(phi_new, psi_new, state.step + 1, (state.step + 1) * dt)
            return new, StepStats(total, final, True)
    stats = StepStats(total, final, False)
    raise NonConvergence(
        f"step {state.step} -> {state.step + 1}: residual {final:.3e} > tol {cfg.tol:.1e} "
        f"after {total} iterations", stats=stats, time=state.time + dt)
