"""Discrete Hamiltonian and the one-step update equations of the three forms.

All three forms share the Crank-Nicolson-type phi update

    (phi1 - phi0)/dt = 1/4 (e^{-3H t1} + e^{-3H t0}) (psi1 + psi0)

and differ in the psi update:

* Form I   -- wide Laplacian (d1 composed with d1) and the discrete-gradient
  nonlinear term; conserves the discrete total Hamiltonian when H = 0.
* Form II  -- standard three-point Laplacian, discrete-gradient nonlinear term.
* Form III -- wide Laplacian, nonlinear term (lam/8)(...)|phi1+phi0|^(p-1)(phi1+phi0).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, vectorize

from .grid import grad_squared, grid_sum, ipow, laplacian

DG_EPS = 1e-8


class FormKind(enum.Enum):
    I = "I"
    II = "II"
    III = "III"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        text = str(value).strip().upper()
        if text.startswith("FORM"):
            text = text[4:].lstrip("_ ")
        aliases = {"1": "I", "2": "II", "3": "III"}
        return cls(aliases.get(text, text))

    @property
    def laplacian_kind(self):
        return "std" if self is FormKind.II else "wide"

    @property
    def uses_discrete_gradient(self):
        return self is not FormKind.III


@dataclass(frozen=True)
class PhysicsParams:
    """Coefficients of the equation: Hubble rate, mass, nonlinearity switch, exponent."""

    hubble: float = 0.0
    mass: float = 1.0
    lam: int = 1
    exponent: int = 2

    def __post_init__(self):
        if self.hubble < 0.0:
            raise ValueError("hubble must be >= 0")
        if self.mass < 0.0:
            raise ValueError("mass must be >= 0")
        if self.lam not in (0, 1):
            raise ValueError("lam must be 0 or 1")
        if int(self.exponent) != self.exponent or self.exponent < 2:
            raise ValueError("exponent must be an integer >= 2")
        object.__setattr__(self, "exponent", int(self.exponent))
        object.__setattr__(self, "lam", int(self.lam))


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    t_end: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.t_end < 0.0:
            raise ValueError("t_end must be >= 0")
        n = self.step_count
        if self.t_end > 0.0 and abs(n * self.dt - self.t_end) > 1e-12 * self.t_end:
            raise ValueError(f"t_end={self.t_end} is not a whole number of steps of dt={self.dt}")

    @property
    def step_count(self):
        return int(round(self.t_end / self.dt))

    def time(self, step):
        return step * self.dt


@dataclass(frozen=True)
class FieldState:
    """(phi, psi) on the lattice at time level ``step``; ``time = step * dt``."""

    phi: np.ndarray
    psi: np.ndarray
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        if self.phi.shape != self.psi.shape:
            raise ValueError("phi and psi must live on the same grid")


def step_times(state, dt):
    """Times (t_l, t_{l+1}) of a step leaving ``state``, recomputed from the step index."""
    return state.step * dt, (state.step + 1) * dt


def _pair_avg(a, t0, t1):
    # 1/4 (e^{a t1} + e^{a t0}), the factor every update term carries
    return 0.25 * (math.exp(a * t1) + math.exp(a * t0))


@dataclass(frozen=True)
class StepCoefficients:
    """Time-level factors of one step, each 1/4 (e^{a t1} + e^{a t0})."""

    kin: float   # a = -3H
    grad: float  # a = H
    pot: float   # a = 3H

    @classmethod
    def for_step(cls, t0, t1, hubble):
        return cls(_pair_avg(-3.0 * hubble, t0, t1),
                   _pair_avg(hubble, t0, t1),
                   _pair_avg(3.0 * hubble, t0, t1))


def abs_pow(phi, n):
    """|phi|**n for integer n."""
    return ipow(np.abs(phi), n)


def hamiltonian_density(state, params, grid):
    t = state.time
    h = params.hubble
    p = params.exponent
    phi, psi = state.phi, state.psi
    out = 0.5 * math.exp(-3.0 * h * t) * psi * psi
    out += 0.5 * math.exp(h * t) * grad_squared(phi, grid)
    e3 = math.exp(3.0 * h * t)
    out += 0.5 * params.mass**2 * e3 * phi * phi
    if params.lam:
        out += params.lam / (p + 1) * e3 * abs_pow(phi, p + 1)
    return out


def total_hamiltonian(state, params, grid):
    """Discrete total Hamiltonian H_C: grid_sum of the density."""
    return grid_sum(hamiltonian_density(state, params, grid), grid)


@njit(cache=True)
def _ipow(x, n):
    r = 1.0
    for _ in range(n):
        r *= x
    return r


@vectorize(["float64(float64, float64, int64, float64)"], cache=True)
def _dg(a, b, p, eps):
    """Two-point discrete gradient of |u|^(p+1)/(p+1), elementwise.

    Returns (|a|^(p+1) - |b|^(p+1)) / ((a - b)(p + 1)) when |a - b| exceeds
    ``eps * max(1, |a|, |b|)`` and the midpoint derivative |c|^(p-1) c,
    c = (a + b)/2, otherwise.  Symmetric in a and b.

    For same-sign arguments the quotient is evaluated in its factored form
    sign * sum_k |a|^k |b|^(p-k) / (p+1), which has no cancellation as a -> b.
    """
    aa = abs(a)
    ab = abs(b)
    diff = a - b
    if abs(diff) <= eps * max(1.0, aa, ab):
        c = 0.5 * (a + b)
        return _ipow(abs(c), p - 1) * c
    if (a >= 0.0) != (b >= 0.0):
        return (_ipow(aa, p + 1) - _ipow(ab, p + 1)) / (diff * (p + 1))
    # order the pair so the result is bitwise symmetric
    hi = max(aa, ab)
    lo = min(aa, ab)
    s = 1.0
    lo_k = 1.0
    for _ in range(p):
        lo_k *= lo
        s = s * hi + lo_k
    if a + b < 0.0:
        s = -s
    return s / (p + 1)


@vectorize(["float64(float64, float64, int64, float64)"], cache=True)
def _dg_da(a, b, p, eps):
    aa = abs(a)
    ab = abs(b)
    diff = a - b
    if abs(diff) <= eps * max(1.0, aa, ab):
        return 0.5 * p * _ipow(abs(0.5 * (a + b)), p - 1)
    if (a >= 0.0) != (b >= 0.0):
        dg = (_ipow(aa, p + 1) - _ipow(ab, p + 1)) / (diff * (p + 1))
        return (_ipow(aa, p - 1) * a - dg) / diff
    s = 0.0
    for k in range(1, p + 1):
        s += k * _ipow(aa, k - 1) * _ipow(ab, p - k)
    return s / (p + 1)


def discrete_gradient_nl(a, b, p, eps=DG_EPS):
    return _dg(a, b, p, eps)


discrete_gradient_nl.__doc__ = _dg.__doc__


def discrete_gradient_nl_da(a, b, p, eps=DG_EPS):
    """Partial derivative of ``discrete_gradient_nl`` in its first argument."""
    return _dg_da(a, b, p, eps)


def nonlinear_term(form, phi_new, phi_old, params, coef, eps=DG_EPS):
    """The nonlinear contribution subtracted on the right of the psi update.

    Forms I/II: lam/(2(p+1)) (e3_1 + e3_0) * quotient = 2 lam pot * dg(phi1, phi0).
    Form III:   lam/8 (e3_1 + e3_0) |phi1+phi0|^(p-1)(phi1+phi0) = lam pot/2 * |s|^(p-1) s.
    """
    p = params.exponent
    if not params.lam:
        return np.zeros_like(phi_new)
    if FormKind.parse(form).uses_discrete_gradient:
        return 2.0 * params.lam * coef.pot * discrete_gradient_nl(phi_new, phi_old, p, eps)
    s = phi_new + phi_old
    return 0.5 * params.lam * coef.pot * ipow(np.abs(s), p - 1) * s


def nonlinear_term_derivative(form, phi_new, phi_old, params, coef, eps=DG_EPS):
    """Pointwise derivative of ``nonlinear_term`` with respect to phi_new."""
    p = params.exponent
    if not params.lam:
        return np.zeros_like(phi_new)
    if FormKind.parse(form).uses_discrete_gradient:
        return 2.0 * params.lam * coef.pot * discrete_gradient_nl_da(phi_new, phi_old, p, eps)
    s = phi_new + phi_old
    return 0.5 * params.lam * coef.pot * p * ipow(np.abs(s), p - 1)


def phi_residual(phi_new, psi_new, state_old, dt, params):
    t0, t1 = step_times(state_old, dt)
    kin = _pair_avg(-3.0 * params.hubble, t0, t1)
    return (phi_new - state_old.phi) / dt - kin * (psi_new + state_old.psi)


def psi_residual(form, phi_new, psi_new, state_old, dt, params, grid, eps=DG_EPS):
    """(psi1 - psi0)/dt minus the chosen form's right-hand side, pointwise."""
    form = FormKind.parse(form)
    t0, t1 = step_times(state_old, dt)
    coef = StepCoefficients.for_step(t0, t1, params.hubble)
    s = phi_new + state_old.phi
    rhs = coef.grad * laplacian(s, grid, form.laplacian_kind)
    rhs -= params.mass**2 * coef.pot * s
    rhs -= nonlinear_term(form, phi_new, state_old.phi, params, coef, eps)
    return (psi_new - state_old.psi) / dt - rhs
