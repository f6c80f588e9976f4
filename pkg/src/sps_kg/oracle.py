"""Independent reference computations used to cross-check the implicit schemes.

Nothing here touches the residual code of ``scheme``; only the lattice
operators are shared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import laplacian
from .scheme import FieldState, FormKind


@dataclass(frozen=True)
class OracleConfig:
    substeps: int = 100
    quadrature_points: int = 100_000

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.quadrature_points < 1000:
            raise ValueError("quadrature_points must be >= 1000")


class OracleDivergence(FloatingPointError):
    pass


def semi_discrete_limit(form, exponent):
    """Laplacian kind and nonlinear prefactor of the ODE system a form is consistent with.

    Forms I and II tend to lam |phi|^(p-1) phi.  Form III's printed term
    (lam/8)(e1 + e0)|phi1 + phi0|^(p-1)(phi1 + phi0) tends to
    2^(p-2) lam e^{3Ht} |phi|^(p-1) phi, which equals the first only at p = 2.
    """
    form = FormKind.parse(form)
    factor = 2.0 ** (exponent - 2) if form is FormKind.III else 1.0
    return form.laplacian_kind, factor


def _rhs(t, phi, psi, kind, params, grid, nl_factor):
    h = params.hubble
    p = params.exponent
    dphi = math.exp(-3.0 * h * t) * psi
    e3 = math.exp(3.0 * h * t)
    force = -(params.mass**2) * phi
    if params.lam:
        force = force - nl_factor * params.lam * np.abs(phi) ** (p - 1) * phi
    dpsi = e3 * force + math.exp(h * t) * laplacian(phi, grid, kind)
    return dphi, dpsi


def oracle_evolve(state, kind, t_span, params, grid, cfg=OracleConfig(), dt=None, nl_factor=1.0):
    """Classical RK4 on the semi-discrete system from ``state.time`` over ``t_span``.

    The RK4 step is ``dt / cfg.substeps``; with ``dt=None`` the whole span is
    split into ``cfg.substeps`` steps.  ``kind`` picks the Laplacian ("wide" or
    "std"); ``nl_factor`` scales the power nonlinearity.
    """
    if t_span == 0.0:
        return FieldState(state.phi.copy(), state.psi.copy(), state.step, state.time)
    n = cfg.substeps if dt is None else int(round(t_span / dt)) * cfg.substeps
    h = t_span / n
    t = state.time
    phi = state.phi.astype(float, copy=True)
    psi = state.psi.astype(float, copy=True)
    for i in range(n):
        t = state.time + i * h
        k1p, k1s = _rhs(t, phi, psi, kind, params, grid, nl_factor)
        k2p, k2s = _rhs(t + 0.5 * h, phi + 0.5 * h * k1p, psi + 0.5 * h * k1s, kind, params, grid, nl_factor)
        k3p, k3s = _rhs(t + 0.5 * h, phi + 0.5 * h * k2p, psi + 0.5 * h * k2s, kind, params, grid, nl_factor)
        k4p, k4s = _rhs(t + h, phi + h * k3p, psi + h * k3s, kind, params, grid, nl_factor)
        phi = phi + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        psi = psi + (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise OracleDivergence(f"oracle overflow at t={t + h:.6g}")
    step = state.step if dt is None else state.step + int(round(t_span / dt))
    return FieldState(phi, psi, step, state.time + t_span)


def quadrature_hamiltonian(params, amplitude, points=100_000):
    """Composite trapezoid value of the continuum H_C of the cosine initial data on [0, 1].

    phi0 = A cos(2 pi x), psi0 = 2 pi A sin(2 pi x), evaluated at t = 0.
    """
    if points < 1000:
        raise ValueError("need at least 1000 quadrature points")
    x = np.linspace(0.0, 1.0, points + 1)
    w = 2.0 * math.pi
    phi0 = amplitude * np.cos(w * x)
    psi0 = w * amplitude * np.sin(w * x)
    dphi0 = -w * amplitude * np.sin(w * x)
    p = params.exponent
    integrand = (0.5 * psi0**2 + 0.5 * dphi0**2 + 0.5 * params.mass**2 * phi0**2
                 + params.lam / (p + 1) * np.abs(phi0) ** (p + 1))
    return float(np.trapezoid(integrand, x))
