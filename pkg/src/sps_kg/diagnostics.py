"""Accuracy and stability diagnostics of a run.

Accuracy: the discrete total Hamiltonian H_C and, for H > 0, the modified
total Hamiltonian H_C minus the accumulated discrete drift.  Stability: the
amplitude of the lattice Nyquist mode (-1)^(k1+k2+k3), which the wide
Laplacian cannot damp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .grid import grad_squared, grid_sum
from .scheme import abs_pow

CSV_COLUMNS = (
    "step",
    "time",
    "h_c",
    "h_tilde_c",
    "rel_err_hc",
    "rel_err_htilde",
    "max_abs_phi",
    "nyquist_amp",
    "solver_iterations",
)

SUSTAIN_RECORDS = 10
DEGENERATE_BASELINE = 1e-300


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    time: float
    h_c: float
    h_tilde_c: float
    rel_err_hc: float
    rel_err_htilde: float
    max_abs_phi: float
    nyquist_amp: float
    solver_iterations: int

    def as_row(self):
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class EnergyTerms:
    """Grid sums of the four time-weighted Hamiltonian ingredients at one time level.

    kinetic = sum e^{-3Ht} psi^2, gradient = sum e^{Ht} |d1 phi|^2,
    mass = sum m^2 e^{3Ht} phi^2, potential = sum e^{3Ht} |phi|^(p+1), each times the cell volume.
    """

    kinetic: float
    gradient: float
    mass: float
    potential: float

    @classmethod
    def of(cls, state, params, grid):
        t = state.time
        h = params.hubble
        e3 = math.exp(3.0 * h * t)
        phi, psi = state.phi, state.psi
        potential = 0.0
        if params.lam:
            potential = e3 * grid_sum(abs_pow(phi, params.exponent + 1), grid)
        return cls(
            kinetic=math.exp(-3.0 * h * t) * grid_sum(psi * psi, grid),
            gradient=math.exp(h * t) * grid_sum(grad_squared(phi, grid), grid),
            mass=params.mass**2 * e3 * grid_sum(phi * phi, grid),
            potential=potential,
        )

    def hamiltonian(self, params):
        nl = params.lam / (params.exponent + 1) * self.potential
        return 0.5 * (self.kinetic + self.gradient + self.mass) + nl


def drift_from_terms(old, new, params, dt):
    """H dt times the two-level bracket, from precomputed level sums."""
    if params.hubble == 0.0:
        return 0.0
    p = params.exponent
    bracket = (
        -0.75 * (new.kinetic + old.kinetic)
        + 0.25 * (new.gradient + old.gradient)
        + 0.75 * (new.mass + old.mass)
        + 1.5 * params.lam / (p + 1) * (new.potential + old.potential)
    )
    return params.hubble * bracket * dt


def drift_increment(state_old, state_new, params, dt, grid):
    """Discrete energy drift of one step; its running sum turns H_C into the modified H_C."""
    if params.hubble == 0.0:
        return 0.0
    old = EnergyTerms.of(state_old, params, grid)
    new = EnergyTerms.of(state_new, params, grid)
    return drift_from_terms(old, new, params, dt)


class DriftAccumulator:
    """Running sum of drift increments with Neumaier compensation."""

    def __init__(self):
        self._sum = 0.0
        self._comp = 0.0
        self.count = 0

    def add(self, value):
        t = self._sum + value
        if abs(self._sum) >= abs(value):
            self._comp += (self._sum - t) + value
        else:
            self._comp += (value - t) + self._sum
        self._sum = t
        self.count += 1

    @property
    def accumulated(self):
        return self._sum + self._comp


def modified_total_hamiltonian(h_c, acc):
    return h_c - acc.accumulated


def relative_error(value, baseline):
    """|(value - baseline) / baseline|; absolute error when the baseline is degenerate.

    Returns ``(error, is_absolute)``.
    """
    if abs(baseline) <= DEGENERATE_BASELINE:
        return abs(value - baseline), True
    return abs((value - baseline) / baseline), False


def _check_even(grid):
    for axis in grid.active_axes:
        if grid.counts[axis] % 2:
            raise ValueError(f"Nyquist mode undefined: axis {axis} has odd count {grid.counts[axis]}")


def _nyquist_sign(grid):
    k = np.indices(grid.shape).sum(axis=0)
    return np.where(k % 2 == 0, 1.0, -1.0)


def nyquist_signed(f, grid):
    """Signed projection sum_k (-1)^(k1+k2+k3) f[k] / N onto the Nyquist mode."""
    _check_even(grid)
    f = np.asarray(f).reshape(grid.shape)
    return float(np.sum(f * _nyquist_sign(grid))) / grid.size


def nyquist_amplitude(f, grid):
    return abs(nyquist_signed(f, grid))


def onset_threshold(phi0, fraction=1e-2):
    """Default vibration threshold: ``fraction * max(1, max|phi0|)``."""
    return fraction * max(1.0, float(np.max(np.abs(phi0))))


class OnsetDetector:
    """Streaming form of ``detect_onset``."""

    def __init__(self, threshold, sustain=SUSTAIN_RECORDS):
        self.threshold = threshold
        self.sustain = sustain
        self.onset = None
        self._start = None
        self._len = 0

    def push(self, time, amplitude):
        if self.onset is not None:
            return
        if amplitude >= self.threshold:
            if self._len == 0:
                self._start = time
            self._len += 1
            if self._len >= self.sustain:
                self.onset = self._start
        else:
            self._len = 0


def detect_onset(series, threshold, sustain=SUSTAIN_RECORDS):
    """Earliest time whose Nyquist amplitude stays >= ``threshold`` for ``sustain`` records.

    ``series`` is an iterable of ``(time, amplitude)`` in time order.
    Returns ``None`` when no sustained crossing occurs.
    """
    detector = OnsetDetector(threshold, sustain)
    for t, amp in series:
        detector.push(t, amp)
        if detector.onset is not None:
            break
    return detector.onset


class Monitor:
    """Turns the sequence of committed states of one run into ``DiagnosticsRecord`` rows."""

    def __init__(self, params, grid, dt):
        self.params = params
        self.grid = grid
        self.dt = dt
        self.acc = DriftAccumulator()
        self._sign = None
        self._last_terms = None
        self.h_c0 = None
        self.h_tilde0 = None
        self.degenerate_baseline = False

    def _amp(self, phi):
        if self._sign is None:
            _check_even(self.grid)
            self._sign = _nyquist_sign(self.grid)
        return abs(float(np.sum(phi * self._sign))) / self.grid.size

    def observe(self, state, iterations=0):
        terms = EnergyTerms.of(state, self.params, self.grid)
        h_c = terms.hamiltonian(self.params)
        if self._last_terms is None:
            self.h_c0 = h_c
        else:
            self.acc.add(drift_from_terms(self._last_terms, terms, self.params, self.dt))
        self._last_terms = terms
        h_tilde = modified_total_hamiltonian(h_c, self.acc)
        if self.h_tilde0 is None:
            self.h_tilde0 = h_tilde
        err_hc, abs1 = relative_error(h_c, self.h_c0)
        err_ht, abs2 = relative_error(h_tilde, self.h_tilde0)
        self.degenerate_baseline = abs1 or abs2
        return DiagnosticsRecord(
            step=state.step,
            time=state.time,
            h_c=h_c,
            h_tilde_c=h_tilde,
            rel_err_hc=err_hc,
            rel_err_htilde=err_ht,
            max_abs_phi=float(np.max(np.abs(state.phi))),
            nyquist_amp=self._amp(state.phi),
            solver_iterations=iterations,
        )
