import math

import numpy as np
import pytest

from sps_kg.diagnostics import (
    CSV_COLUMNS,
    DriftAccumulator,
    Monitor,
    detect_onset,
    drift_increment,
    modified_total_hamiltonian,
    nyquist_amplitude,
    nyquist_signed,
    onset_threshold,
    relative_error,
)
from sps_kg.grid import GridSpec, d1
from sps_kg.scheme import FieldState, PhysicsParams, total_hamiltonian
from sps_kg.simulation import initial_state
from sps_kg.solver import SolverConfig, step


def test_csv_columns_fixed():
    assert CSV_COLUMNS == ("step", "time", "h_c", "h_tilde_c", "rel_err_hc", "rel_err_htilde",
                           "max_abs_phi", "nyquist_amp", "solver_iterations")


def test_drift_zero_cases(grid200, rng):
    a = FieldState(*rng.standard_normal((2,) + grid200.shape))
    b = FieldState(*rng.standard_normal((2,) + grid200.shape), step=1, time=1e-3)
    assert drift_increment(a, b, PhysicsParams(0.0), 1e-3, grid200) == 0.0
    z0 = FieldState(grid200.zeros(), grid200.zeros())
    z1 = FieldState(grid200.zeros(), grid200.zeros(), 1, 1e-3)
    assert drift_increment(z0, z1, PhysicsParams(1e-3), 1e-3, grid200) == 0.0


def test_drift_one_step_transcription(grid200):
    params = PhysicsParams(1e-3, 1.0, 1, 3)
    dt = 1e-3
    s0 = initial_state(grid200, 4.0)
    s1, _ = step(s0, "I", dt, params, SolverConfig(), grid200)
    H, p, h = 1e-3, 3, grid200.spacings[0]
    total = 0.0
    # term order reversed and summed per level, per term
    for s in (s1, s0):
        t = s.time
        total += 1.5 / (p + 1) * np.sum(np.exp(3 * H * t) * np.abs(s.phi) ** (p + 1)) * h
        total += 0.75 * np.sum(np.exp(3 * H * t) * s.phi**2) * h
        total += 0.25 * np.sum(np.exp(H * t) * d1(s.phi, grid200, 0) ** 2) * h
        total -= 0.75 * np.sum(np.exp(-3 * H * t) * s.psi**2) * h
    expected = H * total * dt
    assert drift_increment(s0, s1, params, dt, grid200) == pytest.approx(expected, rel=1e-12)


def test_drift_continuum_limit():
    # smooth prescribed fields; the bracket / dt must approach the explicit-time
    # derivative of the continuum H_C at the midpoint time
    H, p, t0 = 0.05, 3, 2.0
    params = PhysicsParams(H, 1.0, 1, p)

    def fields(x, t):
        return np.cos(2 * np.pi * x) * (1 + 0.3 * t), np.sin(2 * np.pi * x) * (2 - t)

    def continuum(t):
        x = np.linspace(0, 1, 200_001)
        phi, psi = fields(x, t)
        dphi = -2 * np.pi * np.sin(2 * np.pi * x) * (1 + 0.3 * t)
        f = (-1.5 * H * np.exp(-3 * H * t) * psi**2 + 0.5 * H * np.exp(H * t) * dphi**2
             + 1.5 * H * np.exp(3 * H * t) * phi**2 + 3 * H / (p + 1) * np.exp(3 * H * t) * np.abs(phi) ** (p + 1))
        return np.trapezoid(f, x)

    errs = []
    for n, dt in ((50, 0.02), (100, 0.01), (200, 0.005)):
        g = GridSpec.uniform(n, 1.0 / n)
        x = g.coordinates(0)
        a = FieldState(*fields(x, t0), 0, t0)
        b = FieldState(*fields(x, t0 + dt), 1, t0 + dt)
        approx = drift_increment(a, b, params, dt, g) / dt
        errs.append(abs(approx - continuum(t0 + dt / 2)))
    assert all(math.log2(e1 / e2) >= 1.0 for e1, e2 in zip(errs, errs[1:])), errs


def test_modified_hamiltonian():
    acc = DriftAccumulator()
    assert acc.accumulated == 0.0
    assert modified_total_hamiltonian(328.5, acc) == 328.5
    acc.add(0.25)
    assert modified_total_hamiltonian(1.0, acc) == 0.75


def test_accumulator_compensated():
    acc = DriftAccumulator()
    vals = [1e8] + [0.1] * 100_000 + [-1e8]
    for v in vals:
        acc.add(v)
    assert acc.accumulated == pytest.approx(math.fsum(vals), abs=1e-9)
    assert acc.count == len(vals)


def test_relative_error():
    assert relative_error(2.0, 1.0) == (1.0, False)
    assert relative_error(1e-3, 0.0) == (1e-3, True)


def test_nyquist_examples(grid200):
    x = grid200.coordinates(0)
    smooth = np.cos(2 * np.pi * 3 * x)
    nyq = (-1.0) ** np.arange(200)
    assert nyquist_amplitude(smooth, grid200) <= 1e-15
    assert nyquist_amplitude(nyq, grid200) == 1.0
    assert nyquist_amplitude(smooth + 0.01 * nyq, grid200) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(ValueError):
        nyquist_amplitude(np.zeros(5), GridSpec.uniform(5, 0.2))


def test_nyquist_linear(grid200, rng):
    f, g = rng.standard_normal((2, 200))
    for a, b in ((2.0, -3.0), (0.5, 0.25)):
        lhs = nyquist_amplitude(a * f + b * g, grid200)
        rhs = abs(a * nyquist_signed(f, grid200) + b * nyquist_signed(g, grid200))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-15)


def test_nyquist_3d():
    g = GridSpec(3, (4, 6, 8), (0.25, 1 / 6, 0.125))
    k = np.indices(g.shape).sum(axis=0)
    assert nyquist_amplitude((-1.0) ** k, g) == 1.0


def test_onset_detection():
    assert detect_onset([(i * 0.1, 0.0) for i in range(100)], 0.04) is None
    spike = [(i, 1.0 if i == 5 else 0.0) for i in range(30)]
    assert detect_onset(spike, 0.04) is None
    nine = [(i, 1.0 if 5 <= i < 14 else 0.0) for i in range(30)]
    assert detect_onset(nine, 0.04) is None
    ten = [(i, 1.0 if 5 <= i < 15 else 0.0) for i in range(30)]
    assert detect_onset(ten, 0.04) == 5
    restart = [(i, 1.0 if i in (3, 4) or i >= 8 else 0.0) for i in range(30)]
    assert detect_onset(restart, 0.04) == 8
    assert onset_threshold(np.array([4.0, -1.0])) == 0.04
    assert onset_threshold(np.array([0.5])) == 0.01


def test_monitor_step_zero_and_flat(grid200):
    params = PhysicsParams(0.0, 1.0, 1, 3)
    mon = Monitor(params, grid200, 1e-3)
    s = initial_state(grid200, 4.0)
    r0 = mon.observe(s)
    assert r0.rel_err_hc == 0.0 and r0.rel_err_htilde == 0.0
    assert r0.h_tilde_c == r0.h_c == total_hamiltonian(s, params, grid200)
    for _ in range(3):
        s, st = step(s, "I", 1e-3, params, SolverConfig(), grid200)
        r = mon.observe(s, st.iterations)
        assert r.h_tilde_c == r.h_c
        assert mon.acc.accumulated == 0.0
    assert r.step == 3 and r.solver_iterations >= 1


def test_monitor_hubble(grid200):
    params = PhysicsParams(1e-3, 1.0, 1, 3)
    mon = Monitor(params, grid200, 1e-3)
    s = initial_state(grid200, 4.0)
    r0 = mon.observe(s)
    assert r0.h_tilde_c == r0.h_c
    s1, _ = step(s, "I", 1e-3, params, SolverConfig(), grid200)
    r1 = mon.observe(s1)
    inc = drift_increment(s, s1, params, 1e-3, grid200)
    assert r1.h_tilde_c == pytest.approx(r1.h_c - inc, rel=1e-15)
    assert r1.rel_err_htilde < 1e-10 < r1.rel_err_hc
