import math

import numpy as np
import pytest

from sps_kg.grid import GridSpec
from sps_kg.oracle import OracleConfig, oracle_evolve
from sps_kg.scheme import FieldState, FormKind, PhysicsParams, phi_residual, psi_residual, total_hamiltonian
from sps_kg.simulation import initial_state
from sps_kg.solver import (
    Method,
    NonConvergence,
    SolverConfig,
    eliminate_psi,
    initial_guess,
    residual_norm,
    step,
)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=1.5)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=20_000)


def test_eliminate_psi_examples(grid200, rng):
    phi, psi = rng.standard_normal((2,) + grid200.shape)
    old = FieldState(phi, psi)
    np.testing.assert_array_equal(eliminate_psi(phi, old, 1e-3, PhysicsParams()), -psi)
    g = GridSpec.uniform(4, 0.25)
    one = FieldState(np.zeros(g.shape), np.zeros(g.shape))
    out = eliminate_psi(np.ones(g.shape), one, 1.0, PhysicsParams())
    np.testing.assert_array_equal(out, 2.0)


def test_eliminate_psi_round_trip(grid200, rng):
    phi0, psi0, phi1 = rng.standard_normal((3,) + grid200.shape)
    dt = 1e-3
    for hubble, ell in ((0.0, 0), (1e-3, 12345)):
        params = PhysicsParams(hubble)
        old = FieldState(phi0, psi0, ell, ell * dt)
        psi1 = eliminate_psi(phi1, old, dt, params)
        r = phi_residual(phi1, psi1, old, dt, params)
        assert np.max(np.abs(r)) * dt <= 1e-14 * np.max(np.abs(psi1))


def test_initial_guess(grid200, rng):
    phi = rng.standard_normal(grid200.shape)
    zero = grid200.zeros()
    np.testing.assert_array_equal(initial_guess(FieldState(phi, zero), 1e-3, PhysicsParams()), phi)
    ones = np.ones(grid200.shape)
    np.testing.assert_allclose(initial_guess(FieldState(phi, ones), 1e-3, PhysicsParams()), phi + 1e-3, rtol=1e-15)


def test_initial_guess_beats_old_phi(grid200):
    params = PhysicsParams(1e-3, 1.0, 1, 3)
    state = initial_state(grid200, 4.0)
    dt = 1e-3

    def res(phi_new):
        psi_new = eliminate_psi(phi_new, state, dt, params)
        return np.max(np.abs(psi_residual("I", phi_new, psi_new, state, dt, params, grid200)))

    assert res(initial_guess(state, dt, params)) < 0.1 * res(state.phi)


@pytest.mark.parametrize("method", list(Method))
def test_stationary_step(grid200, method):
    phi = np.full(grid200.shape, 0.7)
    state = FieldState(phi, grid200.zeros())
    params = PhysicsParams(0.0, 0.0, 0, 3)
    new, stats = step(state, "I", 1e-3, params, SolverConfig(method=method), grid200)
    np.testing.assert_array_equal(new.phi, phi)
    np.testing.assert_array_equal(new.psi, 0.0)
    assert 1 <= stats.iterations <= 2 and stats.converged
    assert new.step == 1 and new.time == 1e-3


def test_single_mode_crank_nicolson(grid200):
    # oracle: exact 2x2 CN recurrence for one lattice mode with omega^2 = m^2 + sin^2(2 pi h)/h^2
    h = grid200.spacings[0]
    x = grid200.coordinates(0).reshape(grid200.shape)
    mode = np.cos(2 * np.pi * x)
    a0, b0 = 1.5, -0.8
    dt = 1e-3
    w2 = 1.0 + np.sin(2 * np.pi * h) ** 2 / h**2
    mat = np.array([[1.0, -dt / 2], [dt * w2 / 2, 1.0]])
    rhs = np.array([[1.0, dt / 2], [-dt * w2 / 2, 1.0]]) @ np.array([a0, b0])
    a1, b1 = np.linalg.solve(mat, rhs)
    state = FieldState(a0 * mode, b0 * mode)
    for form in ("I", "III"):
        new, _ = step(state, form, dt, PhysicsParams(0.0, 1.0, 0, 2), SolverConfig(), grid200)
        np.testing.assert_allclose(new.phi, a1 * mode, rtol=0, atol=1e-10)
        np.testing.assert_allclose(new.psi, b1 * mode, rtol=0, atol=1e-10)


def _one_step_error(dt, grid):
    params = PhysicsParams(0.0, 1.0, 1, 3)
    state = initial_state(grid, 4.0)
    new, _ = step(state, "I", dt, params, SolverConfig(), grid)
    ref = oracle_evolve(state, "wide", dt, params, grid, OracleConfig(substeps=100))
    return max(np.max(np.abs(new.phi - ref.phi)), np.max(np.abs(new.psi - ref.psi)))


def test_local_error_third_order(grid200):
    e1 = _one_step_error(1e-3, grid200)
    e2 = _one_step_error(5e-4, grid200)
    order = math.log2(e1 / e2)
    assert 2.7 <= order <= 3.3, (e1, e2, order)


@pytest.mark.parametrize("form", list(FormKind))
def test_picard_newton_agree(grid200, form):
    params = PhysicsParams(1e-3, 1.0, 1, 5)
    state = initial_state(grid200, 4.0)
    state = FieldState(state.phi, state.psi, 100, 0.1)
    cfg = SolverConfig(tol=1e-12)
    a, _ = step(state, form, 1e-3, params, cfg, grid200)
    b, _ = step(state, form, 1e-3, params, SolverConfig(tol=1e-12, method=Method.NEWTON), grid200)
    scale = max(1.0, np.max(np.abs(a.psi)))
    assert 1e-3 * np.max(np.abs(a.phi - b.phi)) <= 10 * cfg.tol * max(1.0, np.max(np.abs(a.phi)))
    assert 1e-3 * np.max(np.abs(a.psi - b.psi)) <= 10 * cfg.tol * scale


@pytest.mark.parametrize("form", list(FormKind))
def test_converged_residual_invariant(grid200, rng, form):
    params = PhysicsParams(1e-3, 1.0, 1, 4)
    state = initial_state(grid200, 4.0)
    state = FieldState(state.phi + 0.01 * rng.standard_normal(grid200.shape), state.psi, 7, 7e-3)
    cfg = SolverConfig()
    new, stats = step(state, form, 1e-3, params, cfg, grid200)
    assert stats.converged and stats.final_residual <= cfg.tol
    assert residual_norm(form, new.phi, new.psi, state, 1e-3, params, grid200) == stats.final_residual


def test_determinism(grid200):
    params = PhysicsParams(1e-3, 1.0, 1, 6)
    state = initial_state(grid200, 4.0)
    for method in Method:
        a, sa = step(state, "I", 1e-3, params, SolverConfig(method=method), grid200)
        b, sb = step(state, "I", 1e-3, params, SolverConfig(method=method), grid200)
        assert a.phi.tobytes() == b.phi.tobytes() and a.psi.tobytes() == b.psi.tobytes()
        assert sa == sb


def test_nonconvergence_reported(grid200):
    params = PhysicsParams(0.0, 1.0, 1, 6)
    state = initial_state(grid200, 4.0)
    with pytest.raises(NonConvergence) as info:
        step(state, "I", 1e-3, params, SolverConfig(max_iter=1), grid200)
    assert info.value.stats.iterations == 1
    assert not info.value.stats.converged
    assert info.value.time == pytest.approx(1e-3)


def test_single_step_conserves_hamiltonian(grid200):
    for p in (2, 6):
        params = PhysicsParams(0.0, 1.0, 1, p)
        state = initial_state(grid200, 4.0)
        new, _ = step(state, "I", 1e-3, params, SolverConfig(), grid200)
        h0 = total_hamiltonian(state, params, grid200)
        assert abs(total_hamiltonian(new, params, grid200) - h0) <= 1e-13 * h0


def test_step_in_3d():
    g = GridSpec(3, (8, 8, 8), (1 / 8, 1 / 8, 1 / 8))
    x, y, z = g.mesh()
    state = FieldState(np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y), np.cos(2 * np.pi * z))
    params = PhysicsParams(0.0, 1.0, 1, 3)
    for method in Method:
        new, stats = step(state, "I", 1e-3, params, SolverConfig(method=method), g)
        assert stats.converged
        h0 = total_hamiltonian(state, params, g)
        assert abs(total_hamiltonian(new, params, g) - h0) <= 1e-12 * h0
