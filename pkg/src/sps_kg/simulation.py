"""Single-run driver: initial data, the stepping loop, and per-run results."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS, Monitor, OnsetDetector, onset_threshold
from .grid import GridSpec
from .scheme import FieldState, FormKind, PhysicsParams, TimeGrid
from .solver import Divergence, NonConvergence, SolverConfig, step

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5

STATUS_EXIT = {"ok": EXIT_OK, "nonconvergence": EXIT_NONCONVERGENCE, "overflow": EXIT_DIVERGENCE}


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines one simulation; defaults are the reference settings
    (A = 4, 200 points on [0, 1), dt = 1/1000, m = 1, lam = 1) with a desk-scale horizon."""

    form: FormKind = FormKind.I
    grid: GridSpec = field(default_factory=lambda: GridSpec.uniform(200, 1.0 / 200))
    time: TimeGrid = field(default_factory=lambda: TimeGrid(1e-3, 200.0))
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    amplitude: float = 4.0
    output_dir: Path = Path("out")
    snapshot_every: int = 1000
    record_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "form", FormKind.parse(self.form))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0 (0 disables snapshots)")
        for axis in self.grid.active_axes:
            if self.grid.counts[axis] % 2:
                raise ValueError("vibration diagnostics need an even point count on every axis")

    def with_(self, **changes):
        return replace(self, **changes)


def initial_state(grid, amplitude):
    """phi0 = A cos(2 pi x), psi0 = 2 pi A sin(2 pi x), constant along y and z."""
    x = grid.mesh()[0]
    w = 2.0 * math.pi
    phi = amplitude * np.cos(w * x)
    psi = w * amplitude * np.sin(w * x)
    return FieldState(phi, psi, 0, 0.0)


class DiagnosticsTable:
    """Column store of diagnostics rows."""

    def __init__(self, capacity):
        self.n = 0
        self._cols = {name: np.empty(capacity, dtype=np.int64 if name in ("step", "solver_iterations") else float)
                      for name in CSV_COLUMNS}

    def append(self, record):
        if self.n == len(self._cols["step"]):
            for name, col in self._cols.items():
                self._cols[name] = np.concatenate([col, np.empty_like(col)])
        for name, value in zip(CSV_COLUMNS, record.as_row()):
            self._cols[name][self.n] = value
        self.n += 1

    def __len__(self):
        return self.n

    def __getitem__(self, name):
        return self._cols[name][: self.n]

    def rows(self):
        cols = [self[name] for name in CSV_COLUMNS]
        for i in range(self.n):
            yield tuple(c[i].item() for c in cols)


@dataclass
class RunResult:
    config: RunConfig
    status: str = "ok"
    failure_time: float | None = None
    message: str = ""
    onset_time: float | None = None
    onset_threshold: float = 0.0
    steps_completed: int = 0
    final_state: FieldState | None = None
    table: DiagnosticsTable | None = None
    degenerate_baseline: bool = False
    iterations_total: int = 0
    iterations_max: int = 0

    @property
    def exit_code(self):
        return STATUS_EXIT[self.status]

    def max_rel_err(self, column="rel_err_hc"):
        return float(np.max(self.table[column]))


def simulate(config, on_record=None, on_snapshot=None, keep_table=True):
    """Run one configuration to ``t_end`` or to the first solver failure.

    ``on_record(record)`` is called for every recorded row, ``on_snapshot(state)``
    at the snapshot cadence (and for the initial and last states).
    """
    grid = config.grid
    dt = config.time.dt
    n_steps = config.time.step_count
    params = config.physics
    state = initial_state(grid, config.amplitude)
    monitor = Monitor(params, grid, dt)
    threshold = onset_threshold(state.phi)
    table = DiagnosticsTable(n_steps // config.record_every + 2) if keep_table else None
    onset = OnsetDetector(threshold)
    result = RunResult(config, onset_threshold=threshold, table=table)

    def emit(record):
        if table is not None:
            table.append(record)
        onset.push(record.time, record.nyquist_amp)
        if on_record is not None:
            on_record(record)

    emit(monitor.observe(state, 0))
    if on_snapshot is not None:
        on_snapshot(state)
    snap = config.snapshot_every
    for _ in range(n_steps):
        try:
            new, stats = step(state, config.form, dt, params, config.solver, grid)
        except NonConvergence as exc:
            result.status, result.failure_time, result.message = "nonconvergence", exc.time, str(exc)
            break
        except Divergence as exc:
            result.status, result.failure_time, result.message = "overflow", exc.time, str(exc)
            break
        state = new
        result.iterations_total += stats.iterations
        result.iterations_max = max(result.iterations_max, stats.iterations)
        record = monitor.observe(state, stats.iterations)
        if not (math.isfinite(record.h_c) and math.isfinite(record.max_abs_phi)):
            result.status, result.failure_time = "overflow", state.time
            result.message = "non-finite diagnostics"
            emit(record)
            break
        if state.step % config.record_every == 0 or state.step == n_steps:
            emit(record)
        if on_snapshot is not None and snap and (state.step % snap == 0 or state.step == n_steps):
            on_snapshot(state)
    result.steps_completed = state.step
    result.final_state = state
    result.degenerate_baseline = monitor.degenerate_baseline
    result.onset_time = onset.onset
    return result
