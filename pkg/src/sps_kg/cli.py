"""Command-line front end: single runs, parameter sweeps and figure data.

    sps-kg run   --form I --p 5 --hubble 0 --t-end 200 --out runs/I_p5
    sps-kg sweep --t-end 100 --hubble 0 --out sweeps/flat --jobs 4
    sps-kg plot  sweeps/flat --figure fig1

Every run directory holds ``diagnostics.csv``, ``snapshots/`` and a flat
``manifest.txt`` that can be fed back through ``--config`` to repeat the run.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import CSV_COLUMNS
from .grid import GridSpec
from .scheme import FormKind, PhysicsParams, TimeGrid
from .simulation import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    RunConfig,
    simulate,
)
from .solver import SolverConfig

log = logging.getLogger("sps_kg")

DEFAULT_P_VALUES = (2, 3, 4, 5, 6)
DEFAULT_HUBBLE_VALUES = (0.0, 1e-3)
FIGURE_HUBBLE = {"fig1": 0.0, "fig2": 0.0, "fig3": 1e-3, "fig4": 1e-3}
FIGURE_P = {"fig1": DEFAULT_P_VALUES, "fig3": DEFAULT_P_VALUES, "fig2": (5, 6), "fig4": (5, 6)}

# flat key=value configuration keys, in manifest order
CONFIG_KEYS = (
    "form", "p", "hubble", "mass", "lam", "dim", "nx", "dx", "dt", "t_end", "amplitude",
    "tol", "max_iter", "method", "dg_eps", "record_every", "snapshot_every", "out",
)


class ConfigError(ValueError):
    pass


def fmt(value):
    """Round-trip exact text for CSV and manifest values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------- config

def config_to_flat(cfg):
    return {
        "form": cfg.form.value,
        "p": cfg.physics.exponent,
        "hubble": cfg.physics.hubble,
        "mass": cfg.physics.mass,
        "lam": cfg.physics.lam,
        "dim": cfg.grid.dim,
        "nx": cfg.grid.counts[0],
        "dx": cfg.grid.spacings[0],
        "dt": cfg.time.dt,
        "t_end": cfg.time.t_end,
        "amplitude": cfg.amplitude,
        "tol": cfg.solver.tol,
        "max_iter": cfg.solver.max_iter,
        "method": cfg.solver.method.value,
        "dg_eps": cfg.solver.dg_eps,
        "record_every": cfg.record_every,
        "snapshot_every": cfg.snapshot_every,
        "out": str(cfg.output_dir),
    }


def config_from_flat(flat):
    """Build a ``RunConfig`` from string/number values; missing keys take defaults."""
    d = config_to_flat(RunConfig())
    unknown = set(flat) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    d.update({k: v for k, v in flat.items() if v is not None})
    try:
        dim = int(d["dim"])
        grid = GridSpec.uniform(int(d["nx"]), float(d["dx"]), dim)
        return RunConfig(
            form=FormKind.parse(d["form"]),
            grid=grid,
            time=TimeGrid(float(d["dt"]), float(d["t_end"])),
            physics=PhysicsParams(float(d["hubble"]), float(d["mass"]), int(d["lam"]), int(d["p"])),
            solver=SolverConfig(float(d["tol"]), int(d["max_iter"]), str(d["method"]).lower(),
                                float(d["dg_eps"])),
            amplitude=float(d["amplitude"]),
            output_dir=Path(d["out"]),
            snapshot_every=int(d["snapshot_every"]),
            record_every=int(d["record_every"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def read_flat_file(path):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped.

    Keys with a dot (``result.*``, ``build.*`` in manifests) are not configuration.
    """
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." in key:
            continue
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------- run

def _write_snapshot(directory, state, grid):
    coords = grid.mesh()
    names = ["x", "y", "z"][: grid.dim]
    path = directory / f"snapshot_{state.step:09d}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# time", fmt(state.time)])
        w.writerow(names + ["phi", "psi"])
        cols = [c.ravel() for c in coords[: grid.dim]] + [state.phi.ravel(), state.psi.ravel()]
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def _or_none(value):
    return "none" if value is None else fmt(value)


def write_manifest(path, cfg, result=None):
    lines = [f"{k}={fmt(v)}" for k, v in config_to_flat(cfg).items()]
    lines += [
        f"build.package=sps_kg {__version__}",
        f"build.python={platform.python_version()}",
        f"build.numpy={np.__version__}",
    ]
    if result is not None:
        lines += [
            f"result.status={result.status}",
            f"result.exit_code={result.exit_code}",
            f"result.steps_completed={result.steps_completed}",
            f"result.failure_time={_or_none(result.failure_time)}",
            f"result.onset_time={_or_none(result.onset_time)}",
            f"result.onset_threshold={fmt(result.onset_threshold)}",
            f"result.rel_err_absolute={fmt(result.degenerate_baseline)}",
            f"result.message={result.message}",
        ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    for raw in Path(path).read_text().splitlines():
        if "=" in raw:
            k, v = raw.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def run(cfg):
    """Execute one run into ``cfg.output_dir``; returns ``(exit_code, RunResult)``."""
    out = cfg.output_dir
    snap_dir = out / "snapshots"
    try:
        snap_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.txt", cfg)
        with (out / "diagnostics.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)

            def on_record(rec):
                writer.writerow([fmt(v) for v in rec.as_row()])

            def on_snapshot(state):
                _write_snapshot(snap_dir, state, cfg.grid)

            result = simulate(cfg, on_record, on_snapshot if cfg.snapshot_every else None,
                              keep_table=False)
        write_manifest(out / "manifest.txt", cfg, result)
    except OSError as exc:
        log.error("I/O failure in %s: %s", out, exc)
        return EXIT_IO, None
    if result.status != "ok":
        log.warning("%s: %s at t=%s", out, result.status, result.failure_time)
    return result.exit_code, result


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig = field(default_factory=RunConfig)
    p_values: tuple = DEFAULT_P_VALUES
    hubble_values: tuple = DEFAULT_HUBBLE_VALUES
    forms: tuple = (FormKind.I, FormKind.II, FormKind.III)

    def __post_init__(self):
        if not (self.p_values and self.hubble_values and self.forms):
            raise ValueError("sweep lists must be nonempty")
        object.__setattr__(self, "forms", tuple(FormKind.parse(f) for f in self.forms))

    def cells(self):
        for form, hubble, p in itertools.product(self.forms, self.hubble_values, self.p_values):
            yield form, int(p), float(hubble)


def cell_name(form, p, hubble):
    return f"form-{FormKind.parse(form).value}_p-{int(p)}_H-{float(hubble)!r}"


def _cell_config(sweep_cfg, root, form, p, hubble):
    base = sweep_cfg.base
    physics = PhysicsParams(hubble, base.physics.mass, base.physics.lam, p)
    return base.with_(form=form, physics=physics, output_dir=Path(root) / cell_name(form, p, hubble))


def _run_cell(cfg):
    code, result = run(cfg)
    return code


def _cell_complete(cfg):
    m = cfg.output_dir / "manifest.txt"
    return m.exists() and "result.status" in read_manifest(m)


def _summarize_cell(cfg):
    manifest = read_manifest(cfg.output_dir / "manifest.txt")
    cols = {name: [] for name in ("time", "rel_err_hc", "rel_err_htilde", "solver_iterations")}
    with (cfg.output_dir / "diagnostics.csv").open() as fh:
        for row in csv.DictReader(fh):
            for name in cols:
                cols[name].append(float(row[name]))
    iters = np.array(cols["solver_iterations"][1:] or [0.0])
    last = lambda key: cols[key][-1] if cols[key] else float("nan")  # noqa: E731
    peak = lambda key: max(cols[key]) if cols[key] else float("nan")  # noqa: E731
    return {
        "status": manifest.get("result.status", "missing"),
        "exit_code": manifest.get("result.exit_code", ""),
        "steps_completed": manifest.get("result.steps_completed", ""),
        "failure_time": manifest.get("result.failure_time", ""),
        "onset_time": manifest.get("result.onset_time", ""),
        "final_rel_err_hc": fmt(last("rel_err_hc")),
        "max_rel_err_hc": fmt(peak("rel_err_hc")),
        "final_rel_err_htilde": fmt(last("rel_err_htilde")),
        "max_rel_err_htilde": fmt(peak("rel_err_htilde")),
        "mean_iterations": fmt(float(iters.mean())),
        "max_iterations": fmt(int(iters.max())),
    }, cols


SUMMARY_COLUMNS = ("form", "p", "hubble", "status", "exit_code", "steps_completed", "failure_time",
                   "onset_time", "final_rel_err_hc", "max_rel_err_hc", "final_rel_err_htilde",
                   "max_rel_err_htilde", "mean_iterations", "max_iterations")


def sweep(sweep_cfg, root, jobs=None, force=False):
    """Run every cell of the sweep into ``root/<cell>``; returns an exit code.

    Cells whose directory already has a finished manifest are reused unless
    ``force``; a failing cell is recorded and does not stop the others.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create %s: %s", root, exc)
        return EXIT_IO
    cells = list(sweep_cfg.cells())
    configs = {c: _cell_config(sweep_cfg, root, *c) for c in cells}
    todo = [configs[c] for c in cells if force or not _cell_complete(configs[c])]
    jobs = jobs or os.cpu_count() or 1
    if todo:
        if jobs == 1 or len(todo) == 1:
            for cfg in todo:
                _run_cell(cfg)
        else:
            with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
                list(pool.map(_run_cell, todo))

    series = {}
    rows = []
    io_failed = False
    for cell in cells:
        form, p, hubble = cell
        row = {"form": form.value, "p": p, "hubble": fmt(hubble)}
        try:
            summary, cols = _summarize_cell(configs[cell])
            series[cell] = cols
        except (OSError, KeyError, ValueError) as exc:
            summary = {"status": "missing", "exit_code": EXIT_IO}
            log.error("cell %s unreadable: %s", cell_name(*cell), exc)
            io_failed = True
        row.update(summary)
        rows.append(row)
    with (root / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in SUMMARY_COLUMNS})
    _write_aggregates(root, sweep_cfg, series)
    return EXIT_IO if io_failed else EXIT_OK


def _write_aggregates(root, sweep_cfg, series):
    """One file per (H, form): time column plus one relative-error series per p."""
    for hubble, form in itertools.product(sweep_cfg.hubble_values, sweep_cfg.forms):
        column = "rel_err_hc" if float(hubble) == 0.0 else "rel_err_htilde"
        present = [(p, series[(form, int(p), float(hubble))]) for p in sweep_cfg.p_values
                   if (form, int(p), float(hubble)) in series]
        if not present:
            continue
        times = max((s["time"] for _, s in present), key=len)
        path = root / f"aggregate_H-{float(hubble)!r}_form-{form.value}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"p{p}" for p, _ in present])
            for i, t in enumerate(times):
                w.writerow([fmt(t)] + [fmt(s[column][i]) if i < len(s[column]) else "" for _, s in present])


# ---------------------------------------------------------------- figures

def _log10(v):
    return repr(math.log10(v)) if v > 0 else "NaN"


def emit_plot_data(summary_dir, figure, forms=(FormKind.I, FormKind.II, FormKind.III), p_values=None):
    """Write per-panel data and a gnuplot script for one figure.

    Returns ``(exit_code, written_files, missing_cells)``.  Missing cells are
    listed in ``<figure>_gaps.txt``; available panels are still written.
    """
    if figure not in FIGURE_HUBBLE:
        raise ConfigError(f"unknown figure {figure!r}")
    root = Path(summary_dir)
    out = root / "plots" / figure
    hubble = FIGURE_HUBBLE[figure]
    p_values = tuple(p_values or FIGURE_P[figure])
    written = []
    missing = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if figure in ("fig1", "fig3"):
            column = "rel_err_hc" if figure == "fig1" else "rel_err_htilde"
            for form in forms:
                series = []
                for p in p_values:
                    path = root / cell_name(form, p, hubble) / "diagnostics.csv"
                    if not path.exists():
                        missing.append(cell_name(form, p, hubble))
                        continue
                    with path.open() as fh:
                        rows = list(csv.DictReader(fh))
                    series.append((p, [float(r["time"]) for r in rows], [float(r[column]) for r in rows]))
                if not series:
                    continue
                panel = out / f"panel_form-{form.value}.dat"
                n = max(len(t) for _, t, _ in series)
                times = next(t for _, t, _ in series if len(t) == n)
                with panel.open("w") as fh:
                    fh.write("# time " + " ".join(f"log10_relerr_p{p}" for p, _, _ in series) + "\n")
                    for i in range(n):
                        vals = [_log10(e[i]) if i < len(e) else "NaN" for _, _, e in series]
                        fh.write(f"{times[i]!r} " + " ".join(vals) + "\n")
                written.append(panel)
                ps = [p for p, _, _ in series]
                script = out / f"panel_form-{form.value}.gp"
                ylabel = "log10|(H_C-H_C(0))/H_C(0)|" if figure == "fig1" else "log10|(~H_C-~H_C(0))/~H_C(0)|"
                plots = ", ".join(f"'{panel.name}' using 1:{i + 2} with lines title 'p={p}'"
                                  for i, p in enumerate(ps))
                script.write_text(f"set xlabel 'time'\nset ylabel '{ylabel}'\nplot {plots}\n")
                written.append(script)
        else:
            for p, form in itertools.product(p_values, forms):
                snap_dir = root / cell_name(form, p, hubble) / "snapshots"
                snaps = sorted(snap_dir.glob("snapshot_*.csv")) if snap_dir.exists() else []
                if not snaps:
                    missing.append(cell_name(form, p, hubble))
                    continue
                picks = sorted({snaps[round(i * (len(snaps) - 1) / 4)] for i in range(5)})
                x = None
                cols = []
                times = []
                for s in picks:
                    with s.open() as fh:
                        t = float(fh.readline().strip().split(",")[1])
                        rows = list(csv.DictReader(fh))
                    x = [float(r["x"]) for r in rows]
                    cols.append([float(r["phi"]) for r in rows])
                    times.append(t)
                panel = out / f"panel_p-{p}_form-{form.value}.dat"
                with panel.open("w") as fh:
                    fh.write("# x " + " ".join(f"phi_t{t!r}" for t in times) + "\n")
                    for i, xv in enumerate(x):
                        fh.write(f"{xv!r} " + " ".join(repr(c[i]) for c in cols) + "\n")
                written.append(panel)
                script = out / f"panel_p-{p}_form-{form.value}.gp"
                plots = ", ".join(f"'{panel.name}' using 1:{i + 2} with lines title 't={t:g}'"
                                  for i, t in enumerate(times))
                script.write_text(f"set xlabel 'x'\nset ylabel 'phi'\nplot {plots}\n")
                written.append(script)
        gaps = out / f"{figure}_gaps.txt"
        gaps.write_text("".join(f"{m}\n" for m in missing))
    except OSError as exc:
        log.error("plot emission failed: %s", exc)
        return EXIT_IO, written, missing
    return (EXIT_IO if missing else EXIT_OK), written, missing


# ---------------------------------------------------------------- argparse

def _add_run_flags(ap):
    ap.add_argument("--config", help="flat key=value file; flags override it")
    ap.add_argument("--form", choices=["I", "II", "III"])
    ap.add_argument("--p", type=int, dest="p")
    ap.add_argument("--hubble", type=float)
    ap.add_argument("--mass", type=float)
    ap.add_argument("--lam", type=int, choices=[0, 1])
    ap.add_argument("--dim", type=int, choices=[1, 2, 3])
    ap.add_argument("--nx", type=int)
    ap.add_argument("--dx", type=float)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--t-end", type=float, dest="t_end")
    ap.add_argument("--amplitude", type=float)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--max-iter", type=int, dest="max_iter")
    ap.add_argument("--method", choices=["picard", "newton"])
    ap.add_argument("--dg-eps", type=float, dest="dg_eps")
    ap.add_argument("--record-every", type=int, dest="record_every")
    ap.add_argument("--snapshot-every", type=int, dest="snapshot_every")
    ap.add_argument("--out")


def _resolve(args):
    flat = read_flat_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    return config_from_flat(flat)


def _csv_list(conv):
    return lambda text: tuple(conv(v) for v in text.split(",") if v.strip())


def build_parser():
    ap = argparse.ArgumentParser(prog="sps-kg", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="single simulation"))
    sw = sub.add_parser("sweep", help="forms x p x H cross product")
    _add_run_flags(sw)
    sw.add_argument("--p-values", type=_csv_list(int))
    sw.add_argument("--hubble-values", type=_csv_list(float))
    sw.add_argument("--forms", type=_csv_list(str))
    sw.add_argument("--jobs", type=int)
    sw.add_argument("--force", action="store_true", help="rerun finished cells")
    pl = sub.add_parser("plot", help="figure data from a sweep directory")
    pl.add_argument("summary_dir")
    pl.add_argument("--figure", required=True, choices=sorted(FIGURE_HUBBLE))
    pl.add_argument("--p-values", type=_csv_list(int))
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            code, files, missing = emit_plot_data(args.summary_dir, args.figure, p_values=args.p_values)
            for m in missing:
                print(f"missing cell: {m}", file=sys.stderr)
            return code
        cfg = _resolve(args)
        if args.command == "run":
            code, result = run(cfg)
            if result is not None:
                onset = "none" if result.onset_time is None else f"{result.onset_time:g}"
                print(f"{result.status}: {result.steps_completed} steps, vibration onset {onset}")
            return code
        sweep_cfg = SweepConfig(
            base=cfg,
            p_values=args.p_values or DEFAULT_P_VALUES,
            hubble_values=args.hubble_values or DEFAULT_HUBBLE_VALUES,
            forms=args.forms or (FormKind.I, FormKind.II, FormKind.III),
        )
        return sweep(sweep_cfg, cfg.output_dir, jobs=args.jobs, force=args.force)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
