"""Command-line entry point: single runs, sweeps, identity checks, coefficient validation.

Configuration is an INI file (sections ``run``, ``grid``, ``coefficients``,
``diagnostics``, ``sweep``, ``check``).  Every key can be overridden by an
environment variable ``ELMACH_<SECTION>_<KEY>`` and a few by flags.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import struct
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (RESIDUAL_NAMES, DiagnosticsConfig, EnergyReport, RunMonitor,
                          cancellation_residuals, dissipation_Ds)
from .grid import Grid, set_threads
from .model import FlowState, LeslieCoefficients, validate_coefficients
from .stepper import SCHEMES, NumericalAbort, StepConfig, integrate, pack, unpack
from .sweep import SweepConfig, mach_sweep, well_prepared_ic

log = logging.getLogger("elmach")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3, 4
ENV_PREFIX = "ELMACH_"
REPORT_SCHEMA_VERSION = 1
MODES = ("compressible", "incompressible", "sweep", "check", "validate-coeffs")

DEFAULTS = {
    "run": {
        "mode": "compressible", "eps": "0.1", "t_final": "0.5", "dt": "auto", "scheme": "imex",
        "cadence": "10", "seed": "0", "alpha0": "2.0", "amplitude": "0.05",
        "cfl_safety": "0.4", "renormalize": "false", "snapshot_every": "0",
        "restart": "",
    },
    "grid": {"nx": "64", "ny": "64", "lx": repr(2 * math.pi), "ly": repr(2 * math.pi),
             "dealias_fraction": repr(2.0 / 3.0)},
    "coefficients": {k: repr(float(v)) for k, v in asdict(LeslieCoefficients()).items()},
    "diagnostics": {"s": "3", "eta": "0.05", "C": "1.0", "C0": "1.0", "q_c": "1.0",
                    "residuals": "true"},
    "sweep": {"eps_ladder": "0.2, 0.1, 0.05, 0.025", "sample_times": "", "dt_max": ""},
    "check": {"state": "random", "samples": "20", "tolerance": "1e-9"},
}


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------------

def load_config(path: str | None, env: dict | None = None) -> configparser.ConfigParser:
    """Defaults, then the file, then ``ELMACH_<SECTION>_<KEY>`` variables."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in DEFAULTS]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    for section in DEFAULTS:
        for key in cp[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
    env = os.environ if env is None else env
    for section, keys in DEFAULTS.items():
        for key in keys:
            var = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
            if var in env:
                cp[section][key] = env[var]
    return cp


def _get(cp, section, key, kind):
    raw = cp[section][key].strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc


def _floats(cp, section, key) -> list[float]:
    raw = cp[section][key].strip()
    if not raw:
        return []
    try:
        return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} must be a comma-separated list of numbers") from exc


def grid_from(cp) -> Grid:
    try:
        return Grid(nx=_get(cp, "grid", "nx", int), ny=_get(cp, "grid", "ny", int),
                    lx=_get(cp, "grid", "lx", float), ly=_get(cp, "grid", "ly", float),
                    dealias_fraction=_get(cp, "grid", "dealias_fraction", float))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def coefficients_from(cp) -> LeslieCoefficients:
    return LeslieCoefficients(**{k: _get(cp, "coefficients", k, float)
                                 for k in DEFAULTS["coefficients"]})


def diagnostics_from(cp) -> DiagnosticsConfig:
    s = _get(cp, "diagnostics", "s", int)
    if not 2 <= s <= 4:
        raise ConfigError("[diagnostics] s must lie in [2, 4]")
    return DiagnosticsConfig(s=s, eta=_get(cp, "diagnostics", "eta", float),
                             C=_get(cp, "diagnostics", "C", float),
                             C0=_get(cp, "diagnostics", "C0", float),
                             q_c=_get(cp, "diagnostics", "q_c", float),
                             residuals=_get(cp, "diagnostics", "residuals", bool))


def step_config_from(cp) -> StepConfig:
    raw_dt = cp["run"]["dt"].strip().lower()
    dt = None if raw_dt in ("", "auto") else _get(cp, "run", "dt", float)
    scheme = cp["run"]["scheme"].strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"[run] scheme must be one of {SCHEMES}")
    try:
        return StepConfig(scheme=scheme, dt=dt, cfl_safety=_get(cp, "run", "cfl_safety", float),
                          renormalize=_get(cp, "run", "renormalize", bool))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_flags(cp, args) -> None:
    if getattr(args, "eps", None) is not None:
        cp["run"]["eps"] = repr(args.eps)
    if getattr(args, "seed", None) is not None:
        cp["run"]["seed"] = str(args.seed)
    if getattr(args, "resolution", None):
        try:
            nx, ny = (int(v) for v in args.resolution.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"--resolution must look like 64x64, got {args.resolution}") from exc
        cp["grid"]["nx"], cp["grid"]["ny"] = str(nx), str(ny)


def config_dict(cp) -> dict:
    return {s: dict(cp[s]) for s in DEFAULTS}


# -- checkpoints ----------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ELMCKPT\x00"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIddddd")
assert _HEADER.size == 64


def write_checkpoint(path, state: FlowState) -> None:
    """Raw little-endian dump behind a 64-byte header."""
    g = state.grid
    flags = 1 if state.compressible else 0
    eps = state.eps if state.compressible else math.nan
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, g.nx, g.ny, flags,
                          float(state.time), float(eps), g.lx, g.ly, g.dealias_fraction)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(pack(state), dtype="<f8").tobytes())


def read_checkpoint(path) -> FlowState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("checkpoint is truncated")
    magic, version, nx, ny, flags, t, eps, lx, ly, frac = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    grid = Grid(nx=nx, ny=ny, lx=lx, ly=ly, dealias_fraction=frac)
    ncomp = 7 if flags & 1 else 6
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != ncomp * nx * ny:
        raise ValueError("checkpoint payload size does not match its header")
    Y = data.reshape((ncomp, nx, ny)).astype(float)
    like = FlowState.equilibrium(grid, eps if flags & 1 else None)
    return unpack(Y, like, t)


# -- report stream ---------------------------------------------------------------------

class ReportWriter:
    """CSV time series, one row per :class:`EnergyReport`."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self.columns = ["schema_version"] + EnergyReport.columns()
        self._writer = csv.DictWriter(self._fh, fieldnames=self.columns)
        self._writer.writeheader()
        self._last_time = -math.inf

    def emit(self, report: EnergyReport) -> None:
        if report.time <= self._last_time:
            raise ValueError("report times must increase")
        self._last_time = report.time
        row = {k: repr(float(v)) for k, v in report.to_row().items()}
        row["schema_version"] = REPORT_SCHEMA_VERSION
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_report_row(writer: ReportWriter, report: EnergyReport) -> None:
    writer.emit(report)


def read_report(path) -> list[EnergyReport]:
    with open(path, newline="") as fh:
        return [EnergyReport.from_row(row) for row in csv.DictReader(fh)]


# -- modes -----------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o)}")


def _initial_state(cp, mode: str) -> FlowState:
    restart = cp["run"]["restart"].strip()
    if restart:
        try:
            st = read_checkpoint(restart)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot restart from {restart}: {exc}") from exc
        if st.compressible != (mode == "compressible"):
            raise ConfigError("restart checkpoint does not match the run mode")
        return st
    grid = grid_from(cp)
    eps = _get(cp, "run", "eps", float)
    try:
        comp, inc = well_prepared_ic(grid, eps, _get(cp, "run", "alpha0", float),
                                     _get(cp, "run", "seed", int), coefficients_from(cp),
                                     _get(cp, "run", "amplitude", float))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return comp if mode == "compressible" else inc


def run_single(cp, out: Path, mode: str) -> int:
    c = coefficients_from(cp)
    problems = validate_coefficients(c)
    if problems:
        raise ConfigError("inadmissible coefficients: " + "; ".join(problems))
    step_cfg = step_config_from(cp)
    if mode == "incompressible" and step_cfg.scheme == "picard":
        raise ConfigError("picard scheme needs compressible mode")
    state = _initial_state(cp, mode)
    t_final = _get(cp, "run", "t_final", float)
    if t_final <= state.time:
        raise ConfigError("t_final must exceed the initial time")
    monitor = RunMonitor(c, diagnostics_from(cp), cadence=_get(cp, "run", "cadence", int))
    snap_every = _get(cp, "run", "snapshot_every", int)
    counter = {"n": 0}

    def observer(st):
        monitor(st)
        if snap_every > 0 and counter["n"] % snap_every == 0:
            write_checkpoint(out / f"snapshot_{counter['n']:07d}.bin", st)
        counter["n"] += 1

    code, failure, final = EXIT_OK, None, state
    t0 = time.perf_counter()
    try:
        final = integrate(state, c, t_final, step_cfg, observer)
    except NumericalAbort as exc:
        code, failure = EXIT_ABORT, exc.reason
        final = exc.last_good or state
        log.error("numerical abort: %s", exc.reason)
    reports = monitor.finish()
    with ReportWriter(out / "report.csv") as w:
        for r in reports:
            w.emit(r)
    write_checkpoint(out / "checkpoint_final.bin", final)
    _write_json(out / "result.json", {
        "status": "ok" if code == EXIT_OK else "numerical_abort", "failure": failure,
        "final_time": final.time, "steps": counter["n"] - 1,
        "wall_time": time.perf_counter() - t0,
        "max_constraint_drift": monitor.max_drift,
        "max_orthogonality": monitor.max_orthogonality,
        "sup_div_u_over_eps": monitor.sup_div_over_eps,
        "sup_sqrt_rho_ratio": monitor.sup_sqrt_rho_ratio,
    })
    return code


def run_sweep(cp, out: Path) -> int:
    try:
        dt_max_raw = cp["sweep"]["dt_max"].strip()
        cfg = SweepConfig(
            eps_ladder=_floats(cp, "sweep", "eps_ladder"),
            alpha0=_get(cp, "run", "alpha0", float), t_final=_get(cp, "run", "t_final", float),
            grid=grid_from(cp), coefficients=coefficients_from(cp),
            scheme=cp["run"]["scheme"].strip(), seed=_get(cp, "run", "seed", int),
            sample_times=_floats(cp, "sweep", "sample_times"),
            amplitude=_get(cp, "run", "amplitude", float),
            cfl_safety=_get(cp, "run", "cfl_safety", float),
            dt_max=float(dt_max_raw) if dt_max_raw else None,
            diagnostics=diagnostics_from(cp))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = mach_sweep(cfg)
    with open(out / "sweep_summary.jsonl", "w") as fh:
        fh.write(json.dumps({"record": "summary", **result.summary()}, default=_json_default) + "\n")
        for rec in result.records():
            fh.write(json.dumps({"record": "run", **rec}, default=_json_default) + "\n")
    with open(out / "sweep_series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "time", "modulated_energy"])
        for run in result.runs:
            for t, v in zip(result.sample_times, run.modulated_energy):
                w.writerow([repr(run.eps), repr(t), repr(v)])
    log.info("beta_hat=%s beta0=%s", result.beta_hat, result.beta0)
    return EXIT_OK if result.ok else EXIT_ABORT


def _check_states(cp):
    kind = cp["check"]["state"].strip()
    n = _get(cp, "check", "samples", int)
    grid = grid_from(cp)
    eps = _get(cp, "run", "eps", float)
    seed = _get(cp, "run", "seed", int)
    if kind == "equilibrium":
        return [FlowState.equilibrium(grid, eps)]
    if kind == "initial":
        return [well_prepared_ic(grid, eps, _get(cp, "run", "alpha0", float), seed,
                                 coefficients_from(cp), _get(cp, "run", "amplitude", float))[0]]
    if kind == "random":
        rng = np.random.default_rng(seed)
        return [FlowState(grid=grid, u=grid.random_field(rng, (2,)),
                          d=grid.random_field(rng, (2,)), ddot=grid.random_field(rng, (2,)),
                          phi=0.5 * grid.random_field(rng), eps=eps) for _ in range(n)]
    raise ConfigError("[check] state must be equilibrium, initial or random")


def run_check(cp, out: Path) -> int:
    c = coefficients_from(cp)
    problems = validate_coefficients(c)
    if problems:
        raise ConfigError("inadmissible coefficients: " + "; ".join(problems))
    tol = _get(cp, "check", "tolerance", float)
    s = diagnostics_from(cp).s
    failed = 0
    with open(out / "check.jsonl", "w") as fh:
        for i, st in enumerate(_check_states(cp)):
            res = cancellation_residuals(st, c, s)
            D, parts = dissipation_Ds(st, c, s)
            bad = [k for k in RESIDUAL_NAMES if res[k].relative > tol]
            if min([D, *parts.values()]) < -1e-12:
                bad.append("dissipation_sign")
            failed += bool(bad)
            rec = {"sample": i, "failed": bad, "D_s": D,
                   **{f"{k}_abs": res[k].absolute for k in RESIDUAL_NAMES},
                   **{f"{k}_rel": res[k].relative for k in RESIDUAL_NAMES}}
            fh.write(json.dumps(rec) + "\n")
    log.info("check: %d failing samples", failed)
    print(f"check: {failed} failing sample(s)")
    return EXIT_CHECK if failed else EXIT_OK


def run_validate(cp, out: Path) -> int:
    c = coefficients_from(cp)
    problems = validate_coefficients(c)
    _write_json(out / "violations.json", {"violations": problems,
                                          "lambda1": c.lambda1, "lambda2": c.lambda2})
    print(json.dumps({"violations": problems}))
    return EXIT_OK if not problems else EXIT_CHECK


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elmach", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "check", "validate-coeffs"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--eps", type=float, help="override [run] eps")
        sp.add_argument("--resolution", help="grid size as NXxNY, e.g. 64x64")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cp = load_config(args.config)
        apply_flags(cp, args)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
        mode = cp["run"]["mode"].strip() if args.command == "run" else args.command
        if mode not in MODES:
            raise ConfigError(f"[run] mode must be one of {MODES}")
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
        cp["run"]["mode"] = mode
        _write_json(out / "manifest.json", {
            "version": __version__, "command": args.command, "threads": args.threads,
            "report_schema_version": REPORT_SCHEMA_VERSION, "config": config_dict(cp)})
        if mode in ("compressible", "incompressible"):
            return run_single(cp, out, mode)
        if mode == "sweep":
            return run_sweep(cp, out)
        if mode == "check":
            return run_check(cp, out)
        return run_validate(cp, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc.reason}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
