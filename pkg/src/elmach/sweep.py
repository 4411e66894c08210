"""Mach-number sweep: well-prepared data, an epsilon ladder and the rate fit."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import DiagnosticsConfig, RunMonitor, modulated_energy, pi_integral
from .grid import Grid
from .model import FlowState, LeslieCoefficients, validate_coefficients
from .stepper import NumericalAbort, StepConfig, cfl_dt, steps_for, trajectory

log = logging.getLogger(__name__)

MAX_AMPLITUDE = 1.0


def beta0(alpha0: float) -> float:
    """Theoretical exponent of the modulated energy in the Mach number."""
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    return min(2.0, alpha0, 1.0 + alpha0 / 2.0)


def fit_rate(eps_list, values) -> tuple[float, float]:
    """Least-squares slope of ``log(value)`` against ``log(eps)`` and the RMS misfit."""
    eps = np.asarray(eps_list, dtype=float)
    vals = np.asarray(values, dtype=float)
    if eps.shape != vals.shape or eps.ndim != 1:
        raise ValueError("eps_list and values must be 1-D of equal length")
    if eps.size < 2:
        raise ValueError("need at least two points to fit a rate")
    if np.any(vals <= 0) or np.any(eps <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("rate fit needs strictly positive finite values")
    if np.unique(eps).size < 2:
        raise ValueError("need at least two distinct eps values")
    x, y = np.log(eps), np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


# -- initial data -----------------------------------------------------------------

def density_profile(grid: Grid) -> np.ndarray:
    """Zero-mean two-mode profile with sup norm 1/4."""
    X, Y = grid.coords
    kx, ky = 2 * math.pi / grid.lx, 2 * math.pi / grid.ly
    return (np.cos(kx * X) + np.cos(kx * X + ky * Y)) / 8.0


def _angle_profile(grid: Grid) -> np.ndarray:
    X, Y = grid.coords
    kx, ky = 2 * math.pi / grid.lx, 2 * math.pi / grid.ly
    return np.sin(ky * Y) + 0.5 * np.cos(kx * X - ky * Y)


def _rate_profile(grid: Grid) -> np.ndarray:
    X, Y = grid.coords
    kx, ky = 2 * math.pi / grid.lx, 2 * math.pi / grid.ly
    return np.cos(kx * X) + 0.5 * np.sin(kx * X + ky * Y)


def well_prepared_ic(grid: Grid, eps: float, alpha0: float, seed: int,
                     c: LeslieCoefficients | None = None, amplitude: float = 0.05,
                     s: int = 3, velocity_modes: int = 2) -> tuple[FlowState, FlowState]:
    """Compressible state at Mach number ``eps`` and the matching incompressible state.

    The budget ``amplitude`` is split evenly between ``||u0||^2``,
    ``||ddot0||^2`` and ``kappa ||grad theta||^2`` in ``H^s``.  The density
    perturbation is ``eps**(alpha0/2)`` times :func:`density_profile`.
    """
    c = c or LeslieCoefficients()
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    if not 0 <= amplitude <= MAX_AMPLITUDE:
        raise ValueError(f"amplitude {amplitude} exceeds the smallness budget {MAX_AMPLITUDE}")
    share = amplitude / 3.0
    rng = np.random.default_rng(seed)

    u = grid.leray_project(grid.random_field(rng, (2,), decay=2.0, max_index=velocity_modes))
    norm = grid.sobolev_norm_sq(u, s)
    u = u * math.sqrt(share / norm) if norm > 0 else u

    theta_hat = _angle_profile(grid)
    a_theta = math.sqrt(share / (c.kappa * grid.sobolev_norm_sq(grid.gradient(theta_hat), s)))
    theta = a_theta * theta_hat
    g_hat = _rate_profile(grid)
    g = math.sqrt(share / grid.sobolev_norm_sq(g_hat, s)) * g_hat

    d = np.stack([np.cos(theta), np.sin(theta)])
    ddot = g * np.stack([-np.sin(theta), np.cos(theta)])
    phi = eps ** (alpha0 / 2.0) * density_profile(grid)
    meta = {"alpha0": alpha0, "seed": seed, "amplitude": amplitude}
    comp = FlowState(grid=grid, u=u, d=d, ddot=ddot, phi=phi, eps=eps, meta=dict(meta))
    inc = FlowState(grid=grid, u=u.copy(), d=d.copy(), ddot=ddot.copy(), meta=dict(meta))
    return comp, inc


# -- sweep --------------------------------------------------------------------------

@dataclass
class SweepConfig:
    """Everything needed to reproduce one sweep."""

    eps_ladder: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    alpha0: float = 2.0
    t_final: float = 0.5
    grid: Grid = field(default_factory=Grid)
    coefficients: LeslieCoefficients = field(default_factory=LeslieCoefficients)
    scheme: str = "imex"
    seed: int = 0
    sample_times: list | None = None
    amplitude: float = 0.05
    cfl_safety: float = 0.4
    dt_max: float | None = None
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)

    def __post_init__(self):
        ladder = [float(e) for e in self.eps_ladder]
        if not ladder:
            raise ValueError("eps ladder is empty")
        if any(not 0 < e <= 1 for e in ladder):
            raise ValueError("eps values must lie in (0, 1]")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("eps ladder must be strictly decreasing")
        self.eps_ladder = ladder
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.scheme not in ("rk4", "imex"):
            raise ValueError("sweeps support the rk4 and imex schemes")
        times = sorted(set(float(t) for t in (self.sample_times or [])) | {float(self.t_final)})
        if times[0] <= 0 or times[-1] > self.t_final * (1 + 1e-12):
            raise ValueError("sample times must lie in (0, t_final]")
        self.sample_times = times
        problems = validate_coefficients(self.coefficients)
        if problems:
            raise ValueError("inadmissible coefficients: " + "; ".join(problems))


@dataclass
class EpsRun:
    """Outcome of one compressible run of the ladder."""

    eps: float
    modulated_energy: list
    steps: int
    dt: float
    sup_div_u_over_eps: float
    sup_sqrt_rho_ratio: float
    max_constraint_drift: float
    max_orthogonality: float
    initial_pi: float
    failure: str | None = None


@dataclass
class SweepResult:
    eps_ladder: list
    alpha0: float
    beta0: float
    sample_times: list
    runs: list
    beta_hat: float | None
    fit_residual: float | None
    wall_time: float
    failures: dict

    @property
    def terminal_modulated_energy(self) -> list:
        return [r.modulated_energy[-1] if r.modulated_energy else math.nan for r in self.runs]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        """Flat record for the sweep summary stream."""
        return {
            "alpha0": self.alpha0,
            "beta0": self.beta0,
            "beta_hat": self.beta_hat,
            "fit_residual": self.fit_residual,
            "eps_ladder": self.eps_ladder,
            "terminal_modulated_energy": self.terminal_modulated_energy,
            "sample_times": self.sample_times,
            "failures": {str(k): v for k, v in self.failures.items()},
            "wall_time": self.wall_time,
        }

    def records(self) -> list[dict]:
        """One record per eps run, carrying its series."""
        return [{"alpha0": self.alpha0, **asdict(r)} for r in self.runs]


def _uniform_config(state: FlowState, c: LeslieCoefficients, scheme: str, safety: float,
                    dt_max: float | None, interval: float) -> StepConfig:
    dt = cfl_dt(state, c, scheme, safety)
    if dt_max is not None:
        dt = min(dt, dt_max)
    _, dt = steps_for(interval, dt)
    return StepConfig(scheme=scheme, dt=dt, cfl_safety=safety)


def _run_to_samples(state: FlowState, c: LeslieCoefficients, cfg: SweepConfig,
                    monitor: RunMonitor | None = None) -> tuple[list[FlowState], int, float]:
    """Integrate through every sample time with uniform steps per interval."""
    out, steps, dt_used = [], 0, math.inf
    t_prev = state.time
    for t_sample in cfg.sample_times:
        step_cfg = _uniform_config(state, c, cfg.scheme, cfg.cfl_safety, cfg.dt_max,
                                   t_sample - t_prev)
        dt_used = min(dt_used, step_cfg.dt)
        first = True
        for st in trajectory(state, c, t_sample, step_cfg):
            if first and steps > 0:
                first = False
                continue  # already observed as the end of the previous interval
            first = False
            if monitor is not None:
                monitor(st)
            state = st
        steps += int(round((t_sample - t_prev) / step_cfg.dt))
        state.time = t_sample
        out.append(state)
        t_prev = t_sample
    return out, steps, dt_used


def mach_sweep(cfg: SweepConfig) -> SweepResult:
    """Run the incompressible reference and every compressible run of the ladder."""
    t0 = time.perf_counter()
    c = cfg.coefficients
    _, inc0 = well_prepared_ic(cfg.grid, cfg.eps_ladder[0], cfg.alpha0, cfg.seed, c,
                               cfg.amplitude)
    log.info("reference run to t=%g", cfg.t_final)
    ref_states, _, _ = _run_to_samples(inc0, c, cfg)

    runs, failures = [], {}
    for eps in cfg.eps_ladder:
        comp0, _ = well_prepared_ic(cfg.grid, eps, cfg.alpha0, cfg.seed, c, cfg.amplitude)
        mon = RunMonitor(c, cfg.diagnostics, full_reports=False)
        failure = None
        try:
            states, steps, dt = _run_to_samples(comp0, c, cfg, mon)
            series = [modulated_energy(st, ref, c) for st, ref in zip(states, ref_states)]
        except NumericalAbort as exc:
            failure, series, steps, dt = exc.reason, [], 0, math.nan
            failures[eps] = failure
            log.error("run at eps=%g aborted: %s", eps, failure)
        log.info("eps=%g: %d steps, terminal modulated energy %s", eps, steps,
                 series[-1] if series else None)
        runs.append(EpsRun(eps=eps, modulated_energy=series, steps=steps, dt=dt,
                           sup_div_u_over_eps=mon.sup_div_over_eps,
                           sup_sqrt_rho_ratio=mon.sup_sqrt_rho_ratio,
                           max_constraint_drift=mon.max_drift,
                           max_orthogonality=mon.max_orthogonality,
                           initial_pi=pi_integral(comp0, c), failure=failure))

    beta_hat = resid = None
    if len(runs) >= 2 and not failures:
        beta_hat, resid = fit_rate([r.eps for r in runs], [r.modulated_energy[-1] for r in runs])
    return SweepResult(eps_ladder=list(cfg.eps_ladder), alpha0=cfg.alpha0,
                       beta0=beta0(cfg.alpha0), sample_times=list(cfg.sample_times), runs=runs,
                       beta_hat=beta_hat, fit_residual=resid,
                       wall_time=time.perf_counter() - t0, failures=failures)
