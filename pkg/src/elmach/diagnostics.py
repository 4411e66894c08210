"""Energy functionals, energy-law residuals and cancellation checks.

All norms are built from :meth:`Grid.sobolev_norm_sq`, i.e. the sum over
multi-indices ``|m| <= s`` of weighted L2 norms of ``d^m f``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from scipy.integrate import trapezoid

from . import model as _m
from .grid import Grid, multi_indices
from .model import FlowState, LeslieCoefficients

RESIDUAL_NAMES = ("cs0", "csm", "cs1", "cs2", "p_rho_evolution", "dt_singular")
BREAKDOWN_NAMES = ("viscous_grad", "viscous_div", "mu1", "lambda1", "mu56")


@dataclass(frozen=True)
class Residual:
    """Absolute residual of an identity and the same relative to its largest term."""

    absolute: float
    relative: float

    @classmethod
    def of(cls, lhs_terms, rhs_terms) -> "Residual":
        terms = [float(t) for t in (*lhs_terms, *rhs_terms)]
        r = abs(sum(lhs_terms) - sum(rhs_terms))
        scale = max((abs(t) for t in terms), default=0.0)
        return cls(r, r / scale if scale > 0 else 0.0)


def _nsq(grid: Grid, f, s, weight=None, homogeneous=False) -> float:
    return grid.sobolev_norm_sq(f, s, weight, homogeneous)


def _rho_and_w(state: FlowState, c: LeslieCoefficients):
    rho = state.rho
    return rho, c.dpressure(rho)


def _check_s(s: int, lo: int = 0) -> None:
    if not isinstance(s, (int, np.integer)) or s < lo or s > 4:
        raise ValueError(f"Sobolev order must be an integer in [{lo}, 4], got {s!r}")


# -- energy and dissipation ------------------------------------------------------

def energy_Es(state: FlowState, c: LeslieCoefficients, s: int = 3) -> float:
    """High-order energy: weighted ``H^s`` norms of ``phi, u, ddot`` plus ``kappa |grad d|``."""
    _check_s(s)
    g = state.grid
    rho, dp = _rho_and_w(state, c)
    total = _nsq(g, state.u, s, rho) + _nsq(g, state.ddot, s, rho)
    total += c.kappa * _nsq(g, g.gradient(state.d), s)
    if state.compressible:
        total += _nsq(g, state.phi, s, dp)
    return total


def _ratio(c: LeslieCoefficients) -> float:
    if c.lambda1 == 0:
        if c.lambda2 != 0:
            raise ValueError("lambda1 = 0 with lambda2 != 0 has no dissipation decomposition")
        return 0.0
    return c.lambda2 / c.lambda1


def _leslie_sums(state: FlowState, c: LeslieCoefficients, s: int):
    """Per multi-index sums used by the dissipation functionals."""
    g = state.grid
    d, ddot = state.d, state.ddot
    G_hat = g.fft(g.gradient(state.u))
    ddot_hat = g.fft(ddot)
    r = _ratio(c)
    dAd = rot = Ad2 = 0.0
    for m in multi_indices(s):
        Gm = G_hat if m == (0, 0) else g.partial_hat(G_hat, m)
        Gm = g.ifft(Gm)
        Am, Bm = _m._strain_vort(Gm)
        Amd = _m._matvec(Am, d)
        ddm = ddot if m == (0, 0) else g.ifft(g.partial_hat(ddot_hat, m))
        N = ddm + _m._matvec(Bm, d) + r * Amd
        q = np.sum(d * Amd, axis=0)
        dAd += float(np.sum(q * q))
        rot += float(np.sum(N * N))
        Ad2 += float(np.sum(Amd * Amd))
    a = g.cell_area
    return dAd * a, rot * a, Ad2 * a


def dissipation_Ds(state: FlowState, c: LeslieCoefficients, s: int = 3) -> tuple[float, dict]:
    """Dissipation functional and its five sign-definite terms.

    Returns ``(total, breakdown)`` with keys ``viscous_grad``,
    ``viscous_div``, ``mu1``, ``lambda1`` and ``mu56``.
    """
    _check_s(s)
    g = state.grid
    r = _ratio(c)
    dAd, rot, Ad2 = _leslie_sums(state, c, s)
    grad_u = g.gradient(state.u)
    div_u = grad_u[0, 0] + grad_u[1, 1]
    parts = {
        "viscous_grad": 0.5 * c.mu4 * _nsq(g, grad_u, s),
        "viscous_div": (0.5 * c.mu4 + c.xi) * _nsq(g, div_u, s),
        "mu1": c.mu1 * dAd,
        "lambda1": -c.lambda1 * rot,
        "mu56": (c.mu5 + c.mu6 + c.lambda2 * r) * Ad2,
    }
    return sum(parts.values()), parts


def nonlinear_As(state: FlowState, c: LeslieCoefficients, s: int = 3) -> float:
    """Product of norms bounding the nonlinear terms of the energy estimate."""
    _check_s(s, 1)
    g = state.grid
    grad_d = g.gradient(state.d)
    hom = lambda f: math.sqrt(_nsq(g, f, s, homogeneous=True))  # noqa: E731
    phi = hom(state.phi) if state.compressible else 0.0
    ddot = math.sqrt(_nsq(g, state.ddot, s))
    gd = hom(grad_d)
    left = phi + hom(state.u) + gd + ddot
    right = math.sqrt(_nsq(g, g.gradient(state.u), s)) + phi + gd + ddot
    return left * right


def instant_energy(state: FlowState, c: LeslieCoefficients, s: int = 3,
                   eta: float = 0.05) -> float:
    """Energy with the ``eta``-weighted cross terms that make the estimate close."""
    _check_s(s, 1)
    g = state.grid
    E = energy_Es(state, c, s)
    u, d, ddot = state.u, state.d, state.ddot
    out = E + eta * (_nsq(g, ddot + d, s, homogeneous=True) - _nsq(g, ddot, s, homogeneous=True)
                     - _nsq(g, d, s, homogeneous=True))
    if state.compressible:
        eps = state.eps
        gphi = g.gradient(state.phi)
        out += eps * eta * (_nsq(g, u + gphi, s - 1) - _nsq(g, u, s - 1) - _nsq(g, gphi, s - 1))
    return out


def instant_dissipation(state: FlowState, c: LeslieCoefficients, s: int = 3, eta: float = 0.05,
                        C: float = 1.0, C0: float = 1.0) -> float:
    """Dissipation matched to :func:`instant_energy`."""
    _check_s(s, 1)
    g = state.grid
    D, _ = dissipation_Ds(state, c, s)
    rho, dp = _rho_and_w(state, c)
    out = D + 0.75 * c.kappa * eta * _nsq(g, g.gradient(state.d), s, 1.0 / rho, homogeneous=True)
    if state.compressible:
        out += 0.5 * eta * _nsq(g, g.gradient(state.phi), s - 1, dp / rho)
    _, rot, _ = _leslie_sums(state, c, s)
    out -= eta * (C + C0) * (_nsq(g, g.gradient(state.u), s) + rot)
    return out


def global_dissipation(state: FlowState, c: LeslieCoefficients, s: int = 3) -> float:
    """Dissipation including the acoustic and elastic parts recovered by the cross terms."""
    _check_s(s, 1)
    g = state.grid
    D, _ = dissipation_Ds(state, c, s)
    rho, dp = _rho_and_w(state, c)
    out = D + _nsq(g, g.gradient(state.d), s, 1.0 / rho, homogeneous=True)
    if state.compressible:
        out += _nsq(g, g.gradient(state.phi), s - 1, dp / rho)
    return out


# -- time-derivative energy -------------------------------------------------------

def _dt_energy_of(state: FlowState, c: LeslieCoefficients, phi_t, u_t, s: int) -> float:
    g = state.grid
    rho, dp = _rho_and_w(state, c)
    out = _nsq(g, u_t, s - 2, rho)
    if phi_t is not None:
        out += _nsq(g, phi_t, s - 2, dp)
    return out


def _lagrange_derivative(times, values, k: int):
    """Derivative at ``times[k]`` of the quadratic through three samples."""
    t0, t1, t2 = times
    t = times[k]
    w0 = ((t - t1) + (t - t2)) / ((t0 - t1) * (t0 - t2))
    w1 = ((t - t0) + (t - t2)) / ((t1 - t0) * (t1 - t2))
    w2 = ((t - t0) + (t - t1)) / ((t2 - t0) * (t2 - t1))
    return w0 * values[0] + w1 * values[1] + w2 * values[2]


def dt_energy_from_states(states: list[FlowState], k: int, c: LeslieCoefficients,
                          s: int = 3) -> float:
    """Energy of ``(d_t phi, d_t u)`` at ``states[k]`` from three consecutive states.

    The derivatives come from the quadratic interpolant, so ``k = 1`` is the
    centered difference and ``k = 0, 2`` are the one-sided second-order ones.
    """
    _check_s(s, 2)
    if len(states) != 3:
        raise ValueError("need exactly three consecutive states")
    times = [st.time for st in states]
    if not (times[0] < times[1] < times[2]):
        raise ValueError("states must have increasing times")
    u_t = _lagrange_derivative(times, [st.u for st in states], k)
    phi_t = None
    if states[k].compressible:
        phi_t = _lagrange_derivative(times, [st.phi for st in states], k)
    return _dt_energy_of(states[k], c, phi_t, u_t, s)


def dt_energy_from_tendencies(state: FlowState, c: LeslieCoefficients, s: int = 3) -> float:
    """Same functional evaluated on the analytic tendencies."""
    _check_s(s, 2)
    t = _m.rhs(state, c)
    return _dt_energy_of(state, c, t.phi, t.u, s)


# -- relative entropy, modulated energy, monitors -------------------------------------

def _pi_core(c: LeslieCoefficients, x: np.ndarray) -> np.ndarray:
    """``(1+x)**gamma - gamma*x - 1`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    gam = c.gamma
    direct = np.expm1(gam * np.log1p(x)) - gam * x
    small = np.abs(x) < 1e-2
    if np.any(small):
        xs = np.where(small, x, 0.0)
        series = np.zeros_like(xs)
        coef, power = 1.0, xs.copy()
        for k in range(1, 12):
            coef *= (gam - k + 1) / k
            if k >= 2:
                series += coef * power
            power = power * xs
        direct = np.where(small, series, direct)
    return np.maximum(direct, 0.0)


def pi_density(state: FlowState, c: LeslieCoefficients) -> np.ndarray:
    """Relative entropy density of the pressure, non-negative."""
    if not state.compressible:
        return np.zeros(state.grid.shape)
    eps = state.eps
    return c.a_tilde / ((c.gamma - 1.0) * eps**2) * _pi_core(c, eps * state.phi)


def pi_integral(state: FlowState, c: LeslieCoefficients) -> float:
    return float(np.sum(pi_density(state, c)) * state.grid.cell_area)


def modulated_energy(comp: FlowState, incomp: FlowState, c: LeslieCoefficients,
                     time_tol: float = 1e-9) -> float:
    """Distance between a compressible state and an incompressible reference."""
    if comp.grid != incomp.grid:
        raise ValueError("states live on different grids")
    if abs(comp.time - incomp.time) > time_tol * max(1.0, abs(comp.time)):
        raise ValueError(f"time mismatch: {comp.time} vs {incomp.time}")
    g = comp.grid
    sr = np.sqrt(comp.rho)
    du = sr * comp.u - incomp.u
    dd = sr * comp.ddot - incomp.ddot
    gdiff = g.gradient(comp.d - incomp.d)
    ddir = comp.d - incomp.d
    out = float(np.sum(du * du) + np.sum(dd * dd) + c.kappa * np.sum(gdiff * gdiff)
                + np.sum(ddir * ddir)) * g.cell_area
    return out + pi_integral(comp, c)


def sqrt_rho_ratio(state: FlowState, c: LeslieCoefficients) -> float:
    """``||sqrt(rho) - 1|| / (eps * <Pi, 1>^(1/2))``, with 0/0 taken as 0."""
    if not state.compressible:
        return 0.0
    g = state.grid
    x = state.eps * state.phi
    srm1 = x / (1.0 + np.sqrt(1.0 + x))
    num = math.sqrt(float(np.sum(srm1 * srm1)) * g.cell_area)
    den = state.eps * math.sqrt(pi_integral(state, c))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def div_u_linf(state: FlowState) -> float:
    return float(np.max(np.abs(state.grid.divergence(state.u))))


def uniform_bound_monitors(state: FlowState, c: LeslieCoefficients, s: int = 3,
                           div_linf_integral: float = 0.0, q_c: float = 1.0) -> dict:
    """Quantities that stay bounded uniformly in the Mach number.

    ``div_linf_integral`` is the time integral of ``||div u||_inf`` so far;
    the weight is ``exp(q_c * integral)``.  For incompressible states the
    divergence norm is reported unscaled.
    """
    _check_s(s, 2)
    g = state.grid
    div_norm = g.sobolev_norm(g.divergence(state.u), s - 2)
    eps = state.eps if state.compressible else 1.0
    return {
        "div_u_over_eps": div_norm / eps,
        "sqrt_rho_ratio": sqrt_rho_ratio(state, c),
        "Q_weight": math.exp(q_c * div_linf_integral),
    }


def q_weight(history: Iterable[FlowState], q_c: float = 1.0) -> float:
    """``exp(q_c * int ||div u||_inf dt)`` by the trapezoid rule over a history."""
    times, vals = [], []
    for st in history:
        times.append(st.time)
        vals.append(div_u_linf(st))
    if len(times) < 2:
        return 1.0
    return math.exp(q_c * float(trapezoid(vals, times)))


def constraint_drift(state: FlowState) -> tuple[float, float]:
    """``max ||d| - 1|`` and ``max |d . ddot|``."""
    norm = np.hypot(state.d[0], state.d[1])
    return float(np.max(np.abs(norm - 1.0))), float(np.max(np.abs(np.sum(state.d * state.ddot,
                                                                             axis=0))))


# -- cancellation identities ------------------------------------------------------------

def cancellation_residuals(state: FlowState, c: LeslieCoefficients, s: int = 3) -> dict:
    """Residuals of the algebraic cancellations behind the energy estimates.

    Returns a mapping from name to :class:`Residual`:

    ``cs0``
        singular pressure/continuity pairing at order zero
    ``csm``
        the same pairing summed over ``|m| <= s`` with its commutator
    ``cs1``
        transport of elastic energy against the Ericksen stress
    ``cs2``
        Leslie stress work against the director dissipation
    ``p_rho_evolution``
        evolution of ``p'(rho)`` along the flow, in the resolved band
    ``dt_singular``
        singular pairing for ``(d_t phi, d_t u)`` summed over ``|m| <= s - 2``

    The compressible-only identities report zero for incompressible states.
    Requires the Parodi relation for ``cs2``.
    """
    _check_s(s, 2)
    g = state.grid
    u, d, ddot = state.u, state.d, state.ddot
    ip = g.inner_product
    out = {}

    A, B = _m.strain_and_vorticity(g, u)
    grad_d = g.gradient(d)
    # cs1
    sig2 = _m.stress_sigma2(g, d, c)
    t1 = c.kappa * ip(g.laplacian(d), grad_d[:, 0] * u[0] + grad_d[:, 1] * u[1])
    t2 = ip(g.divergence(sig2), u)
    out["cs1"] = Residual.of([t1, t2], [])
    # cs2
    sig3 = _m.stress_sigma3(g, u, d, ddot, c)
    Ad, Bd = _m._matvec(A, d), _m._matvec(B, d)
    lhs = [ip(g.divergence(sig3), u), c.lambda1 * ip(ddot, ddot), c.lambda1 * ip(ddot, Bd),
           c.lambda2 * ip(ddot, Ad)]
    dAd = np.sum(d * Ad, axis=0)
    if c.lambda1 != 0:
        N = ddot + Bd + (c.lambda2 / c.lambda1) * Ad
        rhs = [-c.mu1 * ip(dAd, dAd), c.lambda1 * ip(N, N),
               -(c.mu5 + c.mu6 + c.lambda2**2 / c.lambda1) * ip(Ad, Ad)]
    else:
        N = ddot + Bd
        rhs = [-c.mu1 * ip(dAd, dAd), 2 * c.lambda2 * ip(N, Ad), -(c.mu5 + c.mu6) * ip(Ad, Ad)]
    out["cs2"] = Residual.of(lhs, rhs)

    if not state.compressible:
        for name in ("cs0", "csm", "p_rho_evolution", "dt_singular"):
            out[name] = Residual(0.0, 0.0)
        return {k: out[k] for k in RESIDUAL_NAMES}

    eps, phi = state.eps, state.phi
    rho = state.rho
    if float(np.min(rho)) <= 0:
        raise ValueError("density is not positive")
    dp, d2p = c.dpressure(rho), c.d2pressure(rho)
    w = dp / rho
    gphi = g.gradient(phi)
    div_u = g.divergence(u)
    out["cs0"] = Residual.of([ip(div_u, dp * phi) / eps, ip(w * gphi, rho * u) / eps],
                             [-ip(d2p * phi * gphi, u)])

    phi_h, u_h, div_h = g.fft(phi), g.fft(u), g.fft(div_u)
    wg_h = g.fft(w * gphi)
    gphi_h = g.fft(gphi)
    lhs_a = lhs_b = rhs_a = rhs_b = 0.0
    for m in multi_indices(s):
        phim = g.ifft(g.partial_hat(phi_h, m))
        um = g.ifft(g.partial_hat(u_h, m))
        divm = g.ifft(g.partial_hat(div_h, m))
        wgm = g.ifft(g.partial_hat(wg_h, m))
        gphim = g.ifft(g.partial_hat(gphi_h, m))
        lhs_a += ip(divm, dp * phim) / eps
        lhs_b += ip(wgm, rho * um) / eps
        rhs_a += -ip(d2p * gphi * phim, um)
        rhs_b += ip(wgm - w * gphim, rho * um) / eps
    out["csm"] = Residual.of([lhs_a, lhs_b], [rhs_a, rhs_b])

    tend = _m.compressible_rhs(state, c)
    dealias = lambda f: g.ifft(g.fft(f) * g.dealias_mask)  # noqa: E731
    terms = [d2p * eps * tend.phi, eps * d2p * (u[0] * gphi[0] + u[1] * gphi[1]),
             d2p * rho * div_u]
    projected = [dealias(t) for t in terms]
    resid = math.sqrt(ip(sum(projected), sum(projected)))
    scale = max(math.sqrt(ip(t, t)) for t in projected)
    out["p_rho_evolution"] = Residual(resid, resid / scale if scale > 0 else 0.0)

    psi_h, v_h = g.fft(tend.phi), g.fft(tend.u)
    divv_h = g.div_hat(v_h)
    s1 = s2 = r = 0.0
    for m in multi_indices(s - 2):
        psim = g.ifft(g.partial_hat(psi_h, m))
        vm = g.ifft(g.partial_hat(v_h, m))
        divvm = g.ifft(g.partial_hat(divv_h, m))
        gpsim = g.grad_hat(g.partial_hat(psi_h, m))
        s1 += ip(divvm, dp * psim) / eps
        s2 += ip(dp * gpsim, vm) / eps
        r += -ip(d2p * gphi * psim, vm)
    out["dt_singular"] = Residual.of([s1, s2], [r])
    return {k: out[k] for k in RESIDUAL_NAMES}


# -- basic energy law ----------------------------------------------------------------------

def basic_energy(state: FlowState, c: LeslieCoefficients) -> float:
    """Kinetic, director and elastic energy plus the pressure relative entropy."""
    g = state.grid
    rho = state.rho
    grad_d = g.gradient(state.d)
    out = 0.5 * float(np.sum(rho * (state.u**2).sum(0)) + np.sum(rho * (state.ddot**2).sum(0))
                      + c.kappa * np.sum(grad_d * grad_d)) * g.cell_area
    return out + pi_integral(state, c)


def energy_law_terms(state: FlowState, c: LeslieCoefficients) -> tuple[float, float, float]:
    """``(basic energy, viscous dissipation, Leslie coupling)`` at one instant."""
    g = state.grid
    u, d, ddot = state.u, state.d, state.ddot
    Gu = g.gradient(u)
    A, B = _m._strain_vort(Gu)
    div_u = Gu[0, 0] + Gu[1, 1]
    a = g.cell_area
    diss = (0.5 * c.mu4 * float(np.sum(Gu * Gu)) + (0.5 * c.mu4 + c.xi) * float(np.sum(div_u**2))) * a
    sig3 = g.dealias(_m._sigma3(c, A, B, d, ddot))
    N = ddot + _m._matvec(B, d)
    coup = (float(np.sum(g.divergence(sig3) * u)) + c.lambda1 * float(np.sum(N * ddot))
            + c.lambda2 * float(np.sum(_m._matvec(A, d) * ddot))) * a
    return basic_energy(state, c), diss, coup


@dataclass
class EnergyLawResult:
    """Per-step energy-law terms; ``residual[i]`` belongs to ``times[i + 1]``."""

    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    coupling: np.ndarray
    residual: np.ndarray

    @property
    def energy_scale(self) -> float:
        return float(np.max(np.abs(self.energy)))

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def energy_law_residual(times, energy, dissipation, coupling, rtol: float = 1e-8) -> EnergyLawResult:
    """Centered-difference residual of ``dE/dt + dissipation - coupling``."""
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise ValueError("need at least three states")
    steps = np.diff(times)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > rtol * steps[0]:
        raise ValueError("energy-law residual needs a uniform time step")
    E, Dv, Cp = (np.asarray(x, dtype=float) for x in (energy, dissipation, coupling))
    dE = (E[2:] - E[:-2]) / (2 * steps[0])
    return EnergyLawResult(times, E, Dv, Cp, dE + Dv[1:-1] - Cp[1:-1])


def basic_energy_and_residual(history: Iterable[FlowState], c: LeslieCoefficients) -> EnergyLawResult:
    """Energy-law residual along a sequence of states at a uniform step.

    States are consumed one at a time, so a generator from
    :func:`stepper.trajectory` works without storing the run.
    """
    times, E, Dv, Cp = [], [], [], []
    for st in history:
        e, dv, cp = energy_law_terms(st, c)
        times.append(st.time)
        E.append(e)
        Dv.append(dv)
        Cp.append(cp)
    return energy_law_residual(times, E, Dv, Cp)


# -- reports ------------------------------------------------------------------------------

@dataclass
class EnergyReport:
    """One row of diagnostics at a given time."""

    time: float
    E_s: float
    D_s: float
    A_s: float
    basic_energy: float
    pi_integral: float
    instant_E_eta: float
    instant_D_eta: float
    global_D: float
    dt_energy: float
    div_u_over_eps: float
    sqrt_rho_ratio: float
    Q_weight: float
    constraint_drift_max: float
    orthogonality_max: float
    D_s_breakdown: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        """Flat mapping with one column per scalar."""
        row = {k: v for k, v in asdict(self).items() if k not in ("D_s_breakdown", "residuals")}
        for name in BREAKDOWN_NAMES:
            row[f"D_s_{name}"] = self.D_s_breakdown.get(name, 0.0)
        for name in RESIDUAL_NAMES:
            res = self.residuals.get(name, Residual(0.0, 0.0))
            row[f"res_{name}_abs"] = res.absolute
            row[f"res_{name}_rel"] = res.relative
        return row

    @classmethod
    def from_row(cls, row: dict) -> "EnergyReport":
        scalars = {f: float(row[f]) for f in cls.scalar_fields()}
        breakdown = {n: float(row[f"D_s_{n}"]) for n in BREAKDOWN_NAMES}
        residuals = {n: Residual(float(row[f"res_{n}_abs"]), float(row[f"res_{n}_rel"]))
                     for n in RESIDUAL_NAMES}
        return cls(**scalars, D_s_breakdown=breakdown, residuals=residuals)

    @classmethod
    def scalar_fields(cls) -> list[str]:
        return [f for f in cls.__dataclass_fields__ if f not in ("D_s_breakdown", "residuals")]

    @classmethod
    def columns(cls) -> list[str]:
        cols = cls.scalar_fields() + [f"D_s_{n}" for n in BREAKDOWN_NAMES]
        for n in RESIDUAL_NAMES:
            cols += [f"res_{n}_abs", f"res_{n}_rel"]
        return cols


@dataclass
class DiagnosticsConfig:
    s: int = 3
    eta: float = 0.05
    C: float = 1.0
    C0: float = 1.0
    q_c: float = 1.0
    residuals: bool = True


def energy_report(state: FlowState, c: LeslieCoefficients, cfg: DiagnosticsConfig | None = None,
                  dt_energy: float = math.nan, div_linf_integral: float = 0.0) -> EnergyReport:
    cfg = cfg or DiagnosticsConfig()
    s = cfg.s
    D, parts = dissipation_Ds(state, c, s)
    mon = uniform_bound_monitors(state, c, s, div_linf_integral, cfg.q_c)
    drift, orth = constraint_drift(state)
    if math.isnan(dt_energy):
        dt_energy = dt_energy_from_tendencies(state, c, s)
    res = cancellation_residuals(state, c, s) if cfg.residuals else {}
    return EnergyReport(
        time=state.time, E_s=energy_Es(state, c, s), D_s=D, A_s=nonlinear_As(state, c, s),
        basic_energy=basic_energy(state, c), pi_integral=pi_integral(state, c),
        instant_E_eta=instant_energy(state, c, s, cfg.eta),
        instant_D_eta=instant_dissipation(state, c, s, cfg.eta, cfg.C, cfg.C0),
        global_D=global_dissipation(state, c, s), dt_energy=dt_energy,
        div_u_over_eps=mon["div_u_over_eps"], sqrt_rho_ratio=mon["sqrt_rho_ratio"],
        Q_weight=mon["Q_weight"], constraint_drift_max=drift, orthogonality_max=orth,
        D_s_breakdown=parts, residuals=res)


class RunMonitor:
    """Observer for :func:`stepper.integrate` that samples reports and per-step scalars.

    Every state updates the running ``int ||div u||_inf dt``, the sup of the
    uniform-bound monitors and the constraint drift.  Every ``cadence``
    steps (and at the last state) a full :class:`EnergyReport` is built; its
    time-derivative energy uses the neighbouring states.
    """

    def __init__(self, c: LeslieCoefficients, cfg: DiagnosticsConfig | None = None,
                 cadence: int = 10, energy_law: bool = False, full_reports: bool = True):
        self.c = c
        self.cfg = cfg or DiagnosticsConfig()
        self.cadence = max(1, int(cadence))
        self.energy_law = energy_law
        self.full_reports = full_reports
        self.reports: list[EnergyReport] = []
        self.window: deque = deque(maxlen=3)
        self.pending: list[int] = []
        self.step = -1
        self.div_integral = 0.0
        self._last_div = None
        self.sup_div_over_eps = 0.0
        self.sup_sqrt_rho_ratio = 0.0
        self.max_drift = 0.0
        self.max_orthogonality = 0.0
        self.max_div_u = 0.0
        self.law_terms: list[tuple[float, float, float, float]] = []

    def __call__(self, state: FlowState) -> None:
        self.step += 1
        g = state.grid
        div = g.divergence(state.u)
        dinf = float(np.max(np.abs(div)))
        if self._last_div is not None:
            t0, v0 = self._last_div
            self.div_integral += 0.5 * (state.time - t0) * (v0 + dinf)
        self._last_div = (state.time, dinf)
        self.max_div_u = max(self.max_div_u, dinf)
        eps = state.eps if state.compressible else 1.0
        self.sup_div_over_eps = max(self.sup_div_over_eps,
                                    g.sobolev_norm(div, self.cfg.s - 2) / eps)
        self.sup_sqrt_rho_ratio = max(self.sup_sqrt_rho_ratio, sqrt_rho_ratio(state, self.c))
        drift, orth = constraint_drift(state)
        self.max_drift = max(self.max_drift, drift)
        self.max_orthogonality = max(self.max_orthogonality, orth)
        if self.energy_law:
            self.law_terms.append((state.time, *energy_law_terms(state, self.c)))
        self.window.append((self.step, state, self.div_integral))
        if self.full_reports and self.step % self.cadence == 0:
            self.pending.append(self.step)
        self._flush(final=False)

    def _flush(self, final: bool) -> None:
        steps = [w[0] for w in self.window]
        keep = []
        for n in self.pending:
            if n not in steps:
                continue
            k = steps.index(n)
            ready = (k == 1 and len(self.window) == 3) or (k == 0 and len(self.window) == 3 and n == 0)
            if not ready and final:
                ready = True
            if not ready:
                keep.append(n)
                continue
            self._emit(k)
        self.pending = keep

    def _emit(self, k: int) -> None:
        states = [w[1] for w in self.window]
        state, integral = states[k], self.window[k][2]
        if len(states) == 3:
            dte = dt_energy_from_states(states, k, self.c, self.cfg.s)
        else:
            dte = dt_energy_from_tendencies(state, self.c, self.cfg.s)
        self.reports.append(energy_report(state, self.c, self.cfg, dte, integral))

    def finish(self) -> list[EnergyReport]:
        """Emit the last state's report (if not already) and return all reports."""
        if self.full_reports and self.window:
            last = self.window[-1][0]
            if last not in self.pending and (not self.reports or self.reports[-1].time
                                             < self.window[-1][1].time):
                self.pending.append(last)
            self._flush(final=True)
        self.reports.sort(key=lambda r: r.time)
        return self.reports

    def energy_law_result(self) -> EnergyLawResult:
        if not self.law_terms:
            raise ValueError("monitor was created without energy_law=True")
        t, E, Dv, Cp = zip(*self.law_terms)
        return energy_law_residual(t, E, Dv, Cp)
