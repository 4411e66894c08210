"""Time integration: explicit RK4, acoustic-exponential RK4 and Picard backward Euler.

The ``imex`` scheme splits off the linearization of the acoustic and
Newtonian viscous terms about ``rho = 1``.  That part is integrated
exactly mode by mode (integrating factor), the rest with classical RK4,
so the step is not limited by the fast sound speed ``c / eps``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import model as _m
from .grid import Grid
from .model import FlowState, LeslieCoefficients

log = logging.getLogger(__name__)

SCHEMES = ("rk4", "imex", "picard")

# real-axis stability limit of classical RK4
_RK4_REAL_LIMIT = 2.78


class NumericalAbort(RuntimeError):
    """Raised when a run leaves the admissible regime; keeps the last good state."""

    def __init__(self, reason: str, last_good: FlowState | None = None):
        super().__init__(reason)
        self.reason = reason
        self.last_good = last_good


@dataclass
class StepConfig:
    """Options for :func:`integrate`.

    ``dt=None`` picks the step from :func:`cfl_dt` every step.
    """

    scheme: str = "imex"
    dt: float | None = None
    cfl_safety: float = 0.4
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    rho_floor: float = 0.01
    blowup_factor: float = 1e3
    blowup_s: int = 3
    renormalize: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


# -- packing ------------------------------------------------------------------

def pack(state: FlowState) -> np.ndarray:
    parts = [] if state.phi is None else [state.phi[None]]
    return np.concatenate(parts + [state.u, state.d, state.ddot])


def unpack(Y: np.ndarray, like: FlowState, time: float) -> FlowState:
    off = 1 if like.compressible else 0
    return FlowState(grid=like.grid, phi=Y[0].copy() if off else None, eps=like.eps,
                     u=Y[off:off + 2].copy(), d=Y[off + 2:off + 4].copy(),
                     ddot=Y[off + 4:off + 6].copy(), time=time, meta=dict(like.meta))


def _pack_tendencies(t: _m.Tendencies) -> np.ndarray:
    parts = [] if t.phi is None else [t.phi[None]]
    return np.concatenate(parts + [t.u, t.d, t.ddot])


def _rhs_vec(Y: np.ndarray, like: FlowState, c: LeslieCoefficients) -> np.ndarray:
    return _pack_tendencies(_m.rhs(unpack(Y, like, like.time), c))


# -- step size ------------------------------------------------------------------

def _leslie_viscosity(c: LeslieCoefficients) -> float:
    return abs(c.mu1) + abs(c.mu2) + abs(c.mu3) + abs(c.mu5) + abs(c.mu6)


def cfl_dt(state: FlowState, c: LeslieCoefficients, scheme: str = "imex",
           safety: float = 0.4) -> float:
    """Largest stable step from the wave, advective and viscous limits.

    Explicit RK4 sees the sound speed ``c/eps``; the implicit schemes only
    the rest-state speed ``c``.  The Newtonian viscosity is dropped from the
    viscous limit when it is handled implicitly.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    grid = state.grid
    umax = float(np.max(np.hypot(state.u[0], state.u[1])))
    rho_min = float(np.min(state.rho))
    if rho_min <= 0:
        raise ValueError("density is not positive")
    wave = math.sqrt(c.kappa / rho_min)
    if state.compressible:
        sound = c.sound_speed / (state.eps if scheme == "rk4" else 1.0)
        wave = max(wave, sound)
    dx = min(grid.dx, grid.dy)
    speed = wave + umax
    dt = safety * dx / speed if speed > 0 else math.inf

    nu = _leslie_viscosity(c)
    if scheme == "rk4":
        nu += c.mu4 + abs(c.xi)
    nu /= rho_min
    if nu > 0:
        frac = grid.dealias_fraction
        kcut_sq = (frac * math.pi / grid.dx) ** 2 + (frac * math.pi / grid.dy) ** 2
        dt = min(dt, safety * _RK4_REAL_LIMIT / (nu * kcut_sq))
    relax = abs(c.lambda1) / rho_min
    if relax > 0:
        dt = min(dt, safety * _RK4_REAL_LIMIT / relax)
    if not math.isfinite(dt):
        raise ValueError("no finite step limit for this state")
    return dt


# -- explicit RK4 -------------------------------------------------------------------

def step_rk4(state: FlowState, c: LeslieCoefficients, dt: float) -> FlowState:
    """One classical RK4 step."""
    Y = pack(state)
    k1 = _rhs_vec(Y, state, c)
    k2 = _rhs_vec(Y + 0.5 * dt * k1, state, c)
    k3 = _rhs_vec(Y + 0.5 * dt * k2, state, c)
    k4 = _rhs_vec(Y + dt * k3, state, c)
    return unpack(Y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), state, state.time + dt)


# -- linear acoustic / viscous propagator -----------------------------------------

class LinearPropagator:
    """Exact per-mode flow of the linearized acoustic and Newtonian viscous terms.

    For each Fourier mode the velocity splits into a longitudinal part
    ``a = khat . u`` coupled to ``phi`` through a 2x2 block, and a
    transverse part that only decays.  Modes outside the dealiasing band
    are left untouched.
    """

    def __init__(self, grid: Grid, c: LeslieCoefficients, eps: float | None):
        self.grid, self.c, self.eps = grid, c, eps
        kx, ky = np.broadcast_arrays(*grid.odd_wavenumbers)
        kmag = np.sqrt(kx**2 + ky**2) * grid.dealias_mask
        safe = np.where(kmag > 0, kmag, 1.0)
        self.khx = np.where(kmag > 0, kx / safe, 1.0)
        self.khy = np.where(kmag > 0, ky / safe, 0.0)
        self.kmag = kmag
        self.trans_rate = 0.5 * c.mu4 * kmag**2
        self.long_rate = (c.mu4 + c.xi) * kmag**2 if eps is not None else self.trans_rate
        self._cache: dict[float, tuple] = {}

    def _split(self, uh):
        a = self.khx * uh[0] + self.khy * uh[1]
        b = -self.khy * uh[0] + self.khx * uh[1]
        return a, b

    def _join(self, a, b):
        return np.stack([self.khx * a - self.khy * b, self.khy * a + self.khx * b])

    def generator_apply(self, phih, uh):
        """Apply the linear operator itself (not its exponential)."""
        a, b = self._split(uh)
        b_new = -self.trans_rate * b
        if self.eps is None:
            return None, self._join(-self.trans_rate * a, b_new)
        cs2 = self.c.sound_speed**2
        phi_new = -1j * self.kmag / self.eps * a
        a_new = -1j * cs2 * self.kmag / self.eps * phih - self.long_rate * a
        return phi_new, self._join(a_new, b_new)

    def _matrices(self, t: float):
        if t in self._cache:
            return self._cache[t]
        trans = np.exp(-self.trans_rate * t)
        if self.eps is None:
            out = (None, None, None, np.exp(-self.long_rate * t), trans)
        else:
            cs2 = self.c.sound_speed**2
            sig = self.long_rate
            w2 = cs2 * self.kmag**2 / self.eps**2
            q = np.sqrt((0.25 * sig**2 - w2).astype(complex))
            lam_m = -0.5 * sig - q
            e_m = np.exp(lam_m * t)
            z = 2 * q * t
            small = np.abs(z) < 1e-6
            zs = np.where(small, 1.0, z)
            ratio = np.where(small, 1 + z / 2 + z**2 / 6, np.expm1(zs) / zs)
            phi1 = e_m * ratio * t  # (e^{lam+ t} - e^{lam- t}) / (lam+ - lam-)
            e11 = e_m - lam_m * phi1
            e12 = phi1 * (-1j * self.kmag / self.eps)
            e21 = phi1 * (-1j * cs2 * self.kmag / self.eps)
            e22 = e_m + phi1 * (-sig - lam_m)
            out = (e11, e12, e21, e22, trans)
        if len(self._cache) >= 8:  # adaptive runs see a new dt every step
            self._cache.pop(next(iter(self._cache)))
        self._cache[t] = out
        return out

    def apply(self, phih, uh, t: float):
        e11, e12, e21, e22, trans = self._matrices(t)
        a, b = self._split(uh)
        if self.eps is None:
            return None, self._join(e22 * a, trans * b)
        return e11 * phih + e12 * a, self._join(e21 * phih + e22 * a, trans * b)

    def amplification(self, t: float) -> np.ndarray:
        """Per-mode amplification matrices in ``(phi, a, b)`` coordinates.

        Incompressible propagators have no ``phi`` and return 2x2 blocks in ``(a, b)``.
        """
        e11, e12, e21, e22, trans = self._matrices(t)
        if self.eps is None:
            z = np.zeros_like(trans)
            return np.array([[e22, z], [z, trans]]) + 0j
        z = np.zeros_like(e11)
        return np.array([[e11, e12, z], [e21, e22, z], [z, z, trans + 0j]])


class _ExpIntegrator:
    def __init__(self, like: FlowState, c: LeslieCoefficients):
        self.like, self.c = like, c
        self.prop = LinearPropagator(like.grid, c, like.eps)
        self.off = 1 if like.compressible else 0

    def _lin_part(self, Y):
        g, off = self.like.grid, self.off
        return g.fft(Y[: off + 2])

    def _put(self, Y, phih, uh):
        g, off = self.like.grid, self.off
        out = Y.copy()
        if off:
            out[:3] = g.ifft(np.concatenate([phih[None], uh]))
        else:
            out[:2] = g.ifft(uh)
        return out

    def E(self, Y, t):
        h = self._lin_part(Y)
        phih, uh = (h[0], h[1:]) if self.off else (None, h)
        p, u = self.prop.apply(phih, uh, t)
        return self._put(Y, p, u)

    def N(self, Y):
        F = _rhs_vec(Y, self.like, self.c)
        h = self._lin_part(Y)
        phih, uh = (h[0], h[1:]) if self.off else (None, h)
        p, u = self.prop.generator_apply(phih, uh)
        g = self.like.grid
        lin = g.ifft(np.concatenate([p[None], u]) if self.off else u)
        F[: self.off + 2] -= lin
        return F


_INTEGRATORS: dict = {}


def _exp_integrator(state: FlowState, c: LeslieCoefficients) -> _ExpIntegrator:
    key = (state.grid, c, state.eps)
    integ = _INTEGRATORS.get(key)
    if integ is None:
        if len(_INTEGRATORS) > 16:
            _INTEGRATORS.clear()
        integ = _INTEGRATORS[key] = _ExpIntegrator(state, c)
    integ.like = state
    return integ


def step_imex(state: FlowState, c: LeslieCoefficients, dt: float) -> FlowState:
    """One step of RK4 with the linear acoustic/viscous part integrated exactly."""
    I = _exp_integrator(state, c)
    Y = pack(state)
    h = 0.5 * dt
    k1 = I.N(Y)
    k2 = I.N(I.E(Y + h * k1, h))
    k3 = I.N(I.E(Y, h) + h * k2)
    k4 = I.N(I.E(Y, dt) + dt * I.E(k3, h))
    Y_new = I.E(Y, dt) + dt / 6.0 * (I.E(k1, dt) + 2 * I.E(k2 + k3, h) + k4)
    return unpack(Y_new, state, state.time + dt)


# -- Picard backward Euler ------------------------------------------------------------

def frozen_tendencies(Y: np.ndarray, frozen: FlowState, c: LeslieCoefficients) -> np.ndarray:
    """Compressible tendencies of ``Y`` with coefficients frozen at ``frozen``.

    Transport velocity, density, strain/vorticity, director in the Leslie
    stress, the Ericksen stress and the multiplier are taken from
    ``frozen``; everything else is linear in ``Y``.  At ``Y = pack(frozen)``
    this equals :func:`model.compressible_rhs`.
    """
    grid, eps = frozen.grid, frozen.eps
    phi, u, d, ddot = Y[0], Y[1:3], Y[3:5], Y[5:7]
    uk, dk, ddk = frozen.u, frozen.d, frozen.ddot
    rho = frozen.rho
    inv_rho = 1.0 / rho
    K = _m._Derivs(grid, uk, dk, ddk)
    gam = _m._gamma(c, rho, K.A, K.Gd, dk, ddk)
    sig2 = _m._sigma2(c, K.Gd)

    D = _m._Derivs(grid, u, d, ddot, phi)
    stress = _m._sigma1(c, D.A) + sig2 + _m._sigma3(c, D.A, D.B, dk, ddk)
    div_stress = _m._div_dealiased(grid, stress)

    phi_t = -(uk[0] * D.grad_phi[0] + uk[1] * D.grad_phi[1]) - phi * K.div_u - D.div_u / eps
    u_t = (-_m._advect(D.Gu, uk) - (c.dpressure(rho) * inv_rho / eps) * D.grad_phi
           + inv_rho * div_stress)
    d_t = ddot - _m._advect(D.Gd, uk)
    ddot_t = -_m._advect(D.Gddot, uk) + inv_rho * (
        c.kappa * D.lap_d + gam * d + c.lambda1 * (ddot + _m._matvec(K.B, d))
        + c.lambda2 * _m._matvec(K.A, d))
    out = _m._dealias_stack(grid, [phi_t, u_t, d_t, ddot_t])
    return np.concatenate([out[0][None], out[1], out[2], out[3]])


@dataclass
class PicardInfo:
    iterations: int
    increments: list[float]
    converged: bool


def _l2(grid: Grid, Y: np.ndarray) -> float:
    return math.sqrt(float(np.sum(Y * Y)) * grid.cell_area)


def picard_solve(state: FlowState, c: LeslieCoefficients, dt: float, tol: float = 1e-10,
                 max_iter: int = 50) -> tuple[FlowState, PicardInfo]:
    """Backward Euler step by Picard iteration on the frozen-coefficient system.

    Each iterate solves ``X - dt*T(X; U^k) = U^n`` by GMRES, where ``T`` is
    :func:`frozen_tendencies`.  The fixed point is the fully implicit
    backward Euler step.  Converged when the L2 change between iterates is
    at most ``tol``.
    """
    if not state.compressible:
        raise ValueError("picard scheme is implemented for compressible states only")
    grid = state.grid
    Yn = pack(state)
    shape, n = Yn.shape, Yn.size
    Yk = Yn.copy()
    # GMRES works in the plain 2-norm; convert the L2 target
    atol = 1e-3 * tol / math.sqrt(grid.cell_area)
    increments = []
    for it in range(1, max_iter + 1):
        frozen = unpack(Yk, state, state.time)
        T0 = frozen_tendencies(np.zeros(shape), frozen, c)

        def matvec(x, frozen=frozen, T0=T0):
            X = x.reshape(shape)
            return (X - dt * (frozen_tendencies(X, frozen, c) - T0)).ravel()

        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        b = (Yn + dt * T0).ravel()
        x, info = gmres(op, b, x0=Yk.ravel(), rtol=0.0, atol=atol, restart=60, maxiter=50)
        if info != 0:
            log.warning("GMRES did not reach tolerance in Picard iterate %d (info=%d)", it, info)
        Ynew = x.reshape(shape)
        if not np.all(np.isfinite(Ynew)):
            raise NumericalAbort("non-finite Picard iterate", state)
        inc = _l2(grid, Ynew - Yk)
        increments.append(inc)
        Yk = Ynew
        if inc <= tol:
            return unpack(Yk, state, state.time + dt), PicardInfo(it, increments, True)
    raise NumericalAbort(f"Picard iteration did not converge in {max_iter} iterations "
                         f"(last increment {increments[-1]:.3e})", state)


# -- driver -----------------------------------------------------------------------

def renormalize_director(state: FlowState) -> FlowState:
    """Project ``d`` back to the unit circle and ``ddot`` onto its tangent."""
    d = state.d / np.hypot(state.d[0], state.d[1])
    ddot = state.ddot - np.sum(d * state.ddot, axis=0) * d
    return state.copy(d=d, ddot=ddot)


def step(state: FlowState, c: LeslieCoefficients, dt: float, config: StepConfig) -> FlowState:
    if config.scheme == "rk4":
        return step_rk4(state, c, dt)
    if config.scheme == "imex":
        return step_imex(state, c, dt)
    new, _ = picard_solve(state, c, dt, config.picard_tol, config.picard_max_iter)
    return new


def _check(new: FlowState, prev: FlowState, config: StepConfig, u_limit: float) -> None:
    if not new.is_finite():
        raise NumericalAbort(f"non-finite values at t={new.time:.6g}", prev)
    if new.compressible and float(np.min(new.rho)) <= config.rho_floor:
        raise NumericalAbort(f"density fell to {float(np.min(new.rho)):.3g} at t={new.time:.6g}",
                             prev)
    if new.grid.sobolev_norm(new.u, config.blowup_s) > u_limit:
        raise NumericalAbort(f"velocity norm exceeded {u_limit:.3g} at t={new.time:.6g}", prev)


def trajectory(state: FlowState, c: LeslieCoefficients, t_final: float,
               config: StepConfig | None = None) -> Iterator[FlowState]:
    """Yield the initial state and every accepted step up to ``t_final``.

    With a fixed ``config.dt`` the steps are uniform; the final one is
    shortened only if ``t_final`` is not a multiple of ``dt``.
    """
    config = config or StepConfig()
    state.check_finite()
    if config.scheme == "picard" and not state.compressible:
        raise ValueError("picard scheme is implemented for compressible states only")
    if state.compressible and float(np.min(state.rho)) <= config.rho_floor:
        raise NumericalAbort("initial density below floor", state)
    u0 = state.grid.sobolev_norm(state.u, config.blowup_s)
    u_limit = config.blowup_factor * max(u0, 1e-3)
    yield state
    t0 = state.time
    n_fixed = None
    if config.dt is not None:
        n_fixed = max(1, int(round((t_final - t0) / config.dt)))
        if abs(t0 + n_fixed * config.dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
            n_fixed = None
    k = 0
    while True:
        remaining = t_final - state.time
        if n_fixed is not None:
            if k >= n_fixed:
                break
            dt = config.dt
        else:
            if remaining <= 1e-12 * max(1.0, abs(t_final)):
                break
            dt = config.dt if config.dt is not None else cfl_dt(state, c, config.scheme,
                                                                config.cfl_safety)
            dt = min(dt, remaining)
        try:
            new = step(state, c, dt, config)
        except ValueError as exc:
            # the input state passed every check, so a failing stage is a breakdown
            raise NumericalAbort(f"step from t={state.time:.6g} failed: {exc}", state) from exc
        if n_fixed is not None:
            new.time = t0 + (k + 1) * config.dt
        if config.renormalize:
            new = renormalize_director(new)
        _check(new, state, config, u_limit)
        state = new
        k += 1
        yield state


def integrate(state: FlowState, c: LeslieCoefficients, t_final: float,
              config: StepConfig | None = None,
              observer: Callable[[FlowState], None] | None = None) -> FlowState:
    """Advance to ``t_final``, calling ``observer`` on every state including the first."""
    last = state
    for last in trajectory(state, c, t_final, config):
        if observer is not None:
            observer(last)
    return last


def steps_for(interval: float, dt_max: float) -> tuple[int, float]:
    """Number of uniform steps and step size covering ``interval`` with ``dt <= dt_max``."""
    n = max(1, math.ceil(interval / dt_max - 1e-9))
    return n, interval / n
