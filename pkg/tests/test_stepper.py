import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elmach import FlowState, Grid, LeslieCoefficients
from elmach.stepper import (LinearPropagator, NumericalAbort, StepConfig, cfl_dt, integrate,
                            pack, picard_solve, renormalize_director, step_imex, step_rk4,
                            steps_for, trajectory, _rhs_vec)
from elmach.sweep import well_prepared_ic

from conftest import random_state

INVISCID = LeslieCoefficients(mu2=0.0, mu3=0.0, mu4=0.0)


def test_step_config_validation():
    with pytest.raises(ValueError):
        StepConfig(scheme="euler")
    with pytest.raises(ValueError):
        StepConfig(dt=0.0)
    with pytest.raises(ValueError):
        StepConfig(cfl_safety=1.5)


# -- step size -----------------------------------------------------------------------------

def test_cfl_pure_acoustic_limit():
    g = Grid(32, 32)
    c = LeslieCoefficients(mu2=0.0, mu3=0.0, mu4=1e-300, a_tilde=1.3, gamma=1.7)
    s = FlowState.equilibrium(g, eps=1.0)
    assert math.isclose(cfl_dt(s, c, "rk4", 0.4), 0.4 * g.dx / math.sqrt(1.3 * 1.7),
                        rel_tol=1e-14)


def test_cfl_explicit_scales_with_eps():
    g = Grid(32, 32)
    c = LeslieCoefficients(mu2=0.0, mu3=0.0, mu4=1e-300)
    a = cfl_dt(FlowState.equilibrium(g, eps=0.2), c, "rk4")
    b = cfl_dt(FlowState.equilibrium(g, eps=0.1), c, "rk4")
    assert math.isclose(b, a / 2, rel_tol=1e-14)


def test_cfl_implicit_ignores_eps(rng):
    g = Grid(32, 32)
    c = LeslieCoefficients()
    s = random_state(g, rng, eps=1.0, amp=0.1)
    same_rho = s.copy(eps=0.01, phi=100.0 * s.phi)  # rho = 1 + eps*phi unchanged
    for scheme in ("imex", "picard"):
        assert math.isclose(cfl_dt(s, c, scheme), cfl_dt(same_rho, c, scheme), rel_tol=1e-14)


def test_cfl_viscous_limit_binds_for_large_viscosity():
    g = Grid(32, 32)
    s = FlowState.equilibrium(g, eps=1.0)
    lo = cfl_dt(s, LeslieCoefficients(mu4=1.0), "rk4")
    hi = cfl_dt(s, LeslieCoefficients(mu4=100.0), "rk4")
    # explicit viscosity is mu4 plus the Leslie |mu_i|: 1 + 1 against 100 + 1
    assert math.isclose(hi / lo, 2.0 / 101.0, rel_tol=1e-12)


# -- explicit and exponential steps -----------------------------------------------------------

@pytest.mark.parametrize("stepper", [step_rk4, step_imex])
def test_equilibrium_is_fixed(stepper, grid16):
    c = LeslieCoefficients()
    for eps in (0.3, None):
        s = FlowState.equilibrium(grid16, eps, angle=0.4)
        new = stepper(s, c, 1e-2)
        assert np.max(np.abs(pack(new) - pack(s))) <= 1e-15
        assert math.isclose(new.time, 1e-2)


def _plane_wave(grid, eps, delta, t, c):
    X, _ = grid.coords
    cs = c.sound_speed
    omega = cs / eps
    phase = X - omega * t
    phi = delta * np.cos(phase)
    u = np.stack([delta * cs * np.cos(phase), 0 * X])
    e = np.zeros((2,) + grid.shape)
    e[0] = 1.0
    return FlowState(grid=grid, u=u, d=e, ddot=0 * e, phi=phi, eps=eps, time=t)


def _period_error(stepper, n):
    g = Grid(16, 16)
    eps, delta = 0.5, 1e-8
    period = 2 * math.pi * eps / INVISCID.sound_speed
    s = _plane_wave(g, eps, delta, 0.0, INVISCID)
    dt = period / n
    for _ in range(n):
        s = stepper(s, INVISCID, dt)
    exact = _plane_wave(g, eps, delta, period, INVISCID)
    return np.max(np.abs(pack(s) - pack(exact))) / delta


def test_rk4_acoustic_phase_error_fourth_order():
    e1, e2 = _period_error(step_rk4, 40), _period_error(step_rk4, 80)
    assert e1 < 1e-3
    assert 12 <= e1 / e2 <= 20


def test_imex_acoustic_wave_is_exact():
    # the linear acoustic part is integrated exactly, so only O(delta) nonlinear terms remain
    assert _period_error(step_imex, 5) <= 1e-7


def _self_convergence(stepper, eps, T=0.1):
    g = Grid(32, 32)
    c = LeslieCoefficients(mu5=0.3, mu6=0.3, mu1=0.2)
    s0, _ = well_prepared_ic(g, eps, 2.0, 3, c, amplitude=0.3)
    base = cfl_dt(s0, c, "rk4", 0.4)
    out = []
    for n in (1, 2, 8):
        N = n * max(4, math.ceil(T / base))
        s = s0
        for _ in range(N):
            s = stepper(s, c, T / N)
        out.append(pack(s))
    e1 = np.max(np.abs(out[0] - out[2]))
    e2 = np.max(np.abs(out[1] - out[2]))
    return e1, e2


def test_rk4_global_order():
    e1, e2 = _self_convergence(step_rk4, 0.5)
    assert e1 / e2 >= 12


def test_imex_global_order():
    e1, e2 = _self_convergence(step_imex, 0.5)
    assert e1 / e2 >= 12


def test_imex_agrees_with_rk4():
    g = Grid(32, 32)
    c = LeslieCoefficients()
    s0, _ = well_prepared_ic(g, 0.5, 2.0, 1, c, amplitude=0.3)
    T = 0.05
    dt = cfl_dt(s0, c, "rk4", 0.2)
    n = math.ceil(T / dt)
    a = b = s0
    for _ in range(n):
        a = step_rk4(a, c, T / n)
        b = step_imex(b, c, T / n)
    assert np.max(np.abs(pack(a) - pack(b))) <= 1e-6


def test_imex_stable_at_tiny_mach():
    g = Grid(32, 32)
    c = LeslieCoefficients()
    s, _ = well_prepared_ic(g, 1e-3, 1.0, 2, c, amplitude=0.3)
    dt = cfl_dt(s, c, "imex")
    assert dt > 50 * cfl_dt(s, c, "rk4")  # the explicit scheme would need far smaller steps
    e0 = np.max(np.abs(pack(s)))
    for _ in range(100):
        s = step_imex(s, c, dt)
    assert np.all(np.isfinite(pack(s)))
    assert np.max(np.abs(pack(s))) <= 2 * e0


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4, None])
def test_propagator_is_contractive(eps):
    g = Grid(32, 32)
    c = LeslieCoefficients(mu4=0.7, xi=0.2)
    prop = LinearPropagator(g, c, eps)
    for t in (1e-4, 1e-2, 1.0):
        M = np.moveaxis(prop.amplification(t), (0, 1), (-2, -1))
        radius = np.max(np.abs(np.linalg.eigvals(M)))
        assert radius <= 1 + 1e-12


def test_propagator_matches_matrix_exponential():
    from scipy.linalg import expm
    g = Grid(16, 16)
    c = LeslieCoefficients(mu4=0.7, xi=0.2, a_tilde=1.3)
    eps, t = 0.05, 0.03
    prop = LinearPropagator(g, c, eps)
    M = prop.amplification(t)
    for (i, j) in [(1, 0), (0, 3), (2, 5), (4, 1)]:
        k = prop.kmag[i, j]
        gen = np.array([[0, -1j * k / eps, 0],
                        [-1j * c.sound_speed**2 * k / eps, -(c.mu4 + c.xi) * k**2, 0],
                        [0, 0, -0.5 * c.mu4 * k**2]])
        assert np.allclose(M[:, :, i, j], expm(gen * t), atol=1e-12)


# -- conservation and determinism ---------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["rk4", "imex", "picard"])
def test_mass_conserved(scheme, rng):
    g = Grid(16, 16)
    c = LeslieCoefficients()
    s = random_state(g, rng, eps=0.5, amp=0.2)
    cfg = StepConfig(scheme=scheme, dt=2e-3)
    masses = [float(np.sum(st_.rho)) * g.cell_area
              for st_ in trajectory(s, c, 10 * cfg.dt, cfg)]
    assert max(abs(m - masses[0]) for m in masses) <= 1e-11 * masses[0]


def test_runs_are_bitwise_deterministic():
    g = Grid(32, 32)
    c = LeslieCoefficients()
    s, _ = well_prepared_ic(g, 0.2, 2.0, 5, c)
    a = integrate(s, c, 0.02, StepConfig())
    b = integrate(s, c, 0.02, StepConfig())
    assert np.array_equal(pack(a), pack(b)) and a.time == b.time


@pytest.mark.parametrize("scheme", ["rk4", "imex"])
def test_incompressible_stays_solenoidal(scheme):
    g = Grid(32, 32)
    c = LeslieCoefficients(mu5=0.3, mu6=0.3)
    _, s = well_prepared_ic(g, 0.2, 2.0, 6, c, amplitude=0.5)
    worst = 0.0
    for st_ in trajectory(s, c, 0.05, StepConfig(scheme=scheme)):
        worst = max(worst, float(np.max(np.abs(g.divergence(st_.u)))))
    assert worst <= 1e-9


def test_fixed_dt_gives_exact_times(grid16):
    s = FlowState.equilibrium(grid16, 0.5)
    times = [st_.time for st_ in trajectory(s, LeslieCoefficients(), 0.1, StepConfig(dt=0.01))]
    assert len(times) == 11
    assert times == [k * 0.01 for k in range(11)]


def test_adaptive_run_ends_on_target(rng):
    g = Grid(16, 16)
    s = random_state(g, rng, eps=0.5, amp=0.1)
    final = integrate(s, LeslieCoefficients(), 0.037, StepConfig(scheme="imex"))
    assert math.isclose(final.time, 0.037, rel_tol=1e-12)


def test_steps_for():
    assert steps_for(1.0, 0.3) == (4, 0.25)
    n, dt = steps_for(0.5, 0.1)
    assert n == 5 and math.isclose(dt, 0.1)


# -- failure handling ---------------------------------------------------------------------------

def test_blowup_aborts_with_last_good(rng):
    g = Grid(16, 16)
    c = LeslieCoefficients()
    s = random_state(g, rng, eps=0.5, amp=0.2)
    cfg = StepConfig(scheme="rk4", dt=0.05, blowup_factor=1.0 + 1e-12, cfl_safety=1.0)
    with pytest.raises(NumericalAbort) as info:
        integrate(s, LeslieCoefficients(mu2=0, mu3=0, mu4=0, kappa=50.0), 1.0, cfg)
    assert info.value.last_good is not None and info.value.last_good.is_finite()


def test_density_floor_aborts(grid16):
    s = FlowState.equilibrium(grid16, 0.5)
    s = s.copy(phi=np.full(grid16.shape, -1.99))
    with pytest.raises(NumericalAbort):
        list(trajectory(s, LeslieCoefficients(), 0.1, StepConfig(dt=0.01)))


def test_nan_state_rejected(grid16):
    s = FlowState.equilibrium(grid16, 0.5)
    s.u[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        list(trajectory(s, LeslieCoefficients(), 0.1, StepConfig(dt=0.01)))


def test_renormalize_director(rng):
    g = Grid(16, 16)
    s = random_state(g, rng, unit_director=False)
    r = renormalize_director(s)
    assert np.max(np.abs(np.hypot(*r.d) - 1)) <= 1e-15
    assert np.max(np.abs(np.sum(r.d * r.ddot, axis=0))) <= 1e-14


# -- Picard --------------------------------------------------------------------------------------

def test_picard_equilibrium_single_iteration(grid16):
    s = FlowState.equilibrium(grid16, 0.5, angle=1.0)
    new, info = picard_solve(s, LeslieCoefficients(), 1e-3)
    assert info.iterations == 1 and info.converged
    assert np.max(np.abs(pack(new) - pack(s))) <= 1e-15


def test_picard_fixed_point_solves_backward_euler():
    g = Grid(16, 16)
    c = LeslieCoefficients(mu5=0.2, mu6=0.2, xi=0.1)
    s, _ = well_prepared_ic(g, 0.5, 2.0, 0, c, amplitude=0.5)
    dt = 1e-3
    new, info = picard_solve(s, c, dt, tol=1e-12)
    Y, Yn = pack(new), pack(s)
    resid = Y - Yn - dt * _rhs_vec(Y, s, c)
    assert math.sqrt(np.sum(resid**2) * g.cell_area) <= 1e-10


def test_picard_iterations_nonincreasing_in_dt():
    g = Grid(16, 16)
    c = LeslieCoefficients()
    s, _ = well_prepared_ic(g, 0.5, 2.0, 0, c, amplitude=0.5)
    counts = [picard_solve(s, c, dt)[1].iterations for dt in (1e-2, 5e-3, 2.5e-3)]
    assert counts[0] >= counts[1] >= counts[2]


def test_picard_nonconvergence_raises():
    g = Grid(16, 16)
    c = LeslieCoefficients()
    s, _ = well_prepared_ic(g, 0.5, 2.0, 0, c, amplitude=0.5)
    with pytest.raises(NumericalAbort):
        picard_solve(s, c, 1e-2, tol=1e-14, max_iter=1)


def test_picard_rejects_incompressible(grid16):
    with pytest.raises(ValueError):
        picard_solve(FlowState.equilibrium(grid16, None), LeslieCoefficients(), 1e-3)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_imex_equals_rk4_when_linear_part_vanishes(seed):
    # with zero Newtonian viscosity and an incompressible state there is nothing to integrate exactly
    g = Grid(16, 16)
    rng = np.random.default_rng(seed)
    s = random_state(g, rng, compressible=False, amp=0.2)
    c = LeslieCoefficients(mu4=0.0)
    a, b = step_rk4(s, c, 1e-3), step_imex(s, c, 1e-3)
    assert np.max(np.abs(pack(a) - pack(b))) <= 1e-13


def test_stage_breakdown_becomes_abort(grid16):
    s, _ = well_prepared_ic(grid16, 0.3, 2.0, 0)
    with pytest.raises(NumericalAbort) as info:
        integrate(s, LeslieCoefficients(), 20.0, StepConfig(scheme="rk4", dt=2.0))
    assert info.value.last_good is not None and info.value.last_good.is_finite()


def test_trajectory_rejects_picard_for_incompressible(grid16):
    with pytest.raises(ValueError):
        next(trajectory(FlowState.equilibrium(grid16, None), LeslieCoefficients(), 0.1,
                        StepConfig(scheme="picard", dt=0.01)))
