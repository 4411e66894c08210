import numpy as np
import pytest

from elmach import FlowState, Grid, LeslieCoefficients


def random_state(grid, rng, eps=0.5, compressible=True, unit_director=True, amp=0.3,
                 max_index=None):
    """Band-limited random state; with ``unit_director`` the director comes from an angle."""
    u = amp * grid.random_field(rng, (2,), max_index=max_index)
    if unit_director:
        theta = amp * grid.random_field(rng, max_index=max_index)
        d = np.stack([np.cos(theta), np.sin(theta)])
        g = amp * grid.random_field(rng, max_index=max_index)
        ddot = g * np.stack([-np.sin(theta), np.cos(theta)])
    else:
        d = grid.random_field(rng, (2,), max_index=max_index)
        ddot = amp * grid.random_field(rng, (2,), max_index=max_index)
    if not compressible:
        return FlowState(grid=grid, u=grid.leray_project(u), d=d, ddot=ddot)
    phi = amp * grid.random_field(rng, max_index=max_index)
    return FlowState(grid=grid, u=u, d=d, ddot=ddot, phi=phi, eps=eps)


def random_parodi_coefficients(rng, gamma=None):
    """Admissible coefficients drawn at random, Parodi relation included."""
    lam1 = -rng.uniform(0.2, 2.0)
    lam2 = rng.uniform(-1.0, 1.0)
    slack = rng.uniform(0.0, 1.0)
    return LeslieCoefficients.from_lambdas(
        lambda1=lam1, lambda2=lam2, mu1=rng.uniform(0.0, 1.0), mu4=rng.uniform(0.2, 2.0),
        mu5_plus_mu6=slack - lam2**2 / lam1, xi=rng.uniform(-0.1, 1.0),
        kappa=rng.uniform(0.2, 2.0), a_tilde=rng.uniform(0.5, 2.0),
        gamma=rng.uniform(1.2, 3.0) if gamma is None else gamma)


@pytest.fixture
def grid16():
    return Grid(16, 16)


@pytest.fixture
def grid32():
    return Grid(32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Print and keep one pass/fail line per acceptance criterion."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
