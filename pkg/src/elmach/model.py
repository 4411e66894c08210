"""Compressible and incompressible Ericksen-Leslie nematic flow.

The compressible system is written in the low-Mach scaling with
``rho = 1 + eps * phi``; ``eps`` is the Mach number.  Incompressible
states carry ``phi = None`` and ``eps = None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid

__all__ = [
    "LeslieCoefficients",
    "validate_coefficients",
    "PhysicalUnits",
    "DimensionlessGroups",
    "nondimensionalize",
    "FlowState",
    "Tendencies",
    "strain_and_vorticity",
    "stress_sigma1",
    "stress_sigma2",
    "stress_sigma3",
    "gamma_multiplier",
    "compressible_rhs",
    "incompressible_rhs",
    "project_momentum",
    "rhs",
]

# incompressible states must be divergence-free to this level (relative to max|u|)
DIV_TOL = 1e-10


@dataclass(frozen=True)
class LeslieCoefficients:
    """Leslie viscosities, Frank constant and pressure law ``p = a * rho**gamma``."""

    mu1: float = 0.0
    mu2: float = -0.5
    mu3: float = 0.5
    mu4: float = 1.0
    mu5: float = 0.0
    mu6: float = 0.0
    xi: float = 0.0
    kappa: float = 1.0
    a_tilde: float = 1.0
    gamma: float = 2.0

    @property
    def lambda1(self) -> float:
        return self.mu2 - self.mu3

    @property
    def lambda2(self) -> float:
        return self.mu5 - self.mu6

    @property
    def sound_speed(self) -> float:
        """Sound speed of the rest state ``rho = 1``."""
        return math.sqrt(self.a_tilde * self.gamma)

    def pressure(self, rho):
        return self.a_tilde * rho**self.gamma

    def dpressure(self, rho):
        return self.a_tilde * self.gamma * rho ** (self.gamma - 1.0)

    def d2pressure(self, rho):
        return self.a_tilde * self.gamma * (self.gamma - 1.0) * rho ** (self.gamma - 2.0)

    @classmethod
    def from_lambdas(cls, lambda1: float, lambda2: float, mu1: float = 0.0, mu4: float = 1.0,
                     mu5_plus_mu6: float = 0.0, xi: float = 0.0, kappa: float = 1.0,
                     a_tilde: float = 1.0, gamma: float = 2.0) -> "LeslieCoefficients":
        """Build a Parodi-consistent set from ``lambda1``, ``lambda2`` and ``mu5 + mu6``."""
        mu5 = 0.5 * (mu5_plus_mu6 + lambda2)
        mu6 = 0.5 * (mu5_plus_mu6 - lambda2)
        # mu2 + mu3 = mu6 - mu5 = -lambda2 and mu2 - mu3 = lambda1
        mu2 = 0.5 * (lambda1 - lambda2)
        mu3 = 0.5 * (-lambda2 - lambda1)
        return cls(mu1=mu1, mu2=mu2, mu3=mu3, mu4=mu4, mu5=mu5, mu6=mu6, xi=xi,
                   kappa=kappa, a_tilde=a_tilde, gamma=gamma)


def validate_coefficients(c: LeslieCoefficients, parodi: bool = True,
                          atol: float = 1e-12) -> list[str]:
    """Return human-readable violations of the admissibility conditions.

    An empty list means the coefficients give a dissipative system.  The
    Parodi relation ``mu2 + mu3 = mu6 - mu5`` is part of the check unless
    ``parodi=False``.
    """
    out = []
    values = (c.mu1, c.mu2, c.mu3, c.mu4, c.mu5, c.mu6, c.xi, c.kappa, c.a_tilde, c.gamma)
    if not all(math.isfinite(v) for v in values):
        return ["coefficients must be finite"]
    if c.kappa <= 0:
        out.append(f"kappa must be > 0 (got {c.kappa})")
    if c.mu1 < 0:
        out.append(f"mu1 must be >= 0 (got {c.mu1})")
    if c.mu4 <= 0:
        out.append(f"mu4 must be > 0 (got {c.mu4})")
    if 0.5 * c.mu4 + c.xi < 0:
        out.append(f"mu4/2 + xi must be >= 0 (got {0.5 * c.mu4 + c.xi})")
    if c.lambda1 >= 0:
        out.append(f"lambda1 = mu2 - mu3 must be < 0 (got {c.lambda1})")
    else:
        q = c.mu5 + c.mu6 + c.lambda2**2 / c.lambda1
        if q < -atol:
            out.append(f"mu5 + mu6 + lambda2^2/lambda1 must be >= 0 (got {q})")
    if parodi and abs((c.mu2 + c.mu3) - (c.mu6 - c.mu5)) > atol:
        out.append(f"Parodi relation mu2 + mu3 = mu6 - mu5 violated "
                   f"({c.mu2 + c.mu3} vs {c.mu6 - c.mu5})")
    if c.a_tilde <= 0:
        out.append(f"pressure constant a_tilde must be > 0 (got {c.a_tilde})")
    if c.gamma <= 1:
        out.append(f"adiabatic exponent gamma must be > 1 (got {c.gamma})")
    return out


@dataclass(frozen=True)
class PhysicalUnits:
    """Reference scales of a dimensional configuration."""

    length: float = 1.0
    velocity: float = 1.0
    density: float = 1.0
    sound_speed: float = 1.0
    viscosity: float = 1.0
    frank_constant: float = 1.0
    molecular_length: float = 1.0


@dataclass(frozen=True)
class DimensionlessGroups:
    mach: float
    reynolds: float
    ericksen: float
    inertia: float


def nondimensionalize(units: PhysicalUnits) -> DimensionlessGroups:
    """Mach, Reynolds, Ericksen and inertia numbers of a set of reference scales."""
    for name, v in vars(units).items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"reference scale {name} must be positive, got {v}")
    L, U, rho = units.length, units.velocity, units.density
    mu, K, ell = units.viscosity, units.frank_constant, units.molecular_length
    return DimensionlessGroups(
        mach=U / units.sound_speed,
        reynolds=rho * L * U / mu,
        ericksen=mu * L * U / (K * ell**2),
        inertia=rho * U**2 / K,
    )


@dataclass
class FlowState:
    """Snapshot of the unknowns.

    ``phi`` is the density perturbation (``rho = 1 + eps*phi``); both it and
    ``eps`` are ``None`` for incompressible states.
    """

    grid: Grid
    u: np.ndarray
    d: np.ndarray
    ddot: np.ndarray
    phi: np.ndarray | None = None
    eps: float | None = None
    time: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = self.grid
        for name, arr, shape in (("u", self.u, (2,) + g.shape), ("d", self.d, (2,) + g.shape),
                                 ("ddot", self.ddot, (2,) + g.shape)):
            if np.shape(arr) != shape:
                raise ValueError(f"{name} has shape {np.shape(arr)}, expected {shape}")
        if (self.phi is None) != (self.eps is None):
            raise ValueError("phi and eps must both be set (compressible) or both be None")
        if self.phi is not None:
            if np.shape(self.phi) != g.shape:
                raise ValueError(f"phi has shape {np.shape(self.phi)}, expected {g.shape}")
            if not (0 < self.eps <= 1):
                raise ValueError(f"eps must lie in (0, 1], got {self.eps}")

    @property
    def compressible(self) -> bool:
        return self.phi is not None

    @property
    def rho(self) -> np.ndarray:
        if self.phi is None:
            return np.ones(self.grid.shape)
        return 1.0 + self.eps * self.phi

    def copy(self, **changes) -> "FlowState":
        fields = dict(u=self.u.copy(), d=self.d.copy(), ddot=self.ddot.copy(),
                      phi=None if self.phi is None else self.phi.copy(), meta=dict(self.meta))
        fields.update(changes)
        return replace(self, **fields)

    def arrays(self) -> list[np.ndarray]:
        base = [] if self.phi is None else [self.phi]
        return base + [self.u, self.d, self.ddot]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def check_finite(self) -> None:
        if not self.is_finite():
            raise ValueError("state contains non-finite values")

    @classmethod
    def equilibrium(cls, grid: Grid, eps: float | None = 0.1, angle: float = 0.0) -> "FlowState":
        """Rest state with a uniform director at ``angle``."""
        z = np.zeros((2,) + grid.shape)
        d = np.stack([np.full(grid.shape, math.cos(angle)), np.full(grid.shape, math.sin(angle))])
        phi = None if eps is None else np.zeros(grid.shape)
        return cls(grid=grid, u=z.copy(), d=d, ddot=z.copy(), phi=phi, eps=eps)


@dataclass
class Tendencies:
    """Time derivatives of every unknown; ``pressure`` only for incompressible flow."""

    u: np.ndarray
    d: np.ndarray
    ddot: np.ndarray
    phi: np.ndarray | None = None
    pressure: np.ndarray | None = None


# -- pointwise tensor algebra ------------------------------------------------

def _matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", M, v)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, None] * b[None, :]


def _eye(shape) -> np.ndarray:
    out = np.zeros((2, 2) + tuple(shape))
    out[0, 0] = out[1, 1] = 1.0
    return out


def _strain_vort(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Gt = G.transpose(1, 0, 2, 3)
    return 0.5 * (G + Gt), 0.5 * (G - Gt)


def _sigma3(c: LeslieCoefficients, A, B, d, ddot) -> np.ndarray:
    Ad = _matvec(A, d)
    N = ddot + _matvec(B, d)
    dAd = np.einsum("i...,i...->...", d, Ad)
    return (c.mu1 * dAd * _outer(d, d) + c.mu2 * _outer(d, N) + c.mu3 * _outer(N, d)
            + c.mu5 * _outer(d, Ad) + c.mu6 * _outer(Ad, d))


def _sigma2(c: LeslieCoefficients, Gd: np.ndarray) -> np.ndarray:
    # (grad d (.) grad d)_ij = d_i d_k . d_j d_k with Gd[k, j] = d_j d_k
    gg = np.einsum("ki...,kj...->ij...", Gd, Gd)
    tr = gg[0, 0] + gg[1, 1]
    return 0.5 * c.kappa * tr * _eye(tr.shape) - c.kappa * gg


def _sigma1(c: LeslieCoefficients, A: np.ndarray) -> np.ndarray:
    divu = A[0, 0] + A[1, 1]
    return c.mu4 * A + c.xi * divu * _eye(divu.shape)


def _gamma(c: LeslieCoefficients, rho, A, Gd, d, ddot) -> np.ndarray:
    grad_d_sq = np.sum(Gd * Gd, axis=(0, 1))
    dAd = np.einsum("i...,i...->...", d, _matvec(A, d))
    return -rho * np.sum(ddot * ddot, axis=0) + c.kappa * grad_d_sq - c.lambda2 * dAd


# -- public field operators ----------------------------------------------------

def strain_and_vorticity(grid: Grid, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric and antisymmetric parts of ``grad u`` with ``(grad u)_ij = d_j u_i``."""
    return _strain_vort(grid.gradient(u))


def stress_sigma1(grid: Grid, u: np.ndarray, c: LeslieCoefficients) -> np.ndarray:
    """Newtonian viscous stress."""
    A, _ = strain_and_vorticity(grid, u)
    return _sigma1(c, A)


def stress_sigma2(grid: Grid, d: np.ndarray, c: LeslieCoefficients) -> np.ndarray:
    """Ericksen (elastic) stress, dealiased."""
    return grid.dealias(_sigma2(c, grid.gradient(d)))


def stress_sigma3(grid: Grid, u: np.ndarray, d: np.ndarray, ddot: np.ndarray,
                  c: LeslieCoefficients) -> np.ndarray:
    """Leslie stress, dealiased."""
    A, B = strain_and_vorticity(grid, u)
    return grid.dealias(_sigma3(c, A, B, d, ddot))


def gamma_multiplier(grid: Grid, rho, u, d, ddot, c: LeslieCoefficients) -> np.ndarray:
    """Lagrange multiplier keeping ``|d| = 1``, dealiased."""
    A, _ = strain_and_vorticity(grid, u)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), grid.shape)
    return grid.dealias(_gamma(c, rho, A, grid.gradient(d), d, ddot))


# -- right-hand sides ------------------------------------------------------------

class _Derivs:
    """Gradients shared by the right-hand sides and the frozen Picard operator."""

    def __init__(self, grid: Grid, u, d, ddot, phi=None):
        self.grid = grid
        self.u_hat = grid.fft(u)
        self.d_hat = grid.fft(d)
        self.ddot_hat = grid.fft(ddot)
        self.Gu = grid.grad_hat(self.u_hat)
        self.Gd = grid.grad_hat(self.d_hat)
        self.Gddot = grid.grad_hat(self.ddot_hat)
        self.lap_d = grid.ifft(self.d_hat * grid._lap_symbol)
        self.A, self.B = _strain_vort(self.Gu)
        self.div_u = self.Gu[0, 0] + self.Gu[1, 1]
        self.grad_phi = None if phi is None else grid.grad_hat(grid.fft(phi))


def _advect(Gf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``(u . grad) f`` from a gradient with the derivative axis at -3."""
    return Gf[..., 0, :, :] * u[0] + Gf[..., 1, :, :] * u[1]


def _dealias_stack(grid: Grid, arrays: list[np.ndarray]) -> list[np.ndarray]:
    sizes = [a.shape[:-2] for a in arrays]
    flat = np.concatenate([a.reshape((-1,) + grid.shape) for a in arrays])
    flat = grid.ifft(grid.fft(flat) * grid.dealias_mask)
    out, i = [], 0
    for shp in sizes:
        n = int(np.prod(shp)) if shp else 1
        out.append(flat[i:i + n].reshape(shp + grid.shape))
        i += n
    return out


def _div_dealiased(grid: Grid, T: np.ndarray) -> np.ndarray:
    return grid.ifft(grid.div_hat(grid.fft(T) * grid.dealias_mask))


def compressible_rhs(state: FlowState, c: LeslieCoefficients) -> Tendencies:
    """Time derivatives of ``(phi, u, d, ddot)`` for the low-Mach system."""
    if not state.compressible:
        raise ValueError("compressible_rhs needs a state with phi and eps")
    grid, eps = state.grid, state.eps
    phi, u, d, ddot = state.phi, state.u, state.d, state.ddot
    rho = 1.0 + eps * phi
    if np.min(rho) <= 0:
        raise ValueError("density is not positive")
    D = _Derivs(grid, u, d, ddot, phi)

    stress = _sigma1(c, D.A) + _sigma2(c, D.Gd) + _sigma3(c, D.A, D.B, d, ddot)
    div_stress = _div_dealiased(grid, stress)
    inv_rho = 1.0 / rho
    gam = _gamma(c, rho, D.A, D.Gd, d, ddot)

    phi_t = -(u[0] * D.grad_phi[0] + u[1] * D.grad_phi[1]) - phi * D.div_u - D.div_u / eps
    u_t = (-_advect(D.Gu, u) - (c.dpressure(rho) * inv_rho / eps) * D.grad_phi
           + inv_rho * div_stress)
    d_t = ddot - _advect(D.Gd, u)
    ddot_t = -_advect(D.Gddot, u) + inv_rho * (
        c.kappa * D.lap_d + gam * d + c.lambda1 * (ddot + _matvec(D.B, d))
        + c.lambda2 * _matvec(D.A, d))
    phi_t, u_t, d_t, ddot_t = _dealias_stack(grid, [phi_t, u_t, d_t, ddot_t])
    return Tendencies(u=u_t, d=d_t, ddot=ddot_t, phi=phi_t)


def project_momentum(grid: Grid, forcing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a momentum forcing into its solenoidal part and a zero-mean pressure.

    Returns ``(P forcing, pi)`` with ``forcing = P forcing + grad pi``.
    """
    fh = grid.fft(forcing)
    pi_hat = grid.inverse_laplacian_hat(grid.div_hat(fh))
    return grid.ifft(grid.leray_hat(fh)), grid.ifft(pi_hat)


def incompressible_rhs(state: FlowState, c: LeslieCoefficients) -> Tendencies:
    """Time derivatives of ``(u, d, ddot)`` for the incompressible limit, plus pressure."""
    grid = state.grid
    u, d, ddot = state.u, state.d, state.ddot
    D = _Derivs(grid, u, d, ddot)
    if np.max(np.abs(D.div_u)) > DIV_TOL * max(1.0, float(np.max(np.abs(u)))):
        raise ValueError("incompressible_rhs needs a divergence-free velocity")
    gg = np.einsum("ki...,kj...->ij...", D.Gd, D.Gd)
    stress = _sigma1(c, D.A) - c.kappa * gg + _sigma3(c, D.A, D.B, d, ddot)
    forcing = -_advect(D.Gu, u) + _div_dealiased(grid, stress)
    ones = np.ones(grid.shape)
    gam = _gamma(c, ones, D.A, D.Gd, d, ddot)
    d_t = ddot - _advect(D.Gd, u)
    ddot_t = -_advect(D.Gddot, u) + (
        c.kappa * D.lap_d + gam * d + c.lambda1 * (ddot + _matvec(D.B, d))
        + c.lambda2 * _matvec(D.A, d))
    forcing, d_t, ddot_t = _dealias_stack(grid, [forcing, d_t, ddot_t])
    u_t, pressure = project_momentum(grid, forcing)
    return Tendencies(u=u_t, d=d_t, ddot=ddot_t, pressure=pressure)


def rhs(state: FlowState, c: LeslieCoefficients) -> Tendencies:
    """Dispatch on the state kind."""
    return compressible_rhs(state, c) if state.compressible else incompressible_rhs(state, c)
