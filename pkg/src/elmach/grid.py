"""Periodic 2D grid with pseudo-spectral calculus.

Fields are plain numpy arrays laid out with ``indexing='ij'``:

* scalar: ``(nx, ny)``
* vector: ``(2, nx, ny)``
* tensor: ``(2, 2, nx, ny)``, with ``T[i, j]`` the (i, j) entry.

Gradients append the derivative index after the component indices, so
for a vector ``u`` the gradient ``G`` satisfies ``G[i, j] = d_j u_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

_WORKERS = 1


def set_threads(n: int) -> None:
    """Set the worker count used by every FFT call."""
    global _WORKERS
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _WORKERS = int(n)


def get_threads() -> int:
    return _WORKERS


def multi_indices(s: int, homogeneous: bool = False) -> list[tuple[int, int]]:
    """All 2D multi-indices with order in ``[1 if homogeneous else 0, s]``."""
    lo = 1 if homogeneous else 0
    return [(mx, order - mx) for order in range(lo, s + 1) for mx in range(order, -1, -1)]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[0, lx) x [0, ly)``.

    Args:
        nx, ny: points per direction, even and at least 8.
        lx, ly: box lengths, default ``2*pi``.
        dealias_fraction: modes with ``|index| > fraction * n / 2`` are
            removed from nonlinear products (2/3 rule by default).
    """

    nx: int = 64
    ny: int = 64
    lx: float = 2 * math.pi
    ly: float = 2 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n!r}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("box lengths must be positive")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    # -- geometry ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid ``(X, Y)`` of node coordinates."""
        x = np.arange(self.nx) * self.dx
        y = np.arange(self.ny) * self.dy
        return tuple(np.meshgrid(x, y, indexing="ij"))

    # -- spectral symbols -------------------------------------------------
    @cached_property
    def _index(self) -> tuple[np.ndarray, np.ndarray]:
        ix = np.fft.fftfreq(self.nx, 1.0 / self.nx)[:, None]
        iy = np.fft.rfftfreq(self.ny, 1.0 / self.ny)[None, :]
        return ix, iy

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Full wavenumbers, Nyquist included (used for even derivatives)."""
        ix, iy = self._index
        return ix * (2 * math.pi / self.lx), iy * (2 * math.pi / self.ly)

    @cached_property
    def odd_wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Wavenumbers with the Nyquist mode zeroed (used for odd derivatives)."""
        kx, ky = (k.copy() for k in self.wavenumbers)
        kx[self.nx // 2, :] = 0.0
        ky[:, -1] = 0.0
        return kx, ky

    @cached_property
    def _ik(self) -> np.ndarray:
        kx, ky = self.odd_wavenumbers
        return np.stack(np.broadcast_arrays(1j * kx, 1j * ky))

    @cached_property
    def _lap_symbol(self) -> np.ndarray:
        kx, ky = self.wavenumbers
        return -(kx**2 + ky**2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        ix, iy = self._index
        keep = (np.abs(ix) <= self.dealias_fraction * self.nx / 2) & (
            np.abs(iy) <= self.dealias_fraction * self.ny / 2
        )
        return keep

    @cached_property
    def _leray(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        kx, ky = np.broadcast_arrays(*self.odd_wavenumbers)
        k2 = kx**2 + ky**2
        inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
        return kx * kx * inv, kx * ky * inv, ky * ky * inv

    # -- transforms -------------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfft2(f, axes=(-2, -1), workers=_WORKERS)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfft2(fh, s=self.shape, axes=(-2, -1), workers=_WORKERS)

    def _check(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-2:] != self.shape:
            raise ValueError(f"{name} has trailing shape {f.shape[-2:]}, grid is {self.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"{name} contains non-finite values")
        return f

    # -- calculus ---------------------------------------------------------
    def grad_hat(self, fh: np.ndarray) -> np.ndarray:
        """Physical gradient from spectral coefficients; derivative axis at -3."""
        return self.ifft(fh[..., None, :, :] * self._ik)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Gradient of a scalar ``(2,nx,ny)`` or vector ``(2,2,nx,ny)`` field."""
        f = self._check(f)
        return self.grad_hat(self.fft(f))

    def div_hat(self, vh: np.ndarray) -> np.ndarray:
        """Spectral divergence over the last component axis."""
        return np.sum(vh * self._ik, axis=-3)

    def divergence(self, v: np.ndarray) -> np.ndarray:
        """Divergence of a vector, or row divergence ``d_j T_ij`` of a tensor."""
        v = self._check(v)
        if v.ndim < 3 or v.shape[-3] != 2:
            raise ValueError("divergence needs a vector or tensor field")
        return self.ifft(self.div_hat(self.fft(v)))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        f = self._check(f)
        return self.ifft(self.fft(f) * self._lap_symbol)

    def partial_hat(self, fh: np.ndarray, m: tuple[int, int]) -> np.ndarray:
        mx, my = m
        kx_full, ky_full = self.wavenumbers
        kx_odd, ky_odd = self.odd_wavenumbers
        sx = (1j * (kx_odd if mx % 2 else kx_full)) ** mx
        sy = (1j * (ky_odd if my % 2 else ky_full)) ** my
        return fh * (sx * sy)

    def partial(self, f: np.ndarray, m: tuple[int, int]) -> np.ndarray:
        """Mixed partial derivative ``d_x^mx d_y^my`` applied componentwise."""
        f = self._check(f)
        if m == (0, 0):
            return f.copy()
        return self.ifft(self.partial_hat(self.fft(f), m))

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Drop modes outside the dealiasing band."""
        f = self._check(f)
        return self.ifft(self.fft(f) * self.dealias_mask)

    def leray_project(self, v: np.ndarray) -> np.ndarray:
        """Project a vector field onto its divergence-free part."""
        v = self._check(v)
        vh = self.fft(v)
        return self.ifft(self.leray_hat(vh))

    def leray_hat(self, vh: np.ndarray) -> np.ndarray:
        pxx, pxy, pyy = self._leray
        ax = vh[0] * pxx + vh[1] * pxy
        ay = vh[0] * pxy + vh[1] * pyy
        return np.stack([vh[0] - ax, vh[1] - ay])

    def inverse_laplacian_hat(self, fh: np.ndarray) -> np.ndarray:
        """Zero-mean solution of ``lap g = f`` using the odd-derivative symbol."""
        kx, ky = np.broadcast_arrays(*self.odd_wavenumbers)
        k2 = kx**2 + ky**2
        inv = np.divide(-1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
        return fh * inv

    # -- integrals and norms ----------------------------------------------
    def inner_product(self, f: np.ndarray, g: np.ndarray, weight=None) -> float:
        """Trapezoid sum of ``f*g*w`` over the grid and all components."""
        f = self._check(f, "f")
        g = self._check(g, "g")
        if weight is None:
            return float(np.sum(f * g) * self.cell_area)
        weight = np.asarray(weight, dtype=float)
        if not np.all(weight > 0):
            raise ValueError("inner-product weight must be positive")
        return float(np.sum(f * g * weight) * self.cell_area)

    def sobolev_norm(self, f: np.ndarray, s: int, weight=None, homogeneous: bool = False) -> float:
        """Weighted Sobolev norm from the multi-index sum of derivative norms.

        ``||f||^2 = sum_{|m| <= s} int w |d^m f|^2``; the homogeneous
        variant starts at ``|m| = 1``.
        """
        return math.sqrt(self.sobolev_norm_sq(f, s, weight, homogeneous))

    def sobolev_norm_sq(self, f: np.ndarray, s: int, weight=None, homogeneous: bool = False) -> float:
        if not isinstance(s, (int, np.integer)) or s < 0:
            raise ValueError(f"Sobolev order must be a non-negative integer, got {s!r}")
        if s > 4:
            raise ValueError(f"Sobolev order s={s} exceeds supported maximum 4")
        f = self._check(f)
        if weight is not None:
            weight = np.asarray(weight, dtype=float)
            if np.any(weight < 0):
                raise ValueError("Sobolev weight must be non-negative")
        fh = self.fft(f)
        total = 0.0
        for m in multi_indices(s, homogeneous):
            dm = f if m == (0, 0) else self.ifft(self.partial_hat(fh, m))
            sq = dm * dm if weight is None else weight * dm * dm
            total += float(np.sum(sq))
        return total * self.cell_area

    def random_field(self, rng: np.random.Generator, components: tuple[int, ...] = (),
                     decay: float = 4.0, max_index: int | None = None) -> np.ndarray:
        """Smooth random band-limited field (dealiased), zero mean per component."""
        shape = components + self.shape
        noise = rng.standard_normal(shape)
        fh = self.fft(noise)
        ix, iy = self._index
        kmag = np.sqrt(ix**2 + iy**2)
        envelope = np.exp(-kmag / decay) * self.dealias_mask
        if max_index is not None:
            envelope = envelope * (np.maximum(np.abs(ix), np.abs(iy)) <= max_index)
        fh = fh * envelope
        fh[..., 0, 0] = 0.0
        out = self.ifft(fh)
        scale = np.sqrt(np.mean(out**2))
        return out / scale if scale > 0 else out
