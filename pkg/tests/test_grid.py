import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elmach import Grid
from elmach.grid import get_threads, multi_indices, set_threads

TWO_PI = 2 * math.pi


def test_rejects_bad_dimensions():
    for nx in (7, 9, 6):
        with pytest.raises(ValueError):
            Grid(nx, 16)
    with pytest.raises(ValueError):
        Grid(16, 16, dealias_fraction=0.0)
    with pytest.raises(ValueError):
        Grid(16, 16, dealias_fraction=1.5)


def test_wavenumbers_and_nyquist():
    g = Grid(16, 8, lx=4 * math.pi)
    kx, ky = g.wavenumbers
    assert np.isclose(kx[1, 0], 0.5) and np.isclose(ky[0, 1], 1.0)
    okx, oky = g.odd_wavenumbers
    assert np.all(okx[8, :] == 0)  # Nyquist row along x
    assert np.all(oky[:, -1] == 0)  # rfft keeps the y Nyquist as the last column


def test_gradient_of_sine():
    g = Grid(16, 16)
    X, Y = g.coords
    G = g.gradient(np.sin(X))
    assert np.max(np.abs(G[0] - np.cos(X))) <= 1e-12
    assert np.max(np.abs(G[1])) <= 1e-12


def test_gradient_of_constant_and_product_mode():
    g = Grid(32, 32)
    X, Y = g.coords
    assert np.max(np.abs(g.gradient(np.full(g.shape, 3.7)))) <= 1e-14
    G = g.gradient(np.sin(3 * X) * np.cos(2 * Y))
    assert np.max(np.abs(G[0] - 3 * np.cos(3 * X) * np.cos(2 * Y))) <= 1e-12
    assert np.max(np.abs(G[1] + 2 * np.sin(3 * X) * np.sin(2 * Y))) <= 1e-12


def test_divergence_and_laplacian_examples(grid16):
    X, Y = grid16.coords
    assert np.max(np.abs(grid16.divergence(np.stack([np.sin(Y), 0 * Y])))) <= 1e-13
    assert np.max(np.abs(grid16.laplacian(np.sin(X)) + np.sin(X))) <= 1e-13
    assert np.max(np.abs(grid16.divergence(grid16.gradient(np.sin(X))) + np.sin(X))) <= 1e-13


def test_tensor_divergence_is_row_divergence(grid16):
    X, Y = grid16.coords
    T = np.zeros((2, 2) + grid16.shape)
    T[0, 1] = np.sin(Y)  # row 0 depends on y only through the (0,1) entry
    T[1, 0] = np.cos(X)
    dv = grid16.divergence(T)
    assert np.allclose(dv[0], np.cos(Y), atol=1e-13)
    assert np.allclose(dv[1], -np.sin(X), atol=1e-13)


def test_non_finite_input_rejected(grid16):
    f = np.zeros(grid16.shape)
    f[3, 3] = np.nan
    with pytest.raises(ValueError):
        grid16.gradient(f)
    with pytest.raises(ValueError):
        grid16.gradient(np.zeros((15, 16)))


def test_inner_product_examples(grid16):
    X, _ = grid16.coords
    assert math.isclose(grid16.inner_product(np.sin(X), np.sin(X)), 2 * math.pi**2, rel_tol=1e-14)
    assert grid16.inner_product(np.sin(X), np.zeros(grid16.shape)) == 0.0
    one = np.ones(grid16.shape)
    assert math.isclose(grid16.inner_product(one, one, weight=3 * one), 3 * TWO_PI**2,
                        rel_tol=1e-14)
    with pytest.raises(ValueError):
        grid16.inner_product(one, one, weight=0 * one)


def test_sobolev_norm_examples(grid16):
    X, _ = grid16.coords
    assert math.isclose(grid16.sobolev_norm(np.sin(X), 1), TWO_PI, rel_tol=1e-13)
    assert math.isclose(grid16.sobolev_norm(np.sin(X), 1, homogeneous=True),
                        math.sqrt(2 * math.pi**2), rel_tol=1e-13)
    for s in range(5):
        assert grid16.sobolev_norm(np.zeros(grid16.shape), s) == 0.0
    with pytest.raises(ValueError):
        grid16.sobolev_norm(np.sin(X), 5)


def test_sobolev_counts_every_multi_index(grid16):
    # mixed partials enter once per multi-index: d_xy of sin x sin y is cos x cos y
    X, Y = grid16.coords
    f = np.sin(X) * np.sin(Y)
    area = TWO_PI**2 / 4  # integral of sin^2 sin^2
    # |m|<=2: (0,0),(1,0),(0,1),(2,0),(1,1),(0,2) each contributes area
    assert math.isclose(grid16.sobolev_norm_sq(f, 2), 6 * area, rel_tol=1e-13)
    assert multi_indices(2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert multi_indices(1, homogeneous=True) == [(1, 0), (0, 1)]


def test_weighted_sobolev_matches_literal_sum(grid32, rng):
    f = grid32.random_field(rng)
    w = 1.0 + 0.5 * grid32.random_field(rng) ** 2
    expected = sum(grid32.cell_area * np.sum(w * grid32.partial(f, m) ** 2)
                   for m in multi_indices(3))
    assert math.isclose(grid32.sobolev_norm_sq(f, 3, weight=w), expected, rel_tol=1e-13)


def test_leray_examples(grid16, rng):
    X, Y = grid16.coords
    v = np.stack([np.sin(Y), 0 * Y])
    assert np.max(np.abs(grid16.leray_project(v) - v)) <= 1e-14
    assert np.max(np.abs(grid16.leray_project(grid16.gradient(np.sin(X))))) <= 1e-14
    w = grid16.random_field(rng, (2,))
    assert np.max(np.abs(grid16.divergence(grid16.leray_project(w)))) <= 1e-12


def test_dealias_examples():
    g = Grid(16, 16)
    X, Y = g.coords
    assert np.max(np.abs(g.dealias(np.sin(X)) - np.sin(X))) <= 1e-15
    nyq = np.cos(8 * X)
    assert np.max(np.abs(g.dealias(nyq))) <= 1e-15
    # cutoff 2/3 * 8 = 5.33: index 5 kept, 6 removed
    assert np.allclose(g.dealias(np.cos(5 * Y)), np.cos(5 * Y), atol=1e-14)
    assert np.max(np.abs(g.dealias(np.cos(6 * Y)))) <= 1e-14


def test_threads_agree(rng):
    g = Grid(64, 64)
    f = g.random_field(rng, (2,))
    before = get_threads()
    try:
        set_threads(1)
        a = g.leray_project(f)
        set_threads(4)
        b = g.leray_project(f)
    finally:
        set_threads(before)
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(a))
    with pytest.raises(ValueError):
        set_threads(0)


# -- properties -------------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)
GRID = Grid(32, 32)


def _raw(seed, comps=()):
    return np.random.default_rng(seed).standard_normal(comps + GRID.shape)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_integration_by_parts(seed):
    rng = np.random.default_rng(seed)
    f, g = GRID.random_field(rng), GRID.random_field(rng)
    for m in ((1, 0), (0, 1)):
        lhs = GRID.inner_product(GRID.partial(f, m), g) + GRID.inner_product(f, GRID.partial(g, m))
        assert abs(lhs) <= 1e-11 * math.sqrt(GRID.inner_product(f, f) * GRID.inner_product(g, g))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_dealias_idempotent_and_linear(seed):
    f, h = _raw(seed), _raw(seed + 1)
    once = GRID.dealias(f)
    assert np.max(np.abs(GRID.dealias(once) - once)) <= 1e-13
    assert np.allclose(GRID.dealias(2 * f - h), 2 * once - GRID.dealias(h), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_operators_commute_with_dealias(seed):
    f = _raw(seed)
    v = _raw(seed, (2,))
    assert np.allclose(GRID.gradient(GRID.dealias(f)), GRID.dealias(GRID.gradient(f)), atol=1e-10)
    assert np.allclose(GRID.divergence(GRID.dealias(v)), GRID.dealias(GRID.divergence(v)),
                       atol=1e-10)
    assert np.allclose(GRID.laplacian(GRID.dealias(f)), GRID.dealias(GRID.laplacian(f)),
                       atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_sobolev_monotone_in_s(seed):
    f = GRID.random_field(np.random.default_rng(seed))
    norms = [GRID.sobolev_norm(f, s) for s in range(5)]
    assert all(b >= a for a, b in zip(norms, norms[1:]))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_leray_orthogonal_idempotent_solenoidal(seed):
    v = _raw(seed, (2,))
    P = GRID.leray_project(v)
    assert abs(GRID.inner_product(P, v - P)) <= 1e-11 * GRID.inner_product(v, v)
    assert np.max(np.abs(GRID.leray_project(P) - P)) <= 1e-12
    assert np.max(np.abs(GRID.divergence(P))) <= 1e-12 * max(1.0, np.max(np.abs(v)))
