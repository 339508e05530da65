"""Multiindex algebra, arrays, discrete derivatives, dyadic geometry."""

import numpy as np
import pytest

from hilayer.mindex import (MIArray, enumerate_mi, mi_factorial, mi_le, mi_lt,
                            laplacian_power_coeffs, unit_array)
from hilayer.fields import GridField, SlabField, gradient_k, div_k, GridTooCoarse
from hilayer.dyadic import DyadicCube, annuli, dyadic_forest

from oracles import Poly, brute_multiindices, binomial


# -- enumeration ---------------------------------------------------------------

def test_enumerate_basic():
    assert enumerate_mi(2, 2) == ((2, 0), (1, 1), (0, 2))
    assert enumerate_mi(1, 5) == ((5,),)


def test_enumerate_counts_match_binomial_and_bruteforce():
    for d in range(1, 5):
        for k in range(0, 9):
            mis = enumerate_mi(d, k)
            assert len(mis) == binomial(k + d - 1, d - 1)
            assert sorted(mis) == sorted(brute_multiindices(d, k))
    # frozen spec value: (d=3, k=4) has 15 indices
    assert len(enumerate_mi(3, 4)) == 15


def test_enumerate_rejects_bad_dims():
    with pytest.raises(ValueError):
        enumerate_mi(0, 2)


def test_factorial_values():
    assert mi_factorial((2, 1, 0)) == 2
    assert mi_factorial((0, 0)) == 1
    assert mi_factorial((3, 2)) == 12


def test_partial_order():
    assert mi_le((1, 0), (1, 1)) and mi_lt((1, 0), (1, 1))
    assert mi_le((1, 1), (1, 1)) and not mi_lt((1, 1), (1, 1))
    assert not mi_le((2, 0), (1, 1))


# -- Laplacian power coefficients -------------------------------------------------

def test_laplacian_coeffs_values():
    assert laplacian_power_coeffs(1, 2) == {(1, 0): 1, (0, 1): 1}
    assert laplacian_power_coeffs(2, 2) == {(2, 0): 1, (1, 1): 2, (0, 2): 1}


def test_laplacian_coeffs_against_symbolic_oracle():
    # sum a_z d^{2z} p == Delta^M p for p = x^2 y^2 (expects the constant 8)
    p = Poly.monomial((2, 2))
    lhs = Poly({}, d=2)
    for z, a in laplacian_power_coeffs(2, 2).items():
        lhs = lhs + a * p.diff_mi(tuple(2 * v for v in z))
    rhs = p.laplacian().laplacian()
    assert (lhs + (-1) * rhs).is_zero()
    assert rhs.eval(np.zeros((1, 2)))[0] == 8.0


def test_laplacian_coeffs_positive():
    for M in (1, 2, 3):
        for d in (2, 3):
            assert all(a >= 1 for a in laplacian_power_coeffs(M, d).values())


# -- MIArray ----------------------------------------------------------------------

def test_miarray_key_discipline():
    with pytest.raises(ValueError):
        MIArray(2, 2, {(2, 0): 1.0})
    arr = MIArray(2, 1)
    with pytest.raises(KeyError):
        arr[(2, 0)] = 1.0


def test_inner_product_conjugate_symmetry():
    rng = np.random.default_rng(0)
    F = MIArray(2, 2, {z: complex(*rng.normal(size=2)) for z in enumerate_mi(2, 2)})
    G = MIArray(2, 2, {z: complex(*rng.normal(size=2)) for z in enumerate_mi(2, 2)})
    assert abs(F.inner(G) - np.conj(G.inner(F))) < 1e-14
    # conjugate-linear in the first slot
    assert abs((2j * F).inner(G) - np.conj(2j) * F.inner(G)) < 1e-14


def test_unit_array_pairing():
    F = MIArray(2, 1, {(1, 0): 3.0, (0, 1): -2.0})
    e = unit_array(2, 1, (0, 1))
    assert e.inner(F) == -2.0


def test_miarray_text_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    F = MIArray(2, 1, {z: rng.normal(size=(4,)) + 1j * rng.normal(size=(4,))
                       for z in enumerate_mi(2, 1)})
    text = F.to_text()
    G = MIArray.from_text(text)
    for z in F.indices:
        assert np.allclose(F[z], G[z])


# -- discrete derivatives ------------------------------------------------------------

def _torus_field(fn, N=64, L=1.0):
    x = np.arange(N) * (L / N)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return GridField(fn(X, Y), L / N), (X, Y)


def test_gradient_fourier_mode_exact():
    # single mode: d^z e^{2 pi i <w, x>} = (2 pi i w)^z e^{...}, machine precision
    w = (3, -2)
    f, (X, Y) = _torus_field(lambda X, Y: np.exp(2j * np.pi * (w[0] * X + w[1] * Y)))
    grads = gradient_k(f, 2)
    for z in enumerate_mi(2, 2):
        expect = (2j * np.pi * w[0]) ** z[0] * (2j * np.pi * w[1]) ** z[1] * f.values
        assert np.max(np.abs(grads[z].values - expect)) < 1e-9


def test_gradient_polynomial_oracle():
    # f = x1^2 x2 on the torus via trig identity is not polynomial; use modes
    # f = sin(2 pi x) cos(4 pi y): compare against analytic derivatives
    f, (X, Y) = _torus_field(lambda X, Y: np.sin(2 * np.pi * X) * np.cos(4 * np.pi * Y))
    g = gradient_k(f, 2)
    d20 = -(2 * np.pi) ** 2 * np.sin(2 * np.pi * X) * np.cos(4 * np.pi * Y)
    d11 = -(2 * np.pi) * (4 * np.pi) * np.cos(2 * np.pi * X) * np.sin(4 * np.pi * Y)
    assert np.max(np.abs(g[(2, 0)].values - d20)) < 1e-8
    assert np.max(np.abs(g[(1, 1)].values - d11)) < 1e-8


def test_gradient_constant_is_zero():
    f, _ = _torus_field(lambda X, Y: np.ones_like(X))
    g = gradient_k(f, 1)
    for z in g:
        assert np.max(np.abs(g[z].values)) < 1e-12


def test_gradient_refuses_coarse_grid():
    f = GridField(np.ones(4), 0.25)
    with pytest.raises(GridTooCoarse):
        f.derivative((3,))


def test_div_pairing_identity_spectral():
    # <phi, Div_k G> = (-1)^k <grad^k phi, G> on random periodic data
    rng = np.random.default_rng(5)
    N, L, k = 48, 1.0, 2
    def rand_field():
        hat = np.zeros((N, N), dtype=complex)
        for _ in range(6):
            i, j = rng.integers(-6, 7, size=2)
            hat[i, j] = rng.normal() + 1j * rng.normal()
        return GridField(np.fft.ifftn(hat), L / N)
    phi = rand_field()
    G = MIArray(2, k, {z: rand_field() for z in enumerate_mi(2, k)})
    div = div_k(G, k)
    cell = (L / N) ** 2
    lhs = np.sum(np.conj(phi.values) * div.values) * cell
    grads = gradient_k(phi, k)
    rhs = (-1) ** k * sum(np.sum(np.conj(grads[z].values) * G[z].values) * cell
                          for z in G)
    assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


def test_div_of_gradient_matches_symbolic():
    # Div_k(grad^k f) = sum_{|a|=k} d^{2a} f for a band-limited f
    f, (X, Y) = _torus_field(lambda X, Y: np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y))
    k = 2
    G = gradient_k(f, k)
    div = div_k(G, k)
    acc = np.zeros_like(f.values)
    for z in enumerate_mi(2, k):
        acc = acc + f.derivative(tuple(2 * v for v in z)).values
    scale = np.max(np.abs(acc))
    assert np.max(np.abs(div.values - acc)) < 1e-10 * scale


# -- slab fields ----------------------------------------------------------------------

def test_slab_requires_uniform_t():
    with pytest.raises(ValueError):
        SlabField(np.zeros((8, 5)), 0.1, [0.0, 0.1, 0.25, 0.3, 0.4])


def test_slab_boundary_plane():
    t = np.linspace(0.0, 1.0, 11)
    F = SlabField(np.tile(t, (8, 1)), 0.1, t)
    assert np.allclose(F.boundary_plane(), 0.0)
    F2 = SlabField(np.zeros((8, 5)), 0.1, np.linspace(0.5, 1.0, 5))
    with pytest.raises(ValueError):
        F2.boundary_plane()


def test_slab_vertical_derivative_fd4():
    x = np.arange(32) * (1.0 / 32)
    t = np.linspace(0.0, 1.0, 41)
    vals = np.exp(-np.add.outer(0 * x, t ** 2 / 2))
    F = SlabField(vals, 1.0 / 32, t)
    d1 = F.derivative((0, 1)).values
    expect = -t * np.exp(-t ** 2 / 2)
    assert np.max(np.abs(d1[0] - expect)) < 2e-5


# -- dyadic geometry ----------------------------------------------------------------

def test_children_partition_parent():
    Q = DyadicCube((0.0, 0.0), 0)
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 1, size=(500, 2))
    counts = sum(c.contains(pts).astype(int) for c in Q.children())
    assert np.all(counts == 1)


def test_annuli_geometry():
    Q = DyadicCube((0.0,), 0)  # [0, 1)
    A0 = annuli(Q, 0)
    lo, hi = A0.outer
    assert lo[0] == -0.5 and hi[0] == 1.5        # 2Q centered
    A1 = annuli(Q, 1)
    assert A1.inner is not None
    # A_1 = 4Q \ 2Q
    assert A1.contains([[1.6]])[0] and not A1.contains([[1.0]])[0]


def test_annuli_disjoint_and_exhaustive():
    Q = DyadicCube((0.0, 0.0), 1)  # side 1/2
    rng = np.random.default_rng(1)
    pts = rng.uniform(-3, 3, size=(800, 2))
    member = np.stack([annuli(Q, j).contains(pts) for j in range(6)])
    counts = member.sum(axis=0)
    lo, hi = Q.dilate(2 ** 6)
    inside = np.all((pts >= lo) & (pts < hi), axis=1)
    assert np.all(counts[inside] == 1)
    assert np.all(counts <= 1)


def test_forest_generations():
    cubes = dyadic_forest(1, 1.0, 2)
    sides = sorted({c.side for c in cubes})
    assert sides == [0.25, 0.5, 1.0]
