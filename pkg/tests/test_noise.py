import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from snlslab.errors import UsageError
from snlslab.noise import (
    BrownianPaths, ConstantBump, GaussianBump, NoiseModel, check_flatness, eval_W, eval_Wtilde,
    eval_coeffs, sample_paths,
)
from snlslab.spectral import ComplexField, Grid, gradient, laplacian


def _sympy_bump(d, amp, center, width):
    xs = sp.symbols(f"x0:{d}", real=True)
    phi = amp * sp.exp(-sum((x - c) ** 2 for x, c in zip(xs, center)) / width**2)
    lap = sum(sp.diff(phi, x, 2) for x in xs)
    bilap = sum(sp.diff(lap, x, 2) for x in xs)
    return xs, phi, lap, bilap


@pytest.mark.parametrize("d", [1, 2, 3])
def test_closed_form_derivatives_match_symbolic(d):
    bump = GaussianBump(0.7, (0.3,) * d, 1.3)
    grid = Grid(d, 8, 6.0)
    phi, grad, lap, bilap = bump.fields(grid)
    xs, s_phi, s_lap, s_bilap = _sympy_bump(d, 0.7, (0.3,) * d, 1.3)
    f_lap = sp.lambdify(xs, s_lap, "numpy")
    f_bilap = sp.lambdify(xs, s_bilap, "numpy")
    f_grad = [sp.lambdify(xs, sp.diff(s_phi, x), "numpy") for x in xs]
    c = grid.coords()
    assert np.allclose(lap, f_lap(*c), atol=1e-13)
    assert np.allclose(bilap, f_bilap(*c), atol=1e-12)
    for j in range(d):
        assert np.allclose(grad[j], f_grad[j](*c), atol=1e-13)
    hess = bump.hessian(grid)
    f_h01 = sp.lambdify(xs, sp.diff(s_phi, xs[0], xs[-1]), "numpy")
    assert np.allclose(hess[0, -1], f_h01(*c), atol=1e-13)
    assert np.allclose(np.trace(hess), lap, atol=1e-13)


def test_derivative_1d_hermite_matches_symbolic():
    bump = GaussianBump(1.0, (0.5,), 0.8)
    x = sp.symbols("x", real=True)
    g = sp.exp(-(x - 0.5) ** 2 / 0.64)
    pts = np.linspace(-3, 3, 13)
    for order in range(5):
        ref = sp.lambdify(x, sp.diff(g, x, order), "numpy")(pts)
        assert np.allclose(bump.derivative_1d(order, pts, 0), ref, atol=1e-12)


def _model(d=2, n=32, L=16.0):
    grid = Grid(d, n, L)
    bumps = [GaussianBump(0.6, (1.0,) * d, 1.2), GaussianBump(-0.4, (-1.0,) + (0.5,) * (d - 1), 1.0)]
    return NoiseModel(grid, bumps)


def test_model_static_identities():
    m = _model()
    assert np.array_equal(m.mu_tilde - 4 * m.mu, np.zeros_like(m.mu))
    assert np.allclose(m.mu, 0.5 * (m.phi[0] ** 2 + m.phi[1] ** 2))
    paths = sample_paths(2, 0.01, 10, seed=3)
    W = eval_W(m, paths, 5)
    assert np.all(W.values.real == 0.0)
    assert np.array_equal(eval_Wtilde(m, paths, 5).values, 2 * W.values)


def test_coefficients_against_spectral_differentiation_of_W():
    m = _model(n=64)
    paths = sample_paths(2, 0.01, 4, seed=11)
    co = eval_coeffs(m, paths, 3)
    W = eval_W(m, paths, 3)
    Wt = eval_Wtilde(m, paths, 3)
    dW = gradient(W)
    dWt = gradient(Wt)
    c1 = sum(g * g for g in dW) + laplacian(W)
    c2 = 0.5 * sum(g * g for g in dWt) + 0.5 * laplacian(Wt)
    for j in range(2):
        assert np.allclose(co.b1[j].values, 2 * dW[j].values, atol=1e-9)
        assert np.allclose(co.b2[j].values, dWt[j].values, atol=1e-9)
        assert np.abs(co.b2[j].values - co.b1[j].values).max() < 1e-15
    assert np.allclose(co.c1.values, c1.values, atol=1e-8)
    assert np.allclose(co.c2.values, c2.values, atol=1e-8)
    # real parts scale by two between the equations, imaginary parts agree
    assert np.allclose(co.c2.values.real, 2 * co.c1.values.real, atol=1e-14)
    assert np.allclose(co.c2.values.imag, co.c1.values.imag, atol=1e-14)


def test_coefficients_depend_on_time_only_through_B():
    m = _model()
    vals = np.zeros((4, 2))
    vals[1] = vals[3] = [0.3, -0.2]
    paths = BrownianPaths(vals, 0.1)
    a, b = eval_coeffs(m, paths, 1), eval_coeffs(m, paths, 3)
    assert np.array_equal(a.c1.values, b.c1.values) and np.array_equal(a.c2.values, b.c2.values)
    zero = eval_coeffs(m, paths, 0)
    assert not np.any(zero.c1.values) and not np.any(zero.b1[0].values)


def test_single_bump_coefficients_formula():
    grid = Grid(1, 64, 16.0)
    bump = GaussianBump(0.5, (0.0,), 1.0)
    m = NoiseModel(grid, [bump])
    paths = BrownianPaths(np.array([[0.0], [0.7]]), 0.1)
    co = eval_coeffs(m, paths, 1)
    phi, grad, lap, _ = bump.fields(grid)
    assert np.allclose(co.c1.values, -(0.7 * grad[0]) ** 2 + 1j * 0.7 * lap)
    assert np.allclose(co.b1[0].values, 2j * 0.7 * grad[0])


def test_paths_are_seeded_and_have_brownian_increments():
    a = sample_paths(3, 0.01, 2000, seed=5)
    b = sample_paths(3, 0.01, 2000, seed=5)
    c = sample_paths(3, 0.01, 2000, seed=6)
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    assert np.all(a.values[0] == 0)
    inc = np.diff(a.values, axis=0)
    # sample variance of 6000 N(0, 0.01) draws: relative standard error about 1.8%
    assert inc.var() == pytest.approx(0.01, rel=0.08)
    assert abs(inc.mean()) < 5 * 0.1 / np.sqrt(inc.size)


def test_path_interpolation_and_coarsening():
    p = sample_paths(2, 0.1, 8, seed=1)
    assert np.array_equal(p.at(0.3), p.values[3])
    assert np.allclose(p.at(0.35), 0.5 * (p.values[3] + p.values[4]))
    assert np.allclose(p.at(p.T), p.values[-1])
    q = p.coarsen(4)
    assert q.dt == pytest.approx(0.4) and q.steps == 2
    assert np.array_equal(q.values[1], p.values[4])
    assert np.allclose(p.increment(2), p.values[3] - p.values[2])
    with pytest.raises(UsageError):
        p.coarsen(3)
    with pytest.raises(UsageError):
        p.at(1.0)


def test_paths_csv(tmp_path):
    p = sample_paths(2, 0.5, 3, seed=9)
    p.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].startswith("# snlslab brownian v1 seed=9")
    assert lines[1] == "t,B_1,B_2"
    data = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=2)
    assert np.array_equal(data[:, 1:], p.values)


def test_flatness_audit():
    grid = Grid(2, 32, 20.0)
    narrow = NoiseModel(grid, [GaussianBump(1.0, (0.0, 0.0), 1.0)])
    assert narrow.flatness.passed and narrow.flatness.worst() < 1e-8
    with pytest.raises(UsageError):
        NoiseModel(grid, [GaussianBump(1.0, (0.0, 0.0), 5.0)])
    wide = NoiseModel(grid, [GaussianBump(1.0, (0.0, 0.0), 5.0)], test_only=True)
    assert not check_flatness(wide).passed
    assert check_flatness(NoiseModel(grid, [])).passed


def test_constant_bump_is_test_only():
    grid = Grid(1, 16, 4.0)
    with pytest.raises(UsageError):
        NoiseModel(grid, [ConstantBump(0.5)])
    m = NoiseModel(grid, [ConstantBump(0.5)], test_only=True)
    b, c1, c2 = m.coefficient_arrays([1.3])
    assert not np.any(b) and not np.any(c1) and not np.any(c2)


def test_wrong_number_of_brownian_values():
    m = _model()
    with pytest.raises(UsageError):
        m.noise_phase([1.0])


@settings(max_examples=20, deadline=None)
@given(B=st.lists(st.floats(-3, 3), min_size=2, max_size=2), s=st.floats(-2, 2))
def test_coefficients_scale_with_B(B, s):
    m = _model(n=16)
    b, c1, c2 = m.coefficient_arrays(B)
    bs, c1s, c2s = m.coefficient_arrays([s * x for x in B])
    assert np.allclose(bs, s * b, atol=1e-12)
    assert np.allclose(c1s.real, s * s * c1.real, atol=1e-12)
    assert np.allclose(c1s.imag, s * c1.imag, atol=1e-12)
    assert np.allclose(c2s - c1s, s * s * (c2 - c1), atol=1e-12)


def test_terminal_values_have_brownian_moments():
    T, paths = 1.0, 10_000
    p = sample_paths(paths, 0.05, 20, seed=11)
    end = p.values[-1]
    assert abs(end.mean()) < 4 * np.sqrt(T / paths)
    assert end.var() == pytest.approx(T, rel=0.1)


def test_W_is_imaginary_and_starts_at_zero():
    m = _model()
    p = sample_paths(m.N, 0.01, 5, seed=2)
    assert np.all(eval_W(m, p, 0).values == 0)
    for k in range(1, 6):
        W = eval_W(m, p, k).values
        assert np.all(W.real == 0)
        assert np.allclose(np.abs(np.exp(W)), 1.0, rtol=0, atol=1e-14)
        assert np.array_equal(eval_Wtilde(m, p, k).values, 2 * W)


def test_flatness_reference_width_passes():
    grid = Grid(2, 64, 32.0)
    assert NoiseModel(grid, [GaussianBump(1.0, (0.0, 0.0), 32.0 / 16)]).flatness.passed
