import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradlab.elliptic import (POINCARE_CONSTANT, apply_laplacian, bl_bound_linear, cell_averages, green,
                              h_minus_one_norm, harmonic_extension, harmonic_measure, l2_oscillation_vs_gradient,
                              multiscale_poincare_check, poincare_suite, quad_form, solve_dirichlet)
from gradlab.lattice import Ball, build_square
from oracles import ball_vertices, dense_green, exit_distribution, square_vertices

# frozen from tests/oracles.py: exact rationals (sympy) and dense inverses
G_Q1 = 0.25
G_Q2_00 = 3 / 8
G_Q2_10 = 1 / 8
G_Q8_00 = 0.6000932646592796
G_Q8_32_m14 = 0.09603233871758148
G_Q16_00 = 0.710607380886874
G_Q32_00 = 0.820973988196184


def test_green_small_exact():
    assert green(build_square(1), (0, 0))[1, 1] == pytest.approx(G_Q1, abs=1e-12)
    g = green(build_square(2), (0, 0))
    d = build_square(2)
    assert g[d.index((0, 0))] == pytest.approx(G_Q2_00, abs=1e-12)
    assert g[d.index((1, 0))] == pytest.approx(G_Q2_10, abs=1e-12)


@pytest.mark.parametrize("N,x,y,val", [(8, (0, 0), (0, 0), G_Q8_00), (8, (3, 2), (-1, 4), G_Q8_32_m14),
                                       (16, (0, 0), (0, 0), G_Q16_00), (32, (0, 0), (0, 0), G_Q32_00)])
def test_green_frozen(N, x, y, val):
    d = build_square(N)
    assert green(d, x)[d.index(y)] == pytest.approx(val, abs=1e-9)


def test_green_matches_dense_oracle():
    d = build_square(5)
    idx, G = dense_green(square_vertices(5))
    for x in [(0, 0), (2, -3), (4, 4)]:
        col = green(d, x)
        for y in [(0, 0), (1, 1), (-4, 2)]:
            assert col[d.index(y)] == pytest.approx(G[idx[y], idx[x]], abs=1e-10)


def test_green_asymptotics():
    # G_N(0,0) − log N / (2π) approaches a constant near 0.2694
    c = [G_Q16_00 - np.log(16) / (2 * np.pi), G_Q32_00 - np.log(32) / (2 * np.pi)]
    assert abs(c[1] - 0.2694) < abs(c[0] - 0.2694) < 0.01


def test_green_symmetry():
    d = build_square(10)
    pts = [(0, 0), (3, -2), (-7, 5), (9, 9)]
    cols = {p: green(d, p) for p in pts}
    for a in pts:
        for b in pts:
            assert abs(cols[a][d.index(b)] - cols[b][d.index(a)]) < 1e-9


def test_green_rejects_boundary_source():
    with pytest.raises(ValueError):
        green(build_square(3), (3, 0))


def test_exit_law_small_ball():
    hw = harmonic_measure(Ball((0, 0), 2))
    vals = sorted(set(round(v, 12) for v in hw.as_dict().values()))
    assert vals == [0.0625, 0.125]
    assert hw.total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("R,start", [(3.0, (0, 0)), (4.5, (1, -2)), (6.0, (3, 3))])
def test_harmonic_measure_against_absorbing_chain(R, start):
    b = Ball((0, 0), R)
    ref = exit_distribution(ball_vertices(R), start)
    for method in ("adjoint", "indicator"):
        got = harmonic_measure(b, start, method).as_dict()
        assert set(got) == set(ref)
        assert max(abs(got[k] - ref[k]) for k in ref) < 1e-10


@given(st.floats(1.5, 12.0), st.integers(-3, 3), st.integers(-3, 3))
@settings(max_examples=25, deadline=None)
def test_harmonic_measure_is_probability(R, dx, dy):
    b = Ball((0, 0), R)
    if not b.is_interior((dx, dy)):
        return
    hw = harmonic_measure(b, (dx, dy))
    assert np.all(hw.weights >= -1e-14)
    assert abs(hw.total - 1) < 1e-10


def test_mean_value_property():
    b = Ball((2, -1), 5.0)
    X, Y = b.coords
    h = X ** 2 - Y ** 2 + 3 * X * Y - X  # discrete harmonic
    hw = harmonic_measure(b)
    assert np.sum(hw.weights * h) == pytest.approx(h[b.index((2, -1))], abs=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_maximum_principle(seed):
    d = build_square(6)
    data = np.where(d.boundary_mask, np.random.default_rng(seed).uniform(-1, 1, d.shape), 0.0)
    u = harmonic_extension(d, data)
    bd = data[d.boundary_mask]
    inner = u[d.interior_mask]
    assert inner.max() <= bd.max() + 1e-10 and inner.min() >= bd.min() - 1e-10
    assert np.max(np.abs(apply_laplacian(d, u)[d.interior_mask])) < 1e-9


def test_poisson_solution():
    d = build_square(7)
    rng = np.random.default_rng(0)
    f = np.where(d.interior_mask, rng.standard_normal(d.shape), 0.0)
    u = solve_dirichlet(d, rhs=f)
    assert np.max(np.abs(apply_laplacian(d, u) - f)[d.interior_mask]) < 1e-9


def test_quad_form_is_green_sum():
    d = build_square(4)
    idx, G = dense_green(square_vertices(4))
    w = np.where(d.interior_mask, np.random.default_rng(3).standard_normal(d.shape), 0.0)
    X, Y = d.coords
    vec = np.array([w[d.index(v)] for v in idx])
    assert quad_form(d, w) == pytest.approx(vec @ G @ vec, rel=1e-10)
    assert bl_bound_linear(w, 0.5, d) == pytest.approx(2 * vec @ G @ vec, rel=1e-10)


def test_h_minus_one_duality():
    # for f = ∇*∇u with u in H^1_0, ‖f‖_{H^-1} = ‖∇u‖
    d = build_square(6)
    u = np.where(d.interior_mask, np.random.default_rng(5).standard_normal(d.shape), 0.0)
    f = apply_laplacian(d, u)
    gx, gy = np.diff(u, axis=0), np.diff(u, axis=1)
    energy = np.sum(gx ** 2) + np.sum(gy ** 2)
    assert h_minus_one_norm(f, d, normalized=False) == pytest.approx(np.sqrt(energy), rel=1e-8)


def test_cell_averages():
    f = np.arange(81.0).reshape(9, 9)
    avg = cell_averages(f, 2, 1)
    assert avg.shape == (3, 3)
    assert avg[0, 0] == pytest.approx(f[:3, :3].mean())


def test_poincare_constants_finite():
    f = np.random.default_rng(0).standard_normal((9, 9))
    rep = multiscale_poincare_check(f, 2)
    assert 0 < rep.constant < POINCARE_CONSTANT
    assert multiscale_poincare_check(np.zeros((9, 9)), 2).constant == 0.0
    osc = l2_oscillation_vs_gradient(np.random.default_rng(1).standard_normal((9, 9)), 2)
    assert 0 < osc.constant < POINCARE_CONSTANT


def test_poincare_suite_small():
    s = poincare_suite(2, 3, seed=4)
    assert s.violations(POINCARE_CONSTANT) == 0
